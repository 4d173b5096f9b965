"""Recordings, clip labeling, normalization and segmentation.

A recording on disk is a directory holding ``meta.json`` and ``data.bin``
(channel-major, contiguous 32-bit floats in the byte order named by the
metadata, little-endian by default).  Everything downstream of ingestion
works on clips resampled to 200 Hz.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal

log = logging.getLogger(__name__)

TARGET_RATE = 200.0
CLIP_SECONDS = 600.0
SEGMENT_SECONDS = 15.0
SEGMENTS_PER_CLIP = int(CLIP_SECONDS // SEGMENT_SECONDS)


class RecordingError(ValueError):
    """Base class for recording load and validation failures."""


class HeaderError(RecordingError):
    pass


class ChannelLengthMismatch(RecordingError):
    pass


class UnsortedOnsets(RecordingError):
    pass


class ArtifactIntervalError(RecordingError):
    pass


class ZeroVarianceWarning(UserWarning):
    pass


class ClipLabel(enum.IntEnum):
    Interictal = 0
    Preictal = 1


@dataclass
class Recording:
    subject_id: str
    sampling_rate: float
    channels: list[str]
    data: np.ndarray
    seizure_onsets: list[float] = field(default_factory=list)
    artifact_intervals: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.atleast_2d(self.data)
        self.seizure_onsets = [float(t) for t in self.seizure_onsets]
        self.artifact_intervals = [(float(a), float(b)) for a, b in self.artifact_intervals]
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sampling_rate

    def validate(self):
        if not self.sampling_rate > 0:
            raise HeaderError(f"sampling rate must be positive, got {self.sampling_rate}")
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise HeaderError(
                f"data has shape {self.data.shape} but {len(self.channels)} channels are named"
            )
        onsets = np.asarray(self.seizure_onsets, dtype=float)
        if onsets.size and np.any(np.diff(onsets) <= 0):
            raise UnsortedOnsets("seizure onsets must be strictly increasing")
        if onsets.size and (onsets[0] < 0 or onsets[-1] > self.duration):
            raise UnsortedOnsets("seizure onsets must lie within the recording")
        for a, b in self.artifact_intervals:
            if not (0 <= a < b <= self.duration):
                raise ArtifactIntervalError(f"malformed artifact interval ({a}, {b})")


@dataclass
class Clip:
    subject_id: str
    clip_id: int
    start_time: float
    label: ClipLabel
    data: np.ndarray
    source_seizure: float | None = None
    sampling_rate: float = TARGET_RATE


@dataclass
class Segment:
    clip_id: int
    segment_index: int
    data: np.ndarray


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: int
    subject_id: str
    start_time: float
    label: ClipLabel
    split: str
    source_seizure: float | None = None


@dataclass
class ClipManifest:
    entries: list[ManifestEntry]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def counts(self) -> dict[str, dict[str, int]]:
        out = {s: {lab.name: 0 for lab in ClipLabel} for s in ("train", "test")}
        for e in self.entries:
            out[e.split][e.label.name] += 1
        return out

    def select(self, split: str | None = None, label: ClipLabel | None = None):
        return [
            e for e in self.entries
            if (split is None or e.split == split) and (label is None or e.label == label)
        ]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clip_id", "subject_id", "start_s", "label", "split"])
            for e in self.entries:
                w.writerow([e.clip_id, e.subject_id, repr(e.start_time), e.label.name, e.split])

    @classmethod
    def from_csv(cls, path) -> "ClipManifest":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([
            ManifestEntry(int(r["clip_id"]), r["subject_id"], float(r["start_s"]),
                          ClipLabel[r["label"]], r["split"])
            for r in rows
        ])


@dataclass(frozen=True)
class LabelPolicy:
    """Clip labeling rules, all times in minutes."""

    preictal_start_min: float = 65.0
    preictal_end_min: float = 5.0
    postictal_exclusion_min: float = 60.0
    interictal_gap_min: float = 240.0
    edge_discard_min: float = 240.0
    clip_seconds: float = CLIP_SECONDS
    train_fraction: float = 0.5
    target_rate: float = TARGET_RATE


# --------------------------------------------------------------------------
# ingestion
# --------------------------------------------------------------------------

def write_recording(rec: Recording, path, bad_channels=()):
    """Write ``rec`` in the directory format read by :func:`ingest_recording`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "subject_id": rec.subject_id,
        "sampling_rate": rec.sampling_rate,
        "channels": list(rec.channels),
        "n_samples": rec.n_samples,
        "seizure_onsets": list(rec.seizure_onsets),
        "artifact_intervals": [list(iv) for iv in rec.artifact_intervals],
        "bad_channels": list(bad_channels),
        "dtype": "float32",
        "endianness": "little",
    }
    with open(path / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    np.ascontiguousarray(rec.data, dtype="<f4").tofile(path / "data.bin")


def ingest_recording(path, drop_bad_channels: bool = True) -> Recording:
    path = Path(path)
    try:
        with open(path / "meta.json") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise HeaderError(f"cannot read {path / 'meta.json'}: {exc}") from exc

    required = ("subject_id", "sampling_rate", "channels")
    missing = [k for k in required if k not in meta]
    if missing:
        raise HeaderError(f"meta.json lacks {', '.join(missing)}")
    if meta.get("dtype", "float32") != "float32":
        raise HeaderError(f"unsupported dtype {meta['dtype']!r}")
    order = {"little": "<", "big": ">"}.get(meta.get("endianness", "little"))
    if order is None:
        raise HeaderError(f"unknown endianness {meta['endianness']!r}")

    channels = list(meta["channels"])
    raw = np.fromfile(path / "data.bin", dtype=order + "f4")
    n_ch = len(channels)
    if n_ch == 0:
        raise HeaderError("recording has no channels")
    if "channel_lengths" in meta:
        lengths = set(int(n) for n in meta["channel_lengths"])
        if len(lengths) != 1 or len(meta["channel_lengths"]) != n_ch:
            raise ChannelLengthMismatch("channel length mismatch")
    if raw.size % n_ch:
        raise ChannelLengthMismatch("channel length mismatch")
    n = raw.size // n_ch
    if "n_samples" in meta and int(meta["n_samples"]) != n:
        raise ChannelLengthMismatch("channel length mismatch")
    data = raw.reshape(n_ch, n).astype(np.float32, copy=False)

    onsets = [float(t) for t in meta.get("seizure_onsets", [])]
    if any(b <= a for a, b in zip(onsets, onsets[1:])):
        raise UnsortedOnsets("seizure onsets must be strictly increasing")

    rec = Recording(
        subject_id=str(meta["subject_id"]),
        sampling_rate=float(meta["sampling_rate"]),
        channels=channels,
        data=data,
        seizure_onsets=onsets,
        artifact_intervals=[tuple(iv) for iv in meta.get("artifact_intervals", [])],
    )
    bad = set(meta.get("bad_channels", ()))
    if drop_bad_channels and bad:
        keep = [i for i, c in enumerate(rec.channels) if c not in bad]
        log.info("dropping artifact channels %s", sorted(bad))
        rec = replace(rec, channels=[rec.channels[i] for i in keep], data=rec.data[keep])
    return rec


# --------------------------------------------------------------------------
# resampling
# --------------------------------------------------------------------------

def lowpass_taps(up: int, down: int, rate: float, target_rate: float,
                 attenuation_db: float = 60.0) -> np.ndarray:
    """Kaiser windowed-sinc taps for a polyphase ``up/down`` resampler.

    The -6 dB cutoff sits at 0.45 x ``target_rate`` with the transition band
    spanning 0.425-0.475 x ``target_rate``.
    """
    fs = rate * up
    width = 0.05 * target_rate
    numtaps, beta = signal.kaiserord(attenuation_db, width / (0.5 * fs))
    numtaps |= 1
    taps = signal.firwin(numtaps, 0.45 * target_rate, window=("kaiser", beta), fs=fs)
    return taps * up


def resample(rec: Recording, target_rate: float = TARGET_RATE) -> Recording:
    if target_rate > rec.sampling_rate:
        raise ValueError(
            f"cannot upsample from {rec.sampling_rate} Hz to {target_rate} Hz"
        )
    if target_rate == rec.sampling_rate:
        return rec
    ratio = Fraction(target_rate / rec.sampling_rate).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator
    taps = lowpass_taps(up, down, rec.sampling_rate, target_rate)
    out = signal.resample_poly(rec.data, up, down, axis=1, window=taps, padtype="line")
    return replace(rec, sampling_rate=float(target_rate), data=out)


# --------------------------------------------------------------------------
# labeling
# --------------------------------------------------------------------------

def _overlaps(a0, a1, intervals):
    return any(a0 < b1 and b0 < a1 for b0, b1 in intervals)


def counted_onsets(onsets, exclusion_s: float) -> list[float]:
    """Onsets that do not fall inside an earlier seizure's exclusion period."""
    kept = []
    last = None
    for s in onsets:
        if last is not None and s < last + exclusion_s:
            continue
        kept.append(s)
        last = s
    return kept


def label_windows(duration: float, onsets, artifacts=(), policy: LabelPolicy = LabelPolicy()):
    """Pure window arithmetic behind :func:`label_clips`.

    Returns a list of ``(start_s, label, source_seizure)`` sorted by start.
    """
    clip = policy.clip_seconds
    edge = policy.edge_discard_min * 60
    excl = policy.postictal_exclusion_min * 60
    gap = policy.interictal_gap_min * 60
    lo, hi = edge, duration - edge
    onsets = sorted(float(s) for s in onsets)
    exclusions = [(s, s + excl) for s in onsets]
    eps = 1e-9

    out = []
    pre_intervals = []
    for s in counted_onsets(onsets, excl):
        n = int(round((policy.preictal_start_min - policy.preictal_end_min) * 60 // clip))
        end = s - policy.preictal_end_min * 60
        for i in range(n):
            a = end - (n - i) * clip
            b = a + clip
            if a < lo - eps or b > hi + eps:
                continue
            if _overlaps(a, b, exclusions) or _overlaps(a, b, artifacts):
                continue
            if _overlaps(a, b, pre_intervals):
                continue
            out.append((a, ClipLabel.Preictal, s))
            pre_intervals.append((a, b))

    n_grid = int(np.floor(duration / clip + eps))
    for j in range(n_grid):
        a = j * clip
        b = a + clip
        if a < lo - eps or b > hi + eps:
            continue
        if any(b > s - gap + eps and a < s + gap - eps for s in onsets):
            continue
        if _overlaps(a, b, artifacts) or _overlaps(a, b, pre_intervals):
            continue
        out.append((a, ClipLabel.Interictal, None))

    out.sort(key=lambda t: t[0])
    return out


def label_clips(rec: Recording, policy: LabelPolicy = LabelPolicy()):
    """Cut ``rec`` into labeled 10-min clips.

    Returns ``(manifest, clips)``.  Clip data are views into the (resampled)
    recording; the train/test split is at ``policy.train_fraction`` of the
    recording duration, by clip start time.
    """
    if rec.sampling_rate != policy.target_rate:
        rec = resample(rec, policy.target_rate)
    fs = rec.sampling_rate
    n_clip = int(round(policy.clip_seconds * fs))
    split_t = rec.duration * policy.train_fraction

    windows = label_windows(rec.duration, rec.seizure_onsets, rec.artifact_intervals, policy)
    entries, clips = [], []
    for clip_id, (start, label, src) in enumerate(windows):
        i0 = int(round(start * fs))
        if i0 + n_clip > rec.n_samples:
            continue
        split = "train" if start < split_t else "test"
        entries.append(ManifestEntry(clip_id, rec.subject_id, start, label, split, src))
        clips.append(Clip(rec.subject_id, clip_id, start, label,
                          rec.data[:, i0:i0 + n_clip], src, fs))
    return ClipManifest(entries), clips


# --------------------------------------------------------------------------
# normalization and segmentation
# --------------------------------------------------------------------------

def zscore(data: np.ndarray) -> np.ndarray:
    """Per-channel z-score over the last axis; constant channels become zeros."""
    x = np.asarray(data, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    sd = np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True))
    flat = (sd == 0).ravel()
    if flat.any():
        warnings.warn(
            f"zero-variance channel(s) {np.flatnonzero(flat).tolist()} replaced by zeros",
            ZeroVarianceWarning, stacklevel=2,
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(sd > 0, xc / np.where(sd > 0, sd, 1.0), 0.0)
    # one refinement pass pulls mean/std to within a few ulps
    z = z - z.mean(axis=-1, keepdims=True)
    sd2 = np.sqrt(np.mean(z * z, axis=-1, keepdims=True))
    return np.where(sd2 > 0, z / np.where(sd2 > 0, sd2, 1.0), 0.0)


def normalize_clip(clip: Clip) -> Clip:
    return replace(clip, data=zscore(clip.data))


def segment_clip(clip: Clip, segment_seconds: float = SEGMENT_SECONDS) -> list[Segment]:
    n = int(round(segment_seconds * clip.sampling_rate))
    total = clip.data.shape[1]
    if total % n:
        raise ValueError(f"clip length {total} is not a multiple of segment length {n}")
    return [Segment(clip.clip_id, k, clip.data[:, k * n:(k + 1) * n]) for k in range(total // n)]


def segment_array(clip_data: np.ndarray, segment_seconds: float = SEGMENT_SECONDS,
                  rate: float = TARGET_RATE) -> np.ndarray:
    """(channels, samples) -> (segments, channels, segment_samples), no copy."""
    n = int(round(segment_seconds * rate))
    c, t = clip_data.shape
    return clip_data.reshape(c, t // n, n).transpose(1, 0, 2)
