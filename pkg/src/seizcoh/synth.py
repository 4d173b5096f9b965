"""Seeded synthetic multichannel recordings with injectable preictal signatures.

Random streams
--------------
All randomness comes from numpy's PCG64 bit generator seeded through
``numpy.random.SeedSequence(seed, spawn_key=...)``.  Each consumer owns a
fixed spawn key, so output does not depend on the order in which channels
or windows are processed:

    (0, c)  background driving noise of channel ``c``
    (1, w)  shared band-limited component of signature window ``w``
    (2, c)  per-channel jitter of the AR pole frequencies

The background of every channel is a stable AR process whose pole pairs sit
at a common radius.  Inside a signature window the configured band is
boosted and partially replaced by a component shared by all channels, which
raises cross-channel phase locking in that band.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal

from .recording import Recording

_CHUNK_SECONDS = 3600.0
_BURN_IN_SECONDS = 10.0
_PAD_SECONDS = 5.0


class SynthConfigError(ValueError):
    pass


@dataclass
class Signature:
    band_hz: tuple[float, float] = (18.0, 24.0)
    power_gain: float = 4.0
    phase_coupling: float = 0.8
    lead_time_s: float = 4200.0
    ramp_s: float = 60.0


@dataclass
class Background:
    ar_order: int = 6
    ar_pole_radius: float = 0.6
    noise_std: float = 1.0
    pole_freqs_hz: tuple[float, float] = (1.5, 40.0)
    freq_jitter: float = 0.1


@dataclass
class Circadian:
    period_s: float = 86400.0
    amplitude: float = 0.0


@dataclass
class SynthConfig:
    seed: int = 0
    n_channels: int = 4
    sampling_rate: float = 200.0
    duration: float = 24 * 3600.0
    seizure_onsets: list[float] = field(default_factory=list)
    preictal_signature: Signature = field(default_factory=Signature)
    confound_intervals: list[tuple[float, float]] = field(default_factory=list)
    confound_strength: float = 0.0
    background: Background = field(default_factory=Background)
    circadian: Circadian = field(default_factory=Circadian)
    subject_id: str = "synth"
    description: str = ""

    def validate(self):
        if self.n_channels < 1:
            raise SynthConfigError("need at least one channel")
        if not (self.sampling_rate > 0 and self.duration > 0):
            raise SynthConfigError("sampling_rate and duration must be positive")
        if any(not 0 <= s <= self.duration for s in self.seizure_onsets):
            raise SynthConfigError("seizure onset outside the recording")
        if any(b <= a for a, b in zip(self.seizure_onsets, self.seizure_onsets[1:])):
            raise SynthConfigError("seizure onsets must be strictly increasing")
        for a, b in self.confound_intervals:
            if not 0 <= a < b <= self.duration:
                raise SynthConfigError(f"confound interval ({a}, {b}) outside the recording")
        sig = self.preictal_signature
        if not sig.power_gain > 0:
            raise SynthConfigError("power_gain must be positive")
        if not 0 <= sig.phase_coupling <= 1:
            raise SynthConfigError("phase_coupling must be in [0, 1]")
        if not 0 <= self.confound_strength <= 1:
            raise SynthConfigError("confound_strength must be in [0, 1]")
        lo, hi = sig.band_hz
        if not 0 < lo < hi < self.sampling_rate / 2:
            raise SynthConfigError(f"signature band {sig.band_hz} outside (0, Nyquist)")
        bg = self.background
        if bg.ar_order < 2 or bg.ar_order % 2:
            raise SynthConfigError("background ar_order must be a positive even number")
        if not 0 <= bg.ar_pole_radius < 1:
            raise SynthConfigError(
                f"unstable AR background: pole radius {bg.ar_pole_radius} must be < 1"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        sig = Signature(**{**d.pop("preictal_signature", {})})
        sig.band_hz = tuple(sig.band_hz)
        bg = Background(**d.pop("background", {}))
        bg.pole_freqs_hz = tuple(bg.pole_freqs_hz)
        circ = Circadian(**d.pop("circadian", {}))
        d["confound_intervals"] = [tuple(iv) for iv in d.get("confound_intervals", [])]
        return cls(preictal_signature=sig, background=bg, circadian=circ, **d)


@dataclass
class GroundTruth:
    seizure_onsets: list[float]
    confound_intervals: list[tuple[float, float]]
    signature: Signature
    confound_strength: float
    windows: list[tuple[float, float, float]]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def ar_coefficients(cfg: SynthConfig, channel: int) -> np.ndarray:
    """Denominator polynomial ``a`` (a[0] == 1) of channel ``channel``'s AR background."""
    bg = cfg.background
    n_pairs = bg.ar_order // 2
    freqs = np.geomspace(*bg.pole_freqs_hz, n_pairs)
    jitter = _rng(cfg.seed, 2, channel).uniform(-bg.freq_jitter, bg.freq_jitter, n_pairs)
    theta = 2 * np.pi * freqs * (1 + jitter) / cfg.sampling_rate
    poles = bg.ar_pole_radius * np.exp(1j * theta)
    return np.real(np.poly(np.concatenate([poles, poles.conj()])))


def _background(cfg: SynthConfig, n: int) -> np.ndarray:
    fs = cfg.sampling_rate
    out = np.empty((cfg.n_channels, n), dtype=np.float32)
    chunk = int(_CHUNK_SECONDS * fs)
    burn = int(_BURN_IN_SECONDS * fs)
    for c in range(cfg.n_channels):
        a = ar_coefficients(cfg, c)
        rng = _rng(cfg.seed, 0, c)
        zi = np.zeros(len(a) - 1)
        _, zi = signal.lfilter([1.0], a, rng.standard_normal(burn) * cfg.background.noise_std, zi=zi)
        for i0 in range(0, n, chunk):
            m = min(chunk, n - i0)
            e = rng.standard_normal(m) * cfg.background.noise_std
            y, zi = signal.lfilter([1.0], a, e, zi=zi)
            out[c, i0:i0 + m] = y
    return out


def _envelope(t: np.ndarray, a: float, b: float, ramp: float) -> np.ndarray:
    env = ((t >= a) & (t < b)).astype(float)
    if ramp > 0:
        up = (t >= a) & (t < a + ramp)
        env[up] = 0.5 - 0.5 * np.cos(np.pi * (t[up] - a) / ramp)
        down = (t >= b - ramp) & (t < b)
        env[down] = np.minimum(env[down], 0.5 - 0.5 * np.cos(np.pi * (b - t[down]) / ramp))
    return env


def signature_windows(cfg: SynthConfig) -> list[tuple[float, float, float]]:
    """``(start_s, end_s, strength)`` for every window that carries the signature."""
    sig = cfg.preictal_signature
    if sig.power_gain == 1.0 and sig.phase_coupling == 0.0:
        return []  # inert: injecting would only add round-off
    lead = sig.lead_time_s
    wins = [(max(0.0, s - lead), s, 1.0) for s in cfg.seizure_onsets if s > 0]
    wins += [(a, b, cfg.confound_strength) for a, b in cfg.confound_intervals]
    return [w for w in wins if w[1] > w[0] and w[2] > 0]


def _inject(data: np.ndarray, cfg: SynthConfig, index: int, window) -> None:
    a, b, strength = window
    sig = cfg.preictal_signature
    fs = cfg.sampling_rate
    i0 = max(0, int(np.floor((a - _PAD_SECONDS) * fs)))
    i1 = min(data.shape[1], int(np.ceil((b + _PAD_SECONDS) * fs)))
    t = np.arange(i0, i1) / fs
    env = _envelope(t, a, b, sig.ramp_s) * strength
    if not env.any():
        return

    sos = signal.butter(4, sig.band_hz, btype="bandpass", fs=fs, output="sos")
    x = data[:, i0:i1].astype(np.float64)
    band = signal.sosfiltfilt(sos, x, axis=1)
    shared = signal.sosfiltfilt(sos, _rng(cfg.seed, 1, index).standard_normal(i1 - i0))
    shared *= np.sqrt(np.mean(band.var(axis=1)) / shared.var())

    gain = 1.0 + (sig.power_gain - 1.0) * env
    rho = sig.phase_coupling * env
    new_band = np.sqrt(gain) * (np.sqrt(1.0 - rho) * band + np.sqrt(rho) * shared)
    data[:, i0:i1] = x - band + new_band


def generate(cfg: SynthConfig) -> tuple[Recording, GroundTruth]:
    """Deterministically synthesize a recording from ``cfg``."""
    cfg.validate()
    fs = cfg.sampling_rate
    n = int(round(cfg.duration * fs))
    data = _background(cfg, n)

    windows = signature_windows(cfg)
    for w, win in enumerate(windows):
        _inject(data, cfg, w, win)

    circ = cfg.circadian
    if circ.amplitude:
        chunk = int(_CHUNK_SECONDS * fs)
        for i0 in range(0, n, chunk):
            t = np.arange(i0, min(n, i0 + chunk)) / fs
            data[:, i0:i0 + t.size] *= (1.0 + circ.amplitude * np.sin(2 * np.pi * t / circ.period_s))

    rec = Recording(
        subject_id=cfg.subject_id,
        sampling_rate=fs,
        channels=[f"ch{c:02d}" for c in range(cfg.n_channels)],
        data=data,
        seizure_onsets=list(cfg.seizure_onsets),
    )
    truth = GroundTruth(list(cfg.seizure_onsets), list(cfg.confound_intervals),
                        cfg.preictal_signature, cfg.confound_strength, windows)
    return rec, truth


# --------------------------------------------------------------------------
# named scenarios
# --------------------------------------------------------------------------

_MIN = 60.0
_SPACING_MIN = 130.0

# Layout (minutes): 4 h edge | 420 interictal | 4 h | 2 seizures 130 min apart
# | 4 h | 410 interictal || 350 interictal | 4 h | 3 seizures | 4 h
# | 350 interictal | 4 h edge.  Split (||) at 28 h, total 56 h.
SCENARIO_ONSETS_MIN = [900.0, 1030.0, 2270.0, 2400.0, 2530.0]
SCENARIO_DURATION_MIN = 3360.0
SCENARIO_CLIP_COUNTS = {
    "train": {"Interictal": 83, "Preictal": 12},
    "test": {"Interictal": 70, "Preictal": 18},
}
# four 1-h confounds inside the two test interictal stretches (24 clips)
CONFOUND_INTERVALS_MIN = [(1720.0, 1780.0), (1900.0, 1960.0), (2810.0, 2870.0), (3000.0, 3060.0)]


def _scenario(name, seed, signature, confounds=(), strength=0.0, description=""):
    return SynthConfig(
        seed=seed,
        n_channels=4,
        sampling_rate=200.0,
        duration=SCENARIO_DURATION_MIN * _MIN,
        seizure_onsets=[m * _MIN for m in SCENARIO_ONSETS_MIN],
        preictal_signature=signature,
        confound_intervals=[(a * _MIN, b * _MIN) for a, b in confounds],
        confound_strength=strength,
        background=Background(),
        circadian=Circadian(amplitude=0.3),
        subject_id=name,
        description=description,
    )


def standard_scenarios() -> dict[str, SynthConfig]:
    """The named desk-scale scenarios.

    All three share one 56-h, 4-channel layout whose labeling yields
    ``SCENARIO_CLIP_COUNTS`` (train 83 interictal / 12 preictal, test 70 / 18;
    a desk-scale fraction of a typical
    challenge-dataset subject).
    """
    return {
        "separable": _scenario(
            "separable", 11, Signature(power_gain=4.0, phase_coupling=0.8),
            description="strong 18-24 Hz preictal signature, no confounds",
        ),
        "confounded": _scenario(
            "confounded", 12, Signature(power_gain=4.0, phase_coupling=0.8),
            CONFOUND_INTERVALS_MIN, 1.0,
            description="preictal signature plus four signature-bearing confounds in the test half",
        ),
        "null": _scenario(
            "null", 13, Signature(power_gain=1.0, phase_coupling=0.0),
            description="no signature, no confounds",
        ),
    }
