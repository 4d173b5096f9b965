"""Segment features: univariate kinds, bivariate matrices and their variants.

A feature vector pairs one univariate kind with one bivariate kind seen
through one matrix variant, giving ``4 x 4 x 3 = 48`` combinations.
"""
from __future__ import annotations

import csv
import enum
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bivariate import (
    FeatureError,
    check_finite,
    eigen_summary,
    mean_phase_coherence,
    mpc_matrix,
    ni_matrix,
    nonlinear_interdependence,
    upper_triangle,
    xcorr_freq_matrix,
    xcorr_time_matrix,
)
from .univariate import BANDS, ar_features, ar_fit, band_power, moments

__all__ = [
    "UniFeatureKind", "BiFeatureKind", "MatrixVariant", "FeatureParams", "FeatureVector",
    "FeatureError", "COMBOS", "band_power", "moments", "ar_fit", "mean_phase_coherence",
    "nonlinear_interdependence", "bivariate_matrix", "variant_transform", "assemble",
    "compute_blocks", "combo_matrix", "combo_labels", "save_feature_table", "load_feature_table",
]


class UniFeatureKind(str, enum.Enum):
    BandPower = "BandPower"
    Moments = "Moments"
    ArCoefficients = "ArCoefficients"
    ArPredictionError = "ArPredictionError"


class BiFeatureKind(str, enum.Enum):
    CrossCorrTime = "CrossCorrTime"
    CrossCorrFreq = "CrossCorrFreq"
    MeanPhaseCoherence = "MeanPhaseCoherence"
    NonlinearInterdependence = "NonlinearInterdependence"


class MatrixVariant(str, enum.Enum):
    Matrix = "Matrix"
    Eigen = "Eigen"
    Combined = "Combined"


COMBOS = list(itertools.product(UniFeatureKind, BiFeatureKind, MatrixVariant))


@dataclass
class FeatureParams:
    fs: float = 200.0
    bands: dict = field(default_factory=lambda: dict(BANDS))
    ar_order: int = 8
    embed_dim: int = 6
    embed_delay: int = 5
    neighbors: int = 5
    theiler: int = 25
    ni_max_points: int | None = 300

    def to_dict(self):
        d = asdict(self)
        d["bands"] = {k: list(v) for k, v in self.bands.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "bands" in d:
            d["bands"] = {k: tuple(v) for k, v in d["bands"].items()}
        return cls(**d)


@dataclass
class FeatureVector:
    values: np.ndarray
    uni: UniFeatureKind
    bi: BiFeatureKind
    variant: MatrixVariant
    labels: list[str]
    segment: tuple[int, int] | None = None


def bivariate_matrix(segment, kind: BiFeatureKind, params: FeatureParams = FeatureParams()) -> np.ndarray:
    seg = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    if seg.shape[0] < 2:
        raise ValueError("bivariate features need at least two channels")
    kind = BiFeatureKind(kind)
    if kind is BiFeatureKind.CrossCorrTime:
        m = xcorr_time_matrix(seg)
    elif kind is BiFeatureKind.CrossCorrFreq:
        m = xcorr_freq_matrix(seg, fs=params.fs)
    elif kind is BiFeatureKind.MeanPhaseCoherence:
        m = mpc_matrix(seg)
    else:
        m = ni_matrix(seg, params.embed_dim, params.embed_delay, params.neighbors,
                      params.theiler, params.ni_max_points)
    return check_finite(m, kind.value)


def variant_transform(matrix, variant: MatrixVariant) -> np.ndarray:
    variant = MatrixVariant(variant)
    if variant is MatrixVariant.Matrix:
        return upper_triangle(matrix)
    if variant is MatrixVariant.Eigen:
        return eigen_summary(matrix)
    return np.concatenate([upper_triangle(matrix), eigen_summary(matrix)])


def _uni_block(seg, kind, params):
    if kind is UniFeatureKind.BandPower:
        return band_power(seg, params.bands.values(), params.fs)
    if kind is UniFeatureKind.Moments:
        return moments(seg)
    coefs, err = ar_features(seg, params.ar_order)
    return coefs if kind is UniFeatureKind.ArCoefficients else err


def uni_labels(kind: UniFeatureKind, n_channels: int, params: FeatureParams) -> list[str]:
    kind = UniFeatureKind(kind)
    if kind is UniFeatureKind.BandPower:
        per = list(params.bands)
    elif kind is UniFeatureKind.Moments:
        per = ["mean", "var", "skew", "kurt"]
    elif kind is UniFeatureKind.ArCoefficients:
        per = [f"a{i + 1}" for i in range(params.ar_order)]
    else:
        per = ["err"]
    return [f"{kind.value}[ch{c}:{p}]" for c in range(n_channels) for p in per]


def variant_labels(bi: BiFeatureKind, variant: MatrixVariant, n_channels: int) -> list[str]:
    bi, variant = BiFeatureKind(bi), MatrixVariant(variant)
    mat = [f"{bi.value}[{i},{j}]" for i, j in zip(*np.triu_indices(n_channels, 1))]
    eig = ([f"{bi.value}:eigval{i}" for i in range(n_channels)]
           + [f"{bi.value}:eigvec{i}" for i in range(n_channels)]
           + [f"{bi.value}:rowmax{i}" for i in range(n_channels)])
    return {"Matrix": mat, "Eigen": eig, "Combined": mat + eig}[variant.value]


def combo_labels(uni, bi, variant, n_channels, params=FeatureParams()) -> list[str]:
    return uni_labels(uni, n_channels, params) + variant_labels(bi, variant, n_channels)


def _check_uni(values, kind, n_channels):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        per = values.size // n_channels
        raise FeatureError(f"{kind.value}: non-finite value on channel {bad[0] // per}")
    return values


def assemble(segment, uni: UniFeatureKind, bi: BiFeatureKind, variant: MatrixVariant,
             params: FeatureParams = FeatureParams(), segment_ref=None) -> FeatureVector:
    seg = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    uni, bi, variant = UniFeatureKind(uni), BiFeatureKind(bi), MatrixVariant(variant)
    u = _check_uni(_uni_block(seg, uni, params), uni, seg.shape[0])
    b = variant_transform(bivariate_matrix(seg, bi, params), variant)
    return FeatureVector(np.concatenate([u, b]), uni, bi, variant,
                         combo_labels(uni, bi, variant, seg.shape[0], params), segment_ref)


# --------------------------------------------------------------------------
# batched extraction for the pipeline
# --------------------------------------------------------------------------

def compute_blocks(segments, params: FeatureParams = FeatureParams(),
                   uni_kinds=tuple(UniFeatureKind), bi_kinds=tuple(BiFeatureKind)) -> dict:
    """Every requested block for a stack of segments ``(n_seg, n_channels, n_samples)``.

    Univariate kinds map to ``(n_seg, d)`` arrays, bivariate kinds to
    ``(n_seg, n_channels, n_channels)`` matrices.
    """
    segs = np.asarray(segments)
    n, c = segs.shape[:2]
    uni_kinds = [UniFeatureKind(k) for k in uni_kinds]
    bi_kinds = [BiFeatureKind(k) for k in bi_kinds]
    out = {}
    need_ar = {UniFeatureKind.ArCoefficients, UniFeatureKind.ArPredictionError} & set(uni_kinds)
    for kind in uni_kinds:
        if kind in (UniFeatureKind.BandPower, UniFeatureKind.Moments):
            out[kind.value] = np.stack([_uni_block(s, kind, params) for s in segs])
    if need_ar:
        fits = [ar_features(s, params.ar_order) for s in segs]
        if UniFeatureKind.ArCoefficients in need_ar:
            out[UniFeatureKind.ArCoefficients.value] = np.stack([f[0] for f in fits])
        if UniFeatureKind.ArPredictionError in need_ar:
            out[UniFeatureKind.ArPredictionError.value] = np.stack([f[1] for f in fits])
    for kind in uni_kinds:
        for row in out[kind.value]:
            _check_uni(row, kind, c)
    for kind in bi_kinds:
        out[kind.value] = np.stack([bivariate_matrix(s, kind, params) for s in segs])
    return out


def combo_matrix(blocks: dict, uni, bi, variant) -> np.ndarray:
    """Row-per-segment feature matrix for one combination."""
    uni, bi, variant = UniFeatureKind(uni), BiFeatureKind(bi), MatrixVariant(variant)
    mats = blocks[bi.value]
    b = np.stack([variant_transform(m, variant) for m in mats])
    return np.hstack([blocks[uni.value], b])


# --------------------------------------------------------------------------
# feature store
# --------------------------------------------------------------------------

def save_feature_table(directory, subject: str, split: str, values: np.ndarray, labels: list[str],
                       descriptor: dict, row_index=None, csv_export: bool = True) -> Path:
    """Write ``<subject>_<split>_<uni>-<bi>-<variant>.npy`` plus a JSON sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tag = "-".join(str(descriptor[k]) for k in ("uni", "bi", "variant"))
    stem = directory / f"{subject}_{split}_{tag}"
    np.save(stem.with_suffix(".npy"), np.asarray(values))
    meta = {"subject": subject, "split": split, "descriptor": descriptor, "labels": list(labels),
            "shape": list(np.shape(values))}
    if row_index is not None:
        meta["rows"] = [list(map(int, r)) for r in row_index]
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=1))
    if csv_export:
        with open(stem.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["clip_id", "segment_idx"] if row_index is not None else []
            w.writerow(head + list(labels))
            for i, row in enumerate(np.asarray(values)):
                lead = list(map(int, row_index[i])) if row_index is not None else []
                w.writerow(lead + [repr(float(v)) for v in row])
    return stem.with_suffix(".npy")


def load_feature_table(npy_path):
    npy_path = Path(npy_path)
    meta = json.loads(npy_path.with_suffix(".json").read_text())
    return np.load(npy_path), meta
