"""Clip-level predictions, ROC AUC, significance tests, error coherence and
information-transfer curves."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, rankdata

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


class CoherenceError(EvaluationError):
    pass


# --------------------------------------------------------------------------
# clip-level predictions
# --------------------------------------------------------------------------

@dataclass
class PredictionSeries:
    """Per-clip ensemble predictions of one method.

    ``member_p`` is ``(n_models, n_clips)``; ``p`` is its column mean.
    """
    clip_id: np.ndarray
    start_s: np.ndarray
    label: np.ndarray
    p: np.ndarray
    member_p: np.ndarray
    method: str = ""

    def __post_init__(self):
        self.clip_id = np.asarray(self.clip_id, dtype=int)
        self.start_s = np.asarray(self.start_s, dtype=float)
        self.label = np.asarray(self.label, dtype=int)
        self.p = np.asarray(self.p, dtype=float)
        self.member_p = np.atleast_2d(np.asarray(self.member_p, dtype=float))
        n = self.clip_id.size
        if not (self.start_s.size == self.label.size == self.p.size == n == self.member_p.shape[1]):
            raise EvaluationError("prediction series fields have inconsistent lengths")
        if not np.all(np.isfinite(self.p)) or np.any((self.p < 0) | (self.p > 1)):
            raise EvaluationError("clip probabilities must be finite and within [0, 1]")

    def __len__(self):
        return self.clip_id.size

    @property
    def errors(self) -> np.ndarray:
        return np.abs(self.p - self.label)

    @property
    def sd(self) -> np.ndarray:
        return self.member_p.std(axis=0)

    def auc(self) -> float:
        return roc_auc(self.p, self.label)

    def subset(self, keep) -> "PredictionSeries":
        keep = np.asarray(keep)
        return PredictionSeries(self.clip_id[keep], self.start_s[keep], self.label[keep],
                                self.p[keep], self.member_p[:, keep], self.method)


def clip_predict(segment_probs, clip_ids, segment_idx, manifest, method: str = "",
                 segments_per_clip: int = 40) -> PredictionSeries:
    """Average segment outputs per clip, per model.

    Parameters
    ----------
    segment_probs : array (n_models, n_segments)
    clip_ids, segment_idx : arrays (n_segments,)
    manifest : iterable of entries with ``clip_id``, ``start_time`` and ``label``
        The clips to report, in output order.
    """
    probs = np.atleast_2d(np.asarray(segment_probs, dtype=float))
    clip_ids = np.asarray(clip_ids, dtype=int)
    segment_idx = np.asarray(segment_idx, dtype=int)
    entries = list(manifest)
    wanted = np.array([e.clip_id for e in entries], dtype=int)
    pos = {c: i for i, c in enumerate(wanted)}
    row = np.array([pos.get(c, -1) for c in clip_ids])
    inside = row >= 0
    cover = np.zeros((wanted.size, segments_per_clip), dtype=int)
    np.add.at(cover, (row[inside], segment_idx[inside]), 1)
    bad = wanted[(cover != 1).any(axis=1)]
    if bad.size:
        raise EvaluationError(f"incomplete or duplicated segment coverage for clip_id(s) {bad.tolist()}")
    sums = np.zeros((probs.shape[0], wanted.size))
    for m in range(probs.shape[0]):
        sums[m] = np.bincount(row[inside], weights=probs[m, inside], minlength=wanted.size)
    member_p = sums / segments_per_clip
    return PredictionSeries(wanted, [e.start_time for e in entries], [int(e.label) for e in entries],
                            member_p.mean(axis=0), member_p, method)


# --------------------------------------------------------------------------
# ROC AUC and Hanley-McNeil
# --------------------------------------------------------------------------

def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC AUC needs both classes")
    r = rankdata(s)
    u = r[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class HanleyMcNeil:
    auc: float
    q1: float
    q2: float
    se: float
    z: float
    p: float


def hanley_mcneil(auc: float, n_pos: int, n_neg: int) -> HanleyMcNeil:
    """One-sided test of ``auc > 0.5``.

    The standard error is evaluated at the observed AUC, clamped into
    ``[0.5 + 1e-12, 1 - 1e-12]`` so it stays positive.
    """
    if n_pos < 1 or n_neg < 1:
        raise EvaluationError("need at least one clip of each class")
    a = float(auc)
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    ac = min(max(a, 0.5 + 1e-12), 1.0 - 1e-12)
    se = hm_se(ac, n_pos, n_neg)
    z = (a - 0.5) / se
    return HanleyMcNeil(a, q1, q2, se, z, float(norm.sf(z)))


def hm_se(a: float, n_pos: int, n_neg: int) -> float:
    q1 = a / (2.0 - a)
    q2 = 2.0 * a * a / (1.0 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return float(np.sqrt(var))


def hanley_mcneil_p(auc: float, n_pos: int, n_neg: int) -> float:
    return hanley_mcneil(auc, n_pos, n_neg).p


# --------------------------------------------------------------------------
# correlations
# --------------------------------------------------------------------------

def pearson_c(p_i, p_j) -> float:
    a = np.asarray(p_i, dtype=float)
    b = np.asarray(p_j, dtype=float)
    if a.shape != b.shape:
        raise CoherenceError("series must be aligned")
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = np.dot(da, da), np.dot(db, db)
    if saa == 0 or sbb == 0:
        raise CoherenceError("zero-variance prediction series")
    return float(np.clip(np.dot(da, db) / np.sqrt(saa * sbb), -1.0, 1.0))


def weighted_cw(e_i, e_j) -> float:
    """Weighted Pearson correlation of two error series, ``w = max(e_i, e_j)``."""
    a = np.asarray(e_i, dtype=float)
    b = np.asarray(e_j, dtype=float)
    if a.shape != b.shape:
        raise CoherenceError("series must be aligned")
    w = np.maximum(a, b)
    sw = w.sum()
    if sw == 0:
        raise CoherenceError("no errors to correlate")
    ma, mb = np.dot(w, a) / sw, np.dot(w, b) / sw
    da, db = a - ma, b - mb
    vaa, vbb = np.dot(w, da * da), np.dot(w, db * db)
    if vaa == 0 or vbb == 0:
        raise CoherenceError("zero weighted variance")
    return float(np.clip(np.dot(w, da * db) / np.sqrt(vaa * vbb), -1.0, 1.0))


def _pearson_pairs(a, b):
    """Pearson correlation for rows a[k] vs b[k]."""
    da = a - a.mean(axis=-1, keepdims=True)
    db = b - b.mean(axis=-1, keepdims=True)
    num = np.einsum("...n,...n->...", da, db)
    den = np.sqrt(np.einsum("...n,...n->...", da, da) * np.einsum("...n,...n->...", db, db))
    with np.errstate(invalid="ignore", divide="ignore"):
        return num / den


def _weighted_pairs(a, b):
    w = np.maximum(a, b)
    sw = w.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        da = a - (w * a).sum(axis=-1, keepdims=True) / sw
        db = b - (w * b).sum(axis=-1, keepdims=True) / sw
        num = (w * da * db).sum(axis=-1)
        den = np.sqrt((w * da * da).sum(axis=-1) * (w * db * db).sum(axis=-1))
        return num / den


# --------------------------------------------------------------------------
# permutation test
# --------------------------------------------------------------------------

def permutation_stream(seed: int, method: int) -> np.random.Generator:
    """Independent permutation stream per method, split from ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(method,))))


def class_permutations(labels, m: int, rng) -> np.ndarray:
    """``(m, n)`` index arrays that shuffle within each label class."""
    y = np.asarray(labels).astype(int)
    out = np.tile(np.arange(y.size), (m, 1))
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        for r in range(m):
            out[r, idx] = rng.permutation(idx)
    return out


@dataclass
class CoherenceReport:
    c: float
    c_w: float
    p_c: float
    p_cw: float
    M: int
    N: int
    auc: dict = field(default_factory=dict)
    auc_p: dict = field(default_factory=dict)
    p_c_below_resolution: bool = False
    p_cw_below_resolution: bool = False

    def to_dict(self):
        return asdict(self)

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        js = stem.with_suffix(".json")
        js.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        cs = stem.with_suffix(".csv")
        with open(cs, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["statistic", "value", "p_value", "M", "N"])
            w.writerow(["c", repr(self.c), repr(self.p_c), self.M, self.N])
            w.writerow(["c_w", repr(self.c_w), repr(self.p_cw), self.M, self.N])
        return js, cs


def permutation_pvalues(series_1: PredictionSeries, series_2: PredictionSeries, M: int = 100,
                        seed: int = 0, check_auc: bool = True):
    """Class-conditional permutation p-values of ``c`` and ``c_w``.

    Each method gets ``M`` within-class shuffles from its own stream.  The
    pairings are the ``M (M + 1) / 2`` index pairs ``(i, j)`` with
    ``i <= j``, pairing draw ``i`` of method 1 with draw ``j`` of method 2.
    Returns ``(p_c, p_cw, N, exceed_c, exceed_cw)``.
    """
    if M < 2:
        raise EvaluationError("need at least two permutations per method")
    _check_aligned(series_1, series_2)
    y = series_1.label
    p1, p2 = series_1.p, series_2.p
    e1, e2 = series_1.errors, series_2.errors
    c_obs = pearson_c(p1, p2)
    cw_obs = weighted_cw(e1, e2)

    perm1 = class_permutations(y, M, permutation_stream(seed, 0))
    perm2 = class_permutations(y, M, permutation_stream(seed, 1))
    P1, P2 = p1[perm1], p2[perm2]
    if check_auc:
        a1, a2 = roc_auc(p1, y), roc_auc(p2, y)
        for r in range(M):
            if roc_auc(P1[r], y) != a1 or roc_auc(P2[r], y) != a2:
                raise AssertionError("within-class permutation changed an AUC")
    E1, E2 = np.abs(P1 - y), np.abs(P2 - y)
    ii, jj = np.triu_indices(M)
    n_pairs = ii.size
    c_null = np.empty(n_pairs)
    cw_null = np.empty(n_pairs)
    chunk = 1024
    for s in range(0, n_pairs, chunk):
        i, j = ii[s:s + chunk], jj[s:s + chunk]
        c_null[s:s + chunk] = _pearson_pairs(P1[i], P2[j])
        cw_null[s:s + chunk] = _weighted_pairs(E1[i], E2[j])
    # NaN (degenerate) null draws count as non-exceeding
    k_c = int(np.sum(c_null >= c_obs))
    k_cw = int(np.sum(cw_null >= cw_obs))
    return k_c / n_pairs, k_cw / n_pairs, n_pairs, k_c, k_cw


def coherence(series_1: PredictionSeries, series_2: PredictionSeries, M: int = 100,
              seed: int = 0) -> CoherenceReport:
    p_c, p_cw, n, k_c, k_cw = permutation_pvalues(series_1, series_2, M, seed)
    y = series_1.label
    n_pos, n_neg = int(y.sum()), int((1 - y).sum())
    aucs, ps = {}, {}
    for s in (series_1, series_2):
        a = s.auc()
        aucs[s.method] = a
        ps[s.method] = hanley_mcneil_p(a, n_pos, n_neg)
    return CoherenceReport(pearson_c(series_1.p, series_2.p), weighted_cw(series_1.errors, series_2.errors),
                           p_c, p_cw, M, n, aucs, ps, k_c == 0, k_cw == 0)


def _check_aligned(a: PredictionSeries, b: PredictionSeries):
    if not np.array_equal(a.clip_id, b.clip_id):
        raise EvaluationError("prediction series are not aligned by clip_id")
    if not np.array_equal(a.label, b.label):
        raise EvaluationError("prediction series disagree on labels")


# --------------------------------------------------------------------------
# information transfer
# --------------------------------------------------------------------------

def default_grid(step: float = 0.05) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.round(np.linspace(0.0, 1.0, n + 1), 10)


@dataclass
class TransferCurve:
    filter_method: str
    target_method: str
    thresholds: np.ndarray
    auc: np.ndarray
    control_auc: np.ndarray
    retained: np.ndarray
    defined: np.ndarray
    base_auc: float
    control_draws: int

    def lift(self) -> np.ndarray:
        return self.auc - self.base_auc

    def control_shift(self) -> np.ndarray:
        return self.control_auc - self.base_auc

    def at(self, e_th: float) -> int:
        i = int(np.argmin(np.abs(self.thresholds - e_th)))
        if abs(self.thresholds[i] - e_th) > 1e-9:
            raise KeyError(f"threshold {e_th} not on the grid")
        return i

    def to_dict(self):
        def clean(a):
            return [None if not np.isfinite(v) else float(v) for v in a]
        return {
            "filter_method": self.filter_method, "target_method": self.target_method,
            "thresholds": [float(t) for t in self.thresholds], "auc": clean(self.auc),
            "control_auc": clean(self.control_auc), "retained": [int(r) for r in self.retained],
            "defined": [bool(d) for d in self.defined], "base_auc": self.base_auc,
            "control_draws": self.control_draws,
        }

    def rows(self):
        for t, a, c, r, d in zip(self.thresholds, self.auc, self.control_auc, self.retained, self.defined):
            yield [repr(float(t)), repr(float(a)) if d else "", repr(float(c)) if np.isfinite(c) else "",
                   int(r), int(d)]

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        js = stem.with_suffix(".json")
        js.write_text(json.dumps(self.to_dict(), indent=1))
        cs = stem.with_suffix(".csv")
        with open(cs, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["e_th", "auc", "control_auc", "retained", "defined"])
            w.writerows(self.rows())
        return js, cs


def _auc_or_nan(p, y):
    if y.size == 0 or y.min() == y.max():
        return np.nan
    return roc_auc(p, y)


def transfer_curve(filter_series: PredictionSeries, target: PredictionSeries, thresholds=None,
                   seed: int = 0, control_draws: int = 100) -> TransferCurve:
    """Target AUC after dropping clips the filter method mispredicts by more than ``e_th``.

    The control drops the same number of clips uniformly at random; its AUC
    is averaged over ``control_draws`` seeded draws (draws losing a class
    are skipped).
    """
    _check_aligned(filter_series, target)
    grid = default_grid() if thresholds is None else np.asarray(thresholds, dtype=float)
    if not np.any(np.isclose(grid, 1.0)):
        raise EvaluationError("the threshold grid must include 1.0")
    e = filter_series.errors
    y = target.label
    p = target.p
    n = y.size
    base = roc_auc(p, y)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(2,))))
    aucs, ctrl, kept, ok = [], [], [], []
    for t in grid:
        keep = e <= t
        k = int(keep.sum())
        a = _auc_or_nan(p[keep], y[keep])
        if k == n:
            c = base
        else:
            draws = [_auc_or_nan(p[idx], y[idx])
                     for idx in (rng.choice(n, k, replace=False) for _ in range(control_draws))]
            draws = [d for d in draws if np.isfinite(d)]
            c = float(np.mean(draws)) if draws else np.nan
        aucs.append(a)
        ctrl.append(c)
        kept.append(k)
        ok.append(bool(np.isfinite(a)))
    return TransferCurve(filter_series.method, target.method, grid, np.array(aucs), np.array(ctrl),
                         np.array(kept), np.array(ok), base, control_draws)


# --------------------------------------------------------------------------
# exports
# --------------------------------------------------------------------------

def write_prediction_timeline(path, series_1: PredictionSeries, series_2: PredictionSeries):
    """``time_s,label,method1_mean,method1_sd,method2_mean,method2_sd`` per test clip."""
    _check_aligned(series_1, series_2)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "label", "method1_mean", "method1_sd", "method2_mean", "method2_sd"])
        for k in range(len(series_1)):
            w.writerow([repr(float(series_1.start_s[k])), int(series_1.label[k]),
                        repr(float(series_1.p[k])), repr(float(series_1.sd[k])),
                        repr(float(series_2.p[k])), repr(float(series_2.sd[k]))])
    return Path(path)


def save_series(path, s: PredictionSeries):
    np.savez(path, clip_id=s.clip_id, start_s=s.start_s, label=s.label, p=s.p,
             member_p=s.member_p, method=np.array(s.method))
    return Path(path)


def load_series(path) -> PredictionSeries:
    z = np.load(path)
    return PredictionSeries(z["clip_id"], z["start_s"], z["label"], z["p"], z["member_p"], str(z["method"]))
