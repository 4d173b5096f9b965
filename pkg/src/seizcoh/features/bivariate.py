"""Cross-channel measures and the symmetric-matrix variants built from them."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import signal
from scipy.spatial.distance import cdist

from .univariate import LOG_FLOOR


class FeatureError(ValueError):
    pass


EDGE_TRIM = 0.05


def analytic_phase(x, trim: float = EDGE_TRIM) -> np.ndarray:
    """Instantaneous phase of the demeaned signal(s), ``trim`` dropped at each end."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    x = x - x.mean(axis=-1, keepdims=True)
    phase = np.angle(signal.hilbert(x, axis=-1))
    cut = int(np.floor(trim * x.shape[-1]))
    return phase[:, cut:x.shape[-1] - cut] if cut else phase


def mean_phase_coherence(x, y, trim: float = EDGE_TRIM) -> float:
    if np.shape(x) != np.shape(y):
        raise ValueError("signals must have equal length")
    ph = analytic_phase(np.vstack([x, y]), trim)
    return float(np.abs(np.mean(np.exp(1j * (ph[0] - ph[1])))))


def mpc_matrix(segment, trim: float = EDGE_TRIM) -> np.ndarray:
    z = np.exp(1j * analytic_phase(segment, trim))
    r = np.abs(z @ z.conj().T) / z.shape[1]
    r = np.triu(r, 1)
    return r + r.T + np.eye(len(r))


# --------------------------------------------------------------------------
# nonlinear interdependence
# --------------------------------------------------------------------------

def delay_embed(x, m: int, tau: int) -> np.ndarray:
    """Rows are delay vectors ``(x[n], x[n+tau], ..., x[n+(m-1)tau])``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size - (m - 1) * tau
    if n <= 0:
        raise ValueError("series too short for the embedding")
    return np.lib.stride_tricks.sliding_window_view(x, (m - 1) * tau + 1)[:n, ::tau]


def _reference_points(length, m, tau, max_points):
    n = length - (m - 1) * tau
    stride = max(1, int(np.ceil(n / max_points))) if max_points else 1
    return np.arange(0, n, stride)


def _sq_dists(v: np.ndarray) -> np.ndarray:
    return cdist(v, v, "sqeuclidean")


def _knn_mask(d: np.ndarray, k: int) -> np.ndarray:
    """Boolean mask of each row's ``k`` smallest entries; equal distances go to the lowest index."""
    kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
    less = d < kth
    eq = d == kth
    need = k - less.sum(axis=1, keepdims=True)
    return less | (eq & (np.cumsum(eq, axis=1) <= need))


def knn_indices(d: np.ndarray, k: int) -> np.ndarray:
    """Column indices of each row's ``k`` nearest entries, ties to the lowest index."""
    idx = np.argpartition(d, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(d, idx, axis=1).max(axis=1, keepdims=True)
    tied = np.flatnonzero((d <= kth).sum(axis=1) > k)
    if tied.size:
        mask = _knn_mask(d[tied], k)
        idx[tied] = np.nonzero(mask)[1].reshape(tied.size, k)
    return idx


@lru_cache(maxsize=8)
def _theiler_mask(length: int, m: int, tau: int, max_points, theiler: int) -> np.ndarray:
    idx = _reference_points(length, m, tau, max_points)
    mask = np.abs(idx[:, None] - idx[None, :]) <= theiler
    mask.setflags(write=False)
    return mask


class _Embedded:
    """Distances and neighbor indices of one channel's delay vectors."""

    def __init__(self, x, m, tau, k, theiler, max_points):
        x = np.asarray(x, dtype=np.float64)
        if x.size <= (m - 1) * tau + k + 2 * theiler:
            raise ValueError(
                f"series of length {x.size} too short for m={m}, tau={tau}, k={k}, theiler={theiler}"
            )
        close = _theiler_mask(x.size, m, tau, max_points, theiler)
        if (~close).sum(axis=1).min() < k:
            raise ValueError("Theiler window leaves fewer than k candidate neighbors")
        d = _sq_dists(delay_embed(x, m, tau)[_reference_points(x.size, m, tau, max_points)])
        self.d = d
        self.nbrs = knn_indices(np.where(close, np.inf, d), k)
        self.self_r = np.take_along_axis(d, self.nbrs, axis=1).mean(axis=1)


def _s_given(ex: _Embedded, ey: _Embedded) -> float:
    cond = np.take_along_axis(ex.d, ey.nbrs, axis=1).mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(cond > 0, ex.self_r / cond, 1.0)
    return float(ratio.mean())


def nonlinear_interdependence(x, y, m: int = 6, tau: int = 5, k: int = 5, theiler: int = 25,
                              max_points: int | None = None) -> float:
    """S(X|Y): how well the neighbors of Y's states map onto close states of X.

    ``max_points`` thins the reference states to at most that many (uniform
    stride) to bound the quadratic cost; ``None`` uses every state.
    """
    if np.shape(x) != np.shape(y):
        raise ValueError("signals must have equal length")
    ex = _Embedded(x, m, tau, k, theiler, max_points)
    ey = _Embedded(y, m, tau, k, theiler, max_points)
    return _s_given(ex, ey)


def ni_matrix(segment, m=6, tau=5, k=5, theiler=25, max_points=300) -> np.ndarray:
    """Symmetrized interdependence, entry (i, j) = (S(i|j) + S(j|i)) / 2."""
    emb = [_Embedded(ch, m, tau, k, theiler, max_points) for ch in np.atleast_2d(segment)]
    n = len(emb)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = 0.5 * (_s_given(emb[i], emb[j]) + _s_given(emb[j], emb[i]))
    return out


# --------------------------------------------------------------------------
# correlation matrices
# --------------------------------------------------------------------------

def _pearson_rows(a: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.sum(a * a, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (a @ a.T) / np.outer(norm, norm)
    r = np.clip(r, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return 0.5 * (r + r.T)


def xcorr_time_matrix(segment) -> np.ndarray:
    return _pearson_rows(np.atleast_2d(np.asarray(segment, dtype=np.float64)))


def xcorr_freq_matrix(segment, fs: float = 200.0, fmin: float = 0.5, fmax: float = 95.0) -> np.ndarray:
    """Pearson correlation between channels' log10 periodograms over [fmin, fmax] Hz."""
    f, pxx = signal.periodogram(np.atleast_2d(segment), fs=fs, axis=-1)
    sel = (f >= fmin) & (f <= fmax)
    return _pearson_rows(np.log10(np.maximum(pxx[:, sel], LOG_FLOOR)))


def check_finite(matrix: np.ndarray, name: str) -> np.ndarray:
    bad = np.argwhere(~np.isfinite(matrix))
    if bad.size:
        i, j = bad[0]
        raise FeatureError(f"{name}: non-finite value for channel pair ({i}, {j})")
    return matrix


# --------------------------------------------------------------------------
# matrix variants
# --------------------------------------------------------------------------

def upper_triangle(matrix) -> np.ndarray:
    m = np.asarray(matrix)
    return m[np.triu_indices(m.shape[0], 1)]


def eigen_summary(matrix) -> np.ndarray:
    """Descending eigenvalues, sign-fixed leading eigenvector, row-wise off-diagonal max."""
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(w)[::-1]
    w = w[order]
    lead = v[:, order[0]]
    if lead[np.argmax(np.abs(lead))] < 0:
        lead = -lead
    off = np.where(np.eye(n, dtype=bool), -np.inf, m)
    row_max = off.max(axis=1) if n > 1 else np.zeros(1)
    return np.concatenate([w, lead, row_max])
