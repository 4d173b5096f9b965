"""Single-channel features: band power, moments, AR model fits."""
from __future__ import annotations

import numpy as np
from scipy import signal, stats

BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 12.0),
    "beta": (12.0, 30.0),
    "gamma": (30.0, 70.0),
    "high_gamma": (70.0, 95.0),
}
LOG_FLOOR = 1e-12


def band_power(segment, bands=None, fs: float = 200.0) -> np.ndarray:
    """log10 of the mean periodogram power inside each band.

    Parameters
    ----------
    segment : array_like, shape (n_channels, n_samples)
    bands : sequence of (lo_hz, hi_hz), optional
        Defaults to the six entries of ``BANDS``.  A band covers
        ``lo <= f < hi``.
    fs : float
        Sampling rate in Hz.

    Returns
    -------
    ndarray, shape (n_channels * n_bands,)
        Channel-major: all bands of channel 0 first.
    """
    seg = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    bands = list(BANDS.values()) if bands is None else list(bands)
    nyq = fs / 2
    for lo, hi in bands:
        if not (0 <= lo < hi <= nyq):
            raise ValueError(f"band ({lo}, {hi}) Hz outside (0, {nyq}) Hz")
    f, pxx = signal.periodogram(seg, fs=fs, axis=-1)
    out = np.empty((seg.shape[0], len(bands)))
    for j, (lo, hi) in enumerate(bands):
        sel = (f >= lo) & (f < hi)
        if not sel.any():
            raise ValueError(f"band ({lo}, {hi}) Hz contains no frequency bin")
        out[:, j] = pxx[:, sel].mean(axis=1)
    return np.log10(np.maximum(out, LOG_FLOOR)).ravel()


def moments(segment) -> np.ndarray:
    """Per channel (mean, variance, skewness, excess kurtosis), flattened."""
    seg = np.atleast_2d(np.asarray(segment, dtype=np.float64))
    mean = seg.mean(axis=1)
    var = seg.var(axis=1)
    flat = var <= 1e-300
    skew = np.zeros_like(mean)
    kurt = np.zeros_like(mean)
    if not flat.all():
        skew[~flat] = stats.skew(seg[~flat], axis=1)
        kurt[~flat] = stats.kurtosis(seg[~flat], axis=1, fisher=True)
    return np.column_stack([mean, var, skew, kurt]).ravel()


def autocovariance(x: np.ndarray, maxlag: int) -> np.ndarray:
    """Biased (1/n) autocovariance of the demeaned series at lags 0..maxlag."""
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    n = x.size
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    spec = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)[: maxlag + 1]
    return acov / n


def levinson_durbin(r: np.ndarray, order: int) -> tuple[np.ndarray, float]:
    """Solve the Yule-Walker equations for autocovariances ``r[0..order]``.

    Returns ``(phi, sigma2)`` for the model ``x_t = sum_k phi[k] x_{t-k-1} + e_t``.
    """
    phi = np.zeros(order)
    sigma2 = float(r[0])
    if sigma2 <= 0:
        return phi, 0.0
    for k in range(order):
        acc = r[k + 1] - np.dot(phi[:k], r[k:0:-1])
        refl = acc / sigma2
        prev = phi[:k].copy()
        phi[:k] = prev - refl * prev[::-1]
        phi[k] = refl
        sigma2 *= 1.0 - refl * refl
        if sigma2 <= 0:
            sigma2 = 0.0
            break
    return phi, max(sigma2, 0.0)


def ar_fit(x, order: int = 8) -> tuple[np.ndarray, float]:
    """Yule-Walker AR fit; returns coefficients and one-step residual variance."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if order <= 0 or order >= x.size:
        raise ValueError(f"AR order must satisfy 0 < p < {x.size}, got {order}")
    return levinson_durbin(autocovariance(x, order), order)


def ar_features(segment, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """AR coefficients (n_channels * order,) and prediction errors (n_channels,)."""
    seg = np.atleast_2d(segment)
    fits = [ar_fit(ch, order) for ch in seg]
    return np.concatenate([f[0] for f in fits]), np.array([f[1] for f in fits])
