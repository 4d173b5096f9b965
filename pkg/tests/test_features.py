import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seizcoh.features import (
    COMBOS,
    BiFeatureKind,
    FeatureError,
    FeatureParams,
    MatrixVariant,
    UniFeatureKind,
    ar_fit,
    assemble,
    band_power,
    bivariate_matrix,
    combo_matrix,
    compute_blocks,
    load_feature_table,
    mean_phase_coherence,
    moments,
    nonlinear_interdependence,
    save_feature_table,
    variant_transform,
)
from seizcoh.features.univariate import BANDS, LOG_FLOOR

FS = 200.0
T = np.arange(3000) / FS


def _noise(seed, shape=(3000,)):
    return np.random.default_rng(seed).standard_normal(shape)


# ---------------------------------------------------------------- band power

def test_band_power_alpha_dominates_for_10hz_sine():
    bp = 10 ** band_power(np.sin(2 * np.pi * 10 * T)[None])
    alpha = list(BANDS).index("alpha")
    others = np.delete(bp, alpha)
    assert bp[alpha] >= 100 * others.max()


def test_band_power_white_noise_equal_width_bands():
    bands = [(10.0, 30.0), (50.0, 70.0)]
    p = np.mean([10 ** band_power(_noise(s)[None], bands) for s in range(100)], axis=0)
    assert abs(p[0] / p[1] - 1) < 0.2


def test_band_power_zero_signal_floor():
    assert np.all(band_power(np.zeros((2, 3000))) == np.log10(LOG_FLOOR))


def test_band_power_rejects_band_above_nyquist():
    with pytest.raises(ValueError, match="outside"):
        band_power(_noise(0)[None], [(90.0, 120.0)])


def test_band_power_layout_channel_major():
    seg = np.vstack([np.sin(2 * np.pi * 10 * T), np.sin(2 * np.pi * 20 * T)])
    bp = band_power(seg).reshape(2, 6)
    assert np.argmax(bp[0]) == list(BANDS).index("alpha")
    assert np.argmax(bp[1]) == list(BANDS).index("beta")


# ---------------------------------------------------------------- moments

def test_moments_zscored_channel():
    x = _noise(1)
    x = (x - x.mean()) / x.std()
    m = moments(x[None])
    assert abs(m[0]) < 1e-9 and abs(m[1] - 1) < 1e-2


def test_moments_skew_negates():
    x = _noise(2) ** 2
    assert moments(-x[None])[2] == pytest.approx(-moments(x[None])[2], abs=1e-12)


def test_moments_gaussian_excess_kurtosis():
    assert abs(moments(_noise(3)[None])[3]) < 0.3


def test_moments_constant_channel():
    assert list(moments(np.full((1, 100), 2.0))) == [2.0, 0.0, 0.0, 0.0]


def test_moments_match_direct_formulas():
    x = _noise(4) ** 3
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    ref = [x.mean(), m2, np.mean(d ** 3) / m2 ** 1.5, np.mean(d ** 4) / m2 ** 2 - 3]
    np.testing.assert_allclose(moments(x[None]), ref, rtol=1e-10)


# ---------------------------------------------------------------- AR

def _ar1(phi, n, seed):
    e = _noise(seed, (n,))
    x = np.zeros(n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_ar1_coefficient_recovered():
    a, _ = ar_fit(_ar1(0.8, 3000, 5), 1)
    assert abs(a[0] - 0.8) < 0.05


def test_ar_white_noise():
    x = _noise(6)
    a, s2 = ar_fit(x, 8)
    assert np.all(np.abs(a) < 0.05)
    assert abs(s2 / x.var() - 1) < 0.02


def test_ar2_represents_sinusoid():
    x = np.sin(2 * np.pi * 7.3 * T)
    _, s2 = ar_fit(x, 2)
    assert s2 < 1e-3 * x.var()


@pytest.mark.parametrize("p", [0, -1, 3000])
def test_ar_bad_order(p):
    with pytest.raises(ValueError):
        ar_fit(_noise(0), p)


def test_levinson_matches_yule_walker_solve():
    from scipy.linalg import solve_toeplitz
    x = _ar1(0.5, 3000, 7) + 0.3 * _noise(8)
    d = x - x.mean()
    r = np.array([np.dot(d[:d.size - k], d[k:]) / d.size for k in range(9)])
    ref = solve_toeplitz(r[:8], r[1:9])
    a, s2 = ar_fit(x, 8)
    np.testing.assert_allclose(a, ref, atol=1e-10)
    assert s2 == pytest.approx(r[0] - ref @ r[1:9], rel=1e-10)


# ---------------------------------------------------------------- phase coherence

def test_mpc_identical():
    x = _noise(9)
    assert mean_phase_coherence(x, x) == pytest.approx(1.0, abs=1e-6)


def test_mpc_constant_phase_shift():
    assert mean_phase_coherence(np.sin(2 * np.pi * 9 * T), np.sin(2 * np.pi * 9 * T + 1.1)) == \
        pytest.approx(1.0, abs=1e-3)


def test_mpc_independent_noise():
    low = sum(mean_phase_coherence(_noise(2 * s), _noise(2 * s + 1)) < 0.1 for s in range(100))
    assert low >= 95


def test_mpc_against_direct_hilbert():
    from scipy.signal import hilbert
    x, y = _noise(10), _noise(11)
    px = np.angle(hilbert(x - x.mean()))[150:-150]
    py = np.angle(hilbert(y - y.mean()))[150:-150]
    ref = abs(np.mean(np.exp(1j * (px - py))))
    assert mean_phase_coherence(x, y) == pytest.approx(ref, abs=1e-12)


# ---------------------------------------------------------------- nonlinear interdependence

def _ni_oracle(x, y, m, tau, k, theiler, perm=None):
    """Brute-force S(X|Y); ``perm`` shuffles Y's embedding order (surrogate)."""
    n = len(x) - (m - 1) * tau
    X = np.array([[x[i + j * tau] for j in range(m)] for i in range(n)])
    Y = np.array([[y[i + j * tau] for j in range(m)] for i in range(n)])
    if perm is not None:
        Y = Y[perm]
    total = 0.0
    for i in range(n):
        cand = [j for j in range(n) if abs(i - j) > theiler]
        dx = {j: float(np.sum((X[i] - X[j]) ** 2)) for j in cand}
        dy = {j: float(np.sum((Y[i] - Y[j]) ** 2)) for j in cand}
        nx = sorted(cand, key=lambda j: (dx[j], j))[:k]
        ny = sorted(cand, key=lambda j: (dy[j], j))[:k]
        total += np.mean([dx[j] for j in nx]) / np.mean([dx[j] for j in ny])
    return total / n


def test_ni_matches_bruteforce_oracle():
    x = _noise(12, (240,))
    y = 0.6 * x + 0.8 * _noise(13, (240,))
    got = nonlinear_interdependence(x, y, m=3, tau=2, k=4, theiler=5)
    assert got == pytest.approx(_ni_oracle(x, y, 3, 2, 4, 5), abs=1e-12)


def test_ni_self_is_one():
    x = _noise(14)
    assert nonlinear_interdependence(x, x, max_points=300) == pytest.approx(1.0, abs=1e-9)


def test_ni_independent_below_surrogate_95th_and_cubed_above_baseline():
    x, y = _noise(15, (300,)), _noise(16, (300,))
    m, tau, k, th = 3, 2, 4, 5
    s_ind = _ni_oracle(x, y, m, tau, k, th)
    assert nonlinear_interdependence(x, y, m, tau, k, th) == pytest.approx(s_ind, abs=1e-12)
    rng = np.random.default_rng(0)
    n = 300 - (m - 1) * tau
    surr = [_ni_oracle(x, y, m, tau, k, th, perm=rng.permutation(n)) for _ in range(19)]
    assert s_ind <= np.percentile(surr, 95)
    xb = np.tanh(x)
    assert nonlinear_interdependence(xb, xb ** 3, m, tau, k, th) > \
        nonlinear_interdependence(xb, y, m, tau, k, th)


def test_ni_too_short():
    with pytest.raises(ValueError, match="too short"):
        nonlinear_interdependence(_noise(0, (60,)), _noise(1, (60,)))


# ---------------------------------------------------------------- matrices and variants

ALL_BI = list(BiFeatureKind)


@pytest.mark.parametrize("kind", ALL_BI)
def test_bivariate_symmetric(kind):
    mtx = bivariate_matrix(_noise(17, (3, 3000)), kind)
    np.testing.assert_array_equal(mtx, mtx.T)
    np.testing.assert_array_equal(np.diag(mtx), 1.0)


@pytest.mark.parametrize("kind", [BiFeatureKind.CrossCorrTime, BiFeatureKind.MeanPhaseCoherence])
def test_duplicated_channel_gives_one(kind):
    x = _noise(18, (2, 3000))
    mtx = bivariate_matrix(np.vstack([x, x[:1]]), kind)
    assert mtx[0, 2] == pytest.approx(1.0, abs=1e-6)


def test_xcorr_independent_noise_small():
    ok = 0
    for s in range(100):
        mtx = bivariate_matrix(_noise(100 + s, (3, 3000)), BiFeatureKind.CrossCorrTime)
        ok += np.all(np.abs(mtx[np.triu_indices(3, 1)]) < 0.1)
    assert ok >= 95


def test_xcorr_freq_against_direct():
    from scipy.signal import periodogram
    seg = _noise(19, (3, 3000))
    f, p = periodogram(seg, fs=FS)
    sel = (f >= 0.5) & (f <= 95)
    ref = np.corrcoef(np.log10(p[:, sel]))
    np.testing.assert_allclose(bivariate_matrix(seg, BiFeatureKind.CrossCorrFreq), ref, atol=1e-12)


@pytest.mark.parametrize("kind", ALL_BI)
def test_channel_permutation_equivariance(kind):
    seg = _noise(20, (4, 3000))
    perm = np.array([2, 0, 3, 1])
    a = bivariate_matrix(seg, kind)
    b = bivariate_matrix(seg[perm], kind)
    np.testing.assert_allclose(b, a[np.ix_(perm, perm)], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.1, 10), min_size=3, max_size=3),
       st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_affine_invariance(scales, shifts):
    seg = _noise(21, (3, 3000))
    seg2 = seg * np.array(scales)[:, None] + np.array(shifts)[:, None]
    for kind in (BiFeatureKind.CrossCorrTime, BiFeatureKind.MeanPhaseCoherence):
        np.testing.assert_allclose(bivariate_matrix(seg2, kind), bivariate_matrix(seg, kind), atol=1e-6)


def test_variant_identity():
    assert list(variant_transform(np.eye(3), "Matrix")) == [0, 0, 0]
    np.testing.assert_allclose(variant_transform(np.eye(3), "Eigen")[:3], [1, 1, 1])


def test_variant_rank_one():
    v = np.array([1.0, -2.0, 0.5])
    e = variant_transform(np.outer(v, v), "Eigen")
    assert e[0] == pytest.approx(v @ v, abs=1e-9)
    np.testing.assert_allclose(e[1:3], 0, atol=1e-9)
    lead = e[3:6]
    assert lead[np.argmax(np.abs(lead))] > 0
    np.testing.assert_allclose(np.abs(lead), np.abs(v) / np.linalg.norm(v), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_combined_is_concatenation(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    s = a + a.T
    comb = variant_transform(s, "Combined")
    np.testing.assert_array_equal(comb, np.concatenate([variant_transform(s, "Matrix"),
                                                        variant_transform(s, "Eigen")]))
    assert comb.size == n * (n - 1) // 2 + 3 * n


# ---------------------------------------------------------------- assembly

def test_assemble_16_channel_length():
    fv = assemble(_noise(22, (16, 3000)), "BandPower", "CrossCorrTime", "Matrix")
    assert fv.values.size == 16 * 6 + 120 == len(fv.labels)


def test_assemble_layout_stable():
    a = assemble(_noise(23, (3, 3000)), "ArCoefficients", "MeanPhaseCoherence", "Combined")
    b = assemble(_noise(24, (3, 3000)), "ArCoefficients", "MeanPhaseCoherence", "Combined")
    assert a.labels == b.labels and a.values.shape == b.values.shape


def test_assemble_nan_names_feature_and_pair():
    seg = _noise(25, (3, 3000))
    seg[1, 10] = np.nan
    with pytest.raises(FeatureError, match=r"CrossCorrTime.*\(\d, \d\)|BandPower.*channel 1"):
        assemble(seg, "BandPower", "CrossCorrTime", "Matrix")
    with pytest.raises(FeatureError, match=r"CrossCorrTime: non-finite value for channel pair \(0, 1\)"):
        bivariate_matrix(seg, "CrossCorrTime")


def test_combo_catalog_size():
    assert len(COMBOS) == 48


def test_compute_blocks_match_assemble():
    segs = _noise(26, (3, 3, 3000))
    params = FeatureParams(ni_max_points=100)
    blocks = compute_blocks(segs, params)
    for uni, bi, var in [(UniFeatureKind.Moments, BiFeatureKind.CrossCorrFreq, MatrixVariant.Eigen),
                         (UniFeatureKind.ArPredictionError, BiFeatureKind.NonlinearInterdependence,
                          MatrixVariant.Combined)]:
        rows = combo_matrix(blocks, uni, bi, var)
        for i, s in enumerate(segs):
            np.testing.assert_allclose(rows[i], assemble(s, uni, bi, var, params).values, atol=1e-12)


def test_feature_store_roundtrip(tmp_path):
    vals = _noise(27, (5, 4))
    path = save_feature_table(tmp_path, "s", "train", vals, ["a", "b", "c", "d"],
                              {"uni": "BandPower", "bi": "CrossCorrTime", "variant": "Matrix"},
                              row_index=[(0, i) for i in range(5)])
    back, meta = load_feature_table(path)
    np.testing.assert_array_equal(back, vals)
    assert meta["labels"] == ["a", "b", "c", "d"]
    assert path.with_suffix(".csv").read_text().startswith("clip_id,segment_idx,a,b,c,d")
