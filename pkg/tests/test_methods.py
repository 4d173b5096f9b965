import numpy as np
import pytest

from seizcoh.ensemble import Ensemble, member_seed
from seizcoh.features import BiFeatureKind, compute_blocks
from seizcoh.method1 import (
    FeatureCombo,
    Method1Spec,
    build_mlp,
    clip_auc,
    feature_search,
    read_chosen,
    train_ensemble,
    validation_split,
    write_chosen,
    write_search_report,
)
from seizcoh.method2 import Method2Spec, build_cnn, train_cnn_ensemble, write_segment_predictions
from seizcoh.nnet import Activation, BatchNorm, Dense, Network, TrainConfig, gradient_check
from seizcoh.recording import ClipLabel, ManifestEntry, segment_array, zscore
from seizcoh.synth import Signature, SynthConfig, generate

FAST = TrainConfig(learning_rate=1e-2, epochs=60)


def _gauss(seed, n=80, d=6, shift=1.5):
    rng = np.random.default_rng(seed)
    y = np.r_[np.zeros(n // 2), np.ones(n // 2)].astype(int)
    x = rng.standard_normal((n, d)) + shift * y[:, None]
    return x, y


# ---------------------------------------------------------------- method 1

def test_mlp_topology():
    stack = build_mlp(10)
    dense = [s for s in stack if isinstance(s, Dense)]
    assert [d.out_features for d in dense] == [16, 8, 4, 1]
    assert sum(isinstance(s, BatchNorm) for s in stack) == 3
    assert stack[-1] == Activation("sigmoid")


def test_ensemble_of_one_equals_member():
    x, y = _gauss(0)
    ens = train_ensemble(x, y, Method1Spec(train=FAST), size=1)
    np.testing.assert_array_equal(ens.predict(x), ens.members[0].predict((x - ens.mean) / ens.scale))


def test_ensemble_mean_bounded_and_order_invariant():
    x, y = _gauss(1)
    ens = train_ensemble(x, y, Method1Spec(train=FAST), size=4)
    per = ens.member_predictions(x)
    p = ens.predict(x)
    assert np.all(p >= per.min(0) - 1e-15) and np.all(p <= per.max(0) + 1e-15)
    rev = Ensemble(ens.members[::-1], ens.mean, ens.scale)
    np.testing.assert_allclose(rev.predict(x), p, rtol=0, atol=1e-15)


def test_ensemble_separable_features_auc():
    x, y = _gauss(2, n=160)
    xv, yv = _gauss(3, n=160)
    ens = train_ensemble(x, y, Method1Spec(train=FAST), size=5)
    assert clip_auc(ens.predict(xv), yv, np.arange(yv.size)) >= 0.95


def test_single_class_rejected():
    with pytest.raises(ValueError, match="single class"):
        train_ensemble(np.zeros((4, 2)), [1, 1, 1, 1])


def test_members_differ_only_in_seed():
    x, y = _gauss(4)
    ens = train_ensemble(x, y, Method1Spec(train=FAST), seed=7, size=2)
    assert [m.config.seed for m in ens.members] == [member_seed(7, 0), member_seed(7, 1)]
    assert ens.members[0].network.specs == ens.members[1].network.specs


def test_member_seeds_distinct():
    seeds = {member_seed(0, i) for i in range(200)}
    assert len(seeds) == 200


def _blocks(seed, n=40):
    rng = np.random.default_rng(seed)
    segs = rng.standard_normal((n, 2, 3000))
    y = np.r_[np.zeros(n // 2), np.ones(n // 2)].astype(int)
    segs[y == 1] *= 1.5
    return compute_blocks(segs, bi_kinds=[BiFeatureKind.CrossCorrTime]), y


def test_search_single_combo_wins():
    bt, y = _blocks(5)
    bv, yv = _blocks(6)
    spec = Method1Spec(search_epochs=20, search_learning_rate=1e-2)
    r = feature_search(bt, y, bv, yv, np.arange(yv.size), spec, combos=[("Moments", "CrossCorrTime", "Eigen")])
    assert len(r) == 1 and r[0].key == ("Moments", "CrossCorrTime", "Eigen")


def test_search_skips_failing_combo_and_ranks(caplog):
    bt, y = _blocks(7)
    bv, yv = _blocks(8)
    spec = Method1Spec(search_epochs=20, search_learning_rate=1e-2)
    combos = [(u, "CrossCorrTime", v) for u in ("BandPower", "Moments") for v in ("Matrix", "Eigen")]
    combos.append(("BandPower", "MeanPhaseCoherence", "Matrix"))  # block missing -> skipped
    r = feature_search(bt, y, bv, yv, np.arange(yv.size), spec, combos=combos)
    assert len(r) == 4
    aucs = [c.val_auc for c in r]
    assert aucs == sorted(aucs, reverse=True)
    assert "skipped" in caplog.text
    again = feature_search(bt, y, bv, yv, np.arange(yv.size), spec, combos=combos)
    assert [(c.key, c.val_auc) for c in again] == [(c.key, c.val_auc) for c in r]


def test_search_ties_follow_catalog_order():
    bt, y = _blocks(9)
    spec = Method1Spec(search_epochs=40, search_learning_rate=1e-2)
    combos = [("Moments", "CrossCorrTime", "Matrix"), ("BandPower", "CrossCorrTime", "Matrix")]
    r = feature_search(bt, y, bt, y, np.arange(y.size), spec, combos=combos)
    if r[0].val_auc == r[1].val_auc:
        assert r[0].uni.value == "BandPower"


def _bandpower_task(seed):
    """Segments with a pure 12-30 Hz power gain before the onset, z-scored per clip."""
    onset = 3.9 * 3600
    cfg = SynthConfig(seed=seed, n_channels=2, duration=4 * 3600, seizure_onsets=[onset],
                      preictal_signature=Signature(band_hz=(12.0, 30.0), power_gain=1.5,
                                                   phase_coupling=0.0, lead_time_s=3600))
    rec, _ = generate(cfg)

    def clips(t0, t1):
        return np.concatenate([segment_array(zscore(rec.data[:, int(a * 200):int((a + 600) * 200)]))
                               for a in np.arange(t0, t1, 600)])

    pre, inter = clips(onset - 3480, onset - 719), clips(0, 7200)
    rng = np.random.default_rng(seed)
    pi, ii = rng.permutation(len(pre)), rng.permutation(len(inter))
    xt = np.concatenate([inter[ii[:60]], pre[pi[:60]]])
    xv = np.concatenate([inter[ii[60:120]], pre[pi[60:120]]])
    return xt, xv, np.r_[np.zeros(60), np.ones(60)].astype(int)


def test_bandpower_signature_selects_bandpower():
    bi = [BiFeatureKind.CrossCorrTime, BiFeatureKind.CrossCorrFreq, BiFeatureKind.MeanPhaseCoherence]
    combos = [(u, b, "Matrix") for u in ("BandPower", "Moments", "ArCoefficients", "ArPredictionError")
              for b in bi]
    spec = Method1Spec(search_epochs=200, search_learning_rate=1e-2, search_ensemble=3)
    wins = 0
    for seed in range(10):
        xt, xv, y = _bandpower_task(seed)
        r = feature_search(compute_blocks(xt, bi_kinds=bi), y, compute_blocks(xv, bi_kinds=bi), y,
                           np.arange(y.size), spec, seed=seed, combos=combos)
        wins += r[0].uni.value == "BandPower"
    assert wins >= 8


def test_validation_split_chronological_per_class():
    entries = [ManifestEntry(i, "s", 600.0 * i, ClipLabel(int(i % 5 == 0)), "train") for i in range(40)]
    fit, val = validation_split(entries, 0.25)
    assert not set(fit) & set(val)
    assert sorted(fit + val) == list(range(40))
    for label in (0, 1):
        f = [i for i in fit if int(i % 5 == 0) == label]
        v = [i for i in val if int(i % 5 == 0) == label]
        assert v and f and max(f) < min(v)


def test_search_report_and_chosen(tmp_path):
    combos = [FeatureCombo.from_dict({"uni": "BandPower", "bi": "CrossCorrTime", "variant": "Matrix",
                                      "val_auc": 0.9}),
              FeatureCombo.from_dict({"uni": "Moments", "bi": "CrossCorrFreq", "variant": "Eigen",
                                      "val_auc": 0.7})]
    write_search_report(tmp_path / "s.csv", combos)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "uni,bi,variant,val_auc,rank"
    assert lines[1].endswith(",1") and lines[2].endswith(",2")
    write_chosen(tmp_path / "c.json", combos[0])
    assert read_chosen(tmp_path / "c.json") == combos[0]


def test_method1_spec_roundtrip():
    spec = Method1Spec(hidden=(8, 4), ensemble_size=3)
    assert Method1Spec.from_dict(spec.to_dict()) == spec
    assert Method1Spec.full().ensemble_size == 100


# ---------------------------------------------------------------- method 2

def _tiny_spec(**kw):
    base = dict(conv_blocks=((4, 5), (4, 4), (6, 3), (4, 3), (4, 2)), segment_samples=200,
                dense_width=8, ensemble_size=2, max_train_segments=None, dtype="float64",
                train=TrainConfig(learning_rate=0.05, epochs=2, batch_size=8))
    base.update(kw)
    return Method2Spec(**base)


def test_cnn_k16_full_montage_input():
    stack = build_cnn(16)
    net = Network(stack, (16, 3000), dtype=np.float32)
    p = net.forward(np.random.default_rng(0).standard_normal((1, 16, 3000)))
    assert p.shape == (1,) and 0 < p[0] < 1


def test_cnn_stack_constraints():
    stack = build_cnn(4, Method2Spec(batch_norm=False))
    from seizcoh.nnet import Conv1D, Dropout
    convs = [s for s in stack if isinstance(s, Conv1D)]
    assert all(2 <= c.kernel <= 5 for c in convs)
    widths = [c.out_maps for c in convs]
    assert widths[0] == 32 and max(widths) == 128 and widths[-1] == 32
    assert [d.p for d in stack if isinstance(d, Dropout)] == [0.2, 0.5]
    assert [d.out_features for d in stack if isinstance(d, Dense)] == [64, 1]


def test_cnn_k2_builds_and_zero_init_is_half():
    net = Network(build_cnn(2), (2, 3000), init="zeros", dtype=np.float32)
    np.testing.assert_array_equal(net.forward(np.zeros((2, 2, 3000))), 0.5)


def test_cnn_rejects_zero_channels():
    with pytest.raises(ValueError):
        build_cnn(0)


@pytest.mark.parametrize("bn", [True, False])
def test_cnn_gradient_check_width_reduced(bn):
    spec = _tiny_spec(batch_norm=bn, dropout_early=0.2, dropout_dense=0.5, segment_samples=120,
                      conv_blocks=((2, 5), (3, 4), (4, 3), (3, 3), (2, 2)), dense_width=3)
    rng = np.random.default_rng(11)
    x = rng.standard_normal((4, 2, 120))
    assert gradient_check(build_cnn(2, spec), x, np.array([1, 0, 1, 0]), seed=3, l2=1e-3) < 1e-3


def _cnn_data(seed=0, n=48):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2, 200))
    y = np.r_[np.zeros(n // 2), np.ones(n // 2)].astype(int)
    x[y == 1, :, ::4] += 1.0
    return x, y


def test_cnn_ensemble_mean_and_determinism():
    x, y = _cnn_data()
    a = train_cnn_ensemble(x, y, _tiny_spec(), seed=5)
    b = train_cnn_ensemble(x, y, _tiny_spec(), seed=5)
    pa, pb = a.member_predictions(x), b.member_predictions(x)
    np.testing.assert_array_equal(pa, pb)
    np.testing.assert_allclose(a.predict(x), pa.mean(0), atol=1e-15)
    assert abs(clip_auc(a.predict(x), y, np.arange(y.size)) - clip_auc(b.predict(x), y, np.arange(y.size))) <= 1e-12


def test_cnn_balanced_subset_per_member():
    x, y = _cnn_data(1, n=60)
    ens = train_cnn_ensemble(x, y, _tiny_spec(max_train_segments=20, ensemble_size=1))
    assert len(ens) == 1


def test_cnn_channel_order_matters():
    x, _ = _cnn_data(2)
    net = Network(build_cnn(2, _tiny_spec()), (2, 200))
    assert not np.array_equal(net.forward(x), net.forward(x[:, ::-1]))


def test_segment_prediction_dump(tmp_path):
    probs = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
    write_segment_predictions(tmp_path / "p.csv", [7, 7, 8], [0, 1, 0], probs)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "clip_id,segment_idx,model_idx,prob"
    assert lines[1:3] == ["7,0,0,0.1", "7,0,1,0.4"]
    assert len(lines) == 7


def test_ensemble_save_load(tmp_path):
    x, y = _gauss(12)
    ens = train_ensemble(x, y, Method1Spec(train=TrainConfig(learning_rate=1e-2, epochs=3)), size=2)
    ens.save(tmp_path / "e")
    back = Ensemble.load(tmp_path / "e")
    np.testing.assert_array_equal(back.predict(x), ens.predict(x))
