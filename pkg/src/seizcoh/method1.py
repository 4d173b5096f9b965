"""Feature-based MLP ensemble and the feature-combination search."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .ensemble import Ensemble, member_seed
from .evaluation import roc_auc
from .features import COMBOS, BiFeatureKind, MatrixVariant, UniFeatureKind, combo_matrix
from .nnet import Activation, BatchNorm, Dense, TrainConfig, train

log = logging.getLogger(__name__)


@dataclass
class Method1Spec:
    hidden: tuple = (16, 8, 4)
    batch_norm: bool = True
    ensemble_size: int = 10
    search_ensemble: int = 1
    search_epochs: int | None = 50
    search_learning_rate: float | None = 1e-3
    validation: str = "split"  # "split" | "test"
    validation_fraction: float = 0.25
    predict_batch: int = 1024
    train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=1e-4, epochs=500))

    def __post_init__(self):
        if self.validation not in ("split", "test"):
            raise ValueError(f"validation must be 'split' or 'test', got {self.validation!r}")
        self.hidden = tuple(int(h) for h in self.hidden)

    @classmethod
    def full(cls) -> "Method1Spec":
        return cls(ensemble_size=100, search_ensemble=100, search_epochs=None, search_learning_rate=None)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


@dataclass(frozen=True)
class FeatureCombo:
    uni: UniFeatureKind
    bi: BiFeatureKind
    variant: MatrixVariant
    val_auc: float = float("nan")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.uni.value, self.bi.value, self.variant.value)

    @property
    def order(self) -> tuple[int, int, int]:
        """Position in the catalog; ties in validation AUC are broken by it."""
        return (list(UniFeatureKind).index(self.uni), list(BiFeatureKind).index(self.bi),
                list(MatrixVariant).index(self.variant))

    def to_dict(self):
        return {"uni": self.uni.value, "bi": self.bi.value, "variant": self.variant.value,
                "val_auc": self.val_auc}

    @classmethod
    def from_dict(cls, d):
        return cls(UniFeatureKind(d["uni"]), BiFeatureKind(d["bi"]), MatrixVariant(d["variant"]),
                   float(d.get("val_auc", "nan")))


def build_mlp(n_features: int, spec: Method1Spec = Method1Spec()) -> list:
    layers, width = [], n_features
    for h in spec.hidden:
        layers.append(Dense(width, h))
        if spec.batch_norm:
            layers.append(BatchNorm(h))
        layers.append(Activation("relu"))
        width = h
    return layers + [Dense(width, 1), Activation("sigmoid")]


def _scaler(x):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    return mean, np.where(scale > 0, scale, 1.0)


def train_ensemble(features, labels, spec: Method1Spec = Method1Spec(), seed: int = 0,
                   size: int | None = None, epochs: int | None = None,
                   learning_rate: float | None = None) -> Ensemble:
    """Fit ``size`` (default ``spec.ensemble_size``) MLPs differing only in seed.

    Features are standardized with training-set statistics; the scaler is
    stored with the ensemble.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if np.unique(y).size < 2:
        raise ValueError("training set contains a single class")
    mean, scale = _scaler(x)
    xs = (x - mean) / scale
    stack = build_mlp(x.shape[1], spec)
    n = spec.ensemble_size if size is None else size
    base = spec.train.to_dict()
    if epochs is not None:
        base["epochs"] = epochs
    if learning_rate is not None:
        base["learning_rate"] = learning_rate
    members = []
    for m in range(n):
        cfg = TrainConfig(**{**base, "seed": member_seed(seed, m)})
        members.append(train(stack, xs, y, cfg))
    return Ensemble(members, mean, scale, spec.predict_batch)


def clip_auc(probs, labels, clip_ids) -> float:
    """AUC of per-clip mean segment probabilities."""
    clip_ids = np.asarray(clip_ids)
    uniq, inv = np.unique(clip_ids, return_inverse=True)
    p = np.bincount(inv, weights=probs) / np.bincount(inv)
    y = np.zeros(uniq.size, dtype=int)
    y[inv] = np.asarray(labels).astype(int)
    return roc_auc(p, y)


def feature_search(train_blocks: dict, y_train, val_blocks: dict, y_val, val_clips,
                   spec: Method1Spec = Method1Spec(), seed: int = 0, combos=None) -> list[FeatureCombo]:
    """Rank feature combinations by clip-level validation AUC.

    Combos whose training fails are logged and skipped.  Ties in AUC keep
    lexicographic catalog order (uni, then bi, then variant, each in
    declaration order).
    """
    combos = COMBOS if combos is None else combos
    results = []
    for k, (uni, bi, variant) in enumerate(combos):
        uni, bi, variant = UniFeatureKind(uni), BiFeatureKind(bi), MatrixVariant(variant)
        try:
            ens = train_ensemble(combo_matrix(train_blocks, uni, bi, variant), y_train, spec,
                                 seed=member_seed(seed, k), size=spec.search_ensemble,
                                 epochs=spec.search_epochs, learning_rate=spec.search_learning_rate)
            auc = clip_auc(ens.predict(combo_matrix(val_blocks, uni, bi, variant)), y_val, val_clips)
        except (ValueError, FloatingPointError, KeyError) as exc:
            log.warning("combo %s/%s/%s skipped: %s", uni.value, bi.value, variant.value, exc)
            continue
        log.info("combo %s/%s/%s: validation AUC %.4f", uni.value, bi.value, variant.value, auc)
        results.append(FeatureCombo(uni, bi, variant, auc))
    results.sort(key=lambda r: (-r.val_auc, r.order))
    return results


def validation_split(manifest_entries, fraction: float = 0.25):
    """Chronologically last ``fraction`` of training clips of each class.

    Returns ``(fit_ids, val_ids)``; every class keeps at least one clip on
    each side when it has two or more.
    """
    fit, val = [], []
    for label in sorted({int(e.label) for e in manifest_entries}):
        ids = [e.clip_id for e in sorted(manifest_entries, key=lambda e: e.start_time) if int(e.label) == label]
        n_val = int(np.ceil(fraction * len(ids)))
        if len(ids) >= 2:
            n_val = min(max(n_val, 1), len(ids) - 1)
        fit += ids[:len(ids) - n_val]
        val += ids[len(ids) - n_val:]
    return sorted(fit), sorted(val)


def write_search_report(path, ranked: list[FeatureCombo]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["uni", "bi", "variant", "val_auc", "rank"])
        for r, c in enumerate(ranked, 1):
            w.writerow([*c.key, repr(c.val_auc), r])


def write_chosen(path, combo: FeatureCombo):
    with open(path, "w") as fh:
        json.dump(combo.to_dict(), fh, indent=1)


def read_chosen(path) -> FeatureCombo:
    with open(path) as fh:
        return FeatureCombo.from_dict(json.load(fh))
