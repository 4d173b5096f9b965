"""Raw-signal 1-D CNN classifier and its ensemble."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .ensemble import Ensemble, member_seed
from .nnet import (
    Activation,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    MaxPool1D,
    Network,
    TrainConfig,
    train,
)

log = logging.getLogger(__name__)

# (out_maps, kernel) per convolution block; the first block is followed by dropout
CONV_BLOCKS = ((32, 5), (64, 4), (128, 3), (64, 3), (32, 2))


@dataclass
class Method2Spec:
    conv_blocks: tuple = CONV_BLOCKS
    pool: int = 2
    dense_width: int = 64
    dropout_early: float = 0.2
    dropout_dense: float = 0.5
    batch_norm: bool = True
    segment_samples: int = 3000
    ensemble_size: int = 3
    max_train_segments: int | None = 1200
    predict_batch: int = 128
    dtype: str = "float32"
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        learning_rate=0.05, epochs=4, batch_size=32, l1=1e-6, l2=1e-4))

    @classmethod
    def full(cls) -> "Method2Spec":
        """Full-scale settings: 20 members, every training segment."""
        return cls(ensemble_size=20, max_train_segments=None)

    def to_dict(self):
        d = asdict(self)
        d["conv_blocks"] = [list(b) for b in self.conv_blocks]
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "conv_blocks" in d:
            d["conv_blocks"] = tuple(tuple(b) for b in d["conv_blocks"])
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)


def build_cnn(k: int, spec: Method2Spec = Method2Spec()) -> list:
    """Layer stack for ``k``-channel segments of ``spec.segment_samples`` samples."""
    if k < 1:
        raise ValueError("need at least one input channel")
    layers = []
    maps, t = k, spec.segment_samples
    for i, (out, kernel) in enumerate(spec.conv_blocks):
        layers.append(Conv1D(maps, out, kernel))
        if spec.batch_norm:
            layers.append(BatchNorm(out))
        layers += [Activation("relu"), MaxPool1D(spec.pool)]
        if i == 0 and spec.dropout_early:
            layers.append(Dropout(spec.dropout_early))
        maps, t = out, (t - kernel + 1) // spec.pool
    layers += [Flatten(), Dense(maps * t, spec.dense_width)]
    if spec.batch_norm:
        layers.append(BatchNorm(spec.dense_width))
    layers.append(Activation("relu"))
    if spec.dropout_dense:
        layers.append(Dropout(spec.dropout_dense))
    layers += [Dense(spec.dense_width, 1), Activation("sigmoid")]
    return layers


def _balanced_subset(labels, limit, rng):
    if limit is None or labels.size <= limit:
        return np.arange(labels.size)
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(pos.size, limit // 2)
    n_neg = min(neg.size, limit - n_pos)
    n_pos = min(pos.size, limit - n_neg)
    keep = np.concatenate([rng.choice(pos, n_pos, replace=False), rng.choice(neg, n_neg, replace=False)])
    return np.sort(keep)


def train_cnn_ensemble(segments, labels, spec: Method2Spec = Method2Spec(), seed: int = 0) -> Ensemble:
    """Train ``spec.ensemble_size`` CNNs on ``(n, k, samples)`` segments.

    When ``spec.max_train_segments`` is set, each member sees its own
    class-balanced subset of that size.
    """
    x = np.asarray(segments)
    y = np.asarray(labels).astype(int)
    if np.unique(y).size < 2:
        raise ValueError("training set contains a single class")
    k = x.shape[1]
    stack = build_cnn(k, spec)
    members = []
    for m in range(spec.ensemble_size):
        s = member_seed(seed, m)
        rng = np.random.Generator(np.random.PCG64(s))
        keep = _balanced_subset(y, spec.max_train_segments, rng)
        cfg = TrainConfig(**{**spec.train.to_dict(), "seed": s})
        xs = x[keep].astype(spec.dtype, copy=False)
        net = Network(stack, (k, spec.segment_samples), seed=s, dtype=spec.dtype)
        model = train(stack, xs, y[keep], cfg, network=net)
        log.info("cnn member %d/%d: final loss %.4f", m + 1, spec.ensemble_size,
                 model.history["loss"][-1])
        members.append(model)
    return Ensemble(members, batch_size=spec.predict_batch)


def write_segment_predictions(path, clip_ids, segment_idx, member_probs):
    """``clip_id,segment_idx,model_idx,prob`` rows; ``member_probs`` is (models, segments)."""
    member_probs = np.asarray(member_probs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "segment_idx", "model_idx", "prob"])
        for j in range(member_probs.shape[1]):
            for m in range(member_probs.shape[0]):
                w.writerow([int(clip_ids[j]), int(segment_idx[j]), m, repr(float(member_probs[m, j]))])
