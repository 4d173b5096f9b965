"""Ensembles of independently seeded networks."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nnet import TrainedModel, load_model, save_model


def member_seed(master: int, index: int) -> int:
    """Seed of ensemble member ``index``, split from ``master`` via SeedSequence."""
    return int(np.random.SeedSequence(master, spawn_key=(index,)).generate_state(1, np.uint32)[0])


@dataclass
class Ensemble:
    members: list[TrainedModel]
    mean: np.ndarray | None = None
    scale: np.ndarray | None = None
    batch_size: int = 256
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.members)

    def _transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.mean is not None:
            x = (x - self.mean) / self.scale
        return x

    def member_predictions(self, x) -> np.ndarray:
        """(n_members, n_samples) member outputs."""
        x = self._transform(x)
        return np.stack([m.predict(x, self.batch_size) for m in self.members]).astype(np.float64)

    def predict(self, x) -> np.ndarray:
        return self.member_predictions(x).mean(axis=0)

    def save(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = [save_model(m, directory / f"member_{i:03d}.nnet") for i, m in enumerate(self.members)]
        extras = {"batch_size": np.array(self.batch_size)}
        if self.mean is not None:
            extras.update(mean=self.mean, scale=self.scale)
        np.savez(directory / "scaler.npz", **extras)
        return paths

    @classmethod
    def load(cls, directory) -> "Ensemble":
        directory = Path(directory)
        members = [load_model(p) for p in sorted(directory.glob("member_*.nnet"))]
        ex = np.load(directory / "scaler.npz")
        mean = ex["mean"] if "mean" in ex else None
        scale = ex["scale"] if "scale" in ex else None
        return cls(members, mean, scale, int(ex["batch_size"]))
