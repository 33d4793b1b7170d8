"""Training one model on one split: plain mini-batch SGD/Adam or DP-SGD.

The DP path clips every per-example gradient to an L2 norm bound, sums,
adds Gaussian noise with per-coordinate standard deviation
noise_multiplier * clip_norm, and divides by the batch size. No privacy
accounting is performed; the noise multiplier is the configuration
surface (see NOISE_PRESETS for illustrative budget stand-ins).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import ShapeError
from .nn import (
    ArchDescriptor,
    Params,
    adam_step,
    forward_batch,
    init_adam,
    init_params,
    param_gradient,
    per_example_grad_vectors,
)
from .rng import substream

# Illustrative noise multipliers standing in for loose / strict DP budgets
# (think eps=100 and eps=10 at delta=1e-5); no accountant backs these.
NOISE_PRESETS = {"loose": 0.5, "strict": 2.0}

OPTIMIZERS = ("sgd", "adam")

# How many times dp_step verified its post-clip norm bound (test hook).
clip_checks = 0


@dataclass(frozen=True)
class DpConfig:
    clip_norm: float
    noise_multiplier: float

    def __post_init__(self):
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")

    def to_dict(self) -> dict:
        return {"clip_norm": self.clip_norm, "noise_multiplier": self.noise_multiplier}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.01
    optimizer: str = "adam"
    seed: int = 0
    dp: DpConfig | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        d = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "optimizer": self.optimizer,
            "seed": self.seed,
        }
        d["dp"] = None if self.dp is None else self.dp.to_dict()
        return d

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        dp = d.get("dp")
        return TrainConfig(
            epochs=int(d.get("epochs", 40)),
            batch_size=int(d.get("batch_size", 32)),
            lr=float(d.get("lr", 0.01)),
            optimizer=str(d.get("optimizer", "adam")),
            seed=int(d.get("seed", 0)),
            dp=None if dp is None else DpConfig(float(dp["clip_norm"]), float(dp["noise_multiplier"])),
        )


class ModelRecord:
    """A trained model: architecture, parameters, seed, split row.

    Immutable after construction (parameter arrays are frozen). Reads of
    the .params property are counted so attack-isolation properties can
    be asserted; code that legitimately owns the record (serialization,
    the oracle's internal evaluation) uses ._params directly.
    """

    __slots__ = ("arch", "seed", "split_row", "_params", "access_count")

    def __init__(self, arch: ArchDescriptor, seed: int, split_row: int, params: Params):
        self.arch = arch
        self.seed = int(seed)
        self.split_row = int(split_row)
        for arr in (*params.weights, *params.biases):
            arr.flags.writeable = False
        self._params = params
        self.access_count = 0

    @property
    def params(self) -> Params:
        self.access_count += 1
        return self._params

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelRecord):
            return NotImplemented
        return (
            self.arch == other.arch
            and self.seed == other.seed
            and self.split_row == other.split_row
            and self._params == other._params
        )


def make_even_splits(n_points: int, n_models: int, seed: int) -> np.ndarray:
    """Boolean (n_models, n_points) mask; each row a uniform floor(N/2)-subset."""
    if n_points < 2:
        raise ValueError("need at least 2 points to split")
    if n_models < 1:
        raise ValueError("need at least one model")
    rng = np.random.default_rng(seed)
    half = n_points // 2
    splits = np.zeros((n_models, n_points), dtype=bool)
    for row in range(n_models):
        splits[row, rng.permutation(n_points)[:half]] = True
    return splits


def clip_per_example(gradient: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale gradients down to L2 norm clip_norm; shorter ones pass through.

    Accepts a single gradient vector or a (B, P) batch of per-example rows.
    """
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    g = np.asarray(gradient, dtype=np.float64)
    if g.ndim == 1:
        nrm = float(np.linalg.norm(g))
        return g * (clip_norm / nrm) if nrm > clip_norm else g.copy()
    norms = np.sqrt(np.einsum("ij,ij->i", g, g))
    factors = np.ones_like(norms)
    over = norms > clip_norm
    factors[over] = clip_norm / norms[over]
    return g * factors[:, None]


def dp_step(
    per_example_grads: np.ndarray,
    clip_norm: float,
    noise_multiplier: float,
    batch_size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Clip each per-example gradient, sum, add Gaussian noise, average."""
    if noise_multiplier < 0:
        raise ValueError("noise_multiplier must be non-negative")
    g = np.atleast_2d(np.asarray(per_example_grads, dtype=np.float64))
    clipped = clip_per_example(g, clip_norm)
    norms = np.sqrt(np.einsum("ij,ij->i", clipped, clipped))
    # post-clip contract; the 1e-9 slack absorbs float rounding only
    if np.any(norms > clip_norm * (1.0 + 1e-9)):
        raise AssertionError(
            f"post-clip norm {norms.max():.17g} exceeds bound {clip_norm}"
        )
    global clip_checks
    clip_checks += 1
    total = clipped.sum(axis=0)
    if noise_multiplier > 0:
        total = total + rng.normal(0.0, noise_multiplier * clip_norm, size=total.shape)
    return total / batch_size


def evaluate_accuracy(arch: ArchDescriptor, params: Params, X: np.ndarray, y: np.ndarray) -> float:
    logits = forward_batch(arch, params, X)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))


def record_accuracy(record: ModelRecord, dataset: Dataset, indices: np.ndarray) -> float:
    """Builder-side accuracy on a subset; does not touch the access counter."""
    X, y = dataset.features[indices], dataset.labels[indices]
    return evaluate_accuracy(record.arch, record._params, X, y)


def train_model(
    dataset: Dataset, mask: np.ndarray, arch: ArchDescriptor, config: TrainConfig
) -> ModelRecord:
    """Train on exactly the masked-in points; deterministic per config.seed."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (dataset.n,):
        raise ShapeError(f"mask length {mask.shape} does not match dataset size {dataset.n}")
    train_idx = np.flatnonzero(mask)
    if train_idx.size == 0:
        raise ValueError("empty training set")
    X, y = dataset.take(train_idx)

    params = init_params(arch, substream(config.seed, 0))
    theta = params.to_vector()
    adam = init_adam(theta.shape) if config.optimizer == "adam" else None
    n = train_idx.size
    for epoch in range(config.epochs):
        order = substream(config.seed, 1, epoch).permutation(n)
        noise_rng = substream(config.seed, 2, epoch) if config.dp is not None else None
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            Xb, yb = X[batch], y[batch]
            if config.dp is not None:
                per_ex = per_example_grad_vectors(arch, params, Xb, yb)
                grad = dp_step(
                    per_ex, config.dp.clip_norm, config.dp.noise_multiplier,
                    batch.size, noise_rng,
                )
            else:
                grad = param_gradient(arch, params, Xb, yb).to_vector()
            if adam is not None:
                theta, adam = adam_step(adam, theta, grad, config.lr)
            else:
                theta = theta - config.lr * grad
            params = Params.from_vector(arch, theta)
    if not params.all_finite():
        raise ValueError("training diverged: non-finite parameters")
    return ModelRecord(arch, config.seed, split_row=-1, params=params)


def retrain_config(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
