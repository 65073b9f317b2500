"""
Desk-scale orientation-ambiguity experiment.

A linear softmax head maps point-cloud features to bin activations and is
trained with soft cross-entropy. Features come from a body point set that is
invariant under an s-fold rotation about the body z-axis, so for s > 1 the
labels q and q·Rz(2π/s) produce the same input and the optimal output is
multimodal.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.special import softmax

from .losses import soft_cross_entropy_batch
from .metrics import angular_error_histogram
from .mixem import EMConfig, MixtureFitter
from .rotcore import ArrayLike, axis_angle, geodesic_angle, quat_to_matrix, sample_uniform
from .softcodec import KernelParams, SoftAssignment, decode, encode_batch
from .sogrid import OrientationGrid

logger = logging.getLogger(__name__)

# asymmetric unit points; none lies on the z-axis
BASE_POINTS = np.array([
    [1.0, 0.0, 0.5],
    [0.2, 1.0, -0.4],
    [-0.7, 0.4, 0.9],
    [0.5, -0.8, -0.6],
    [-0.3, -0.6, 0.2],
    [0.9, 0.7, -1.1],
])
BASE_POINTS = BASE_POINTS / np.linalg.norm(BASE_POINTS, axis=1, keepdims=True)


def body_points(symmetry: int) -> np.ndarray:
    """(n_orbits, s, 3) body points: orbits of base points under Rz(2π/s)."""
    if symmetry < 1:
        raise ValueError("symmetry order must be at least 1")
    n_orbits = math.ceil(len(BASE_POINTS) / symmetry)
    rotations = np.array([quat_to_matrix(axis_angle([0.0, 0.0, 1.0], 2.0 * math.pi * k / symmetry))
                          for k in range(symmetry)])
    return np.einsum("kij,pj->pki", rotations, BASE_POINTS[:n_orbits])


def features_for(qs: ArrayLike, symmetry: int) -> np.ndarray:
    """Camera-frame orbit points, each orbit sorted by camera x, flattened to (n, D)."""
    qs = np.asarray(qs, dtype=float).reshape(-1, 4)
    points = body_points(symmetry)
    camera = np.einsum("nij,pkj->npki", quat_to_matrix(qs), points)
    order = np.argsort(camera[..., 0], axis=2, kind="stable")
    camera = np.take_along_axis(camera, order[..., None], axis=2)
    return camera.reshape(len(qs), -1)


@dataclass(eq=False)
class ToyDataset:
    features: np.ndarray
    labels: np.ndarray
    symmetry: int
    grid_ref: str

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def make_toy_dataset(count: int, symmetry: int, grid: OrientationGrid, rng: np.random.Generator) -> ToyDataset:
    """``count`` uniform orientations and their features, one label each, tied to ``grid``."""
    if count < 1:
        raise ValueError("dataset needs at least one sample")
    labels = sample_uniform(rng, count)
    return ToyDataset(features_for(labels, symmetry), labels, symmetry, grid.fingerprint)


def _check_grid(dataset: ToyDataset, grid: OrientationGrid) -> None:
    if dataset.grid_ref != grid.fingerprint:
        raise ValueError(f"dataset was made for grid {dataset.grid_ref}, not {grid.fingerprint}")


@dataclass(eq=False)
class ToyHead:
    weights: np.ndarray
    bias: np.ndarray
    grid_ref: str
    loss_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ValueError("weights must be (N, D) and bias (N,)")

    @classmethod
    def zeros(cls, grid: OrientationGrid, dim: int) -> "ToyHead":
        return cls(np.zeros((grid.n_bins, dim)), np.zeros(grid.n_bins), grid.fingerprint)

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        if features.shape[-1] != self.weights.shape[1]:
            raise ValueError(f"feature dimension {features.shape[-1]} does not match head {self.weights.shape[1]}")
        return features @ self.weights.T + self.bias

    def predict(self, feature: ArrayLike) -> SoftAssignment:
        return SoftAssignment(softmax(self.logits(feature)), self.grid_ref)

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        return softmax(self.logits(features), axis=-1)


@dataclass(frozen=True)
class TrainConfig:
    """SGD with momentum over shuffled mini-batches whose gradients are summed."""

    epochs: int = 50
    lr: float = 0.05
    batch_size: int = 8
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("lr must be positive and momentum in [0, 1)")


def train(dataset: ToyDataset, grid: OrientationGrid, params: KernelParams,
          rng: np.random.Generator, config: TrainConfig = TrainConfig()) -> ToyHead:
    """
    Train a linear head on soft targets encode(label).

    Returns:
        The trained head; ``loss_history`` holds the mean loss before training
        followed by the mean loss of every epoch

    Raises:
        ValueError: when the loss becomes non-finite, naming the epoch, or
            when the dataset belongs to another grid
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    _check_grid(dataset, grid)
    targets = encode_batch(grid, dataset.labels, params)
    x = dataset.features
    head = ToyHead.zeros(grid, dataset.dim)
    initial, _ = soft_cross_entropy_batch(targets, head.logits(x))
    head.loss_history.append(initial / len(dataset))

    velocity_w = np.zeros_like(head.weights)
    velocity_b = np.zeros_like(head.bias)
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grad = soft_cross_entropy_batch(targets[batch], head.logits(x[batch]))
            if not math.isfinite(loss):
                logger.error(f"Training diverged at epoch {epoch}")
                raise ValueError(f"training diverged at epoch {epoch}")
            total += loss
            velocity_w = config.momentum * velocity_w - config.lr * (grad.T @ x[batch])
            velocity_b = config.momentum * velocity_b - config.lr * grad.sum(axis=0)
            head.weights += velocity_w
            head.bias += velocity_b
        head.loss_history.append(total / len(dataset))
        logger.debug(f"Epoch {epoch}: mean loss {head.loss_history[-1]:.6f}")

    logger.info(f"Trained toy head: loss {head.loss_history[0]:.4f} -> {head.loss_history[-1]:.4f}")
    return head


def top1_estimate(grid: OrientationGrid, activations: np.ndarray) -> np.ndarray:
    """Decoded activations; the strongest bin when the average is indeterminate."""
    try:
        return decode(grid, activations)
    except ValueError:
        return grid.bins[int(np.argmax(activations))]


def evaluate_head(head: ToyHead, dataset: ToyDataset, grid: OrientationGrid, params: KernelParams,
                  em_config: Optional[EMConfig] = None, limit: Optional[int] = None) -> Dict[str, np.ndarray]:
    """
    Top-1 and Top-2 geodesic errors in degrees.

    Top-1 decodes the full activation vector; Top-2 fits a two-component
    mixture and keeps the better of its means.
    """
    _check_grid(dataset, grid)
    fitter = MixtureFitter(grid, params, em_config)
    count = len(dataset) if limit is None else min(limit, len(dataset))
    activations = head.predict_batch(dataset.features[:count])
    top1 = np.empty(count)
    top2 = np.empty(count)
    for i in range(count):
        label = dataset.labels[i]
        top1[i] = geodesic_angle(top1_estimate(grid, activations[i]), label)
        model = fitter.fit_k(activations[i], 2)
        top2[i] = min(geodesic_angle(mean, label) for mean in model.hypotheses(2))
    return {"top1_deg": np.degrees(top1), "top2_deg": np.degrees(top2)}


def toy_report(errors: Dict[str, np.ndarray], head: ToyHead, bin_width_deg: float = 10.0) -> Dict[str, Any]:
    """Summary written by the ``traintoy`` command."""
    result: Dict[str, Any] = {
        "count": int(len(errors["top1_deg"])),
        "loss_initial": float(head.loss_history[0]),
        "loss_final": float(head.loss_history[-1]),
    }
    for key, name in (("top1_deg", "top1"), ("top2_deg", "top2")):
        values = errors[key]
        result[name] = {
            "median_deg": float(np.median(values)),
            "mean_deg": float(np.mean(values)),
            "histogram": angular_error_histogram(values, bin_width_deg),
        }
    return result
