"""Soft-assignment encoding of orientation labels and weighted quaternion decoding."""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from .rotcore import ArrayLike, as_quaternion, canonicalize, normalized_distance
from .sogrid import OrientationGrid

logger = logging.getLogger(__name__)

# top-two eigenvalue gap below which the average is ambiguous
EIGEN_GAP = 1e-12


@dataclass(frozen=True)
class KernelParams:
    """Smoothing factor Δ and bins per dimension M of the encoding kernel."""

    delta: float = 6.0
    m_per_dim: int = 16

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("smoothing factor delta must be positive")
        if self.m_per_dim < 1:
            raise ValueError("m_per_dim must be positive")

    @property
    def sigma_sq(self) -> float:
        """Quantization-error variance (Δ/M)²/12."""
        return (self.delta / self.m_per_dim) ** 2 / 12.0

    @classmethod
    def for_grid(cls, grid: OrientationGrid, delta: float = 6.0) -> "KernelParams":
        return cls(delta=delta, m_per_dim=grid.m_per_dim)


@dataclass(eq=False)
class SoftAssignment:
    """Nonnegative vector over the bins of one grid, summing to 1."""

    values: np.ndarray
    grid_ref: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("soft assignment must be a 1-D vector")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("soft assignment values must be finite and nonnegative")
        total = self.values.sum()
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"soft assignment must sum to 1, got {total:.9g}")

    def __len__(self) -> int:
        return len(self.values)

    def check_grid(self, grid: OrientationGrid) -> None:
        if len(self.values) != grid.n_bins:
            raise ValueError(f"soft assignment has {len(self.values)} values, grid has {grid.n_bins} bins")

    def to_dict(self) -> Dict[str, Any]:
        return {"grid": self.grid_ref, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SoftAssignment":
        if "values" not in data:
            raise ValueError("activation JSON needs a 'values' list")
        return cls(np.asarray(data["values"], dtype=float), str(data.get("grid", "")))


def kernel(x: ArrayLike, y: ArrayLike, sigma_sq: float) -> Union[float, np.ndarray]:
    """Gaussian kernel exp(-d²/(2σ²)) on the normalized angular difference."""
    if sigma_sq <= 0:
        raise ValueError("kernel variance must be positive")
    d = normalized_distance(x, y)
    return np.exp(-(d ** 2) / (2.0 * sigma_sq))


def _encode_values(bins: np.ndarray, q_gt: np.ndarray, sigma_sq: float) -> np.ndarray:
    # softmax of the log-kernel; same as K/ΣK but never 0/0 for tiny σ²
    d = normalized_distance(bins, q_gt)
    return softmax(-(d ** 2) / (2.0 * sigma_sq), axis=-1)


def encode(grid: OrientationGrid, q_gt: ArrayLike, params: KernelParams) -> SoftAssignment:
    """Encode a label quaternion as kernel affinities to every bin, normalized to 1."""
    q_gt = canonicalize(q_gt)
    return SoftAssignment(_encode_values(grid.bins, q_gt, params.sigma_sq), grid.fingerprint)


def encode_batch(grid: OrientationGrid, labels: ArrayLike, params: KernelParams,
                 chunk: int = 256) -> np.ndarray:
    """Encodings of a stack of labels as an (n, N) array."""
    labels = canonicalize(as_quaternion(labels).reshape(-1, 4))
    out = np.empty((len(labels), grid.n_bins))
    for start in range(0, len(labels), chunk):
        block = labels[start:start + chunk]
        out[start:start + chunk] = _encode_values(grid.bins[None, :, :], block[:, None, :], params.sigma_sq)
    return out


def encode_multi(grid: OrientationGrid, labels: Sequence[Tuple[ArrayLike, float]],
                 params: KernelParams) -> SoftAssignment:
    """Weighted average of per-label encodings, renormalized.

    Args:
        labels: (quaternion, weight) pairs; weights nonnegative with positive sum
    """
    if len(labels) == 0:
        raise ValueError("empty label list")
    weights = np.array([float(w) for _, w in labels])
    if np.any(weights < 0):
        raise ValueError("label weights must be nonnegative")
    if weights.sum() <= 0:
        raise ValueError("label weights must have a positive sum")
    values = np.zeros(grid.n_bins)
    for (q, _), weight in zip(labels, weights):
        if weight > 0:
            values += weight * _encode_values(grid.bins, canonicalize(q), params.sigma_sq)
    return SoftAssignment(values / values.sum(), grid.fingerprint)


def average_quaternions(qs: ArrayLike, weights: Optional[ArrayLike] = None) -> np.ndarray:
    """
    Weighted quaternion average: the maximum-eigenvalue eigenvector of Σ w_i q_i q_iᵀ.

    The result maximizes Σ w_i (q_iᵀq)² and is invariant to the sign of each q_i
    and to scaling of the weights.

    Args:
        qs: (n, 4) quaternions
        weights: n nonnegative weights (uniform when omitted)

    Returns:
        Canonical unit quaternion

    Raises:
        ValueError: on empty input, invalid weights, or when the top two
            eigenvalues are closer than 1e-12 ("indeterminate average")
    """
    qs = as_quaternion(qs).reshape(-1, 4)
    if len(qs) == 0:
        raise ValueError("no quaternions to average")
    weights = np.ones(len(qs)) if weights is None else np.asarray(weights, dtype=float).ravel()
    if len(weights) != len(qs):
        raise ValueError(f"got {len(weights)} weights for {len(qs)} quaternions")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and nonnegative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("at least one weight must be positive")

    matrix = (qs * (weights / total)[:, None]).T @ qs
    eigenvalues, eigenvectors = np.linalg.eigh(matrix)
    if eigenvalues[-1] - eigenvalues[-2] < EIGEN_GAP:
        raise ValueError("indeterminate average")
    return canonicalize(eigenvectors[:, -1])


def decode(grid: OrientationGrid, activations: Union[SoftAssignment, ArrayLike]) -> np.ndarray:
    """Decode bin activations to one quaternion by weighted averaging of the bins.

    Activations are used as given; a positive rescaling does not change the result.
    """
    values = activations.values if isinstance(activations, SoftAssignment) else np.asarray(activations, dtype=float)
    if len(values) != grid.n_bins:
        raise ValueError(f"got {len(values)} activations for {grid.n_bins} bins")
    return average_quaternions(grid.bins, values)


def soft_assignment_from_logits(logits: ArrayLike, grid: OrientationGrid) -> SoftAssignment:
    """Softmax of raw network outputs, the form decode and the EM fit expect."""
    logits = np.asarray(logits, dtype=float)
    if len(logits) != grid.n_bins:
        raise ValueError(f"got {len(logits)} logits for {grid.n_bins} bins")
    return SoftAssignment(softmax(logits), grid.fingerprint)


class SoftCodec:
    """Encoder/decoder pair bound to one grid and one kernel."""

    def __init__(self, grid: OrientationGrid, params: KernelParams):
        if params.m_per_dim != grid.m_per_dim:
            logger.warning(f"Kernel M={params.m_per_dim} differs from grid M={grid.m_per_dim}")
        self.grid = grid
        self.params = params

    def encode(self, q_gt: ArrayLike) -> SoftAssignment:
        return encode(self.grid, q_gt, self.params)

    def encode_multi(self, labels: Sequence[Tuple[ArrayLike, float]]) -> SoftAssignment:
        return encode_multi(self.grid, labels, self.params)

    def decode(self, activations: Union[SoftAssignment, ArrayLike]) -> np.ndarray:
        if isinstance(activations, SoftAssignment):
            activations.check_grid(self.grid)
        return decode(self.grid, activations)

    def decode_logits(self, logits: ArrayLike) -> np.ndarray:
        return self.decode(soft_assignment_from_logits(logits, self.grid))
