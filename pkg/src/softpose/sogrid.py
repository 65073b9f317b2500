"""Discrete orientation output space built from an Euler-angle histogram."""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .rotcore import ArrayLike, as_quaternion, euler_to_quat, normalized_distance

logger = logging.getLogger(__name__)


def default_merge_tolerance(m_per_dim: int) -> float:
    """One fifth of the normalized one-dimensional bin step 2/M."""
    return 0.2 * (2.0 / m_per_dim)


@dataclass(frozen=True, eq=False)
class OrientationGrid:
    """Deduplicated canonical bin quaternions of an M×M×M Euler histogram."""

    bins: np.ndarray
    m_per_dim: int
    merge_tolerance: float

    def __len__(self) -> int:
        return len(self.bins)

    @property
    def n_bins(self) -> int:
        return len(self.bins)

    @property
    def provenance(self) -> Dict[str, Any]:
        return {"m_per_dim": self.m_per_dim, "merge_tolerance": self.merge_tolerance}

    @property
    def fingerprint(self) -> str:
        """MD5 of the bin values and provenance, used as the grid identity."""
        digest = hashlib.md5()
        digest.update(np.ascontiguousarray(self.bins, dtype="<f8").tobytes())
        digest.update(f"{self.m_per_dim}:{self.merge_tolerance!r}".encode())
        return digest.hexdigest()

    def summary(self) -> Dict[str, Any]:
        return {**self.provenance, "n_bins": self.n_bins, "fingerprint": self.fingerprint}

    def nearest_bin(self, q: ArrayLike) -> Tuple[int, float]:
        """Index and normalized distance of the closest bin (lowest index on ties).

        Raises:
            ValueError: if the grid has no bins
        """
        if self.n_bins == 0:
            raise ValueError("empty grid")
        distances = normalized_distance(self.bins, as_quaternion(q))
        index = int(np.argmin(distances))
        return index, float(distances[index])

    def nearest_bins(self, qs: ArrayLike, chunk: int = 512) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized nearest_bin over a stack of quaternions."""
        if self.n_bins == 0:
            raise ValueError("empty grid")
        qs = as_quaternion(qs).reshape(-1, 4)
        indices = np.empty(len(qs), dtype=int)
        distances = np.empty(len(qs))
        for start in range(0, len(qs), chunk):
            block = normalized_distance(qs[start:start + chunk, None, :], self.bins[None, :, :])
            indices[start:start + chunk] = np.argmin(block, axis=1)
            distances[start:start + chunk] = block[np.arange(len(block)), indices[start:start + chunk]]
        return indices, distances

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.bins, columns=["w", "x", "y", "z"])
        frame.insert(0, "index", np.arange(self.n_bins))
        return frame

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Dump one row per bin (index,w,x,y,z) with 17 significant digits."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


def bin_centers(m_per_dim: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Yaw, pitch and roll bin centers (k + ½ offsets)."""
    k = np.arange(m_per_dim) + 0.5
    yaw = -np.pi + k * 2.0 * np.pi / m_per_dim
    pitch = -np.pi / 2.0 + k * np.pi / m_per_dim
    return yaw, pitch, yaw.copy()


def build_grid(m_per_dim: int, merge_tolerance: Optional[float] = None) -> OrientationGrid:
    """
    Build the orientation grid from M³ Euler-angle combinations.

    Candidates are generated with yaw outermost and roll innermost, converted
    to canonical quaternions and scanned greedily: a candidate within
    ``merge_tolerance`` (normalized distance) of an already-kept bin is dropped.

    Args:
        m_per_dim: number of bins per Euler angle, at least 2
        merge_tolerance: merge threshold; defaults to 0.2 × (2/M)

    Returns:
        The immutable OrientationGrid
    """
    if m_per_dim < 2:
        raise ValueError("grid too coarse")
    if merge_tolerance is None:
        merge_tolerance = default_merge_tolerance(m_per_dim)
    if merge_tolerance < 0:
        raise ValueError("merge tolerance must be nonnegative")

    yaw, pitch, roll = bin_centers(m_per_dim)
    mesh = np.meshgrid(yaw, pitch, roll, indexing="ij")
    candidates = euler_to_quat(np.stack([axis.ravel() for axis in mesh], axis=-1))

    # d <= tol  <=>  |dot| >= cos(tol·π/2)
    min_dot = np.cos(min(merge_tolerance, 1.0) * np.pi / 2.0)
    kept = np.empty_like(candidates)
    n_kept = 0
    for candidate in candidates:
        if n_kept and np.max(np.abs(kept[:n_kept] @ candidate)) >= min_dot:
            continue
        kept[n_kept] = candidate
        n_kept += 1

    logger.debug(f"Grid M={m_per_dim}: kept {n_kept} of {len(candidates)} bins "
                 f"(merge tolerance {merge_tolerance:.4g})")
    bins = kept[:n_kept].copy()
    bins.setflags(write=False)
    return OrientationGrid(bins=bins, m_per_dim=m_per_dim, merge_tolerance=float(merge_tolerance))
