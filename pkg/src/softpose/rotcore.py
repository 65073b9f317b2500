"""Quaternion and rotation geometry primitives.

Quaternions are numpy arrays in (w, x, y, z) order. Every function accepts a
single quaternion of shape (4,) or a stack of shape (..., 4) and broadcasts.
"""

import logging
import warnings
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

logger = logging.getLogger(__name__)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

ArrayLike = Union[np.ndarray, list, tuple]


class EulerAngles(NamedTuple):
    """Intrinsic Z-Y-X angles in radians (fields may hold arrays)."""

    yaw: float
    pitch: float
    roll: float


def as_quaternion(q: ArrayLike) -> np.ndarray:
    """Return q as a float array whose last axis has length 4."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1:] != (4,):
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    return q


def hemisphere(q: ArrayLike) -> np.ndarray:
    """Flip the sign of q so that its first nonzero component is positive.

    Only the sign changes; the norm is left untouched.
    """
    q = as_quaternion(q)
    first = np.argmax(q != 0, axis=-1)
    lead = np.take_along_axis(q, np.expand_dims(first, -1), axis=-1)
    return np.where(lead < 0, -q, q)


def canonicalize(q: ArrayLike) -> np.ndarray:
    """Normalize q and move it to the canonical hemisphere.

    Canonical means w > 0, or w == 0 and the first nonzero of (x, y, z) > 0.

    Raises:
        ValueError: if any quaternion has zero (or non-finite) norm
    """
    q = as_quaternion(q)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(~np.isfinite(norm)) or np.any(norm == 0):
        raise ValueError("degenerate quaternion")
    return hemisphere(q / norm)


def _abs_dot(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    dot = np.abs(np.sum(as_quaternion(a) * as_quaternion(b), axis=-1))
    return np.clip(dot, 0.0, 1.0)


def normalized_distance(a: ArrayLike, b: ArrayLike) -> Union[float, np.ndarray]:
    """Normalized angular difference 2·arccos(|aᵀb|)/π, in [0, 1]."""
    return 2.0 * np.arccos(_abs_dot(a, b)) / np.pi


def geodesic_angle(a: ArrayLike, b: ArrayLike) -> Union[float, np.ndarray]:
    """Rotation angle of the relative rotation between a and b, in [0, π]."""
    return 2.0 * np.arccos(_abs_dot(a, b))


def conjugate(q: ArrayLike) -> np.ndarray:
    q = as_quaternion(q)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def multiply(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Hamilton product a ⊗ b (no canonicalization)."""
    a = as_quaternion(a)
    b = as_quaternion(b)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def compose(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Rotation a applied after b, canonicalized."""
    return canonicalize(multiply(a, b))


def quat_to_matrix(q: ArrayLike) -> np.ndarray:
    """Rotation matrix (..., 3, 3) of a unit quaternion."""
    w, x, y, z = np.moveaxis(as_quaternion(q), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def _from_scipy(rotation: Rotation) -> np.ndarray:
    xyzw = rotation.as_quat()
    return canonicalize(np.roll(xyzw, 1, axis=-1))


def _to_scipy(q: ArrayLike) -> Rotation:
    return Rotation.from_quat(np.roll(as_quaternion(q), -1, axis=-1))


def matrix_to_quat(matrix: ArrayLike) -> np.ndarray:
    """Canonical quaternion of a rotation matrix (or a stack of them)."""
    return _from_scipy(Rotation.from_matrix(np.asarray(matrix, dtype=float)))


def rotate_vec(q: ArrayLike, v: ArrayLike) -> np.ndarray:
    """Rotate 3-vector(s) v by q, equal to R(q)·v."""
    return np.einsum("...ij,...j->...i", quat_to_matrix(q), np.asarray(v, dtype=float))


def axis_angle(axis: ArrayLike, angle: float) -> np.ndarray:
    """Quaternion rotating by ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    return canonicalize(np.concatenate([[np.cos(half)], np.sin(half) * axis / norm]))


def from_rotvec(rotvec: ArrayLike) -> np.ndarray:
    """Quaternion of a rotation vector (axis times angle)."""
    return _from_scipy(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)))


def euler_to_quat(e: Union[EulerAngles, ArrayLike]) -> np.ndarray:
    """Quaternion of intrinsic Z-Y-X (yaw, pitch, roll) angles.

    Accepts an EulerAngles tuple or an array whose last axis is (yaw, pitch, roll).
    """
    angles = np.stack([np.asarray(a, dtype=float) for a in e], axis=-1) if isinstance(e, EulerAngles) \
        else np.asarray(e, dtype=float)
    return _from_scipy(Rotation.from_euler("ZYX", angles))


def _wrap(angle: np.ndarray) -> np.ndarray:
    return np.where(angle >= np.pi, angle - 2.0 * np.pi, angle)


def quat_to_euler(q: ArrayLike) -> EulerAngles:
    """Intrinsic Z-Y-X angles of q; yaw and roll in [-π, π), pitch in [-π/2, π/2].

    At |pitch| = π/2 the decomposition is not unique and the representative
    with roll = 0 is returned.
    """
    with warnings.catch_warnings():
        # scipy warns about gimbal lock and already zeroes the third angle
        warnings.simplefilter("ignore", UserWarning)
        angles = _to_scipy(q).as_euler("ZYX")
    yaw, pitch, roll = np.moveaxis(angles, -1, 0)
    return EulerAngles(_wrap(yaw), pitch, _wrap(roll))


def sample_uniform(rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw uniformly distributed rotations by normalizing Gaussian 4-vectors.

    Args:
        rng: seeded random generator (never the global numpy state)
        size: number of quaternions, or None for a single (4,) quaternion

    Returns:
        Canonical unit quaternion(s)
    """
    shape = (4,) if size is None else (size, 4)
    return canonicalize(rng.standard_normal(shape))
