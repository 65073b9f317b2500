"""Pose losses: relative translation error, orientation regression losses,
soft cross-entropy and closed-form pose recovery from three virtual keypoints."""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from .rotcore import ArrayLike, as_quaternion, canonicalize, matrix_to_quat, quat_to_matrix
from .softcodec import SoftAssignment

logger = logging.getLogger(__name__)

# keeps arccos away from its infinite derivative at 1
ALPHA_CLAMP = 1.0 - 1e-7
CE_EPS = 1e-12


@dataclass(eq=False)
class PoseSample:
    """Object pose in the camera frame: q maps body to camera, t in meters."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.q = canonicalize(self.q)
        self.t = np.asarray(self.t, dtype=float)
        if self.t.shape != (3,):
            raise ValueError(f"translation must have 3 components, got shape {self.t.shape}")

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def range_m(self) -> float:
        return float(np.linalg.norm(self.t))


@dataclass(frozen=True)
class LossWeights:
    """Weights β1 (translation) and β2 (orientation) of the total loss."""

    beta1: float = 1.0
    beta2: float = 1.0

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.beta1 == 0 and self.beta2 == 0:
            raise ValueError("loss weights cannot both be zero")


def _relative_errors(batch: Iterable[Tuple[ArrayLike, ArrayLike]]) -> np.ndarray:
    errors = []
    for t, t_gt in batch:
        t, t_gt = np.asarray(t, dtype=float), np.asarray(t_gt, dtype=float)
        range_gt = np.linalg.norm(t_gt)
        if range_gt == 0:
            raise ValueError("undefined relative error")
        errors.append(np.linalg.norm(t - t_gt) / range_gt)
    return np.asarray(errors)


def loss_translation_rel(batch: Iterable[Tuple[ArrayLike, ArrayLike]]) -> float:
    """Σ_i ‖t_i − t_gt,i‖ / ‖t_gt,i‖ over the batch (a sum, not a mean)."""
    return math.fsum(_relative_errors(batch))


def mean_translation_rel(batch: Iterable[Tuple[ArrayLike, ArrayLike]]) -> float:
    errors = _relative_errors(batch)
    if len(errors) == 0:
        raise ValueError("empty batch")
    return math.fsum(errors) / len(errors)


def _abs_dot(q: ArrayLike, q_gt: ArrayLike) -> np.ndarray:
    return np.abs(np.sum(as_quaternion(q) * as_quaternion(q_gt), axis=-1))


def loss_alpha(q: ArrayLike, q_gt: ArrayLike) -> Union[float, np.ndarray]:
    """arccos(|qᵀq_gt|), with |qᵀq_gt| clamped to 1 − 1e-7."""
    return np.arccos(np.minimum(_abs_dot(q, q_gt), ALPHA_CLAMP))


def loss_cos_alpha(q: ArrayLike, q_gt: ArrayLike) -> Union[float, np.ndarray]:
    """1 − |qᵀq_gt|."""
    return 1.0 - np.minimum(_abs_dot(q, q_gt), 1.0)


def mean_alpha(qs: ArrayLike, qs_gt: ArrayLike) -> float:
    return float(np.mean(loss_alpha(qs, qs_gt)))


def loss_total(batch: Sequence[Tuple[ArrayLike, ArrayLike]], ori_loss: float, w: LossWeights = LossWeights()) -> float:
    """β1 · relative translation loss + β2 · orientation loss."""
    translation = loss_translation_rel(batch) if w.beta1 else 0.0
    return w.beta1 * translation + w.beta2 * ori_loss


def soft_cross_entropy_batch(targets: np.ndarray, logits: np.ndarray) -> Tuple[float, np.ndarray]:
    """Summed soft cross-entropy of (B, N) targets and logits, with its gradient."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    if targets.shape != logits.shape:
        raise ValueError(f"targets {targets.shape} and logits {logits.shape} differ in shape")
    p = softmax(logits, axis=1)
    loss = -float(np.sum(targets * np.log(p + CE_EPS)))
    return loss, p - targets


def soft_cross_entropy(target: SoftAssignment, logits: ArrayLike) -> Tuple[float, np.ndarray]:
    """
    Cross-entropy between a soft target and softmax(logits).

    Returns:
        (loss, gradient of the loss with respect to the logits)
    """
    values = target.values if isinstance(target, SoftAssignment) else np.asarray(target, dtype=float)
    logits = np.asarray(logits, dtype=float)
    if len(values) != len(logits):
        raise ValueError(f"target has {len(values)} bins, logits have {len(logits)}")
    loss, grad = soft_cross_entropy_batch(values[None, :], logits[None, :])
    return loss, grad[0]


def entropy(target: ArrayLike) -> float:
    values = target.values if isinstance(target, SoftAssignment) else np.asarray(target, dtype=float)
    nz = values[values > 0]
    return -float(np.sum(nz * np.log(nz)))


class KeypointFit(NamedTuple):
    pose: PoseSample
    rotation: np.ndarray
    residual: float


def _triangle_area(points: np.ndarray) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(points[1] - points[0], points[2] - points[0])))


def align_keypoints(body_pts: ArrayLike, cam_pts: ArrayLike) -> KeypointFit:
    """
    Closed-form rigid alignment of body-frame keypoints to camera-frame keypoints.

    Centroids are removed, H = Σ (a_i − ā)(b_i − b̄)ᵀ is decomposed as UΣVᵀ and
    R = V·diag(1, 1, det(VUᵀ))·Uᵀ, t = b̄ − R·ā, so R is always a proper rotation.

    Args:
        body_pts: (n, 3) body-frame points, n ≥ 3, not collinear
        cam_pts: (n, 3) matching camera-frame points

    Returns:
        KeypointFit with the pose, the rotation matrix and the largest residual
        ‖R·a_i + t − b_i‖
    """
    body = np.asarray(body_pts, dtype=float)
    cam = np.asarray(cam_pts, dtype=float)
    if body.shape != cam.shape or body.ndim != 2 or body.shape[1] != 3 or len(body) < 3:
        raise ValueError("expected two matching (n, 3) point sets with n >= 3")
    if max(_triangle_area(body[[0, i, j]]) for i in range(1, len(body))
           for j in range(i + 1, len(body))) <= 1e-9:
        raise ValueError("degenerate keypoint set")

    body_centroid = body.mean(axis=0)
    cam_centroid = cam.mean(axis=0)
    h = (body - body_centroid).T @ (cam - cam_centroid)
    u, _, vt = np.linalg.svd(h)
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T)) or 1.0
    rotation = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = cam_centroid - rotation @ body_centroid
    residual = float(np.max(np.linalg.norm(body @ rotation.T + t - cam, axis=1)))
    return KeypointFit(PoseSample(matrix_to_quat(rotation), t), rotation, residual)


def default_keypoints(radius: float = 1.0) -> np.ndarray:
    """Body-frame unit basis points scaled to the object radius."""
    if radius <= 0:
        raise ValueError("object radius must be positive")
    return radius * np.eye(3)


def keypoints_in_camera(pose: PoseSample, body_pts: ArrayLike) -> np.ndarray:
    return np.asarray(body_pts, dtype=float) @ pose.rotation.T + pose.t


def loss_keypoints(batch: Iterable[Tuple[ArrayLike, ArrayLike, ArrayLike]]) -> float:
    """Σ over samples of the mean keypoint distance divided by the true range.

    Each batch item is (predicted keypoints, true keypoints, true translation).
    """
    total = []
    for pred, true, t_gt in batch:
        range_gt = np.linalg.norm(np.asarray(t_gt, dtype=float))
        if range_gt == 0:
            raise ValueError("undefined relative error")
        distances = np.linalg.norm(np.asarray(pred, dtype=float) - np.asarray(true, dtype=float), axis=1)
        total.append(distances.mean() / range_gt)
    return math.fsum(total)
