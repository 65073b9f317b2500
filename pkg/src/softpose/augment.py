"""
Label-preserving image augmentation.

Images are 8-bit grayscale numpy arrays of shape (height, width). Pixel
(row r, column c) has its center at image coordinates (c + 0.5, r + 0.5).
"""

import json
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from .losses import PoseSample
from .rotcore import ArrayLike, axis_angle, compose, conjugate, quat_to_matrix

logger = logging.getLogger(__name__)

# sampling coordinates are rounded so exact pixel permutations stay exact
COORD_DECIMALS = 9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: focal lengths and principal point in pixels, image size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    def project(self, points: ArrayLike) -> np.ndarray:
        """Pixel coordinates (u, v) of camera-frame point(s)."""
        points = np.asarray(points, dtype=float)
        if np.any(points[..., 2] <= 0):
            raise ValueError("cannot project a point behind the camera")
        return np.stack([
            self.fx * points[..., 0] / points[..., 2] + self.cx,
            self.fy * points[..., 1] / points[..., 2] + self.cy,
        ], axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def intrinsics_from_hfov(width: int, height: int, hfov_rad: float) -> CameraIntrinsics:
    """Square-pixel camera with the principal point at the image center."""
    if not 0 < hfov_rad < math.pi:
        raise ValueError("horizontal field of view must be in (0, π)")
    f = (width / 2.0) / math.tan(hfov_rad / 2.0)
    return CameraIntrinsics(f, f, width / 2.0, height / 2.0, int(width), int(height))


def scale_intrinsics(K: CameraIntrinsics, factor: float) -> CameraIntrinsics:
    """Intrinsics of the same camera after resizing the image by ``factor``."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    return CameraIntrinsics(K.fx * factor, K.fy * factor, K.cx * factor, K.cy * factor,
                            max(1, round(K.width * factor)), max(1, round(K.height * factor)))


def _check_image(img: np.ndarray, K: Optional[CameraIntrinsics] = None) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale image, got shape {img.shape}")
    if K is not None and img.shape != K.shape:
        raise ValueError(f"image shape {img.shape} does not match camera {K.shape}")
    return img


def _to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def rotation_homography(K: CameraIntrinsics, r_delta: ArrayLike) -> np.ndarray:
    """H = K·R(r_delta)ᵀ·K⁻¹, mapping old-camera pixels to new-camera pixels."""
    return K.matrix @ quat_to_matrix(r_delta).T @ K.inverse


def rotate_pose(pose: PoseSample, r_delta: ArrayLike) -> PoseSample:
    """Pose seen from the camera rotated by r_delta: t' = Rᵀt, q' = r_delta⁻¹ ∘ q."""
    rotation = quat_to_matrix(r_delta)
    return PoseSample(compose(conjugate(r_delta), pose.q), rotation.T @ pose.t)


def warp_image(img: np.ndarray, K: CameraIntrinsics, homography: np.ndarray) -> np.ndarray:
    """Resample ``img`` so output pixel p' comes from input H⁻¹p' (bilinear, zero fill)."""
    img = _check_image(img, K)
    rows, cols = np.indices(img.shape, dtype=float)
    target = np.stack([cols + 0.5, rows + 0.5, np.ones_like(cols)])
    source = np.tensordot(np.linalg.inv(homography), target, axes=1)
    in_front = source[2] > 0
    depth = np.where(in_front, source[2], 1.0)
    src_cols = np.round(source[0] / depth - 0.5, COORD_DECIMALS)
    src_rows = np.round(source[1] / depth - 0.5, COORD_DECIMALS)
    warped = ndimage.map_coordinates(img.astype(float), [src_rows, src_cols], order=1, mode="constant", cval=0.0)
    warped[~in_front] = 0.0
    return _to_uint8(warped)


def warp_rotation(img: np.ndarray, K: CameraIntrinsics, r_delta: ArrayLike,
                  pose: PoseSample) -> Tuple[np.ndarray, PoseSample]:
    """
    Simulate a camera rotation by r_delta (new camera from old camera).

    Args:
        img: grayscale image matching K
        K: camera intrinsics
        r_delta: unit quaternion of the camera perturbation
        pose: object pose in the original camera frame

    Returns:
        (warped image, pose in the rotated camera frame); out-of-frame pixels are 0
    """
    r_delta = np.asarray(r_delta, dtype=float)
    if abs(np.linalg.norm(r_delta) - 1.0) > 1e-9:
        raise ValueError("camera perturbation must be a unit quaternion")
    return warp_image(img, K, rotation_homography(K, r_delta)), rotate_pose(pose, r_delta)


def inplane_rotate(img: np.ndarray, K: CameraIntrinsics, theta: float,
                   pose: PoseSample) -> Tuple[np.ndarray, PoseSample]:
    """Rotate the camera about its optical axis by ``theta`` radians."""
    if not (math.isclose(K.cx, K.width / 2.0) and math.isclose(K.cy, K.height / 2.0)):
        logger.warning("In-plane rotation with an off-center principal point is not a pure image rotation")
    return warp_rotation(img, K, axis_angle([0.0, 0.0, 1.0], theta), pose)


def random_perturbation(max_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Rotation about a uniformly random axis by an angle uniform in [0, max_deg]."""
    if max_deg < 0:
        raise ValueError("maximum rotation must be nonnegative")
    axis = rng.standard_normal(3)
    while np.linalg.norm(axis) < 1e-12:
        axis = rng.standard_normal(3)
    return axis_angle(axis, math.radians(rng.uniform(0.0, max_deg)))


# (lower bound, upper bound) allowed for each range field
SIM2REAL_BOUNDS = {
    "gain_range": (0.0, 4.0),
    "bias_range": (-1.0, 1.0),
    "awgn_sigma_range": (0.0, 1.0),
    "blur_sigma_range": (0.0, 10.0),
    "dropout_count_range": (0, 100),
    "dropout_size_range": (0.0, 1.0),
}
FILL_MODES = ("constant", "noise")


@dataclass(frozen=True)
class Sim2RealConfig:
    """
    Ranges of the sim-to-real appearance chain; each value is drawn uniformly.

    gain scales intensities about mid-gray (contrast and exposure), bias shifts
    them; noise sigma and fill_value are fractions of full scale, blur sigma is
    in pixels. Dropout patches are rectangles whose height and width are
    independent fractions of the image height and width.
    """

    gain_range: Tuple[float, float] = (0.7, 1.3)
    bias_range: Tuple[float, float] = (-0.1, 0.1)
    awgn_sigma_range: Tuple[float, float] = (0.0, 0.04)
    blur_sigma_range: Tuple[float, float] = (0.0, 1.5)
    dropout_count_range: Tuple[int, int] = (0, 3)
    dropout_size_range: Tuple[float, float] = (0.05, 0.2)
    fill_mode: str = "constant"
    fill_value: float = 0.0

    def __post_init__(self):
        for name, (low, high) in SIM2REAL_BOUNDS.items():
            value = tuple(getattr(self, name))
            if len(value) != 2:
                raise ValueError(f"{name} must have two entries")
            lo, hi = value
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            if lo < low or hi > high:
                raise ValueError(f"{name} must lie within [{low}, {high}]")
            object.__setattr__(self, name, value)
        if self.dropout_size_range[0] <= 0:
            raise ValueError("dropout_size_range must be positive")
        if any(int(v) != v for v in self.dropout_count_range):
            raise ValueError("dropout_count_range must hold integers")
        if self.fill_mode not in FILL_MODES:
            raise ValueError(f"fill_mode must be one of {FILL_MODES}")
        if not 0.0 <= self.fill_value <= 1.0:
            raise ValueError("fill_value must lie within [0, 1]")

    @classmethod
    def identity(cls) -> "Sim2RealConfig":
        """A chain that leaves images unchanged."""
        return cls((1.0, 1.0), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0), (0, 0))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Sim2RealConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown sim2real keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Sim2RealConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Sim2real config not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def gaussian_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a float image, kernel radius 3σ."""
    if sigma <= 0:
        return np.asarray(values, dtype=float)
    return ndimage.gaussian_filter(np.asarray(values, dtype=float), sigma, truncate=3.0, mode="reflect")


def sim2real(img: np.ndarray, cfg: Sim2RealConfig, rng: np.random.Generator) -> np.ndarray:
    """Exposure/contrast, blur, additive noise, then patch dropout."""
    img = _check_image(img)
    x = img.astype(float) / 255.0

    gain = rng.uniform(*cfg.gain_range)
    bias = rng.uniform(*cfg.bias_range)
    x = np.clip(gain * (x - 0.5) + 0.5 + bias, 0.0, 1.0)

    x = gaussian_blur(x, rng.uniform(*cfg.blur_sigma_range))

    noise_sigma = rng.uniform(*cfg.awgn_sigma_range)
    if noise_sigma > 0:
        x = np.clip(x + rng.normal(0.0, noise_sigma, size=x.shape), 0.0, 1.0)

    height, width = x.shape
    low, high = cfg.dropout_count_range
    for _ in range(int(rng.integers(low, high + 1))):
        frac_h, frac_w = rng.uniform(*cfg.dropout_size_range, size=2)
        patch_h = min(height, max(1, round(frac_h * height)))
        patch_w = min(width, max(1, round(frac_w * width)))
        top = int(rng.integers(0, height - patch_h + 1))
        left = int(rng.integers(0, width - patch_w + 1))
        if cfg.fill_mode == "noise":
            x[top:top + patch_h, left:left + patch_w] = rng.uniform(0.0, 1.0, size=(patch_h, patch_w))
        else:
            x[top:top + patch_h, left:left + patch_w] = cfg.fill_value

    return _to_uint8(x * 255.0)


def load_gray(path: Union[str, Path]) -> np.ndarray:
    """Read an image as 8-bit grayscale (color converted with 0.299/0.587/0.114 luma)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Image not found: {path}")
    with Image.open(path) as image:
        if image.mode != "L":
            image = image.convert("L")
        return np.array(image, dtype=np.uint8)


def save_gray(img: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_uint8(_check_image(img))).save(path, format="PNG")
    return path


def augment_sample(img: np.ndarray, K: CameraIntrinsics, pose: PoseSample, rng: np.random.Generator,
                   max_rot_deg: float = 10.0, inplane: bool = False,
                   sim2real_cfg: Optional[Sim2RealConfig] = None) -> Tuple[np.ndarray, PoseSample]:
    """
    One augmentation step: random camera perturbation, optional random in-plane
    rotation and optional sim-to-real appearance changes.
    """
    img, pose = warp_rotation(img, K, random_perturbation(max_rot_deg, rng), pose)
    if inplane:
        img, pose = inplane_rotate(img, K, rng.uniform(-math.pi, math.pi), pose)
    if sim2real_cfg is not None:
        img = sim2real(img, sim2real_cfg, rng)
    return img, pose

