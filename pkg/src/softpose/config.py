"""Configuration management for softpose."""

import json
import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

from .augment import CameraIntrinsics, intrinsics_from_hfov
from .datakit import FrustumRange
from .mixem import EMConfig
from .softcodec import KernelParams
from .toyhead import TrainConfig

DEFAULTS: Dict[str, Any] = {
    # Grid and encoding
    "m_per_dim": 16,
    "delta": 6.0,
    "merge_tolerance": None,
    # EM
    "k_max": 4,
    "nms_radius": None,
    "ll_threshold": 0.01,
    "max_iter": 100,
    "variance_floor": 1e-4,
    "mean_tol": 1e-4,
    "prior_floor": 1e-3,
    # Camera and frustum
    "width": 1080,
    "height": 960,
    "hfov_deg": 90.0,
    "min_range_m": 10.0,
    "max_range_m": 40.0,
    "margin_px": 32.0,
    # Augmentation
    "max_rot_deg": 10.0,
    # Toy training
    "symmetry": 2,
    "toy_count": 2000,
    "epochs": 50,
    "lr": 0.05,
    "batch_size": 8,
    "momentum": 0.9,
    "eval_limit": 200,
    # Debug mode
    "debug": False,
}


class Config:
    """Run settings: built-in defaults, overridden by a flat JSON file."""

    def __init__(self, values: Optional[Dict[str, Any]] = None):
        values = dict(values or {})
        unknown = set(values) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        merged = {**DEFAULTS, **values}

        self.m_per_dim: int = int(merged["m_per_dim"])
        self.delta: float = float(merged["delta"])
        self.merge_tolerance: Optional[float] = merged["merge_tolerance"]

        self.k_max: int = int(merged["k_max"])
        self.nms_radius: Optional[float] = merged["nms_radius"]
        self.ll_threshold: float = float(merged["ll_threshold"])
        self.max_iter: int = int(merged["max_iter"])
        self.variance_floor: float = float(merged["variance_floor"])
        self.mean_tol: float = float(merged["mean_tol"])
        self.prior_floor: float = float(merged["prior_floor"])

        self.width: int = int(merged["width"])
        self.height: int = int(merged["height"])
        self.hfov_deg: float = float(merged["hfov_deg"])
        self.min_range_m: float = float(merged["min_range_m"])
        self.max_range_m: float = float(merged["max_range_m"])
        self.margin_px: float = float(merged["margin_px"])

        self.max_rot_deg: float = float(merged["max_rot_deg"])

        self.symmetry: int = int(merged["symmetry"])
        self.toy_count: int = int(merged["toy_count"])
        self.epochs: int = int(merged["epochs"])
        self.lr: float = float(merged["lr"])
        self.batch_size: int = int(merged["batch_size"])
        self.momentum: float = float(merged["momentum"])
        self.eval_limit: int = int(merged["eval_limit"])

        self.debug: bool = bool(merged["debug"])

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "Config":
        """Read a flat key-value JSON file; no path means defaults only."""
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError("config file must hold a JSON object")
        return cls(data)

    def override(self, **flags: Any) -> "Config":
        """Copy with explicit (non-None) flag values applied."""
        values = {key: getattr(self, key) for key in DEFAULTS}
        values.update({key: value for key, value in flags.items() if value is not None})
        return Config(values)

    def kernel(self) -> KernelParams:
        return KernelParams(delta=self.delta, m_per_dim=self.m_per_dim)

    def em(self) -> EMConfig:
        return EMConfig(k_max=self.k_max, nms_radius=self.nms_radius, ll_threshold=self.ll_threshold,
                        max_iter=self.max_iter, mean_tol=self.mean_tol, variance_floor=self.variance_floor,
                        prior_floor=self.prior_floor)

    def camera(self) -> CameraIntrinsics:
        return intrinsics_from_hfov(self.width, self.height, math.radians(self.hfov_deg))

    def frustum(self) -> FrustumRange:
        return FrustumRange(self.min_range_m, self.max_range_m, self.margin_px)

    def training(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, batch_size=self.batch_size, momentum=self.momentum)
