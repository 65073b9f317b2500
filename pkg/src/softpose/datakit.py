"""Dataset plumbing: pose label I/O, external label import and the synthetic
pose sampler."""

import fnmatch
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .augment import CameraIntrinsics
from .losses import PoseSample
from .rotcore import hemisphere, sample_uniform

logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass(eq=False)
class LabeledSample:
    sample_id: str
    image_path: Optional[str]
    pose: PoseSample


@dataclass(frozen=True)
class FrustumRange:
    """Depth interval and pixel margin the sampled object origin must respect."""

    min_range_m: float = 10.0
    max_range_m: float = 40.0
    margin_px: float = 32.0

    def __post_init__(self):
        if not 0 < self.min_range_m < self.max_range_m:
            raise ValueError("frustum range must satisfy 0 < min < max")
        if self.margin_px < 0:
            raise ValueError("margin must be nonnegative")


def sample_pose(K: CameraIntrinsics, fr: FrustumRange, rng: np.random.Generator) -> PoseSample:
    """
    Random pose inside the viewing frustum.

    Orientation is uniform; depth is uniform in [min, max]; the projected
    origin is uniform in the image rectangle inset by the margin.
    """
    if fr.margin_px >= min(K.width, K.height) / 2:
        raise ValueError("margin leaves no room inside the image")
    q = sample_uniform(rng)
    z = rng.uniform(fr.min_range_m, fr.max_range_m)
    u = rng.uniform(fr.margin_px, K.width - fr.margin_px)
    v = rng.uniform(fr.margin_px, K.height - fr.margin_px)
    t = z * (K.inverse @ np.array([u, v, 1.0]))
    return PoseSample(q, t)


def generate_dataset(count: int, K: CameraIntrinsics, fr: FrustumRange,
                     rng: np.random.Generator) -> List[LabeledSample]:
    """``count`` sampled poses with zero-padded ids and no images."""
    width = max(6, len(str(max(count - 1, 0))))
    return [LabeledSample(f"{i:0{width}d}", None, sample_pose(K, fr, rng)) for i in range(count)]


def _format_float(value: float) -> str:
    return format(float(value), ".17g")


def sample_to_line(sample: LabeledSample) -> str:
    q = ", ".join(_format_float(v) for v in sample.pose.q)
    t = ", ".join(_format_float(v) for v in sample.pose.t)
    return (f'{{"id": {json.dumps(sample.sample_id)}, "image": {json.dumps(sample.image_path)}, '
            f'"q_wxyz": [{q}], "t_xyz_m": [{t}]}}')


def write_labels(samples: Sequence[LabeledSample], path: Union[str, Path]) -> Path:
    """Write one JSON object per line with 17-significant-digit floats."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for sample in samples:
            f.write(sample_to_line(sample) + "\n")
    return path


def _pose_from_lists(q: Any, t: Any, where: str) -> PoseSample:
    """
    Pose from label-file lists, validated with the line position in every message.

    Stored quaternions are kept as written apart from their sign, so a value
    within 1e-6 of unit norm is accepted without renormalizing; labels then
    survive a write-read cycle bit for bit.
    """
    if not isinstance(q, list) or len(q) != 4:
        raise ValueError(f"{where}: quaternion must be a list of 4 numbers")
    if not isinstance(t, list) or len(t) != 3:
        raise ValueError(f"{where}: translation must be a list of 3 numbers")
    try:
        q = np.array(q, dtype=float)
        t = np.array(t, dtype=float)
    except (TypeError, ValueError):
        raise ValueError(f"{where}: pose values must be numbers")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
        raise ValueError(f"{where}: pose values must be finite")
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"{where}: quaternion is not unit norm (norm {norm:.9g})")
    pose = PoseSample(q, t)
    # keep the exact stored values; only the sign is canonicalized
    pose.q = hemisphere(q)
    return pose


def parse_label_line(line: str, line_number: int) -> LabeledSample:
    where = f"line {line_number}"
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise ValueError(f"{where}: malformed JSON ({e.msg})")
    if not isinstance(record, dict):
        raise ValueError(f"{where}: expected a JSON object")
    for key in ("id", "q_wxyz", "t_xyz_m"):
        if key not in record:
            raise ValueError(f"{where}: missing key '{key}'")
    return LabeledSample(str(record["id"]), record.get("image"),
                         _pose_from_lists(record["q_wxyz"], record["t_xyz_m"], where))


def read_labels(path: Union[str, Path]) -> List[LabeledSample]:
    """Read a JSONL label file; blank lines are skipped, an empty file is an empty dataset.

    Raises:
        FileNotFoundError: if the file does not exist
        ValueError: on a malformed line (message names the line) or duplicate ids
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Label file not found: {path}")
    samples = []
    seen = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if not line.strip():
                continue
            sample = parse_label_line(line, line_number)
            if sample.sample_id in seen:
                raise ValueError(f"line {line_number}: duplicate sample id '{sample.sample_id}'")
            seen.add(sample.sample_id)
            samples.append(sample)
    return samples


def poses_by_id(samples: Sequence[LabeledSample]) -> Dict[str, PoseSample]:
    return {s.sample_id: s.pose for s in samples}


@dataclass(frozen=True)
class ImportMapping:
    """
    Field names of an external label format.

    ``q_key`` / ``t_key`` name either one field holding a list or a list of
    per-component fields (e.g. CSV columns). ``q_order`` is "wxyz" or "xyzw";
    translations are multiplied by ``t_scale`` to get meters.
    """

    id_key: str = "id"
    q_key: Union[str, Tuple[str, ...]] = "q_wxyz"
    t_key: Union[str, Tuple[str, ...]] = "t_xyz_m"
    q_order: str = "wxyz"
    t_scale: float = 1.0
    image_key: Optional[str] = "image"

    def __post_init__(self):
        if self.q_order not in ("wxyz", "xyzw"):
            raise ValueError(f"unsupported quaternion order '{self.q_order}'")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ImportMapping":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown mapping keys: {sorted(unknown)}")
        data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ImportMapping":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _read_json_records(path: Path) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise ValueError("external JSON labels must be an array of records")
    return data


def _read_jsonl_records(path: Path) -> List[Dict[str, Any]]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise ValueError(f"line {line_number}: malformed JSON ({e.msg})")
    return records


def _read_csv_records(path: Path) -> List[Dict[str, Any]]:
    return pd.read_csv(path).to_dict("records")


READERS = {
    ".json": _read_json_records,
    ".jsonl": _read_jsonl_records,
    ".csv": _read_csv_records,
}


def _field(record: Dict[str, Any], key: Union[str, Tuple[str, ...]]) -> List[float]:
    if isinstance(key, str):
        return list(record[key])
    return [record[k] for k in key]


def import_external(path: Union[str, Path], mapping: ImportMapping) -> List[LabeledSample]:
    """
    Convert an external label file (.json array, .jsonl or .csv) to samples.

    Quaternions are reordered to (w, x, y, z) and canonicalized; translations
    are scaled to meters.

    Raises:
        ValueError: naming the first record with missing keys or bad values
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    suffix = path.suffix.lower()
    if suffix not in READERS:
        raise ValueError(f"Unsupported format: {suffix}. Supported formats: {list(READERS.keys())}")

    samples = []
    for index, record in enumerate(READERS[suffix](path)):
        where = f"record {index} (id {record.get(mapping.id_key, '?')!r})"
        try:
            q = np.array(_field(record, mapping.q_key), dtype=float)
            t = np.array(_field(record, mapping.t_key), dtype=float) * mapping.t_scale
            sample_id = str(record[mapping.id_key])
        except KeyError as e:
            raise ValueError(f"{where}: missing key {e}")
        except (TypeError, ValueError) as e:
            raise ValueError(f"{where}: {e}")
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError(f"{where}: expected 4 quaternion and 3 translation components")
        if mapping.q_order == "xyzw":
            q = np.roll(q, 1)
        image = record.get(mapping.image_key) if mapping.image_key else None
        if isinstance(image, float) and np.isnan(image):
            image = None
        samples.append(LabeledSample(sample_id, image, PoseSample(q, t)))
    logger.info(f"Imported {len(samples)} labels from {path}")
    return samples


def split_dataset(samples: Sequence[LabeledSample], fractions: Sequence[float] = (0.8, 0.1, 0.1),
                  rng: Optional[np.random.Generator] = None) -> List[List[LabeledSample]]:
    """Shuffle and cut into consecutive parts (train/val/test by default)."""
    fractions = np.asarray(fractions, dtype=float)
    if np.any(fractions < 0) or not np.isclose(fractions.sum(), 1.0):
        raise ValueError("split fractions must be nonnegative and sum to 1")
    rng = rng or np.random.default_rng(0)
    order = rng.permutation(len(samples))
    cuts = np.round(np.cumsum(fractions)[:-1] * len(samples)).astype(int)
    return [[samples[i] for i in part] for part in np.split(order, cuts)]


def find_image(sample: LabeledSample, in_dir: Union[str, Path]) -> Path:
    """Image file of a sample: its stored path under ``in_dir``, else ``<id>.*``."""
    in_dir = Path(in_dir)
    if sample.image_path:
        path = in_dir / sample.image_path
        if not path.is_file():
            raise FileNotFoundError(f"Image not found: {path}")
        return path
    matches = sorted(p for p in in_dir.iterdir()
                     if p.suffix.lower() in IMAGE_EXTENSIONS and fnmatch.fnmatch(p.name, f"{sample.sample_id}.*"))
    if not matches:
        raise FileNotFoundError(f"No image for sample '{sample.sample_id}' in {in_dir}")
    return matches[0]
