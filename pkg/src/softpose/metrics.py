"""Evaluation metrics: location and angular errors, the ESA score and
distance-binned error reports."""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .losses import PoseSample
from .rotcore import geodesic_angle
from .softcodec import average_quaternions

logger = logging.getLogger(__name__)

DEFAULT_DISTANCE_EDGES = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    loc_err_m: float
    rel_loc_err: float
    ang_err_rad: float
    gt_range_m: float

    def __post_init__(self):
        if min(self.loc_err_m, self.rel_loc_err, self.ang_err_rad, self.gt_range_m) < 0:
            raise ValueError(f"negative error in record {self.sample_id}")


def evaluate_pair(pred: PoseSample, gt: PoseSample, sample_id: str = "") -> EvalRecord:
    """Errors of one prediction; the angular error is the full geodesic angle."""
    gt_range = float(np.linalg.norm(gt.t))
    if gt_range == 0:
        raise ValueError("undefined relative error: zero ground-truth range")
    loc_err = float(np.linalg.norm(pred.t - gt.t))
    return EvalRecord(
        sample_id=sample_id,
        loc_err_m=loc_err,
        rel_loc_err=loc_err / gt_range,
        ang_err_rad=float(geodesic_angle(pred.q, gt.q)),
        gt_range_m=gt_range,
    )


def _mean(values: Sequence[float]) -> float:
    # fsum is exact, so the mean does not depend on record order
    return math.fsum(values) / len(values)


def esa_score(records: Sequence[EvalRecord]) -> float:
    """Mean relative location error plus mean angular error in radians."""
    if not records:
        raise ValueError("cannot score an empty record list")
    return _mean([r.rel_loc_err for r in records]) + _mean([r.ang_err_rad for r in records])


def records_frame(records: Sequence[EvalRecord]) -> pd.DataFrame:
    frame = pd.DataFrame([asdict(r) for r in records],
                         columns=["sample_id", "loc_err_m", "rel_loc_err", "ang_err_rad", "gt_range_m"])
    frame["ang_err_deg"] = np.degrees(frame["ang_err_rad"])
    return frame


def error_by_distance(records: Sequence[EvalRecord], bin_edges_m: Sequence[float]) -> List[Dict[str, Any]]:
    """
    Mean errors per ground-truth range interval [edge_k, edge_k+1).

    Args:
        records: evaluation records
        bin_edges_m: strictly increasing edges in meters

    Returns:
        One entry per interval plus a final "overflow" entry for ranges outside
        all intervals; empty intervals report count 0 and null means
    """
    edges = np.asarray(bin_edges_m, dtype=float)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("distance bin edges must be strictly increasing (at least two)")

    frame = records_frame(records)
    frame["bin"] = pd.cut(frame["gt_range_m"], bins=edges, right=False, labels=False)
    grouped = frame.groupby("bin")

    def entry(lo, hi, group: Optional[pd.DataFrame]) -> Dict[str, Any]:
        empty = group is None or group.empty
        return {
            "range_m": [lo, hi],
            "count": 0 if empty else int(len(group)),
            "mean_loc_err_m": None if empty else float(group["loc_err_m"].mean()),
            "mean_ang_err_deg": None if empty else float(group["ang_err_deg"].mean()),
        }

    groups = {int(key): group for key, group in grouped}
    report = [entry(float(edges[k]), float(edges[k + 1]), groups.get(k)) for k in range(len(edges) - 1)]
    overflow = frame[frame["bin"].isna()]
    report.append(entry(None, None, overflow))
    report[-1]["range_m"] = "overflow"
    return report


def angular_error_histogram(errors_deg: Sequence[float], bin_width_deg: float = 10.0) -> Dict[str, List[float]]:
    """Histogram of angular errors over [0°, 180°]."""
    edges = np.arange(0.0, 180.0 + bin_width_deg, bin_width_deg)
    counts, edges = np.histogram(np.asarray(errors_deg, dtype=float), bins=edges)
    return {"edges_deg": edges.tolist(), "counts": counts.tolist()}


def evaluate_dataset(predictions: Mapping[str, PoseSample],
                     ground_truth: Mapping[str, PoseSample]) -> List[EvalRecord]:
    """Evaluate predictions keyed by sample id, in sorted id order.

    Raises:
        ValueError: if any ground-truth id has no prediction or vice versa
    """
    missing = sorted(set(ground_truth) - set(predictions))
    extra = sorted(set(predictions) - set(ground_truth))
    if missing or extra:
        raise ValueError(f"sample ids do not match: {len(missing)} missing predictions "
                         f"(first: {missing[:3]}), {len(extra)} unknown ids (first: {extra[:3]})")
    return [evaluate_pair(predictions[i], ground_truth[i], i) for i in sorted(ground_truth)]


def report(records: Sequence[EvalRecord], bin_edges_m: Sequence[float] = DEFAULT_DISTANCE_EDGES) -> Dict[str, Any]:
    """The evaluation summary written by the ``eval`` command."""
    return {
        "count": len(records),
        "esa_score": esa_score(records),
        "mean_loc_err_m": _mean([r.loc_err_m for r in records]),
        "mean_rel_loc_err": _mean([r.rel_loc_err for r in records]),
        "mean_ang_err_deg": math.degrees(_mean([r.ang_err_rad for r in records])),
        "by_distance": error_by_distance(records, bin_edges_m),
    }


def write_table(records: Sequence[EvalRecord], path: Union[str, Path]) -> Path:
    """Write per-sample errors as CSV, or as a spreadsheet for .xlsx paths."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = records_frame(records)
    if path.suffix.lower() == ".xlsx":
        frame.to_excel(path, index=False, sheet_name="errors", engine="openpyxl")
    else:
        frame.to_csv(path, index=False, float_format="%.17g")
    return path


def ensemble_predictions(prediction_sets: Sequence[Mapping[str, PoseSample]],
                         weights: Optional[Sequence[float]] = None) -> Dict[str, PoseSample]:
    """
    Combine several models' predictions per sample: weighted mean translation
    and weighted quaternion average of the orientations.
    """
    if not prediction_sets:
        raise ValueError("no prediction sets to ensemble")
    weights = np.ones(len(prediction_sets)) if weights is None else np.asarray(weights, dtype=float)
    if len(weights) != len(prediction_sets) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValueError("ensemble weights must be nonnegative, one per prediction set, with positive sum")
    ids = set(prediction_sets[0])
    for index, predictions in enumerate(prediction_sets[1:], start=1):
        if set(predictions) != ids:
            raise ValueError(f"prediction set {index} covers different sample ids")

    combined = {}
    for sample_id in sorted(ids):
        poses = [predictions[sample_id] for predictions in prediction_sets]
        t = np.average([p.t for p in poses], axis=0, weights=weights)
        q = average_quaternions(np.array([p.q for p in poses]), weights)
        combined[sample_id] = PoseSample(q, t)
    logger.info(f"Ensembled {len(prediction_sets)} prediction sets over {len(combined)} samples")
    return combined
