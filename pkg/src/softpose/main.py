"""Command-line entry point for softpose."""

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augment import Sim2RealConfig, augment_sample, intrinsics_from_hfov, load_gray, save_gray
from .config import Config
from .datakit import (ImportMapping, LabeledSample, find_image, generate_dataset, import_external,
                      poses_by_id, read_labels, split_dataset, write_labels)
from .metrics import DEFAULT_DISTANCE_EDGES, ensemble_predictions, evaluate_dataset, report, write_table
from .mixem import fit_mixture
from .rotcore import quat_to_euler
from .softcodec import SoftAssignment, SoftCodec, soft_assignment_from_logits
from .sogrid import OrientationGrid, build_grid
from .toyhead import evaluate_head, make_toy_dataset, toy_report, train

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class RunConfig:
    """One invocation: command, seed, parsed flags and the output path."""

    command: str
    seed: int = 0
    flags: Dict[str, Any] = field(default_factory=dict)
    out: Optional[Path] = None

    def __post_init__(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def rng(self, *stream: int) -> np.random.Generator:
        """Independent generator for one stream key (sample index, stage, …)."""
        return np.random.default_rng([self.seed, *stream])


@dataclass
class Command:
    name: str
    help: str
    handler: Callable[[argparse.Namespace, Config, RunConfig], Dict[str, Any]]
    arguments: Tuple[Tuple[tuple, dict], ...]
    # JSON result goes to --out when given; otherwise the result is a summary for stdout
    json_result: bool = True


COMMANDS: Dict[str, Command] = {}


def arg(*flags: str, **kwargs: Any) -> Tuple[tuple, dict]:
    return flags, kwargs


GRID_ARGS = (
    arg("--m", dest="m_per_dim", type=int, help="bins per Euler angle"),
    arg("--delta", type=float, help="kernel smoothing factor"),
    arg("--merge-tol", dest="merge_tolerance", type=float, help="bin merge tolerance (normalized distance)"),
)
SEED_ARG = arg("--seed", type=int, default=0, help="random seed")
OUT_ARG = arg("--out", type=Path, help="output file (stdout when omitted)")


def command(name: str, help: str, *arguments: Tuple[tuple, dict], json_result: bool = True):
    """Register a subcommand handler."""
    def decorator(func):
        COMMANDS[name] = Command(name, help, func, arguments, json_result)
        return func
    return decorator


def _grid(cfg: Config) -> OrientationGrid:
    return build_grid(cfg.m_per_dim, cfg.merge_tolerance)


def _read_json(path: Path) -> Any:
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def _activations(path: Path, grid: OrientationGrid, logits: bool) -> SoftAssignment:
    data = _read_json(path)
    if not isinstance(data, dict) or "values" not in data:
        raise ValueError("activation JSON needs a 'values' list")
    if logits:
        assignment = soft_assignment_from_logits(data["values"], grid)
        assignment.grid_ref = str(data.get("grid", ""))
    else:
        assignment = SoftAssignment.from_dict(data)
    if assignment.grid_ref and assignment.grid_ref != grid.fingerprint:
        raise ValueError(f"activations were produced on grid {assignment.grid_ref}, not {grid.fingerprint}")
    assignment.check_grid(grid)
    return assignment


@command("gen", "Sample synthetic poses inside the camera frustum",
         arg("--count", type=int, required=True),
         arg("--min-range", dest="min_range_m", type=float),
         arg("--max-range", dest="max_range_m", type=float),
         arg("--width", type=int),
         arg("--height", type=int),
         arg("--hfov-deg", type=float),
         SEED_ARG,
         arg("--out", type=Path, required=True, help="output JSONL label file"),
         json_result=False)
def gen_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    if args.count < 0:
        raise ValueError("count must be nonnegative")
    camera = cfg.camera()
    samples = generate_dataset(args.count, camera, cfg.frustum(), run.rng(0))
    write_labels(samples, run.out)
    logger.info(f"Wrote {len(samples)} poses to {run.out}")
    return {"count": len(samples), "out": str(run.out), "camera": camera.to_dict()}


@command("grid", "Build the orientation grid and dump its bins", *GRID_ARGS,
         arg("--out", type=Path, help="CSV file (index,w,x,y,z)"),
         json_result=False)
def grid_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    grid = _grid(cfg)
    result = grid.summary()
    if run.out:
        grid.write_csv(run.out)
        result["out"] = str(run.out)
    else:
        result["bins"] = grid.bins.tolist()
    return result


@command("encode", "Encode label quaternion(s) as a soft assignment", *GRID_ARGS,
         arg("--q", nargs=4, type=float, metavar=("W", "X", "Y", "Z"), help="label quaternion"),
         arg("--in", dest="input", type=Path,
             help='JSON {"q_wxyz": [...]} or a list of {"q_wxyz": [...], "weight": w}'),
         OUT_ARG)
def encode_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    if (args.q is None) == (args.input is None):
        raise ValueError("give exactly one of --q or --in")
    codec = SoftCodec(_grid(cfg), cfg.kernel())
    if args.q is not None:
        return codec.encode(args.q).to_dict()
    data = _read_json(args.input)
    if isinstance(data, dict):
        return codec.encode(data["q_wxyz"]).to_dict()
    return codec.encode_multi([(item["q_wxyz"], item.get("weight", 1.0)) for item in data]).to_dict()


@command("decode", "Decode an activation vector to one quaternion", *GRID_ARGS,
         arg("--in", dest="input", type=Path, required=True, help='activation JSON {"grid", "values"}'),
         arg("--logits", action="store_true", help="values are raw network outputs (softmax applied)"),
         OUT_ARG)
def decode_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    grid = _grid(cfg)
    q = SoftCodec(grid, cfg.kernel()).decode(_activations(args.input, grid, args.logits))
    euler = quat_to_euler(q)
    return {"q_wxyz": q.tolist(), "euler_deg": [math.degrees(float(a)) for a in euler]}


@command("emfit", "Fit an orientation mixture to an activation vector", *GRID_ARGS,
         arg("--in", dest="input", type=Path, required=True, help='activation JSON {"grid", "values"}'),
         arg("--logits", action="store_true", help="values are raw network outputs (softmax applied)"),
         arg("--k-max", type=int),
         arg("--nms-radius", type=float),
         arg("--ll-threshold", type=float),
         OUT_ARG)
def emfit_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    grid = _grid(cfg)
    model = fit_mixture(grid, _activations(args.input, grid, args.logits), cfg.kernel(), cfg.em())
    logger.info(f"Selected K={model.k} after {model.iterations} iterations")
    return model.to_dict()


def _augment_one(index: int, sample: LabeledSample, args, cfg: Config, run: RunConfig,
                 sim2real_cfg: Optional[Sim2RealConfig]) -> Optional[LabeledSample]:
    try:
        path = find_image(sample, args.in_dir)
    except FileNotFoundError as e:
        if not args.skip_missing:
            raise
        logger.warning(f"Skipping sample {sample.sample_id}: {e}")
        return None
    img = load_gray(path)
    camera = intrinsics_from_hfov(img.shape[1], img.shape[0], math.radians(cfg.hfov_deg))
    img, pose = augment_sample(img, camera, sample.pose, run.rng(index), cfg.max_rot_deg,
                               args.inplane, sim2real_cfg)
    name = f"{sample.sample_id}.png"
    save_gray(img, args.out_dir / name)
    return LabeledSample(sample.sample_id, name, pose)


@command("augment", "Warp images by random camera rotations and update their labels",
         arg("--in-dir", type=Path, required=True),
         arg("--labels", type=Path, required=True),
         arg("--out-dir", type=Path, required=True),
         arg("--max-rot-deg", type=float),
         arg("--hfov-deg", type=float),
         arg("--inplane", action="store_true", help="add a random in-plane rotation"),
         arg("--sim2real", type=Path, help="sim-to-real config JSON"),
         arg("--skip-missing", action="store_true", help="skip samples without an image"),
         arg("--workers", type=int, default=1),
         SEED_ARG,
         json_result=False)
def augment_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    sim2real_cfg = Sim2RealConfig.load(args.sim2real) if args.sim2real else None
    samples = sorted(read_labels(args.labels), key=lambda s: s.sample_id)
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
        results = list(pool.map(lambda item: _augment_one(item[0], item[1], args, cfg, run, sim2real_cfg),
                                enumerate(samples)))
    augmented = [s for s in results if s is not None]
    labels_path = write_labels(augmented, args.out_dir / "labels.jsonl")
    logger.info(f"Augmented {len(augmented)} of {len(samples)} samples into {args.out_dir}")
    return {"count": len(augmented), "skipped": len(samples) - len(augmented), "labels": str(labels_path)}


@command("eval", "Score predictions against ground truth",
         arg("--pred", type=Path, required=True, help="predicted poses (JSONL)"),
         arg("--gt", type=Path, required=True, help="ground-truth poses (JSONL)"),
         arg("--edges", nargs="+", type=float, default=list(DEFAULT_DISTANCE_EDGES),
             help="distance bin edges in meters"),
         arg("--table", type=Path, help="per-sample error table (.csv or .xlsx)"),
         OUT_ARG)
def eval_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    records = evaluate_dataset(poses_by_id(read_labels(args.pred)), poses_by_id(read_labels(args.gt)))
    if args.table:
        write_table(records, args.table)
    return report(records, args.edges)


@command("traintoy", "Train the toy orientation head and report Top-1/Top-2 errors",
         arg("--symmetry", type=int),
         arg("--count", dest="toy_count", type=int),
         arg("--epochs", type=int),
         arg("--lr", type=float),
         arg("--eval-count", dest="eval_limit", type=int, help="held-out samples to evaluate"),
         *GRID_ARGS,
         SEED_ARG,
         arg("--report", dest="out", type=Path, help="report JSON file"))
def traintoy_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    grid = _grid(cfg)
    params = cfg.kernel()
    train_set = make_toy_dataset(cfg.toy_count, cfg.symmetry, grid, run.rng(1))
    test_set = make_toy_dataset(cfg.eval_limit, cfg.symmetry, grid, run.rng(2))
    head = train(train_set, grid, params, run.rng(3), cfg.training())
    result = toy_report(evaluate_head(head, test_set, grid, params, cfg.em()), head)
    result.update({"symmetry": cfg.symmetry, "m_per_dim": cfg.m_per_dim, "delta": cfg.delta, "seed": run.seed})
    return result


@command("import", "Convert external labels to the native JSONL format",
         arg("--in", dest="input", type=Path, required=True, help=".json, .jsonl or .csv labels"),
         arg("--mapping", type=Path, help="field-name mapping JSON"),
         arg("--q-order", choices=("wxyz", "xyzw")),
         arg("--t-scale", type=float, help="factor converting translations to meters"),
         arg("--out", type=Path, required=True),
         json_result=False)
def import_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    mapping = ImportMapping.load(args.mapping) if args.mapping else ImportMapping()
    overrides = {k: v for k, v in (("q_order", args.q_order), ("t_scale", args.t_scale)) if v is not None}
    if overrides:
        mapping = replace(mapping, **overrides)
    samples = import_external(args.input, mapping)
    write_labels(samples, run.out)
    return {"count": len(samples), "out": str(run.out)}


@command("split", "Split a label file into train/val/test files",
         arg("--labels", type=Path, required=True),
         arg("--out-dir", type=Path, required=True),
         arg("--fractions", nargs=3, type=float, default=[0.8, 0.1, 0.1], metavar=("TRAIN", "VAL", "TEST")),
         SEED_ARG,
         json_result=False)
def split_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    samples = sorted(read_labels(args.labels), key=lambda s: s.sample_id)
    parts = split_dataset(samples, args.fractions, run.rng(0))
    result = {}
    for name, part in zip(SPLIT_NAMES, parts):
        write_labels(sorted(part, key=lambda s: s.sample_id), args.out_dir / f"{name}.jsonl")
        result[name] = len(part)
    return result


@command("ensemble", "Average the pose predictions of several models",
         arg("--pred", nargs="+", type=Path, required=True, help="prediction JSONL files"),
         arg("--weights", nargs="+", type=float),
         arg("--out", type=Path, required=True),
         json_result=False)
def ensemble_command(args, cfg: Config, run: RunConfig) -> Dict[str, Any]:
    combined = ensemble_predictions([poses_by_id(read_labels(p)) for p in args.pred], args.weights)
    write_labels([LabeledSample(i, None, pose) for i, pose in combined.items()], run.out)
    return {"count": len(combined), "models": len(args.pred), "out": str(run.out)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softpose", description="Probabilistic orientation estimation toolkit")
    parser.add_argument("--config", type=Path, help="flat key-value JSON config file")
    parser.add_argument("--debug", action="store_true", help="verbose logging")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for cmd in COMMANDS.values():
        sub = subparsers.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        for flags, kwargs in cmd.arguments:
            sub.add_argument(*flags, **kwargs)
    return parser


def _emit(result: Dict[str, Any], out: Optional[Path]) -> None:
    text = json.dumps(result, indent=2)
    if out is None:
        sys.stdout.write(text + "\n")
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n", encoding="utf-8")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, dispatch to the subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    cmd = COMMANDS[args.command]
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "debug")}
    try:
        cfg = Config.load(args.config)
        cfg = cfg.override(**{k: v for k, v in flags.items() if k in cfg.__dict__}, debug=args.debug or None)
    except (ValueError, FileNotFoundError) as e:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
        logger.error(f"Error loading config: {e}")
        return 1

    logging.basicConfig(
        level=logging.DEBUG if cfg.debug else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )

    try:
        run_config = RunConfig(cmd.name, getattr(args, "seed", 0), flags, getattr(args, "out", None))
        result = cmd.handler(args, cfg, run_config)
        _emit(result, run_config.out if cmd.json_result else None)
    except (ValueError, FileNotFoundError, KeyError, OSError) as e:
        logger.error(f"Error running {cmd.name}: {e}")
        return 1
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the CLI."""
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
