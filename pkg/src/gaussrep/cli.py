"""Command-line interface.

Exit codes: 0 success, 1 check not met (grad-check failure, optimize did not
converge), 2 usage or payload parse error, 3 degenerate or empty input,
4 numerical divergence.

stdout carries the machine-readable payload selected by ``--format``;
diagnostics go to stderr. Files are written only under ``--output``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .assignment import IOU, normalize_score
from .errors import DegenerateCovarianceError, InvalidInputError
from .geometry import (
    Gaussian2,
    Obb,
    PointSetRep,
    Qbb,
    canonicalize_obb,
    fit_gaussian_mle,
    gaussian_to_obb,
    obb_to_gaussian,
    obb_to_pointset,
    obb_to_qbb,
    rotated_iou,
)
from .ingest import parse_dota_file, summarize_dataset
from .losses import LossKind, gradient_check, normalize
from .metrics import MetricKind, distance
from .simulator import (
    Scene,
    SceneConfig,
    StrategySpec,
    boundary_sweep,
    gen_scene,
    optimize_pointset,
    run_assignment_experiment,
    translated_corners,
)
from .svg import SvgCanvas

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DEGENERATE = 3
EXIT_DIVERGED = 4


class PayloadError(InvalidInputError):
    """Malformed user payload (exit code 2)."""


class CliExit(Exception):
    def __init__(self, code: int, message: str = ""):
        super().__init__(message)
        self.code = code
        self.message = message


# --- payload decoding ------------------------------------------------------------


def _read_payload(spec: str | None) -> object:
    """``spec`` is inline JSON, ``@path``, or ``-``/``None`` for stdin."""
    if spec is None or spec == "-":
        text = sys.stdin.read()
    elif spec.startswith("@"):
        try:
            text = Path(spec[1:]).read_text()
        except OSError as exc:
            raise PayloadError(f"cannot read payload file: {exc}") from None
    else:
        text = spec
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise PayloadError(f"malformed JSON: {exc}") from None


def _number(obj: dict, key: str) -> float:
    if key not in obj:
        raise PayloadError(f"missing field '{key}'")
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise PayloadError(f"field '{key}' must be a number, got {value!r}")
    return float(value)


def _point_array(value, key: str, count: int | None = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise PayloadError(f"field '{key}' must be a list of [x, y] pairs") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise PayloadError(f"field '{key}' must be a list of [x, y] pairs")
    if count is not None and arr.shape[0] != count:
        raise PayloadError(f"field '{key}' needs exactly {count} points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise PayloadError(f"field '{key}' contains non-finite values")
    return arr


def parse_obb(obj) -> Obb:
    if not isinstance(obj, dict):
        raise PayloadError("obb payload must be a JSON object")
    vals = {k: _number(obj, k) for k in ("cx", "cy", "w", "h", "theta")}
    for k in ("w", "h"):
        if not (math.isfinite(vals[k]) and vals[k] > 0):
            raise PayloadError(f"field '{k}' must be positive, got {vals[k]}")
    return Obb(**vals)


def parse_qbb(obj) -> Qbb:
    if not isinstance(obj, dict) or "corners" not in obj:
        raise PayloadError("qbb payload needs field 'corners'")
    return Qbb(_point_array(obj["corners"], "corners", 4))


def parse_points(obj) -> PointSetRep:
    if not isinstance(obj, dict) or "points" not in obj:
        raise PayloadError("points payload needs field 'points'")
    arr = _point_array(obj["points"], "points")
    if arr.shape[0] < 3:
        raise PayloadError(f"field 'points' needs at least 3 points, got {arr.shape[0]}")
    return PointSetRep(arr)


def parse_gaussian(obj) -> Gaussian2:
    if not isinstance(obj, dict):
        raise PayloadError("gaussian payload must be a JSON object")
    for key, shape in (("mu", (2,)), ("sigma", (2, 2))):
        if key not in obj:
            raise PayloadError(f"missing field '{key}'")
        try:
            arr = np.asarray(obj[key], dtype=float)
        except (TypeError, ValueError):
            raise PayloadError(f"field '{key}' must be numeric") from None
        if arr.shape != shape:
            raise PayloadError(f"field '{key}' must have shape {list(shape)}, got {list(arr.shape)}")
    # Shape is right; anything left (asymmetric, not PD) is a degenerate input.
    return Gaussian2(obj["mu"], obj["sigma"])


def to_gaussian(obj, rep: str | None = None) -> Gaussian2:
    """Decode any supported representation into a Gaussian."""
    if rep is None:
        if not isinstance(obj, dict):
            raise PayloadError("payload must be a JSON object")
        if "mu" in obj or "sigma" in obj:
            rep = "gaussian"
        elif "corners" in obj:
            rep = "qbb"
        elif "points" in obj:
            rep = "points"
        else:
            rep = "obb"
    if rep == "gaussian":
        return parse_gaussian(obj)
    if rep == "obb":
        return obb_to_gaussian(parse_obb(obj))
    if rep == "qbb":
        return fit_gaussian_mle(parse_qbb(obj))
    return fit_gaussian_mle(parse_points(obj))


# --- output helpers --------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(args, text: str):
    """Write the primary payload to --output (a file) or stdout."""
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _output_dir(args) -> Path | None:
    if not args.output:
        return None
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands -----------------------------------------------------------------


def cmd_convert(args) -> int:
    payload = _read_payload(args.infile)
    if args.src == "obb" and args.dst in ("obb", "qbb"):
        box = parse_obb(payload)
        result = canonicalize_obb(box).to_json() if args.dst == "obb" else obb_to_qbb(box).to_json()
    else:
        g = to_gaussian(payload, args.src)
        if args.dst == "gaussian":
            result = g.to_json()
        elif args.dst == "obb":
            result = gaussian_to_obb(g).to_json()
        else:
            result = obb_to_qbb(gaussian_to_obb(g)).to_json()
    _emit(args, _dump(result))
    return EXIT_OK


def _pair(args) -> tuple[Gaussian2, Gaussian2]:
    return to_gaussian(_read_payload(args.gt)), to_gaussian(_read_payload(args.pred))


def cmd_distance(args) -> int:
    g, p = _pair(args)
    metric = MetricKind(args.metric)
    _emit(args, _dump({"metric": metric.value, "value": distance(metric, g, p)}))
    return EXIT_OK


def cmd_loss(args) -> int:
    g, p = _pair(args)
    kind = LossKind(args.loss)
    dist = distance(kind.metric, g, p)
    _emit(args, _dump({"loss": kind.value, "value": normalize(kind, dist), "distance": dist}))
    return EXIT_OK


def cmd_score(args) -> int:
    g, p = _pair(args)
    metric = MetricKind(args.metric)
    dist = distance(metric, g, p)
    _emit(args, _dump({"metric": metric.value, "value": normalize_score(metric, dist), "distance": dist}))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.trials < 1:
        raise CliExit(EXIT_USAGE, "--trials must be >= 1")
    kinds = [LossKind(args.loss)] if args.loss else list(LossKind)
    per_kind = {k.value: gradient_check(k, args.trials, args.seed) for k in kinds}
    worst = max(per_kind.values())
    passed = worst < 1e-5
    report = {
        "trials": args.trials,
        "seed": args.seed,
        "point_counts": [4, 9],
        "max_relative_error": per_kind,
        "worst": worst,
        "tolerance": 1e-5,
        "pass": passed,
    }
    _emit(args, _dump(report))
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def _scene_svg(scene: Scene, result) -> str:
    canvas = SvgCanvas()
    canvas.boxes("gts", [b for b, _ in scene.gts])
    pos = [p.gaussian for j, p in enumerate(scene.proposals) if result.labels[j] >= 0]
    rest = [p.gaussian for j, p in enumerate(scene.proposals) if result.labels[j] < 0]
    canvas.ellipses("proposals", rest, stroke="#bbbbbb")
    canvas.ellipses("positives", pos, stroke="#2ca02c")
    canvas.points("centers", [p.gaussian.mu for p in scene.proposals], radius=0.5, fill="#555555")
    return canvas.render()


def cmd_assign(args) -> int:
    if args.scene:
        try:
            obj = json.loads(Path(args.scene).read_text())
        except OSError as exc:
            raise PayloadError(f"cannot read scene file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise PayloadError(f"malformed scene JSON: {exc}") from None
        try:
            scene = Scene.from_json(obj)
        except InvalidInputError as exc:
            raise PayloadError(str(exc)) from None
    else:
        cfg = _read_payload(args.gen) if args.gen else {}
        if not isinstance(cfg, dict):
            raise PayloadError("scene config must be a JSON object")
        try:
            config = SceneConfig.from_json(cfg)
        except (TypeError, InvalidInputError) as exc:
            raise PayloadError(f"bad scene config: {exc}") from None
        scene = gen_scene(config, args.seed)

    metric = args.metric
    name = args.strategy
    if name == "iou-fixed":
        name, metric = "fixed", IOU
    strategy = StrategySpec(
        name, args.pos_thr, args.neg_thr, args.force_match, args.candidates, args.seed
    )
    report, result = run_assignment_experiment(scene, strategy, metric)
    report["strategy"] = args.strategy
    csv_text = result.to_csv()
    out = _output_dir(args)
    if out is not None:
        (out / "report.json").write_text(_dump(report))
        (out / "assignments.csv").write_text(csv_text)
        (out / "scene.svg").write_text(_scene_svg(scene, result))
    if args.format == "csv":
        sys.stdout.write(csv_text)
    elif args.format == "svg":
        sys.stdout.write(_scene_svg(scene, result))
    else:
        sys.stdout.write(_dump(report))
    return EXIT_OK


def _trace_svg(gt: Obb, trace) -> str:
    canvas = SvgCanvas()
    canvas.boxes("gt", [gt])
    canvas.ellipses("gt-gaussian", [obb_to_gaussian(gt)], stroke="#1f77b4")
    canvas.points("initial", trace.steps[0].points, radius=0.02 * min(gt.w, gt.h) + 0.05, fill="#aaaaaa")
    final = trace.final_points
    canvas.points("final", final, radius=0.02 * min(gt.w, gt.h) + 0.05)
    try:
        canvas.ellipses("final-gaussian", [fit_gaussian_mle(PointSetRep(final))], stroke="#d62728")
    except (DegenerateCovarianceError, InvalidInputError):
        pass
    return canvas.render()


def cmd_optimize(args) -> int:
    if args.steps < 1:
        raise CliExit(EXIT_USAGE, "--steps must be >= 1")
    gt = parse_obb(_read_payload(args.gt))
    kind = LossKind(args.loss)
    if args.points == 4:
        init = translated_corners(gt, args.jitter, args.direction)
    else:
        shift = args.jitter * gt.w * np.array([math.cos(args.direction), math.sin(args.direction)])
        init = PointSetRep(obb_to_pointset(gt).points + shift)
    trace = optimize_pointset(gt, init, kind, args.step_size, args.steps)
    if not trace.steps:
        raise CliExit(EXIT_DIVERGED, trace.message)

    converged = trace.converged()
    summary = {
        "loss": kind.value,
        "steps_run": trace.steps[-1].step,
        "initial_distance": trace.initial_distance,
        "final_distance": trace.final_distance,
        "final_loss": trace.steps[-1].loss,
        "converged": converged,
        "diverged": trace.diverged,
        "message": trace.message,
        "final_obb": None if trace.final_obb is None else trace.final_obb.to_json(),
        "final_iou": None if trace.final_obb is None else rotated_iou(gt, trace.final_obb),
    }
    out = _output_dir(args)
    if out is not None:
        (out / "trace.csv").write_text(trace.to_csv())
        (out / "final.svg").write_text(_trace_svg(gt, trace))
        (out / "summary.json").write_text(_dump(summary))
    if args.format == "csv":
        sys.stdout.write(trace.to_csv())
    elif args.format == "svg":
        sys.stdout.write(_trace_svg(gt, trace))
    else:
        sys.stdout.write(_dump(summary))
    if trace.diverged:
        print(f"diverged: {trace.message}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK if converged else EXIT_CHECK_FAILED


def cmd_ingest(args) -> int:
    root = Path(args.dir)
    if not root.is_dir():
        raise CliExit(EXIT_DEGENERATE, f"not a directory: {root}")
    records, errors, parsed_files = [], [], 0
    for path in sorted(root.glob("*.txt")):
        recs, errs = parse_dota_file(path)
        records.extend(recs)
        errors.extend(errs)
        parsed_files += bool(recs)
    if parsed_files == 0:
        raise CliExit(EXIT_DEGENERATE, f"no parseable annotation files in {root}")
    summary = summarize_dataset(records, errors)
    report = {"files_parsed": parsed_files, **summary.to_json()}
    out = _output_dir(args)
    if out is not None:
        (out / "summary.json").write_text(_dump(report))
        (out / "summary.csv").write_text(summary.to_csv())
    sys.stdout.write(summary.to_csv() if args.format == "csv" else _dump(report))
    for e in errors:
        print(f"parse error: {e}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    gt = parse_obb(_read_payload(args.gt)) if args.gt else Obb(0.0, 0.0, 4.0, 2.0, 0.0)
    if args.resolution < 100:
        raise CliExit(EXIT_USAGE, "--resolution must be >= 100")
    result = boundary_sweep(gt, LossKind(args.loss), args.resolution)
    summary = {
        "loss": args.loss,
        "samples": args.resolution,
        "max_jump": result.max_jump(),
        "median_delta": result.median_delta(),
        "jump_ratio": result.jump_ratio(),
        "contrast_jump_at_minus_half_pi": result.contrast_jump_at(-math.pi / 2),
        "contrast_median_delta": result.contrast_median_delta(),
    }
    out = _output_dir(args)
    if out is not None:
        (out / "sweep.csv").write_text(result.to_csv())
        (out / "summary.json").write_text(_dump(summary))
    sys.stdout.write(result.to_csv() if args.format == "csv" else _dump(summary))
    return EXIT_OK


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--output", help="output file (scalar commands) or directory")
    common.add_argument("--format", choices=["json", "csv", "svg"], default="json")
    common.add_argument("--metric", choices=[m.value for m in MetricKind], default="kld")
    common.add_argument("--loss", choices=[k.value for k in LossKind], default=None)

    parser = argparse.ArgumentParser(prog="gaussrep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[common], help="convert between representations")
    p.add_argument("--from", dest="src", choices=["obb", "qbb", "points", "gaussian"], required=True)
    p.add_argument("--to", dest="dst", choices=["gaussian", "obb", "qbb"], required=True)
    p.add_argument("--in", dest="infile", help="payload: inline JSON, @file, or - for stdin")
    p.set_defaults(func=cmd_convert)

    for name, func, what in (
        ("distance", cmd_distance, "raw Gaussian distance"),
        ("loss", cmd_loss, "normalized regression loss"),
        ("score", cmd_score, "normalized assignment score"),
    ):
        p = sub.add_parser(name, parents=[common], help=what)
        p.add_argument("--gt", required=True, help="ground truth payload (JSON, @file or -)")
        p.add_argument("--pred", required=True, help="prediction payload (JSON, @file or -)")
        p.set_defaults(func=func)

    p = sub.add_parser("grad-check", parents=[common], help="analytic vs finite-difference gradients")
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("assign", parents=[common], help="label assignment experiment")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scene", help="scene JSON file")
    src.add_argument("--gen", nargs="?", const="{}", help="scene config (JSON, @file); defaults if empty")
    p.add_argument("--strategy", choices=["fixed", "atss", "patss", "iou-fixed"], default="atss")
    p.add_argument("--pos-thr", type=float, default=0.4)
    p.add_argument("--neg-thr", type=float, default=0.3)
    p.add_argument("--force-match", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--candidates", type=int, default=9)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("optimize", parents=[common], help="gradient descent on a point set")
    p.add_argument("--gt", required=True, help="gt obb payload (JSON, @file or -)")
    p.add_argument("--jitter", type=float, default=0.2, help="init translation as a fraction of gt width")
    p.add_argument("--direction", type=float, default=0.0, help="translation direction in radians")
    p.add_argument("--points", type=int, choices=[4, 9], default=4)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--step-size", type=float, default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("ingest", parents=[common], help="summarize DOTA annotation files")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sweep", parents=[common], help="angle sweep across the boundary")
    p.add_argument("--gt", help="template obb payload; default 4x2 box")
    p.add_argument("--resolution", type=int, default=6284)
    p.set_defaults(func=cmd_sweep)
    return parser


_LOSS_DEFAULT = {"optimize": "lkld", "loss": "lkld", "sweep": "lkld"}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.loss is None and args.command in _LOSS_DEFAULT:
        args.loss = _LOSS_DEFAULT[args.command]
    if args.command == "assign":
        if args.candidates < 1:
            parser.error("--candidates must be >= 1")
        if not 0.0 <= args.neg_thr <= args.pos_thr:
            parser.error("thresholds must satisfy 0 <= --neg-thr <= --pos-thr")
    try:
        return args.func(args)
    except CliExit as exc:
        if exc.message:
            print(f"gaussrep: {exc.message}", file=sys.stderr)
        return exc.code
    except PayloadError as exc:
        print(f"gaussrep: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateCovarianceError, InvalidInputError) as exc:
        print(f"gaussrep: degenerate input: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except FloatingPointError as exc:
        print(f"gaussrep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
