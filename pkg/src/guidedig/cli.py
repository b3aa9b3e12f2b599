"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
4 numerical failure. Errors are reported on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attribution as at
from . import diffmodel as dm
from . import evaluation as ev
from . import fixtures
from . import imageio
from ._io import atomic_write_text
from .errors import (
    DegenerateMaskError,
    ImageFormatError,
    InputError,
    ModelSpecError,
    NumericalError,
    ProgressError,
)
from .seeding import substream

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
BUILTIN_MODELS = ("linear", "bilinear", "symmetric", "bump", "bumpy", "relu_mlp", "off_path")
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


class ConfigError(Exception):
    pass


def _dump_json(obj) -> str:
    return json.dumps(at._jsonable(obj), indent=1) + "\n"


# -- loading ------------------------------------------------------------------

def _load_model(ref: str) -> dm.DifferentiableModel:
    path = Path(ref)
    if path.exists():
        return dm.load_model(path)
    if ref in BUILTIN_MODELS:
        return fixtures.load_bundled(ref)
    raise FileNotFoundError(f"model {ref!r} is neither a file nor one of {BUILTIN_MODELS}")


def _load_features(path: str) -> tuple[np.ndarray, tuple]:
    p = Path(path)
    if p.suffix.lower() in IMAGE_SUFFIXES:
        fv = imageio.to_features(imageio.read_image(p))
        return fv.values, fv.shape
    try:
        values = np.loadtxt(p, delimiter=",", ndmin=1).reshape(-1)
    except ValueError as exc:
        raise InputError(f"{path}: not a numeric vector file") from exc
    return values, (values.size,)


def _resolve_mode(model, mode: str) -> str:
    if mode == "softmax" and model.n_outputs == 1:
        print("note: softmax of a single output is constant; using logit mode", file=sys.stderr)
        return "logit"
    return mode


# -- commands -----------------------------------------------------------------

def cmd_attribute(args) -> int:
    model = _load_model(args.model)
    x, shape = _load_features(args.input)
    mode = _resolve_mode(model, args.mode)
    spec = at.BaselineSpec.parse(args.baseline, *args.bounds)
    baselines = [x.copy()] if args.baseline_equal_input else None
    want_trace = bool(args.trace)
    if want_trace and args.method not in at.PATH_METHODS:
        raise ConfigError(f"--trace needs a path method ({', '.join(at.PATH_METHODS)})")
    amap = at.attribute(
        model, x, args.method, spec, steps=args.steps, fraction=args.fraction,
        anchors=args.anchors, cls=args.class_index, mode=mode, seed=args.seed,
        n_samples=args.samples, sigma=args.sigma, trace=want_trace,
        image_shape=shape if len(shape) > 1 else model.input_shape, baselines=baselines,
    )
    if baselines is not None:
        amap.config["baseline"] = "input"
    at.save_attribution(amap, args.out)
    if args.heatmap:
        hshape = shape if len(shape) > 1 else model.input_shape
        if len(hshape) < 2:
            raise ConfigError("--heatmap needs an image-shaped input or model")
        if args.method == "edge":
            hshape = tuple(hshape[:2])
        heat = imageio.render_heatmap(amap.attributions, hshape, args.heatmap_norm,
                                      args.percentile)
        imageio.write_image(heat, args.heatmap)
    if want_trace:
        at.write_trace_jsonl(amap.trace, args.trace)
    return EXIT_OK


def cmd_eval_closed_path(args) -> int:
    model = _load_model(args.model)
    mode = _resolve_mode(model, args.mode)
    if args.input:
        inputs = [_load_features(p)[0] for p in args.input]
    else:
        lo, hi = args.bounds
        inputs = [substream(args.seed, "inputs", i).uniform(lo, hi, model.n_features)
                  for i in range(args.n_inputs)]
    report = ev.closed_path_experiment(
        model, args.method, inputs, trials=args.trials, steps=args.steps,
        fraction=args.fraction, anchors=args.anchors, seed=args.seed, bounds=tuple(args.bounds),
        cls=args.class_index, mode=mode, workers=args.workers,
    )
    atomic_write_text(args.out, _dump_json(report.to_dict()))
    print(f"{report.method}: mse={report.mse:.6e} over {report.per_trial_mse.size} loops")
    return EXIT_OK


def cmd_eval_auc(args) -> int:
    scores = at.load_attribution_csv(args.attribution)
    mask = imageio.read_mask(args.mask)
    n_pixels = mask.width * mask.height
    result = ev.auc_roc(ev.pixel_saliency(scores, n_pixels), mask.labels.reshape(-1))
    atomic_write_text(args.out, _dump_json(result.to_dict()))
    if args.roc_out:
        lines = ["threshold,fpr,tpr"]
        lines += [f"{t!r},{f!r},{p!r}" for t, f, p in
                  zip(result.thresholds.tolist(), result.fpr.tolist(), result.tpr.tolist())]
        atomic_write_text(args.roc_out, "\n".join(lines) + "\n")
    print(f"auc={result.auc:.6f}")
    return EXIT_OK


def cmd_diagnostics(args) -> int:
    if not args.trace and not args.profile_out:
        raise ConfigError("diagnostics needs --trace and/or --profile-out")
    if args.trace:
        if not args.out:
            raise ConfigError("--trace needs --out for the diagnostics JSON")
        diag = ev.path_diagnostics(at.read_trace_jsonl(args.trace))
        atomic_write_text(args.out, _dump_json(diag.to_dict()))
    if args.profile_out:
        if not (args.model and args.input):
            raise ConfigError("--profile-out needs --model and --input")
        model = _load_model(args.model)
        x, _ = _load_features(args.input)
        mode = _resolve_mode(model, args.mode)
        base = at.BaselineSpec.parse(args.baseline, *args.bounds)
        b = base.resolve(x.size, args.seed)[0]
        delta, gnorm = ev.directional_profile(model, x, b, args.steps, args.class_index, mode)
        alphas = ev.profile_alphas(args.steps)
        lines = ["alpha,directional_delta,gradient_norm"]
        lines += [f"{a!r},{d!r},{g!r}" for a, d, g in
                  zip(alphas.tolist(), delta.tolist(), gnorm.tolist())]
        atomic_write_text(args.profile_out, "\n".join(lines) + "\n")
    return EXIT_OK


def generate_fixtures(out_dir, seed: int = 0) -> list[Path]:
    """Write the fixture model specs, images and mask into ``out_dir``."""
    out = Path(out_dir)
    written = []

    def model(name, m, meta=None):
        path = out / f"{name}.json"
        dm.save_model(m, path, meta)
        written.append(path)

    def image(name, buf):
        path = out / name
        imageio.write_image(buf, path)
        written.append(path)

    rng = substream(seed, "fixtures", 10)
    model("linear", dm.linear(np.round(rng.normal(0, 1, 16), 3), 0.0, (4, 4, 1)))
    model("bilinear", dm.bilinear_product(2))
    sym, _ = fixtures.symmetric_fixture(seed)
    model("symmetric", sym)
    model("bump", fixtures.bump_family(seed, input_shape=(8, 8, 1)))
    bumpy = fixtures.bumpy(seed)
    model("bumpy", bumpy, {"seed": seed, "logits_at_zero": bumpy.logits(np.zeros(16)).tolist()})
    model("relu_mlp", fixtures.mlp(seed, (4, 4, 1), 16, 3, "relu"))
    model("off_path", fixtures.off_path_bump())

    image("ones.pgm", imageio.ImageBuffer(4, 4, 1, np.full(16, 255, dtype=np.uint8)))
    image("ramp.pgm", imageio.ImageBuffer(4, 4, 1, (np.arange(16) * 17).astype(np.uint8)))
    image("bump_input.pgm", imageio.ImageBuffer(
        8, 8, 1, rng.integers(0, 256, 64).astype(np.uint8)))
    square = np.zeros((8, 8), dtype=np.uint8)
    square[2:6, 2:6] = 1
    path = out / "bump_mask.pgm"
    imageio.write_mask(imageio.MaskBuffer(8, 8, square), path)
    written.append(path)
    return written


def cmd_gen_fixtures(args) -> int:
    for path in generate_fixtures(args.out_dir, args.seed):
        print(path)
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    model = _load_model(args.model)
    mode = _resolve_mode(model, args.mode)
    lo, hi = args.bounds
    errors = []
    for i in range(args.points):
        x = substream(args.seed, "check_gradients", i).uniform(lo, hi, model.n_features)
        errors.append(dm.check_gradient(model, x, args.class_index, mode, args.h))
    worst = float(max(errors))
    report = {"model": args.model, "points": args.points, "h": args.h, "mode": mode,
              "max_relative_error": worst, "tolerance": args.tol, "passed": worst < args.tol}
    text = _dump_json(report)
    if args.out:
        atomic_write_text(args.out, text)
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    if worst >= args.tol:
        print("gradient check failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _common(p, model_required=True, steps=True):
    p.add_argument("--model", required=model_required,
                   help=f"model spec path or builtin name ({', '.join(BUILTIN_MODELS)})")
    p.add_argument("--class", dest="class_index", type=int, default=0,
                   help="output class to explain (default: 0)")
    p.add_argument("--mode", choices=dm.MODES, default="softmax",
                   help="explain the logit or the softmax score (default: softmax)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p.add_argument("--bounds", type=float, nargs=2, default=[0.0, 1.0], metavar=("LO", "HI"),
                   help="feature-space bounds (default: 0 1)")
    if steps:
        p.add_argument("--steps", type=int, default=200, help="path steps T (default: 200)")


def _path_params(p):
    p.add_argument("--fraction", type=float, default=0.1,
                   help="fraction p of features moved per Guided IG round (default: 0.1)")
    p.add_argument("--anchors", type=int, default=0,
                   help="anchor count K for Guided IG (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="guidedig", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attribute", help="compute an attribution map")
    _common(p)
    _path_params(p)
    p.add_argument("--method", choices=at.METHODS, default="gig",
                   help="attribution method (default: gig)")
    p.add_argument("--input", required=True, help="PGM/PPM image or comma/line separated vector")
    p.add_argument("--baseline", default="black",
                   help="black, white, black+white or random:<n> (default: black)")
    p.add_argument("--baseline-equal-input", action="store_true",
                   help="use the input itself as the baseline (zero-length path)")
    p.add_argument("--samples", type=int, default=8, help="SmoothGrad samples (default: 8)")
    p.add_argument("--sigma", type=float, default=0.15, help="SmoothGrad noise std (default: 0.15)")
    p.add_argument("--out", required=True, help="attribution CSV; a .json sidecar is written too")
    p.add_argument("--heatmap", help="write a PGM heatmap here")
    p.add_argument("--heatmap-norm", choices=("abs-max", "percentile"), default="abs-max")
    p.add_argument("--percentile", type=float, default=99.0)
    p.add_argument("--trace", help="write the path trace as JSON lines here")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("eval-closed-path", help="closed-path (A->B->C->A) attribution error")
    _common(p)
    _path_params(p)
    p.add_argument("--method", choices=at.PATH_METHODS, default="gig")
    p.add_argument("--trials", type=int, default=50, help="random loops per input (default: 50)")
    p.add_argument("--n-inputs", type=int, default=20,
                   help="synthetic inputs when no --input is given (default: 20)")
    p.add_argument("--input", action="append", help="explicit input (repeatable)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval_closed_path)

    p = sub.add_parser("eval-auc", help="AUC-ROC of an attribution CSV against a mask")
    p.add_argument("--attribution", required=True)
    p.add_argument("--mask", required=True, help="PGM mask (>=128 is foreground)")
    p.add_argument("--out", required=True)
    p.add_argument("--roc-out", help="write the ROC curve CSV here")
    p.set_defaults(func=cmd_eval_auc)

    p = sub.add_parser("diagnostics", help="path diagnostics and directional profile")
    _common(p, model_required=False)
    p.add_argument("--trace", help="trace JSON lines written by 'attribute --trace'")
    p.add_argument("--out", help="diagnostics JSON")
    p.add_argument("--input")
    p.add_argument("--baseline", default="black")
    p.add_argument("--profile-out", help="directional profile CSV")
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("gen-fixtures", help="write the fixture models and images")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_fixtures)

    p = sub.add_parser("check-gradients", help="compare analytic and finite-difference gradients")
    _common(p, steps=False)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_check_gradients)
    return parser


def _reject_unknown_flags(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    # argparse reports missing required flags first; name a stray flag instead
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if not argv or argv[0] not in sub.choices:
        return
    known = sub.choices[argv[0]]._option_string_actions
    stray = [tok for tok in argv[1:] if tok.startswith("--") and tok != "--"
             and tok.split("=", 1)[0] not in known]
    if stray:
        sub.choices[argv[0]].error(f"unrecognized arguments: {' '.join(stray)}")


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    _reject_unknown_flags(parser, argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, DegenerateMaskError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ModelSpecError, ImageFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, ProgressError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
