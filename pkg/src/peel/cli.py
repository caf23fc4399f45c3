"""Command-line interface: build models, run inference, invert, score.

Exit codes: 0 success, 2 usage error, 3 I/O failure, 4 invalid input,
5 solver divergence. Every command writes a ``run.json`` manifest next to
its outputs; wall-clock times go to a separate ``timing.json`` so that all
other outputs are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .blockinv import PenaltyConfig, solve
from .errors import DivergenceError, PeelError, ValidationError
from .forward import network_forward
from .imageio import read_image, write_image
from .metrics import image_report, json_safe, knn_distance, mse, psnr, relative_error
from .modelio import (
    InitScheme,
    ResBlockSpec,
    build_arch,
    fold_batchnorm,
    load_model,
    random_init,
    save_model,
)
from .oracle import oracle_invert_block
from .pipeline import block_seed, error_table, format_table, peel
from .shallowinv import ShallowConfig, invert_shallow
from .tensor import read_tns, write_tns

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3, 4, 5
# a reconstruction this far from the truth counts as a failed inversion
FAILURE_THRESHOLD = 0.2


class UsageError(Exception):
    pass


def default_seed():
    raw = os.environ.get("PEEL_SEED")
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise UsageError(f"PEEL_SEED must be an integer, got {raw!r}") from None
    if seed < 0:
        raise UsageError("PEEL_SEED must be nonnegative")
    return seed


# --------------------------------------------------------------------------
# file helpers


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def model_hash(directory):
    d = Path(directory)
    h = hashlib.sha256()
    for name in ("model.json", "weights.bin"):
        h.update(name.encode())
        h.update(bytes.fromhex(sha256_file(d / name)))
    return h.hexdigest()


def read_tensor(path):
    """Read a ``.tns`` tensor or a PPM/PGM image."""
    suffix = Path(path).suffix.lower()
    if suffix in (".ppm", ".pgm", ".pnm"):
        return read_image(path)
    return read_tns(path)


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(json_safe(obj), indent=2, sort_keys=True) + "\n")


def write_manifest(out_dir, command, config, seeds, model_dir=None, inputs=(), extra=None):
    manifest = {
        "command": command,
        "config": config,
        "seeds": list(seeds),
        "model_hash": None if model_dir is None else model_hash(model_dir),
        "input_hashes": {str(p): sha256_file(p) for p in inputs},
        "tool_version": __version__,
    }
    if extra:
        manifest.update(extra)
    write_json(Path(out_dir) / "run.json", manifest)


def write_timing(out_dir, timing):
    write_json(Path(out_dir) / "timing.json", timing)


def _out_dir(path):
    d = Path(path).resolve().parent
    d.mkdir(parents=True, exist_ok=True)
    return d


# --------------------------------------------------------------------------
# argument groups


def _bool(text):
    t = str(text).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _dims(text):
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected C,H,W with positive extents, got {text!r}")
    return dims


def _widths(text):
    try:
        w = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected four comma-separated integers, got {text!r}") from None
    if len(w) != 4:
        raise argparse.ArgumentTypeError("expected four stage widths")
    return w


def add_block_flags(p):
    d = PenaltyConfig()
    g = p.add_argument_group("block solver")
    g.add_argument("--lambda1", type=float, default=d.lambda1, help=f"complementarity weight (published, {d.lambda1:g})")
    g.add_argument("--lambda2", type=float, default=d.lambda2, help=f"splitting weight (published, {d.lambda2:g})")
    g.add_argument("--lr", type=float, default=d.lr, help=f"Adam step size (published, {d.lr:g})")
    g.add_argument("--epochs", type=int, default=d.epochs, help=f"Adam iterations per block (published, {d.epochs})")
    g.add_argument("--init-scale", type=float, default=d.init_scale, help=f"std of the initial iterate (tuned, {d.init_scale:g})")
    g.add_argument(
        "--complementarity",
        choices=("scalar", "elementwise"),
        default=d.complementarity,
        help="form of the disjoint-support penalty (published, scalar)",
    )
    g.add_argument("--seed", type=int, default=None, help="solver seed (default PEEL_SEED or 0)")


def add_shallow_flags(p):
    d = ShallowConfig()
    g = p.add_argument_group("image solver")
    g.add_argument("--lambda-alpha", type=float, default=d.lambda_alpha, help=f"alpha-norm weight (tuned, {d.lambda_alpha:g})")
    g.add_argument("--lambda-tv", type=float, default=d.lambda_tv, help=f"total-variation weight (tuned, {d.lambda_tv:g})")
    g.add_argument("--alpha", type=float, default=d.alpha, help=f"alpha-norm exponent (published, {d.alpha:g})")
    g.add_argument("--beta", type=float, default=d.beta, help=f"total-variation exponent (published, {d.beta:g})")
    g.add_argument("--shallow-lr", type=float, default=d.lr, help=f"Adam step size in pixels (tuned, {d.lr:g})")
    g.add_argument("--shallow-epochs", type=int, default=d.epochs, help=f"Adam iterations (tuned, {d.epochs})")


def block_config(args, seed):
    return PenaltyConfig(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        lr=args.lr,
        epochs=args.epochs,
        seed=seed,
        init_scale=args.init_scale,
        complementarity=args.complementarity,
    )


def shallow_config(args, seed):
    return ShallowConfig(
        lambda_alpha=args.lambda_alpha,
        lambda_tv=args.lambda_tv,
        alpha=args.alpha,
        beta=args.beta,
        lr=args.shallow_lr,
        epochs=args.shallow_epochs,
        seed=seed,
    )


def resolve_seed(args):
    return default_seed() if args.seed is None else args.seed


def _load(path):
    return fold_batchnorm(load_model(path))


def _block_index(net, k):
    if not 0 <= k < len(net.blocks):
        raise ValidationError(f"block index {k} out of range; model has {len(net.blocks)} blocks")
    return net.blocks[k]


# --------------------------------------------------------------------------
# commands


def cmd_gen_model(args):
    seed = resolve_seed(args)
    if args.arch.endswith(".json"):
        spec = build_arch(args.arch)
    else:
        spec = build_arch(
            args.arch,
            input_dims=args.input_dims,
            pooling=args.pooling,
            widths=args.widths,
            activation=args.prelu,
            shortcut=args.shortcut,
        )
    scheme = InitScheme(args.init, seed=seed, sigma=args.sigma, input_scale=args.input_scale)
    net = random_init(spec, scheme)
    out = save_model(net, args.out)
    inputs = [args.arch] if args.arch.endswith(".json") else []
    write_manifest(out, "gen-model", _config(args), [seed], inputs=inputs, extra={"blocks": len(net.blocks)})
    return EXIT_OK


def cmd_forward(args):
    net = _load(args.model)
    x = read_tensor(args.input)
    t0 = time.perf_counter()
    trace = network_forward(x, net)
    out_dir = _out_dir(args.out)
    write_tns(args.out, trace.final)
    if args.taps:
        taps = Path(args.taps)
        taps.mkdir(parents=True, exist_ok=True)
        write_tns(taps / "stem.tns", trace.stem_output)
        for i, y in enumerate(trace.block_outputs):
            write_tns(taps / f"block{i}.tns", y)
    write_manifest(out_dir, "forward", _config(args), [], args.model, [args.input])
    write_timing(out_dir, {"forward_seconds": time.perf_counter() - t0})
    return EXIT_OK


def cmd_invert_block(args):
    seed = resolve_seed(args)
    net = _load(args.model)
    block = _block_index(net, args.block)
    y = read_tensor(args.features)
    truth = None if args.truth is None else read_tensor(args.truth)
    cfg = block_config(args, seed)
    x, report, _ = solve(y, block, cfg, rng=block_seed(cfg, args.block), x_true=truth)
    out_dir = _out_dir(args.out)
    write_tns(args.out, x)
    if args.report:
        write_json(args.report, report.to_dict(include_trace=args.trace))
    inputs = [args.features] + ([args.truth] if args.truth else [])
    write_manifest(out_dir, "invert-block", _config(args, cfg), [seed], args.model, inputs)
    write_timing(out_dir, {"block_seconds": report.wall_time})
    return EXIT_OK


def cmd_invert_shallow(args):
    seed = resolve_seed(args)
    net = _load(args.model)
    phi = read_tensor(args.features)
    truth = None if args.reference_image is None else read_tensor(args.reference_image)
    cfg = shallow_config(args, seed)
    image, report = invert_shallow(phi, net.stem, net.input_dims, cfg, x_true=truth)
    out_dir = _out_dir(args.out)
    clamped = _write_output(args.out, image)
    rep = report.to_dict()
    rep["clamped_pixels"] = clamped
    if truth is not None:
        rep["metrics"] = image_report(np.clip(np.rint(image), 0, 255), truth)
    if args.report:
        write_json(args.report, rep)
    inputs = [args.features] + ([args.reference_image] if args.reference_image else [])
    write_manifest(out_dir, "invert-shallow", _config(args, cfg), [seed], args.model, inputs, {"clamped_pixels": clamped})
    write_timing(out_dir, {"shallow_seconds": report.wall_time})
    return EXIT_OK


def _write_output(path, x):
    """Images go to PPM/PGM, anything else to ``.tns``; returns the clamp count."""
    if Path(path).suffix.lower() in (".ppm", ".pgm", ".pnm"):
        return write_image(path, x)
    write_tns(path, x)
    return 0


def _peel_once(model_dir, features, reference, bcfg, scfg):
    """One full inversion; module-level so worker processes can run it."""
    net = _load(model_dir)
    y = read_tensor(features)
    truth = None
    if reference is not None:
        truth = network_forward(read_tensor(reference), net)
    t0 = time.perf_counter()
    run = peel(y, net, bcfg, scfg, truth=truth)
    return run, time.perf_counter() - t0


def cmd_peel(args):
    seed = resolve_seed(args)
    if args.runs < 1 or args.jobs < 1:
        raise UsageError("--runs and --jobs must be positive")
    seeds = [seed + r for r in range(args.runs)]
    tasks = [
        (args.model, args.features, args.reference_image, block_config(args, s), shallow_config(args, s))
        for s in seeds
    ]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_peel_once, *zip(*tasks)))
    else:
        results = [_peel_once(*t) for t in tasks]
    out_dir = _out_dir(args.out)
    runs = [r for r, _ in results]
    first = runs[0]
    clamped = _write_output(args.out, first.image)
    report = {"runs": []}
    for s, run in zip(seeds, runs):
        rec = run.report_dict(include_trace=args.trace)
        rec["seed"] = s
        if args.reference_image is not None:
            truth = read_tensor(args.reference_image)
            quantized = np.clip(np.rint(run.image), 0, 255)
            rec["metrics"] = image_report(quantized, truth)
            rec["metrics"]["max_block_error"] = run.metrics["max_block_error"]
            worst = max(rec["metrics"]["max_block_error"], rec["metrics"]["relative_error"])
            rec["failed"] = bool(worst > FAILURE_THRESHOLD)
        report["runs"].append(rec)
    report["clamped_pixels"] = clamped
    report["failure_threshold"] = FAILURE_THRESHOLD
    if args.reference_image is not None:
        rows = error_table(runs)
        report["table"] = [{"layer": l, "mean": m, "std": s} for l, m, s in rows]
        report["failed"] = any(r["failed"] for r in report["runs"])
        text = format_table(rows)
        table_path = Path(args.table) if args.table else out_dir / "table.txt"
        table_path.write_text(text + "\n")
        if not args.quiet:
            print(text)
    write_json(args.report, report)
    inputs = [args.features] + ([args.reference_image] if args.reference_image else [])
    cfgs = {"block": asdict(tasks[0][3]), "shallow": asdict(tasks[0][4])}
    write_manifest(out_dir, "peel", _config(args, cfgs), seeds, args.model, inputs, {"clamped_pixels": clamped})
    write_timing(out_dir, {"run_seconds": [t for _, t in results]})
    return EXIT_OK


def cmd_oracle(args):
    net = _load(args.model)
    block = _block_index(net, args.block)
    if not isinstance(block, ResBlockSpec):
        raise ValidationError(f"block {args.block} is not residual")
    y = read_tensor(args.features)
    res = oracle_invert_block(y, block, args.max_hidden)
    out_dir = _out_dir(args.out)
    write_json(args.out, res.to_dict())
    write_manifest(out_dir, "oracle", _config(args), [], args.model, [args.features])
    return EXIT_OK


def cmd_metrics(args):
    ref = read_tensor(args.ref)
    test = read_tensor(args.test)
    m = mse(test, ref)
    out = {"mse": m, "psnr": psnr(m, args.max_val), "max_val": args.max_val}
    if float(np.linalg.norm(ref)) > 0:
        out["relative_error"] = relative_error(test, ref)
    if args.knn:
        out["knn_distance"] = knn_distance(test, [read_tensor(p) for p in args.knn])
    text = json.dumps(json_safe(out), indent=2, sort_keys=True)
    if args.out:
        out_dir = _out_dir(args.out)
        Path(args.out).write_text(text + "\n")
        write_manifest(out_dir, "metrics", _config(args), [], inputs=[args.ref, args.test] + list(args.knn or []))
    else:
        print(text)
    return EXIT_OK


def _config(args, resolved=None):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func",)}
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
    if resolved is not None:
        cfg["resolved"] = asdict(resolved) if hasattr(resolved, "__dataclass_fields__") else resolved
    return cfg


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="peel", description="Layer-wise inversion of residual networks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-model", help="create a randomly initialized model directory")
    g.add_argument("--arch", required=True, help="resnet18, resnet34, resnet50a, resnet152a, or a .json description")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int, default=None, help="weight seed (default PEEL_SEED or 0)")
    g.add_argument("--init", choices=("fan_in", "uniform", "gaussian"), default="uniform",
                   help="weight distribution (tuned, uniform)")
    g.add_argument("--sigma", type=float, default=None, help="std for --init gaussian")
    g.add_argument("--input-scale", type=float, default=1.0, help="gain on the first convolution (tuned, 1)")
    g.add_argument("--pooling", type=_bool, default=False, help="max-pool in the stem (default false)")
    g.add_argument("--prelu", type=float, default=None, help="use PReLU with this negative slope")
    g.add_argument("--input-dims", type=_dims, default=(3, 64, 64), help="C,H,W (default 3,64,64)")
    g.add_argument("--widths", type=_widths, default=None, help="four stage widths (default 64,128,256,512)")
    g.add_argument("--shortcut", choices=("conv", "space_to_depth"), default="conv",
                   help="downsampling shortcut (default conv)")
    g.set_defaults(func=cmd_gen_model)

    f = sub.add_parser("forward", help="run inference and record feature taps")
    f.add_argument("--model", required=True)
    f.add_argument("--input", required=True, help="image (.ppm/.pgm) or tensor (.tns)")
    f.add_argument("--out", required=True, help="final features (.tns)")
    f.add_argument("--taps", default=None, help="directory for stem and per-block outputs")
    f.set_defaults(func=cmd_forward)

    b = sub.add_parser("invert-block", help="invert a single residual block")
    b.add_argument("--model", required=True)
    b.add_argument("--block", type=int, required=True, help="zero-based block index")
    b.add_argument("--features", required=True, help="block output (.tns)")
    b.add_argument("--out", required=True, help="estimated block input (.tns)")
    b.add_argument("--report", default=None)
    b.add_argument("--truth", default=None, help="true block input, for error reporting")
    b.add_argument("--trace", action="store_true", help="include the objective trace in the report")
    add_block_flags(b)
    b.set_defaults(func=cmd_invert_block)

    s = sub.add_parser("invert-shallow", help="recover an image from stem features")
    s.add_argument("--model", required=True)
    s.add_argument("--features", required=True, help="stem output (.tns)")
    s.add_argument("--out", required=True, help="reconstruction (.ppm/.pgm or .tns)")
    s.add_argument("--report", default=None)
    s.add_argument("--reference-image", default=None)
    s.add_argument("--seed", type=int, default=None, help="solver seed (default PEEL_SEED or 0)")
    add_shallow_flags(s)
    s.set_defaults(func=cmd_invert_shallow)

    q = sub.add_parser("peel", help="invert a whole network from its final features")
    q.add_argument("--model", required=True)
    q.add_argument("--features", required=True, help="final features (.tns)")
    q.add_argument("--out", required=True, help="reconstruction (.ppm/.pgm or .tns)")
    q.add_argument("--report", required=True)
    q.add_argument("--reference-image", default=None, help="true input; enables per-block errors and the error table")
    q.add_argument("--runs", type=int, default=1, help="independent runs with seeds seed, seed+1, ...")
    q.add_argument("--jobs", type=int, default=1, help="worker processes across runs")
    q.add_argument("--table", default=None, help="where to write the error table (default table.txt)")
    q.add_argument("--trace", action="store_true", help="include objective traces in the report")
    q.add_argument("--quiet", action="store_true")
    add_block_flags(q)
    add_shallow_flags(q)
    q.set_defaults(func=cmd_peel)

    o = sub.add_parser("oracle", help="exact inversion of a tiny block by pattern enumeration")
    o.add_argument("--model", required=True)
    o.add_argument("--block", type=int, required=True)
    o.add_argument("--features", required=True)
    o.add_argument("--max-hidden", type=int, default=14)
    o.add_argument("--out", required=True, help="result JSON")
    o.set_defaults(func=cmd_oracle)

    m = sub.add_parser("metrics", help="compare two tensors or images")
    m.add_argument("--ref", required=True)
    m.add_argument("--test", required=True)
    m.add_argument("--max-val", type=float, default=255.0)
    m.add_argument("--knn", nargs="*", default=None, help="reference feature tensors for nearest-neighbour distance")
    m.add_argument("--out", default=None, help="write JSON here instead of standard output")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"peel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"peel: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PeelError, ValueError) as exc:
        print(f"peel: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"peel: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def entry():
    sys.exit(main())
