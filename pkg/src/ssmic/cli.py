"""``ssmic`` command-line entry point.

Results go to stdout (or ``--out``); logs go to stderr. Exit codes: 0 ok,
1 usage error, 2 data error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import codec, complexity, metrics, rangecoder, trainer
from .bench import bench_latency
from .config import PRESETS, ModelConfig, load_config
from .selftest import CHECKS, run_selftest
from .transforms import init_weights

log = logging.getLogger("ssmic")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    """``WxH`` -> (height, width)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _threads() -> int:
    raw = os.environ.get("SSMIC_THREADS", "")
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SSMIC_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"SSMIC_THREADS must be >= 1, got {n}")
    return n


def _require_file(path: Path | None, what: str) -> None:
    if path is not None and not path.is_file():
        raise UsageError(f"{what} {str(path)!r} does not exist")


def _model(args) -> tuple[ModelConfig, dict]:
    _require_file(args.weights, "weights file")
    try:
        config = load_config(args.config)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    if args.weights is None:
        log.warning("no --weights given; using random initialization from seed %d", args.seed)
        return config, init_weights(config, args.seed)
    return config, codec.load_weights(args.weights, config)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        log.info("wrote %s", out)


def _lambda_tag(args) -> str:
    return "" if args.lmbda is None else format(args.lmbda, "g")


# subcommands


def cmd_encode(args) -> int:
    _require_file(args.input, "input image")
    if args.out is None:
        raise UsageError("encode needs --out")
    config, weights = _model(args)
    img = codec.read_png(args.input)
    result = codec.compress(img, weights, config, _lambda_tag(args))
    args.out.write_bytes(result.container.to_bytes())
    log.info("%s: %dx%d -> %.4f bpp", args.input, img.shape[1], img.shape[0], result.container.bpp)
    return EXIT_OK


def cmd_decode(args) -> int:
    _require_file(args.input, "container")
    if args.out is None:
        raise UsageError("decode needs --out")
    config, weights = _model(args)
    image = codec.decode_image(args.input.read_bytes(), weights, config)
    codec.write_png(args.out, image)
    return EXIT_OK


def _eval_one(path: Path, weights, config, tag: str) -> metrics.RdPoint:
    img = codec.read_png(path)
    enc = codec.compress(img, weights, config, tag)
    dec = codec.decompress(enc.container.to_bytes(), weights, config)
    return metrics.RdPoint(enc.container.bpp, metrics.psnr(img, dec.image), path.name)


def cmd_eval(args) -> int:
    if not args.input.is_dir():
        raise UsageError(f"eval input {str(args.input)!r} is not a directory")
    paths = sorted(args.input.glob("*.png"))
    if not paths:
        raise UsageError(f"no .png files in {args.input}")
    config, weights = _model(args)
    tag = _lambda_tag(args)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        points = list(pool.map(lambda p: _eval_one(p, weights, config, tag), paths))
    points.sort(key=lambda p: p.label)
    if args.format == "csv":
        text = metrics.write_rd_csv(points)
    else:
        rows = [f"{p.label:<32} {p.bpp:10.4f} bpp {p.psnr:8.3f} dB" for p in points]
        mean_bpp = float(np.mean([p.bpp for p in points]))
        mean_psnr = float(np.mean([p.psnr for p in points]))
        rows.append(f"{'MEAN':<32} {mean_bpp:10.4f} bpp {mean_psnr:8.3f} dB")
        text = "\n".join(rows) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_bdrate(args) -> int:
    for p in args.curves:
        _require_file(p, "RD CSV")
    loaded = [metrics.read_rd_csv(p) for p in args.curves]
    if len(loaded) == 2:
        _emit(f"{metrics.bd_rate(*loaded):.2f}%\n", args.out)
        return EXIT_OK
    stems = [p.stem for p in args.curves]
    names = stems if len(set(stems)) == len(stems) else [str(p) for p in args.curves]
    curves = dict(zip(names, loaded))
    _emit(metrics.format_bd_matrix(metrics.bd_rate_matrix(curves), args.format), args.out)
    return EXIT_OK


def cmd_flops(args) -> int:
    try:
        config = load_config(args.config)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    sizes = args.size or [(h, w) for w, h in complexity.REPORT_RESOLUTIONS]
    parts = []
    for h, w in sizes:
        report = complexity.count_complexity(config, h, w)
        parts.append(report.to_csv() if args.format == "csv" else report.to_table(per_layer=not args.summary))
    _emit("\n".join(parts), args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    config, weights = _model(args)
    h, w = args.size
    rng = np.random.default_rng(args.seed)
    img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    data = codec.encode_image(img, weights, config).to_bytes()
    reports = {
        "encode": bench_latency(lambda: codec.encode_image(img, weights, config), args.warmup, args.iters),
        "decode": bench_latency(lambda: codec.decode_image(data, weights, config), args.warmup, args.iters),
    }
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["stage", "width", "height", "mean_ms", "std_ms", "min_ms", "iters", "machine"])
        for stage, r in reports.items():
            writer.writerow([stage, w, h, f"{r.mean_ms:.3f}", f"{r.std_ms:.3f}", f"{r.min_ms:.3f}", r.iters, json.dumps(r.machine)])
        text = buf.getvalue()
    else:
        rows = [f"{stage:<7} {w}x{h}  mean {r.mean_ms:10.2f} ms  std {r.std_ms:8.2f}  min {r.min_ms:10.2f}  n={r.iters}"
                for stage, r in reports.items()]
        machine = next(iter(reports.values())).machine
        rows.append("machine: " + ", ".join(f"{k}={v}" for k, v in machine.items()))
        text = "\n".join(rows) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_train_toy(args) -> int:
    for p in args.images:
        _require_file(p, "training image")
    try:
        config = load_config(args.config)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    weights = codec.load_weights(args.weights, config) if args.weights else None
    images = [codec.to_unit_float(codec.read_png(p)) for p in args.images]
    lmbda = 10.0 if args.lmbda is None else args.lmbda
    result = trainer.train_toy(
        config, images, lmbda, args.steps, lr=args.lr, seed=args.seed, crop=args.crop, weights=weights
    )
    buf = io.StringIO()
    buf.write("step,loss,distortion,rate\n")
    for row in result.trace:
        buf.write(f"{row.step},{row.loss!r},{row.distortion!r},{row.rate!r}\n")
    _emit(buf.getvalue(), args.out)
    if args.checkpoint is not None:
        trainer.save_checkpoint(args.checkpoint, result.weights, result.state)
        log.info("checkpoint written to %s.{weights,optim}", args.checkpoint)
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest(args.only or None)
    _emit("".join(r.line() + "\n" for r in results), args.out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="default",
                        help=f"preset name ({', '.join(PRESETS)}) or model-config JSON path (default: %(default)s)")
    common.add_argument("--weights", type=Path, help="weight file; random init from --seed when omitted")
    common.add_argument("--lambda", dest="lmbda", type=float, help="rate-distortion trade-off; also the container tag")
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw (default: %(default)s)")
    common.add_argument("--out", type=Path, help="output path (default: stdout for text results)")
    common.add_argument("--format", choices=("csv", "table"), default="table", help="report format (default: %(default)s)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")

    parser = _Parser(prog="ssmic", description="SSM-based learned image codec: coding, evaluation and analysis tools.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", parents=[common], help="compress a PNG into a container")
    p.add_argument("input", type=Path, help="input PNG")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decompress a container into a PNG")
    p.add_argument("input", type=Path, help="input container")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="bpp/PSNR of every PNG in a directory")
    p.add_argument("input", type=Path, help="directory of PNG images")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bdrate", parents=[common], help="BD-rate between RD CSV files")
    p.add_argument("curves", type=Path, nargs="+", help="anchor CSV then test CSV (or several for a matrix)")
    p.set_defaults(func=cmd_bdrate)

    p = sub.add_parser("flops", parents=[common], help="analytic MACs/FLOPs/params")
    p.add_argument("--size", type=_size, action="append",
                   help="WIDTHxHEIGHT, repeatable (default: 768x512, 1024x768, 1280x1280)")
    p.add_argument("--summary", action="store_true", help="totals only in table format")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", parents=[common], help="encode/decode wall-clock latency")
    p.add_argument("--size", type=_size, default=(256, 256), help="WIDTHxHEIGHT (default: 256x256)")
    p.add_argument("--iters", type=int, default=3, help="timed iterations (default: %(default)s)")
    p.add_argument("--warmup", type=int, default=1, help="untimed iterations (default: %(default)s)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-toy", parents=[common], help="small deterministic RD training run")
    p.add_argument("images", type=Path, nargs="+", help="training PNGs")
    p.add_argument("--steps", type=int, default=300, help="optimizer steps (default: %(default)s)")
    p.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate (default: %(default)s)")
    p.add_argument("--crop", type=int, default=64, help="square crop size (default: %(default)s)")
    p.add_argument("--checkpoint", type=Path, help="write <prefix>.weights and <prefix>.optim")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in oracle checks")
    p.add_argument("--only", action="append", choices=sorted(CHECKS), help="run one check, repeatable")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ssmic {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (codec.CodecError, rangecoder.RangeCoderError, OSError, ValueError) as exc:
        print(f"ssmic {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AssertionError, FloatingPointError, trainer.TrainingDiverged) as exc:
        print(f"ssmic {args.command}: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
