"""Command-line entry point: ``gsvq {compress,decompress,render,eval,synth,inspect}``.

JSON reports go to stdout and the human-readable log to stderr. Exit codes:
0 success, 1 usage error, 2 input/output failure, 3 corrupt or malformed
file, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from gsvq import codec, metrics, renderer
from gsvq._parallel import default_threads
from gsvq.compressor import SIZE_PRESETS, CompressionConfig, compress
from gsvq.quantized import dequantize
from gsvq.splat_model import PlyError, load_ply, save_ply
from gsvq.synth import SceneSpec, generate_cloud, generate_orbit_cameras

log = logging.getLogger("gsvq")

EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _colour(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("background must be one value or r,g,b")
    return tuple(parts)


def _add_pipeline_flags(p):
    p.add_argument("--size", choices=list(SIZE_PRESETS),
                   help="codebook size preset (scaling/rotation entries; colour/SH get a quarter); "
                        "default 1k unless --config sets entries")
    p.add_argument("--config", help="JSON file of CompressionConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--prune-lambda", type=float)
    p.add_argument("--prune-threshold", type=float)
    p.add_argument("--no-prune", action="store_true", help="skip the pruning phase")
    p.add_argument("--vq-steps", type=int)
    p.add_argument("--finetune-steps", type=int)
    p.add_argument("--render-loss", action="store_true")
    p.add_argument("--cameras", help="camera JSON file")


def build_parser():
    parser = _Parser(prog="gsvq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $GSVQ_THREADS or 1); never changes outputs")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compress", help="PLY -> .nvqg")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _add_pipeline_flags(p)

    p = sub.add_parser("decompress", help=".nvqg -> PLY")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("render", help="render a PLY or .nvqg from each camera to PNG and .npy")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True, help="output path prefix")
    p.add_argument("--background", type=_colour, default=(0.0, 0.0, 0.0))

    p = sub.add_parser("eval", help="compare an original PLY with its compressed form")
    p.add_argument("--in", dest="inp", required=True, help="original PLY")
    p.add_argument("--compressed", help=".nvqg file (omit when using --sizes)")
    p.add_argument("--sizes", help="comma-separated presets to compress and evaluate in turn")
    p.add_argument("--csv", help="append CSV rows to this file")
    p.add_argument("--eight-bit", action="store_true", help="PSNR on 8-bit quantised images")
    p.add_argument("--background", type=_colour, default=(0.0, 0.0, 0.0))
    _add_pipeline_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic scene (and optionally orbit cameras)")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--preset", choices=["random", "grid"], default="random")
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--cameras-out")
    p.add_argument("--n-cameras", type=int, default=8)
    p.add_argument("--radius", type=float, default=4.0)
    p.add_argument("--image-size", type=int, nargs=2, default=(64, 64), metavar=("W", "H"))

    p = sub.add_parser("inspect", help="print a summary of a PLY or .nvqg file")
    p.add_argument("--in", dest="inp", required=True)
    return parser


def _config(args, size=None):
    overrides = {}
    for flag, key in (("seed", "seed"), ("prune_lambda", "prune_lambda"),
                      ("prune_threshold", "prune_threshold"), ("vq_steps", "vq_steps"),
                      ("finetune_steps", "finetune_steps")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.no_prune:
        overrides["prune"] = False
    if args.render_loss:
        overrides["render_loss"] = True
    size = size or args.size
    if args.config:
        fields = CompressionConfig.from_file(args.config).to_dict()
        if size is not None:
            preset = CompressionConfig.from_size(size)
            fields.update({f"entries_{g}": preset.entries(g) for g in ("s", "r", "c", "sh")})
        fields.update(overrides)
        return CompressionConfig(**fields)
    return CompressionConfig.from_size(size or "1k", **overrides)


def _require_file(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such file: {path}")


def _cameras(path):
    if path is None:
        return None
    _require_file(path)
    try:
        return renderer.load_cameras(path)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise PlyError(f"malformed camera file {path}: {exc}") from exc


def _emit(obj):
    json.dump(obj, sys.stdout, indent=2, allow_nan=False)
    sys.stdout.write("\n")


def _load_any(path):
    _require_file(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == codec.MAGIC:
        return dequantize(codec.decode(path))
    return load_ply(path)


def cmd_compress(args, threads):
    _require_file(args.inp)
    cfg = _config(args)
    cams = _cameras(args.cameras)
    cloud = load_ply(args.inp)
    q = compress(cloud, cfg, cams, threads)
    written = codec.encode(q, args.out)
    sizes = codec.size_report(q)
    report = dict(q.report)
    report["bytes_written"] = written
    report["sizes"] = sizes
    report["input_bytes"] = os.path.getsize(args.inp)
    report["ratio_vs_input"] = report["input_bytes"] / written
    _emit(report)


def cmd_decompress(args, threads):
    _require_file(args.inp)
    q = codec.decode(args.inp)
    cloud = dequantize(q)
    save_ply(cloud, args.out)
    log.info("wrote %d splats to %s", len(cloud), args.out)


def cmd_render(args, threads):
    cloud = _load_any(args.inp)
    cams = _cameras(args.cameras)
    paths = []
    for k, cam in enumerate(cams):
        img = renderer.render(cloud, cam, args.background, threads)
        if not np.all(np.isfinite(img)):
            raise FloatingPointError(f"camera {k}: non-finite pixel values")
        png = f"{args.out}_{k:03d}.png"
        renderer.save_png(img, png)
        np.save(f"{args.out}_{k:03d}.npy", img.astype(np.float32))
        paths.append(png)
    _emit({"images": paths})


def _eval_report(original, q, cams, args, threads):
    rep = metrics.evaluate(original, q, cams or (), args.background, args.eight_bit, threads)
    if rep.psnr_db is not None and math.isnan(rep.psnr_db):
        raise FloatingPointError("PSNR is NaN")
    return rep


def cmd_eval(args, threads):
    _require_file(args.inp)
    original = load_ply(args.inp)
    cams = _cameras(args.cameras)
    rows = []
    if args.sizes:
        sizes = [s.strip() for s in args.sizes.split(",") if s.strip()]
        bad = [s for s in sizes if s not in SIZE_PRESETS]
        if bad:
            raise UsageError(f"unknown sizes: {bad}")
        results = []
        for i, size in enumerate(sizes):
            cfg = _config(args, size)
            q = compress(original, cfg, cams, threads)
            reference = original.astype(np.float32)
            if cfg.prune:
                from gsvq.compressor import prune
                reference = prune(reference, cfg)
            rep = _eval_report(reference, q, cams, args, threads)
            rows.append(rep.csv_row(size, header=(i == 0)))
            results.append({"size": size, **rep.to_dict()})
        _emit({"sweep": results})
    else:
        if not args.compressed:
            raise UsageError("eval needs --compressed or --sizes")
        _require_file(args.compressed)
        q = codec.decode(args.compressed)
        if len(q) != len(original):
            raise UsageError(f"compressed file has {len(q)} splats, original {len(original)}; "
                             "evaluate against the pruned cloud")
        rep = _eval_report(original, q, cams, args, threads)
        rows.append(rep.csv_row(os.path.basename(args.compressed), header=True))
        _emit(rep.to_dict())
    if args.csv:
        with open(args.csv, "a") as fh:
            fh.writelines(rows)
    else:
        sys.stderr.writelines(rows)


def cmd_synth(args, threads):
    cloud = generate_cloud(SceneSpec(args.count, extent=args.extent, seed=args.seed, preset=args.preset))
    save_ply(cloud, args.out)
    out = {"ply": args.out, "splats": len(cloud)}
    if args.cameras_out:
        cams = generate_orbit_cameras(args.n_cameras, args.radius, tuple(args.image_size))
        renderer.save_cameras(cams, args.cameras_out)
        out["cameras"] = args.cameras_out
    _emit(out)


def cmd_inspect(args, threads):
    _require_file(args.inp)
    with open(args.inp, "rb") as fh:
        head = fh.read(4)
    if head == codec.MAGIC:
        q = codec.decode(args.inp)
        info = {"format": "nvqg", **codec.size_report(q),
                "entries": {g: q.codebook(g).entries for g in ("s", "r", "c", "sh")}}
    else:
        cloud = load_ply(args.inp)
        info = {"format": "ply", "splats": len(cloud), "sh_degree": cloud.sh_degree,
                "opacity_mean": float(np.mean(1 / (1 + np.exp(-cloud.o_raw.astype(np.float64)))))
                if len(cloud) else None}
    _emit(info)


COMMANDS = {"compress": cmd_compress, "decompress": cmd_decompress, "render": cmd_render,
            "eval": cmd_eval, "synth": cmd_synth, "inspect": cmd_inspect}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    threads = args.threads if args.threads is not None else default_threads()
    if threads < 1:
        print("gsvq: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with np.errstate(invalid="raise", divide="ignore", over="ignore", under="ignore"):
            COMMANDS[args.command](args, threads)
    except UsageError as exc:
        print(f"gsvq: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (codec.CodecError, PlyError) as exc:
        print(f"gsvq: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"gsvq: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, IndexError) as exc:
        print(f"gsvq: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gsvq: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
