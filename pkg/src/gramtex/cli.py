"""Command-line entry point: ``gramtex <subcommand> ...``.

Exit codes: 0 success, 1 user error (bad flags, missing files, invalid
values), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("gramtex")

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm"}
DEFAULT_DISTANCES = "1,2,5,10,15,20"


class UsageError(Exception):
    """Bad input from the user; reported without a traceback and exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("distances must be positive integers")
    return values


def _conditions(text: str) -> list[str]:
    from .evaluation import CONDITIONS
    names = [c.strip() for c in text.split(",") if c.strip()]
    unknown = [c for c in names if c not in CONDITIONS]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"unknown condition(s) {unknown}; choose from {','.join(CONDITIONS)}")
    return names


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("GRAMNET_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"GRAMNET_SEED must be an integer, got {env!r}")


def _image_files(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in IMAGE_SUFFIXES))
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    if not files:
        raise UsageError("no input images found")
    return files


def _labelled_data(args):
    from .synth import folder_manifest, load_dataset, load_manifest
    if args.data:
        if not Path(args.data).exists():
            raise UsageError(f"no such dataset: {args.data}")
        entries = load_manifest(args.data)
    elif args.real and args.fake:
        entries = folder_manifest(args.real, args.fake)
    else:
        raise UsageError("give --data MANIFEST or both --real DIR and --fake DIR")
    return load_dataset(entries)


def _write(text: str, path: str | None):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text)
        log.info("wrote %s", path)


def _edit_spec(args, seed: int):
    from .editing import EditSpec
    params = {}
    if args.op == "resize":
        if args.factor is not None:
            params["factor"] = args.factor
        elif args.width is not None and args.height is not None:
            params.update(width=args.width, height=args.height)
        else:
            raise UsageError("resize needs --factor or both --width and --height")
        if args.restore:
            params["restore"] = True
    elif args.op == "jpeg":
        params["quality"] = args.quality
    elif args.op == "blur":
        params["kernel_size"] = args.kernel_size
    elif args.op == "noise":
        params["std"] = args.std
    elif args.op == "l0":
        params["lam"] = args.lam
    return EditSpec(args.op, params, seed if args.op == "noise" else None)


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #

def cmd_synth(args, seed):
    from .synth import default_specs, generate_texture_dataset
    sharp, smooth = default_specs(seed, args.count, args.size, args.sharp_alpha, args.smooth_alpha)
    entries = generate_texture_dataset(sharp, smooth, args.out)
    log.info("wrote %d images to %s", len(entries), args.out)


def cmd_glcm(args, seed):
    from .image import load_image, to_grayscale
    from .texture import dataset_contrast, image_contrast, write_contrast_csv
    files = _image_files(args.inputs)
    images = [to_grayscale(load_image(f)) for f in files]
    rows = []
    for f, img in zip(files, images):
        profile = image_contrast(img, args.distances)
        rows.extend((str(f), d, c) for d, c in zip(profile.distances, profile.contrast))
    if args.csv:
        write_contrast_csv(rows, args.csv)
        log.info("wrote %s", args.csv)
    pooled = dataset_contrast(images, args.distances)
    if args.json or not args.csv:
        _write(pooled.to_json(), args.json)


def cmd_edit(args, seed):
    from .image import load_image, save_image
    if not Path(args.input).exists():
        raise UsageError(f"no such file: {args.input}")
    spec = _edit_spec(args, seed)
    log.info("edit %s", spec.to_json())
    save_image(spec(load_image(args.input)), args.output)
    log.info("wrote %s", args.output)


def cmd_correlate(args, seed):
    from .image import load_image, to_grayscale
    from .synth import varied_texture_set
    from .texture import contrast_correlation_analysis
    if args.inputs:
        images = [to_grayscale(load_image(f)) for f in _image_files(args.inputs)]
    else:
        images = varied_texture_set(args.synthetic, args.size, seed)
    spec = _edit_spec(args, seed)
    table = contrast_correlation_analysis(images, spec, args.distances)
    if args.csv:
        Path(args.csv).write_text("d,r\n" + "".join(f"{d},{r!r}\n" for d, r in zip(table.distances, table.r)))
        log.info("wrote %s", args.csv)
    _write(table.to_json(), args.json)


def cmd_train(args, seed):
    from .checkpoint import save_checkpoint
    from .gram import GramNetConfig
    from .training import TrainConfig, train
    images, labels = _labelled_data(args)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                      augment_resize_range=(args.resize_min, args.resize_max), seed=seed,
                      val_fraction=args.val_fraction)
    log.info("train config %s", json.dumps(cfg.__dict__, default=list))
    ckpt = train(args.model, images, labels, cfg, GramNetConfig())
    save_checkpoint(ckpt, args.out)
    log.info("best epoch %d, val accuracy %.4f; wrote %s", ckpt.metadata["epoch"],
             ckpt.metadata["val_accuracy"], args.out)


def cmd_eval(args, seed):
    from .checkpoint import load_checkpoint
    from .evaluation import robustness_matrix
    models = {}
    for item in args.checkpoint:
        name, _, path = item.rpartition("=")
        if not Path(path).exists():
            raise UsageError(f"no such checkpoint: {path}")
        ckpt = load_checkpoint(path)
        models[name or ckpt.kind] = ckpt
    images, labels = _labelled_data(args)
    reports = []
    for r in range(args.repeats):
        rep = robustness_matrix(models, images, labels, args.conditions, args.original_size,
                                args.jpeg_quality, args.blur_kernel, args.noise_std, seed + r)
        print(rep.format_table())
        reports.append(rep)
    if args.repeats == 1:
        payload = reports[0].to_json() if not args.csv else reports[0].to_csv()
    else:
        acc = {m: {c: [rep.accuracy[m][c] for rep in reports] for c in args.conditions} for m in models}
        summary = {"repeats": [rep.to_dict() for rep in reports],
                   "mean": {m: {c: float(np.mean(v)) for c, v in row.items()} for m, row in acc.items()},
                   "std": {m: {c: float(np.std(v)) for c, v in row.items()} for m, row in acc.items()}}
        payload = json.dumps(summary, indent=1) if not args.csv else "".join(rep.to_csv() for rep in reports)
    if args.out:
        _write(payload, args.out)


def cmd_gradcheck(args, seed):
    from .gradcheck import gradcheck_suite
    results = gradcheck_suite(seed)
    for name, precision, res in results:
        print(f"{'PASS' if res.passed else 'FAIL'}  {name:<22} {precision}  max rel error "
              f"{res.max_rel_error:.2e} (tol {res.tolerance:.0e})")
    if not all(res.passed for _, _, res in results):
        raise RuntimeError("gradient check failed")


# --------------------------------------------------------------------------- #
# parser
# --------------------------------------------------------------------------- #

def _add_edit_flags(p, default_op=None):
    from .editing import DEFAULT_BLUR_KERNEL, DEFAULT_JPEG_QUALITY, DEFAULT_L0_LAMBDA, DEFAULT_NOISE_STD
    p.add_argument("--op", choices=["resize", "jpeg", "blur", "noise", "l0"], default=default_op,
                   required=default_op is None, help="edit to apply (default: %(default)s)")
    p.add_argument("--width", type=int, help="resize: target width in pixels")
    p.add_argument("--height", type=int, help="resize: target height in pixels")
    p.add_argument("--factor", type=float, help="resize: downsampling factor (default: %(default)s)")
    p.add_argument("--restore", action="store_true", help="resize: scale back to the input size afterwards")
    p.add_argument("--quality", type=int, default=DEFAULT_JPEG_QUALITY, help="jpeg quality 1..100 (default: %(default)s)")
    p.add_argument("--kernel-size", type=int, default=DEFAULT_BLUR_KERNEL,
                   help="blur kernel size, odd (default: %(default)s)")
    p.add_argument("--std", type=float, default=DEFAULT_NOISE_STD,
                   help="noise standard deviation in 8-bit levels (default: %(default)s)")
    p.add_argument("--lam", type=float, default=DEFAULT_L0_LAMBDA, help="l0 smoothing weight (default: %(default)s)")


def _add_data_flags(p):
    p.add_argument("--data", help="dataset directory or manifest.json written by 'synth'")
    p.add_argument("--real", help="folder of real images (label 0); use with --fake")
    p.add_argument("--fake", help="folder of fake images (label 1); use with --real")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gramtex", description="Texture statistics, image edits and Gram-Net detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    seed_help = "random seed (default: $GRAMNET_SEED, else 0)"

    p = sub.add_parser("synth", help="generate the two-class synthetic texture dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=200, help="images per class (default: %(default)s)")
    p.add_argument("--size", type=int, default=64, help="image side, power of two >= 32 (default: %(default)s)")
    p.add_argument("--sharp-alpha", type=float, default=1.0,
                   help="spectral exponent of the real-like class (default: %(default)s)")
    p.add_argument("--smooth-alpha", type=float, default=1.6,
                   help="spectral exponent of the fake-like class (default: %(default)s)")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("glcm", help="GLCM contrast per image (CSV) and pooled over the set (JSON)")
    p.add_argument("inputs", nargs="+", help="image files or directories")
    p.add_argument("--distances", type=_int_list, default=DEFAULT_DISTANCES,
                   help="comma-separated pixel distances (default: %(default)s)")
    p.add_argument("--csv", help="write per-image contrast rows (image,d,contrast) here")
    p.add_argument("--json", help="write the pooled contrast profile here (default: stdout)")
    p.set_defaults(func=cmd_glcm)

    p = sub.add_parser("edit", help="apply one edit to an image")
    p.add_argument("input", help="input image (PNG/PGM/PPM)")
    p.add_argument("output", help="output image (PNG/PGM/PPM)")
    _add_edit_flags(p)
    p.add_argument("--seed", type=int, help=seed_help + "; used by noise")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("correlate", help="Pearson r of per-image contrast before vs after an edit, per distance")
    p.add_argument("inputs", nargs="*", help="image files or directories (default: a synthetic texture set)")
    p.add_argument("--synthetic", type=int, default=200,
                   help="number of synthetic textures when no inputs are given (default: %(default)s)")
    p.add_argument("--size", type=int, default=128, help="synthetic texture side (default: %(default)s)")
    p.add_argument("--distances", type=_int_list, default=DEFAULT_DISTANCES,
                   help="comma-separated pixel distances (default: %(default)s)")
    _add_edit_flags(p, default_op="resize")
    p.set_defaults(factor=4.0)
    p.add_argument("--csv", help="write d,r rows here")
    p.add_argument("--json", help="write the correlation table here (default: stdout)")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("train", help="train Gram-Net or the baseline and save the best-on-validation checkpoint")
    p.add_argument("--model", choices=["gramnet", "baseline"], default="gramnet", help="(default: %(default)s)")
    _add_data_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--lr", type=float, default=1e-5, help="Adam learning rate (default: %(default)s)")
    p.add_argument("--batch-size", type=int, default=16, help="(default: %(default)s)")
    p.add_argument("--epochs", type=int, default=10, help="(default: %(default)s)")
    p.add_argument("--resize-min", type=int, default=64, help="smallest augmentation side (default: %(default)s)")
    p.add_argument("--resize-max", type=int, default=256, help="largest augmentation side (default: %(default)s)")
    p.add_argument("--val-fraction", type=float, default=0.2, help="held-out share per class (default: %(default)s)")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of one or more checkpoints under each edit condition")
    p.add_argument("--checkpoint", action="append", required=True, metavar="[NAME=]PATH",
                   help="checkpoint to evaluate; repeat for several models (name defaults to the model kind)")
    _add_data_flags(p)
    p.add_argument("--conditions", type=_conditions, default="original,down8,jpeg,jpeg-down8,blur,noise",
                   help="comma-separated conditions (default: %(default)s)")
    p.add_argument("--original-size", type=int,
                   help="resize every test image to this square side first (default: native size)")
    p.add_argument("--jpeg-quality", type=int, default=75, help="(default: %(default)s)")
    p.add_argument("--blur-kernel", type=int, default=25, help="(default: %(default)s)")
    p.add_argument("--noise-std", type=float, default=5.0, help="(default: %(default)s)")
    p.add_argument("--repeats", type=int, default=1, help="repeat with noise seeds seed..seed+n-1 (default: %(default)s)")
    p.add_argument("--out", help="write the report here (JSON, or CSV with --csv)")
    p.add_argument("--csv", action="store_true", help="write the report as CSV instead of JSON")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks of every layer and a tiny Gram-Net")
    p.add_argument("--seed", type=int, help=seed_help)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"gramtex: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        seed = _resolve_seed(args)
        flags = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
        log.info("gramtex %s seed=%d config=%s", args.command, seed, json.dumps(flags, default=str, sort_keys=True))
        args.func(args, seed)
    except UsageError as exc:
        print(f"gramtex: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError) as exc:
        print(f"gramtex: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        log.exception("internal error")
        print(f"gramtex: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
