"""Command-line entry point: ``urbanmask <command> [flags]``.

Exit status is 0 on success, 1 when the run fails on data or I/O, and 2 on
a usage error.  Every command that writes output also writes a key=value
run manifest next to it.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .baselines import KMeansConfig, kmeans_segment, threshold_segment
from .datapipe import (IMAGE_SUFFIXES, SplitSpec, dataset_hash, discover_pairs, load_sample,
                       split_dataset)
from .evalmetrics import CSV_HEADER, evaluate_scene, evaluate_scenes
from .geotile import mosaic_tiles
from .optimloss import EpochCurve
from .postproc import ResampleSpec, majority_resample
from .raster import read_image, read_mask, write_image
from .synthmap import SceneSpec, generate_corpus
from .trainer import PASS1_EPOCHS, PASS2_EPOCHS, PipelineModel, TrainConfig, infer_corpus, infer_tile, train_pipeline

log = logging.getLogger("urbanmask")

MANIFEST_NAME = "manifest.txt"


class UsageError(Exception):
    """Raised for flag combinations argparse cannot check on its own."""


# -- helpers ----------------------------------------------------------------

def read_config(path) -> Dict[str, str]:
    """Parse a plain key=value file; '#' starts a comment, dashes in keys become underscores."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def write_manifest(path, entries: Dict[str, object]) -> Path:
    """Write key=value lines to a temporary file and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(f"{k}={v}\n" for k, v in entries.items())
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_manifest(path) -> Dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _image_files(path: Path) -> List[Path]:
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if path.is_file():
        return [path]
    raise FileNotFoundError(f"{path} does not exist")


def _positive(kind=int):
    def check(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return check


def _manifest_for(args, extra: Dict[str, object]) -> Dict[str, object]:
    entries = {"command": args.command, "version": __version__}
    for key, value in sorted(vars(args).items()):
        if key in ("command", "func", "log_level", "started"):
            continue
        entries[key] = value
    entries.update(extra)
    return entries


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = SceneSpec(width=args.size, height=args.size)
    layout = generate_corpus(args.n, spec, seed=args.seed, out=args.out, hard=args.hard,
                             n_tiles=args.tiles, tile_size=args.tile_size)
    pairs = discover_pairs(layout.images, layout.masks)
    write_manifest(Path(args.out) / MANIFEST_NAME, _manifest_for(args, {
        "dataset_hash": dataset_hash(pairs),
        "wall_time": f"{time.perf_counter() - args.started:.3f}",
    }))
    print(f"wrote {args.n} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    data = Path(args.data)
    pairs = discover_pairs(data / "images", data / "masks")
    if len(pairs) < 2:
        raise ValueError(f"need at least two image/mask pairs in {data}, found {len(pairs)}")
    train_pairs, val_pairs = split_dataset(pairs, SplitSpec(args.train_fraction, args.seed))
    if not train_pairs:
        raise ValueError("training split is empty; raise --train-fraction or add data")
    train = [load_sample(p, args.size) for p in train_pairs]
    val = [load_sample(p, args.size) for p in val_pairs]
    out = Path(args.out)
    tcfg1 = TrainConfig(args.epochs1, args.batch, args.lr, args.train_fraction, args.seed)
    tcfg2 = TrainConfig(args.epochs2, args.batch, args.lr, args.train_fraction, args.seed)
    model = train_pipeline(train, val, tcfg1, tcfg2, base_channels=args.base_channels,
                           depth=args.depth, out_dir=out,
                           progress=None if args.quiet else print)
    _write_curves_csv({"pass1": model.pass1.curve, "pass2": model.pass2.curve}, out / "curves.csv")
    from .plots import plot_curves
    plot_curves({"pass 1": model.pass1.curve, "pass 2": model.pass2.curve}, out / "curves.png")
    write_manifest(out / MANIFEST_NAME, _manifest_for(args, {
        "dataset_hash": dataset_hash(pairs),
        "train_items": ",".join(p.image_path.name for p in train_pairs),
        "val_items": ",".join(p.image_path.name for p in val_pairs),
        "pass1_best_epoch": model.pass1.best_epoch,
        "pass2_best_epoch": model.pass2.best_epoch,
        "wall_time": f"{time.perf_counter() - args.started:.3f}",
    }))
    print(f"pass 1 best epoch {model.pass1.best_epoch}, pass 2 best epoch {model.pass2.best_epoch}")
    return 0


def _write_curves_csv(curves: Dict[str, EpochCurve], path: Path) -> None:
    lines = ["pass,epoch,train_loss,val_loss,val_f1,val_oa"]
    for name, curve in curves.items():
        for r in curve.records:
            lines.append(f"{name},{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_f1!r},{r.val_oa!r}")
    path.write_text("\n".join(lines) + "\n")


def _read_curves_csv(path) -> Dict[str, EpochCurve]:
    curves: Dict[str, EpochCurve] = {}
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split(",")[0] != "pass":
        raise ValueError(f"{path} is not a curves CSV")
    for line in lines[1:]:
        if not line.strip():
            continue
        name, _, tl, vl, f1, oa = line.split(",")
        curves.setdefault(name, EpochCurve()).append(float(tl), float(vl), float(f1), float(oa))
    return curves


def cmd_predict(args) -> int:
    model = PipelineModel.load(args.model)
    tiles = _image_files(Path(args.tiles))
    if not tiles:
        raise ValueError(f"no tiles found in {args.tiles}")
    out = Path(args.out)
    mosaic_path = Path(args.mosaic) if args.mosaic else None
    result = infer_corpus(model, tiles, out_dir=out, mosaic_path=mosaic_path, patch=args.patch,
                          pad_mode=args.pad_mode, threads=args.threads)
    write_manifest(out / MANIFEST_NAME, _manifest_for(args, {
        "tiles_in": ",".join(p.name for p in tiles),
        "masks_out": ",".join(sorted(result.masks)),
        "failures": ";".join(f"{k}: {v}" for k, v in sorted(result.failures.items())),
        "wall_time": f"{time.perf_counter() - args.started:.3f}",
    }))
    print(f"predicted {len(result.masks)} of {len(tiles)} tiles into {out}")
    for name, why in sorted(result.failures.items()):
        print(f"error: {name}: {why}", file=sys.stderr)
    return 1 if result.failures else 0


def cmd_mosaic(args) -> int:
    files = _image_files(Path(args.masks))
    if not files:
        raise ValueError(f"no masks found in {args.masks}")
    masks = [read_mask(p) for p in files]
    missing = [p.name for p, m in zip(files, masks) if m.geo is None]
    if missing:
        raise ValueError(f"masks without a world file: {', '.join(missing)}")
    mosaic = mosaic_tiles(masks)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(mosaic, out)
    write_manifest(out.with_name(out.name + ".manifest.txt"), _manifest_for(args, {
        "inputs": ",".join(p.name for p in files),
        "wall_time": f"{time.perf_counter() - args.started:.3f}",
    }))
    print(f"mosaic {mosaic.width}x{mosaic.height} from {len(files)} masks -> {out}")
    return 0


def _pair_by_stem(preds: List[Path], truths: List[Path]):
    """Match prediction and truth files by name; single files pair with each other."""
    if len(preds) == 1 and len(truths) == 1:
        return preds, truths
    by_stem = {t.stem: t for t in truths}
    unmatched = sorted(p.name for p in preds if p.stem not in by_stem)
    pred_stems = {p.stem for p in preds}
    unmatched += sorted(t.name for t in truths if t.stem not in pred_stems)
    if unmatched:
        raise ValueError(f"files without a counterpart: {', '.join(unmatched)}")
    if not preds:
        raise ValueError("nothing to evaluate")
    return preds, [by_stem[p.stem] for p in preds]


def cmd_evaluate(args) -> int:
    preds, truths = _pair_by_stem(_image_files(Path(args.pred)), _image_files(Path(args.truth)))
    reports, pooled, macro_oa = evaluate_scenes(
        (read_mask(p), read_mask(t)) for p, t in zip(preds, truths))
    lines = [CSV_HEADER]
    lines += [r.csv_row(p.stem) for p, r in zip(preds, reports)]
    lines.append(pooled.csv_row("pooled"))
    lines.append(f"macro_oa,,,,,,,,,{macro_oa!r}")
    text = "\n".join(lines) + "\n"
    if args.csv:
        csv_path = Path(args.csv)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(text)
        write_manifest(csv_path.with_name(csv_path.name + ".manifest.txt"), _manifest_for(args, {
            "pairs": ",".join(f"{p.name}:{t.name}" for p, t in zip(preds, truths)),
            "wall_time": f"{time.perf_counter() - args.started:.3f}",
        }))
    sys.stdout.write(text)
    return 0


def compare_methods(image, truth, model: PipelineModel, seed: int = 0, threads: int = 1):
    """Metric reports for the dual-pass network and both classical baselines on one scene."""
    unet = infer_tile(model, image, threads=threads)
    return {
        "unet": evaluate_scene(unet, truth),
        "kmeans": evaluate_scene(kmeans_segment(image, KMeansConfig(seed=seed)), truth),
        "threshold": evaluate_scene(threshold_segment(image), truth),
    }


def cmd_compare(args) -> int:
    image = read_image(args.image)
    truth = read_mask(args.truth)
    model = PipelineModel.load(args.model)
    reports = compare_methods(image, truth, model, seed=args.seed, threads=args.threads)
    header = "method" + CSV_HEADER[len("scene"):]
    text = "\n".join([header] + [r.csv_row(name) for name, r in reports.items()]) + "\n"
    if args.csv:
        csv_path = Path(args.csv)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        csv_path.write_text(text)
        write_manifest(csv_path.with_name(csv_path.name + ".manifest.txt"), _manifest_for(args, {
            "wall_time": f"{time.perf_counter() - args.started:.3f}",
        }))
    if args.figure:
        from .plots import plot_comparison
        plot_comparison(reports, args.figure)
    sys.stdout.write(text)
    return 0


def cmd_resample(args) -> int:
    mask = read_mask(args.mask)
    out_mask = majority_resample(mask, ResampleSpec(factor=args.factor))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image(out_mask, out)
    write_manifest(out.with_name(out.name + ".manifest.txt"), _manifest_for(args, {
        "input_size": f"{mask.width}x{mask.height}",
        "output_size": f"{out_mask.width}x{out_mask.height}",
        "wall_time": f"{time.perf_counter() - args.started:.3f}",
    }))
    print(f"{mask.width}x{mask.height} -> {out_mask.width}x{out_mask.height}: {out}")
    return 0


def cmd_curves(args) -> int:
    src = Path(args.source)
    if src.is_dir():
        src = src / "curves.csv"
    curves = _read_curves_csv(src)
    from .plots import plot_curves
    plot_curves({name.replace("pass", "pass "): c for name, c in curves.items()}, args.out)
    print(f"wrote {args.out}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; explicit flags override it")
    common.add_argument("--seed", type=int, default=0, help="single source of randomness")
    common.add_argument("--threads", type=_positive(), default=os.cpu_count() or 1,
                        help="worker threads for patch inference")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="urbanmask",
                                     description="Urban footprint extraction from scanned maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic map corpus")
    p.add_argument("--n", type=_positive(), required=True, help="number of scenes")
    p.add_argument("--size", type=_positive(), default=128, help="scene edge in pixels")
    p.add_argument("--hard", action="store_true", help="denser distractors")
    p.add_argument("--tiles", type=int, default=2, help="georeferenced tiles to add")
    p.add_argument("--tile-size", type=_positive(), default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train both passes")
    p.add_argument("--data", required=True, help="directory holding images/ and masks/")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs1", type=_positive(), default=PASS1_EPOCHS)
    p.add_argument("--epochs2", type=_positive(), default=PASS2_EPOCHS)
    p.add_argument("--batch", type=_positive(), default=8)
    p.add_argument("--lr", type=_positive(float), default=1e-3)
    p.add_argument("--size", type=_positive(), default=256, help="network input edge")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.add_argument("--base-channels", type=_positive(), default=16)
    p.add_argument("--depth", type=_positive(), default=4)
    p.add_argument("--quiet", action="store_true", help="no per-epoch lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="dual-pass inference over tiles")
    p.add_argument("--model", required=True, help="directory written by train")
    p.add_argument("--tiles", required=True, help="tile file or directory")
    p.add_argument("--out", required=True, help="directory for per-tile masks")
    p.add_argument("--mosaic", help="also write the mosaic of all tiles here")
    p.add_argument("--patch", type=_positive(), default=256)
    p.add_argument("--pad-mode", choices=["reflect", "zero"], default="reflect")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("mosaic", parents=[common], help="mosaic georeferenced masks")
    p.add_argument("--masks", required=True, help="directory of masks with world files")
    p.add_argument("--out", required=True, help="output mask file")
    p.set_defaults(func=cmd_mosaic)

    p = sub.add_parser("evaluate", parents=[common], help="pixel metrics against truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--csv", help="write the table here as well as to stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="network vs k-means vs threshold")
    p.add_argument("--image", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--csv")
    p.add_argument("--figure", help="bar chart PNG")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("resample", parents=[common], help="majority-vote downsampling")
    p.add_argument("--mask", required=True)
    p.add_argument("--factor", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_resample)

    p = sub.add_parser("curves", parents=[common], help="plot training curves")
    p.add_argument("--source", required=True, help="model directory or curves.csv")
    p.add_argument("--out", required=True, help="PNG path")
    p.set_defaults(func=cmd_curves)
    return parser


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, values: Dict[str, str]) -> None:
    """Install config values as subcommand defaults, type-checked like flags."""
    subparsers = parser._subparsers._group_actions[0].choices
    known = set()
    for sub in subparsers.values():
        defaults = {}
        for action in sub._actions:
            if action.dest not in values or action.dest in ("help", "config"):
                continue
            known.add(action.dest)
            raw = values[action.dest]
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif action.type is not None:
                try:
                    value = action.type(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"config {action.dest}: {exc}")
            else:
                value = raw
            if action.choices is not None and value not in action.choices:
                parser.error(f"config {action.dest}: {value!r} not in {sorted(action.choices)}")
            action.required = False
            defaults[action.dest] = value
        sub.set_defaults(**defaults)
    unknown = sorted(set(values) - known)
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse flags on top of an optional --config file on top of built-in defaults."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    cfg = _config_path(argv)
    if cfg:
        try:
            _apply_config(parser, read_config(cfg))
        except (OSError, UsageError) as exc:
            parser.error(str(exc))
    args = parser.parse_args(argv)
    if args.command == "resample" and args.factor < 2:
        parser.error("--factor must be >= 2")
    if args.command == "train" and not 0.0 < args.train_fraction < 1.0:
        parser.error("--train-fraction must be strictly between 0 and 1")
    if args.command == "synth" and args.tiles < 0:
        parser.error("--tiles must be >= 0")
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    args.started = time.perf_counter()
    try:
        code = args.func(args)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return code


if __name__ == "__main__":
    sys.exit(main())
