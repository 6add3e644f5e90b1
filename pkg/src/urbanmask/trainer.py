"""Two-pass training and tiled dual-pass inference.

Pass 1 learns RGB map -> urban mask.  Pass 2 is a second network of the
same shape that only ever sees pass-1's binarized output and learns to
clean it up against the same ground truth.
"""

from __future__ import annotations

import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import geotile
from .datapipe import Sample, make_batches, stack_batch
from .evalmetrics import ConfusionCounts, confuse, metrics
from .micronet import (NetConfig, NetParams, backward, forward, init_params, load_checkpoint,
                       predict_proba, save_checkpoint)
from .optimloss import AdamState, EpochCurve, NonFiniteError, adam_step, bce_loss, select_best_epoch
from .raster import BinaryMask, Raster, read_image, write_image

log = logging.getLogger(__name__)

PASS1_EPOCHS = 20
PASS2_EPOCHS = 10
EVAL_BATCH = 8


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = PASS1_EPOCHS
    batch_size: int = 8
    lr: float = 1e-3
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass
class PassArtifacts:
    params: NetParams
    cfg: NetConfig
    curve: EpochCurve
    best_epoch: int
    checkpoint_path: Optional[Path] = None


@dataclass
class PipelineModel:
    pass1: PassArtifacts
    pass2: PassArtifacts

    def __post_init__(self):
        if self.pass2.cfg.in_channels != 1:
            raise ValueError("pass-2 network must take a single channel")

    @classmethod
    def load(cls, model_dir) -> "PipelineModel":
        model_dir = Path(model_dir)
        passes = []
        for name in ("pass1", "pass2"):
            ckpt = model_dir / name / "best.ckpt"
            params, cfg = load_checkpoint(ckpt)
            curve_path = model_dir / name / "curve.csv"
            curve = EpochCurve.from_csv(curve_path) if curve_path.exists() else EpochCurve()
            best = select_best_epoch(curve) if len(curve) else 0
            passes.append(PassArtifacts(params, cfg, curve, best, ckpt))
        return cls(*passes)


# -- training ---------------------------------------------------------------

def predict_samples(params: NetParams, cfg: NetConfig, images: Sequence[np.ndarray],
                    batch: int = EVAL_BATCH, dtype=np.float64) -> List[np.ndarray]:
    """Sigmoid maps (H, W) for a list of (C, H, W) inputs."""
    out = []
    for s in range(0, len(images), batch):
        y = predict_proba(params, cfg, np.stack(images[s:s + batch]), dtype=dtype)
        out.extend(y[:, 0])
    return out


def evaluate_pass(params: NetParams, cfg: NetConfig, samples: Sequence[Sample]):
    """Pooled BCE, confusion counts and per-sample binary predictions."""
    probs = predict_samples(params, cfg, [s.image for s in samples])
    total_loss = 0.0
    pixels = 0
    counts = ConfusionCounts(0, 0, 0, 0)
    preds = []
    for p, s in zip(probs, samples):
        loss, _ = bce_loss(s.mask, p)
        total_loss += loss * s.mask.size
        pixels += s.mask.size
        pred = (p > 0.5).astype(np.uint8)
        preds.append(pred)
        counts = counts + confuse(pred, s.mask)
    return total_loss / pixels, counts, preds


def train_pass(samples_train: Sequence[Sample], samples_val: Sequence[Sample], cfg: NetConfig,
               tcfg: TrainConfig, checkpoint_dir=None,
               progress: Optional[Callable[[str], None]] = None) -> PassArtifacts:
    """Batched BCE/Adam training; returns the parameters of the best validation-F1 epoch."""
    if not samples_train:
        raise ValueError("no training samples")
    for s in list(samples_train) + list(samples_val):
        if s.channels != cfg.in_channels:
            raise ValueError(f"sample {s.name!r} has {s.channels} channels, "
                             f"network expects {cfg.in_channels}")
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)

    params = init_params(cfg, tcfg.seed)
    state = AdamState.fresh(params, lr=tcfg.lr)
    curve = EpochCurve()
    best_params, best_f1 = None, None

    for epoch in range(1, tcfg.epochs + 1):
        loss_sum = 0.0
        pixel_sum = 0
        for bi, batch in enumerate(make_batches(samples_train, tcfg.batch_size, tcfg.seed, epoch)):
            x, y = stack_batch(batch)
            p, cache = forward(params, cfg, x)
            loss, dp = bce_loss(y, p)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi + 1}")
            grads = backward(params, cfg, cache, dp)
            del cache
            try:
                adam_step(params, grads, state)
            except NonFiniteError:
                raise TrainingError(f"non-finite gradient at epoch {epoch}, batch {bi + 1}") from None
            loss_sum += loss * y.size
            pixel_sum += y.size

        if samples_val:
            val_loss, counts, _ = evaluate_pass(params, cfg, samples_val)
            rep = metrics(counts)
            val_f1, val_oa = rep.f1, rep.overall_accuracy
        else:
            val_loss, val_f1, val_oa = float("nan"), float("nan"), float("nan")
        rec = curve.append(loss_sum / pixel_sum, val_loss, val_f1, val_oa)
        msg = (f"epoch {epoch:3d}  train_loss {rec.train_loss:.4f}  val_loss {rec.val_loss:.4f}  "
               f"val_f1 {rec.val_f1:.4f}  val_oa {rec.val_oa:.4f}")
        log.info(msg)
        if progress:
            progress(msg)
        if ckdir is not None:
            save_checkpoint(params, cfg, ckdir / f"epoch_{epoch:03d}.ckpt")
        if best_params is None or (val_f1 > best_f1) or (np.isnan(best_f1) and not np.isnan(val_f1)):
            best_params, best_f1 = params.copy(), val_f1

    best_epoch = select_best_epoch(curve)
    best_path = None
    if ckdir is not None:
        best_path = ckdir / "best.ckpt"
        shutil.copyfile(ckdir / f"epoch_{best_epoch:03d}.ckpt", best_path)
        curve.to_csv(ckdir / "curve.csv")
    return PassArtifacts(best_params, cfg, curve, best_epoch, best_path)


def build_pass2_dataset(pass1: PassArtifacts, samples: Sequence[Sample]) -> List[Sample]:
    """Replace each image by pass-1's binary prediction as a 1-channel {0,1} tensor."""
    probs = predict_samples(pass1.params, pass1.cfg, [s.image for s in samples])
    return [Sample((p > 0.5).astype(np.float64)[None], s.mask, name=s.name)
            for p, s in zip(probs, samples)]


def train_pipeline(train: Sequence[Sample], val: Sequence[Sample], tcfg1: TrainConfig,
                   tcfg2: TrainConfig, base_channels: int = 16, depth: int = 4,
                   out_dir=None, progress=None) -> PipelineModel:
    out = Path(out_dir) if out_dir is not None else None
    cfg1 = NetConfig(in_channels=train[0].channels, base_channels=base_channels, depth=depth)
    cfg2 = NetConfig(in_channels=1, base_channels=base_channels, depth=depth)
    pass1 = train_pass(train, val, cfg1, tcfg1, out / "pass1" if out else None, progress)
    train2 = build_pass2_dataset(pass1, train)
    val2 = build_pass2_dataset(pass1, val)
    pass2 = train_pass(train2, val2, cfg2, tcfg2, out / "pass2" if out else None, progress)
    return PipelineModel(pass1, pass2)


# -- inference --------------------------------------------------------------

def _predict_patches(params, cfg, patches, threads, dtype):
    """Binary {0,1} predictions for every patch, order-preserving."""
    images = [p.pixels for p in patches]
    groups = [images[s:s + EVAL_BATCH] for s in range(0, len(images), EVAL_BATCH)]

    def run(group):
        y = predict_proba(params, cfg, np.stack(group), dtype=dtype)
        return [(m[0] > 0.5).astype(np.uint8) for m in y]

    if threads > 1 and len(groups) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, groups))
    else:
        results = [run(g) for g in groups]
    flat = [m for r in results for m in r]
    return [geotile.Patch(p.grid_col, p.grid_row, m) for p, m in zip(patches, flat)]


def infer_tile(model: PipelineModel, tile: Raster, patch: int = 256, pad_mode: str = "reflect",
               overlap: int = 0, threads: Optional[int] = None, dtype=np.float64,
               report: Optional[Dict[str, int]] = None) -> BinaryMask:
    """tile -> patches -> pass 1 -> merged mask -> patches -> pass 2 -> merged mask."""
    if tile.channels != model.pass1.cfg.in_channels:
        raise ValueError(f"tile has {tile.channels} channels, pass 1 expects "
                         f"{model.pass1.cfg.in_channels}")
    threads = threads or os.cpu_count() or 1

    grid, patches = geotile.split(tile.data, patch, pad_mode, overlap)
    for p in patches:
        p.pixels = p.pixels.transpose(2, 0, 1).astype(np.float64) / 255.0
    first = _predict_patches(model.pass1.params, model.pass1.cfg, patches, threads, dtype)
    intermediate = geotile.merge_patches(grid, first, as_mask=True)

    grid2, patches2 = geotile.split(intermediate.data, patch, pad_mode, overlap)
    for p in patches2:
        p.pixels = p.pixels.astype(np.float64)[None]
    second = _predict_patches(model.pass2.params, model.pass2.cfg, patches2, threads, dtype)
    if report is not None:
        report["pass1_patches"] = report.get("pass1_patches", 0) + len(first)
        report["pass2_patches"] = report.get("pass2_patches", 0) + len(second)
    return geotile.merge_patches(grid2, second, geo=tile.geo, crs=tile.crs, as_mask=True)


@dataclass
class CorpusResult:
    masks: Dict[str, BinaryMask]
    mosaic: Optional[BinaryMask]
    failures: Dict[str, str] = field(default_factory=dict)


def infer_corpus(model: PipelineModel, tile_paths: Sequence, out_dir=None, mosaic_path=None,
                 **infer_kw) -> CorpusResult:
    """Dual-pass inference over tiles, then a mosaic of every tile that succeeded.

    A failing tile is logged and skipped; callers check ``failures``.
    """
    if not tile_paths:
        raise ValueError("no tiles given")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    masks: Dict[str, BinaryMask] = {}
    failures: Dict[str, str] = {}
    for path in tile_paths:
        path = Path(path)
        try:
            mask = infer_tile(model, read_image(path), **infer_kw)
            if out is not None:
                write_image(mask, out / f"{path.stem}.pgm")
            masks[path.stem] = mask
        except Exception as exc:  # one bad tile must not stop the run
            log.error("tile %s failed: %s", path, exc)
            failures[str(path)] = f"{type(exc).__name__}: {exc}"
    mosaic = None
    georeferenced = [masks[k] for k in sorted(masks) if masks[k].geo is not None]
    if georeferenced:
        try:
            mosaic = geotile.mosaic_tiles(georeferenced)
        except ValueError as exc:
            failures["<mosaic>"] = f"{type(exc).__name__}: {exc}"
    if mosaic is not None and mosaic_path is not None:
        write_image(mosaic, mosaic_path)
    return CorpusResult(masks, mosaic, failures)
