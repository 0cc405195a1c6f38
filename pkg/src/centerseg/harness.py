"""Training loop, evaluation over a manifest, and ablation sweeps."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pnm
from .autodiff import no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig
from .data import DatasetManifest
from .errors import ConfigError, InvalidInputError
from .inference import IoUReport, LabelSet, label_features, miou, segment
from .model import CenterSegModel
from .optim import Adam, AdamState, ParamGroup
from .superpixel import (group_average_matrix, read_cache, segment_image,
                         super_patch_groups, write_cache)
from .text import TextBatch, Vocab

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "con", "rec", "sup", "total", "lr_pretrained", "lr_fresh"]


class TrainingError(RuntimeError):
    pass


def superpixel_cache_path(manifest: DatasetManifest, i: int) -> Path:
    entry = manifest.entries[i]
    if entry.superpixel:
        return manifest.path(entry.superpixel)
    return manifest.root / "superpixels" / (Path(entry.image).stem + ".sp")


def build_superpixels(manifest: DatasetManifest, cfg: ModelConfig, force: bool = False) -> int:
    """Compute missing superpixel caches; returns how many were written."""
    written = 0
    for i, entry in enumerate(manifest.entries):
        path = superpixel_cache_path(manifest, i)
        if not entry.superpixel:
            entry.superpixel = str(path.relative_to(manifest.root))
        if path.exists() and not force:
            continue
        path.parent.mkdir(parents=True, exist_ok=True)
        labeling = segment_image(manifest.load_image(i), cfg.sp_sigma, cfg.sp_k, cfg.sp_min_size)
        write_cache(path, labeling)
        written += 1
    return written


def load_group_matrices(manifest: DatasetManifest, cfg: ModelConfig) -> np.ndarray:
    mats = []
    for i in range(len(manifest)):
        path = superpixel_cache_path(manifest, i)
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            img = manifest.load_image(i)
            write_cache(path, segment_image(img, cfg.sp_sigma, cfg.sp_k, cfg.sp_min_size))
        labels, _ = super_patch_groups(read_cache(path).pixel_ids, cfg.patch_size)
        mats.append(group_average_matrix(labels))
    return np.stack(mats)


def build_vocab(manifest: DatasetManifest, template: str = "a photo of a {}.") -> Vocab:
    corpus = [manifest.load_caption(i) for i in range(len(manifest))]
    corpus += [template.format(n) for n in manifest.class_names]
    return Vocab.build(corpus)


def total_steps(cfg: ModelConfig, n_samples: int) -> int:
    if cfg.steps > 0:
        return cfg.steps
    return max(1, cfg.epochs * math.ceil(n_samples / cfg.batch_size))


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class Dataset:
    pixels: np.ndarray
    texts: TextBatch
    groups: np.ndarray | None


class Trainer:
    def __init__(self, cfg: ModelConfig, manifest: DatasetManifest, out_dir: str | Path,
                 vocab: Vocab | None = None):
        self.cfg = cfg
        self.manifest = manifest
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.vocab = vocab or build_vocab(manifest)
        self.data = self._load_data()
        self.model = CenterSegModel(cfg, len(self.vocab))
        self.total_steps = total_steps(cfg, len(manifest))
        groups = self.model.parameter_groups()
        self.group_names = {k: [n for n, _ in v] for k, v in groups.items()}
        self.optimizer = Adam(
            [
                ParamGroup("pretrained", [p for _, p in groups["pretrained"]], cfg.lr_pretrained),
                ParamGroup("fresh", [p for _, p in groups["fresh"]], cfg.lr_fresh),
            ],
            self.total_steps,
        )
        self.rng = np.random.default_rng(cfg.seed + 1)
        self.step = 0

    def _load_data(self) -> Dataset:
        m = self.manifest
        pixels = np.stack([m.load_image(i) for i in range(len(m))])
        size = self.cfg.image_size
        if pixels.shape[2:] != (size, size):
            raise ValueError(f"images are {pixels.shape[2:]}, config expects {size}x{size}")
        texts = TextBatch.from_texts([m.load_caption(i) for i in range(len(m))],
                                     self.vocab, self.cfg.text_len)
        groups = load_group_matrices(m, self.cfg) if self.cfg.enable_sup else None
        return Dataset(pixels, texts, groups)

    # -- state ---------------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        optim, ts = {}, {}
        for g in self.optimizer.groups:
            names = self.group_names[g.name]
            for name, s in zip(names, g.state):
                optim[f"{name}/m"] = s.m.copy()
                optim[f"{name}/v"] = s.v.copy()
                ts[name] = s.t
        return Checkpoint(self.cfg, self.model.state_dict(), self.step, optim, ts,
                          self.rng.bit_generator.state, list(self.vocab.tokens))

    def restore(self, ckpt: Checkpoint) -> None:
        self.model.load_state_dict(ckpt.params)
        for g in self.optimizer.groups:
            names = self.group_names[g.name]
            g.state = [AdamState(ckpt.optimizer[f"{n}/m"].copy(), ckpt.optimizer[f"{n}/v"].copy(),
                                 ckpt.optimizer_t[n]) for n in names]
        self.rng.bit_generator.state = ckpt.rng_state
        self.step = ckpt.step
        self.optimizer.step_count = ckpt.step

    @classmethod
    def resume(cls, path: str | Path, manifest: DatasetManifest, out_dir: str | Path) -> "Trainer":
        ckpt = load_checkpoint(path)
        trainer = cls(ckpt.config, manifest, out_dir, Vocab(ckpt.vocab[2:-1]))
        trainer.restore(ckpt)
        return trainer

    # -- loop ----------------------------------------------------------------

    def train_step(self):
        cfg = self.cfg
        n = len(self.manifest)
        idx = self.rng.choice(n, size=min(cfg.batch_size, n), replace=False)
        texts = TextBatch(self.data.texts.token_ids[idx], self.data.texts.lengths[idx])
        groups = None if self.data.groups is None else self.data.groups[idx]
        self.optimizer.zero_grad()
        try:
            losses = self.model.losses(self.data.pixels[idx], texts, groups, self.rng, training=True)
        except InvalidInputError as exc:  # non-finite features are caught before the loss
            self._abort(idx, str(exc))
        values = losses.values()
        if not all(math.isfinite(v) for v in values.values()):
            self._abort(idx, f"non-finite loss {values}")
        losses.total.backward()
        lrs = self.optimizer.step()
        self.step += 1
        return values, lrs

    def _abort(self, idx: np.ndarray, reason: str):
        dump = self.out / f"nan_batch_step{self.step + 1}.npz"
        np.savez(dump, indices=idx)
        raise TrainingError(
            f"{reason} at step {self.step + 1}; batch indices {idx.tolist()} saved to {dump}"
        )

    def fit(self, steps: int | None = None, checkpoint_every: int = 0,
            metrics_name: str = "metrics.csv") -> Path:
        """Run until ``steps`` (default: the configured total); appends to the metrics CSV."""
        stop = self.total_steps if steps is None else min(steps, self.total_steps)
        metrics = self.out / metrics_name
        new = not metrics.exists() or self.step == 0
        with metrics.open("w" if new else "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new:
                writer.writerow(METRIC_COLUMNS)
                self._log_partition()
            while self.step < stop:
                values, lrs = self.train_step()
                writer.writerow([self.step] + [_fmt(values[k]) for k in ("con", "rec", "sup", "total")]
                                + [_fmt(lrs["pretrained"]), _fmt(lrs["fresh"])])
                if checkpoint_every and self.step % checkpoint_every == 0:
                    save_checkpoint(self.out / f"step{self.step:06d}.ckpt", self.checkpoint())
        save_checkpoint(self.out / "final.ckpt", self.checkpoint())
        return metrics

    def _log_partition(self) -> None:
        with (self.out / "param_groups.txt").open("w") as fh:
            for group, names in self.group_names.items():
                for name in names:
                    fh.write(f"{group}\t{name}\n")


def train(cfg: ModelConfig, manifest: DatasetManifest, out_dir: str | Path,
          checkpoint_every: int = 0) -> Path:
    trainer = Trainer(cfg, manifest, out_dir)
    trainer.fit(checkpoint_every=checkpoint_every)
    return Path(out_dir) / "final.ckpt"


# -- evaluation -------------------------------------------------------------------

PALETTE_RGB = np.array([
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25), (145, 30, 180),
    (245, 130, 48), (70, 240, 240), (240, 50, 230), (210, 245, 60), (128, 128, 0),
], dtype=np.uint8)


def colorize(classes: np.ndarray) -> np.ndarray:
    rgb = np.zeros((*classes.shape, 3), dtype=np.uint8)
    fg = classes >= 0
    rgb[fg] = PALETTE_RGB[classes[fg] % len(PALETTE_RGB)]
    return rgb


def load_model(path: str | Path) -> tuple[CenterSegModel, Vocab]:
    ckpt = load_checkpoint(path)
    vocab = Vocab(ckpt.vocab[2:-1])
    model = CenterSegModel(ckpt.config, len(vocab))
    model.load_state_dict(ckpt.params)
    return model, vocab


@dataclass
class EvalResult:
    report: IoUReport
    predictions: list[np.ndarray]
    ground_truth: list[np.ndarray]


def evaluate(checkpoint: str | Path, manifest: DatasetManifest, labels: list[str] | None = None,
             threshold: float | None = None, out_dir: str | Path | None = None,
             bypass: bool = False, include_background: bool | None = None) -> EvalResult:
    """Segment every manifest image and aggregate IoU counts over the dataset.

    ``bypass`` scores the ground truth against itself (harness self-check).
    """
    model, vocab = load_model(checkpoint)
    cfg = model.cfg
    names = labels or manifest.class_names
    label_set = LabelSet(list(names))
    thr = cfg.threshold if threshold is None else threshold
    bg = cfg.include_background if include_background is None else include_background
    feats = label_features(label_set, model, vocab)
    out = Path(out_dir) if out_dir else None
    if out:
        (out / "masks").mkdir(parents=True, exist_ok=True)
        (out / "masks" / "labels.txt").write_text(
            "".join(f"{i}\t{n}\n" for i, n in enumerate(label_set.names)) + "-1\tbackground\n")
    report = None
    preds, gts = [], []
    for i in range(len(manifest)):
        gt = manifest.load_mask(i)
        if bypass:
            pred = gt.copy()
        else:
            with no_grad():
                pred = segment(model, manifest.load_image(i), feats, thr).pixel_classes
        r = miou(pred, gt, len(label_set.names), bg, label_set.names)
        report = r if report is None else report + r
        preds.append(pred)
        gts.append(gt)
        if out:
            stem = Path(manifest.entries[i].image).stem
            pnm.write_ppm(out / "masks" / f"{stem}.ppm", colorize(pred))
    if out:
        report.write_csv(out / "iou.csv")
    return EvalResult(report, preds, gts)


def permutation_baseline(preds: list[np.ndarray], gts: list[np.ndarray], num_classes: int,
                         include_background: bool = True, rounds: int = 20,
                         seed: int = 0) -> float:
    """mIoU after shuffling predicted labels across pixels within each image.

    Keeps each image's predicted class histogram while destroying spatial
    agreement; the mean over ``rounds`` shuffles estimates the chance level.
    """
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(rounds):
        total = None
        for p, g in zip(preds, gts):
            shuffled = rng.permutation(p.ravel()).reshape(p.shape)
            r = miou(shuffled, g, num_classes, include_background)
            total = r if total is None else total + r
        scores.append(total.miou)
    return float(np.mean(scores))


# -- sweeps -----------------------------------------------------------------------

SWEEP_KEYS = ("plug_layer", "centers", "cross_attn_depth", "enable_rec", "enable_sup")


def expand_grid(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of the axes.

    A key like ``"enable_rec+enable_sup"`` is one joint axis whose values are
    ``"false+false"`` strings or tuples, setting several keys together.
    """
    axes = []
    for key, values in grid.items():
        names = key.split("+")
        options = []
        for v in values:
            parts = v.split("+") if isinstance(v, str) else list(v) if isinstance(v, (list, tuple)) else [v]
            if len(parts) != len(names):
                raise ConfigError(f"axis {key!r}: value {v!r} does not set {len(names)} keys")
            options.append(dict(zip(names, parts)))
        axes.append(options)
    cells = []
    for combo in itertools.product(*axes):
        cell = {}
        for part in combo:
            cell.update(part)
        cells.append(cell)
    return cells


def run_cell(args) -> dict:
    base, cell, manifest_path, out_dir = args
    row = {k: cell.get(k, getattr(base, k)) for k in SWEEP_KEYS}
    row.update({k: v for k, v in cell.items() if k not in row})
    try:
        cfg = ModelConfig.from_dict(cell, base)
        manifest = DatasetManifest.load(manifest_path)
        ckpt = train(cfg, manifest, out_dir)
        result = evaluate(ckpt, manifest, out_dir=Path(out_dir) / "eval")
        row.update(miou=result.report.miou, status="ok")
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        log.exception("sweep cell %s failed", cell)
        row.update(miou=float("nan"), status=f"error: {type(exc).__name__}: {exc}")
    return row


def sweep(base: ModelConfig, grid: dict[str, list], manifest_path: str | Path,
          out_dir: str | Path, jobs: int = 1) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = expand_grid(grid)
    tasks = [(base, cell, str(manifest_path), str(out / f"cell{i:03d}")) for i, cell in enumerate(cells)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, tasks))
    else:
        rows = [run_cell(t) for t in tasks]
    extra = [k for key in grid for k in key.split("+") if k not in SWEEP_KEYS]
    columns = list(SWEEP_KEYS) + extra + ["miou", "status"]
    target = out / "sweep.csv"
    with target.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return target
