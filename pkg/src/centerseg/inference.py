"""Open-vocabulary segmentation from region/label similarities, and mIoU."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, no_grad
from .errors import InvalidInputError
from .losses import cosine_similarity
from .text import TextBatch, Vocab, unknown_words

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "a photo of a {}."


@dataclass
class LabelSet:
    names: list[str]
    prompt_template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if not self.names:
            raise InvalidInputError("label set is empty")
        if len(set(self.names)) != len(self.names):
            raise InvalidInputError(f"duplicate label names in {self.names}")
        if self.prompt_template.count("{}") != 1:
            raise InvalidInputError("prompt template needs exactly one {} placeholder")

    def prompts(self) -> list[str]:
        return [self.prompt_template.format(n) for n in self.names]


@dataclass
class SegmentationResult:
    pixel_classes: np.ndarray  # [H, W], -1 = background
    pixel_similarity: np.ndarray  # [T, H, W]
    patch_similarity: np.ndarray  # S [N, T]
    region_similarity: np.ndarray  # S_hat [L, T]
    assignment: np.ndarray  # hard mapping [N, L]


def label_features(labels: LabelSet, model, vocab: Vocab) -> Tensor:
    prompts = labels.prompts()
    for p in prompts:
        missing = unknown_words(p, vocab)
        if missing:
            log.warning("prompt %r has out-of-vocabulary words %s (mapped to UNK)", p, missing)
    batch = TextBatch.from_texts(prompts, vocab, model.cfg.text_len)
    with no_grad():
        return model.encode_text(batch)


def region_similarity(region_feats, label_feats) -> np.ndarray:
    """Cosine similarity between each region row and each label row, ``[L, T]``."""
    regions = region_feats.data if isinstance(region_feats, Tensor) else region_feats
    labels = label_feats.data if isinstance(label_feats, Tensor) else label_feats
    with no_grad():
        return cosine_similarity(Tensor(regions), Tensor(labels)).data


def patch_similarity(hard: np.ndarray, region_sim: np.ndarray) -> np.ndarray:
    """``S = M @ S_hat``: each patch takes its region's row."""
    return np.asarray(hard) @ np.asarray(region_sim)


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation matrix ``[n_out, n_in]`` (half-pixel centres, edge clamped)."""
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    w = np.zeros((n_out, n_in))
    np.add.at(w, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(w, (np.arange(n_out), hi), frac)
    return w


def upsample_similarity(patch_sim: np.ndarray, grid: tuple[int, int],
                        size: tuple[int, int]) -> np.ndarray:
    """``[N, T]`` patch scores -> ``[T, H, W]`` by bilinear interpolation."""
    rows, cols = grid
    n, t = patch_sim.shape
    if rows * cols != n:
        raise InvalidInputError(f"grid {rows}x{cols} does not hold {n} patches")
    maps = patch_sim.T.reshape(t, rows, cols)
    wy = _bilinear_weights(rows, size[0])
    wx = _bilinear_weights(cols, size[1])
    return np.einsum("hr,trc,wc->thw", wy, maps, wx)


def assign_pixels(pixel_sim: np.ndarray, threshold: float) -> np.ndarray:
    """Best class per pixel (lowest index on ties), -1 where it scores below ``threshold``."""
    best = np.argmax(pixel_sim, axis=0)
    top = np.take_along_axis(pixel_sim, best[None], axis=0)[0]
    return np.where(top >= threshold, best, -1)


def segment(model, pixels: np.ndarray, label_feats, threshold: float) -> SegmentationResult:
    """Eval-mode segmentation of one ``[3, H, W]`` image."""
    cfg = model.cfg
    with no_grad():
        out = model.encode_image(pixels[None], training=False)
    region_sim = region_similarity(out.region_features.data[0], label_feats)
    hard = out.mapping.hard.data[0]
    patch_sim = patch_similarity(hard, region_sim)
    pixel_sim = upsample_similarity(patch_sim, (cfg.grid, cfg.grid), pixels.shape[1:])
    return SegmentationResult(assign_pixels(pixel_sim, threshold), pixel_sim, patch_sim,
                              region_sim, hard)


# -- mIoU ------------------------------------------------------------------------


@dataclass
class IoUReport:
    class_names: list[str]
    intersection: np.ndarray
    union: np.ndarray

    @property
    def per_class_iou(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.union > 0, self.intersection / np.maximum(self.union, 1), np.nan)

    @property
    def miou(self) -> float:
        iou = self.per_class_iou
        present = self.union > 0
        return float(iou[present].mean()) if present.any() else float("nan")

    def __add__(self, other: "IoUReport") -> "IoUReport":
        if self.class_names != other.class_names:
            raise ValueError("cannot merge reports over different classes")
        return IoUReport(self.class_names, self.intersection + other.intersection,
                         self.union + other.union)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "intersection", "union", "iou"])
            for name, i, u, iou in zip(self.class_names, self.intersection, self.union,
                                       self.per_class_iou):
                w.writerow([name, int(i), int(u), "" if np.isnan(iou) else f"{iou:.6f}"])
            w.writerow(["miou", "", "", f"{self.miou:.6f}"])


def iou_counts(pred: np.ndarray, gt: np.ndarray, num_classes: int,
               include_background: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-class intersection and union counts; background (-1) is the last slot if included."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    k = num_classes + 1
    p = np.where(pred < 0, num_classes, pred).ravel()
    g = np.where(gt < 0, num_classes, gt).ravel()
    if p.max(initial=0) >= k or g.max(initial=0) >= k:
        raise InvalidInputError("class index out of range")
    conf = np.bincount(g * k + p, minlength=k * k).reshape(k, k)
    inter = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - inter
    if not include_background:
        return inter[:num_classes], union[:num_classes]
    return inter, union


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int, include_background: bool = True,
         class_names: list[str] | None = None) -> IoUReport:
    inter, union = iou_counts(pred, gt, num_classes, include_background)
    names = list(class_names) if class_names else [str(c) for c in range(num_classes)]
    if include_background:
        names = names + ["background"]
    return IoUReport(names, inter, union)
