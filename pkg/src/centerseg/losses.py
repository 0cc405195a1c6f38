"""Contrastive, masked-reconstruction and superpixel-KL objectives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, log_softmax, softmax
from .errors import ConfigError, InvalidInputError

KL_FLOOR = 1e-12


def l2_normalize(x: Tensor) -> Tensor:
    norms = np.sqrt((x.data * x.data).sum(axis=-1))
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise InvalidInputError("feature vector with zero (or non-finite) norm")
    return x / (x * x).sum(axis=-1, keepdims=True).sqrt()


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarity of the rows of ``a`` and ``b``."""
    return l2_normalize(as_tensor(a)) @ l2_normalize(as_tensor(b)).swapaxes(-1, -2)


def contrastive_loss(text_feats: Tensor, image_feats: Tensor, scale=1.0) -> Tensor:
    """Symmetric cross-entropy over the ``B x B`` scaled cosine-similarity matrix.

    ``scale`` multiplies the similarities before the softmax; it may be a
    float or a scalar :class:`Tensor` (learnable logit scale).
    """
    text_feats, image_feats = as_tensor(text_feats), as_tensor(image_feats)
    if text_feats.shape != image_feats.shape:
        raise InvalidInputError(f"feature shapes differ: {text_feats.shape} vs {image_feats.shape}")
    sims = cosine_similarity(text_feats, image_feats) * scale  # [text i, image j]
    b = sims.shape[0]
    diag = (np.arange(b), np.arange(b))
    # each image against all texts, each text against all images
    image_to_text = -log_softmax(sims, axis=0)[diag].mean()
    text_to_image = -log_softmax(sims, axis=1)[diag].mean()
    return (image_to_text + text_to_image) * 0.5


@dataclass
class MaskPlan:
    masked: np.ndarray  # bool [N]
    mask_rate: float

    @property
    def unmasked_index(self) -> np.ndarray:
        return np.flatnonzero(~self.masked)

    @property
    def masked_index(self) -> np.ndarray:
        return np.flatnonzero(self.masked)


def plan_mask(num_patches: int, mask_rate: float, rng: np.random.Generator) -> MaskPlan:
    if not 0.0 < mask_rate < 1.0:
        raise ConfigError(f"mask_rate={mask_rate} must lie in (0, 1)")
    count = int(np.floor(mask_rate * num_patches + 0.5))
    if count in (0, num_patches):
        raise ConfigError(f"mask_rate={mask_rate} masks {count} of {num_patches} patches")
    masked = np.zeros(num_patches, dtype=bool)
    masked[rng.permutation(num_patches)[:count]] = True
    return MaskPlan(masked, mask_rate)


def mse(prediction: Tensor, target: np.ndarray, weight: np.ndarray | None = None) -> Tensor:
    """Mean squared error; with ``weight`` (0/1, broadcastable) averages over selected entries."""
    diff = prediction - Tensor(target)
    sq = diff * diff
    if weight is None:
        return sq.mean()
    weight = np.broadcast_to(weight, sq.shape)
    return (sq * Tensor(weight)).sum() * (1.0 / weight.sum())


def _kl(p: Tensor, q: Tensor) -> Tensor:
    return (p * ((p + KL_FLOOR).log() - (q + KL_FLOOR).log())).sum(axis=-1)


def superpixel_kl_loss(probs: Tensor, group_avg: np.ndarray) -> Tensor:
    """Symmetric KL between each patch's center distribution and its super-patch's.

    ``probs`` is ``[..., N, L]`` with rows summing to one; ``group_avg`` is the
    ``[..., N, N]`` matrix averaging rows within each super-patch. The
    super-patch target is ``softmax`` of the averaged distribution. Batched
    inputs are averaged over the leading axis.
    """
    probs = as_tensor(probs)
    row_sums = probs.data.sum(axis=-1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise InvalidInputError("assignment rows must sum to 1")
    target = softmax(Tensor(group_avg) @ probs, axis=-1)
    n = probs.shape[-2]
    per_image = (_kl(probs, target) + _kl(target, probs)).sum(axis=-1) * (1.0 / (2 * n))
    return per_image.mean() if per_image.ndim else per_image


@dataclass
class LossBreakdown:
    con: Tensor
    rec: Tensor
    sup: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data) for k in ("con", "rec", "sup", "total")}


def total_loss(con, rec=0.0, sup=0.0, enable_rec: bool = True, enable_sup: bool = True) -> LossBreakdown:
    """Unweighted sum; disabled terms are reported and added as exact zeros."""
    con = as_tensor(con)
    rec = as_tensor(rec) if enable_rec else Tensor(0.0)
    sup = as_tensor(sup) if enable_sup else Tensor(0.0)
    return LossBreakdown(con, rec, sup, (con + rec) + sup)
