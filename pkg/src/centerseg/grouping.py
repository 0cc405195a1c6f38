"""Learnable-center grouping of patch features into regions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, broadcast_to, gumbel_softmax_hard, parameter, softmax
from .config import ModelConfig
from .nn import MLP, Block, Module


@dataclass
class MappingMatrix:
    """Patch-to-center assignment, ``[..., N, L]``."""

    hard: Tensor
    soft: Tensor
    logits: Tensor

    def probabilities(self) -> Tensor:
        """Noise-free assignment distribution ``softmax(logits)``."""
        return softmax(self.logits, axis=-1)

    def labels(self) -> np.ndarray:
        return np.argmax(self.hard.data, axis=-1)


def contextualize_centers(centers: Tensor, patches: Tensor, blocks: list[Block]) -> Tensor:
    """Cross-attend centers (queries) to patches (keys/values) through ``blocks``."""
    if not blocks:
        return centers
    lead = patches.shape[:-2]
    c = broadcast_to(centers, (*lead, *centers.shape[-2:])) if centers.ndim == 2 and lead else centers
    for block in blocks:
        c = block(c, context=patches)
    return c


def compute_assignment(patches: Tensor, centers: Tensor, temperature: float = 1.0,
                       rng: np.random.Generator | None = None,
                       training: bool = False) -> MappingMatrix:
    logits = patches @ centers.swapaxes(-1, -2)
    hard, soft = gumbel_softmax_hard(logits, temperature, rng, training)
    return MappingMatrix(hard, soft, logits)


def mean_pool(mapping: MappingMatrix, patches: Tensor) -> Tensor:
    """Per-center mean of assigned patch rows; empty centers pool to zero."""
    # integer patch counts; rounding keeps them exact when a frozen replay
    # perturbs the one-hot values by O(h)
    counts = np.rint(mapping.hard.data).sum(axis=-2)
    inv = 1.0 / np.maximum(counts, 1.0)
    return (mapping.hard.swapaxes(-1, -2) @ patches) * Tensor(inv[..., None])


def pool_regions(mapping: MappingMatrix, patches: Tensor, centers: Tensor, mlp: MLP) -> Tensor:
    return mlp(mean_pool(mapping, patches) + centers)


class SemanticGroup(Module):
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        h = cfg.hidden
        self.centers = parameter(rng.normal(0.0, cfg.center_std, (cfg.centers, h)))
        self.cross_blocks = [
            Block(rng, h, cfg.heads, cfg.mlp_ratio, cross=True) for _ in range(cfg.cross_attn_depth)
        ]
        self.mlp = MLP(rng, h, h * cfg.mlp_ratio)
        self.temperature = cfg.temperature

    def __call__(self, patches: Tensor, rng: np.random.Generator | None = None,
                 training: bool = False) -> tuple[Tensor, MappingMatrix, Tensor]:
        """Returns region features, the mapping matrix and the contextual centers."""
        ctx = contextualize_centers(self.centers, patches, self.cross_blocks)
        if ctx.ndim < patches.ndim:
            ctx = broadcast_to(ctx, (*patches.shape[:-2], *ctx.shape))
        mapping = compute_assignment(patches, ctx, self.temperature, rng, training)
        return pool_regions(mapping, patches, ctx, self.mlp), mapping, ctx
