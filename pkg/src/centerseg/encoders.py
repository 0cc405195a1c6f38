"""Text encoder and the patch-level stages of the image encoder."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, parameter
from .config import ModelConfig
from .errors import ConfigError
from .nn import Block, LayerNorm, Linear, Module
from .text import TextBatch


def patchify(pixels: np.ndarray, patch_size: int) -> np.ndarray:
    """``[B, 3, H, W]`` -> ``[B, N, ps*ps*3]``; patches in raster order, pixels (row, col, channel)."""
    b, c, h, w = pixels.shape
    if h % patch_size or w % patch_size:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {patch_size}")
    rows, cols = h // patch_size, w // patch_size
    x = pixels.reshape(b, c, rows, patch_size, cols, patch_size)
    x = x.transpose(0, 2, 4, 3, 5, 1)
    return x.reshape(b, rows * cols, patch_size * patch_size * c)


def unpatchify(patches, patch_size: int, rows: int, cols: int, channels: int = 3):
    """Inverse of :func:`patchify`; works on arrays and on :class:`Tensor`."""
    b = patches.shape[0]
    x = patches.reshape(b, rows, cols, patch_size, patch_size, channels)
    x = x.transpose(0, 5, 1, 3, 2, 4)
    return x.reshape(b, channels, rows * patch_size, cols * patch_size)


class TextEncoder(Module):
    def __init__(self, rng: np.random.Generator, vocab_size: int, cfg: ModelConfig):
        h = cfg.hidden
        self.token_embedding = parameter(rng.normal(0, 0.02, (vocab_size, h)))
        self.position_embedding = parameter(rng.normal(0, 0.01, (cfg.text_len, h)))
        self.blocks = [Block(rng, h, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.text_layers)]
        self.ln_final = LayerNorm(h)

    def __call__(self, batch: TextBatch) -> Tensor:
        """Features read at each sequence's SEP position, ``[B, H]``."""
        ids = batch.token_ids
        x = self.token_embedding[ids] + self.position_embedding[: ids.shape[1]]
        mask = batch.key_mask
        for block in self.blocks:
            x = block(x, key_mask=mask)
        x = self.ln_final(x)
        return x[np.arange(ids.shape[0]), batch.sep_position]


class PatchEmbedding(Module):
    """Flattened patch pixels -> linear projection + learned per-position embedding."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.patch_size = cfg.patch_size
        self.proj = Linear(rng, 3 * cfg.patch_size**2, cfg.hidden)
        self.position = parameter(rng.normal(0, 0.02, (cfg.num_patches, cfg.hidden)))

    def __call__(self, pixels: np.ndarray, index: np.ndarray | None = None) -> Tensor:
        """Embed all patches, or only ``index`` (``[B, n]`` patch ids) when given."""
        patches = patchify(pixels, self.patch_size)
        if patches.shape[1] != self.position.shape[0]:
            raise ConfigError(
                f"got {patches.shape[1]} patches, model expects {self.position.shape[0]}"
            )
        if index is None:
            return self.proj(Tensor(patches)) + self.position
        rows = np.arange(patches.shape[0])[:, None]
        return self.proj(Tensor(patches[rows, index])) + self.position[index]


class TransformerStack(Module):
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, depth: int):
        self.blocks = [Block(rng, cfg.hidden, cfg.heads, cfg.mlp_ratio) for _ in range(depth)]

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class RegionStage(Module):
    """Transformer layers over region tokens, then max-pool into one image feature."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, depth: int):
        self.stack = TransformerStack(rng, cfg, depth)
        self.ln_post = LayerNorm(cfg.hidden)

    def __call__(self, regions: Tensor) -> tuple[Tensor, Tensor]:
        z = self.ln_post(self.stack(regions))
        return z, z.max(axis=-2)
