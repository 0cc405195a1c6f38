"""Dual-encoder model with a plugged center-grouping stage and a reconstruction branch."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, broadcast_to, concat, gelu, parameter
from .config import ModelConfig
from .encoders import PatchEmbedding, RegionStage, TextEncoder, TransformerStack, unpatchify
from .grouping import MappingMatrix, SemanticGroup
from .losses import (LossBreakdown, MaskPlan, contrastive_loss, mse, plan_mask,
                     superpixel_kl_loss, total_loss)
from .nn import LayerNorm, Linear, Module
from .text import TextBatch

# attribute prefixes trained at the "pretrained" learning rate
PRETRAINED_PREFIXES = ("text.", "patch_embed.", "stage1.")


@dataclass
class ImageOutput:
    patch_features: Tensor  # H_p  [B, N, H]
    regions: Tensor  # pooled region features fed to the third stage [B, L, H]
    mapping: MappingMatrix
    region_features: Tensor  # Z_p [B, L, H]
    image_features: Tensor  # z_p [B, H]


class CenterSegModel(Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int, seed: int | None = None):
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        h, n = cfg.hidden, cfg.num_patches
        self.cfg = cfg
        self.text = TextEncoder(rng, vocab_size, cfg)
        self.patch_embed = PatchEmbedding(rng, cfg)
        self.stage1 = TransformerStack(rng, cfg, cfg.plug_layer)
        self.group = SemanticGroup(rng, cfg)
        self.stage3 = RegionStage(rng, cfg, cfg.third_stage_layers)
        self.logit_scale = parameter(math.log(cfg.logit_scale_init))
        # reconstruction branch
        self.restore = Linear(rng, cfg.centers, cfg.centers)
        self.rec_stage = TransformerStack(rng, cfg, cfg.third_stage_layers)
        self.decoder_embed = Linear(rng, h, h)
        self.mask_token = parameter(rng.normal(0, 0.02, h))
        self.decoder_pos = parameter(rng.normal(0, 0.02, (n, h)))
        self.decoder = TransformerStack(rng, cfg, cfg.decoder_layers)
        self.decoder_ln = LayerNorm(h)
        self.pixel_head = Linear(rng, h, 3 * cfg.patch_size**2, std=0.02)

    # -- parameter groups ----------------------------------------------------

    def parameter_groups(self) -> dict[str, list[tuple[str, Tensor]]]:
        groups: dict[str, list[tuple[str, Tensor]]] = {"pretrained": [], "fresh": []}
        for name, p in self.named_parameters():
            key = "pretrained" if name.startswith(PRETRAINED_PREFIXES) else "fresh"
            groups[key].append((name, p))
        return groups

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            if state[name].shape != p.data.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    # -- forward -------------------------------------------------------------

    def scale(self) -> Tensor:
        return self.logit_scale.exp().minimum(self.cfg.logit_scale_max)

    def encode_text(self, batch: TextBatch) -> Tensor:
        return self.text(batch)

    def encode_image(self, pixels: np.ndarray, rng: np.random.Generator | None = None,
                     training: bool = False) -> ImageOutput:
        patches = self.stage1(self.patch_embed(pixels))
        regions, mapping, _ = self.group(patches, rng, training)
        z, pooled = self.stage3(regions)
        return ImageOutput(patches, regions, mapping, z, pooled)

    def reconstruct(self, pixels: np.ndarray, plans: list[MaskPlan],
                    rng: np.random.Generator | None = None,
                    training: bool = False) -> tuple[Tensor, Tensor]:
        """Reconstruct images from their unmasked patches; returns (images, mse)."""
        cfg = self.cfg
        b = pixels.shape[0]
        visible = np.stack([p.unmasked_index for p in plans])
        masked = np.stack([p.masked for p in plans])
        n_vis = visible.shape[1]
        x = self.stage1(self.patch_embed(pixels, index=visible))
        regions, mapping, _ = self.group(x, rng, training)
        restored = gelu(self.restore(mapping.hard) @ regions)
        tokens = self.decoder_embed(self.rec_stage(restored))
        mask_tok = broadcast_to(self.mask_token.reshape(1, 1, -1), (b, 1, cfg.hidden))
        pool = concat([tokens, mask_tok], axis=1)
        gather = np.full((b, cfg.num_patches), n_vis, dtype=np.int64)
        gather[np.arange(b)[:, None], visible] = np.arange(n_vis)[None, :]
        full = pool[np.arange(b)[:, None], gather] + self.decoder_pos
        pred = self.pixel_head(self.decoder_ln(self.decoder(full)))
        images = unpatchify(pred, cfg.patch_size, cfg.grid, cfg.grid)
        if cfg.rec_masked_only:
            weight = masked.astype(np.float64).reshape(b, 1, cfg.grid, 1, cfg.grid, 1)
            weight = np.broadcast_to(
                weight, (b, 1, cfg.grid, cfg.patch_size, cfg.grid, cfg.patch_size)
            ).reshape(b, 1, cfg.image_size, cfg.image_size)
            loss = mse(images, pixels, weight)
        else:
            loss = mse(images, pixels)
        return images, loss

    def losses(self, pixels: np.ndarray, texts: TextBatch, group_avg: np.ndarray | None,
               rng: np.random.Generator, training: bool = True) -> LossBreakdown:
        """Forward every enabled objective for one batch."""
        cfg = self.cfg
        out = self.encode_image(pixels, rng, training)
        con = contrastive_loss(self.encode_text(texts), out.image_features, self.scale())
        rec = sup = Tensor(0.0)
        if cfg.enable_rec:
            plans = [plan_mask(cfg.num_patches, cfg.mask_rate, rng) for _ in range(pixels.shape[0])]
            _, rec = self.reconstruct(pixels, plans, rng, training)
        if cfg.enable_sup:
            if group_avg is None:
                raise ValueError("superpixel loss enabled but no super-patch groups given")
            sup = superpixel_kl_loss(out.mapping.probabilities(), group_avg)
        return total_loss(con, rec, sup, cfg.enable_rec, cfg.enable_sup)
