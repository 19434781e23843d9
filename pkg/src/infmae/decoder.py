"""Infrared decoder and the masked reconstruction loss."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import ConsistencyError, DimensionError
from .layers import TransformerBlock, pos_embed_like

PATCH = 16


def patchify(images, patch=PATCH):
    """``(B, C, H, W)`` -> ``(B, N, patch*patch*C)``; rows are row-major tokens,
    pixels inside a row are ordered (y, x, channel)."""
    b, c, h, w = images.shape
    if h % patch or w % patch:
        axis = "height" if h % patch else "width"
        raise DimensionError(f"image {axis} {h if h % patch else w} is not a multiple of {patch}")
    gh, gw = h // patch, w // patch
    x = images.reshape(b, c, gh, patch, gw, patch)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(b, gh * gw, patch * patch * c)


def unpatchify(patches, grid_shape, channels, patch=PATCH):
    b, n, p = patches.shape
    gh, gw = grid_shape
    if n != gh * gw or p != patch * patch * channels:
        raise DimensionError(
            f"cannot unpatchify {tuple(patches.shape)} into a {gh}x{gw} grid with {channels} channels"
        )
    x = patches.reshape(b, gh, gw, patch, patch, channels)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, channels, gh * patch, gw * patch)


def masked_mse_loss(pred, images, masked, normalize_pix=False, mode="masked_mean"):
    """Squared error over the pixels of masked patches only.

    ``masked`` is a ``(B, N)`` 0/1 tensor with 1 on masked tokens.  In
    ``"masked_mean"`` mode the sum is divided by the number of masked pixels;
    ``"per_image"`` divides by the batch size instead.
    """
    target = patchify(images)
    if pred.shape != target.shape:
        raise ConsistencyError(
            f"prediction shape {tuple(pred.shape)} does not match target {tuple(target.shape)}"
        )
    if masked.shape != pred.shape[:2]:
        raise ConsistencyError(
            f"mask shape {tuple(masked.shape)} does not match prediction rows {tuple(pred.shape[:2])}"
        )
    if normalize_pix:
        mean = target.mean(dim=-1, keepdim=True)
        var = target.var(dim=-1, keepdim=True)
        target = (target - mean) / (var + 1e-6) ** 0.5
    masked = masked.to(pred.dtype)
    err = ((pred - target) ** 2).sum(dim=-1)
    total = (err * masked).sum()
    if mode == "per_image":
        return total / pred.shape[0]
    count = masked.sum() * pred.shape[-1]
    return total / count.clamp_min(1)


class InfraredDecoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c1, c2, c3 = cfg.channels
        self.dim = cfg.decoder_dim
        self.proj1 = nn.Linear(c1, c3)
        self.proj2 = nn.Linear(c2, c3)
        self.fuse = nn.Linear(c3, cfg.decoder_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.decoder_dim))
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.decoder_dim, cfg.decoder_heads, cfg.mlp_ratio)
            for _ in range(cfg.decoder_depth)
        )
        self.norm = nn.LayerNorm(cfg.decoder_dim, eps=1e-6)
        self.head = nn.Linear(cfg.decoder_dim, PATCH * PATCH * cfg.in_channels)

    def project_multiscale_tokens(self, f1, f2):
        """Block-average F1 by 4 and F2 by 2 to the token grid, project to C3, flatten."""
        g1 = (f1.shape[-2] // 4, f1.shape[-1] // 4)
        g2 = (f2.shape[-2] // 2, f2.shape[-1] // 2)
        if f1.shape[-2] % 4 or f1.shape[-1] % 4 or f2.shape[-2] % 2 or f2.shape[-1] % 2 or g1 != g2:
            raise DimensionError(
                f"F1 {tuple(f1.shape[-2:])} and F2 {tuple(f2.shape[-2:])} do not reduce to one token grid"
            )
        p1 = F.avg_pool2d(f1, 4).flatten(2).transpose(1, 2)
        p2 = F.avg_pool2d(f2, 2).flatten(2).transpose(1, 2)
        return self.proj1(p1), self.proj2(p2), g1

    def fuse_and_restore(self, t1, t2, ts, visible_ids, grid):
        """Sum the visible pathways, scatter them among mask tokens in canonical order,
        and add decoder position embeddings.  Returns ``(tokens, visible_flags)``."""
        b, n, c3 = t1.shape
        if visible_ids is None:
            visible_ids = torch.arange(n, device=t1.device).expand(b, n)
        if ts.shape[:2] != visible_ids.shape:
            raise ConsistencyError(
                f"Ts has {ts.shape[1]} rows but the plan lists {visible_ids.shape[1]} visible IDs"
            )
        idx = visible_ids.unsqueeze(-1)
        summed = torch.gather(t1, 1, idx.expand(-1, -1, c3)) + torch.gather(t2, 1, idx.expand(-1, -1, c3)) + ts
        visible = self.fuse(summed)
        full = self.mask_token.to(visible.dtype).expand(b, n, self.dim)
        full = torch.scatter(full, 1, idx.expand(-1, -1, self.dim), visible)
        flags = torch.zeros(b, n, dtype=torch.uint8, device=t1.device)
        flags.scatter_(1, visible_ids, 1)
        pos = pos_embed_like(self.dim, grid[0], grid[1], full)
        return full + pos.unsqueeze(0), flags

    def decode_tokens(self, tokens):
        for blk in self.blocks:
            tokens = blk(tokens)
        return self.head(self.norm(tokens))

    def forward(self, f1, f2, ts, visible_ids):
        t1, t2, grid = self.project_multiscale_tokens(f1, f2)
        fused, flags = self.fuse_and_restore(t1, t2, ts, visible_ids, grid)
        return self.decode_tokens(fused), flags
