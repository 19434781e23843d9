"""Multi-scale encoder: two masked convolutional stages and a transformer stage.

Stage 1 yields F1 at H/4, stage 2 yields F2 at H/8, and stage 3 runs a ViT
over the visible tokens of the H/16 grid.  Every stage re-masks after each
spatial operation, so visible features never see masked pixels.
"""

import torch
import torch.nn as nn

from .layers import MaskedConvBlock, PatchEmbed, TransformerBlock, pos_embed_like


class MultiScaleEncoder(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        c1, c2, c3 = cfg.channels
        n1, n2, n3 = cfg.blocks
        s1, s2, s3 = cfg.patch_strides
        self.c3 = c3
        self.use_pos_embed = cfg.encoder_pos_embed

        self.patch_embed1 = PatchEmbed(cfg.in_channels, c1, s1)
        self.token_conv1 = nn.Conv2d(c1, c1, 1)
        self.blocks1 = nn.ModuleList(
            MaskedConvBlock(c1, cfg.conv_kernel, cfg.mlp_ratio) for _ in range(n1)
        )
        self.patch_embed2 = PatchEmbed(c1, c2, s2)
        self.token_conv2 = nn.Conv2d(c2, c2, 1)
        self.blocks2 = nn.ModuleList(
            MaskedConvBlock(c2, cfg.conv_kernel, cfg.mlp_ratio) for _ in range(n2)
        )
        self.patch_embed3 = PatchEmbed(c2, c3, s3)
        self.linear3 = nn.Linear(c3, c3)
        self.blocks3 = nn.ModuleList(
            TransformerBlock(c3, cfg.heads3, cfg.mlp_ratio) for _ in range(n3)
        )

    @staticmethod
    def _stage(x, embed, token_conv, blocks, mask):
        x = token_conv(embed(x))
        if mask is not None:
            x = x * mask
        for blk in blocks:
            x = blk(x, mask)
        return x

    def encode_stage1(self, images, mask_block1=None):
        """``(B, C, H, W)`` images -> F1 ``(B, C1, H/4, W/4)``."""
        return self._stage(images, self.patch_embed1, self.token_conv1, self.blocks1, mask_block1)

    def encode_stage2(self, f1, mask_block2=None):
        """F1 -> F2 ``(B, C2, H/8, W/8)``."""
        return self._stage(f1, self.patch_embed2, self.token_conv2, self.blocks2, mask_block2)

    def tokenize(self, f2):
        """F2 -> all N tokens ``(B, N, C3)`` in row-major order, plus the grid shape."""
        x = self.patch_embed3(f2)
        grid = x.shape[-2:]
        tokens = self.linear3(x.flatten(2).transpose(1, 2))
        return tokens, tuple(grid)

    def tokenize_select(self, f2, visible_ids=None):
        """Tokens gathered at ``visible_ids`` (``(B, Nv)``), preserving the given order."""
        tokens, grid = self.tokenize(f2)
        if visible_ids is None:
            return tokens, grid
        n = tokens.shape[1]
        if visible_ids.numel() and (int(visible_ids.min()) < 0 or int(visible_ids.max()) >= n):
            raise IndexError(f"visible token ID out of range for N={n}")
        index = visible_ids.unsqueeze(-1).expand(-1, -1, tokens.shape[-1])
        return torch.gather(tokens, 1, index), grid

    def encode_stage3(self, tokens, grid, ids=None):
        """Add positional embeddings at each token's grid position, then run the ViT blocks."""
        if self.use_pos_embed:
            pos = pos_embed_like(self.c3, grid[0], grid[1], tokens)
            if ids is None:
                tokens = tokens + pos.unsqueeze(0)
            else:
                tokens = tokens + pos[ids]
        for blk in self.blocks3:
            tokens = blk(tokens)
        return tokens

    def forward(self, images, masks=None):
        """Return ``(F1, F2, Ts)``.

        ``masks`` is ``None`` for the all-visible pass, otherwise a tuple
        ``(mask_block1, mask_block2, visible_ids)`` of batched tensors.
        """
        if masks is None:
            mask1 = mask2 = ids = None
        else:
            mask1, mask2, ids = masks
        f1 = self.encode_stage1(images, mask1)
        f2 = self.encode_stage2(f1, mask2)
        tokens, grid = self.tokenize_select(f2, ids)
        ts = self.encode_stage3(tokens, grid, ids)
        return f1, f2, ts
