"""Building blocks shared by the encoder and decoder.

All convolutional tensors are ``(B, C, H, W)``; token tensors are ``(B, N, C)``.
"""

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import DimensionError


def sincos_pos_embed_2d(dim, grid_h, grid_w):
    """Fixed 2-D sine-cosine embedding of shape ``(grid_h * grid_w, dim)``, row-major.

    The first half of the channels encodes the row, the second half the column.
    """
    if dim % 4:
        raise DimensionError(f"embedding dim {dim} must be divisible by 4")
    omega = 1.0 / 10000 ** (np.arange(dim // 4, dtype=np.float64) / (dim / 4.0))
    rows, cols = np.meshgrid(np.arange(grid_h, dtype=np.float64),
                             np.arange(grid_w, dtype=np.float64), indexing="ij")

    def encode(pos):
        out = np.outer(pos.reshape(-1), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    return np.concatenate([encode(rows), encode(cols)], axis=1)


class LayerNorm2d(nn.LayerNorm):
    """LayerNorm over the channel axis of a ``(B, C, H, W)`` tensor; no spatial statistics."""

    def forward(self, x):
        x = x.permute(0, 2, 3, 1)
        x = F.layer_norm(x, self.normalized_shape, self.weight, self.bias, self.eps)
        return x.permute(0, 3, 1, 2)


class PatchEmbed(nn.Module):
    """Non-overlapping patch embedding: a convolution with kernel == stride."""

    def __init__(self, in_dim, out_dim, stride):
        super().__init__()
        self.stride = stride
        self.proj = nn.Conv2d(in_dim, out_dim, kernel_size=stride, stride=stride)

    def forward(self, x):
        _, _, h, w = x.shape
        for axis, size in (("height", h), ("width", w)):
            if size % self.stride:
                raise DimensionError(
                    f"patch embedding input {axis} {size} is not divisible by stride {self.stride}"
                )
        return self.proj(x)


class MaskedConvBlock(nn.Module):
    """Conv-attention + FFN block that re-masks after every spatial operation.

    With ``mask`` shaped ``(B, 1, H, W)`` (1 = visible), the output at visible
    positions depends only on visible inputs and masked positions are exactly 0.
    """

    def __init__(self, dim, kernel_size=5, mlp_ratio=4):
        super().__init__()
        self.norm1 = LayerNorm2d(dim, eps=1e-6)
        self.dwconv = nn.Conv2d(dim, dim, kernel_size, padding=kernel_size // 2, groups=dim)
        self.pwconv = nn.Conv2d(dim, dim, 1)
        self.norm2 = LayerNorm2d(dim, eps=1e-6)
        hidden = dim * mlp_ratio
        self.fc1 = nn.Conv2d(dim, hidden, 1)
        self.act = nn.GELU()
        self.fc2 = nn.Conv2d(hidden, dim, 1)

    def forward(self, x, mask=None):
        if mask is not None and mask.shape[-2:] != x.shape[-2:]:
            raise DimensionError(
                f"mask block shape {tuple(mask.shape[-2:])} does not match feature shape {tuple(x.shape[-2:])}"
            )
        remask = (lambda t: t * mask) if mask is not None else (lambda t: t)
        h = remask(self.norm1(x))
        x = remask(x + self.pwconv(self.dwconv(h)))
        h = self.fc2(self.act(self.fc1(self.norm2(x))))
        return remask(x + h)


class Attention(nn.Module):
    """Multi-head self-attention.

    The inner width is ``heads * (dim // heads)`` so head counts that do not
    divide ``dim`` (512 dims with 12 heads) are still usable.
    """

    def __init__(self, dim, heads):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        inner = self.head_dim * heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, 3 * inner)
        self.proj = nn.Linear(inner, dim)

    def forward(self, x):
        b, n, _ = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, self.heads * self.head_dim)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class TransformerBlock(nn.Module):
    """Pre-norm ViT block."""

    def __init__(self, dim, heads, mlp_ratio=4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, dim * mlp_ratio)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


def init_weights(module):
    """Truncated-normal (std 0.02) linear weights, zero biases, fan-in scaled convs."""
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Conv2d):
        fan_in = module.weight[0].numel()
        bound = math.sqrt(3.0 / fan_in)
        nn.init.uniform_(module.weight, -bound, bound)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def pos_embed_like(dim, grid_h, grid_w, ref):
    return torch.as_tensor(sincos_pos_embed_2d(dim, grid_h, grid_w), dtype=ref.dtype, device=ref.device)
