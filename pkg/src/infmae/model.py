"""The full InfMAE network: mask generation, encoder, decoder and the F3->F4 neck."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .decoder import InfraredDecoder, masked_mse_loss
from .encoder import MultiScaleEncoder
from .exceptions import ConsistencyError, DimensionError
from .layers import init_weights
from .maskgen import TOKEN_SIZE, all_visible_plan, make_mask_plan, random_mask_plan


@dataclass
class PlanBatch:
    """Batched tensors derived from one MaskPlan per image."""

    mask_block1: torch.Tensor
    mask_block2: torch.Tensor
    visible_ids: torch.Tensor
    masked: torch.Tensor

    def encoder_masks(self):
        return self.mask_block1, self.mask_block2, self.visible_ids


def stack_plans(plans, dtype=torch.float32, device=None):
    nv = {p.n_visible for p in plans}
    grids = {p.grid_shape for p in plans}
    if len(nv) != 1 or len(grids) != 1:
        raise ConsistencyError("all plans in a batch must share grid shape and visible count")

    def as_t(arrays, kind):
        return torch.as_tensor(np.stack(arrays), dtype=kind, device=device)

    masked = np.ones((len(plans), plans[0].n_tokens), dtype=np.float64)
    for row, p in zip(masked, plans):
        row[p.visible_ids] = 0.0
    return PlanBatch(
        mask_block1=as_t([p.mask_block1 for p in plans], dtype).unsqueeze(1),
        mask_block2=as_t([p.mask_block2 for p in plans], dtype).unsqueeze(1),
        visible_ids=as_t([p.visible_ids for p in plans], torch.long),
        masked=as_t(list(masked), dtype),
    )


def to_nchw(images, dtype=torch.float32):
    """``(B, H, W, C)`` numpy/tensor -> ``(B, C, H, W)`` tensor."""
    if isinstance(images, torch.Tensor):
        x = images.to(dtype)
    else:
        x = torch.as_tensor(np.asarray(images), dtype=dtype)
    if x.ndim == 3:
        x = x.unsqueeze(-1)
    if x.ndim != 4:
        raise DimensionError(f"expected (B, H, W, C) images, got shape {tuple(x.shape)}")
    return x.permute(0, 3, 1, 2).contiguous()


class InfMAENet(nn.Module):
    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.encoder = MultiScaleEncoder(cfg)
            self.decoder = InfraredDecoder(cfg)
            c3 = cfg.channels[2]
            self.neck = nn.Conv2d(c3, cfg.out_c4, kernel_size=2, stride=2)
            if cfg.learned_gray_conv:
                self.gray_conv = nn.Conv2d(cfg.in_channels, cfg.in_channels, TOKEN_SIZE, TOKEN_SIZE, bias=False)
            else:
                self.gray_conv = None
            self.apply(init_weights)
            nn.init.normal_(self.decoder.mask_token, std=0.02)
            if self.gray_conv is not None:
                nn.init.constant_(self.gray_conv.weight, 1.0 / (TOKEN_SIZE * TOKEN_SIZE * cfg.in_channels))

    def pretrain_parameters(self):
        """Named parameters that the reconstruction loss depends on."""
        return [(n, p) for n, p in self.named_parameters()
                if n.startswith("encoder.") or n.startswith("decoder.")]

    def make_plans(self, images, rng=None):
        """One MaskPlan per ``(H, W, C)`` image (numpy, channel-last)."""
        images = np.asarray(images, dtype=np.float64)
        kernel = None
        if self.gray_conv is not None:
            kernel = self.gray_conv.weight.detach().cpu().double().numpy()
        s = self.cfg.mask_stride
        if self.cfg.masking == "random":
            gh, gw = images.shape[1] // TOKEN_SIZE, images.shape[2] // TOKEN_SIZE
            rng = np.random.default_rng(rng)
            return [random_mask_plan(gh, gw, s, rng) for _ in images]
        return [make_mask_plan(im, s, kernel=kernel) for im in images]

    def forward_encoder(self, x, plans=None):
        """``x`` is ``(B, C, H, W)``.  With ``plans=None`` every token is visible."""
        if plans is None:
            return self.encoder(x)
        batch = stack_plans(plans, dtype=x.dtype, device=x.device)
        return self.encoder(x, batch.encoder_masks())

    def forward_pretrain(self, x, plans):
        batch = stack_plans(plans, dtype=x.dtype, device=x.device)
        f1, f2, ts = self.encoder(x, batch.encoder_masks())
        pred, _ = self.decoder(f1, f2, ts, batch.visible_ids)
        loss = masked_mse_loss(pred, x, batch.masked, self.cfg.normalize_pix, self.cfg.loss_mode)
        return loss, pred

    def downsample_f3(self, f3):
        h, w = f3.shape[-2:]
        if h % 2 or w % 2:
            raise DimensionError(f"F3 spatial dims {h}x{w} must be even to downsample")
        return self.neck(f3)

    def pyramid(self, x):
        """All-visible pass returning ``(F1, F2, F3, F4)`` as NCHW tensors."""
        h, w = x.shape[-2:]
        for axis, size in (("height", h), ("width", w)):
            if size % 32:
                raise DimensionError(f"pyramid input {axis} {size} is not a multiple of 32")
        f1, f2, ts = self.encoder(x)
        gh, gw = h // TOKEN_SIZE, w // TOKEN_SIZE
        f3 = ts.transpose(1, 2).reshape(ts.shape[0], ts.shape[2], gh, gw)
        return f1, f2, f3, self.downsample_f3(f3)


def full_plans(batch_size, grid_h, grid_w):
    plan = all_visible_plan(grid_h, grid_w)
    return [plan] * batch_size
