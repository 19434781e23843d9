"""Reconstruction previews and mask debug images."""

from pathlib import Path

import numpy as np
import torch

from .decoder import patchify, unpatchify
from .io import save_png
from .model import to_nchw
from .validation import check_image, check_spatial_multiple

GRAY = 0.5
GAP = 4


def reconstruct(model, image, plan=None):
    """Predicted image for one ``(H, W, C)`` input; masked patches come from the decoder,
    visible patches are copied from the input.  Returns ``(reconstruction, plan)``."""
    img = check_image(image)
    check_spatial_multiple(img.shape, 16)
    if plan is None:
        plan = model.make_plans(img[None])[0]
    dtype = next(model.parameters()).dtype
    x = to_nchw(img[None], dtype=dtype)
    model.eval()
    with torch.no_grad():
        _, pred = model.forward_pretrain(x, [plan])
        target = patchify(x)
        if model.cfg.normalize_pix:
            mean = target.mean(dim=-1, keepdim=True)
            std = (target.var(dim=-1, keepdim=True) + 1e-6) ** 0.5
            pred = pred * std + mean
        keep = torch.zeros(pred.shape[1], dtype=torch.bool)
        keep[torch.as_tensor(plan.visible_ids)] = True
        merged = torch.where(keep[None, :, None], target, pred)
        out = unpatchify(merged, plan.grid_shape, img.shape[2])
    return out[0].permute(1, 2, 0).double().numpy(), plan


def masked_input(image, plan):
    """The input with every masked 16x16 region painted gray."""
    img = check_image(image).copy()
    cover = np.repeat(np.repeat(plan.template, 16, axis=0), 16, axis=1).astype(bool)
    img[~cover] = GRAY
    return img


def triptych(image, plan, reconstruction):
    """original | masked input | reconstruction, side by side with white gaps."""
    img = check_image(image)
    h, _, c = img.shape
    gap = np.ones((h, GAP, c))
    panels = [img, masked_input(img, plan), np.clip(reconstruction, 0, 1)]
    return np.concatenate([panels[0], gap, panels[1], gap, panels[2]], axis=1)


def save_mask_images(plan, out_dir):
    """template.png, mask_block2.png, mask_block1.png (0 black, 1 white)."""
    out_dir = Path(out_dir)
    paths = []
    for name in ("template", "mask_block2", "mask_block1"):
        path = out_dir / f"{name}.png"
        save_png(getattr(plan, name).astype(np.float64), path)
        paths.append(path)
    return paths


def write_preview(model, image, out_dir):
    recon, plan = reconstruct(model, image)
    out_dir = Path(out_dir)
    save_png(triptych(image, plan, recon), out_dir / "preview.png")
    save_mask_images(plan, out_dir)
    return plan
