"""Feature-pyramid adapter (F1-F4) for downstream heads and a frozen linear probe."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin

from .checkpoint import Checkpoint, load_checkpoint, to_bytes
from .exceptions import DataError, DimensionError
from .io import atomic_write
from .model import to_nchw
from .pretrainer import model_from_checkpoint
from .validation import check_image, check_images, check_spatial_multiple

LEVELS = ("F1", "F2", "F3", "F4")


@dataclass
class FeaturePyramid:
    """Channel-last feature maps at strides 4, 8, 16 and 32."""

    F1: np.ndarray
    F2: np.ndarray
    F3: np.ndarray
    F4: np.ndarray

    def levels(self):
        return {name: getattr(self, name) for name in LEVELS}

    def shapes(self):
        return {name: arr.shape for name, arr in self.levels().items()}


def _as_checkpoint(checkpoint):
    if isinstance(checkpoint, Checkpoint):
        return checkpoint
    return load_checkpoint(checkpoint)


def pyramid_tensors(model, images):
    """Batched ``(F1, F2, F3, F4)`` NCHW tensors for ``(B, H, W, C)`` images, no grad."""
    x = to_nchw(images, dtype=next(model.parameters()).dtype)
    model.eval()
    with torch.no_grad():
        return model.pyramid(x)


def extract_pyramid(image, checkpoint, dtype=torch.float32):
    """All-visible encoder pass on one ``(H, W, C)`` image; H and W multiples of 32.

    The checkpoint is only read: its serialized digest is compared before and after.
    """
    img = check_image(image)
    check_spatial_multiple(img.shape, 32, what="pyramid input")
    ckpt = _as_checkpoint(checkpoint)
    before = to_bytes(ckpt)
    model = model_from_checkpoint(ckpt, dtype=dtype)
    if img.shape[2] != ckpt.model_config.in_channels:
        raise DimensionError(
            f"image has {img.shape[2]} channels, checkpoint expects {ckpt.model_config.in_channels}"
        )
    levels = pyramid_tensors(model, img[None])
    if to_bytes(ckpt) != before:
        raise RuntimeError("checkpoint was modified during extraction")
    return FeaturePyramid(*(t[0].permute(1, 2, 0).cpu().numpy() for t in levels))


def write_pyramid(pyramid, out_dir):
    """One ``.npy`` file per level plus ``manifest.json`` (names, shapes, dtype)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for name, arr in pyramid.levels().items():
        with atomic_write(out_dir / f"{name}.npy") as fh:
            np.save(fh, arr)
        manifest.append({"name": name, "file": f"{name}.npy", "shape": list(arr.shape), "dtype": arr.dtype.str})
    with atomic_write(out_dir / "manifest.json", "w") as fh:
        json.dump({"levels": manifest}, fh, indent=2)
    return manifest


def _probe_features(model, images):
    """Upsample F2-F4 (nearest) to F1's grid and concatenate along channels."""
    f1, f2, f3, f4 = pyramid_tensors(model, images)
    size = f1.shape[-2:]
    ups = [F.interpolate(f, size=size, mode="nearest") for f in (f2, f3, f4)]
    return torch.cat([f1, *ups], dim=1)


class PyramidLinearProbe(ClassifierMixin, BaseEstimator):
    """Per-pixel linear classifier on frozen, concatenated pyramid features.

    Parameters
    ----------
    checkpoint : Checkpoint or path
        Frozen backbone.
    steps : int, default=200
        Full-batch Adam steps.
    lr : float, default=0.05
    n_classes : int or None
        Inferred from the labels when None.
    random_state : int, default=0
    """

    def __init__(self, checkpoint=None, steps=200, lr=0.05, n_classes=None, random_state=0):
        self.checkpoint = checkpoint
        self.steps = steps
        self.lr = lr
        self.n_classes = n_classes
        self.random_state = random_state

    def _features(self, X):
        images = check_images(X)
        check_spatial_multiple(images.shape[1:], 32, what="probe image")
        feats = _probe_features(self.backbone_, images)
        return (feats - self.mean_) / self.std_, images.shape[1:3]

    def fit(self, X, y):
        images = check_images(X)
        labels = np.asarray(y, dtype=np.int64)
        if labels.shape != images.shape[:3]:
            raise DataError(f"label maps {labels.shape} do not match images {images.shape[:3]}")
        if labels.min() < 0:
            raise DataError("labels must be non-negative class indices")
        self.backbone_ = model_from_checkpoint(_as_checkpoint(self.checkpoint))
        for p in self.backbone_.parameters():
            p.requires_grad_(False)
        raw = _probe_features(self.backbone_, images)
        self.mean_ = raw.mean(dim=(0, 2, 3), keepdim=True)
        self.std_ = raw.std(dim=(0, 2, 3), keepdim=True).clamp_min(1e-6)
        feats = (raw - self.mean_) / self.std_
        self.n_classes_ = int(self.n_classes or labels.max() + 1)
        self.classes_ = np.arange(self.n_classes_)

        gen = torch.Generator().manual_seed(self.random_state)
        self.head_ = nn.Conv2d(feats.shape[1], self.n_classes_, 1)
        with torch.no_grad():
            self.head_.weight.normal_(0, 0.01, generator=gen)
            self.head_.bias.zero_()
        target = torch.as_tensor(labels)
        opt = torch.optim.Adam(self.head_.parameters(), lr=self.lr)
        size = images.shape[1:3]
        for _ in range(self.steps):
            opt.zero_grad()
            logits = F.interpolate(self.head_(feats), size=size, mode="nearest")
            loss = F.cross_entropy(logits, target)
            loss.backward()
            opt.step()
        return self

    def predict(self, X):
        feats, size = self._features(X)
        with torch.no_grad():
            logits = F.interpolate(self.head_(feats), size=size, mode="nearest")
        return logits.argmax(dim=1).numpy()

    def score(self, X, y, sample_weight=None):
        return float(np.mean(self.predict(X) == np.asarray(y)))


def segmentation_metrics(pred, labels, n_classes):
    pred, labels = np.asarray(pred), np.asarray(labels)
    iou = []
    for k in range(n_classes):
        inter = np.sum((pred == k) & (labels == k))
        union = np.sum((pred == k) | (labels == k))
        iou.append(float(inter / union) if union else float("nan"))
    return {
        "pixel_accuracy": float(np.mean(pred == labels)),
        "iou": iou,
        "mean_iou": float(np.nanmean(iou)) if not all(np.isnan(iou)) else float("nan"),
    }


def linear_probe(train, checkpoint, steps=200, lr=0.05, seed=0, evaluate=None):
    """Fit a probe on ``train = (images, label_maps)``; report metrics on ``evaluate`` (default: train)."""
    images, labels = train
    probe = PyramidLinearProbe(checkpoint, steps=steps, lr=lr, random_state=seed).fit(images, labels)
    eval_images, eval_labels = evaluate if evaluate is not None else train
    metrics = segmentation_metrics(probe.predict(eval_images), eval_labels, probe.n_classes_)
    metrics["probe"] = probe
    return metrics
