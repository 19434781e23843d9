"""Infrared-like synthetic images: smooth, low-entropy backgrounds with warm blobs."""

import numpy as np


def _blob_field(rng, size, n_blobs):
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field = np.zeros((h, w))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
        sigma = rng.uniform(0.05, 0.12) * min(h, w)
        amp = rng.uniform(0.5, 0.8)
        field = np.maximum(field, amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2)))
    return field


def infrared_like(n, size=(64, 64), seed=0):
    """``(n, H, W, 1)`` float images in [0, 1]."""
    rng = np.random.default_rng(seed)
    h, w = size
    out = np.empty((n, h, w, 1))
    for i in range(n):
        base = rng.uniform(0.1, 0.3)
        tilt = rng.uniform(-0.05, 0.05) * np.linspace(-1, 1, h)[:, None]
        background = base + tilt + rng.normal(0, 0.01, size=(h, w))
        img = background + _blob_field(rng, size, int(rng.integers(1, 4)))
        # quantize to 8-bit levels like a real sensor dump
        out[i, :, :, 0] = np.round(np.clip(img, 0, 1) * 255) / 255
    return out


def blob_segmentation(n, size=(32, 32), seed=0, threshold=0.35):
    """Two-class set: bright blobs (label 1) on a dark background (label 0).

    Returns ``(images (n, H, W, 1), labels (n, H, W) int64)``.
    """
    rng = np.random.default_rng(seed)
    h, w = size
    images = np.empty((n, h, w, 1))
    labels = np.empty((n, h, w), dtype=np.int64)
    for i in range(n):
        blobs = _blob_field(rng, size, int(rng.integers(1, 3)))
        background = rng.uniform(0.05, 0.2) + rng.normal(0, 0.01, size=(h, w))
        images[i, :, :, 0] = np.clip(background + blobs, 0, 1)
        labels[i] = (blobs > threshold).astype(np.int64)
    return images, labels
