"""File helpers: atomic writes, image decoding, PNG rendering."""

import contextlib
import os
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif", ".webp", ".pgm", ".ppm"}


@contextlib.contextmanager
def atomic_write(path, mode="wb"):
    """Write to a temp file in the target directory, then rename over ``path``.

    Readers never observe a partially written file; on error the temp file is removed.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def list_images(directory):
    """Image files under ``directory`` (recursive) in lexicographic path order."""
    directory = Path(directory)
    return sorted(
        p for p in directory.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def load_gray_u8(path):
    """Decode to a 2-D uint8 array; deeper bit depths are quantized to 8 bits."""
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
            arr = np.asarray(im, dtype=np.float64)
            hi = 65535.0 if im.mode.startswith("I;16") else max(float(arr.max()), 1.0)
            return np.clip(np.round(arr / hi * 255.0), 0, 255).astype(np.uint8)
        return np.asarray(im.convert("L"), dtype=np.uint8)


def load_image(path, channel_mode="gray"):
    """Decode to a float ``(H, W, C)`` array in [0, 1]; C is 1, or 3 in replicate mode."""
    arr = load_gray_u8(path).astype(np.float64) / 255.0
    arr = arr[:, :, None]
    if channel_mode == "replicate":
        arr = np.repeat(arr, 3, axis=2)
    return arr


def save_png(array, path):
    """Save a [0, 1] float ``(H, W)``/``(H, W, 1|3)`` array as an 8-bit PNG, atomically."""
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    with atomic_write(path) as fh:
        Image.fromarray(u8).save(fh, format="PNG")


def save_u8_png(array, path):
    with atomic_write(path) as fh:
        Image.fromarray(np.asarray(array, dtype=np.uint8)).save(fh, format="PNG")
