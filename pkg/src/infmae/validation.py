"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import ConfigurationError, DimensionError

_AXES = ("height", "width")


def check_image(image, *, dtype=np.float64):
    """Return ``image`` as a finite ``(H, W, C)`` array.

    A 2-D array is treated as a single-channel image.
    """
    arr = np.asarray(image, dtype=dtype)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise DimensionError(f"expected an (H, W) or (H, W, C) image, got shape {arr.shape}")
    if arr.shape[2] < 1 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"image has an empty axis: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite pixel values")
    return arr


def check_images(images, *, dtype=np.float64):
    """Return a batch of equally sized images as an ``(B, H, W, C)`` array."""
    if isinstance(images, np.ndarray) and images.ndim == 4:
        arr = np.asarray(images, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise ValueError("images contain non-finite pixel values")
        return arr
    batch = [check_image(im, dtype=dtype) for im in images]
    if not batch:
        raise DimensionError("empty image batch")
    shapes = {im.shape for im in batch}
    if len(shapes) != 1:
        raise DimensionError(f"images in a batch must share one shape, got {sorted(shapes)}")
    return np.stack(batch)


def check_spatial_multiple(shape, multiple, *, what="image"):
    """Raise :class:`DimensionError` naming the axis not divisible by ``multiple``."""
    for axis, size in zip(_AXES, shape[:2]):
        if size % multiple != 0:
            raise DimensionError(
                f"{what} {axis} {size} is not a multiple of {multiple}"
            )


def check_positive_int(value, name, *, minimum=1):
    if isinstance(value, bool) or int(value) != value or value < minimum:
        raise ConfigurationError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)
