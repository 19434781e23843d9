"""Information-aware mask generation.

Tokens are the cells of the ``H/16 x W/16`` grid.  Each token is scored by its
mean intensity, the scores are sorted in descending order, and every S-th
token of the sorted list stays visible.  The binary template of visible tokens
is then replicated 2x and 4x to mask the H/8 and H/4 convolutional stages.

Flat token IDs are row-major: ``id = row * grid_w + col``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigurationError
from .validation import check_image, check_images, check_spatial_multiple

TOKEN_SIZE = 16


@dataclass(frozen=True)
class GrayValueMap:
    values: np.ndarray

    @property
    def grid_h(self):
        return self.values.shape[0]

    @property
    def grid_w(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class MaskPlan:
    """Everything the encoder and decoder need to know about one image's mask."""

    n_tokens: int
    stride: int
    sorted_ids: np.ndarray
    visible_ids: np.ndarray
    masked_ids: np.ndarray
    template: np.ndarray
    mask_block2: np.ndarray
    mask_block1: np.ndarray

    @property
    def n_visible(self):
        return len(self.visible_ids)

    @property
    def grid_shape(self):
        return self.template.shape

    @property
    def mask_ratio(self):
        return 1.0 - self.n_visible / self.n_tokens

    def __eq__(self, other):
        if not isinstance(other, MaskPlan):
            return NotImplemented
        return (
            self.n_tokens == other.n_tokens
            and self.stride == other.stride
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("sorted_ids", "visible_ids", "masked_ids", "template",
                          "mask_block2", "mask_block1")
            )
        )

    __hash__ = None


def compute_gray_value_map(image, kernel=None):
    """Mean intensity of every 16x16 cell, averaged over channels.

    ``kernel`` optionally replaces the fixed mean pool by a convolution with
    weights of shape ``(K, C, 16, 16)``; the channel mean is then taken over
    the K output maps.
    """
    img = check_image(image)
    check_spatial_multiple(img.shape, TOKEN_SIZE)
    h, w, c = img.shape
    gh, gw = h // TOKEN_SIZE, w // TOKEN_SIZE
    cells = img.reshape(gh, TOKEN_SIZE, gw, TOKEN_SIZE, c)
    if kernel is None:
        values = cells.mean(axis=(1, 3, 4))
    else:
        kernel = np.asarray(kernel, dtype=np.float64)
        if kernel.ndim != 4 or kernel.shape[1:] != (c, TOKEN_SIZE, TOKEN_SIZE):
            raise ConfigurationError(
                f"analysis kernel must have shape (K, {c}, 16, 16), got {kernel.shape}"
            )
        values = np.einsum("iyjxc,kcyx->ijk", cells, kernel).mean(axis=2)
    return GrayValueMap(values=values)


def rank_tokens(gray_map):
    """Flat token IDs in descending gray-value order, ties by ascending ID."""
    values = gray_map.values if isinstance(gray_map, GrayValueMap) else np.asarray(gray_map)
    flat = values.reshape(-1)
    # stable sort on the negated values keeps equal values in ascending-ID order
    return np.argsort(-flat, kind="stable").astype(np.int64)


def sample_visible(sorted_ids, stride):
    """Split sorted IDs into (visible, masked); visible are ranks 0, S, 2S, ..."""
    if isinstance(stride, bool) or int(stride) != stride or stride < 1:
        raise ConfigurationError(f"mask stride must be an integer >= 1, got {stride!r}")
    sorted_ids = np.asarray(sorted_ids, dtype=np.int64)
    keep = np.zeros(len(sorted_ids), dtype=bool)
    keep[:: int(stride)] = True
    return sorted_ids[keep], sorted_ids[~keep]


def build_mask_template(visible_ids, grid_h, grid_w):
    n = grid_h * grid_w
    visible_ids = np.asarray(visible_ids, dtype=np.int64)
    if visible_ids.size and (visible_ids.min() < 0 or visible_ids.max() >= n):
        raise IndexError(f"visible token ID out of range for a {grid_h}x{grid_w} grid")
    template = np.zeros(n, dtype=np.uint8)
    template[visible_ids] = 1
    return template.reshape(grid_h, grid_w)


def upsample_mask(template, factor):
    """Nearest-neighbour block replication by 2 or 4."""
    if factor not in (2, 4):
        raise ConfigurationError(f"mask upsampling factor must be 2 or 4, got {factor!r}")
    template = np.asarray(template)
    return np.repeat(np.repeat(template, factor, axis=0), factor, axis=1)


def _plan_from_ranking(sorted_ids, stride, grid_h, grid_w):
    visible, masked = sample_visible(sorted_ids, stride)
    template = build_mask_template(visible, grid_h, grid_w)
    return MaskPlan(
        n_tokens=grid_h * grid_w,
        stride=int(stride),
        sorted_ids=sorted_ids,
        visible_ids=visible,
        masked_ids=masked,
        template=template,
        mask_block2=upsample_mask(template, 2),
        mask_block1=upsample_mask(template, 4),
    )


def make_mask_plan(image, stride=4, kernel=None):
    gray = compute_gray_value_map(image, kernel=kernel)
    return _plan_from_ranking(rank_tokens(gray), stride, gray.grid_h, gray.grid_w)


def random_mask_plan(grid_h, grid_w, stride, rng):
    """Comparison strategy: same visible count as the information-aware plan,
    but the ranking is a uniform random permutation."""
    rng = np.random.default_rng(rng)
    sorted_ids = rng.permutation(grid_h * grid_w).astype(np.int64)
    return _plan_from_ranking(sorted_ids, stride, grid_h, grid_w)


def all_visible_plan(grid_h, grid_w):
    return _plan_from_ranking(np.arange(grid_h * grid_w, dtype=np.int64), 1, grid_h, grid_w)


class InformationAwareMasker(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping images to their visible-token templates.

    Parameters
    ----------
    stride : int, default=4
        Sampling interval over the descending gray-value ranking.
    strategy : {"information", "random"}, default="information"
        ``"random"`` draws the ranking from ``random_state`` instead.
    random_state : int or None
        Only used by the random strategy.
    """

    def __init__(self, stride=4, strategy="information", random_state=None):
        self.stride = stride
        self.strategy = strategy
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.strategy not in ("information", "random"):
            raise ConfigurationError(f"unknown masking strategy {self.strategy!r}")
        sample_visible(np.arange(1), self.stride)
        return self

    def plans(self, X):
        images = check_images(X)
        rng = np.random.default_rng(self.random_state)
        out = []
        for image in images:
            if self.strategy == "random":
                check_spatial_multiple(image.shape, TOKEN_SIZE)
                gh, gw = image.shape[0] // TOKEN_SIZE, image.shape[1] // TOKEN_SIZE
                out.append(random_mask_plan(gh, gw, self.stride, rng))
            else:
                out.append(make_mask_plan(image, self.stride))
        return out

    def transform(self, X):
        """Return the stacked ``(B, H/16, W/16)`` binary templates."""
        return np.stack([p.template for p in self.plans(X)])
