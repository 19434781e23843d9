"""Dataset curation: resolution filtering, anchor-based near-duplicate removal
and brightness-entropy statistics.

Reports are JSON Lines: one object per file with the fields ``path``,
``width``, ``height``, ``entropy`` (bits, ``null`` if undecodable) and
``verdict`` (``kept``, ``too_small``, ``duplicate_of:<path>`` or ``error``),
followed by one ``{"summary": {...}}`` object.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError
from .io import atomic_write, list_images, load_gray_u8

logger = logging.getLogger(__name__)

LEVELS = 256


@dataclass(frozen=True)
class CurationConfig:
    min_dim: int = 20
    hash_side: int = 8
    dup_threshold: int = 5

    def __post_init__(self):
        if self.min_dim < 1:
            raise ConfigurationError("min_dim must be >= 1")
        if self.hash_side < 1:
            raise ConfigurationError("hash_side must be >= 1")
        if not 0 <= self.dup_threshold <= self.hash_side ** 2:
            raise ConfigurationError(
                f"dup_threshold must lie in [0, {self.hash_side ** 2}], got {self.dup_threshold}"
            )


@dataclass
class EntropyHistogram:
    counts: np.ndarray
    total: int

    @property
    def probabilities(self):
        return self.counts / self.total


@dataclass
class ImageRecord:
    path: str
    width: int
    height: int
    entropy: float | None
    verdict: str


@dataclass
class CurationReport:
    records: list = field(default_factory=list)

    def count(self, verdict):
        if verdict == "duplicate":
            return sum(r.verdict.startswith("duplicate_of:") for r in self.records)
        return sum(r.verdict == verdict for r in self.records)

    @property
    def kept(self):
        return [r for r in self.records if r.verdict == "kept"]

    def summary(self):
        summary = corpus_stats(self.kept)
        summary.update(
            total=len(self.records),
            too_small=self.count("too_small"),
            duplicate=self.count("duplicate"),
            error=self.count("error"),
        )
        return summary

    def to_jsonl(self):
        lines = [json.dumps(asdict(r)) for r in self.records]
        lines.append(json.dumps({"summary": self.summary()}))
        return "\n".join(lines) + "\n"


def to_levels(image):
    """Quantize an image to 8-bit brightness levels.

    uint8 passes through, 16-bit sensor data keeps its top 8 bits, other
    integer types must already hold levels 0..255, floats are read as [0, 1]
    intensities.  Colour inputs are averaged over the last axis.
    """
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr.mean(axis=2) if arr.dtype.kind == "f" else np.round(arr.mean(axis=2)).astype(arr.dtype)
    if arr.dtype == np.uint8:
        return arr
    if arr.dtype.kind in "ui" and arr.dtype.itemsize == 2:
        return (arr.astype(np.int64) >> 8).clip(0, 255).astype(np.uint8)
    if arr.dtype.kind in "ui":
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError(f"{arr.dtype} image values must lie in 0..255 to be read as levels")
        return arr.astype(np.uint8)
    return np.clip(np.round(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def brightness_histogram(image):
    levels = to_levels(image)
    if levels.size == 0:
        raise ValueError("entropy of an empty image is undefined")
    counts = np.bincount(levels.reshape(-1), minlength=LEVELS)
    return EntropyHistogram(counts=counts, total=int(levels.size))


def image_entropy(image):
    """Shannon entropy (bits) of the 256-level brightness histogram."""
    hist = brightness_histogram(image)
    p = hist.counts[hist.counts > 0] / hist.total
    h = -float(np.sum(p * np.log2(p)))
    return h + 0.0  # normalizes -0.0


def resolution_filter(width, height, cfg=CurationConfig()):
    """True to keep.  Drops only when BOTH sides are below ``min_dim``."""
    return not (width < cfg.min_dim and height < cfg.min_dim)


def _area_matrix(n, side):
    """``(side, n)`` weights averaging pixel intervals into ``side`` equal bins."""
    edges = np.arange(side + 1) * (n / side)
    lo = np.maximum(edges[:-1, None], np.arange(n)[None, :])
    hi = np.minimum(edges[1:, None], np.arange(1, n + 1)[None, :])
    return np.clip(hi - lo, 0, None) / (n / side)


def perceptual_hash(image, hash_side=8):
    """Average hash: area-mean downscale to ``hash_side`` squared cells, bit = cell >= mean.

    Returns a flat bool array in row-major cell order.
    """
    arr = to_levels(image).astype(np.float64)
    h, w = arr.shape
    cells = _area_matrix(h, hash_side) @ arr @ _area_matrix(w, hash_side).T
    mean = cells.mean()
    # resampling roundoff must not split cells that are equal to the mean
    return (cells >= mean - 1e-9 * max(1.0, abs(mean))).reshape(-1)


def hamming(a, b):
    return int(np.count_nonzero(np.asarray(a) != np.asarray(b)))


def greedy_dedup(hashes, threshold):
    """For each hash, ``None`` if kept or the index of the first kept anchor within ``threshold``."""
    anchors, out = [], []
    for i, h in enumerate(hashes):
        match = next((a for a in anchors if hamming(hashes[a], h) <= threshold), None)
        out.append(match)
        if match is None:
            anchors.append(i)
    return out


def _describe(path, cfg):
    try:
        levels = load_gray_u8(path)
    except (OSError, ValueError) as exc:
        logger.warning("cannot decode %s: %s", path, exc)
        return None
    height, width = levels.shape
    return width, height, image_entropy(levels), perceptual_hash(levels, cfg.hash_side)


def _scan(paths, cfg, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda p: _describe(p, cfg), paths))
    return [_describe(p, cfg) for p in paths]


def dedup_scan(paths, cfg=CurationConfig(), workers=1):
    """Verdicts for ``paths`` (sorted into canonical order first): ``kept``,
    ``duplicate_of:<anchor>`` or ``error``.  Returns ``{path: verdict}``."""
    paths = sorted(str(p) for p in paths)
    described = _scan(paths, cfg, workers)
    readable = [i for i, d in enumerate(described) if d is not None]
    matches = greedy_dedup([described[i][3] for i in readable], cfg.dup_threshold)
    verdicts = {p: "error" for p in paths}
    for i, m in zip(readable, matches):
        verdicts[paths[i]] = "kept" if m is None else f"duplicate_of:{paths[readable[m]]}"
    return verdicts


def curate_directory(directory, cfg=CurationConfig(), workers=1):
    """Resolution filter, then greedy dedup over survivors, in lexicographic path order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"input directory {str(directory)!r} does not exist")
    paths = [str(p) for p in list_images(directory)]
    if not paths:
        logger.warning("no images found under %s", directory)
    described = _scan(paths, cfg, workers)
    report = CurationReport()
    anchors = []
    for path, d in zip(paths, described):
        if d is None:
            report.records.append(ImageRecord(path, 0, 0, None, "error"))
            continue
        width, height, entropy, phash = d
        if not resolution_filter(width, height, cfg):
            verdict = "too_small"
        else:
            anchor = next((a for a, ah in anchors if hamming(ah, phash) <= cfg.dup_threshold), None)
            if anchor is None:
                anchors.append((path, phash))
                verdict = "kept"
            else:
                verdict = f"duplicate_of:{anchor}"
        report.records.append(ImageRecord(path, width, height, entropy, verdict))
    return report


def corpus_stats(records):
    """Count, entropy mean/min/max and smallest/largest resolution over ``records``."""
    records = [r for r in records if r.entropy is not None]
    if not records:
        return {"count": 0, "mean_entropy": None, "min_entropy": None, "max_entropy": None,
                "min_resolution": None, "max_resolution": None}
    ent = [r.entropy for r in records]
    by_area = sorted(records, key=lambda r: (r.width * r.height, r.width))
    return {
        "count": len(records),
        "mean_entropy": math.fsum(ent) / len(ent),
        "min_entropy": min(ent),
        "max_entropy": max(ent),
        "min_resolution": [by_area[0].width, by_area[0].height],
        "max_resolution": [by_area[-1].width, by_area[-1].height],
    }


def dataset_stats(directory, workers=1):
    """Entropy and resolution statistics over every readable image, unfiltered."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"input directory {str(directory)!r} does not exist")
    paths = [str(p) for p in list_images(directory)]
    described = _scan(paths, CurationConfig(), workers)
    records = [ImageRecord(p, d[0], d[1], d[2], "kept") for p, d in zip(paths, described) if d is not None]
    stats = corpus_stats(records)
    stats["unreadable"] = sum(d is None for d in described)
    return stats, records


def write_report(report, path):
    with atomic_write(path, "w") as fh:
        fh.write(report.to_jsonl())


def write_kept_list(report, path):
    with atomic_write(path, "w") as fh:
        fh.write("".join(r.path + "\n" for r in report.kept))
