"""
Exact histogram specification.

Pixels are put in a strict order by (value, mean over 3x3, 5x5, ...,
(2K+1)x(2K+1), flat index) and the reference's 8-bit histogram is laid over
that order, so the output histogram matches the reference exactly.
Neighbourhood means use uniform_filter(mode="reflect"), unlike the zero
padding of the difference windows.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .imaging import RasterImage

logger = logging.getLogger(__name__)

LEVELS = 256
DEFAULT_FILTER_LEVELS = 5


@dataclass(frozen=True)
class HistogramSpec:
    bins: np.ndarray  # 3 x 256 counts
    total: int

    @classmethod
    def of(cls, img: RasterImage) -> "HistogramSpec":
        bins = np.stack([histogram_counts(img.channel(c)) for c in range(3)])
        return cls(bins=bins, total=img.width * img.height)


def to_levels(plane: np.ndarray) -> np.ndarray:
    """Snap reals in [0, 1] to integer levels 0..255."""
    return np.clip(np.rint(np.asarray(plane, dtype=np.float64) * (LEVELS - 1)), 0, LEVELS - 1).astype(np.intp)


def histogram_counts(plane: np.ndarray) -> np.ndarray:
    return np.bincount(to_levels(plane).ravel(), minlength=LEVELS)


def strict_order(plane: np.ndarray, levels: int = DEFAULT_FILTER_LEVELS) -> np.ndarray:
    """
    Flat pixel indices sorted lexicographically by value, then by the means over
    growing square neighbourhoods, then by flat index.
    """
    if levels < 1:
        raise ValueError(f"filter levels must be >= 1, got {levels}")
    plane = np.asarray(plane, dtype=np.float64)
    # np.lexsort treats the last key as primary
    keys = [np.arange(plane.size)]
    for k in range(levels, 0, -1):
        keys.append(uniform_filter(plane, size=2 * k + 1, mode="reflect").ravel())
    keys.append(plane.ravel())
    return np.lexsort(keys)


def apportion(counts: np.ndarray, total: int) -> np.ndarray:
    """Rescale histogram counts to sum to total (largest remainder, ties to the lower level)."""
    counts = np.asarray(counts, dtype=np.int64)
    source_total = int(counts.sum())
    if source_total == total:
        return counts.copy()
    scaled = counts * (total / source_total)
    whole = np.floor(scaled).astype(np.int64)
    deficit = total - int(whole.sum())
    if deficit > 0:
        remainders = scaled - whole
        winners = np.argsort(-remainders, kind="stable")[:deficit]
        whole[winners] += 1
    return whole


def match_plane(src: np.ndarray, ref: np.ndarray, levels: int = DEFAULT_FILTER_LEVELS) -> np.ndarray:
    src = np.asarray(src, dtype=np.float64)
    counts = apportion(histogram_counts(ref), src.size)
    order = strict_order(src, levels)
    values = np.repeat(np.arange(LEVELS, dtype=np.float64) / (LEVELS - 1), counts)
    out = np.empty(src.size, dtype=np.float64)
    out[order] = values
    return out.reshape(src.shape)


def exact_histogram_match(src: RasterImage, ref: RasterImage, levels: int = DEFAULT_FILTER_LEVELS) -> RasterImage:
    """Remap src so each channel's 8-bit histogram equals ref's (rescaled to src's pixel count)."""
    out = np.stack([match_plane(src.channel(c), ref.channel(c), levels) for c in range(3)], axis=2)
    matched = RasterImage(out)
    if src.shape == ref.shape:
        mismatched = int(np.abs(HistogramSpec.of(matched).bins - HistogramSpec.of(ref).bins).sum())
        logger.info("Exact histogram specification done, %d bin mismatches", mismatched)
    return matched
