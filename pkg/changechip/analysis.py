"""
Class analysis: MSE score per Kmeans class, heat map, DBSCAN-based selection
of the change classes and the resulting binary mask.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, Iterable, List, Optional

import cv2
import numpy as np
from sklearn.cluster import DBSCAN

from .detection import ClusterMap
from .errors import AnalysisError, DimensionMismatchError
from .imaging import RasterImage

logger = logging.getLogger(__name__)

HUE_BLUE = 240.0
HUE_RED = 0.0
OVERLAY_COLOR = (1.0, 0.0, 0.0)
OVERLAY_ALPHA = 0.5


@dataclass(frozen=True)
class ClassStats:
    class_id: int
    pixel_count: int
    mse: Optional[float]  # None for empty classes
    rank: Optional[int]  # ascending-MSE position among nonempty classes
    selected: bool = False

    @property
    def empty(self) -> bool:
        return self.pixel_count == 0


@dataclass(frozen=True)
class Selection:
    selected: FrozenSet[int]
    discarded: FrozenSet[int]
    dbscan_labels: Dict[int, int]  # class_id -> DBSCAN cluster
    eps: float
    stats: List[ClassStats]

    @property
    def cluster_count(self) -> int:
        return len({label for label in self.dbscan_labels.values() if label >= 0})


@dataclass(frozen=True)
class ChangeMask:
    mask: np.ndarray
    classes: FrozenSet[int]

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.mask))


def class_mse(ref: RasterImage, aligned: RasterImage, cm: ClusterMap) -> List[ClassStats]:
    """MSE(C) = 1/(3|C|) * sum over pixels of C and R,G,B of squared differences."""
    if ref.shape != aligned.shape or ref.shape != cm.labels.shape:
        raise DimensionMismatchError(
            f"images {ref.shape}/{aligned.shape} and labels {cm.labels.shape} differ in size"
        )
    labels = cm.labels.ravel()
    squared = ((ref.pixels - aligned.pixels) ** 2).sum(axis=2).ravel()
    counts = np.bincount(labels, minlength=cm.n)
    sums = np.bincount(labels, weights=squared, minlength=cm.n)

    nonempty = [c for c in range(cm.n) if counts[c] > 0]
    mse = {c: float(sums[c] / (3 * counts[c])) for c in nonempty}
    ranks = {c: r for r, c in enumerate(sorted(nonempty, key=lambda c: (mse[c], c)))}
    return [
        ClassStats(class_id=c, pixel_count=int(counts[c]), mse=mse.get(c), rank=ranks.get(c))
        for c in range(cm.n)
    ]


def heat_palette(k: int) -> np.ndarray:
    """k RGB colors on a linear hue sweep from blue (index 0) to red (index k-1)."""
    if k < 1:
        return np.zeros((0, 3))
    if k == 1:
        hues = np.array([HUE_BLUE])
    else:
        hues = HUE_BLUE + (HUE_RED - HUE_BLUE) * np.arange(k) / (k - 1)
    hsv = np.stack([hues, np.ones(k), np.ones(k)], axis=1).astype(np.float32).reshape(1, k, 3)
    rgb = cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).reshape(k, 3)
    return np.clip(rgb.astype(np.float64), 0.0, 1.0)


def render_heatmap(cm: ClusterMap, stats: Iterable[ClassStats]) -> RasterImage:
    ranked = [s for s in stats if s.rank is not None]
    palette = heat_palette(len(ranked))
    lut = np.zeros((cm.n, 3), dtype=np.float64)
    for s in ranked:
        lut[s.class_id] = palette[s.rank]
    return RasterImage(lut[cm.labels])


def dbscan_1d(values, eps: float, min_pts: int = 1) -> np.ndarray:
    """
    DBSCAN on the real line. Clusters are numbered by ascending minimum value;
    noise (only possible with min_pts > 1) is -1.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise AnalysisError("dbscan_1d needs at least one value")
    if eps <= 0:
        raise AnalysisError(f"eps must be positive (got {eps})")
    raw = DBSCAN(eps=eps, min_samples=min_pts, metric="euclidean").fit(values.reshape(-1, 1)).labels_
    clusters = sorted({int(l) for l in raw if l >= 0}, key=lambda l: values[raw == l].min())
    relabel = {old: new for new, old in enumerate(clusters)}
    return np.array([relabel.get(int(l), -1) for l in raw], dtype=np.intp)


def select_change_classes(stats: List[ClassStats], eps: float, min_pts: int = 1,
                          discard: str = "cluster") -> Selection:
    """
    Cluster the nonempty classes' MSE scores with DBSCAN and discard the
    cluster holding the minimum score (or only the minimum class with
    discard="lowest"). A single DBSCAN cluster means no change.
    """
    ranked = sorted((s for s in stats if s.rank is not None), key=lambda s: s.rank)
    if not ranked:
        raise AnalysisError("no nonempty class to analyse")
    if discard not in ("cluster", "lowest"):
        raise AnalysisError(f"unknown discard rule {discard!r}")

    scores = np.array([s.mse for s in ranked])
    labels = dbscan_1d(scores, eps, min_pts)
    dbscan_labels = {s.class_id: int(l) for s, l in zip(ranked, labels)}
    lowest = ranked[0].class_id
    groups = {l for l in labels if l >= 0} | {("noise", s.class_id) for s, l in zip(ranked, labels) if l < 0}

    if len(groups) <= 1:
        discarded = {s.class_id for s in ranked}
    elif discard == "lowest" or dbscan_labels[lowest] < 0:
        discarded = {lowest}
    else:
        discarded = {cid for cid, l in dbscan_labels.items() if l == dbscan_labels[lowest]}

    selected = frozenset(s.class_id for s in ranked if s.class_id not in discarded)
    updated = [replace(s, selected=s.class_id in selected) for s in stats]
    logger.info("DBSCAN (eps=%.4g) found %d cluster(s); selected %d of %d classes",
                eps, len(groups), len(selected), len(ranked))
    return Selection(selected=selected, discarded=frozenset(discarded), dbscan_labels=dbscan_labels,
                     eps=float(eps), stats=updated)


def binary_mask(cm: ClusterMap, selection) -> ChangeMask:
    """mask(p) is true iff label(p) is a selected class; selection may be a Selection or class ids."""
    classes = selection.selected if isinstance(selection, Selection) else frozenset(int(c) for c in selection)
    mask = np.isin(cm.labels, sorted(classes)) if classes else np.zeros(cm.labels.shape, dtype=bool)
    return ChangeMask(mask=mask, classes=frozenset(classes))


def overlay(ref: RasterImage, mask) -> RasterImage:
    """Blend saturated red at 50% over the masked reference pixels."""
    mask = mask.mask if isinstance(mask, ChangeMask) else np.asarray(mask, dtype=bool)
    if mask.shape != ref.shape:
        raise DimensionMismatchError(f"mask {mask.shape} and image {ref.shape} differ in size")
    out = np.array(ref.pixels, copy=True)
    out[mask] = (1 - OVERLAY_ALPHA) * out[mask] + OVERLAY_ALPHA * np.asarray(OVERLAY_COLOR)
    return RasterImage(out)


def class_report(stats: Iterable[ClassStats]) -> List[dict]:
    """classes.json rows."""
    return [
        {
            "class_id": s.class_id,
            "pixel_count": s.pixel_count,
            "mse": s.mse,
            "rank": s.rank,
            "selected": s.selected,
        }
        for s in stats
    ]
