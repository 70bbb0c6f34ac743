"""
PCA-Kmeans change detection.

Each pixel is described by its h x h absolute-difference windows (R, G, B
concatenated, and gray). Two PCA eigenspaces are fitted on descriptors sampled
at the centers of the non-overlapping h x h grid, every pixel's overlapping
window is projected onto both, and the projected features are clustered into
n change-significance classes with Lloyd's Kmeans.
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from scipy.ndimage import correlate
from scipy.spatial.distance import cdist
from sklearn.cluster import kmeans_plusplus

from .errors import ClusteringError, DimensionMismatchError
from .imaging import RasterImage, to_grayscale, window_stack

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 300


@dataclass(frozen=True)
class DiffPlanes:
    red: np.ndarray
    green: np.ndarray
    blue: np.ndarray
    gray: np.ndarray
    reference: RasterImage = field(repr=False)
    aligned: RasterImage = field(repr=False)

    @property
    def shape(self):
        return self.gray.shape

    @property
    def color_planes(self):
        return self.red, self.green, self.blue


@dataclass(frozen=True)
class DescriptorSet:
    rgb_descriptors: np.ndarray  # M x 3h^2
    gray_descriptors: np.ndarray  # M x h^2
    h: int
    centers: np.ndarray  # M x 2 (row, col)

    def __len__(self):
        return len(self.centers)


@dataclass(frozen=True)
class EigenSpace:
    mean: np.ndarray  # d
    basis: np.ndarray  # S x d, orthonormal rows
    eigenvalues: np.ndarray  # S, descending
    degenerate: bool = False

    @property
    def components(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def project(self, samples: np.ndarray) -> np.ndarray:
        return (np.asarray(samples, dtype=np.float64) - self.mean) @ self.basis.T


@dataclass
class ClusterMap:
    labels: np.ndarray
    n: int
    centroids: np.ndarray
    objective_history: List[float] = field(default_factory=list)
    empty_classes: List[int] = field(default_factory=list)
    iterations: int = 0
    features: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def objective(self) -> float:
        return self.objective_history[-1] if self.objective_history else float("nan")

    def class_sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.n)


@dataclass(frozen=True)
class DetectionParams:
    h: int = 5
    n: int = 16
    s_rgb: int = 9
    s_gray: int = 3
    seed: int = 0
    max_iters: int = DEFAULT_MAX_ITERS
    restarts: int = 1
    descriptor: str = "color"


def build_diff(ref: RasterImage, aligned: RasterImage) -> DiffPlanes:
    if ref.shape != aligned.shape:
        raise DimensionMismatchError(f"reference {ref.shape} and aligned {aligned.shape} differ in size")
    diff = np.abs(ref.pixels - aligned.pixels)
    gray = np.abs(to_grayscale(ref) - to_grayscale(aligned))
    return DiffPlanes(red=diff[:, :, 0], green=diff[:, :, 1], blue=diff[:, :, 2], gray=gray,
                      reference=ref, aligned=aligned)


def _check_h(h: int, shape) -> None:
    if int(h) != h or h < 3 or h % 2 == 0:
        raise ClusteringError(f"window size h must be an odd integer >= 3 (got {h})")
    if h > min(shape):
        raise ClusteringError(f"window size h={h} exceeds image size {shape[1]}x{shape[0]}")


def grid_centers(height: int, width: int, h: int) -> np.ndarray:
    """Centers of the complete non-overlapping h x h cells, row-major."""
    rows = np.arange(height // h) * h + h // 2
    cols = np.arange(width // h) * h + h // 2
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


def sample_training_descriptors(diff: DiffPlanes, h: int) -> DescriptorSet:
    _check_h(h, diff.shape)
    centers = grid_centers(diff.shape[0], diff.shape[1], h)
    m = len(centers)
    rgb = np.concatenate([window_stack(p, centers, h).reshape(m, -1) for p in diff.color_planes], axis=1)
    gray = window_stack(diff.gray, centers, h).reshape(m, -1)
    return DescriptorSet(rgb_descriptors=rgb, gray_descriptors=gray, h=int(h), centers=centers)


def fit_pca(samples: np.ndarray, s: int) -> EigenSpace:
    """
    Top-s principal axes of the samples.

    Each basis vector is signed so that its largest-magnitude coordinate is positive.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ClusteringError(f"samples must be an M x d matrix, got shape {samples.shape}")
    m, d = samples.shape
    if m < 2:
        raise ClusteringError(f"PCA needs at least 2 samples (got {m})")
    if s < 1 or s > min(m, d):
        raise ClusteringError(f"component count S={s} must be in [1, min(M, d)={min(m, d)}]")

    mean = samples.mean(axis=0)
    centered = samples - mean
    covariance = centered.T @ centered / (m - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(-eigenvalues, kind="stable")[:s]
    basis = eigenvectors[:, order].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0

    degenerate = not np.any(centered)
    if degenerate:
        logger.warning("PCA samples are all identical; eigenspace is an arbitrary orthonormal basis")
    return EigenSpace(mean=mean, basis=basis, eigenvalues=np.clip(eigenvalues[order], 0.0, None),
                      degenerate=degenerate)


def _project_planes(planes, space: EigenSpace, h: int) -> np.ndarray:
    """Per-pixel projection of the stacked windows of planes onto space, as H x W x S."""
    offsets = space.basis @ space.mean
    out = np.empty(planes[0].shape + (space.components,), dtype=np.float64)
    for k, vector in enumerate(space.basis):
        kernels = vector.reshape(len(planes), h, h)
        acc = np.zeros(planes[0].shape, dtype=np.float64)
        for plane, kernel in zip(planes, kernels):
            acc += correlate(plane, kernel, mode="constant", cval=0.0)
        out[:, :, k] = acc - offsets[k]
    return out


def project_all_pixels(diff: DiffPlanes, eig_rgb: Optional[EigenSpace], eig_gray: EigenSpace, h: int) -> np.ndarray:
    """
    H x W x (S_rgb + S_gray) features: projections of each pixel's zero-padded
    windows after mean removal. eig_rgb=None gives gray-only features.
    """
    if eig_gray.dim != h * h:
        raise DimensionMismatchError(f"gray eigenspace has dimension {eig_gray.dim}, expected h^2={h * h}")
    parts = []
    if eig_rgb is not None:
        if eig_rgb.dim != 3 * h * h:
            raise DimensionMismatchError(f"RGB eigenspace has dimension {eig_rgb.dim}, expected 3h^2={3 * h * h}")
        parts.append(_project_planes(diff.color_planes, eig_rgb, h))
    parts.append(_project_planes((diff.gray,), eig_gray, h))
    return np.concatenate(parts, axis=2)


def _assign(features: np.ndarray, centroids: np.ndarray):
    distances = cdist(features, centroids, "sqeuclidean")
    labels = distances.argmin(axis=1)
    objective = float(distances[np.arange(len(features)), labels].sum())
    return labels, objective


def _update(features: np.ndarray, labels: np.ndarray, centroids: np.ndarray, reseeded: set) -> np.ndarray:
    n, dim = centroids.shape
    counts = np.bincount(labels, minlength=n)
    sums = np.zeros((n, dim), dtype=np.float64)
    np.add.at(sums, labels, features)
    updated = centroids.copy()
    filled = counts > 0
    updated[filled] = sums[filled] / counts[filled, None]

    empty = np.flatnonzero(~filled)
    if empty.size:
        # each empty class gets one re-seed from the farthest point; later empties are carried
        candidates = [j for j in empty if int(j) not in reseeded]
        if candidates:
            spread = ((features - updated[labels]) ** 2).sum(axis=1)
            farthest = np.argsort(-spread, kind="stable")[:len(candidates)]
            for j, idx in zip(candidates, farthest):
                reseeded.add(int(j))
                updated[j] = features[idx]
                logger.warning("Kmeans class %d is empty; re-seeded from the farthest point", j)
    return updated


def _lloyd(features: np.ndarray, n: int, seed: int, max_iters: int) -> ClusterMap:
    centroids, _ = kmeans_plusplus(features, n, random_state=seed)
    centroids = centroids.astype(np.float64)
    labels, objective = _assign(features, centroids)
    history = [objective]
    reseeded: set = set()
    iterations = 0
    for iterations in range(1, max_iters + 1):
        centroids = _update(features, labels, centroids, reseeded)
        new_labels, objective = _assign(features, centroids)
        history.append(objective)
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable:
            break
    empty = [int(j) for j in np.flatnonzero(np.bincount(labels, minlength=n) == 0)]
    return ClusterMap(labels=labels, n=n, centroids=centroids, objective_history=history,
                      empty_classes=empty, iterations=iterations)


def kmeans(features: np.ndarray, n: int, seed: int = 0, max_iters: int = DEFAULT_MAX_ITERS,
           restarts: int = 1) -> ClusterMap:
    """
    Lloyd's algorithm from seeded kmeans++ centers.

    Stops when assignments no longer change or after max_iters updates. With
    restarts > 1, seeds seed..seed+restarts-1 are run and the lowest objective kept.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ClusteringError(f"features must be an N x d matrix, got shape {features.shape}")
    if n < 2:
        raise ClusteringError(f"n must be at least 2 (got {n})")
    if n > len(features):
        raise ClusteringError(f"cannot form {n} classes from {len(features)} points")

    best = None
    for restart in range(max(1, restarts)):
        result = _lloyd(features, n, seed + restart, max_iters)
        if best is None or result.objective < best.objective:
            best = result
    logger.info("Kmeans: %d classes, %d iterations, objective %.6g, %d empty",
                n, best.iterations, best.objective, len(best.empty_classes))
    return best


def detect_changes(ref: RasterImage, aligned: RasterImage, params: DetectionParams = DetectionParams(),
                   keep_features: bool = False) -> ClusterMap:
    """build_diff -> sample_training_descriptors -> fit_pca (x2) -> project_all_pixels -> kmeans."""
    diff = build_diff(ref, aligned)
    training = sample_training_descriptors(diff, params.h)
    logger.info("Sampled %d training windows (h=%d)", len(training), params.h)

    eig_gray = fit_pca(training.gray_descriptors, params.s_gray)
    eig_rgb = None
    if params.descriptor == "color":
        eig_rgb = fit_pca(training.rgb_descriptors, params.s_rgb)
    elif params.descriptor != "gray":
        raise ClusteringError(f"unknown descriptor {params.descriptor!r}")

    features = project_all_pixels(diff, eig_rgb, eig_gray, params.h)
    height, width, dim = features.shape
    clustered = kmeans(features.reshape(-1, dim), params.n, params.seed, params.max_iters, params.restarts)
    return replace(clustered, labels=clustered.labels.reshape(height, width),
                   features=features if keep_features else None)


def dump_features(path, features: np.ndarray, labels: np.ndarray, n: int) -> Path:
    """
    Debug dump: int32 LE header (H, W, d, n), then H*W*d float64 LE row-major,
    then H*W int32 LE labels.
    """
    path = Path(path)
    height, width, dim = features.shape
    if labels.shape != (height, width):
        raise DimensionMismatchError(f"labels {labels.shape} do not match features {features.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(np.array([height, width, dim, n], dtype="<i4").tobytes())
        f.write(np.ascontiguousarray(features, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(labels, dtype="<i4").tobytes())
    return path
