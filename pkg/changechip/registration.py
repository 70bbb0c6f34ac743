"""
Feature-based registration of the inspected image onto the reference.

SIFT keypoints (OpenCV implementation, parameters fixed in SIFT_PARAMS) are
matched by Euclidean descriptor distance with Lowe's ratio test, a 6-DOF affine
transform is estimated with seeded RANSAC plus a least-squares refit on the
inliers, and the target is warped into the reference frame.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .errors import (
    DegenerateTransformError,
    ImageTooSmallError,
    InsufficientMatchesError,
    RegistrationError,
)
from .imaging import RasterImage

logger = logging.getLogger(__name__)

MIN_IMAGE_SIZE = 32
MIN_DETERMINANT = 1e-6
DEFAULT_RATIO_THRESHOLD = 0.8
DEFAULT_INLIER_THRESHOLD_PX = 3.0
DEFAULT_MAX_ITERS = 2000
REFIT_ROUNDS = 5

SIFT_PARAMS = {
    "nfeatures": 0,
    "nOctaveLayers": 3,
    "contrastThreshold": 0.04,
    "edgeThreshold": 10,
    "sigma": 1.6,
}
DETECTOR_VERSION = f"opencv-sift/{cv2.__version__}"


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float  # radians
    descriptor: np.ndarray = field(repr=False)

    @property
    def position(self) -> Tuple[float, float]:
        return self.x, self.y


@dataclass(frozen=True)
class MatchPair:
    ref_index: int
    tgt_index: int
    distance: float
    ratio: float


@dataclass(frozen=True)
class AffineTransform:
    """2 x 3 matrix mapping target (x, y) coordinates into the reference frame."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64).reshape(2, 3)
        if not np.all(np.isfinite(m)):
            raise DegenerateTransformError("transform contains non-finite values")
        if abs(np.linalg.det(m[:, :2])) <= MIN_DETERMINANT:
            raise DegenerateTransformError(f"degenerate affine transform, det={np.linalg.det(m[:, :2]):.3g}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def from_parameters(cls, angle_deg: float = 0.0, scale: float = 1.0, tx: float = 0.0, ty: float = 0.0,
                        center: Tuple[float, float] = (0.0, 0.0)) -> "AffineTransform":
        """Similarity transform rotating by angle_deg (counter-clockwise in image coords) about center."""
        theta = np.deg2rad(angle_deg)
        a = scale * np.cos(theta)
        b = scale * np.sin(theta)
        cx, cy = center
        linear = np.array([[a, -b], [b, a]])
        offset = np.array([cx, cy]) - linear @ np.array([cx, cy]) + np.array([tx, ty])
        return cls(np.hstack([linear, offset[:, None]]))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 2]

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return pts @ self.linear.T + self.translation

    def inverse(self) -> "AffineTransform":
        inv_linear = np.linalg.inv(self.linear)
        return AffineTransform(np.hstack([inv_linear, (-inv_linear @ self.translation)[:, None]]))

    def compose(self, other: "AffineTransform") -> "AffineTransform":
        """self after other."""
        linear = self.linear @ other.linear
        offset = self.linear @ other.translation + self.translation
        return AffineTransform(np.hstack([linear, offset[:, None]]))

    def corner_error(self, other: "AffineTransform", width: int, height: int) -> float:
        """Mean distance between where the two transforms send the image corners."""
        corners = np.array([[0, 0], [width - 1, 0], [0, height - 1], [width - 1, height - 1]], dtype=np.float64)
        return float(np.linalg.norm(self.apply(corners) - other.apply(corners), axis=1).mean())


@dataclass
class RegistrationResult:
    aligned: RasterImage
    transform: AffineTransform
    ref_keypoints: List[Keypoint]
    tgt_keypoints: List[Keypoint]
    matches: List[MatchPair]
    inliers: np.ndarray
    coverage: np.ndarray = field(repr=False, default=None)

    @property
    def inlier_count(self) -> int:
        return int(np.count_nonzero(self.inliers))

    def mean_inlier_error(self) -> float:
        if not self.inlier_count:
            return float("nan")
        src, dst = correspondences(self.ref_keypoints, self.tgt_keypoints, self.matches)
        residuals = reprojection_errors(self.transform.matrix, src, dst)
        return float(residuals[self.inliers].mean())

    def summary(self) -> dict:
        return {
            "detector": DETECTOR_VERSION,
            "sift_params": dict(SIFT_PARAMS),
            "ref_keypoints": len(self.ref_keypoints),
            "tgt_keypoints": len(self.tgt_keypoints),
            "matches": len(self.matches),
            "inliers": self.inlier_count,
            "mean_inlier_error_px": self.mean_inlier_error(),
            "transform": self.transform.matrix.tolist(),
        }


def _to_gray8(img: RasterImage) -> np.ndarray:
    return np.clip(np.rint(img.gray * 255.0), 0, 255).astype(np.uint8)


def detect_and_describe(img: RasterImage) -> List[Keypoint]:
    """
    Detect SIFT keypoints and L2-normalised descriptors.

    The output is sorted by (y, x, scale, orientation) so that it does not depend
    on OpenCV's internal thread scheduling.
    """
    if min(img.width, img.height) < MIN_IMAGE_SIZE:
        raise ImageTooSmallError(
            f"image {img.width}x{img.height} is smaller than {MIN_IMAGE_SIZE}px on its short side"
        )
    sift = cv2.SIFT_create(**SIFT_PARAMS)
    cv_keypoints, descriptors = sift.detectAndCompute(_to_gray8(img), None)
    if not cv_keypoints or descriptors is None:
        return []

    descriptors = descriptors.astype(np.float64)
    norms = np.linalg.norm(descriptors, axis=1, keepdims=True)
    descriptors = descriptors / np.where(norms > 0, norms, 1.0)

    xs = np.array([kp.pt[0] for kp in cv_keypoints])
    ys = np.array([kp.pt[1] for kp in cv_keypoints])
    sizes = np.array([kp.size for kp in cv_keypoints])
    angles = np.deg2rad(np.array([kp.angle for kp in cv_keypoints]))
    order = np.lexsort((angles, sizes, xs, ys))
    return [
        Keypoint(x=float(xs[i]), y=float(ys[i]), scale=float(sizes[i]), orientation=float(angles[i]),
                 descriptor=descriptors[i])
        for i in order
    ]


def _descriptor_matrix(keypoints: Sequence[Keypoint]) -> np.ndarray:
    return np.ascontiguousarray(np.stack([kp.descriptor for kp in keypoints]).astype(np.float32))


def passes_ratio_test(nearest: float, second: float, ratio_threshold: float) -> Tuple[bool, float]:
    """Lowe's rule: keep the nearest neighbour iff nearest / second <= ratio_threshold."""
    if second <= 0:
        ratio = 0.0 if nearest <= 0 else float("inf")
    else:
        ratio = nearest / second
    return ratio <= ratio_threshold, ratio


def match_features(refs: Sequence[Keypoint], tgts: Sequence[Keypoint],
                   ratio_threshold: float = DEFAULT_RATIO_THRESHOLD) -> List[MatchPair]:
    """For every reference keypoint, its nearest target keypoint if it passes the ratio test."""
    if len(refs) < 2 or len(tgts) < 2:
        raise InsufficientMatchesError(
            f"ratio test needs at least 2 keypoints per image (got {len(refs)} and {len(tgts)})"
        )
    if not 0 < ratio_threshold <= 1:
        raise ValueError(f"ratio_threshold must be in (0, 1], got {ratio_threshold}")

    matcher = cv2.BFMatcher(cv2.NORM_L2, crossCheck=False)
    knn = matcher.knnMatch(_descriptor_matrix(refs), _descriptor_matrix(tgts), k=2)
    matches = []
    for candidates in knn:
        if len(candidates) < 2:
            continue
        first, second = candidates[0], candidates[1]
        keep, ratio = passes_ratio_test(first.distance, second.distance, ratio_threshold)
        if keep:
            matches.append(MatchPair(ref_index=first.queryIdx, tgt_index=first.trainIdx,
                                     distance=float(first.distance), ratio=float(ratio)))
    return matches


def correspondences(refs: Sequence[Keypoint], tgts: Sequence[Keypoint],
                    matches: Sequence[MatchPair]) -> Tuple[np.ndarray, np.ndarray]:
    """(target points, reference points) as two N x 2 arrays."""
    src = np.array([tgts[m.tgt_index].position for m in matches], dtype=np.float64).reshape(-1, 2)
    dst = np.array([refs[m.ref_index].position for m in matches], dtype=np.float64).reshape(-1, 2)
    return src, dst


def reprojection_errors(matrix: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    projected = src @ matrix[:, :2].T + matrix[:, 2]
    return np.linalg.norm(projected - dst, axis=1)


def _homogeneous(points: np.ndarray) -> np.ndarray:
    return np.hstack([points, np.ones((len(points), 1))])


def _fit_exact(src: np.ndarray, dst: np.ndarray) -> Optional[np.ndarray]:
    design = _homogeneous(src)
    if abs(np.linalg.det(design)) < 1e-9:
        return None  # collinear sample
    return np.linalg.solve(design, dst).T


def _fit_lstsq(src: np.ndarray, dst: np.ndarray) -> Optional[np.ndarray]:
    if len(src) < 3:
        return None
    solution, _, rank, _ = np.linalg.lstsq(_homogeneous(src), dst, rcond=None)
    if rank < 3:
        return None
    return solution.T


def _is_degenerate(matrix: np.ndarray) -> bool:
    return not np.all(np.isfinite(matrix)) or abs(np.linalg.det(matrix[:, :2])) <= MIN_DETERMINANT


def estimate_affine_ransac(src, dst, inlier_threshold_px: float = DEFAULT_INLIER_THRESHOLD_PX,
                           max_iters: int = DEFAULT_MAX_ITERS,
                           seed: int = 0) -> Tuple[AffineTransform, np.ndarray]:
    """
    Robust affine fit of src -> dst correspondences.

    Args:
        src: N x 2 target-image points
        dst: N x 2 reference-image points
        inlier_threshold_px: maximum reprojection error of an inlier
        max_iters: number of minimal samples drawn
        seed: seed of the sample sequence

    Returns:
        (transform, boolean inlier mask); every inlier's error is within the threshold
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError(f"src and dst differ in length ({len(src)} vs {len(dst)})")
    n = len(src)
    if n < 3:
        raise InsufficientMatchesError(f"affine estimation needs at least 3 matches (got {n})")

    rng = np.random.default_rng(seed)
    best_model = None
    best_inliers = None
    best_count = 0
    best_error = np.inf

    for _ in range(max_iters):
        sample = rng.choice(n, size=3, replace=False)
        model = _fit_exact(src[sample], dst[sample])
        if model is None or _is_degenerate(model):
            continue
        errors = reprojection_errors(model, src, dst)
        inliers = errors <= inlier_threshold_px
        count = int(inliers.sum())
        error = float(errors[inliers].sum())
        if count > best_count or (count == best_count and error < best_error):
            best_model, best_inliers, best_count, best_error = model, inliers, count, error
            if count == n:
                break

    if best_model is None or best_count < 3:
        raise RegistrationError(f"RANSAC found no affine model with at least 3 inliers among {n} matches")

    model, inliers = best_model, best_inliers
    for _ in range(REFIT_ROUNDS):
        refit = _fit_lstsq(src[inliers], dst[inliers])
        if refit is None or _is_degenerate(refit):
            break
        refit_inliers = reprojection_errors(refit, src, dst) <= inlier_threshold_px
        if refit_inliers.sum() < 3:
            break
        converged = np.array_equal(refit_inliers, inliers)
        model, inliers = refit, refit_inliers
        if converged:
            break

    logger.debug("RANSAC kept %d/%d inliers", int(inliers.sum()), n)
    return AffineTransform(model), inliers


def warp(img: RasterImage, transform: AffineTransform, out_w: int, out_h: int) -> RasterImage:
    """Bilinear resampling of img into an out_w x out_h frame; samples outside img are 0."""
    warped = warp_array(img.pixels, transform, out_w, out_h)
    return RasterImage(np.clip(warped, 0.0, 1.0))


def warp_array(array: np.ndarray, transform: AffineTransform, out_w: int, out_h: int) -> np.ndarray:
    return cv2.warpAffine(
        np.ascontiguousarray(array, dtype=np.float64),
        transform.matrix,
        (int(out_w), int(out_h)),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )


def coverage_map(source_shape: Tuple[int, int], transform: AffineTransform, out_w: int, out_h: int) -> np.ndarray:
    """Fraction of each output pixel's bilinear weight that fell inside the source image."""
    ones = np.ones(source_shape, dtype=np.float64)
    return np.clip(warp_array(ones, transform, out_w, out_h), 0.0, 1.0)


def register(reference: RasterImage, target: RasterImage, ratio_threshold: float = DEFAULT_RATIO_THRESHOLD,
             inlier_threshold_px: float = DEFAULT_INLIER_THRESHOLD_PX, max_iters: int = DEFAULT_MAX_ITERS,
             seed: int = 0) -> RegistrationResult:
    """Align target to reference: detect -> match -> RANSAC -> warp."""
    refs = detect_and_describe(reference)
    tgts = detect_and_describe(target)
    logger.info("Detected %d reference and %d target keypoints", len(refs), len(tgts))
    if len(refs) < 2 or len(tgts) < 2:
        raise InsufficientMatchesError(
            f"insufficient matches: {len(refs)} reference and {len(tgts)} target keypoints"
        )

    matches = match_features(refs, tgts, ratio_threshold)
    logger.info("%d matches passed the ratio test (threshold %.2f)", len(matches), ratio_threshold)
    if len(matches) < 3:
        raise InsufficientMatchesError(f"insufficient matches: {len(matches)} passed the ratio test, 3 required")

    src, dst = correspondences(refs, tgts, matches)
    transform, inliers = estimate_affine_ransac(src, dst, inlier_threshold_px, max_iters, seed)
    logger.info("RANSAC: %d/%d inliers", int(inliers.sum()), len(matches))

    aligned = warp(target, transform, reference.width, reference.height)
    coverage = coverage_map(target.shape, transform, reference.width, reference.height)
    return RegistrationResult(aligned=aligned, transform=transform, ref_keypoints=refs, tgt_keypoints=tgts,
                              matches=matches, inliers=inliers, coverage=coverage)


def render_matches(reference: RasterImage, target: RasterImage, refs: Sequence[Keypoint],
                   tgts: Sequence[Keypoint], matches: Sequence[MatchPair],
                   inliers: Optional[np.ndarray] = None) -> RasterImage:
    """Side-by-side debug image: reference left, target right, inliers green, outliers red."""
    height = max(reference.height, target.height)
    canvas = np.zeros((height, reference.width + target.width, 3), dtype=np.uint8)
    canvas[:reference.height, :reference.width] = reference.to_uint8()
    canvas[:target.height, reference.width:] = target.to_uint8()
    if inliers is None:
        inliers = np.ones(len(matches), dtype=bool)
    for match, is_inlier in zip(matches, inliers):
        rx, ry = refs[match.ref_index].position
        tx, ty = tgts[match.tgt_index].position
        color = (0, 200, 0) if is_inlier else (220, 0, 0)
        p1 = (int(round(rx)), int(round(ry)))
        p2 = (int(round(tx)) + reference.width, int(round(ty)))
        cv2.line(canvas, p1, p2, color, 1, cv2.LINE_AA)
        cv2.circle(canvas, p1, 2, color, -1)
        cv2.circle(canvas, p2, 2, color, -1)
    return RasterImage(canvas.astype(np.float64) / 255.0)
