"""
End-to-end change detection for one reference/target pair.

Stages run in order: load, crop (optional ROI), registration (optional),
histogram (optional), detection, analysis, write. Any failure is re-raised as
StageError tagged with the stage; artifacts of completed stages stay on disk
and run.json records the failure.
"""
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import cv2
import numpy as np
import scipy
import sklearn

from . import __version__
from .analysis import (ChangeMask, ClassStats, Selection, binary_mask, class_mse, class_report, overlay,
                       render_heatmap, select_change_classes)
from .config import PipelineConfig, config_summary
from .detection import ClusterMap, DetectionParams, detect_changes, dump_features
from .errors import StageError, WindowBoundsError
from .histogram import HistogramSpec, exact_histogram_match
from .imaging import RasterImage, load_image, save_image, save_mask
from .registration import DETECTOR_VERSION, SIFT_PARAMS, RegistrationResult, register, render_matches

logger = logging.getLogger(__name__)

# registered pixels whose bilinear support is less than this inside the target are uncovered
COVERAGE_THRESHOLD = 0.999

ALIGNED_FILE = "aligned.png"
HEATMAP_FILE = "heatmap.png"
MASK_FILE = "mask.png"
OVERLAY_FILE = "overlay.png"
CLASSES_FILE = "classes.json"
RUN_FILE = "run.json"
MATCHES_FILE = "matches.png"
FEATURES_FILE = "features.bin"


@dataclass
class PipelineResult:
    """Everything one run produced. Fields stay None for stages that did not run."""

    config: PipelineConfig
    reference: Optional[RasterImage] = None
    target: Optional[RasterImage] = None
    aligned: Optional[RasterImage] = None
    registration: Optional[RegistrationResult] = None
    uncovered_pixels: int = 0
    histogram_mismatches: Optional[int] = None
    cluster_map: Optional[ClusterMap] = None
    stats: Optional[List[ClassStats]] = None
    selection: Optional[Selection] = None
    mask: Optional[ChangeMask] = None
    heatmap: Optional[RasterImage] = None
    overlay: Optional[RasterImage] = None
    timings: Dict[str, float] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    status: str = "running"
    failed_stage: Optional[str] = None
    error: Optional[str] = None

    @property
    def selected_count(self) -> int:
        return len(self.selection.selected) if self.selection is not None else 0

    def run_record(self) -> Dict[str, Any]:
        """The run.json document."""
        record: Dict[str, Any] = {
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "config": config_summary(self.config),
            "seed": self.config.seed,
            "modality": self.config.modality,
            "eps": self.config.effective_eps,
            "versions": library_versions(),
            "sift_params": dict(SIFT_PARAMS),
            "timings": dict(self.timings),
            "registration": self.registration.summary() if self.registration is not None else None,
            "uncovered_pixels": self.uncovered_pixels,
            "fill_uncovered": self.config.fill_uncovered,
            "histogram_mismatches": self.histogram_mismatches,
            "artifacts": dict(self.artifacts),
        }
        if self.reference is not None:
            record["size"] = {"width": self.reference.width, "height": self.reference.height}
        if self.cluster_map is not None:
            record["kmeans"] = {
                "iterations": self.cluster_map.iterations,
                "objective": self.cluster_map.objective,
                "empty_classes": list(self.cluster_map.empty_classes),
            }
        if self.stats is not None:
            record["classes"] = class_report(self.stats)
        if self.selection is not None:
            record["dbscan_clusters"] = self.selection.cluster_count
            record["selected_classes"] = sorted(self.selection.selected)
            record["selected_count"] = self.selected_count
        if self.mask is not None:
            record["mask_pixels"] = self.mask.count
        return _json_ready(record)


def library_versions() -> Dict[str, str]:
    return {
        "changechip": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "opencv": cv2.__version__,
        "detector": DETECTOR_VERSION,
    }


def _json_ready(value):
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(document, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(_json_ready(document), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _crop_array(array: np.ndarray, rect: Tuple[int, int, int, int]) -> np.ndarray:
    x, y, w, h = (int(v) for v in rect)
    height, width = array.shape[:2]
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > width or y + h > height:
        raise WindowBoundsError(f"ROI ({x},{y},{w},{h}) is outside the {width}x{height} image")
    return np.array(array[y:y + h, x:x + w], copy=True)


def crop_roi(img: RasterImage, rect: Tuple[int, int, int, int]) -> RasterImage:
    """
    Copy of the x, y, w, h rectangle of img.

    Raises:
        WindowBoundsError: if the rectangle is empty or leaves the image
    """
    return RasterImage(_crop_array(img.pixels, rect))


def crop_mask(mask: np.ndarray, rect: Tuple[int, int, int, int]) -> np.ndarray:
    return _crop_array(np.asarray(mask, dtype=bool), rect)


def fill_uncovered(aligned: RasterImage, reference: RasterImage, coverage: np.ndarray) -> Tuple[RasterImage, int]:
    """Replace registered pixels that fell outside the target with the reference pixel."""
    uncovered = coverage < COVERAGE_THRESHOLD
    count = int(uncovered.sum())
    if not count:
        return aligned, 0
    pixels = np.array(aligned.pixels, copy=True)
    pixels[uncovered] = reference.pixels[uncovered]
    return RasterImage(pixels), count


@contextmanager
def _stage(name: str, result: PipelineResult):
    start = time.perf_counter()
    logger.info("Stage %s started", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        result.status = "failed"
        result.failed_stage = name
        result.error = f"{type(e).__name__}: {e}"
        logger.error("Stage %s failed: %s", name, result.error)
        raise StageError(name, e) from e
    finally:
        result.timings[name] = round(time.perf_counter() - start, 6)


class _Artifacts:
    def __init__(self, out_dir: Optional[Path], result: PipelineResult):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.result = result
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def image(self, name: str, img: RasterImage) -> None:
        if self.out_dir is not None:
            self.result.artifacts[name] = str(save_image(img, self.out_dir / name))

    def mask(self, name: str, mask: np.ndarray) -> None:
        if self.out_dir is not None:
            self.result.artifacts[name] = str(save_mask(mask, self.out_dir / name))

    def json(self, name: str, document) -> None:
        if self.out_dir is not None:
            self.result.artifacts[name] = str(write_json(document, self.out_dir / name))

    def features(self, name: str, cm: ClusterMap) -> None:
        if self.out_dir is not None and cm.features is not None:
            self.result.artifacts[name] = str(dump_features(self.out_dir / name, cm.features, cm.labels, cm.n))


def process_pair(reference: RasterImage, target: RasterImage, cfg: PipelineConfig,
                 out_dir=None) -> PipelineResult:
    """
    Run every stage on in-memory images.

    Args:
        reference: golden image
        target: inspected image
        cfg: validated configuration
        out_dir: when given, artifacts are written there as stages complete

    Returns:
        PipelineResult with status "ok"

    Raises:
        StageError: wrapping the first failure
    """
    return _execute(reference, target, cfg, PipelineResult(config=cfg), out_dir)


def _execute(reference: RasterImage, target: RasterImage, cfg: PipelineConfig, result: PipelineResult,
             out_dir) -> PipelineResult:
    files = _Artifacts(out_dir, result)
    try:
        _run_stages(reference, target, cfg, result, files)
    finally:
        if result.status == "failed" and files.out_dir is not None:
            try:
                files.json(RUN_FILE, result.run_record())
            except OSError as e:
                logger.error("Could not write %s after failure: %s", RUN_FILE, e)
    return result


def _run_stages(reference: RasterImage, target: RasterImage, cfg: PipelineConfig,
                result: PipelineResult, files: _Artifacts) -> None:
    with _stage("crop", result):
        if cfg.roi is not None:
            reference = crop_roi(reference, cfg.roi)
            target = crop_roi(target, cfg.roi)
        result.reference, result.target = reference, target

    aligned = target
    with _stage("registration", result):
        if cfg.skip_registration:
            logger.info("Registration skipped")
        else:
            registration = register(reference, target, cfg.ratio_threshold, cfg.ransac.threshold_px,
                                    cfg.ransac.iters, cfg.seed)
            result.registration = registration
            aligned = registration.aligned
            if cfg.fill_uncovered:
                aligned, result.uncovered_pixels = fill_uncovered(aligned, reference, registration.coverage)
                logger.info("Filled %d uncovered pixels from the reference", result.uncovered_pixels)
            if cfg.debug:
                files.image(MATCHES_FILE, render_matches(reference, target, registration.ref_keypoints,
                                                         registration.tgt_keypoints, registration.matches,
                                                         registration.inliers))

    compared = reference
    with _stage("histogram", result):
        if cfg.skip_histogram:
            logger.info("Histogram matching skipped")
        elif cfg.match_direction == "target_to_reference":
            aligned = exact_histogram_match(aligned, reference, cfg.histogram_levels)
            result.histogram_mismatches = _mismatches(aligned, reference)
        else:
            compared = exact_histogram_match(reference, aligned, cfg.histogram_levels)
            result.histogram_mismatches = _mismatches(compared, aligned)
        result.aligned = aligned
        files.image(ALIGNED_FILE, aligned)

    with _stage("detection", result):
        params = DetectionParams(h=cfg.h, n=cfg.n, s_rgb=cfg.s_rgb, s_gray=cfg.s_gray, seed=cfg.seed,
                                 max_iters=cfg.kmeans_max_iters, restarts=cfg.kmeans_restarts,
                                 descriptor=cfg.descriptor)
        result.cluster_map = detect_changes(compared, aligned, params, keep_features=cfg.debug)
        if cfg.debug:
            files.features(FEATURES_FILE, result.cluster_map)

    with _stage("analysis", result):
        cm = result.cluster_map
        stats = class_mse(compared, aligned, cm)
        result.selection = select_change_classes(stats, cfg.effective_eps, cfg.min_pts, cfg.discard)
        result.stats = result.selection.stats
        result.mask = binary_mask(cm, result.selection)
        result.heatmap = render_heatmap(cm, result.stats)
        result.overlay = overlay(reference, result.mask)
        logger.info("Change mask: %d pixels in %d class(es)", result.mask.count, result.selected_count)

    with _stage("write", result):
        files.image(HEATMAP_FILE, result.heatmap)
        files.mask(MASK_FILE, result.mask.mask)
        files.image(OVERLAY_FILE, result.overlay)
        files.json(CLASSES_FILE, class_report(result.stats))
        result.status = "ok"
        files.json(RUN_FILE, result.run_record())


def _mismatches(matched: RasterImage, ref: RasterImage) -> int:
    if matched.shape != ref.shape:
        return 0
    return int(np.abs(HistogramSpec.of(matched).bins - HistogramSpec.of(ref).bins).sum())


def run_pipeline(ref_path, tgt_path, cfg: PipelineConfig, out_dir) -> PipelineResult:
    """
    Load both images and run process_pair, writing artifacts under out_dir.

    Raises:
        StageError: tagged "load" when an image cannot be read
    """
    result = PipelineResult(config=cfg)
    try:
        with _stage("load", result):
            reference = load_image(ref_path)
            target = load_image(tgt_path)
    except StageError:
        write_json(result.run_record(), Path(out_dir) / RUN_FILE)
        raise
    logger.info("Loaded %s (%dx%d) and %s (%dx%d)", ref_path, reference.width, reference.height,
                tgt_path, target.width, target.height)
    return _execute(reference, target, cfg, result, out_dir)
