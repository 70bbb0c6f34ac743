"""
ChangeChip change detection
- Registration of the inspected image onto the golden reference (SIFT + RANSAC affine)
- Exact histogram specification against the reference
- PCA-Kmeans change classes ranked by MSE, DBSCAN selection of the change classes
- Dataset evaluation and synthetic defect pairs
"""

__version__ = "0.1.0"

from .errors import ChangeChipError, ConfigValidationError, StageError
from .config import PipelineConfig, build_config, load_config
from .imaging import RasterImage, extract_window, load_image, load_mask, save_image, save_mask, to_grayscale
from .registration import AffineTransform, detect_and_describe, estimate_affine_ransac, match_features, register, warp
from .histogram import exact_histogram_match
from .detection import DetectionParams, build_diff, detect_changes, fit_pca, kmeans, project_all_pixels
from .analysis import binary_mask, class_mse, dbscan_1d, overlay, render_heatmap, select_change_classes
from .pipeline import crop_roi, process_pair, run_pipeline
from .evaluation import load_manifest, precision_recall, run_dataset
from .synthetic import generate_defect_pair, synthetic_board
