"""
Image representation, color conversion, window extraction and file I/O.

Channel values are reals in [0, 1]; 8-bit files are mapped c -> c/255 on load
and v -> round(v*255) on save.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image, UnidentifiedImageError

from .errors import DimensionMismatchError, ImageFormatError, WindowBoundsError

logger = logging.getLogger(__name__)

GRAY_WEIGHTS = (0.3, 0.59, 0.11)
SUPPORTED_FORMATS = {"PNG", "BMP"}
SUFFIX_FORMATS = {".png": "PNG", ".bmp": "BMP"}
# Pillow modes promoted to RGB on load; anything with alpha is rejected
PROMOTABLE_MODES = {"L", "1", "P"}
ALPHA_MODES = {"RGBA", "LA", "PA", "RGBa", "La"}

PathLike = Union[str, Path]


@dataclass(frozen=True)
class RasterImage:
    """H x W x 3 image with float64 channels in [0, 1]. The pixel buffer is read-only."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageFormatError(f"expected an H x W x 3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageFormatError(f"zero-dimension image {arr.shape[1]}x{arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ImageFormatError("image contains NaN or infinite values")
        if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
            raise ImageFormatError(f"channel values must lie in [0, 1] (got [{arr.min()}, {arr.max()}])")
        arr = np.clip(arr, 0.0, 1.0)
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, array) -> "RasterImage":
        return cls(np.array(array, dtype=np.float64, copy=True))

    @classmethod
    def filled(cls, width: int, height: int, color=(0.0, 0.0, 0.0)) -> "RasterImage":
        arr = np.empty((height, width, 3), dtype=np.float64)
        arr[...] = np.asarray(color, dtype=np.float64)
        return cls(arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape[:2]

    def channel(self, index: int) -> np.ndarray:
        return self.pixels[:, :, index]

    @property
    def gray(self) -> np.ndarray:
        return to_grayscale(self)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.pixels * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class PixelWindow:
    center: Tuple[int, int]
    size: int
    values: np.ndarray


def to_grayscale(img: RasterImage) -> np.ndarray:
    """gray = 0.3 R + 0.59 G + 0.11 B, kept as reals."""
    p = img.pixels
    wr, wg, wb = GRAY_WEIGHTS
    return wr * p[:, :, 0] + wg * p[:, :, 1] + wb * p[:, :, 2]


def _check_window_size(h: int) -> int:
    if int(h) != h or h < 1 or h % 2 == 0:
        raise WindowBoundsError(f"window size must be a positive odd integer (got {h})")
    return int(h)


def window_stack(plane: np.ndarray, centers: np.ndarray, h: int) -> np.ndarray:
    """
    h x h zero-padded windows around many centers at once.

    Args:
        plane: 2-D array
        centers: M x 2 integer array of (row, col), all inside the plane
        h: odd window size

    Returns:
        M x h x h array
    """
    h = _check_window_size(h)
    r = h // 2
    centers = np.asarray(centers, dtype=np.intp).reshape(-1, 2)
    padded = np.pad(np.asarray(plane, dtype=np.float64), r, mode="constant", constant_values=0.0)
    # padded window (i, j) is centered on original pixel (i, j)
    views = sliding_window_view(padded, (h, h))
    return views[centers[:, 0], centers[:, 1]].copy()


def extract_window(plane: np.ndarray, center: Tuple[int, int], h: int) -> PixelWindow:
    """h x h window around center; positions outside the plane are 0."""
    plane = np.asarray(plane)
    row, col = center
    if not (0 <= row < plane.shape[0] and 0 <= col < plane.shape[1]):
        raise WindowBoundsError(f"center {center} outside plane of shape {plane.shape}")
    values = window_stack(plane, np.array([[row, col]]), h)[0]
    return PixelWindow(center=(int(row), int(col)), size=int(h), values=values)


def _open(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError as e:
        raise ImageFormatError(f"cannot read {path}: file not found") from e
    except (UnidentifiedImageError, OSError) as e:
        raise ImageFormatError(f"cannot read {path}: {e}") from e
    if img.format not in SUPPORTED_FORMATS:
        raise ImageFormatError(f"{path}: unsupported format {img.format} (PNG or BMP expected)")
    return img


def load_image(path: PathLike) -> RasterImage:
    """Load an 8-bit RGB PNG/BMP file. Gray and palette images are promoted to RGB."""
    path = Path(path)
    img = _open(path)
    mode = img.mode
    if mode in ALPHA_MODES or (mode == "P" and "transparency" in img.info):
        raise ImageFormatError(f"{path}: images with an alpha channel are not supported (mode {mode})")
    if mode in PROMOTABLE_MODES:
        img = img.convert("RGB")
    elif mode != "RGB":
        raise ImageFormatError(f"{path}: unsupported pixel mode {mode} (8-bit RGB expected)")
    if img.width < 1 or img.height < 1:
        raise ImageFormatError(f"{path}: zero-dimension image")
    arr = np.asarray(img, dtype=np.uint8)
    return RasterImage(arr.astype(np.float64) / 255.0)


def _format_for(path: Path) -> str:
    fmt = SUFFIX_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise ImageFormatError(f"{path}: unsupported file extension (use .png or .bmp)")
    return fmt


def save_image(img: RasterImage, path: PathLike) -> Path:
    path = Path(path)
    fmt = _format_for(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        Image.fromarray(img.to_uint8()).save(path, format=fmt)
    except OSError as e:
        raise ImageFormatError(f"cannot write {path}: {e}") from e
    return path


def load_mask(path: PathLike) -> np.ndarray:
    """Binary mask from an image file; change = gray value >= 0.5."""
    return to_grayscale(load_image(path)) >= 0.5


def save_mask(mask: np.ndarray, path: PathLike) -> Path:
    """Write a boolean mask as a single-channel 0/255 image."""
    path = Path(path)
    fmt = _format_for(path)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise DimensionMismatchError(f"mask must be 2-D, got shape {mask.shape}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.astype(np.uint8) * 255).save(path, format=fmt)
    return path
