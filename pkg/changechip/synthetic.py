"""
Synthetic defect pairs with exact ground truth.

A defect spec lists block/blob edits applied to a copy of a base image,
optionally followed by a global illumination scale and a small affine jitter
of the target. The ground truth marks, in the reference frame, every pixel
inside a defect footprint whose value changed visibly (some channel by more
than DefectSpec.visible_change).
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

import cv2
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from typing_extensions import Annotated

from .errors import DefectSpecError
from .imaging import RasterImage, to_grayscale
from .registration import AffineTransform

logger = logging.getLogger(__name__)

Color = Tuple[float, float, float]

# grain and sensor noise on synthetic boards stay well below this
VISIBLE_CHANGE = 0.1
# component bodies are the dark parts of a board
BODY_GRAY = 0.2
PLACEMENT_TRIES = 64


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: int = Field(ge=0)
    y: int = Field(ge=0)
    w: int = Field(ge=1)
    h: int = Field(ge=1)


class EraseBlock(_Block):
    """Missing component: the block is filled with a flat color (default: board median)."""

    kind: Literal["erase_block"] = "erase_block"
    color: Optional[Color] = None


class ShiftBlock(_Block):
    """Misaligned component: the block content moves by (dx, dy)."""

    kind: Literal["shift_block"] = "shift_block"
    dx: int = 0
    dy: int = 0
    color: Optional[Color] = None


class RecolorBlock(_Block):
    kind: Literal["recolor_block"] = "recolor_block"
    color: Color
    strength: float = Field(0.7, gt=0, le=1)


class PasteBlob(BaseModel):
    """Solder ball / bridge: a filled disk."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["paste_blob"] = "paste_blob"
    x: int = Field(ge=0)
    y: int = Field(ge=0)
    radius: int = Field(ge=1)
    color: Optional[Color] = None


Defect = Annotated[Union[EraseBlock, ShiftBlock, RecolorBlock, PasteBlob], Field(discriminator="kind")]


class Jitter(BaseModel):
    model_config = ConfigDict(extra="forbid")

    angle: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.angle == 0 and self.tx == 0 and self.ty == 0


class DefectSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    defects: List[Defect] = Field(default_factory=list)
    illumination: float = Field(1.0, gt=0)
    jitter: Jitter = Field(default_factory=Jitter)
    visible_change: float = Field(VISIBLE_CHANGE, ge=0)


@dataclass(frozen=True)
class DefectPair:
    reference: RasterImage
    target: RasterImage
    ground_truth: np.ndarray


def parse_defect_spec(data) -> DefectSpec:
    if isinstance(data, DefectSpec):
        return data
    try:
        return DefectSpec.model_validate(data)
    except ValidationError as e:
        raise DefectSpecError(f"invalid defect spec: {e}") from e


def load_defect_spec(path) -> DefectSpec:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DefectSpecError(f"cannot read defect spec {path}: {e}") from e
    return parse_defect_spec(data)


def _block_slices(block: _Block, shape, label: str):
    height, width = shape
    if block.x + block.w > width or block.y + block.h > height:
        raise DefectSpecError(
            f"{label} ({block.x},{block.y},{block.w}x{block.h}) exceeds image {width}x{height}"
        )
    return slice(block.y, block.y + block.h), slice(block.x, block.x + block.w)


def _apply(defect, pixels: np.ndarray, footprint: np.ndarray, fill: np.ndarray) -> None:
    shape = pixels.shape[:2]
    if isinstance(defect, EraseBlock):
        rows, cols = _block_slices(defect, shape, "erase_block")
        pixels[rows, cols] = defect.color if defect.color is not None else fill
        footprint[rows, cols] = True
    elif isinstance(defect, ShiftBlock):
        rows, cols = _block_slices(defect, shape, "shift_block")
        moved = ShiftBlock(x=defect.x + defect.dx, y=defect.y + defect.dy, w=defect.w, h=defect.h)
        if moved.x < 0 or moved.y < 0:
            raise DefectSpecError(f"shift_block destination ({moved.x},{moved.y}) is outside the image")
        dst_rows, dst_cols = _block_slices(moved, shape, "shift_block destination")
        content = pixels[rows, cols].copy()
        pixels[rows, cols] = defect.color if defect.color is not None else fill
        pixels[dst_rows, dst_cols] = content
        footprint[rows, cols] = True
        footprint[dst_rows, dst_cols] = True
    elif isinstance(defect, RecolorBlock):
        rows, cols = _block_slices(defect, shape, "recolor_block")
        color = np.asarray(defect.color, dtype=np.float64)
        pixels[rows, cols] = (1 - defect.strength) * pixels[rows, cols] + defect.strength * color
        footprint[rows, cols] = True
    elif isinstance(defect, PasteBlob):
        height, width = shape
        if not (defect.radius <= defect.x < width - defect.radius and defect.radius <= defect.y < height - defect.radius):
            raise DefectSpecError(f"paste_blob at ({defect.x},{defect.y}) r={defect.radius} leaves the image")
        disk = np.zeros(shape, dtype=np.uint8)
        cv2.circle(disk, (defect.x, defect.y), defect.radius, 1, -1)
        disk = disk.astype(bool)
        pixels[disk] = defect.color if defect.color is not None else fill
        footprint |= disk
    else:
        raise DefectSpecError(f"unknown defect {defect!r}")


def jitter_transform(jitter: Jitter, width: int, height: int) -> AffineTransform:
    """Rotation about the image center followed by translation."""
    return AffineTransform.from_parameters(angle_deg=jitter.angle, tx=jitter.tx, ty=jitter.ty,
                                           center=((width - 1) / 2.0, (height - 1) / 2.0))


def generate_defect_pair(base: RasterImage, defect_spec, seed: int = 0) -> DefectPair:
    """
    Returns:
        DefectPair(reference=base, target=edited copy, ground_truth=H x W bool mask)
    """
    spec = parse_defect_spec(defect_spec)
    rng = np.random.default_rng(seed)
    pixels = np.array(base.pixels, copy=True)
    footprint = np.zeros(base.shape, dtype=bool)
    fill = np.median(base.pixels.reshape(-1, 3), axis=0)
    for defect in spec.defects:
        if isinstance(defect, PasteBlob) and defect.color is None:
            # solder-like light gray with a little seeded variation
            defect = defect.model_copy(update={"color": tuple(np.clip(0.8 + rng.normal(0, 0.03, 3), 0, 1))})
        _apply(defect, pixels, footprint, fill)

    ground_truth = footprint & (np.abs(pixels - base.pixels).max(axis=2) > spec.visible_change)

    if spec.illumination != 1.0:
        pixels = np.clip(pixels * spec.illumination, 0.0, 1.0)
    if not spec.jitter.is_identity:
        transform = jitter_transform(spec.jitter, base.width, base.height)
        pixels = cv2.warpAffine(pixels, transform.matrix, (base.width, base.height),
                                flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
        pixels = np.clip(pixels, 0.0, 1.0)

    logger.info("Generated defect pair: %d defect(s), %d ground-truth pixels",
                len(spec.defects), int(ground_truth.sum()))
    return DefectPair(reference=base, target=RasterImage(pixels), ground_truth=ground_truth)


def synthetic_board(width: int = 256, height: int = 256, seed: int = 0) -> RasterImage:
    """
    PCB-like test image: green substrate with grain, copper traces, pads, dark
    component bodies with light markings. Textured enough for SIFT.
    """
    rng = np.random.default_rng(seed)
    board = np.empty((height, width, 3), dtype=np.float64)
    board[...] = (0.12, 0.42, 0.22)
    grain = cv2.GaussianBlur(rng.normal(0, 1, (height, width)), (0, 0), 1.5)
    board += 0.04 * grain[:, :, None]

    canvas = np.ascontiguousarray(board)
    for _ in range(max(4, (width * height) // 4000)):
        p1 = (int(rng.integers(0, width)), int(rng.integers(0, height)))
        if rng.random() < 0.5:
            p2 = (int(rng.integers(0, width)), p1[1])
        else:
            p2 = (p1[0], int(rng.integers(0, height)))
        cv2.line(canvas, p1, p2, (0.72, 0.55, 0.25), int(rng.integers(1, 4)))
    for _ in range(max(6, (width * height) // 2500)):
        x, y = int(rng.integers(0, width - 6)), int(rng.integers(0, height - 6))
        s = int(rng.integers(3, 7))
        cv2.rectangle(canvas, (x, y), (x + s, y + s), (0.85, 0.82, 0.75), -1)
    for _ in range(max(3, (width * height) // 6000)):
        w, h = int(rng.integers(10, 28)), int(rng.integers(6, 18))
        x, y = int(rng.integers(0, max(1, width - w))), int(rng.integers(0, max(1, height - h)))
        cv2.rectangle(canvas, (x, y), (x + w, y + h), (0.08, 0.08, 0.09), -1)
        cv2.circle(canvas, (x + 3, y + 3), 1, (0.9, 0.9, 0.9), -1)
        cv2.line(canvas, (x + 4, y + h // 2), (x + w - 4, y + h // 2), (0.6, 0.6, 0.6), 1)
    # camera blur and sensor noise
    canvas = cv2.GaussianBlur(canvas, (0, 0), 0.7) + rng.normal(0, 0.01, canvas.shape)
    return RasterImage(np.clip(canvas, 0.0, 1.0))


def _body_block(base: RasterImage, size: int, margin: int, rng: np.random.Generator) -> Tuple[int, int]:
    """Top-left corner, among seeded candidates, of the block covering the most component body."""
    body = to_grayscale(base) < BODY_GRAY
    xs = rng.integers(margin, base.width - margin - size, PLACEMENT_TRIES)
    ys = rng.integers(margin, base.height - margin - size, PLACEMENT_TRIES)
    scores = [body[y:y + size, x:x + size].mean() for x, y in zip(xs, ys)]
    best = int(np.argmax(scores))
    return int(xs[best]), int(ys[best])


def random_defect_spec(width: int, height: int, kind: str, seed: int = 0, illumination: float = 1.0,
                       max_jitter_px: float = 0.0, base: Optional[RasterImage] = None) -> DefectSpec:
    """
    One random defect of the given kind, well inside the image, plus optional jitter.

    With a base image, erase and shift blocks are placed over component bodies
    so that removing or moving them is visible.
    """
    rng = np.random.default_rng(seed)
    margin = max(8, min(width, height) // 8)
    size = int(rng.integers(max(6, min(width, height) // 20), max(8, min(width, height) // 10) + 1))
    x = int(rng.integers(margin, width - margin - size))
    y = int(rng.integers(margin, height - margin - size))
    if base is not None and kind in ("erase_block", "shift_block"):
        if base.shape != (height, width):
            raise DefectSpecError(f"base is {base.width}x{base.height}, expected {width}x{height}")
        x, y = _body_block(base, size, margin, rng)
    if kind == "erase_block":
        defect = EraseBlock(x=x, y=y, w=size, h=size)
    elif kind == "shift_block":
        dx = int(rng.integers(max(2, size // 3), max(3, size // 2) + 1))
        dy = int(rng.integers(-(size // 4), size // 4 + 1))
        defect = ShiftBlock(x=x, y=y, w=size, h=size, dx=dx, dy=dy)
    elif kind == "recolor_block":
        defect = RecolorBlock(x=x, y=y, w=size, h=size, color=tuple(rng.uniform(0, 1, 3)))
    elif kind == "paste_blob":
        defect = PasteBlob(x=x + size // 2, y=y + size // 2, radius=max(3, size // 2))
    else:
        raise DefectSpecError(f"unknown defect kind {kind!r}")
    jitter = Jitter()
    if max_jitter_px > 0:
        jitter = Jitter(angle=float(rng.uniform(-0.3, 0.3)), tx=float(rng.uniform(-max_jitter_px, max_jitter_px)),
                        ty=float(rng.uniform(-max_jitter_px, max_jitter_px)))
    return DefectSpec(defects=[defect], illumination=illumination, jitter=jitter)
