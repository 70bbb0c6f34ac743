"""
Pipeline configuration.

Values are resolved in this order (later wins): built-in defaults, CHANGECHIP_*
environment variables (optionally loaded from a .env file), a YAML config file,
explicit overrides (CLI flags).
"""
import os
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigValidationError

logger = logging.getLogger(__name__)

ENV_PREFIX = "CHANGECHIP_"

# Parameters evaluated on the CD-PCB dataset
DEFAULT_WINDOW_SIZE = 5
DEFAULT_CLASSES = 16
DEFAULT_S_RGB = 9
DEFAULT_S_GRAY = 3
DEFAULT_RATIO_THRESHOLD = 0.8
MODALITY_EPS = {
    "optical": 0.02,
    "radiographic": 0.05,
}

# Environment variable -> PipelineConfig field
ENV_FIELDS = {
    "WINDOW_SIZE": "h",
    "CLASSES": "n",
    "S_RGB": "s_rgb",
    "S_GRAY": "s_gray",
    "EPS": "eps",
    "RATIO": "ratio_threshold",
    "SEED": "seed",
    "MODALITY": "modality",
    "DISCARD": "discard",
    "DESCRIPTOR": "descriptor",
    "KMEANS_MAX_ITERS": "kmeans_max_iters",
    "KMEANS_RESTARTS": "kmeans_restarts",
    "HISTOGRAM_LEVELS": "histogram_levels",
    "WORKERS": "workers",
    "SKIP_REGISTRATION": "skip_registration",
    "SKIP_HISTOGRAM": "skip_histogram",
    "DEBUG": "debug",
}
ENV_RANSAC_FIELDS = {
    "RANSAC_THRESHOLD": "threshold_px",
    "RANSAC_ITERS": "iters",
}


class RansacConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    threshold_px: float = Field(3.0, gt=0)
    iters: int = Field(2000, ge=1)


class PipelineConfig(BaseModel):
    """All tunables of one pipeline run. Instances are immutable."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    h: int = DEFAULT_WINDOW_SIZE
    n: int = DEFAULT_CLASSES
    s_rgb: int = DEFAULT_S_RGB
    s_gray: int = DEFAULT_S_GRAY
    # None means "derive from modality"
    eps: Optional[float] = None
    min_pts: int = Field(1, ge=1)
    ratio_threshold: float = DEFAULT_RATIO_THRESHOLD
    ransac: RansacConfig = Field(default_factory=RansacConfig)
    seed: int = 0
    skip_registration: bool = False
    skip_histogram: bool = False
    roi: Optional[Tuple[int, int, int, int]] = None

    modality: Literal["optical", "radiographic"] = "optical"
    discard: Literal["cluster", "lowest"] = "cluster"
    descriptor: Literal["color", "gray"] = "color"
    match_direction: Literal["target_to_reference", "reference_to_target"] = "target_to_reference"
    histogram_levels: int = Field(5, ge=1)
    kmeans_max_iters: int = Field(300, ge=1)
    kmeans_restarts: int = Field(1, ge=1)
    fill_uncovered: bool = True
    debug: bool = False
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_invariants(self):
        problems = []
        if self.h < 3 or self.h % 2 == 0:
            problems.append(f"h must be an odd integer >= 3 (got {self.h})")
        if self.n < 2:
            problems.append(f"n must be at least 2 (got {self.n})")
        if self.s_rgb < 1 or self.s_rgb > 3 * self.h * self.h:
            problems.append(f"s_rgb must be in [1, 3*h^2={3 * self.h * self.h}] (got {self.s_rgb})")
        if self.s_gray < 1 or self.s_gray > self.h * self.h:
            problems.append(f"s_gray must be in [1, h^2={self.h * self.h}] (got {self.s_gray})")
        if not 0 < self.ratio_threshold <= 1:
            problems.append(f"ratio_threshold must be in (0, 1] (got {self.ratio_threshold})")
        if self.eps is not None and self.eps <= 0:
            problems.append(f"eps must be positive (got {self.eps})")
        if self.roi is not None:
            x, y, w, h = self.roi
            if x < 0 or y < 0 or w < 1 or h < 1:
                problems.append(f"roi must have x,y >= 0 and w,h >= 1 (got {self.roi})")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def effective_eps(self) -> float:
        return self.eps if self.eps is not None else MODALITY_EPS[self.modality]

    def for_modality(self, modality: str) -> "PipelineConfig":
        """Copy used for a dataset pair of the given modality (eps follows it unless pinned)."""
        return build_config(base=self, modality=modality)


def _format_errors(exc: ValidationError) -> Iterable[str]:
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ())) or "config"
        msg = err.get("msg", "invalid value")
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
            for part in msg.split("; "):
                yield part
            continue
        yield f"{loc}: {msg}"


def build_config(base: Optional[PipelineConfig] = None, **values: Any) -> PipelineConfig:
    """
    Create a validated PipelineConfig from keyword values.

    Raises ConfigValidationError listing every problem found.
    """
    data: Dict[str, Any] = base.model_dump() if base is not None else {}
    ransac = dict(data.get("ransac") or {})
    ransac.update(values.pop("ransac", None) or {})
    data.update(values)
    if ransac:
        data["ransac"] = ransac
    try:
        return PipelineConfig(**data)
    except ValidationError as exc:
        raise ConfigValidationError(list(_format_errors(exc))) from exc


def env_values(environ: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """Collect CHANGECHIP_* settings from the environment as raw config values."""
    environ = os.environ if environ is None else environ
    values: Dict[str, Any] = {}
    for suffix, field in ENV_FIELDS.items():
        raw = environ.get(ENV_PREFIX + suffix)
        if raw not in (None, ""):
            values[field] = raw
    ransac = {}
    for suffix, field in ENV_RANSAC_FIELDS.items():
        raw = environ.get(ENV_PREFIX + suffix)
        if raw not in (None, ""):
            ransac[field] = raw
    if ransac:
        values["ransac"] = ransac
    roi = environ.get(ENV_PREFIX + "ROI")
    if roi:
        values["roi"] = parse_roi(roi)
    return values


def parse_roi(text: str) -> Tuple[int, int, int, int]:
    """Parse an "x,y,w,h" rectangle."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ConfigValidationError([f"roi must be x,y,w,h (got {text!r})"])
    try:
        x, y, w, h = (int(p) for p in parts)
    except ValueError:
        raise ConfigValidationError([f"roi values must be integers (got {text!r})"])
    return x, y, w, h


def read_config_file(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigValidationError([f"cannot read config file {path}: {e}"])
    if not isinstance(data, dict):
        raise ConfigValidationError([f"config file {path} must contain a mapping"])
    if isinstance(data.get("roi"), str):
        data["roi"] = parse_roi(data["roi"])
    return data


def load_config(config_path=None, env_file=None, **overrides: Any) -> PipelineConfig:
    """
    Resolve the effective configuration.

    Args:
        config_path: optional YAML file with PipelineConfig fields
        env_file: optional .env file; when omitted a .env in the working directory is used if present
        overrides: explicit values (None entries are ignored)

    Returns:
        A validated PipelineConfig
    """
    env_path = Path(env_file) if env_file else Path.cwd() / ".env"
    if env_path.exists():
        load_dotenv(env_path, override=False)
        logger.debug("Loaded environment from %s", env_path)

    data = env_values()
    if config_path is not None:
        file_values = read_config_file(config_path)
        ransac = {**data.get("ransac", {}), **(file_values.pop("ransac", None) or {})}
        data.update(file_values)
        if ransac:
            data["ransac"] = ransac

    explicit = {k: v for k, v in overrides.items() if v is not None}
    ransac = {**data.get("ransac", {}), **(explicit.pop("ransac", None) or {})}
    data.update(explicit)
    if ransac:
        data["ransac"] = ransac

    config = build_config(**data)
    logger.info("Configuration validation passed")
    return config


def config_summary(config: PipelineConfig) -> Dict[str, Any]:
    """JSON-ready summary recorded in run.json."""
    summary = config.model_dump(mode="json")
    summary["effective_eps"] = config.effective_eps
    return summary
