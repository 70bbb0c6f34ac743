"""
Pixel-level evaluation against ground-truth masks and dataset runs.

Aggregate scores are micro-averaged (tp/fp/fn pooled over every pair); the
macro average of the per-pair scores is reported alongside.
"""
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .analysis import ChangeMask
from .config import MODALITY_EPS, PipelineConfig
from .errors import ChangeChipError, ConfigValidationError, DimensionMismatchError
from .imaging import load_mask
from .pipeline import crop_mask, run_pipeline, write_json

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
PAIRS_FILE = "pairs.csv"
MODALITIES = tuple(MODALITY_EPS)

_SEPARATORS = re.compile(r"[,\s]+")


@dataclass(frozen=True)
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> Optional[float]:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else None

    @property
    def recall(self) -> Optional[float]:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else None

    @property
    def vacuous(self) -> bool:
        """Nothing predicted and nothing to find: perfect by convention."""
        return self.tp == self.fp == self.fn == 0

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "vacuous": self.vacuous}


@dataclass(frozen=True)
class DatasetPair:
    reference: Path
    target: Path
    ground_truth: Path
    modality: str = "optical"

    def __post_init__(self):
        for name in ("reference", "target", "ground_truth"):
            object.__setattr__(self, name, Path(getattr(self, name)))

    @property
    def name(self) -> str:
        return self.reference.stem


@dataclass
class PairResult:
    index: int
    name: str
    modality: str
    eps: Optional[float] = None
    report: Optional[EvalReport] = None
    iou: Optional[float] = None
    selected_classes: Optional[int] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def as_row(self) -> dict:
        row = {"index": self.index, "name": self.name, "modality": self.modality, "eps": self.eps,
               "tp": None, "fp": None, "fn": None, "precision": None, "recall": None, "vacuous": None,
               "iou": self.iou, "selected_classes": self.selected_classes, "error": self.error}
        if self.report is not None:
            row.update(self.report.as_dict())
        return row


@dataclass
class DatasetReport:
    pairs: List[PairResult] = field(default_factory=list)

    @property
    def micro(self) -> EvalReport:
        total = EvalReport()
        for pair in self.pairs:
            if pair.report is not None:
                total = total.merge(pair.report)
        return total

    def macro(self) -> dict:
        precisions = [p.report.precision for p in self.pairs if p.report and p.report.precision is not None]
        recalls = [p.report.recall for p in self.pairs if p.report and p.report.recall is not None]
        return {
            "precision": float(np.mean(precisions)) if precisions else None,
            "recall": float(np.mean(recalls)) if recalls else None,
            "pairs": sum(1 for p in self.pairs if p.report is not None),
        }

    @property
    def failed(self) -> List[PairResult]:
        return [p for p in self.pairs if not p.ok]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([p.as_row() for p in self.pairs])

    def as_dict(self) -> dict:
        return {
            "micro": self.micro.as_dict(),
            "macro": self.macro(),
            "pair_count": len(self.pairs),
            "failed_count": len(self.failed),
            "pairs": [p.as_row() for p in self.pairs],
        }


def _as_bool(mask) -> np.ndarray:
    if isinstance(mask, ChangeMask):
        return mask.mask
    return np.asarray(mask, dtype=bool)


def precision_recall(pred, gt) -> EvalReport:
    """
    Pixelwise tp/fp/fn of a predicted mask against ground truth.

    Raises:
        DimensionMismatchError: if the masks differ in shape
    """
    pred, gt = _as_bool(pred), _as_bool(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return EvalReport(tp=tp, fp=fp, fn=fn)


def iou(pred, gt) -> float:
    """Intersection over union; two empty masks count as 1.0."""
    pred, gt = _as_bool(pred), _as_bool(gt)
    if pred.shape != gt.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    union = int(np.count_nonzero(pred | gt))
    if not union:
        return 1.0
    return int(np.count_nonzero(pred & gt)) / union


def load_manifest(path) -> List[DatasetPair]:
    """
    Parse a manifest: one pair per line, "reference target ground_truth [modality]"
    separated by whitespace or commas. Relative paths resolve against the
    manifest's directory; blank lines and # comments are skipped.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigValidationError([f"cannot read manifest {path}: {e}"])

    pairs, problems = [], []
    for number, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f for f in _SEPARATORS.split(line) if f]
        if len(fields) not in (3, 4):
            problems.append(f"{path}:{number}: expected 3 or 4 fields, got {len(fields)}")
            continue
        modality = fields[3].lower() if len(fields) == 4 else "optical"
        if modality not in MODALITIES:
            problems.append(f"{path}:{number}: unknown modality {fields[3]!r}")
            continue
        ref, tgt, gt = (Path(f) if Path(f).is_absolute() else path.parent / f for f in fields[:3])
        pairs.append(DatasetPair(reference=ref, target=tgt, ground_truth=gt, modality=modality))
    if problems:
        raise ConfigValidationError(problems)
    logger.info("Manifest %s lists %d pairs", path, len(pairs))
    return pairs


def write_manifest(pairs: Iterable[DatasetPair], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# reference target ground_truth modality"]
    for pair in pairs:
        fields = []
        for p in (pair.reference, pair.target, pair.ground_truth):
            try:
                fields.append(str(Path(p).relative_to(path.parent)))
            except ValueError:
                fields.append(str(p))
        lines.append(" ".join(fields + [pair.modality]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def evaluate_pair(index: int, pair: DatasetPair, cfg: PipelineConfig, out_dir: Path) -> PairResult:
    """Run one manifest pair; failures become an error row instead of raising."""
    pair_cfg = cfg.for_modality(pair.modality)
    result = PairResult(index=index, name=pair.name, modality=pair.modality, eps=pair_cfg.effective_eps)
    missing = [str(p) for p in (pair.reference, pair.target, pair.ground_truth) if not Path(p).is_file()]
    if missing:
        result.error = "missing file: " + ", ".join(missing)
        logger.warning("Pair %d (%s): %s", index, pair.name, result.error)
        return result
    try:
        gt = load_mask(pair.ground_truth)
        if pair_cfg.roi is not None:
            gt = crop_mask(gt, pair_cfg.roi)
        run = run_pipeline(pair.reference, pair.target, pair_cfg, out_dir / f"{index:03d}_{pair.name}")
        result.report = precision_recall(run.mask, gt)
        result.iou = iou(run.mask, gt)
        result.selected_classes = run.selected_count
    except ChangeChipError as e:
        result.error = f"{type(e).__name__}: {e}"
        logger.warning("Pair %d (%s) failed: %s", index, pair.name, result.error)
    return result


def run_dataset(manifest: Union[str, Path, Sequence[DatasetPair]], cfg: PipelineConfig, out_dir,
                workers: Optional[int] = None) -> DatasetReport:
    """
    Evaluate every manifest pair and write report.json and pairs.csv under out_dir.

    Args:
        manifest: manifest path or a list of DatasetPair
        cfg: base configuration; eps follows each pair's modality unless set explicitly
        out_dir: output directory, one sub-directory per pair
        workers: concurrent pairs (defaults to cfg.workers)

    Returns:
        DatasetReport with pooled and per-pair results
    """
    pairs = list(manifest) if not isinstance(manifest, (str, Path)) else load_manifest(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers

    jobs = (delayed(evaluate_pair)(i, pair, cfg, out_dir) for i, pair in enumerate(pairs))
    if workers > 1:
        results = Parallel(n_jobs=workers, return_as="generator")(jobs)
    else:
        results = (evaluate_pair(i, pair, cfg, out_dir) for i, pair in enumerate(pairs))
    rows = list(tqdm(results, total=len(pairs), desc="pairs", unit="pair", disable=None))
    report = DatasetReport(pairs=sorted(rows, key=lambda r: r.index))

    write_json(report.as_dict(), out_dir / REPORT_FILE)
    report.to_frame().to_csv(out_dir / PAIRS_FILE, index=False)
    micro = report.micro
    logger.info("Dataset: %d pairs (%d failed), precision=%s recall=%s", len(report.pairs),
                len(report.failed), _fmt(micro.precision), _fmt(micro.recall))
    return report


def _fmt(value: Optional[float]) -> str:
    return "null" if value is None else f"{value:.4f}"


def format_table(report: DatasetReport) -> str:
    """Human-readable per-pair table followed by the pooled and macro scores."""
    frame = report.to_frame()
    columns = ["name", "modality", "tp", "fp", "fn", "precision", "recall", "iou", "error"]
    table = frame[columns].to_string(index=False, na_rep="-", float_format=lambda v: f"{v:.4f}") if len(frame) \
        else "(no pairs)"
    micro, macro = report.micro, report.macro()
    return "\n".join([
        table,
        "",
        f"micro: precision={_fmt(micro.precision)} recall={_fmt(micro.recall)} "
        f"(tp={micro.tp} fp={micro.fp} fn={micro.fn})",
        f"macro: precision={_fmt(macro['precision'])} recall={_fmt(macro['recall'])} over {macro['pairs']} pairs",
    ])
