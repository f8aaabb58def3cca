"""
Experiment orchestration: run a selection method over a threshold x band-count
grid, evaluate accuracies on retained-band prefixes, and render the tables.
"""
import functools
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from sqlalchemy.orm import sessionmaker

from app.core.classifier import SubsetAccuracy, SvmParams, score_subset
from app.core.config import (
    DEFAULT_BAND_COUNTS,
    DEFAULT_LEVELS,
    DEFAULT_REPEATS,
    DEFAULT_SEED,
    DEFAULT_STAGE1_KEEP,
    DEFAULT_THRESHOLDS,
    DEFAULT_TRAIN_FRACTION,
)
from app.core.errors import ParameterError, SelectionAborted
from app.core.ingest import GroundTruth, HyperCube, PixelSplit, dataset_hash, load_dataset, split_labeled
from app.core.selection import (
    Method,
    SelectionConfig,
    SelectionResult,
    TraceRecord,
    baseline_mi_filter,
    run_hybrid,
    select_top_ig,
)

logger = logging.getLogger(__name__)

IG_COLUMN = "IG"
TRACE_COLUMN = "trace"
REPORT_FORMATS = ("csv", "markdown")


def column_label(threshold: float) -> str:
    return f"{threshold:g}"


# --- Experiment definition ---

class ExperimentSpec(BaseModel):
    """One sweep: a method, its threshold columns and band-count checkpoints"""
    model_config = ConfigDict(frozen=True)

    method: Method = "hybrid"
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    band_counts: Tuple[int, ...] = DEFAULT_BAND_COUNTS
    repeats: int = Field(DEFAULT_REPEATS, ge=1)
    base_seed: int = Field(DEFAULT_SEED, ge=0)
    cube_path: str
    gt_path: str
    header_path: Optional[str] = None
    stage1_keep: int = Field(DEFAULT_STAGE1_KEEP, ge=1)
    target_bands: Optional[int] = Field(None, ge=1)
    levels: int = Field(DEFAULT_LEVELS, ge=2)
    fraction: float = Field(DEFAULT_TRAIN_FRACTION, gt=0, lt=1)
    svm: SvmParams = Field(default_factory=SvmParams)
    init_mode: Literal["svm", "raw"] = "svm"

    @field_validator("band_counts")
    @classmethod
    def _ascending(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value:
            raise ValueError("band_counts must not be empty")
        if any(n < 1 for n in value):
            raise ValueError("band_counts must be positive")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("band_counts must be strictly ascending")
        return value

    @field_validator("thresholds")
    @classmethod
    def _finite(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value:
            raise ValueError("thresholds must not be empty")
        if not all(math.isfinite(t) for t in value):
            raise ValueError("thresholds must be finite")
        labels = [column_label(t) for t in value]
        if len(set(labels)) != len(labels):
            raise ValueError(f"thresholds must give distinct columns, got {labels}")
        return value

    @property
    def max_bands(self) -> int:
        return self.target_bands or self.band_counts[-1]

    @property
    def key(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()

    def columns(self) -> List[Tuple[str, Optional[float]]]:
        """(label, threshold) per report column"""
        if self.method == "ig":
            return [(IG_COLUMN, None)]
        return [(column_label(t), t) for t in self.thresholds]

    def selection_config(self, threshold: float, seed: int) -> SelectionConfig:
        return SelectionConfig(
            threshold=threshold,
            stage1_keep=max(self.stage1_keep, self.max_bands),
            target_bands=self.max_bands,
            levels=self.levels,
            svm=self.svm,
            seed=seed,
            fraction=self.fraction,
            init_mode=self.init_mode,
        )


# --- Results ---

@dataclass(frozen=True)
class CellRun:
    """One selection run and the accuracy of each reachable checkpoint prefix"""
    column: str
    threshold: Optional[float]
    repeat: int
    seed: int
    result: SelectionResult
    accuracies: Dict[int, SubsetAccuracy]
    aborted: bool = False

    @property
    def retained(self) -> Tuple[int, ...]:
        return self.result.retained

    def to_dict(self) -> dict:
        return {
            "column": self.column,
            "threshold": self.threshold,
            "repeat": self.repeat,
            "seed": self.seed,
            "method": self.result.method,
            "retained": list(self.result.retained),
            "trace": [[r.step, r.candidate, r.mi, r.pe, r.accepted, r.retained_count] for r in self.result.trace],
            "accuracies": {str(n): [a.overall, a.average, a.n_test] for n, a in self.accuracies.items()},
            "aborted": self.aborted,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CellRun":
        trace = tuple(TraceRecord(int(s), int(c), float(mi), float(pe), bool(ok), int(k))
                      for s, c, mi, pe, ok, k in data["trace"])
        return cls(
            column=data["column"],
            threshold=data["threshold"],
            repeat=int(data["repeat"]),
            seed=int(data["seed"]),
            result=SelectionResult(tuple(int(b) for b in data["retained"]), trace, data["method"]),
            accuracies={int(n): SubsetAccuracy(float(o), float(a), int(t)) for n, (o, a, t) in data["accuracies"].items()},
            aborted=bool(data.get("aborted", False)),
        )


@dataclass(frozen=True)
class EvalCell:
    column: str
    band_count: int
    accuracies: Tuple[float, ...]
    averages: Tuple[float, ...]
    repeats: int

    @property
    def empty(self) -> bool:
        """No repeat retained this many bands"""
        return not self.accuracies

    @property
    def reached(self) -> int:
        return len(self.accuracies)

    @property
    def mean(self) -> Optional[float]:
        return float(np.mean(self.accuracies)) if self.accuracies else None

    @property
    def std(self) -> Optional[float]:
        return float(np.std(self.accuracies)) if self.accuracies else None

    @property
    def mean_average(self) -> Optional[float]:
        return float(np.mean(self.averages)) if self.averages else None


@dataclass
class EvalReport:
    method: str
    columns: List[str]
    thresholds: List[Optional[float]]
    band_counts: List[int]
    cells: Dict[Tuple[str, int], EvalCell]
    runs: List[CellRun] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def cell(self, column: str, band_count: int) -> EvalCell:
        return self.cells[(column, band_count)]


# --- Run store ---

class RunStore:
    """Finished cells persisted with SQLAlchemy so interrupted sweeps resume"""

    def __init__(self, session_factory: sessionmaker):
        self.session_factory = session_factory

    def _experiment(self, db, spec: ExperimentSpec, data_hash: Optional[str] = None):
        from app.models import ExperimentRecord

        record = db.query(ExperimentRecord).filter(ExperimentRecord.spec_key == spec.key).first()
        if record is None:
            record = ExperimentRecord(spec_key=spec.key, method=spec.method,
                                      spec_json=spec.model_dump_json(), dataset_hash=data_hash)
            db.add(record)
            db.flush()
        return record

    def find_run(self, spec: ExperimentSpec, column: str, repeat: int) -> Optional[CellRun]:
        from app.models import ExperimentRecord, SelectionRun

        db = self.session_factory()
        try:
            row = (
                db.query(SelectionRun)
                .join(ExperimentRecord)
                .filter(ExperimentRecord.spec_key == spec.key,
                        SelectionRun.column == column,
                        SelectionRun.repeat == repeat)
                .first()
            )
            if row is None:
                return None
            return self._to_cell(row, row.experiment.method)
        finally:
            db.close()

    @staticmethod
    def _to_cell(row, method: str) -> CellRun:
        return CellRun.from_dict({
            "column": row.column,
            "threshold": row.threshold,
            "repeat": row.repeat,
            "seed": row.seed,
            "method": method,
            "retained": json.loads(row.retained),
            "trace": json.loads(row.trace),
            "accuracies": json.loads(row.accuracies),
            "aborted": row.aborted,
        })

    def runs_for(self, spec: ExperimentSpec) -> List[CellRun]:
        """Every stored cell of an experiment"""
        from app.models import ExperimentRecord

        db = self.session_factory()
        try:
            record = db.query(ExperimentRecord).filter(ExperimentRecord.spec_key == spec.key).first()
            if record is None:
                return []
            return [self._to_cell(row, record.method) for row in record.runs]
        finally:
            db.close()

    def save_run(self, spec: ExperimentSpec, run: CellRun, data_hash: Optional[str] = None) -> None:
        from app.models import SelectionRun

        payload = run.to_dict()
        db = self.session_factory()
        try:
            experiment = self._experiment(db, spec, data_hash)
            db.add(SelectionRun(
                experiment_id=experiment.id,
                column=run.column,
                threshold=run.threshold,
                repeat=run.repeat,
                seed=run.seed,
                retained=json.dumps(payload["retained"]),
                trace=json.dumps(payload["trace"]),
                accuracies=json.dumps(payload["accuracies"]),
                aborted=run.aborted,
            ))
            db.commit()
        except Exception as exc:
            logger.error(f"Could not store cell ({run.column}, {run.repeat}): {exc}")
            db.rollback()
            raise
        finally:
            db.close()


# --- Evaluation ---

@functools.lru_cache(maxsize=4)
def _cached_dataset(cube_path: str, gt_path: str, header_path: Optional[str], levels: int) -> Tuple[HyperCube, GroundTruth]:
    return load_dataset(cube_path, gt_path, header_path, levels)


def spec_dataset(spec: ExperimentSpec) -> Tuple[HyperCube, GroundTruth]:
    return _cached_dataset(spec.cube_path, spec.gt_path, spec.header_path, spec.levels)


def evaluate_subset(cube: HyperCube, gt: GroundTruth, split: PixelSplit, bands: Sequence[int],
                    svm: Optional[SvmParams] = None, seed: int = 0) -> SubsetAccuracy:
    """
    Train on the train half, predict the test half.

    Returns:
        Overall accuracy (headline) with the mean per-class accuracy alongside, in percent
    """
    if not list(bands):
        raise ParameterError("Cannot evaluate an empty band subset")
    accuracy, _ = score_subset(cube, gt, split, bands, svm, seed)
    return accuracy


def evaluate_checkpoints(cube: HyperCube, gt: GroundTruth, split: PixelSplit, retained: Sequence[int],
                         band_counts: Sequence[int], svm: Optional[SvmParams] = None,
                         seed: int = 0) -> Dict[int, SubsetAccuracy]:
    """Accuracy of each retained prefix; checkpoints beyond the retained count stay absent"""
    accuracies = {}
    for n in band_counts:
        if n > len(retained):
            logger.info(f"Checkpoint {n} unreachable: only {len(retained)} bands retained")
            continue
        accuracies[n] = evaluate_subset(cube, gt, split, retained[:n], svm, seed)
    return accuracies


def run_cell(spec: ExperimentSpec, column: int, repeat: int) -> CellRun:
    """Select once for (column, repeat), then evaluate every checkpoint prefix"""
    cube, gt = spec_dataset(spec)
    label, threshold = spec.columns()[column]
    seed = spec.base_seed + repeat
    split = split_labeled(gt, spec.fraction, seed)

    aborted = False
    if spec.method == "hybrid":
        try:
            result = run_hybrid(cube, gt, spec.selection_config(threshold, seed), split)
        except SelectionAborted as exc:
            logger.error(f"Selection for column {label}, repeat {repeat} aborted: {exc}")
            result, aborted = exc.partial, True
    elif spec.method == "ig":
        result = select_top_ig(cube, gt, min(spec.max_bands, cube.bands))
    else:
        result = baseline_mi_filter(cube, gt, threshold, spec.max_bands)

    accuracies = evaluate_checkpoints(cube, gt, split, result.retained, spec.band_counts, spec.svm, seed)
    return CellRun(label, threshold, repeat, seed, result, accuracies, aborted)


def _assemble(spec: ExperimentSpec, runs: List[CellRun], columns: List[Tuple[str, Optional[float]]],
              metadata: Dict[str, object]) -> EvalReport:
    cells = {}
    for label, _ in columns:
        column_runs = sorted((r for r in runs if r.column == label), key=lambda r: r.repeat)
        for n in spec.band_counts:
            reached = [r.accuracies[n] for r in column_runs if n in r.accuracies]
            cells[(label, n)] = EvalCell(
                column=label,
                band_count=n,
                accuracies=tuple(a.overall for a in reached),
                averages=tuple(a.average for a in reached),
                repeats=len(column_runs),
            )
    return EvalReport(
        method=spec.method,
        columns=[label for label, _ in columns],
        thresholds=[t for _, t in columns],
        band_counts=list(spec.band_counts),
        cells=cells,
        runs=sorted(runs, key=lambda r: ([c for c, _ in columns].index(r.column), r.repeat)),
        metadata=metadata,
    )


def _metadata(spec: ExperimentSpec) -> Dict[str, object]:
    paths = [spec.cube_path, spec.gt_path] + ([spec.header_path] if spec.header_path else [])
    return {
        "method": spec.method,
        "spec_key": spec.key,
        "dataset_hash": dataset_hash(*paths),
        "base_seed": spec.base_seed,
        "repeats": spec.repeats,
        "levels": spec.levels,
        "fraction": spec.fraction,
        "svm_C": spec.svm.C,
        "svm_gamma": spec.svm.gamma,
    }


def run_experiment(spec: ExperimentSpec, store: Optional[RunStore] = None,
                   executor: Literal["sync", "celery"] = "sync") -> EvalReport:
    """
    Run the method once per (column, repeat) and evaluate checkpoint prefixes.

    Repeat r uses split seed base_seed + r. Cells already in ``store`` are reused.
    """
    columns = spec.columns()
    metadata = _metadata(spec)
    jobs = [(c, r) for c in range(len(columns)) for r in range(spec.repeats)]

    runs: List[CellRun] = []
    pending = []
    for c, r in jobs:
        cached = store.find_run(spec, columns[c][0], r) if store else None
        if cached is not None:
            runs.append(cached)
        else:
            pending.append((c, r))
    if store and len(pending) < len(jobs):
        logger.info(f"Resuming: {len(jobs) - len(pending)} of {len(jobs)} cells found in the run store")

    if executor == "celery":
        from app.tasks import dispatch_cells

        fresh = dispatch_cells(spec, pending)
    else:
        fresh = [run_cell(spec, c, r) for c, r in pending]

    for run in fresh:
        if store:
            store.save_run(spec, run, str(metadata["dataset_hash"]))
        runs.append(run)

    return _assemble(spec, runs, columns, metadata)


def report_from_retained(spec: ExperimentSpec, retained: Sequence[int], seed: Optional[int] = None) -> EvalReport:
    """Evaluate checkpoint prefixes of an existing retained-band list (no re-selection)"""
    cube, gt = spec_dataset(spec)
    seed = spec.base_seed if seed is None else seed
    split = split_labeled(gt, spec.fraction, seed)
    accuracies = evaluate_checkpoints(cube, gt, split, list(retained), spec.band_counts, spec.svm, seed)
    result = SelectionResult(tuple(retained), (), spec.method)
    run = CellRun(TRACE_COLUMN, None, 0, seed, result, accuracies)
    return _assemble(spec, [run], [(TRACE_COLUMN, None)], _metadata(spec))


# --- Rendering ---

def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.2f}"


def emit_report(report: EvalReport, fmt: str, path: Union[str, os.PathLike]) -> Path:
    """
    Write the report with band counts as rows and one column per threshold;
    stalled cells are left blank.

    Raises:
        ParameterError: If fmt is not 'csv' or 'markdown'
    """
    if fmt not in REPORT_FORMATS:
        raise ParameterError(f"Unknown report format {fmt!r}; expected one of {REPORT_FORMATS}")
    path = Path(path)

    if fmt == "csv":
        rows = [
            ["retained_bands"] + [report.method] * len(report.columns),
            ["Th"] + list(report.columns),
        ]
        for n in report.band_counts:
            rows.append([str(n)] + [_fmt(report.cell(c, n).mean) for c in report.columns])
        pd.DataFrame(rows).to_csv(path, header=False, index=False, lineterminator="\n")
    else:
        def render(cell: EvalCell) -> str:
            if cell.empty:
                return ""
            if cell.repeats > 1:
                return f"{cell.mean:.2f} ± {cell.std:.2f}"
            return f"{cell.mean:.2f}"

        frame = pd.DataFrame(
            [[str(n)] + [render(report.cell(c, n)) for c in report.columns] for n in report.band_counts],
            columns=["Bands \\ Th"] + list(report.columns),
        )
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"Accuracy (%) of classification, method {report.method}\n\n")
            f.write(frame.to_markdown(index=False, disable_numparse=True))
            f.write("\n")

    logger.info(f"Wrote {fmt} report to {path}")
    return path


def write_run_log(report: EvalReport, path: Union[str, os.PathLike]) -> Path:
    """JSON lines, one record per (column, repeat, checkpoint)"""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for run in report.runs:
            for n in report.band_counts:
                accuracy = run.accuracies.get(n)
                record = {
                    "method": report.method,
                    "column": run.column,
                    "threshold": run.threshold,
                    "repeat": run.repeat,
                    "seed": run.seed,
                    "band_count": n,
                    "retained_count": len(run.retained),
                    "overall": accuracy.overall if accuracy else None,
                    "average": accuracy.average if accuracy else None,
                    "stalled": accuracy is None,
                    "aborted": run.aborted,
                    "dataset_hash": report.metadata.get("dataset_hash"),
                }
                f.write(json.dumps(record, sort_keys=True) + "\n")
    return path
