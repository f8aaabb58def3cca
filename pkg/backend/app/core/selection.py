"""
Band selection: information-gain ranking, mRMR ordering, the Fano wrapper,
and the two filter baselines the hybrid is compared against.
"""
import logging
import math
import os
from dataclasses import dataclass
from typing import Callable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.classifier import SubsetAccuracy, SvmParams, build_gt_est, score_subset
from app.core.config import (
    DEFAULT_LEVELS,
    DEFAULT_SEED,
    DEFAULT_STAGE1_KEEP,
    DEFAULT_TARGET_BANDS,
    DEFAULT_TRAIN_FRACTION,
)
from app.core.errors import FormatError, ParameterError, SelectionAborted
from app.core.infotheory import (
    Histogram,
    conditional_entropy,
    entropy,
    fano_bounds,
    information_gain,
    joint_histogram,
    mutual_information,
)
from app.core.ingest import GroundTruth, HyperCube, PixelSplit, quantize_plane, split_labeled

logger = logging.getLogger(__name__)

Method = Literal["hybrid", "ig", "mi-filter"]


# --- Domain types ---

@dataclass(frozen=True)
class BandScore:
    band: int
    score: float


class SelectionConfig(BaseModel):
    """Knobs of one selection run"""
    model_config = ConfigDict(frozen=True)

    threshold: float = 0.0
    stage1_keep: int = Field(DEFAULT_STAGE1_KEEP, ge=1)
    target_bands: int = Field(DEFAULT_TARGET_BANDS, ge=1)
    levels: int = Field(DEFAULT_LEVELS, ge=2)
    svm: SvmParams = Field(default_factory=SvmParams)
    seed: int = Field(DEFAULT_SEED, ge=0)
    fraction: float = Field(DEFAULT_TRAIN_FRACTION, gt=0, lt=1)
    # GT_est of the first band: single-band SVM prediction, or the raw band itself
    init_mode: Literal["svm", "raw"] = "svm"

    @field_validator("threshold")
    @classmethod
    def _finite_threshold(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("threshold must be finite")
        return value

    @model_validator(mode="after")
    def _target_within_stage1(self) -> "SelectionConfig":
        if self.target_bands > self.stage1_keep:
            raise ValueError(
                f"target_bands ({self.target_bands}) cannot exceed stage1_keep ({self.stage1_keep})"
            )
        return self


@dataclass(frozen=True)
class TraceRecord:
    """One examined candidate: I(C; GT_est) and Pe of the subset that includes it"""
    step: int
    candidate: int
    mi: float
    pe: float
    accepted: bool
    retained_count: int


@dataclass(frozen=True)
class SelectionResult:
    retained: Tuple[int, ...]
    trace: Tuple[TraceRecord, ...]
    method: str


# --- Stage 1: relevance ranking ---

def _labeled_selection(gt: GroundTruth, mask: Optional[np.ndarray]) -> np.ndarray:
    selection = gt.labeled_mask if mask is None else (np.asarray(mask, dtype=bool) & gt.labeled_mask)
    if not selection.any():
        raise ParameterError("Selection mask contains no labeled pixels")
    return selection.ravel()


def rank_by_ig(cube: HyperCube, gt: GroundTruth, mask: Optional[np.ndarray] = None) -> List[BandScore]:
    """
    Score each band by I(band; C) over the masked labeled pixels.

    Returns:
        BandScores sorted by descending score, ties to the lower band index
    """
    selection = _labeled_selection(gt, mask)
    labels = gt.labels.ravel()[selection]
    flat = cube.flat()[:, selection]

    scores = [BandScore(band=b, score=information_gain(flat[b], labels)) for b in range(cube.bands)]
    ranked = sorted(scores, key=lambda s: (-s.score, s.band))
    logger.info(f"Ranked {cube.bands} bands by information gain; best band {ranked[0].band} "
                f"({ranked[0].score:.4f} bits)")
    return ranked


def stage1_cut(ranked: Sequence[BandScore], k: int) -> List[BandScore]:
    """Keep the top-k of a ranking, order preserved"""
    if k < 1:
        raise ParameterError(f"Stage-1 cut needs k >= 1, got {k}")
    if k > len(ranked):
        logger.warning(f"Stage-1 cut k={k} exceeds the {len(ranked)} ranked bands; keeping all")
        return list(ranked)
    return list(ranked[:k])


# --- Stage 2: mRMR ordering ---

def mrmr_order(candidates: Sequence[Union[BandScore, int]], cube: HyperCube, gt: GroundTruth,
               mask: Optional[np.ndarray], m: int) -> List[int]:
    """
    Greedy minimum-redundancy maximum-relevance order of the candidates.

    The first pick maximizes I(g; C). Each next pick maximizes
    I(g; C) - mean over selected s of I(s; g). Ties go to the lower band index.
    """
    bands = [c.band if isinstance(c, BandScore) else int(c) for c in candidates]
    if len(set(bands)) != len(bands):
        raise ParameterError("mRMR candidates contain duplicate bands")
    if not 1 <= m <= len(bands):
        raise ParameterError(f"mRMR needs 1 <= m <= {len(bands)}, got {m}")

    selection = _labeled_selection(gt, mask)
    labels = gt.labels.ravel()[selection]
    flat = cube.flat()[:, selection]

    relevance = {b: information_gain(flat[b], labels) for b in bands}
    redundancy = {b: [] for b in bands}
    selected: List[int] = []
    remaining = list(bands)

    def criterion(band: int) -> float:
        if not selected:
            return relevance[band]
        return relevance[band] - math.fsum(redundancy[band]) / len(selected)

    while len(selected) < m:
        best = min(remaining, key=lambda b: (-criterion(b), b))
        selected.append(best)
        remaining.remove(best)
        for b in remaining:
            redundancy[b].append(mutual_information(joint_histogram(flat[b], flat[best])))

    logger.info(f"mRMR ordered {m} of {len(bands)} candidates; first picks {selected[:5]}")
    return selected


# --- Stage 3: Fano wrapper ---

def accepts(pe_new: float, pe_retained: float, threshold: float) -> bool:
    """A candidate is kept iff it lowers Pe by more than the threshold"""
    return pe_new < pe_retained - threshold


def greedy_fano_search(ordered: Sequence[int], score_subset_fn: Callable[[List[int]], Tuple[float, float]],
                       threshold: float, max_bands: int, method: str = "hybrid") -> SelectionResult:
    """
    Forward pass over ordered candidates with the Pe acceptance rule.

    Args:
        ordered: Candidate bands; the first one seeds the retained set
        score_subset_fn: Maps a band subset to (I(C; GT_est), Pe)
        threshold: Th of the acceptance rule
        max_bands: Stop once this many bands are retained

    Raises:
        SelectionAborted: If scoring fails; carries the partial result
    """
    ordered = list(ordered)
    if not ordered:
        raise ParameterError("Wrapper needs at least one ordered candidate")

    retained = [ordered[0]]
    trace: List[TraceRecord] = []
    try:
        mi, pe_retained = score_subset_fn(list(retained))
    except Exception as exc:
        raise SelectionAborted(f"Scoring the initial band {ordered[0]} failed: {exc}",
                               partial=SelectionResult((), (), method), cause=exc) from exc
    trace.append(TraceRecord(0, ordered[0], mi, pe_retained, True, 1))
    logger.info(f"Wrapper starts from band {ordered[0]}: I={mi:.4f} Pe={pe_retained:.4f}")

    for step, band in enumerate(ordered[1:], start=1):
        if len(retained) >= max_bands:
            break
        try:
            mi, pe_new = score_subset_fn(retained + [band])
        except Exception as exc:
            partial = SelectionResult(tuple(retained), tuple(trace), method)
            raise SelectionAborted(f"Scoring candidate {band} failed: {exc}", partial=partial, cause=exc) from exc

        accepted = accepts(pe_new, pe_retained, threshold)
        if accepted:
            retained.append(band)
            pe_retained = pe_new
            logger.info(f"Step {step}: band {band} accepted (Pe={pe_new:.4f}, {len(retained)} retained)")
        else:
            logger.debug(f"Step {step}: band {band} rejected (Pe={pe_new:.4f} vs {pe_retained:.4f})")
        trace.append(TraceRecord(step, band, mi, pe_new, accepted, len(retained)))

    return SelectionResult(tuple(retained), tuple(trace), method)


def fano_wrapper(ordered: Sequence[int], cube: HyperCube, gt: GroundTruth, split: PixelSplit,
                 cfg: SelectionConfig) -> SelectionResult:
    """
    Fano wrapper over mRMR-ordered candidates.

    GT_est of each tentative subset is the SVM prediction over all labeled
    pixels; Pe is the clamped Fano lower bound (H(C) - I(C; GT_est) - 1) / log2 Nc.
    """
    labeled = gt.labeled_mask
    truth = gt.labels[labeled]
    hc = entropy(Histogram.from_symbols(truth))
    nc = gt.num_classes

    def score(bands: List[int]) -> Tuple[float, float]:
        if cfg.init_mode == "raw" and len(bands) == 1:
            estimate = cube.data[bands[0]]
        else:
            estimate = build_gt_est(cube, bands, split, gt, cfg.svm, cfg.seed)
        mi = information_gain(estimate[labeled], truth)
        return mi, fano_bounds(conditional_entropy(hc, mi), nc).lower

    return greedy_fano_search(ordered, score, cfg.threshold, cfg.target_bands, method="hybrid")


def run_hybrid(cube: HyperCube, gt: GroundTruth, cfg: SelectionConfig,
               split: Optional[PixelSplit] = None) -> SelectionResult:
    """Information-gain cut, mRMR order, then the Fano wrapper"""
    split = split or split_labeled(gt, cfg.fraction, cfg.seed)
    labeled = gt.labeled_mask
    candidates = stage1_cut(rank_by_ig(cube, gt, labeled), cfg.stage1_keep)
    ordered = mrmr_order(candidates, cube, gt, labeled, len(candidates))
    result = fano_wrapper(ordered, cube, gt, split, cfg)
    logger.info(f"Hybrid selection (Th={cfg.threshold:g}) retained {len(result.retained)} bands")
    return result


# --- Baselines ---

def select_top_ig(cube: HyperCube, gt: GroundTruth, n: int, mask: Optional[np.ndarray] = None) -> SelectionResult:
    """Top-n bands by information gain, traced like the other methods"""
    if not 1 <= n <= cube.bands:
        raise ParameterError(f"Top-n needs 1 <= n <= {cube.bands}, got {n}")
    selection = _labeled_selection(gt, mask)
    truth = gt.labels.ravel()[selection]
    hc = entropy(Histogram.from_symbols(truth))
    nc = int(np.unique(truth).size)

    ranked = rank_by_ig(cube, gt, mask)[:n]
    trace = tuple(
        TraceRecord(step, s.band, s.score, fano_bounds(conditional_entropy(hc, s.score), nc).lower, True, step + 1)
        for step, s in enumerate(ranked)
    )
    return SelectionResult(tuple(s.band for s in ranked), trace, "ig")


def baseline_ig(cube: HyperCube, gt: GroundTruth, split: PixelSplit, n: int,
                svm: Optional[SvmParams] = None, seed: int = 0) -> Tuple[List[int], SubsetAccuracy]:
    """Top-n information-gain bands and their SVM accuracy on the test half"""
    bands = list(select_top_ig(cube, gt, n).retained)
    accuracy, _ = score_subset(cube, gt, split, bands, svm, seed)
    logger.info(f"IG baseline with {n} bands: {accuracy.overall:.2f}%")
    return bands, accuracy


def baseline_mi_filter(cube: HyperCube, gt: GroundTruth, threshold: float, m_max: int,
                       mask: Optional[np.ndarray] = None) -> SelectionResult:
    """
    Redundancy-controlled MI filter.

    GT_est is the pixel-wise mean of the selected bands, re-quantized to the
    cube's levels. Candidates come in descending I(band; C) order; one is kept
    iff I(C; GT_est with it) > I(C; GT_est without it) + Th. The empty set
    scores 0 and admits its first candidate when I >= Th.
    """
    if not math.isfinite(threshold):
        raise ParameterError(f"Threshold must be finite, got {threshold}")
    if m_max < 1:
        raise ParameterError(f"m_max must be >= 1, got {m_max}")
    selection = _labeled_selection(gt, mask)
    truth = gt.labels.ravel()[selection]
    hc = entropy(Histogram.from_symbols(truth))
    nc = int(np.unique(truth).size)

    running = np.zeros(cube.pixels, dtype=np.int64)
    retained: List[int] = []
    mi_retained = 0.0
    trace: List[TraceRecord] = []

    for step, candidate in enumerate(rank_by_ig(cube, gt, mask)):
        if len(retained) >= m_max:
            break
        total = running + cube.band(candidate.band)
        estimate = quantize_plane(total / (len(retained) + 1), cube.levels)
        mi = information_gain(estimate[selection], truth)
        pe = fano_bounds(conditional_entropy(hc, mi), nc).lower

        accepted = mi >= threshold if not retained else mi > mi_retained + threshold
        if accepted:
            retained.append(candidate.band)
            running = total
            mi_retained = mi
        trace.append(TraceRecord(step, candidate.band, mi, pe, accepted, len(retained)))

    logger.info(f"MI filter (Th={threshold:g}) retained {len(retained)} bands")
    return SelectionResult(tuple(retained), tuple(trace), "mi-filter")


# --- Artifacts ---

TRACE_COLUMNS = ["step", "candidate", "mi", "pe", "accepted", "retained_count", "method"]


def write_trace(result: SelectionResult, path: Union[str, os.PathLike]) -> None:
    """One CSV line per examined candidate"""
    frame = pd.DataFrame(
        [(r.step, r.candidate, r.mi, r.pe, int(r.accepted), r.retained_count, result.method) for r in result.trace],
        columns=TRACE_COLUMNS,
    )
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.12g")


def read_trace(path: Union[str, os.PathLike]) -> SelectionResult:
    try:
        frame = pd.read_csv(path)
    except (ValueError, pd.errors.ParserError) as exc:
        raise FormatError(f"Could not parse trace {path}: {exc}") from exc
    missing = set(TRACE_COLUMNS) - set(frame.columns)
    if missing:
        raise FormatError(f"Trace {path} lacks columns {sorted(missing)}")

    records = []
    for line, r in enumerate(frame.itertuples(index=False), start=2):
        try:
            records.append(TraceRecord(int(r.step), int(r.candidate), float(r.mi), float(r.pe),
                                       bool(int(r.accepted)), int(r.retained_count)))
        except (TypeError, ValueError) as exc:
            raise FormatError(f"{path}:{line}: malformed trace row: {exc}") from exc
    trace = tuple(records)
    method = str(frame["method"].iloc[0]) if len(frame) else "hybrid"
    retained = tuple(r.candidate for r in trace if r.accepted)
    return SelectionResult(retained, trace, method)


def write_retained(result: SelectionResult, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# method={result.method} retained={len(result.retained)}\n")
        f.write("".join(f"{b}\n" for b in result.retained))


def read_retained(path: Union[str, os.PathLike]) -> List[int]:
    """Band indices, one per line; blank lines and '#' comments are skipped"""
    bands = []
    with open(path, "r", encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                bands.append(int(line))
            except ValueError as exc:
                raise FormatError(f"{path}:{number}: not a band index: {line!r}") from exc
    return bands
