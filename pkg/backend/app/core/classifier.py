"""
One-vs-one RBF support vector machine trained with simplified SMO.

Used twice by the band selection: to build the estimated ground truth
(GT_est) inside the wrapper, and to measure the final accuracy of a band
subset on the held-out half of the labeled pixels.
"""
import itertools
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import accuracy_score, balanced_accuracy_score
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.model_selection import StratifiedKFold

from app.core.config import (
    DEFAULT_N_JOBS,
    DEFAULT_SVM_C,
    DEFAULT_SVM_GAMMA,
    DEFAULT_SVM_MAX_ITER,
    DEFAULT_SVM_MAX_PASSES,
    DEFAULT_SVM_TOL,
)
from app.core.errors import DomainError, FormatError, ParameterError
from app.core.ingest import GroundTruth, HyperCube, PixelSplit

logger = logging.getLogger(__name__)

MODEL_FORMAT = "bandsel-svm"
MODEL_VERSION = 1

GRID_C = (1.0, 10.0, 100.0, 1000.0)
GRID_GAMMA = (0.1, 0.5, 1.0, 2.0)


class SvmParams(BaseModel):
    """Hyperparameters of the RBF machine and its SMO solver"""
    model_config = ConfigDict(frozen=True)

    C: float = Field(DEFAULT_SVM_C, gt=0)
    gamma: float = Field(DEFAULT_SVM_GAMMA, gt=0)
    tolerance: float = Field(DEFAULT_SVM_TOL, gt=0)
    max_passes: int = Field(DEFAULT_SVM_MAX_PASSES, ge=1)
    max_iter: int = Field(DEFAULT_SVM_MAX_ITER, ge=1)
    n_jobs: int = DEFAULT_N_JOBS


@dataclass(frozen=True)
class FeatureMatrix:
    """One row per selected pixel (row-major scan), one column per band, values in [0, 1]"""
    values: np.ndarray
    bands: Tuple[int, ...]
    pixel_index: np.ndarray
    levels: int

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class BinaryMachine:
    """Machine separating ``positive`` (+1) from ``negative`` (-1)"""
    positive: int
    negative: int
    support_index: np.ndarray
    support: np.ndarray
    alpha: np.ndarray
    labels: np.ndarray
    bias: float
    converged: bool

    @property
    def coef(self) -> np.ndarray:
        return self.alpha * self.labels

    def decision(self, values: np.ndarray, gamma: float) -> np.ndarray:
        if self.support.shape[0] == 0:
            return np.full(values.shape[0], self.bias)
        return rbf_kernel(values, self.support, gamma=gamma) @ self.coef + self.bias


@dataclass(frozen=True)
class SvmModel:
    params: SvmParams
    classes: Tuple[int, ...]
    machines: Tuple[BinaryMachine, ...]
    bands: Tuple[int, ...]
    feature_offset: Tuple[float, ...]
    feature_scale: Tuple[float, ...]

    @property
    def n_features(self) -> int:
        return len(self.feature_offset)

    @property
    def converged(self) -> bool:
        return all(m.converged for m in self.machines)


@dataclass(frozen=True)
class SubsetAccuracy:
    """Accuracy on the test pixels, in percent"""
    overall: float
    average: float
    n_test: int
    per_class: Dict[int, float] = field(default_factory=dict)


# --- Features ---

def extract_features(cube: HyperCube, band_subset: Sequence[int], mask: np.ndarray) -> FeatureMatrix:
    """
    Gather the levels of the chosen bands at the masked pixels, scaled to [0, 1].

    Raises:
        ParameterError: On an empty/duplicate/out-of-range band subset or an empty mask
    """
    bands = tuple(int(b) for b in band_subset)
    if not bands:
        raise ParameterError("Band subset is empty")
    if len(set(bands)) != len(bands):
        raise ParameterError(f"Band subset has duplicates: {list(bands)}")
    out_of_range = [b for b in bands if not 0 <= b < cube.bands]
    if out_of_range:
        raise ParameterError(f"Band indices out of range [0, {cube.bands}): {out_of_range}")

    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (cube.rows, cube.cols):
        raise ParameterError(f"Mask shape {mask.shape} does not match cube {(cube.rows, cube.cols)}")
    pixel_index = np.flatnonzero(mask.ravel())
    if pixel_index.size == 0:
        raise ParameterError("Pixel mask selects no pixels")

    values = cube.flat()[list(bands)][:, pixel_index].T.astype(np.float64) / (cube.levels - 1)
    return FeatureMatrix(values=values, bands=bands, pixel_index=pixel_index, levels=cube.levels)


def _as_values(X: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=np.float64)
    if values.ndim != 2:
        raise ParameterError(f"Feature matrix must be 2-D, got shape {values.shape}")
    return values


# --- Training ---

def _smo(K: np.ndarray, y: np.ndarray, params: SvmParams, rng: np.random.Generator) -> Tuple[np.ndarray, float, bool]:
    """
    Simplified SMO: sweep i over KKT violators, pair each with a random j.

    Stops after ``max_passes`` consecutive sweeps without a change
    (converged) or after ``max_iter`` sweeps (not converged).
    """
    n = y.size
    C, tol = params.C, params.tolerance
    alpha = np.zeros(n)
    bias = 0.0
    errors = -y.copy()  # f(x_i) - y_i with alpha = 0, b = 0

    passes = 0
    sweeps = 0
    while passes < params.max_passes and sweeps < params.max_iter:
        changed = 0
        for i in range(n):
            e_i = errors[i]
            r_i = y[i] * e_i
            if not ((r_i < -tol and alpha[i] < C) or (r_i > tol and alpha[i] > 0)):
                continue

            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            e_j = errors[j]
            a_i, a_j = alpha[i], alpha[j]

            if y[i] != y[j]:
                low, high = max(0.0, a_j - a_i), min(C, C + a_j - a_i)
            else:
                low, high = max(0.0, a_i + a_j - C), min(C, a_i + a_j)
            if high - low < 1e-12:
                continue

            eta = 2.0 * K[i, j] - K[i, i] - K[j, j]
            if eta >= 0:
                continue

            new_a_j = min(high, max(low, a_j - y[j] * (e_i - e_j) / eta))
            if abs(new_a_j - a_j) < 1e-8:
                continue
            new_a_i = min(C, max(0.0, a_i + y[i] * y[j] * (a_j - new_a_j)))

            d_i = y[i] * (new_a_i - a_i)
            d_j = y[j] * (new_a_j - a_j)
            b1 = bias - e_i - d_i * K[i, i] - d_j * K[i, j]
            b2 = bias - e_j - d_i * K[i, j] - d_j * K[j, j]
            if 0.0 < new_a_i < C:
                new_bias = b1
            elif 0.0 < new_a_j < C:
                new_bias = b2
            else:
                new_bias = 0.5 * (b1 + b2)

            errors += d_i * K[:, i] + d_j * K[:, j] + (new_bias - bias)
            alpha[i], alpha[j] = new_a_i, new_a_j
            bias = new_bias
            changed += 1

        sweeps += 1
        passes = passes + 1 if changed == 0 else 0

    return alpha, float(bias), passes >= params.max_passes


def _train_pair(values: np.ndarray, y: np.ndarray, positive: int, negative: int,
                params: SvmParams, seed: int) -> BinaryMachine:
    rows = np.flatnonzero((y == positive) | (y == negative))
    X_pair = values[rows]
    t = np.where(y[rows] == positive, 1.0, -1.0)
    K = rbf_kernel(X_pair, gamma=params.gamma)
    # per-pair stream, independent of training order
    rng = np.random.default_rng([seed, positive, negative])
    alpha, bias, converged = _smo(K, t, params, rng)

    support = alpha > 0
    if not converged:
        logger.debug(f"SMO for pair ({positive}, {negative}) stopped at max_iter={params.max_iter}")
    return BinaryMachine(
        positive=positive,
        negative=negative,
        support_index=rows[support],
        support=X_pair[support],
        alpha=alpha[support],
        labels=t[support],
        bias=bias,
        converged=converged,
    )


def svm_train(X: Union[FeatureMatrix, np.ndarray], y, params: Optional[SvmParams] = None, seed: int = 0) -> SvmModel:
    """
    Train one binary machine per unordered class pair.

    Args:
        X: Training features
        y: Labels, one per row of X
        params: Hyperparameters (defaults from config)
        seed: Seed of the working-pair RNG; nonnegative

    Returns:
        SvmModel; ``model.converged`` is False if any pair hit max_iter

    Raises:
        ParameterError: If rows(X) != len(y) or seed is negative
        DomainError: If y holds fewer than 2 distinct labels
    """
    params = params or SvmParams()
    values = _as_values(X)
    y = np.asarray(y, dtype=np.int64).ravel()
    if values.shape[0] != y.size:
        raise ParameterError(f"Feature matrix has {values.shape[0]} rows but {y.size} labels were given")
    if seed < 0:
        raise ParameterError(f"Seed must be nonnegative, got {seed}")
    classes = tuple(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise DomainError(f"SVM training needs at least 2 classes, got {list(classes)}")

    pairs = list(itertools.combinations(classes, 2))
    machines = Parallel(n_jobs=params.n_jobs)(
        delayed(_train_pair)(values, y, a, b, params, seed) for a, b in pairs
    )

    bands = X.bands if isinstance(X, FeatureMatrix) else ()
    scale = float(X.levels - 1) if isinstance(X, FeatureMatrix) else 1.0
    model = SvmModel(
        params=params,
        classes=classes,
        machines=tuple(machines),
        bands=tuple(bands),
        feature_offset=tuple(0.0 for _ in range(values.shape[1])),
        feature_scale=tuple(scale for _ in range(values.shape[1])),
    )
    if not model.converged:
        stalled = sum(not m.converged for m in model.machines)
        logger.warning(f"SMO did not converge for {stalled}/{len(pairs)} class pairs")
    return model


# --- Prediction ---

def decision_votes(model: SvmModel, X: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    """
    Vote counts, shape (rows, classes); each row sums to Nc(Nc-1)/2.

    X is in the scaled feature space ([0, 1] levels); use predict_pixels for raw cube levels.
    """
    values = _as_values(X)
    if values.shape[1] != model.n_features:
        raise ParameterError(f"Feature matrix has {values.shape[1]} columns, model expects {model.n_features}")

    position = {c: k for k, c in enumerate(model.classes)}
    votes = np.zeros((values.shape[0], len(model.classes)), dtype=np.int64)
    if values.shape[0] == 0:
        return votes
    rows = np.arange(values.shape[0])
    for machine in model.machines:
        positive_wins = machine.decision(values, model.params.gamma) >= 0
        winners = np.where(positive_wins, position[machine.positive], position[machine.negative])
        np.add.at(votes, (rows, winners), 1)
    return votes


def svm_predict(model: SvmModel, X: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    """Majority vote over all pairwise machines; ties go to the lowest label"""
    votes = decision_votes(model, X)
    if votes.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    # argmax returns the first maximum and classes are sorted ascending
    return np.asarray(model.classes, dtype=np.int64)[np.argmax(votes, axis=1)]


def predict_pixels(model: SvmModel, cube: HyperCube, mask: np.ndarray) -> np.ndarray:
    """
    Predict the masked pixels of a cube from their raw levels.

    The model's own bands and stored offset/scale turn levels into the
    feature space it was trained in, so a reloaded model needs nothing else.

    Raises:
        ParameterError: If the model was trained on a bare array (no bands)
    """
    if not model.bands:
        raise ParameterError("Model has no band subset; predict from a feature matrix instead")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (cube.rows, cube.cols):
        raise ParameterError(f"Mask shape {mask.shape} does not match cube {(cube.rows, cube.cols)}")
    out_of_range = [b for b in model.bands if not 0 <= b < cube.bands]
    if out_of_range:
        raise ParameterError(f"Model bands out of range [0, {cube.bands}): {out_of_range}")
    pixel_index = np.flatnonzero(mask.ravel())
    levels = cube.flat()[list(model.bands)][:, pixel_index].T.astype(np.float64)
    offset = np.asarray(model.feature_offset, dtype=np.float64)
    scale = np.asarray(model.feature_scale, dtype=np.float64)
    return svm_predict(model, (levels - offset) / scale)


def build_gt_est(cube: HyperCube, band_subset: Sequence[int], split: PixelSplit, gt: GroundTruth,
                 params: Optional[SvmParams] = None, seed: int = 0) -> np.ndarray:
    """
    Estimated ground truth from a band subset.

    Trains on the split's train pixels and predicts every labeled pixel.

    Returns:
        Label field shaped like gt.labels, 0 on unlabeled pixels
    """
    if not list(band_subset):
        raise ParameterError("GT_est needs a nonempty band subset")
    train = extract_features(cube, band_subset, split.train_mask)
    model = svm_train(train, gt.labels[split.train_mask], params, seed)

    labeled = gt.labeled_mask
    field_ = np.zeros_like(gt.labels)
    field_[labeled] = predict_pixels(model, cube, labeled)
    return field_


# --- Accuracy ---

def overall_accuracy(y_true, y_pred) -> float:
    """Percentage of correctly classified pixels"""
    y_true = np.asarray(y_true).ravel()
    if y_true.size == 0:
        raise ParameterError("Accuracy over zero pixels is undefined")
    return 100.0 * accuracy_score(y_true, np.asarray(y_pred).ravel())


def average_accuracy(y_true, y_pred) -> float:
    """Mean per-class accuracy (recall), in percent"""
    y_true = np.asarray(y_true).ravel()
    if y_true.size == 0:
        raise ParameterError("Accuracy over zero pixels is undefined")
    return 100.0 * balanced_accuracy_score(y_true, np.asarray(y_pred).ravel())


def score_subset(cube: HyperCube, gt: GroundTruth, split: PixelSplit, bands: Sequence[int],
                 params: Optional[SvmParams] = None, seed: int = 0) -> Tuple[SubsetAccuracy, SvmModel]:
    """Train on the train half, predict the test half"""
    train = extract_features(cube, bands, split.train_mask)
    model = svm_train(train, gt.labels[split.train_mask], params, seed)

    y_true = gt.labels[split.test_mask]
    y_pred = predict_pixels(model, cube, split.test_mask)
    per_class = {
        int(c): 100.0 * float(np.mean(y_pred[y_true == c] == c)) for c in np.unique(y_true)
    }
    accuracy = SubsetAccuracy(
        overall=overall_accuracy(y_true, y_pred),
        average=average_accuracy(y_true, y_pred),
        n_test=int(y_true.size),
        per_class=per_class,
    )
    return accuracy, model


def grid_search(cube: HyperCube, gt: GroundTruth, split: PixelSplit, bands: Sequence[int],
                base: Optional[SvmParams] = None, c_grid: Sequence[float] = GRID_C,
                gamma_grid: Sequence[float] = GRID_GAMMA, folds: int = 5,
                seed: int = 0) -> Tuple[SvmParams, Dict[Tuple[float, float], float]]:
    """
    Pick C and gamma by stratified k-fold cross-validation on the train pixels.

    Returns:
        Best parameters (first in grid order on ties) and the mean CV accuracy per (C, gamma)
    """
    base = base or SvmParams()
    features = extract_features(cube, bands, split.train_mask)
    y = gt.labels[split.train_mask]
    folder = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    fold_index = list(folder.split(features.values, y))

    scores: Dict[Tuple[float, float], float] = {}
    best, best_score = base, -1.0
    for c, gamma in itertools.product(c_grid, gamma_grid):
        candidate = base.model_copy(update={"C": c, "gamma": gamma})
        fold_scores = []
        for train_rows, test_rows in fold_index:
            model = svm_train(features.values[train_rows], y[train_rows], candidate, seed)
            fold_scores.append(overall_accuracy(y[test_rows], svm_predict(model, features.values[test_rows])))
        scores[(c, gamma)] = float(np.mean(fold_scores))
        logger.info(f"Grid C={c:g} gamma={gamma:g}: {scores[(c, gamma)]:.2f}%")
        if scores[(c, gamma)] > best_score:
            best, best_score = candidate, scores[(c, gamma)]

    logger.info(f"Best SVM parameters: C={best.C:g}, gamma={best.gamma:g} ({best_score:.2f}%)")
    return best, scores


# --- Export / import ---

def save_model(model: SvmModel, path: Union[str, os.PathLike]) -> None:
    """Write the model as versioned flat text; floats use repr so reloading is bit-exact"""
    def floats(values) -> str:
        return " ".join(repr(float(v)) for v in values)

    p = model.params
    lines = [
        f"{MODEL_FORMAT} {MODEL_VERSION}",
        f"C {p.C!r}",
        f"gamma {p.gamma!r}",
        f"tolerance {p.tolerance!r}",
        f"max_passes {p.max_passes}",
        f"max_iter {p.max_iter}",
        "bands " + " ".join(str(b) for b in model.bands),
        "offset " + floats(model.feature_offset),
        "scale " + floats(model.feature_scale),
        "classes " + " ".join(str(c) for c in model.classes),
        f"machines {len(model.machines)}",
    ]
    for m in model.machines:
        lines.append(f"machine {m.positive} {m.negative} {m.bias!r} {int(m.converged)} {m.alpha.size}")
        for k in range(m.alpha.size):
            lines.append(
                f"sv {int(m.support_index[k])} {float(m.alpha[k])!r} {int(m.labels[k])} {floats(m.support[k])}"
            )
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_model(path: Union[str, os.PathLike]) -> SvmModel:
    """
    Read a model written by save_model.

    Raises:
        FormatError: On an unknown header/version or a malformed line
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]

    def field_values(line: str, key: str) -> List[str]:
        parts = line.split(" ")
        if parts[0] != key:
            raise FormatError(f"Expected '{key}' line in model {path}, got: {line[:40]}")
        return parts[1:]

    try:
        if lines[0].split() != [MODEL_FORMAT, str(MODEL_VERSION)]:
            raise FormatError(f"Unsupported model header in {path}: {lines[0]}")
        params = SvmParams(
            C=float(field_values(lines[1], "C")[0]),
            gamma=float(field_values(lines[2], "gamma")[0]),
            tolerance=float(field_values(lines[3], "tolerance")[0]),
            max_passes=int(field_values(lines[4], "max_passes")[0]),
            max_iter=int(field_values(lines[5], "max_iter")[0]),
        )
        bands = tuple(int(v) for v in field_values(lines[6], "bands") if v)
        offset = tuple(float(v) for v in field_values(lines[7], "offset") if v)
        scale = tuple(float(v) for v in field_values(lines[8], "scale") if v)
        classes = tuple(int(v) for v in field_values(lines[9], "classes"))
        n_machines = int(field_values(lines[10], "machines")[0])

        machines = []
        cursor = 11
        for _ in range(n_machines):
            pos, neg, bias, converged, n_sv = field_values(lines[cursor], "machine")
            cursor += 1
            rows = [field_values(lines[cursor + k], "sv") for k in range(int(n_sv))]
            cursor += int(n_sv)
            width = len(offset)
            machines.append(BinaryMachine(
                positive=int(pos),
                negative=int(neg),
                support_index=np.array([int(r[0]) for r in rows], dtype=np.int64),
                support=np.array([[float(v) for v in r[3:]] for r in rows], dtype=np.float64).reshape(len(rows), width),
                alpha=np.array([float(r[1]) for r in rows], dtype=np.float64),
                labels=np.array([float(r[2]) for r in rows], dtype=np.float64),
                bias=float(bias),
                converged=bool(int(converged)),
            ))
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"Malformed model file {path}: {exc}") from exc

    return SvmModel(params=params, classes=classes, machines=tuple(machines), bands=bands,
                    feature_offset=offset, feature_scale=scale)
