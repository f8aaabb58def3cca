"""
Hyperspectral cube and ground-truth loading, quantization and train/test splits
"""
import hashlib
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd
from dotenv import dotenv_values
from PIL import Image

from app.core.config import DEFAULT_LEVELS, MAX_LABEL
from app.core.errors import DimensionError, FormatError, ParameterError

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]

INDIAN_PINES_CLASSES = {
    0: "Background",
    1: "Alfalfa",
    2: "Corn-notill",
    3: "Corn-mintill",
    4: "Corn",
    5: "Grass-pasture",
    6: "Grass-trees",
    7: "Grass-pasture-mowed",
    8: "Hay-windrowed",
    9: "Oats",
    10: "Soybean-notill",
    11: "Soybean-mintill",
    12: "Soybean-clean",
    13: "Wheat",
    14: "Woods",
    15: "Buildings-Grass-Trees-Drives",
    16: "Stone-Steel-Towers",
}


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


# --- Domain types ---

@dataclass(frozen=True)
class CubeHeader:
    """Dimensions and byte order of a band-sequential int16 cube"""
    rows: int
    cols: int
    bands: int
    byte_order: str = "little"

    def __post_init__(self):
        if min(self.rows, self.cols, self.bands) <= 0:
            raise DimensionError(f"Cube dimensions must be positive, got {self.rows}x{self.cols}x{self.bands}")
        if self.byte_order not in ("little", "big"):
            raise FormatError(f"Unknown byte order: {self.byte_order}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype("<i2" if self.byte_order == "little" else ">i2")

    @property
    def expected_bytes(self) -> int:
        return self.rows * self.cols * self.bands * 2


@dataclass(frozen=True)
class RawCube:
    """Signed 16-bit radiance, indexed as values[band, row, col]"""
    rows: int
    cols: int
    bands: int
    values: np.ndarray

    def __post_init__(self):
        if min(self.rows, self.cols, self.bands) <= 0:
            raise DimensionError("Cube dimensions must be positive")
        if self.values.size != self.rows * self.cols * self.bands:
            raise DimensionError(
                f"Value array holds {self.values.size} values, expected {self.rows * self.cols * self.bands}"
            )
        values = np.array(self.values, dtype=np.int16).reshape(self.bands, self.rows, self.cols)
        object.__setattr__(self, "values", _freeze(values))


@dataclass(frozen=True)
class HyperCube:
    """Quantized band stack: data[band, row, col] in [0, levels - 1]"""
    rows: int
    cols: int
    bands: int
    levels: int
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=np.uint16).reshape(self.bands, self.rows, self.cols)
        if data.size and int(data.max()) > self.levels - 1:
            raise ParameterError(f"Stored level {int(data.max())} exceeds levels - 1 = {self.levels - 1}")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def pixels(self) -> int:
        return self.rows * self.cols

    def band(self, index: int) -> np.ndarray:
        """Levels of one band as a flat row-major vector"""
        return self.data[index].ravel()

    def flat(self) -> np.ndarray:
        """All bands as a (bands, pixels) matrix"""
        return self.data.reshape(self.bands, self.pixels)


@dataclass(frozen=True)
class GroundTruth:
    """Per-pixel class labels; 0 marks pixels that are not classified yet"""
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise FormatError(f"Ground truth must be 2-D, got shape {labels.shape}")
        object.__setattr__(self, "labels", _freeze(labels))

    @classmethod
    def from_labels(cls, labels) -> "GroundTruth":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels=labels, num_classes=int(np.unique(labels[labels > 0]).size))

    @property
    def rows(self) -> int:
        return self.labels.shape[0]

    @property
    def cols(self) -> int:
        return self.labels.shape[1]

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels > 0

    @property
    def labeled_count(self) -> int:
        return int(np.count_nonzero(self.labels))

    @property
    def classes(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.unique(self.labels[self.labels > 0]))


@dataclass(frozen=True)
class PixelSplit:
    """Disjoint train/test masks covering exactly the labeled pixels"""
    train_mask: np.ndarray
    test_mask: np.ndarray
    seed: int
    fraction: float

    def __post_init__(self):
        object.__setattr__(self, "train_mask", _freeze(np.array(self.train_mask, dtype=bool)))
        object.__setattr__(self, "test_mask", _freeze(np.array(self.test_mask, dtype=bool)))
        if np.any(self.train_mask & self.test_mask):
            raise ParameterError("Train and test masks overlap")


# --- Loading ---

def read_header(path: PathLike) -> CubeHeader:
    """
    Parse a sidecar descriptor of ``key=value`` lines.

    Recognised keys: rows, cols, bands, byte_order (little | big).

    Raises:
        FileNotFoundError: If the descriptor does not exist
        FormatError: If a dimension is missing or not an integer
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Cube header not found: {path}")

    entries = {k.strip().lower(): (v or "").strip() for k, v in dotenv_values(path).items()}
    try:
        rows, cols, bands = (int(entries[key]) for key in ("rows", "cols", "bands"))
    except KeyError as exc:
        raise FormatError(f"Cube header {path} is missing {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise FormatError(f"Cube header {path} has a non-integer dimension: {exc}") from exc

    byte_order = entries.get("byte_order", "little").lower() or "little"
    return CubeHeader(rows=rows, cols=cols, bands=bands, byte_order=byte_order)


def write_header(header: CubeHeader, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"rows={header.rows}\ncols={header.cols}\nbands={header.bands}\nbyte_order={header.byte_order}\n")


def load_cube(path: PathLike, header: Union[CubeHeader, PathLike]) -> RawCube:
    """
    Load a band-sequential signed 16-bit cube.

    Args:
        path: Raw cube file
        header: Dimensions, or the path of a sidecar descriptor

    Returns:
        RawCube with values[band, row, col]

    Raises:
        FileNotFoundError: If the cube file doesn't exist
        DimensionError: If the file size disagrees with the dimensions
    """
    if not isinstance(header, CubeHeader):
        header = read_header(header)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Cube file not found: {path}")

    size = os.path.getsize(path)
    if size != header.expected_bytes:
        raise DimensionError(
            f"Cube file {path} has {size} bytes, expected {header.expected_bytes} "
            f"for {header.rows}x{header.cols}x{header.bands} int16"
        )

    values = np.fromfile(path, dtype=header.dtype).astype(np.int16)
    logger.info(f"Loaded cube {path}: {header.rows}x{header.cols}x{header.bands}")
    return RawCube(rows=header.rows, cols=header.cols, bands=header.bands, values=values)


def save_cube(raw: RawCube, path: PathLike, byte_order: str = "little") -> CubeHeader:
    """Write a cube in the layout load_cube reads; returns its header"""
    header = CubeHeader(rows=raw.rows, cols=raw.cols, bands=raw.bands, byte_order=byte_order)
    raw.values.astype(header.dtype).tofile(path)
    return header


def load_ground_truth(path: PathLike, max_label: int = MAX_LABEL) -> GroundTruth:
    """
    Load a label map from CSV (one line per row) or an 8-bit binary PGM.

    Raises:
        FileNotFoundError: If the file doesn't exist
        FormatError: If the file can't be parsed or a label is outside [0, max_label]
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Ground truth file not found: {path}")

    suffix = Path(path).suffix.lower()
    try:
        if suffix == ".pgm":
            with Image.open(path) as image:
                labels = np.asarray(image, dtype=np.int64)
        else:
            labels = np.loadtxt(path, delimiter=",", dtype=np.int64, ndmin=2)
    except (ValueError, OSError) as exc:
        raise FormatError(f"Could not parse ground truth {path}: {exc}") from exc

    if labels.size == 0:
        raise FormatError(f"Ground truth {path} is empty")
    if labels.min() < 0 or labels.max() > max_label:
        raise FormatError(
            f"Ground truth {path} has labels in [{labels.min()}, {labels.max()}], allowed [0, {max_label}]"
        )

    gt = GroundTruth.from_labels(labels)
    logger.info(f"Loaded ground truth {path}: {gt.labeled_count} labeled pixels, {gt.num_classes} classes")
    return gt


def dataset_hash(*paths: PathLike) -> str:
    """SHA-256 over the concatenated contents of the given files"""
    digest = hashlib.sha256()
    for path in paths:
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


# --- Quantization ---

def quantize_plane(values, levels: int) -> np.ndarray:
    """
    Min-max map one plane to integer levels.

    level = floor((v - min) * (L - 1) / (max - min)), so the minimum maps to 0,
    the maximum to L - 1, and a constant plane maps entirely to 0.
    """
    if levels < 2:
        raise ParameterError(f"Quantization needs at least 2 levels, got {levels}")

    values = np.asarray(values)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros(values.shape, dtype=np.uint16)

    if np.issubdtype(values.dtype, np.integer):
        # integer arithmetic keeps re-quantization exact
        scaled = (values.astype(np.int64) - int(lo)) * (levels - 1) // (int(hi) - int(lo))
    else:
        scaled = np.floor((values.astype(np.float64) - lo) * (levels - 1) / (hi - lo))
    return np.clip(scaled, 0, levels - 1).astype(np.uint16)


def quantize(raw: RawCube, levels: int = DEFAULT_LEVELS) -> HyperCube:
    """Quantize every band independently to ``levels`` discrete levels"""
    if levels < 2:
        raise ParameterError(f"Quantization needs at least 2 levels, got {levels}")
    data = np.stack([quantize_plane(raw.values[b], levels) for b in range(raw.bands)])
    return HyperCube(rows=raw.rows, cols=raw.cols, bands=raw.bands, levels=levels, data=data)


# --- Splits ---

def split_labeled(gt: GroundTruth, fraction: float, seed: int) -> PixelSplit:
    """
    Stratified random split of the labeled pixels.

    Per class, round(fraction * class size) pixels go to train and the rest to
    test. Classes with fewer than 2 pixels go entirely to train.
    """
    if not 0.0 < fraction < 1.0:
        raise ParameterError(f"Train fraction must be in (0, 1), got {fraction}")

    rng = np.random.default_rng(seed)
    flat = gt.labels.ravel()
    train = np.zeros(flat.shape, dtype=bool)

    for label in gt.classes:
        members = np.flatnonzero(flat == label)
        if members.size < 2:
            logger.warning(f"Class {label} has {members.size} pixel(s); assigning it entirely to train")
            train[members] = True
            continue
        n_train = int(math.floor(fraction * members.size + 0.5))
        train[rng.permutation(members)[:n_train]] = True

    test = (flat > 0) & ~train
    shape = gt.labels.shape
    return PixelSplit(train_mask=train.reshape(shape), test_mask=test.reshape(shape), seed=seed, fraction=fraction)


def save_split_csv(split: PixelSplit, gt: GroundTruth, path: PathLike) -> None:
    """Write one line per labeled pixel: row, col, label, subset"""
    rows, cols = np.nonzero(split.train_mask | split.test_mask)
    frame = pd.DataFrame({
        "row": rows,
        "col": cols,
        "label": gt.labels[rows, cols],
        "subset": np.where(split.train_mask[rows, cols], "train", "test"),
    })
    frame.to_csv(path, index=False, lineterminator="\n")


def load_dataset(
    cube_path: PathLike,
    gt_path: PathLike,
    header: Optional[Union[CubeHeader, PathLike]] = None,
    levels: int = DEFAULT_LEVELS,
) -> Tuple[HyperCube, GroundTruth]:
    """Load, quantize and cross-check a cube and its ground truth"""
    if header is None:
        header = f"{os.path.splitext(str(cube_path))[0]}.hdr"
    cube = quantize(load_cube(cube_path, header), levels)
    gt = load_ground_truth(gt_path)
    if (gt.rows, gt.cols) != (cube.rows, cube.cols):
        raise DimensionError(
            f"Ground truth is {gt.rows}x{gt.cols} but the cube is {cube.rows}x{cube.cols}"
        )
    return cube, gt
