"""
Shared fixtures: small synthetic scenes, in memory and on disk.

The scene is 12x12 pixels with four quadrant classes and an unlabeled
first row. Bands:
    0  class mean + moderate noise (most relevant)
    1  band 0 + small noise (redundant with 0)
    2  separates odd from even classes
    3  separates classes {1, 2} from {3, 4}
    4  pure noise
    5  constant
"""
import os

import numpy as np
import pytest

from app.core.ingest import (
    CubeHeader,
    GroundTruth,
    HyperCube,
    RawCube,
    quantize,
    save_cube,
    write_header,
)

SCENE_ROWS = 12
SCENE_COLS = 12
SCENE_BANDS = 6
SCENE_LEVELS = 16


def scene_labels() -> np.ndarray:
    labels = np.zeros((SCENE_ROWS, SCENE_COLS), dtype=np.int64)
    labels[1:6, :6] = 1
    labels[1:6, 6:] = 2
    labels[6:, :6] = 3
    labels[6:, 6:] = 4
    return labels


def scene_values(labels: np.ndarray, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    shape = labels.shape
    band0 = 100.0 * labels + rng.normal(0, 30, shape)
    planes = [
        band0,
        band0 + rng.normal(0, 15, shape),
        60.0 * (labels % 2) + rng.normal(0, 10, shape),
        60.0 * (labels > 2) + rng.normal(0, 10, shape),
        rng.normal(500, 50, shape),
        np.full(shape, 42.0),
    ]
    return np.rint(np.stack(planes)).astype(np.int16)


@pytest.fixture
def labels() -> np.ndarray:
    return scene_labels()


@pytest.fixture
def raw_cube(labels) -> RawCube:
    return RawCube(rows=SCENE_ROWS, cols=SCENE_COLS, bands=SCENE_BANDS, values=scene_values(labels))


@pytest.fixture
def cube(raw_cube) -> HyperCube:
    return quantize(raw_cube, SCENE_LEVELS)


@pytest.fixture
def gt(labels) -> GroundTruth:
    return GroundTruth.from_labels(labels)


@pytest.fixture
def make_cube():
    """Factory: HyperCube from a list of 2-D integer planes"""
    def _make(planes, levels: int) -> HyperCube:
        data = np.stack([np.asarray(p) for p in planes]).astype(np.uint16)
        bands, rows, cols = data.shape
        return HyperCube(rows=rows, cols=cols, bands=bands, levels=levels, data=data)
    return _make


@pytest.fixture
def dataset_files(tmp_path, raw_cube, labels):
    """The synthetic scene written in the on-disk formats"""
    cube_path = tmp_path / "scene.bsq"
    header_path = tmp_path / "scene.hdr"
    gt_path = tmp_path / "scene_gt.csv"

    header = save_cube(raw_cube, cube_path)
    write_header(header, header_path)
    np.savetxt(gt_path, labels, fmt="%d", delimiter=",")
    return {"cube": str(cube_path), "header": str(header_path), "gt": str(gt_path)}


@pytest.fixture
def indian_pines_dir():
    """Directory holding the Indian Pines files, or skip"""
    path = os.getenv("BANDSEL_INDIAN_PINES_DIR")
    if not path or not os.path.isdir(path):
        pytest.skip("BANDSEL_INDIAN_PINES_DIR is not set")
    return path


@pytest.fixture
def tiny_header() -> CubeHeader:
    return CubeHeader(rows=2, cols=2, bands=2)
