"""
Checks against the Indian Pines scene.

Skipped unless BANDSEL_INDIAN_PINES_DIR holds indian_pines.bsq,
indian_pines.hdr and indian_pines_gt.csv. The selection sweeps are
also marked slow.
"""
import os

import numpy as np
import pytest

from app.core.ingest import load_dataset, split_labeled
from app.core.pipeline import ExperimentSpec, run_experiment
from app.core.selection import SelectionConfig, baseline_ig, rank_by_ig, run_hybrid

pytestmark = pytest.mark.dataset


@pytest.fixture
def scene(indian_pines_dir):
    return load_dataset(
        os.path.join(indian_pines_dir, "indian_pines.bsq"),
        os.path.join(indian_pines_dir, "indian_pines_gt.csv"),
        os.path.join(indian_pines_dir, "indian_pines.hdr"),
    )


def spec_for(directory: str, **overrides) -> ExperimentSpec:
    values = dict(
        cube_path=os.path.join(directory, "indian_pines.bsq"),
        gt_path=os.path.join(directory, "indian_pines_gt.csv"),
        header_path=os.path.join(directory, "indian_pines.hdr"),
    )
    values.update(overrides)
    return ExperimentSpec(**values)


def test_dimensions(scene):
    cube, gt = scene
    assert (cube.rows, cube.cols, cube.bands) == (145, 145, 220)
    assert gt.labeled_count == 10366
    assert gt.num_classes == 16


def test_split_covers_labeled(scene):
    _, gt = scene
    split = split_labeled(gt, 0.5, 0)
    assert int(split.train_mask.sum() + split.test_mask.sum()) == 10366


def test_ranking(scene):
    cube, gt = scene
    ranked = rank_by_ig(cube, gt)
    assert len(ranked) == 220
    assert ranked[0].score > 0


@pytest.mark.slow
def test_ig_baseline(indian_pines_dir):
    report = run_experiment(spec_for(indian_pines_dir, method="ig", band_counts=(5, 50)))
    assert report.cell("IG", 5).mean == pytest.approx(51.82, abs=5.0)
    assert report.cell("IG", 50).mean == pytest.approx(81.63, abs=4.0)


@pytest.mark.slow
def test_more_bands_help(scene):
    cube, gt = scene
    few, many = [], []
    for seed in range(5):
        split = split_labeled(gt, 0.5, seed)
        few.append(baseline_ig(cube, gt, split, 5, seed=seed)[1].overall)
        many.append(baseline_ig(cube, gt, split, 50, seed=seed)[1].overall)
    assert np.mean(many) >= np.mean(few)


@pytest.mark.slow
def test_mi_filter_80_bands(indian_pines_dir):
    report = run_experiment(spec_for(indian_pines_dir, method="mi-filter", thresholds=(-0.02,), band_counts=(80,)))
    assert report.cell("-0.02", 80).mean == pytest.approx(87.28, abs=4.0)


@pytest.mark.slow
def test_hybrid_threshold_behaviour(scene):
    cube, gt = scene
    strict = run_hybrid(cube, gt, SelectionConfig(threshold=0.0))
    loose = run_hybrid(cube, gt, SelectionConfig(threshold=-0.02))
    assert len(strict.retained) <= 25
    assert len(loose.retained) >= 70


@pytest.mark.slow
def test_hybrid_accuracy(indian_pines_dir):
    report = run_experiment(spec_for(indian_pines_dir, method="hybrid", thresholds=(-0.0035,), band_counts=(18, 50)))
    assert report.cell("-0.0035", 18).mean == pytest.approx(70.41, abs=4.0)
    assert report.cell("-0.0035", 50).mean == pytest.approx(84.28, abs=4.0)


@pytest.mark.slow
def test_hybrid_beats_ig_at_18_to_20_bands(indian_pines_dir):
    counts = (18, 19, 20)
    hybrid = run_experiment(spec_for(indian_pines_dir, method="hybrid", thresholds=(-0.0035,), band_counts=counts))
    ig = run_experiment(spec_for(indian_pines_dir, method="ig", band_counts=counts))
    reached = [n for n in counts if not hybrid.cell("-0.0035", n).empty]
    assert reached
    for n in reached:
        assert hybrid.cell("-0.0035", n).mean >= ig.cell("IG", n).mean + 4.0


@pytest.mark.slow
def test_hybrid_beats_mi_filter_at_36_bands(indian_pines_dir):
    hybrid = run_experiment(spec_for(indian_pines_dir, method="hybrid", thresholds=(-0.005,),
                                     band_counts=(36,), stage1_keep=220))
    mi_filter = run_experiment(spec_for(indian_pines_dir, method="mi-filter", thresholds=(-0.005,), band_counts=(36,)))
    assert not hybrid.cell("-0.005", 36).empty
    assert not mi_filter.cell("-0.005", 36).empty
    assert hybrid.cell("-0.005", 36).mean == pytest.approx(81.12, abs=4.0)
    assert hybrid.cell("-0.005", 36).mean > mi_filter.cell("-0.005", 36).mean
