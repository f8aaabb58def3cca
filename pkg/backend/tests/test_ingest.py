"""
Loading, quantization and splitting of cubes and label maps
"""
import numpy as np
import pandas as pd
import pytest
from PIL import Image

from app.core.errors import DimensionError, FormatError, ParameterError
from app.core.ingest import (
    CubeHeader,
    GroundTruth,
    PixelSplit,
    RawCube,
    dataset_hash,
    load_cube,
    load_dataset,
    load_ground_truth,
    quantize,
    quantize_plane,
    read_header,
    save_cube,
    save_split_csv,
    split_labeled,
    write_header,
)


class TestLoadCube:

    def test_single_value_cube(self, tmp_path):
        path = tmp_path / "one.bsq"
        np.array([7], dtype="<i2").tofile(path)
        raw = load_cube(path, CubeHeader(rows=1, cols=1, bands=1))
        assert raw.values.shape == (1, 1, 1)
        assert int(raw.values[0, 0, 0]) == 7

    def test_size_mismatch(self, tmp_path, tiny_header):
        path = tmp_path / "short.bsq"
        path.write_bytes(b"\x00" * 9)
        with pytest.raises(DimensionError):
            load_cube(path, tiny_header)

    def test_missing_file(self, tmp_path, tiny_header):
        with pytest.raises(FileNotFoundError):
            load_cube(tmp_path / "absent.bsq", tiny_header)

    def test_band_sequential_layout(self, tmp_path):
        # band 0 holds 0..3, band 1 holds 10..13, each row-major
        path = tmp_path / "bsq.bsq"
        np.array([0, 1, 2, 3, 10, 11, 12, 13], dtype="<i2").tofile(path)
        raw = load_cube(path, CubeHeader(rows=2, cols=2, bands=2))
        assert raw.values[0].tolist() == [[0, 1], [2, 3]]
        assert raw.values[1, 1, 0] == 12

    def test_big_endian(self, tmp_path):
        path = tmp_path / "be.bsq"
        np.array([-300, 300], dtype=">i2").tofile(path)
        raw = load_cube(path, CubeHeader(rows=1, cols=2, bands=1, byte_order="big"))
        assert raw.values.ravel().tolist() == [-300, 300]

    def test_save_then_load(self, tmp_path, raw_cube):
        path = tmp_path / "scene.bsq"
        header = save_cube(raw_cube, path)
        assert np.array_equal(load_cube(path, header).values, raw_cube.values)

    def test_values_are_read_only(self, raw_cube):
        with pytest.raises(ValueError):
            raw_cube.values[0, 0, 0] = 1


class TestHeader:

    def test_round_trip(self, tmp_path):
        path = tmp_path / "cube.hdr"
        write_header(CubeHeader(rows=145, cols=145, bands=220), path)
        assert read_header(path) == CubeHeader(rows=145, cols=145, bands=220)

    def test_missing_key(self, tmp_path):
        path = tmp_path / "cube.hdr"
        path.write_text("rows=2\ncols=2\n")
        with pytest.raises(FormatError, match="bands"):
            read_header(path)

    def test_non_integer(self, tmp_path):
        path = tmp_path / "cube.hdr"
        path.write_text("rows=2\ncols=two\nbands=1\n")
        with pytest.raises(FormatError):
            read_header(path)

    def test_zero_dimension(self, tmp_path):
        path = tmp_path / "cube.hdr"
        path.write_text("rows=0\ncols=2\nbands=1\n")
        with pytest.raises(DimensionError):
            read_header(path)


class TestGroundTruth:

    def test_csv(self, tmp_path, labels):
        path = tmp_path / "gt.csv"
        np.savetxt(path, labels, fmt="%d", delimiter=",")
        gt = load_ground_truth(path)
        assert gt.num_classes == 4
        assert gt.labeled_count == 132
        assert gt.classes == (1, 2, 3, 4)

    def test_pgm(self, tmp_path, labels):
        path = tmp_path / "gt.pgm"
        Image.fromarray(labels.astype(np.uint8)).save(path)
        gt = load_ground_truth(path)
        assert np.array_equal(gt.labels, labels)

    def test_all_zero_map(self, tmp_path):
        path = tmp_path / "zero.csv"
        np.savetxt(path, np.zeros((4, 4), dtype=int), fmt="%d", delimiter=",")
        gt = load_ground_truth(path)
        assert gt.num_classes == 0
        assert gt.labeled_count == 0

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "bad.csv"
        np.savetxt(path, np.array([[0, 17], [1, 2]]), fmt="%d", delimiter=",")
        with pytest.raises(FormatError):
            load_ground_truth(path)

    def test_negative_label(self, tmp_path):
        path = tmp_path / "bad.csv"
        np.savetxt(path, np.array([[0, -1], [1, 2]]), fmt="%d", delimiter=",")
        with pytest.raises(FormatError):
            load_ground_truth(path)

    def test_garbage(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\nc,d\n")
        with pytest.raises(FormatError):
            load_ground_truth(path)


class TestQuantize:

    def test_identity_when_already_in_range(self):
        plane = np.arange(256, dtype=np.int16).reshape(16, 16)
        assert np.array_equal(quantize_plane(plane, 256), plane)

    def test_constant_band(self):
        assert not quantize_plane(np.full((3, 3), 900, dtype=np.int16), 7).any()

    def test_two_levels(self):
        assert quantize_plane(np.array([10, 20, 30], dtype=np.int16), 2).tolist() == [0, 0, 1]

    def test_endpoints(self):
        levels = quantize_plane(np.array([-500, 3, 1200], dtype=np.int16), 16)
        assert levels.min() == 0 and levels.max() == 15

    def test_requantize_is_identity(self, raw_cube):
        once = quantize(raw_cube, 16)
        again = np.stack([quantize_plane(once.data[b], 16) for b in range(once.bands)])
        # the constant band stays 0; every other band already spans 0..15
        assert np.array_equal(again, once.data)

    def test_too_few_levels(self, raw_cube):
        with pytest.raises(ParameterError):
            quantize(raw_cube, 1)

    def test_every_band_within_levels(self, raw_cube):
        cube = quantize(raw_cube, 4)
        assert cube.data.max() <= 3
        assert cube.bands == raw_cube.bands


class TestSplit:

    def test_covers_labeled_pixels(self, gt):
        split = split_labeled(gt, 0.5, 3)
        assert np.array_equal(split.train_mask | split.test_mask, gt.labeled_mask)
        assert not (split.train_mask & split.test_mask).any()

    def test_exact_stratification(self):
        gt = GroundTruth.from_labels(np.array([[1, 1], [1, 1]]))
        split = split_labeled(gt, 0.5, 0)
        assert split.train_mask.sum() == 2
        assert split.test_mask.sum() == 2

    def test_per_class_counts(self, gt):
        split = split_labeled(gt, 0.5, 11)
        for label, size in ((1, 30), (2, 30), (3, 36), (4, 36)):
            assert (gt.labels[split.train_mask] == label).sum() == size // 2

    def test_same_seed_same_masks(self, gt):
        a, b = split_labeled(gt, 0.5, 42), split_labeled(gt, 0.5, 42)
        assert np.array_equal(a.train_mask, b.train_mask)

    def test_different_seed_different_masks(self, gt):
        a, b = split_labeled(gt, 0.5, 1), split_labeled(gt, 0.5, 2)
        assert not np.array_equal(a.train_mask, b.train_mask)

    def test_singleton_class_goes_to_train(self, caplog):
        gt = GroundTruth.from_labels(np.array([[1, 1, 1, 2]]))
        split = split_labeled(gt, 0.5, 0)
        assert split.train_mask[0, 3]
        assert "Class 2" in caplog.text

    def test_fraction_bounds(self, gt):
        with pytest.raises(ParameterError):
            split_labeled(gt, 1.0, 0)

    def test_overlapping_masks_rejected(self):
        mask = np.ones((2, 2), dtype=bool)
        with pytest.raises(ParameterError):
            PixelSplit(train_mask=mask, test_mask=mask, seed=0, fraction=0.5)

    def test_export(self, tmp_path, gt):
        split = split_labeled(gt, 0.5, 0)
        path = tmp_path / "split.csv"
        save_split_csv(split, gt, path)
        frame = pd.read_csv(path)
        assert list(frame.columns) == ["row", "col", "label", "subset"]
        assert len(frame) == gt.labeled_count
        assert (frame["subset"] == "train").sum() == split.train_mask.sum()


class TestLoadDataset:

    def test_default_header_path(self, dataset_files):
        cube, gt = load_dataset(dataset_files["cube"], dataset_files["gt"], levels=16)
        assert (cube.rows, cube.cols, cube.bands) == (12, 12, 6)
        assert gt.num_classes == 4

    def test_shape_mismatch(self, tmp_path, dataset_files):
        gt_path = tmp_path / "small_gt.csv"
        np.savetxt(gt_path, np.ones((3, 3), dtype=int), fmt="%d", delimiter=",")
        with pytest.raises(DimensionError):
            load_dataset(dataset_files["cube"], gt_path, dataset_files["header"])

    def test_hash_changes_with_content(self, tmp_path, dataset_files):
        before = dataset_hash(dataset_files["cube"], dataset_files["gt"])
        assert before == dataset_hash(dataset_files["cube"], dataset_files["gt"])
        with open(dataset_files["gt"], "a") as f:
            f.write("\n")
        assert before != dataset_hash(dataset_files["cube"], dataset_files["gt"])

    def test_raw_cube_size_check(self):
        with pytest.raises(DimensionError):
            RawCube(rows=2, cols=2, bands=2, values=np.zeros(7, dtype=np.int16))
