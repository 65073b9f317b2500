"""Tests for label I/O, external import, splitting and the pose sampler."""

import json
import math

import numpy as np
import pandas as pd
import pytest

from src.softpose.augment import intrinsics_from_hfov
from src.softpose.datakit import (FrustumRange, ImportMapping, LabeledSample, find_image, generate_dataset,
                                  import_external, parse_label_line, poses_by_id, read_labels, sample_pose,
                                  split_dataset, write_labels)
from src.softpose.losses import PoseSample
from src.softpose.rotcore import IDENTITY, axis_angle, sample_uniform


class TestSamplePose:
    """Test the frustum pose sampler."""

    def setup_method(self):
        self.K = intrinsics_from_hfov(1080, 960, math.pi / 2)
        self.fr = FrustumRange()

    def test_poses_inside_frustum(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            pose = sample_pose(self.K, self.fr, rng)
            assert 10.0 <= pose.t[2] <= 40.0
            u, v = self.K.project(pose.t)
            assert 32.0 - 1e-6 <= u <= 1048.0 + 1e-6
            assert 32.0 - 1e-6 <= v <= 928.0 + 1e-6
            assert np.linalg.norm(pose.q) == pytest.approx(1.0)

    def test_margin_too_large(self):
        with pytest.raises(ValueError, match="no room"):
            sample_pose(self.K, FrustumRange(margin_px=480.0), np.random.default_rng(0))

    def test_invalid_range(self):
        with pytest.raises(ValueError):
            FrustumRange(min_range_m=40.0, max_range_m=10.0)

    def test_generate_dataset(self):
        first = generate_dataset(3, self.K, self.fr, np.random.default_rng(4))
        second = generate_dataset(3, self.K, self.fr, np.random.default_rng(4))
        assert [s.sample_id for s in first] == ["000000", "000001", "000002"]
        for a, b in zip(first, second):
            assert np.array_equal(a.pose.q, b.pose.q)
            assert np.array_equal(a.pose.t, b.pose.t)


class TestLabelFiles:
    """Test the JSONL label format."""

    def setup_method(self):
        K = intrinsics_from_hfov(1080, 960, math.pi / 2)
        self.samples = generate_dataset(20, K, FrustumRange(), np.random.default_rng(9))

    def test_write_then_read_is_exact(self, tmp_path):
        path = write_labels(self.samples, tmp_path / "labels.jsonl")
        restored = read_labels(path)
        assert [s.sample_id for s in restored] == [s.sample_id for s in self.samples]
        for a, b in zip(restored, self.samples):
            assert np.array_equal(a.pose.q, b.pose.q)
            assert np.array_equal(a.pose.t, b.pose.t)
            assert a.image_path is None

    def test_line_keys(self, tmp_path):
        path = write_labels(self.samples[:1], tmp_path / "labels.jsonl")
        record = json.loads(path.read_text().splitlines()[0])
        assert set(record) == {"id", "image", "q_wxyz", "t_xyz_m"}

    def test_blank_lines_and_empty_file(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        path.write_text("\n\n")
        assert read_labels(path) == []

    def test_bad_line_is_named(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        good = '{"id": "a", "q_wxyz": [1, 0, 0, 0], "t_xyz_m": [0, 0, 10]}'
        path.write_text(good + "\n\n{not json}\n")
        with pytest.raises(ValueError, match="line 3"):
            read_labels(path)

    def test_missing_key(self):
        with pytest.raises(ValueError, match="missing key 't_xyz_m'"):
            parse_label_line('{"id": "a", "q_wxyz": [1, 0, 0, 0]}', 1)

    def test_non_unit_quaternion(self):
        with pytest.raises(ValueError, match="not unit norm"):
            parse_label_line('{"id": "a", "q_wxyz": [1, 1, 0, 0], "t_xyz_m": [0, 0, 10]}', 1)

    def test_non_finite_values_name_the_line(self):
        with pytest.raises(ValueError, match="line 4: pose values must be finite"):
            parse_label_line('{"id": "a", "q_wxyz": [1, 0, 0, 0], "t_xyz_m": [0, NaN, 10]}', 4)
        with pytest.raises(ValueError, match="line 2: pose values must be finite"):
            parse_label_line('{"id": "a", "q_wxyz": [Infinity, 0, 0, 0], "t_xyz_m": [0, 0, 10]}', 2)
        with pytest.raises(ValueError, match="line 5: pose values must be numbers"):
            parse_label_line('{"id": "a", "q_wxyz": ["one", 0, 0, 0], "t_xyz_m": [0, 0, 10]}', 5)

    def test_near_unit_quaternion_kept_as_stored(self):
        sample = parse_label_line('{"id": "a", "q_wxyz": [0.9999995, 0, 0, 0], "t_xyz_m": [0, 0, 10]}', 1)
        assert sample.pose.q[0] == 0.9999995

    def test_sign_is_canonicalized(self):
        sample = parse_label_line('{"id": "a", "q_wxyz": [-1, 0, 0, 0], "t_xyz_m": [0, 0, 10]}', 1)
        assert np.array_equal(sample.pose.q, IDENTITY)

    def test_duplicate_ids(self, tmp_path):
        line = '{"id": "a", "q_wxyz": [1, 0, 0, 0], "t_xyz_m": [0, 0, 10]}'
        path = tmp_path / "labels.jsonl"
        path.write_text(line + "\n" + line + "\n")
        with pytest.raises(ValueError, match="duplicate sample id"):
            read_labels(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_labels(tmp_path / "none.jsonl")

    def test_poses_by_id(self):
        poses = poses_by_id(self.samples)
        assert set(poses) == {s.sample_id for s in self.samples}


class TestImportExternal:
    """Test conversion of external label formats."""

    def setup_method(self):
        self.q = axis_angle([0.0, 1.0, 0.0], 0.3)

    def test_xyzw_order_and_millimeters(self, tmp_path):
        path = tmp_path / "labels.json"
        x, y, z, w = self.q[1], self.q[2], self.q[3], self.q[0]
        path.write_text(json.dumps([{"name": "sat1", "rot": [x, y, z, w], "pos_mm": [100.0, -200.0, 15000.0]}]))
        mapping = ImportMapping(id_key="name", q_key="rot", t_key="pos_mm", q_order="xyzw", t_scale=0.001)
        samples = import_external(path, mapping)
        assert samples[0].sample_id == "sat1"
        assert np.allclose(samples[0].pose.q, self.q)
        assert np.allclose(samples[0].pose.t, [0.1, -0.2, 15.0])

    def test_csv_columns(self, tmp_path):
        path = tmp_path / "labels.csv"
        pd.DataFrame([{"id": 7, "qw": self.q[0], "qx": self.q[1], "qy": self.q[2], "qz": self.q[3],
                       "tx": 1.0, "ty": 2.0, "tz": 30.0}]).to_csv(path, index=False)
        mapping = ImportMapping(q_key=("qw", "qx", "qy", "qz"), t_key=("tx", "ty", "tz"), image_key=None)
        samples = import_external(path, mapping)
        assert samples[0].sample_id == "7"
        assert np.allclose(samples[0].pose.q, self.q)
        assert np.allclose(samples[0].pose.t, [1.0, 2.0, 30.0])

    def test_missing_key_names_record(self, tmp_path):
        path = tmp_path / "labels.jsonl"
        path.write_text('{"id": "a", "q_wxyz": [1, 0, 0, 0]}\n')
        with pytest.raises(ValueError, match="record 0"):
            import_external(path, ImportMapping())

    def test_mapping_from_dict(self, tmp_path):
        path = tmp_path / "mapping.json"
        path.write_text(json.dumps({"q_key": ["a", "b", "c", "d"], "q_order": "xyzw"}))
        mapping = ImportMapping.load(path)
        assert mapping.q_key == ("a", "b", "c", "d")
        with pytest.raises(ValueError, match="unknown mapping keys"):
            ImportMapping.from_dict({"rotation": "q"})
        with pytest.raises(ValueError):
            ImportMapping(q_order="zyxw")

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "labels.txt"
        path.write_text("")
        with pytest.raises(ValueError, match="Unsupported format"):
            import_external(path, ImportMapping())


class TestSplitAndImages:
    """Test dataset splitting and image lookup."""

    def setup_method(self):
        rng = np.random.default_rng(2)
        self.samples = [LabeledSample(f"{i:03d}", None, PoseSample(sample_uniform(rng), [0.0, 0.0, 20.0]))
                        for i in range(100)]

    def test_split_sizes(self):
        parts = split_dataset(self.samples, rng=np.random.default_rng(0))
        assert [len(p) for p in parts] == [80, 10, 10]
        ids = sorted(s.sample_id for part in parts for s in part)
        assert ids == [s.sample_id for s in self.samples]

    def test_split_deterministic(self):
        first = split_dataset(self.samples, rng=np.random.default_rng(5))
        second = split_dataset(self.samples, rng=np.random.default_rng(5))
        assert [[s.sample_id for s in p] for p in first] == [[s.sample_id for s in p] for p in second]

    def test_bad_fractions(self):
        with pytest.raises(ValueError):
            split_dataset(self.samples, (0.5, 0.6, 0.1))

    def test_find_image_by_id(self, tmp_path):
        (tmp_path / "001.json").write_text("{}")
        (tmp_path / "001.png").write_bytes(b"")
        assert find_image(self.samples[1], tmp_path).name == "001.png"
        with pytest.raises(FileNotFoundError):
            find_image(self.samples[2], tmp_path)

    def test_find_image_by_stored_path(self, tmp_path):
        (tmp_path / "imgs").mkdir()
        (tmp_path / "imgs" / "x.jpg").write_bytes(b"")
        sample = LabeledSample("a", "imgs/x.jpg", self.samples[0].pose)
        assert find_image(sample, tmp_path) == tmp_path / "imgs" / "x.jpg"
