import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from contourseg.data import (
    ClassSpec,
    DataFormatError,
    DatasetSpec,
    InfeasiblePackingError,
    Sample,
    augment,
    class_fractions,
    flip,
    generate,
    imbalance_v1,
    load_manifest,
    patch_starts,
    preset,
    read_volume,
    rotate,
    slice_patches,
    write_dataset,
    write_volume,
)
from contourseg.validation import LabelVolume


@pytest.fixture(scope="module")
def v1_samples():
    return generate(imbalance_v1(seed=3, num_volumes=12))


class StubRng:
    """Generator stand-in returning fixed uniforms."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def random(self, n):
        assert n == len(self.values)
        return self.values.copy()


class TestSpec:
    def test_invalid_fractions(self):
        with pytest.raises(ValueError, match="sum to less than 1"):
            DatasetSpec(classes=(ClassSpec(0.6, "box"), ClassSpec(0.5, "box")))
        with pytest.raises(ValueError):
            ClassSpec(0.0, "box")
        with pytest.raises(ValueError):
            ClassSpec(0.1, "torus")
        with pytest.raises(ValueError):
            ClassSpec(0.1, "box", probability=1.5)

    def test_preset(self):
        spec = preset("imbalance-v1", seed=1, num_volumes=4)
        assert spec.num_classes == 5
        assert [c.fraction for c in spec.classes] == [0.25, 0.04, 0.004, 0.001]
        assert [c.probability for c in spec.classes] == [1.0, 1.0, 1.0, 0.2]
        assert DatasetSpec.from_dict(spec.to_dict()) == spec
        with pytest.raises(ValueError, match="unknown dataset preset"):
            preset("nope")


class TestGenerate:
    def test_certain_classes_always_present(self, v1_samples):
        present = class_fractions(v1_samples)[:, 1:4] > 0
        assert present.all()

    def test_realised_volumes_within_tolerance(self, v1_samples):
        f = class_fractions(v1_samples)[:, 1:]
        target = np.array([0.25, 0.04, 0.004, 0.001])
        ratio = f / target
        present = f > 0
        assert np.all(np.abs(ratio[present] - 1) <= 0.5)

    def test_hundred_to_one_ratio(self):
        spec = DatasetSpec(seed=5, num_volumes=6, classes=(ClassSpec(0.3, "ellipsoid"), ClassSpec(0.003, "box")))
        f = class_fractions(generate(spec))
        ratio = f[:, 1] / f[:, 2]
        assert np.all((ratio > 100 / 2.25) & (ratio < 100 * 2.25))
        assert np.all(np.abs(f[:, 1] / 0.3 - 1) <= 0.5) and np.all(np.abs(f[:, 2] / 0.003 - 1) <= 0.5)

    def test_rare_class_frequency(self):
        f = class_fractions(generate(imbalance_v1(seed=0, num_volumes=40)))
        assert 0 < np.mean(f[:, 4] > 0) < 0.5

    def test_bitwise_determinism(self):
        a = generate(imbalance_v1(seed=9, num_volumes=3))
        b = generate(imbalance_v1(seed=9, num_volumes=3))
        for x, y in zip(a, b):
            assert x.intensity.tobytes() == y.intensity.tobytes()
            assert x.labels.labels.tobytes() == y.labels.labels.tobytes()
        c = generate(imbalance_v1(seed=10, num_volumes=1))[0]
        assert c.labels.labels.tobytes() != a[0].labels.labels.tobytes()

    def test_intensity_tracks_labels(self, v1_samples):
        s = v1_samples[0]
        means = [s.intensity[0][s.labels.labels == j].mean() for j in range(4)]
        assert means == sorted(means)

    def test_infeasible_packing(self):
        spec = DatasetSpec(seed=0, num_volumes=1, shape=(8, 8, 8),
                           classes=(ClassSpec(0.5, "box"), ClassSpec(0.45, "box")))
        with pytest.raises(InfeasiblePackingError):
            generate(spec)


class TestPatches:
    def test_stride_arithmetic(self):
        assert patch_starts(160, 64, 16) == [0, 48, 96]

    def test_disjoint_tiling(self):
        assert patch_starts(12, 4, 0) == [0, 4, 8]

    def test_clamped_last_patch(self):
        assert patch_starts(10, 4, 1) == [0, 3, 6]

    def test_single_patch(self):
        assert patch_starts(10, 10, 2) == [0]
        assert patch_starts(10, 32, 2) == [0]

    def test_invalid_overlap(self):
        with pytest.raises(ValueError):
            patch_starts(10, 4, 4)

    @given(depth=st.integers(1, 80), patch=st.integers(1, 40), data=st.data())
    def test_cover_every_slice(self, depth, patch, data):
        overlap = data.draw(st.integers(0, patch - 1))
        covered = np.zeros(depth, bool)
        for s in patch_starts(depth, patch, overlap):
            covered[s:s + patch] = True
        assert covered.all()

    def test_slice_samples(self, v1_samples):
        s = v1_samples[0]
        patches = slice_patches(s, 16, 4)
        assert [p.labels.shape[0] for p in patches] == [16, 16, 16]
        np.testing.assert_array_equal(patches[-1].labels.labels, s.labels.labels[16:])
        assert slice_patches(s, 64, 4)[0].labels.shape == s.labels.shape


class TestAugment:
    def test_gates_closed_is_identity(self, v1_samples):
        s = v1_samples[1]
        out = augment(s, StubRng([0.9, 0.5, 0.9, 0.5]))
        assert out is s

    def test_gates_open(self, v1_samples):
        s = v1_samples[1]
        out = augment(s, StubRng([0.0, 0.5, 0.9, 0.5]))
        assert not np.array_equal(out.labels.labels, s.labels.labels)
        out = augment(s, StubRng([0.9, 0.5, 0.1, 0.2]))
        np.testing.assert_array_equal(out.labels.labels, s.labels.labels[:, :, ::-1])

    @pytest.mark.parametrize("axis", ["h", "v"])
    def test_flip_involution(self, v1_samples, axis):
        s = v1_samples[2]
        back = flip(flip(s, axis), axis)
        assert back.labels.labels.tobytes() == s.labels.labels.tobytes()
        assert back.intensity.tobytes() == s.intensity.tobytes()
        assert set(np.unique(flip(s, axis).labels.labels)) == set(np.unique(s.labels.labels))

    def test_rotation_preserves_counts(self):
        # solid objects well inside the rotation-safe disc
        z, y, x = np.indices((16, 32, 32))
        lab = np.zeros((16, 32, 32), int)
        lab[(z - 8) ** 2 + (y - 16) ** 2 + (x - 12) ** 2 <= 36] = 1
        lab[5:11, 12:20, 20:26] = 2
        s = Sample(lab[None].astype(float), LabelVolume(lab, 3))
        for angle in (3.0, 7.5, 15.0):
            r = rotate(s, angle)
            before = np.bincount(lab.ravel(), minlength=3)[1:]
            after = np.bincount(r.labels.labels.ravel(), minlength=3)[1:]
            assert np.all(np.abs(after / before - 1) <= 0.1)

    def test_seeded_determinism(self, v1_samples):
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(4)
            outs.append([augment(s, rng).labels.labels.tobytes() for s in v1_samples])
        assert outs[0] == outs[1]


class TestIO:
    def test_volume_round_trip(self, tmp_path, v1_samples):
        s = v1_samples[0]
        write_volume(tmp_path / "a.csv1", s)
        r = read_volume(tmp_path / "a.csv1")
        assert r.intensity.tobytes() == s.intensity.tobytes()
        assert r.labels.labels.tobytes() == s.labels.labels.tobytes()
        assert r.num_classes == 5

    def test_bad_volume(self, tmp_path):
        (tmp_path / "x.csv1").write_bytes(b"CSV0....")
        with pytest.raises(DataFormatError):
            read_volume(tmp_path / "x.csv1")
        with pytest.raises(DataFormatError, match="cannot read"):
            read_volume(tmp_path / "missing.csv1")

    def test_truncated_volume(self, tmp_path, v1_samples):
        write_volume(tmp_path / "a.csv1", v1_samples[0])
        data = (tmp_path / "a.csv1").read_bytes()
        (tmp_path / "a.csv1").write_bytes(data[:-1])
        with pytest.raises(DataFormatError, match="size"):
            read_volume(tmp_path / "a.csv1")

    def test_manifest(self, tmp_path, v1_samples):
        spec = imbalance_v1(seed=3, num_volumes=12)
        path = write_dataset(tmp_path / "ds", v1_samples, spec, {"train": 8, "val": 2, "test": 2})
        m = load_manifest(path)
        assert [len(m.splits[k]) for k in ("train", "val", "test")] == [8, 2, 2]
        assert m.num_classes == 5
        loaded = m.load("val")
        assert loaded[0].labels.labels.tobytes() == v1_samples[8].labels.labels.tobytes()
        assert json.loads(path.read_text())["spec"]["seed"] == 3
        with pytest.raises(DataFormatError, match="no split"):
            m.files("holdout")

    def test_bad_manifest(self, tmp_path):
        (tmp_path / "m.json").write_text("{}")
        with pytest.raises(DataFormatError):
            load_manifest(tmp_path / "m.json")
        (tmp_path / "m.json").write_text("{oops")
        with pytest.raises(DataFormatError, match="JSON"):
            load_manifest(tmp_path / "m.json")
