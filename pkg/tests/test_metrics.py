import math

import numpy as np
import pytest
from scipy import ndimage

from contourseg import metrics as mt
from contourseg.validation import LabelVolume


def brute_surface(mask):
    pts = []
    D, H, W = mask.shape
    for z, y, x in zip(*np.nonzero(mask)):
        for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            zz, yy, xx = z + dz, y + dy, x + dx
            if not (0 <= zz < D and 0 <= yy < H and 0 <= xx < W) or not mask[zz, yy, xx]:
                pts.append((z, y, x))
                break
    return np.array(pts, dtype=float).reshape(-1, 3)


def brute_distances(a, b):
    sa, sb = brute_surface(a), brute_surface(b)
    if len(sa) == 0 or len(sb) == 0:
        return None
    pair = np.sqrt(((sa[:, None, :] - sb[None, :, :]) ** 2).sum(-1))
    return np.concatenate([pair.min(axis=1), pair.min(axis=0)])


def brute_hd95(a, b):
    d = brute_distances(a, b)
    if d is None:
        return math.nan
    d = np.sort(d)
    # inclusive linear interpolation written out
    pos = 0.95 * (len(d) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(d) - 1)
    return d[lo] + (pos - lo) * (d[hi] - d[lo])


def brute_assd(a, b):
    d = brute_distances(a, b)
    return math.nan if d is None else float(np.mean(d))


def brute_dsc(a, b):
    inter = sum(1 for v in zip(a.ravel(), b.ravel()) if v[0] and v[1])
    sa, sb = int(a.sum()), int(b.sum())
    if sa + sb == 0:
        return 1.0
    return 2 * inter / (sa + sb)


def random_blob_pair(rng, size=12):
    a = ndimage.binary_opening(rng.random((size,) * 3) < rng.uniform(0.3, 0.7))
    b = ndimage.binary_opening(rng.random((size,) * 3) < rng.uniform(0.3, 0.7))
    return a, b


class TestDSC:
    def test_identical(self):
        m = np.zeros((4, 4, 4), bool)
        m[1:3, 1:3, 1:3] = True
        assert mt.dsc_masks(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4, 4), bool)
        b = a.copy()
        a[0, 0, :2] = True
        b[3, 3, :2] = True
        assert mt.dsc_masks(a, b) == 0.0

    def test_half_overlapping_cubes(self):
        a = np.zeros((6, 6, 6), bool)
        b = a.copy()
        a[1:3, 1:3, 1:3] = True
        b[1:3, 1:3, 2:4] = True
        assert mt.dsc_masks(a, b) == 0.5

    def test_empty_policies(self):
        e = np.zeros((3, 3, 3), bool)
        f = e.copy()
        f[1, 1, 1] = True
        assert mt.dsc_masks(e, e) == 1.0
        assert mt.dsc_masks(e, f) == 0.0

    def test_label_volume_interface(self):
        lab = np.zeros((3, 3, 3), int)
        lab[0] = 1
        assert mt.dsc(LabelVolume(lab, 2), LabelVolume(lab, 2), 1) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="same shape"):
            mt.dsc_masks(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))


class TestSurface:
    def test_single_voxel(self):
        m = np.zeros((3, 3, 3), bool)
        m[1, 1, 1] = True
        np.testing.assert_array_equal(mt.surface_voxels(m), [[1, 1, 1]])

    def test_solid_cube(self):
        m = np.zeros((5, 5, 5), bool)
        m[1:4, 1:4, 1:4] = True
        s = mt.surface_voxels(m)
        assert len(s) == 26
        assert [2, 2, 2] not in s.tolist()

    def test_empty(self):
        assert len(mt.surface_voxels(np.zeros((3, 3, 3), bool))) == 0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            m = rng.random((7, 8, 6)) < 0.6
            got = {tuple(p) for p in mt.surface_voxels(m)}
            ref = {tuple(int(c) for c in p) for p in brute_surface(m)}
            assert got == ref


class TestSurfaceDistances:
    def test_identical_masks(self):
        m = np.zeros((6, 6, 6), bool)
        m[1:4, 2:5, 1:3] = True
        assert mt.hd95(m, m) == 0.0 and mt.assd(m, m) == 0.0

    @pytest.mark.parametrize("d", [1, 3, 5])
    def test_two_voxels_on_an_axis(self, d):
        a = np.zeros((8, 8, 8), bool)
        b = a.copy()
        a[1, 2, 2] = True
        b[1 + d, 2, 2] = True
        assert mt.hd95(a, b) == float(d)
        assert mt.assd(a, b) == float(d)

    def test_empty_surface_is_undefined(self):
        a = np.zeros((4, 4, 4), bool)
        b = a.copy()
        b[0, 0, 0] = True
        assert math.isnan(mt.hd95(a, b)) and math.isnan(mt.assd(b, a))

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(15):
            a, b = random_blob_pair(rng)
            if not a.any() or not b.any():
                continue
            assert abs(mt.hd95(a, b) - brute_hd95(a, b)) < 1e-9
            assert abs(mt.assd(a, b) - brute_assd(a, b)) < 1e-9

    def test_symmetry_and_translation_are_exact(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = np.zeros((14, 14, 14), bool)
            b = a.copy()
            a[:10, :10, :10], b[:10, :10, :10] = random_blob_pair(rng, 10)
            if not a.any() or not b.any():
                continue
            assert mt.hd95(a, b) == mt.hd95(b, a)
            assert mt.assd(a, b) == mt.assd(b, a)
            shift = tuple(int(s) for s in rng.integers(0, 4, size=3))
            sa, sb = np.roll(a, shift, axis=(0, 1, 2)), np.roll(b, shift, axis=(0, 1, 2))
            assert mt.hd95(sa, sb) == mt.hd95(a, b)
            assert mt.assd(sa, sb) == mt.assd(a, b)
            assert mt.dsc_masks(sa, sb) == mt.dsc_masks(a, b)


class TestReport:
    def test_report_means_skip_undefined(self):
        gt = np.zeros((6, 6, 6), int)
        gt[1:4, 1:4, 1:4] = 1
        gt[5, 5, 5] = 2
        pred = gt.copy()
        pred[5, 5, 5] = 0
        rep = mt.evaluate_labels(LabelVolume(pred, 3), LabelVolume(gt, 3))
        assert rep.per_class[1].dsc == 1.0 and rep.per_class[2].dsc == 0.0
        assert math.isnan(rep.per_class[2].hd95)
        assert rep.mean_dsc == 0.5 and rep.mean_hd95 == 0.0
        d = rep.to_dict()
        assert d["per_class"]["2"]["hd95"] is None
