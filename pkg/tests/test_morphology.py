import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from contourseg.morphology import (
    StructuringElement,
    contour_fraction,
    erode,
    extract_contours,
)
from contourseg.validation import LabelVolume


def brute_force_erode(mask, k, anchor, iterations=1):
    """Scan every voxel and test the anchored cube against the definition."""
    m = np.asarray(mask, dtype=bool)
    D, H, W = m.shape
    for _ in range(iterations):
        out = np.zeros_like(m)
        for z in range(D):
            for y in range(H):
                for x in range(W):
                    keep = True
                    for i in range(k):
                        for j in range(k):
                            for l in range(k):
                                zz, yy, xx = z + i - anchor[0], y + j - anchor[1], x + l - anchor[2]
                                inside = 0 <= zz < D and 0 <= yy < H and 0 <= xx < W
                                if not inside or not m[zz, yy, xx]:
                                    keep = False
                                    break
                            if not keep:
                                break
                        if not keep:
                            break
                    out[z, y, x] = keep
        m = out
    return m


def cube_volume(size=9, side=5):
    v = np.zeros((size,) * 3, dtype=bool)
    lo = (size - side) // 2
    v[lo:lo + side, lo:lo + side, lo:lo + side] = True
    return v


def test_all_zero_stays_zero():
    assert not erode(np.zeros((4, 5, 6), dtype=bool)).any()


def test_single_voxel_vanishes_with_k2():
    m = np.zeros((5, 5, 5), dtype=bool)
    m[2, 2, 2] = True
    assert not erode(m, StructuringElement(2), 1).any()


def test_centered_cube_erodes_to_inner_cube():
    out = erode(cube_volume(), StructuringElement.centered(3), 1)
    expected = cube_volume(9, 3)
    np.testing.assert_array_equal(out, expected)
    np.testing.assert_array_equal(out, brute_force_erode(cube_volume(), 3, (1, 1, 1)))


def test_k2_corner_anchor_cube():
    out = erode(cube_volume(), StructuringElement(2), 1)
    # anchor (0,0,0): the +1 neighbour along each axis must be inside, so the cube loses its far faces
    assert out.sum() == 4 ** 3
    assert out[2:6, 2:6, 2:6].all()


def test_boundary_voxels_erode():
    m = np.ones((3, 3, 3), dtype=bool)
    out = erode(m, StructuringElement.centered(3))
    assert out.sum() == 1 and out[1, 1, 1]


def test_non_binary_rejected():
    with pytest.raises(ValueError, match="binary"):
        erode(np.full((2, 2, 2), 2))


def test_bad_iterations_and_anchor():
    with pytest.raises(ValueError):
        erode(np.zeros((2, 2, 2)), iterations=0)
    with pytest.raises(ValueError):
        StructuringElement(2, (0, 2, 0))
    with pytest.raises(ValueError):
        StructuringElement(0)


def test_matches_brute_force_on_random_masks():
    rng = np.random.default_rng(11)
    for trial in range(25):
        m = rng.random((8, 9, 7)) < rng.uniform(0.4, 0.95)
        k = int(rng.integers(1, 4))
        anchor = tuple(int(a) for a in rng.integers(0, k, size=3))
        it = int(rng.integers(1, 3))
        np.testing.assert_array_equal(erode(m, StructuringElement(k, anchor), it),
                                      brute_force_erode(m, k, anchor, it))


def test_agrees_with_scipy_for_centered_odd_elements():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = rng.random((10, 10, 10)) < 0.8
        ref = ndimage.binary_erosion(m, structure=np.ones((3, 3, 3)), border_value=0)
        np.testing.assert_array_equal(erode(m, StructuringElement.centered(3)), ref)


masks = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).random((6, 6, 6)) < 0.75)
elements = st.integers(1, 3).flatmap(
    lambda k: st.tuples(st.just(k), st.tuples(*[st.integers(0, k - 1)] * 3)))


@settings(max_examples=40, deadline=None)
@given(masks, elements)
def test_erosion_is_anti_extensive(m, ke):
    k, anchor = ke
    out = erode(m, StructuringElement(k, anchor))
    assert not (out & ~m).any()


@settings(max_examples=30, deadline=None)
@given(masks, elements, st.integers(2, 4))
def test_iterations_compose(m, ke, n):
    se = StructuringElement(*ke)
    np.testing.assert_array_equal(erode(m, se, n), erode(erode(m, se, 1), se, n - 1))


class TestContours:
    def test_empty_class(self):
        gt = LabelVolume(np.zeros((4, 4, 4), dtype=int), 3)
        maps = extract_contours(gt)
        assert not maps.contour.any() and not maps.eroded.any()

    def test_single_voxel_class_is_all_contour(self):
        lab = np.zeros((5, 5, 5), dtype=int)
        lab[1, 2, 3] = 1
        maps = extract_contours(LabelVolume(lab, 2), StructuringElement(2), 1)
        np.testing.assert_array_equal(maps.contour[1], lab == 1)
        assert not maps.eroded[1].any()

    def test_cube_shell_has_98_voxels(self):
        lab = cube_volume().astype(int)
        maps = extract_contours(LabelVolume(lab, 2), StructuringElement.centered(3), 1)
        assert maps.contour[1].sum() == 125 - 27 == 98
        assert maps.eroded[1].sum() == 27

    def test_background_row_empty_and_weight_map_is_contour(self):
        rng = np.random.default_rng(0)
        gt = LabelVolume(rng.integers(0, 4, size=(6, 6, 6)), 4)
        maps = extract_contours(gt)
        assert not maps.contour[0].any() and not maps.eroded[0].any()
        assert maps.weight_map is maps.contour

    def test_partition_invariants(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            gt = LabelVolume(rng.integers(0, 3, size=(8, 8, 8)), 3)
            maps = extract_contours(gt, StructuringElement(2), int(rng.integers(1, 3)))
            for j in range(1, 3):
                g = gt.labels == j
                assert not (maps.contour[j] & maps.eroded[j]).any()
                np.testing.assert_array_equal(maps.contour[j] | maps.eroded[j], g)

    def test_contour_fraction_grows_with_iterations(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            lab = ndimage.binary_closing(rng.random((12, 12, 12)) < 0.7).astype(int)
            gt = LabelVolume(lab, 2)
            fracs = [contour_fraction(extract_contours(gt, StructuringElement(2), n), gt)[1] for n in (1, 2, 3, 5)]
            assert all(a <= b for a, b in zip(fracs, fracs[1:]))
