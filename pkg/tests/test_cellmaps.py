import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghostbench.cellmaps import (
    CellMapError, RetinaSpec, cell_map_for_stage, export_cell_map, retina_cell_map,
    uniform_cell_map,
)
from ghostbench.core import ImageError, RoiSpec, load_image


def canonical(labels):
    """Relabel a partition by first occurrence so equal partitions compare equal."""
    labels = np.asarray(labels).ravel()
    _, first = np.unique(labels, return_index=True)
    order = {lab: i for i, lab in enumerate(labels[np.sort(first)])}
    return np.array([order[v] for v in labels])


def assert_partition(cmap):
    cop = cmap.cell_of_pixel
    assert cop.size == cmap.width * cmap.height
    assert set(np.unique(cop)) == set(range(cmap.cell_count))
    assert cmap.cell_sizes().sum() == cmap.width * cmap.height
    grid = cmap.grid()
    for idx, (x, y, w, h) in enumerate(cmap.cell_rects):
        # each cell is exactly its rectangle, hence one 4-connected block
        assert np.all(grid[y:y + h, x:x + w] == idx)
        assert (grid == idx).sum() == w * h


def brute_force_retina(width, height, cx, cy, r0, roi_size, growth, max_size):
    """Per-pixel oracle: walk each pixel's aligned ancestor blocks coarse to fine."""
    ring_radii = []
    s = roi_size
    j = 1
    while s < max_size:
        ring_radii.append(r0 * growth ** (j - 1))  # inner radius of annulus j
        s *= 2
        j += 1

    def wanted(d):
        side = roi_size
        for j, inner in enumerate(ring_radii, start=1):
            if d >= inner:
                side = roi_size * 2**j
        return side

    def has_roi_pixel(x, y, w, h):
        for yy in range(y, y + h):
            for xx in range(x, x + w):
                if math.hypot(xx + 0.5 - cx, yy + 0.5 - cy) < r0:
                    return True
        return False

    labels = {}
    out = np.zeros((height, width), dtype=np.int64)
    for py in range(height):
        for px in range(width):
            s = max_size
            while True:
                bx, by = px // s * s, py // s * s
                w, h = min(s, width - bx), min(s, height - by)
                d = math.hypot(bx + w / 2 - cx, by + h / 2 - cy)
                if s == roi_size or (s <= wanted(d) and not has_roi_pixel(bx, by, w, h)):
                    break
                s //= 2
            out[py, px] = labels.setdefault((bx, by, s), len(labels))
    return out


# -- uniform -----------------------------------------------------------------------

def test_uniform_128_by_8():
    m = uniform_cell_map(128, 128, 8)
    assert m.cell_count == 256
    assert np.all(m.cell_sizes() == 64)
    assert_partition(m)


def test_uniform_identity():
    m = uniform_cell_map(128, 128, 1)
    assert m.cell_count == 16384
    assert np.array_equal(m.cell_of_pixel, np.arange(16384))


def test_uniform_16_by_4_enumerated():
    expected = []
    for y in range(16):
        for x in range(16):
            expected.append({0: 0, 1: 0, 2: 0, 3: 0, 4: 1, 5: 1, 6: 1, 7: 1,
                             8: 2, 9: 2, 10: 2, 11: 2, 12: 3, 13: 3, 14: 3, 15: 3}[x]
                            + 4 * {0: 0, 1: 0, 2: 0, 3: 0, 4: 1, 5: 1, 6: 1, 7: 1,
                                   8: 2, 9: 2, 10: 2, 11: 2, 12: 3, 13: 3, 14: 3, 15: 3}[y])
    m = uniform_cell_map(16, 16, 4)
    assert m.cell_count == 16
    assert m.cell_of_pixel.tolist() == expected


def test_uniform_requires_divisor():
    with pytest.raises(CellMapError):
        uniform_cell_map(128, 128, 3)


@given(st.sampled_from([1, 2, 4, 8]), st.integers(1, 6))
def test_uniform_count(cell, k):
    side = cell * k
    m = uniform_cell_map(side, side, cell)
    assert m.cell_count == (side // cell) ** 2


# -- retina ----------------------------------------------------------------------

def test_retina_covering_disk_is_uniform():
    spec = RetinaSpec(RoiSpec(64, 64, 64 * math.sqrt(2)), 8, 2.0, 16)
    assert retina_cell_map(128, 128, spec) == uniform_cell_map(128, 128, 8)


def test_retina_roi_pixels_are_singletons():
    roi = RoiSpec(64, 64, 16)
    m = retina_cell_map(128, 128, RetinaSpec(roi, 1, 2.0, 16))
    sizes = m.cell_sizes()[m.cell_of_pixel].reshape(128, 128)
    assert np.all(sizes[roi.mask(128, 128)] == 1)
    assert_partition(m)


def test_retina_32_matches_pixel_oracle():
    spec = RetinaSpec(RoiSpec(16, 16, 8), 2, 2.0, 8)
    m = retina_cell_map(32, 32, spec)
    oracle = brute_force_retina(32, 32, 16, 16, 8, 2, 2.0, 8)
    assert np.array_equal(canonical(m.cell_of_pixel), canonical(oracle))
    # cell sides by radius band: ROI band 2, first annulus 4, beyond 8
    d = spec.roi.distance_map(32, 32).ravel()
    side = m.cell_sides()[m.cell_of_pixel]
    assert set(side[d < 8]) == {2}
    assert set(side[d >= 8 * 2 + 4 * math.sqrt(2)]) == {8}


@settings(max_examples=25, deadline=None)
@given(
    st.sampled_from([16, 24, 32]),
    st.floats(-4, 36), st.floats(-4, 36), st.floats(1.5, 20),
    st.sampled_from([1, 2]), st.sampled_from([1.5, 2.0, 3.0]), st.sampled_from([0, 1, 2, 3]),
)
def test_retina_matches_oracle_and_partitions(size, cx, cy, r0, roi_size, growth, levels):
    roi = RoiSpec(cx, cy, r0)
    try:
        roi.mask(size, size)
    except ImageError:
        return
    spec = RetinaSpec(roi, roi_size, growth, roi_size * 2**levels)
    m = retina_cell_map(size, size, spec)
    assert_partition(m)
    oracle = brute_force_retina(size, size, cx, cy, r0, roi_size, growth, roi_size * 2**levels)
    assert np.array_equal(canonical(m.cell_of_pixel), canonical(oracle))


def test_retina_cells_never_coarser_than_their_ring():
    spec = RetinaSpec(RoiSpec(20, 27, 11), 1, 2.0, 8)
    m = retina_cell_map(64, 64, spec)
    r = m.cell_rects.astype(float)
    d = np.hypot(r[:, 0] + r[:, 2] / 2 - 20, r[:, 1] + r[:, 3] / 2 - 27)
    assert np.all(m.cell_sides() <= spec.side_at(d))


@pytest.mark.parametrize("center,r0", [((32, 32), 16), ((20, 27), 11), ((5, 60), 9)])
def test_retina_mean_side_grows_outward(center, r0):
    spec = RetinaSpec(RoiSpec(*center, r0), 1, 2.0, 8)
    m = retina_cell_map(64, 64, spec)
    r = m.cell_rects.astype(float)
    d = np.hypot(r[:, 0] + r[:, 2] / 2 - center[0], r[:, 1] + r[:, 3] / 2 - center[1])
    ring = spec.side_at(d)
    means = [m.cell_sides()[ring == s].mean() for s in np.unique(ring)]
    assert all(a <= b for a, b in zip(means, means[1:]))


def test_retina_disjoint_roi_rejected():
    with pytest.raises(ImageError):
        retina_cell_map(32, 32, RetinaSpec(RoiSpec(100, 100, 5), 1, 2.0, 4))


def test_retina_spec_validation():
    with pytest.raises(CellMapError):
        RetinaSpec(RoiSpec(1, 1, 1), 2, 2.0, 6)
    with pytest.raises(CellMapError):
        RetinaSpec(RoiSpec(1, 1, 1), 1, 1.0, 4)
    with pytest.raises(CellMapError):
        RetinaSpec(RoiSpec(1, 1, 1), 0, 2.0, 4)


def test_border_blocks_are_clipped():
    # 24 is not a multiple of the 16-pixel coarse cells
    spec = RetinaSpec(RoiSpec(4, 4, 3), 1, 2.0, 16)
    m = retina_cell_map(24, 24, spec)
    assert_partition(m)
    assert (m.cell_rects[:, 2] == 8).any()


# -- stages -----------------------------------------------------------------------

def test_stage_uniform():
    m = cell_map_for_stage(None, 128, 32)
    assert m.cell_count == 1024 and np.all(m.cell_sizes() == 16)


def test_stage_retina_finest():
    roi = RoiSpec(64, 64, 32)
    spec = RetinaSpec.default(128, roi)
    m = cell_map_for_stage(spec, 128, 128)
    sizes = m.cell_sizes()[m.cell_of_pixel].reshape(128, 128)
    assert np.all(sizes[roi.mask(128, 128)] == 1)


def test_stage_retina_matches_direct_construction():
    roi = RoiSpec(64, 64, 32)
    spec = RetinaSpec.default(128, roi)
    direct = retina_cell_map(128, 128, RetinaSpec(roi, 8, 2.0, 16))
    assert cell_map_for_stage(spec, 128, 16) == direct


def test_stage_requires_divisor():
    with pytest.raises(CellMapError):
        cell_map_for_stage(None, 128, 48)


@pytest.mark.parametrize("roi", [RoiSpec(32, 32, 16), RoiSpec(10, 50, 7), RoiSpec(64, 0, 20)])
def test_stages_refine(roi):
    spec = RetinaSpec.default(64, roi)
    maps = [cell_map_for_stage(spec, 64, m) for m in (8, 16, 32, 64)]
    for coarse, fine in zip(maps, maps[1:]):
        # every fine cell lies inside exactly one coarse cell
        owners = coarse.cell_of_pixel
        for idx in range(fine.cell_count):
            assert len(np.unique(owners[fine.cell_of_pixel == idx])) == 1


def test_export_cell_map(tmp_path):
    m = retina_cell_map(32, 32, RetinaSpec(RoiSpec(16, 16, 6), 1, 2.0, 8))
    export_cell_map(m, tmp_path / "cells.pgm")
    im = load_image(tmp_path / "cells.pgm")
    assert im.shape == (32, 32) and im.data.max() == 1.0
