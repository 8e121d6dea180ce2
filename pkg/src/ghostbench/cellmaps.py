"""Cell partitions of the pixel grid: uniform grids and retina-like layouts.

A retina map is built top-down. The image is tiled by ``max_cell_size``
blocks anchored at the origin (blocks at the right/bottom border may be
clipped). A block is split into four quadrants while it is larger than the
cell size wanted at its center, or while it touches the ROI and is larger than
``roi_cell_size``. Cell sides stay in the ladder ``roi_cell_size * 2**j``, so
maps for finer ROI cells refine maps for coarser ones.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Image, ImageError, RoiSpec, save_image


class CellMapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CellMap:
    """Partition of a ``width x height`` grid into rectangular cells.

    ``cell_of_pixel`` is a read-only row-major ``(height * width,)`` index
    array; ``cell_rects`` holds ``(x, y, w, h)`` for each cell.
    """

    width: int
    height: int
    cell_of_pixel: np.ndarray
    cell_rects: np.ndarray

    def __post_init__(self):
        cop = np.asarray(self.cell_of_pixel, dtype=np.int64).ravel()
        if cop.size != self.width * self.height:
            raise CellMapError("cell_of_pixel length must equal width * height")
        cop.setflags(write=False)
        rects = np.asarray(self.cell_rects, dtype=np.int64).reshape(-1, 4)
        rects.setflags(write=False)
        object.__setattr__(self, "cell_of_pixel", cop)
        object.__setattr__(self, "cell_rects", rects)

    @property
    def cell_count(self) -> int:
        return len(self.cell_rects)

    def cell_sizes(self) -> np.ndarray:
        """Pixel count of each cell."""
        return np.bincount(self.cell_of_pixel, minlength=self.cell_count)

    def cell_sides(self) -> np.ndarray:
        """Nominal side length of each cell (the larger rectangle extent)."""
        return np.maximum(self.cell_rects[:, 2], self.cell_rects[:, 3])

    def grid(self) -> np.ndarray:
        return self.cell_of_pixel.reshape(self.height, self.width)

    def __eq__(self, other):
        if not isinstance(other, CellMap):
            return NotImplemented
        return (self.width, self.height) == (other.width, other.height) and bool(
            np.array_equal(self.cell_of_pixel, other.cell_of_pixel)
        )


def _from_rects(width: int, height: int, rects) -> CellMap:
    rects = np.asarray(rects, dtype=np.int64).reshape(-1, 4)
    grid = np.full((height, width), -1, dtype=np.int64)
    for idx, (x, y, w, h) in enumerate(rects):
        grid[y:y + h, x:x + w] = idx
    if (grid < 0).any():
        raise CellMapError("cell rectangles do not cover the image")
    return CellMap(width, height, grid.ravel(), rects)


def uniform_cell_map(width: int, height: int, cell_size: int) -> CellMap:
    """Axis-aligned ``cell_size`` squares tiling the image in row-major order."""
    if cell_size < 1 or width % cell_size or height % cell_size:
        raise CellMapError(f"cell_size {cell_size} must divide {width}x{height}")
    cols, rows = width // cell_size, height // cell_size
    ys, xs = np.mgrid[0:height, 0:width]
    cop = (ys // cell_size) * cols + xs // cell_size
    cy, cx = np.mgrid[0:rows, 0:cols]
    rects = np.stack(
        [cx.ravel() * cell_size, cy.ravel() * cell_size,
         np.full(cols * rows, cell_size), np.full(cols * rows, cell_size)], axis=1,
    )
    return CellMap(width, height, cop.ravel(), rects)


@dataclass(frozen=True)
class RetinaSpec:
    """Parameters of a retina-like (foveated) cell layout.

    Annulus ``j >= 1`` spans radii ``[r0 * g**(j-1), r0 * g**j)`` and uses cells
    of side ``roi_cell_size * 2**j``, capped at ``max_cell_size``.
    """

    roi: RoiSpec
    roi_cell_size: int = 1
    ring_growth: float = 2.0
    max_cell_size: int = 16

    def __post_init__(self):
        if self.roi_cell_size < 1:
            raise CellMapError("roi_cell_size must be >= 1")
        if not self.ring_growth > 1.0:
            raise CellMapError("ring_growth must be > 1")
        ratio = self.max_cell_size / self.roi_cell_size
        if self.max_cell_size < self.roi_cell_size or ratio != int(ratio) or int(ratio) & (int(ratio) - 1):
            raise CellMapError(
                f"max_cell_size {self.max_cell_size} must be roi_cell_size * 2**j "
                f"(roi_cell_size={self.roi_cell_size})"
            )

    @classmethod
    def default(cls, resolution: int, roi: RoiSpec, roi_cell_size: int = 1) -> RetinaSpec:
        return cls(roi, roi_cell_size, 2.0, max(resolution // 8, roi_cell_size))

    def with_roi_cell_size(self, roi_cell_size: int) -> RetinaSpec:
        """Same rings with a new ROI cell size; the cap is raised if needed."""
        return RetinaSpec(self.roi, roi_cell_size, self.ring_growth,
                          max(self.max_cell_size, roi_cell_size))

    def side_at(self, distance):
        """Wanted cell side for points at the given distance(s) from the center."""
        d = np.asarray(distance, dtype=np.float64)
        r0, g = self.roi.radius, self.ring_growth
        levels = (self.max_cell_size // self.roi_cell_size).bit_length() - 1
        sides = np.full(d.shape, self.roi_cell_size, dtype=np.int64)
        for j in range(1, levels + 1):
            sides = np.where(d >= r0 * g ** (j - 1), self.roi_cell_size << j, sides)
        return sides


def retina_cell_map(width: int, height: int, spec: RetinaSpec) -> CellMap:
    """Foveated partition: finest cells in the ROI, coarser outward."""
    in_roi = spec.roi.mask(width, height)  # raises when the ROI misses the image
    if width % spec.roi_cell_size or height % spec.roi_cell_size:
        raise CellMapError(f"roi_cell_size {spec.roi_cell_size} must divide {width}x{height}")
    roi_count = np.zeros((height + 1, width + 1), dtype=np.int64)
    roi_count[1:, 1:] = np.cumsum(np.cumsum(in_roi, axis=0), axis=1)

    def touches_roi(x, y, w, h):
        return (roi_count[y + h, x + w] - roi_count[y, x + w]
                - roi_count[y + h, x] + roi_count[y, x]) > 0

    cx0, cy0 = spec.roi.center_x, spec.roi.center_y
    top = spec.max_cell_size
    rects = []
    stack = [(x, y, top) for y in range(0, height, top) for x in range(0, width, top)]
    while stack:
        x, y, s = stack.pop()
        w, h = min(s, width - x), min(s, height - y)
        center_d = np.hypot(x + w / 2.0 - cx0, y + h / 2.0 - cy0)
        wanted = int(spec.side_at(center_d))
        split = s > spec.roi_cell_size and (s > wanted or touches_roi(x, y, w, h))
        if split:
            half = s // 2
            stack.extend((qx, qy, half) for qy in (y, y + half) for qx in (x, x + half)
                         if qx < width and qy < height)
        else:
            rects.append((y, x, h, w))
    rects = [(x, y, w, h) for y, x, h, w in sorted(rects)]
    return _from_rects(width, height, rects)


def cell_map_for_stage(base: RetinaSpec | None, actual_resolution: int, stage_cells: int) -> CellMap:
    """Cell map for one stage with ``stage_cells`` cells per side.

    ``base=None`` selects the uniform family; a :class:`RetinaSpec` keeps its
    ROI and rings and sets ``roi_cell_size = actual_resolution / stage_cells``.
    """
    if stage_cells < 1 or actual_resolution % stage_cells:
        raise CellMapError(f"{stage_cells} cells per side must divide {actual_resolution}")
    size = actual_resolution // stage_cells
    if base is None:
        return uniform_cell_map(actual_resolution, actual_resolution, size)
    return retina_cell_map(actual_resolution, actual_resolution, base.with_roi_cell_size(size))


def export_cell_map(cell_map: CellMap, path) -> None:
    """Diagnostic PGM where brighter pixels belong to larger cells."""
    sides = cell_map.cell_sides()[cell_map.cell_of_pixel].astype(np.float64)
    img = Image((sides / sides.max()).reshape(cell_map.height, cell_map.width))
    save_image(img, Path(path))


__all__ = [
    "CellMap", "CellMapError", "RetinaSpec", "uniform_cell_map", "retina_cell_map",
    "cell_map_for_stage", "export_cell_map", "ImageError",
]
