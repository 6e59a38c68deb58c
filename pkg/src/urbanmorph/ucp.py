"""Gridded urban canopy parameters from LoD-1 buildings and binary masks.

Per grid cell (default resolution 300 m): building count, mean / standard
deviation of heights, footprint-area-weighted mean height, height histogram
in half-open 5-m bins, plan-area fraction, surface-to-plan ratio, and the
frontal area index per wind direction.

Conventions (declared, since sources differ): buildings belong to the cell
containing their footprint centroid; plan and roof areas are pixel counts on
the 1-m mask; the standard deviation is the population form; grid cells
clipped by the mask extent use their actually covered area as the cell area.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ShapeError
from .footprints import FootprintMask, centroid, polygon_area, polygon_perimeter, projected_width
from .lod1 import Lod1Building
from .raster import Raster, write_raster

DEFAULT_RESOLUTION = 300.0
DEFAULT_BIN_WIDTH = 5.0
DEFAULT_HEIGHT_CAP = 75.0


@dataclass(frozen=True)
class GridGeometry:
    """Aggregation grid anchored at the mask origin and covering its extent."""

    origin_x: float
    origin_y: float
    resolution: float
    rows: int
    cols: int
    fine_cell_size: float
    fine_width: int
    fine_height: int

    @property
    def res_px(self) -> int:
        return int(round(self.resolution / self.fine_cell_size))


def grid_geometry(mask: FootprintMask, resolution: float) -> GridGeometry:
    r = mask.raster
    ratio = resolution / r.cell_size
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise AlignmentError(
            f"resolution {resolution} is not an integer multiple of the mask "
            f"cell size {r.cell_size}"
        )
    res_px = int(round(ratio))
    return GridGeometry(
        origin_x=r.origin_x,
        origin_y=r.origin_y,
        resolution=resolution,
        rows=-(-r.height // res_px),
        cols=-(-r.width // res_px),
        fine_cell_size=r.cell_size,
        fine_width=r.width,
        fine_height=r.height,
    )


def _block_sums(values: np.ndarray, geom: GridGeometry) -> np.ndarray:
    """Sum a fine array over grid-cell blocks (edge blocks may be partial)."""
    res = geom.res_px
    padded = np.zeros((geom.rows * res, geom.cols * res), dtype=np.float64)
    padded[: values.shape[0], : values.shape[1]] = values
    return padded.reshape(geom.rows, res, geom.cols, res).sum(axis=(1, 3))


def covered_area(geom: GridGeometry) -> np.ndarray:
    """Actual mask-extent area of each grid cell in square meters (A_t)."""
    ones = np.ones((geom.fine_height, geom.fine_width))
    return _block_sums(ones, geom) * geom.fine_cell_size ** 2


def _check_mask(mask: FootprintMask, geom: GridGeometry) -> None:
    r = mask.raster
    if (
        r.width != geom.fine_width
        or r.height != geom.fine_height
        or abs(r.origin_x - geom.origin_x) > 1e-6
        or abs(r.origin_y - geom.origin_y) > 1e-6
        or abs(r.cell_size - geom.fine_cell_size) > 1e-9
    ):
        raise AlignmentError("mask is not nested in the aggregation grid")


def lambda_p(mask: FootprintMask, geom: GridGeometry) -> np.ndarray:
    """Plan-area fraction: built pixel area over cell area, per cell."""
    _check_mask(mask, geom)
    built = _block_sums((mask.raster.values > 0).astype(np.float64), geom)
    total = _block_sums(np.ones((geom.fine_height, geom.fine_width)), geom)
    return built / total


def _building_cells(buildings: list[Lod1Building], geom: GridGeometry) -> np.ndarray:
    """Flat grid-cell index per building (centroid rule); -1 when outside."""
    idx = np.full(len(buildings), -1, dtype=np.int64)
    for i, b in enumerate(buildings):
        cx, cy = centroid(b.footprint)
        col = math.floor((cx - geom.origin_x) / geom.resolution)
        row = math.floor((cy - geom.origin_y) / geom.resolution)
        if 0 <= row < geom.rows and 0 <= col < geom.cols:
            idx[i] = row * geom.cols + col
    return idx


def lambda_b(
    buildings: list[Lod1Building], mask: FootprintMask, geom: GridGeometry
) -> np.ndarray:
    """Surface-to-plan ratio: (roof area + perimeter x height) over cell area.

    Roof area comes from the mask's built pixels; the wall term sums over
    buildings whose centroid lies in the cell.
    """
    _check_mask(mask, geom)
    built_area = (
        _block_sums((mask.raster.values > 0).astype(np.float64), geom)
        * geom.fine_cell_size ** 2
    )
    walls = np.zeros(geom.rows * geom.cols)
    cells = _building_cells(buildings, geom)
    for b, c in zip(buildings, cells):
        if c >= 0:
            walls[c] += polygon_perimeter(b.footprint) * b.height
    a_t = covered_area(geom)
    return (built_area + walls.reshape(geom.rows, geom.cols)) / a_t


def height_stats(
    buildings: list[Lod1Building], geom: GridGeometry
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-cell (mean, population std, count) of member building heights."""
    n = geom.rows * geom.cols
    cells = _building_cells(buildings, geom)
    heights = np.array([b.height for b in buildings], dtype=np.float64)
    sel = cells >= 0
    counts = np.bincount(cells[sel], minlength=n).astype(np.int64)
    sums = np.bincount(cells[sel], weights=heights[sel], minlength=n)
    sumsq = np.bincount(cells[sel], weights=heights[sel] ** 2, minlength=n)
    mean = np.zeros(n)
    std = np.zeros(n)
    present = counts > 0
    mean[present] = sums[present] / counts[present]
    var = np.zeros(n)
    var[present] = np.maximum(0.0, sumsq[present] / counts[present] - mean[present] ** 2)
    std = np.sqrt(var)
    shape = (geom.rows, geom.cols)
    return mean.reshape(shape), std.reshape(shape), counts.reshape(shape)


def area_weighted_height(
    buildings: list[Lod1Building], geom: GridGeometry
) -> np.ndarray:
    """Footprint-area-weighted mean height per cell."""
    n = geom.rows * geom.cols
    cells = _building_cells(buildings, geom)
    sel = cells >= 0
    areas = np.array([polygon_area(b.footprint) for b in buildings])
    heights = np.array([b.height for b in buildings])
    wsum = np.bincount(cells[sel], weights=(areas * heights)[sel], minlength=n)
    w = np.bincount(cells[sel], weights=areas[sel], minlength=n)
    out = np.zeros(n)
    present = w > 0
    out[present] = wsum[present] / w[present]
    return out.reshape(geom.rows, geom.cols)


def height_histogram(
    buildings: list[Lod1Building],
    geom: GridGeometry,
    bin_width: float = DEFAULT_BIN_WIDTH,
    height_cap: float = DEFAULT_HEIGHT_CAP,
) -> np.ndarray:
    """Per-cell fractions of buildings per half-open height bin.

    Bins are [0, w), [w, 2w), ... with a final open-ended bin at and above
    ``height_cap``.  Cells without buildings get an all-zero vector.
    """
    if not bin_width > 0:
        raise ShapeError(f"bin_width {bin_width} must be > 0")
    nbins = int(height_cap // bin_width) + 1
    n = geom.rows * geom.cols
    cells = _building_cells(buildings, geom)
    heights = np.array([b.height for b in buildings], dtype=np.float64)
    bins = np.minimum((heights // bin_width).astype(np.int64), nbins - 1)
    sel = cells >= 0
    combined = cells[sel] * nbins + bins[sel]
    counts = np.bincount(combined, minlength=n * nbins).reshape(n, nbins)
    totals = counts.sum(axis=1)
    frac = np.zeros((n, nbins))
    present = totals > 0
    frac[present] = counts[present] / totals[present, None]
    return frac.reshape(geom.rows, geom.cols, nbins)


def lambda_f(
    buildings: list[Lod1Building], geom: GridGeometry, wind_direction: float
) -> np.ndarray:
    """Frontal area index: wind-facing wall area per unit cell area."""
    walls = np.zeros(geom.rows * geom.cols)
    cells = _building_cells(buildings, geom)
    for b, c in zip(buildings, cells):
        if c >= 0:
            walls[c] += projected_width(b.footprint, wind_direction) * b.height
    return walls.reshape(geom.rows, geom.cols) / covered_area(geom)


@dataclass
class UcpCell:
    mean_height: float
    std_height: float
    area_weighted_height: float
    histogram: np.ndarray
    lambda_p: float
    lambda_b: float
    lambda_f: dict[float, float]
    building_count: int


@dataclass
class UcpGrid:
    resolution: float
    origin_x: float
    origin_y: float
    rows: int
    cols: int
    bin_width: float
    height_cap: float
    count: np.ndarray = field(repr=False)
    mean: np.ndarray = field(repr=False)
    std: np.ndarray = field(repr=False)
    area_weighted: np.ndarray = field(repr=False)
    hist: np.ndarray = field(repr=False)
    lambda_p: np.ndarray = field(repr=False)
    lambda_b: np.ndarray = field(repr=False)
    lambda_f: dict[float, np.ndarray] = field(repr=False)
    covered_area: np.ndarray = field(repr=False)

    @property
    def nbins(self) -> int:
        return self.hist.shape[-1]

    def cell(self, row: int, col: int) -> UcpCell:
        return UcpCell(
            mean_height=float(self.mean[row, col]),
            std_height=float(self.std[row, col]),
            area_weighted_height=float(self.area_weighted[row, col]),
            histogram=self.hist[row, col].copy(),
            lambda_p=float(self.lambda_p[row, col]),
            lambda_b=float(self.lambda_b[row, col]),
            lambda_f={d: float(v[row, col]) for d, v in self.lambda_f.items()},
            building_count=int(self.count[row, col]),
        )

    def same_geometry(self, other: "UcpGrid") -> bool:
        return (
            self.rows == other.rows
            and self.cols == other.cols
            and abs(self.resolution - other.resolution) <= 1e-9
            and abs(self.origin_x - other.origin_x) <= 1e-6
            and abs(self.origin_y - other.origin_y) <= 1e-6
        )

    def scalar_field(self, name: str) -> np.ndarray:
        """Per-cell array for a named field (``hist_3``, ``lambda_f_90`` ...)."""
        plain = {
            "mean": self.mean,
            "std": self.std,
            "area_weighted": self.area_weighted,
            "lambda_p": self.lambda_p,
            "lambda_b": self.lambda_b,
            "count": self.count.astype(np.float64),
        }
        if name in plain:
            return plain[name]
        if name.startswith("hist_"):
            k = int(name[5:])
            if not 0 <= k < self.nbins:
                raise KeyError(f"histogram bin {k} out of range 0..{self.nbins - 1}")
            return self.hist[:, :, k]
        if name.startswith("lambda_f_"):
            d = float(name[9:])
            if d not in self.lambda_f:
                raise KeyError(f"no frontal area index for direction {d}")
            return self.lambda_f[d]
        raise KeyError(f"unknown UCP field '{name}'")


def aggregate_all(
    buildings: list[Lod1Building],
    mask: FootprintMask,
    resolution: float = DEFAULT_RESOLUTION,
    directions: tuple[float, ...] = (0.0,),
    bin_width: float = DEFAULT_BIN_WIDTH,
    height_cap: float = DEFAULT_HEIGHT_CAP,
) -> UcpGrid:
    """Populate every UCP field over one grid in a single deterministic pass."""
    geom = grid_geometry(mask, resolution)
    mean, std, count = height_stats(buildings, geom)
    return UcpGrid(
        resolution=resolution,
        origin_x=geom.origin_x,
        origin_y=geom.origin_y,
        rows=geom.rows,
        cols=geom.cols,
        bin_width=bin_width,
        height_cap=height_cap,
        count=count,
        mean=mean,
        std=std,
        area_weighted=area_weighted_height(buildings, geom),
        hist=height_histogram(buildings, geom, bin_width, height_cap),
        lambda_p=lambda_p(mask, geom),
        lambda_b=lambda_b(buildings, mask, geom),
        lambda_f={d: lambda_f(buildings, geom, d) for d in directions},
        covered_area=covered_area(geom),
    )


# -- export ------------------------------------------------------------------


def export_rasters(grid: UcpGrid, out_dir) -> list[str]:
    """One GLBR raster per scalar UCP, named ``ucp_{field}_{resolution}m.glbr``."""
    os.makedirs(out_dir, exist_ok=True)
    fields = {
        "mean": grid.mean,
        "std": grid.std,
        "area_weighted": grid.area_weighted,
        "lambda_p": grid.lambda_p,
        "lambda_b": grid.lambda_b,
        "count": grid.count.astype(np.float64),
    }
    for d, arr in grid.lambda_f.items():
        fields[f"lambda_f_{d:g}"] = arr
    paths = []
    res_tag = f"{grid.resolution:g}"
    for name, arr in fields.items():
        r = Raster(
            width=grid.cols,
            height=grid.rows,
            origin_x=grid.origin_x,
            origin_y=grid.origin_y,
            cell_size=grid.resolution,
            nodata=-9999.0,
            values=arr.astype(np.float32),
        )
        path = os.path.join(out_dir, f"ucp_{name}_{res_tag}m.glbr")
        write_raster(r, path)
        paths.append(path)
    return paths


def export_csv(grid: UcpGrid, path) -> None:
    directions = sorted(grid.lambda_f)
    header = ["cell_row", "cell_col", "count", "mean", "std", "lambda_p", "lambda_b"]
    header += [f"lambda_f_{d:g}" for d in directions]
    header += [f"hist_bin_{k}" for k in range(grid.nbins)]
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in range(grid.rows):
            for col in range(grid.cols):
                vals = [
                    str(row),
                    str(col),
                    str(int(grid.count[row, col])),
                    repr(float(grid.mean[row, col])),
                    repr(float(grid.std[row, col])),
                    repr(float(grid.lambda_p[row, col])),
                    repr(float(grid.lambda_b[row, col])),
                ]
                vals += [repr(float(grid.lambda_f[d][row, col])) for d in directions]
                vals += [repr(float(v)) for v in grid.hist[row, col]]
                f.write(",".join(vals) + "\n")
