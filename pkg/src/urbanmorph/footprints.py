"""Building footprint geometry and rasterization to binary masks.

Footprints are simple polygons (exterior ring plus optional holes) in the
shared planar meter frame.  Rings are stored open; closure back to the first
vertex is implicit.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, GeometryError
from .raster import Raster

_AREA_EPS = 1e-12


def _ring_array(ring) -> np.ndarray:
    arr = np.asarray(ring, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GeometryError(f"ring must be an Nx2 vertex list, got shape {arr.shape}")
    # Drop an explicit closing vertex; closure is implicit.
    if arr.shape[0] > 1 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    return arr


def _signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _ring_perimeter(ring: np.ndarray) -> float:
    d = np.roll(ring, -1, axis=0) - ring
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


def _ring_centroid(ring: np.ndarray) -> tuple[float, float, float]:
    """Signed area and area-weighted centroid of one ring."""
    x, y = ring[:, 0], ring[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * float(np.sum(cross))
    if abs(a) < _AREA_EPS:
        raise GeometryError("degenerate ring with zero area")
    cx = float(np.sum((x + xn) * cross)) / (6.0 * a)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * a)
    return a, cx, cy


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Proper intersection test for two segments sharing no endpoint."""

    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _ring_self_intersects(ring: np.ndarray) -> bool:
    n = ring.shape[0]
    segs = [(ring[i], ring[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent segments share an endpoint
            if _segments_intersect(*segs[i], *segs[j]):
                return True
    return False


@dataclass
class BuildingFootprint:
    id: int
    exterior: np.ndarray
    holes: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.exterior = _ring_array(self.exterior)
        self.holes = [_ring_array(h) for h in self.holes]
        if len(np.unique(self.exterior, axis=0)) < 3:
            raise GeometryError(f"footprint {self.id}: exterior needs >= 3 distinct vertices")
        if abs(_signed_area(self.exterior)) < _AREA_EPS:
            raise GeometryError(f"footprint {self.id}: degenerate exterior ring")
        if _ring_self_intersects(self.exterior):
            raise GeometryError(f"footprint {self.id}: self-intersecting exterior ring")

    def rings(self) -> list[np.ndarray]:
        return [self.exterior, *self.holes]

    def bounds(self) -> tuple[float, float, float, float]:
        xs = self.exterior[:, 0]
        ys = self.exterior[:, 1]
        return float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())


@dataclass
class FootprintMask:
    """1-m binary building mask plus per-cell footprint ownership.

    ``source_ids`` is 0 where no building covers the cell center; on overlap
    the highest footprint id wins.
    """

    raster: Raster
    source_ids: np.ndarray

    def __post_init__(self):
        self.source_ids = np.asarray(self.source_ids, dtype=np.int64).reshape(
            self.raster.height, self.raster.width
        )


def polygon_area(f: BuildingFootprint) -> float:
    """Shoelace area of the exterior minus its holes, in square meters."""
    area = abs(_signed_area(f.exterior))
    for hole in f.holes:
        area -= abs(_signed_area(hole))
    if area < _AREA_EPS:
        raise GeometryError(f"footprint {f.id}: non-positive net area")
    return area


def polygon_perimeter(f: BuildingFootprint) -> float:
    """Exterior ring length plus all hole ring lengths."""
    return _ring_perimeter(f.exterior) + sum(_ring_perimeter(h) for h in f.holes)


def centroid(f: BuildingFootprint) -> tuple[float, float]:
    """Area-weighted centroid with holes subtracted."""
    a_ext, cx, cy = _ring_centroid(f.exterior)
    total = abs(a_ext)
    mx, my = total * cx, total * cy
    for hole in f.holes:
        a_h, hx, hy = _ring_centroid(hole)
        total -= abs(a_h)
        mx -= abs(a_h) * hx
        my -= abs(a_h) * hy
    if total < _AREA_EPS:
        raise GeometryError(f"footprint {f.id}: holes consume the exterior")
    return mx / total, my / total


def projected_width(f: BuildingFootprint, wind_direction: float) -> float:
    """Extent of the exterior vertices projected perpendicular to the wind.

    ``wind_direction`` is the meteorological azimuth in degrees (0 = wind
    from north).  By construction the result is 180-degree periodic.
    """
    theta = math.radians(wind_direction % 360.0)
    ux, uy = math.cos(theta), -math.sin(theta)
    proj = f.exterior[:, 0] * ux + f.exterior[:, 1] * uy
    return float(proj.max() - proj.min())


def _points_in_rings(px: np.ndarray, py: np.ndarray, rings: list[np.ndarray]) -> np.ndarray:
    """Even-odd point-in-polygon over a set of rings (holes flip parity).

    Uses the standard crossing test, which yields a deterministic half-open
    boundary convention.
    """
    inside = np.zeros(px.shape, dtype=bool)
    for ring in rings:
        x1, y1 = ring[:, 0], ring[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        for k in range(ring.shape[0]):
            cond = (y1[k] > py) != (y2[k] > py)
            if not cond.any():
                continue
            xint = x1[k] + (py - y1[k]) * (x2[k] - x1[k]) / (y2[k] - y1[k])
            inside ^= cond & (px < xint)
    return inside


def rasterize(footprints: list[BuildingFootprint], template: Raster) -> FootprintMask:
    """Cell-center rasterization of footprints onto the template grid.

    A cell is 1 iff its center lies inside some footprint (even-odd rule).
    Footprints are applied in ascending id order so the highest id owns
    overlap cells.
    """
    mask = np.zeros((template.height, template.width), dtype=np.float32)
    ids = np.zeros((template.height, template.width), dtype=np.int64)
    cx = template.cell_centers_x()
    cy = template.cell_centers_y()

    for f in sorted(footprints, key=lambda f: f.id):
        xmin, ymin, xmax, ymax = f.bounds()
        c0 = int(np.searchsorted(cx, xmin))
        c1 = int(np.searchsorted(cx, xmax))
        r0 = int(np.searchsorted(cy, ymin))
        r1 = int(np.searchsorted(cy, ymax))
        if c0 >= c1 or r0 >= r1:
            warnings.warn(
                f"footprint {f.id} covers no cell centers of the template",
                stacklevel=2,
            )
            continue
        gx, gy = np.meshgrid(cx[c0:c1], cy[r0:r1])
        inside = _points_in_rings(gx, gy, f.rings())
        if not inside.any():
            warnings.warn(
                f"footprint {f.id} covers no cell centers of the template",
                stacklevel=2,
            )
            continue
        sub_mask = mask[r0:r1, c0:c1]
        sub_ids = ids[r0:r1, c0:c1]
        sub_mask[inside] = 1.0
        sub_ids[inside] = f.id

    return FootprintMask(raster=template.with_values(mask), source_ids=ids)


# -- GeoJSON I/O -------------------------------------------------------------


def _footprint_to_feature(f: BuildingFootprint, properties: dict | None = None) -> dict:
    coords = [f.exterior.tolist() + [f.exterior[0].tolist()]]
    for hole in f.holes:
        coords.append(hole.tolist() + [hole[0].tolist()])
    props = {"id": f.id}
    if properties:
        props.update(properties)
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {"type": "Polygon", "coordinates": coords},
    }


def _feature_to_footprint(feature: dict) -> BuildingFootprint:
    props = feature.get("properties") or {}
    if "id" not in props:
        raise FormatError("feature missing required 'id' property")
    geom = feature.get("geometry") or {}
    if geom.get("type") != "Polygon":
        raise FormatError(f"feature {props['id']}: geometry must be Polygon")
    coords = geom.get("coordinates") or []
    if not coords:
        raise FormatError(f"feature {props['id']}: empty coordinates")
    return BuildingFootprint(
        id=int(props["id"]), exterior=coords[0], holes=list(coords[1:])
    )


def write_footprints(footprints: list[BuildingFootprint], path) -> None:
    fc = {
        "type": "FeatureCollection",
        "features": [_footprint_to_feature(f) for f in footprints],
    }
    with open(path, "w") as f:
        json.dump(fc, f)


def read_footprints(path) -> list[BuildingFootprint]:
    with open(path) as f:
        try:
            fc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if fc.get("type") != "FeatureCollection":
        raise FormatError(f"{path}: expected a GeoJSON FeatureCollection")
    return [_feature_to_footprint(feat) for feat in fc.get("features", [])]
