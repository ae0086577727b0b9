"""Mapper, reducer and serial reference for coaddition.

A record is projected onto a query's output grid by bilinear interpolation.
An output pixel is covered when its center lies in the record/query overlap
(half-open, so abutting fields never double count) and every source pixel
carrying nonzero interpolation weight lies inside the record's tile.

Accumulation always walks projected tiles in record-key order and sums in
float64, so any execution order gives bit-identical output.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Band, SkyBounds, Wcs, bounds_intersect, edge_samples, make_target_wcs
from .image import ImageRecord, ImageTile, read_raster, write_raster

# Fractional source offsets closer than this to a pixel center snap onto it,
# making interpolation an identity when grids coincide.
SNAP_EPS = 1e-6


@dataclass(frozen=True)
class Query:
    id: str
    band: Band
    bounds: SkyBounds
    pixel_scale: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "band", Band.parse(self.band))
        if self.bounds is None:
            raise ValueError("query bounds must be non-empty")
        if not self.pixel_scale > 0.0:
            raise ValueError(f"pixel_scale must be > 0, got {self.pixel_scale}")
        if not self.id:
            raise ValueError("query id must be non-empty")


def parse_bounds(text: str) -> SkyBounds:
    """Parse ``"ra_min:ra_max:dec_min:dec_max"`` in decimal degrees."""
    parts = text.split(":")
    if len(parts) != 4:
        raise ValueError(f"bounds {text!r} must look like ra_min:ra_max:dec_min:dec_max")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ValueError(f"bounds {text!r} contain a non-number") from None
    return SkyBounds.from_ranges(*vals)


def format_bounds(b: SkyBounds) -> str:
    return f"{b.ra_min!r}:{b.ra_max!r}:{b.dec_min!r}:{b.dec_max!r}"


@dataclass(eq=False)
class ProjectedTile:
    """One record resampled onto a rectangle of one query's grid."""

    query_id: str
    key: str
    origin_x: int
    origin_y: int
    values: np.ndarray  # float32, (height, width)
    coverage: np.ndarray  # uint8 0/1, same shape

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(eq=False)
class CoaddResult:
    wcs: Wcs
    sum: np.ndarray  # float32
    depth: np.ndarray  # uint32
    n_contributing: int = 0

    @property
    def mean(self) -> np.ndarray:
        out = np.zeros(self.sum.shape, dtype=np.float64)
        np.divide(self.sum, self.depth, out=out, where=self.depth > 0)
        return out

    def save(self, path: str | os.PathLike) -> None:
        write_raster(path, ImageTile(self.wcs, self.sum), self.depth)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CoaddResult":
        tile, depth = read_raster(path)
        if depth is None:
            raise ValueError(f"{path} has no depth plane")
        # the contributor count is not persisted
        return cls(tile.wcs, tile.pixels, depth)


@dataclass(frozen=True)
class CoaddComparison:
    max_abs_diff: float
    depth_equal: bool

    @property
    def identical(self) -> bool:
        return self.max_abs_diff == 0.0 and self.depth_equal


def compare_coadds(a: CoaddResult, b: CoaddResult) -> CoaddComparison:
    if a.sum.shape != b.sum.shape or a.depth.shape != b.depth.shape:
        raise ValueError(f"grid shapes differ: {a.sum.shape} vs {b.sum.shape}")
    diff = np.abs(a.sum.astype(np.float64) - b.sum.astype(np.float64))
    return CoaddComparison(float(diff.max()) if diff.size else 0.0, bool(np.array_equal(a.depth, b.depth)))


def _bilinear(tile: ImageTile, sx: np.ndarray, sy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``tile`` at pixel coordinates; returns (values float64, valid mask)."""
    fx = sx - 0.5
    fy = sy - 0.5
    ix = np.floor(fx)
    iy = np.floor(fy)
    tx = fx - ix
    ty = fy - iy
    up_x = tx > 1.0 - SNAP_EPS
    up_y = ty > 1.0 - SNAP_EPS
    ix[up_x] += 1
    iy[up_y] += 1
    tx[up_x | (tx < SNAP_EPS)] = 0.0
    ty[up_y | (ty < SNAP_EPS)] = 0.0
    ix = ix.astype(np.int64)
    iy = iy.astype(np.int64)
    ix1 = ix + (tx > 0)
    iy1 = iy + (ty > 0)
    h, w = tile.pixels.shape
    valid = (ix >= 0) & (iy >= 0) & (ix1 < w) & (iy1 < h)
    cx0, cx1 = np.clip(ix, 0, w - 1), np.clip(ix1, 0, w - 1)
    cy0, cy1 = np.clip(iy, 0, h - 1), np.clip(iy1, 0, h - 1)
    p = tile.pixels.astype(np.float64)
    vals = (
        p[cy0, cx0] * (1.0 - tx) * (1.0 - ty)
        + p[cy0, cx1] * tx * (1.0 - ty)
        + p[cy1, cx0] * (1.0 - tx) * ty
        + p[cy1, cx1] * tx * ty
    )
    return vals, valid


def target_rect(overlap: SkyBounds, wcs: Wcs) -> tuple[int, int, int, int]:
    """Pixel rectangle (x0, y0, x1, y1) of ``wcs`` enclosing ``overlap``, one pixel of slack."""
    ras, decs = edge_samples(overlap)
    xs, ys = wcs.sky_to_pixel(ras, decs)
    x0 = max(0, math.floor(xs.min()) - 1)
    y0 = max(0, math.floor(ys.min()) - 1)
    x1 = min(wcs.width, math.ceil(xs.max()) + 1)
    y1 = min(wcs.height, math.ceil(ys.max()) + 1)
    return x0, y0, max(x0, x1), max(y0, y1)


def project_record(record: ImageRecord, query: Query, wcs: Wcs) -> ProjectedTile | None:
    """Resample ``record`` onto ``query``'s grid; None if band or bounds exclude it."""
    if record.meta.band != query.band:
        return None
    overlap = bounds_intersect(query.bounds, record.meta.bounds)
    if overlap is None:
        return None
    x0, y0, x1, y1 = target_rect(overlap, wcs)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    ra, dec = wcs.pixel_to_sky(xs + 0.5, ys + 0.5)
    inside = overlap.contains(ra, dec, half_open=True)
    values = np.zeros(xs.shape, dtype=np.float32)
    coverage = np.zeros(xs.shape, dtype=np.uint8)
    if inside.any():
        sx, sy = record.tile.wcs.sky_to_pixel(ra[inside], dec[inside])
        vals, valid = _bilinear(record.tile, sx, sy)
        cov = np.zeros(inside.sum(), dtype=np.uint8)
        cov[valid] = 1
        coverage[inside] = cov
        vals = np.where(valid, vals, 0.0)
        values[inside] = vals.astype(np.float32)
    return ProjectedTile(query.id, record.key, x0, y0, values, coverage)


def map_fn(record: ImageRecord, queries: Sequence[Query], grids: dict[str, Wcs] | None = None) -> list[ProjectedTile]:
    """Project one record against every query; emits one tile per matching query."""
    out = []
    for q in queries:
        wcs = grids[q.id] if grids is not None and q.id in grids else make_target_wcs(q)
        tile = project_record(record, q, wcs)
        if tile is not None:
            out.append(tile)
    return out


def accumulate(query: Query, wcs: Wcs, tiles: Iterable[ProjectedTile]) -> CoaddResult:
    total = np.zeros((wcs.height, wcs.width), dtype=np.float64)
    depth = np.zeros((wcs.height, wcs.width), dtype=np.uint32)
    ordered = sorted(tiles, key=lambda t: t.key)
    for t in ordered:
        if t.query_id != query.id:
            raise ValueError(f"tile for query {t.query_id!r} sent to reducer of {query.id!r}")
        if t.origin_x < 0 or t.origin_y < 0 or t.origin_x + t.width > wcs.width or t.origin_y + t.height > wcs.height:
            raise ValueError(f"tile {t.key} at ({t.origin_x}, {t.origin_y}) lies outside the query grid")
        window = (slice(t.origin_y, t.origin_y + t.height), slice(t.origin_x, t.origin_x + t.width))
        total[window] += t.values
        depth[window] += t.coverage
    return CoaddResult(wcs, total.astype(np.float32), depth, len(ordered))


def reduce_fn(
    query: Query, tiles: Iterable[ProjectedTile], wcs: Wcs | None = None, out_path: str | os.PathLike | None = None
) -> CoaddResult:
    """Stack every projected tile of ``query``; optionally persist sum and depth."""
    result = accumulate(query, wcs or make_target_wcs(query), tiles)
    if out_path is not None:
        result.save(out_path)
    return result


def serial_coadd(records: Iterable[ImageRecord], query: Query) -> CoaddResult:
    """Single-threaded reference: filter, intersect, project, accumulate."""
    wcs = make_target_wcs(query)
    projected = []
    for rec in sorted(records, key=lambda r: r.key):
        if rec.meta.band != query.band:
            continue
        if bounds_intersect(query.bounds, rec.meta.bounds) is None:
            continue
        projected.append(project_record(rec, query, wcs))
    return accumulate(query, wcs, projected)
