"""Sky bounds, camera strip overlap and gnomonic (TAN) pixel mapping.

RA is stored in [0, 360). A bounds whose ``ra_min`` exceeds ``ra_max`` wraps
through 0. Pixel grids put RA increasing toward -x and Dec toward +y; pixel
``i`` spans ``[i, i + 1)`` so its center sits at ``i + 0.5``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import numpy as np

if TYPE_CHECKING:
    from .coadd import Query
    from .image import CameraLayout

# Slack for ceil() on grid sizes so 0.25 / 0.002 is 125, not 126.
_GRID_EPS = 1e-9


class Band(str, enum.Enum):
    u = "u"
    g = "g"
    r = "r"
    i = "i"
    z = "z"

    @property
    def index(self) -> int:
        return BANDS.index(self)

    @classmethod
    def parse(cls, value: "Band | str") -> "Band":
        if isinstance(value, Band):
            return value
        try:
            return cls(str(value).strip())
        except ValueError:
            raise ValueError(f"unknown band {value!r}; expected one of ugriz") from None


BANDS: tuple[Band, ...] = (Band.u, Band.g, Band.r, Band.i, Band.z)


def _wrap(ra: float) -> float:
    ra = math.fmod(ra, 360.0)
    if ra < 0.0:
        ra += 360.0
    # fmod of a tiny negative can round back up to exactly 360
    return 0.0 if ra >= 360.0 else ra


@dataclass(frozen=True)
class SkyBounds:
    """An RA/Dec rectangle in degrees; possibly wrapping in RA."""

    ra_min: float
    ra_max: float
    dec_min: float
    dec_max: float

    def __post_init__(self) -> None:
        vals = (self.ra_min, self.ra_max, self.dec_min, self.dec_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite bounds {vals}")
        if not (0.0 <= self.ra_min < 360.0 and 0.0 <= self.ra_max < 360.0):
            raise ValueError(f"RA must lie in [0, 360): {self.ra_min}, {self.ra_max}")
        if not (-90.0 <= self.dec_min < self.dec_max <= 90.0):
            raise ValueError(f"need -90 <= dec_min < dec_max <= 90: {self.dec_min}, {self.dec_max}")
        if self.ra_width <= 0.0:
            raise ValueError("zero-width RA interval; use None for empty bounds")

    @classmethod
    def from_ranges(cls, ra_min: float, ra_max: float, dec_min: float, dec_max: float) -> "SkyBounds":
        """Build bounds from possibly out-of-range RA values (e.g. -50 or 360)."""
        return cls(_wrap(ra_min), _wrap(ra_max), float(dec_min), float(dec_max))

    @property
    def ra_width(self) -> float:
        return (self.ra_max - self.ra_min) % 360.0

    @property
    def dec_height(self) -> float:
        return self.dec_max - self.dec_min

    @property
    def wraps(self) -> bool:
        return self.ra_min > self.ra_max

    @property
    def center(self) -> tuple[float, float]:
        return _wrap(self.ra_min + 0.5 * self.ra_width), 0.5 * (self.dec_min + self.dec_max)

    def contains(self, ra, dec, *, half_open: bool = False):
        """Point-membership test; vectorizes over numpy arrays.

        ``half_open`` excludes the upper RA and Dec edges so abutting bounds
        never both claim a point on their shared edge.
        """
        ra = np.asarray(ra, dtype=np.float64)
        dec = np.asarray(dec, dtype=np.float64)
        offset = np.mod(ra - self.ra_min, 360.0)
        if half_open:
            inside = (offset < self.ra_width) & (dec >= self.dec_min) & (dec < self.dec_max)
        else:
            inside = (offset <= self.ra_width) & (dec >= self.dec_min) & (dec <= self.dec_max)
        return inside if inside.ndim else bool(inside)


def _arc_pieces(b: SkyBounds) -> list[tuple[float, float]]:
    if b.ra_min < b.ra_max:
        return [(b.ra_min, b.ra_max)]
    pieces = [(b.ra_min, 360.0)]
    if b.ra_max > 0.0:
        pieces.append((0.0, b.ra_max))
    return pieces


def bounds_intersect(a: SkyBounds, b: SkyBounds) -> SkyBounds | None:
    """Return the rectangle common to ``a`` and ``b``; None when it has no area.

    Only comparisons pick the edges, so each edge of the result is an edge of
    ``a`` or ``b`` and results are exact. Two RA arcs whose widths sum past 360
    can overlap in two pieces; the wider piece is returned then.
    """
    dec_min = max(a.dec_min, b.dec_min)
    dec_max = min(a.dec_max, b.dec_max)
    if dec_max <= dec_min:
        return None
    # (ra_min, ra_max, width); width only ranks pieces, edges stay raw
    pieces = [
        (max(lo_a, lo_b), min(hi_a, hi_b), min(hi_a, hi_b) - max(lo_a, lo_b))
        for lo_a, hi_a in _arc_pieces(a)
        for lo_b, hi_b in _arc_pieces(b)
        if min(hi_a, hi_b) > max(lo_a, lo_b)
    ]
    if not pieces:
        return None
    # a piece ending at 360 and one starting at 0 are one arc across the seam
    tail = next((p for p in pieces if p[1] == 360.0), None)
    head = next((p for p in pieces if p[0] == 0.0), None)
    if tail is not None and head is not None and tail is not head:
        pieces = [p for p in pieces if p is not tail and p is not head]
        pieces.append((tail[0], head[1], tail[2] + head[2]))
    ra_min, ra_max, _ = max(pieces, key=lambda p: p[2])
    if ra_max == 360.0:
        ra_max = 0.0
    return SkyBounds(ra_min, ra_max, dec_min, dec_max)


def strips_overlapping(bounds: SkyBounds, layout: "CameraLayout") -> set[int]:
    """Strip ids (1-6) whose declination interval overlaps ``bounds`` with positive measure."""
    return {
        strip
        for strip, (lo, hi) in enumerate(layout.strip_decs, start=1)
        if min(hi, bounds.dec_max) > max(lo, bounds.dec_min)
    }


@dataclass(frozen=True)
class Wcs:
    """Gnomonic projection plus a pixel grid."""

    center_ra: float
    center_dec: float
    pixel_scale: float
    ref_px_x: float
    ref_px_y: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not self.pixel_scale > 0.0:
            raise ValueError(f"pixel_scale must be > 0, got {self.pixel_scale}")
        if self.width < 0 or self.height < 0:
            raise ValueError("negative grid size")

    def sky_to_pixel(self, ra, dec):
        """Project sky coordinates (degrees) to pixel coordinates.

        Raises ValueError for any point 90 degrees or more from the tangent point.
        """
        scalar = np.ndim(ra) == 0 and np.ndim(dec) == 0
        ra_r = np.radians(np.asarray(ra, dtype=np.float64))
        dec_r = np.radians(np.asarray(dec, dtype=np.float64))
        ra0 = math.radians(self.center_ra)
        dec0 = math.radians(self.center_dec)
        dra = ra_r - ra0
        cos_dec = np.cos(dec_r)
        cos_c = math.sin(dec0) * np.sin(dec_r) + math.cos(dec0) * cos_dec * np.cos(dra)
        if np.any(cos_c <= 0.0):
            raise ValueError("point is 90 degrees or more from the tangent point")
        xi = cos_dec * np.sin(dra) / cos_c
        eta = (math.cos(dec0) * np.sin(dec_r) - math.sin(dec0) * cos_dec * np.cos(dra)) / cos_c
        x = self.ref_px_x - np.degrees(xi) / self.pixel_scale
        y = self.ref_px_y + np.degrees(eta) / self.pixel_scale
        if scalar:
            return float(x), float(y)
        return x, y

    def pixel_to_sky(self, x, y):
        scalar = np.ndim(x) == 0 and np.ndim(y) == 0
        xi = np.radians((self.ref_px_x - np.asarray(x, dtype=np.float64)) * self.pixel_scale)
        eta = np.radians((np.asarray(y, dtype=np.float64) - self.ref_px_y) * self.pixel_scale)
        dec0 = math.radians(self.center_dec)
        den = math.cos(dec0) - eta * math.sin(dec0)
        ra = np.degrees(np.arctan2(xi, den)) + self.center_ra
        dec = np.degrees(np.arctan2(math.sin(dec0) + eta * math.cos(dec0), np.hypot(xi, den)))
        ra = np.mod(ra, 360.0)
        ra = np.where(ra >= 360.0, 0.0, ra)
        if scalar:
            return float(ra), float(dec)
        return ra, dec

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Sky coordinates of every pixel center, each shaped (height, width)."""
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        return self.pixel_to_sky(xs + 0.5, ys + 0.5)


def grid_size(extent_deg: float, pixel_scale: float) -> int:
    return max(1, math.ceil(extent_deg / pixel_scale - _GRID_EPS))


def wcs_for_bounds(bounds: SkyBounds, pixel_scale: float) -> Wcs:
    """Tangent-plane grid centered on ``bounds`` at ``pixel_scale`` degrees/pixel."""
    if not pixel_scale > 0.0:
        raise ValueError(f"pixel_scale must be > 0, got {pixel_scale}")
    if bounds.ra_width > 90.0 or bounds.dec_height > 90.0:
        raise ValueError("bounds wider than 90 degrees cannot be projected")
    ra_c, dec_c = bounds.center
    width = grid_size(bounds.ra_width, pixel_scale)
    height = grid_size(bounds.dec_height, pixel_scale)
    return Wcs(ra_c, dec_c, float(pixel_scale), width / 2.0, height / 2.0, width, height)


def make_target_wcs(query: "Query") -> Wcs:
    """Output grid for a coadd query."""
    if query.bounds is None:
        raise ValueError("query bounds are empty")
    return wcs_for_bounds(query.bounds, query.pixel_scale)


def edge_samples(bounds: SkyBounds, n: int = 17) -> tuple[np.ndarray, np.ndarray]:
    """Points spaced along the four edges of ``bounds``."""
    t = np.linspace(0.0, 1.0, n)
    ra_line = np.mod(bounds.ra_min + t * bounds.ra_width, 360.0)
    dec_line = bounds.dec_min + t * bounds.dec_height
    ras = np.concatenate([ra_line, ra_line, np.full(n, bounds.ra_min), np.full(n, bounds.ra_min + bounds.ra_width)])
    decs = np.concatenate([np.full(n, bounds.dec_min), np.full(n, bounds.dec_max), dec_line, dec_line])
    return np.mod(ras, 360.0), decs


def union_strips(bounds_list: Iterable[SkyBounds], layout: "CameraLayout") -> set[int]:
    out: set[int] = set()
    for b in bounds_list:
        out |= strips_overlapping(b, layout)
    return out
