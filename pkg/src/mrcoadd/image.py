"""Image records, the CDF1 raster codec, and a synthetic drift-scan survey.

The generator mimics an SDSS Stripe 82 window: six abutting declination
strips, five bands, runs revisiting identical field footprints. Footprints
tile the RA range exactly, so every sky point in the stripe is covered by
exactly ``n_runs`` exposures per band.
"""

from __future__ import annotations

import math
import os
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import BadMagicError, FormatError, TruncatedError, VersionMismatchError
from .geometry import BANDS, Band, SkyBounds, Wcs, _wrap, wcs_for_bounds

N_STRIPS = 6

RASTER_MAGIC = b"CDF1"
RASTER_VERSION = 1
FLAG_DEPTH = 0x01
FLAG_META = 0x02  # record identity block after the planes (raw files, container payloads)

_HEADER = struct.Struct("<4sHII5dB")
_META = struct.Struct("<IIBBI4d")


@dataclass(frozen=True)
class CameraLayout:
    """Six abutting declination strips shared by all five bands."""

    strip_decs: tuple[tuple[float, float], ...]
    bands: tuple[Band, ...] = BANDS

    @classmethod
    def equal_strips(cls, dec_min: float = -1.25, dec_max: float = 1.25) -> "CameraLayout":
        if not dec_max > dec_min:
            raise ValueError("stripe dec range is empty")
        step = (dec_max - dec_min) / N_STRIPS
        edges = [dec_min + k * step for k in range(N_STRIPS)] + [dec_max]
        return cls(tuple((edges[k], edges[k + 1]) for k in range(N_STRIPS)))

    @property
    def dec_range(self) -> tuple[float, float]:
        return self.strip_decs[0][0], self.strip_decs[-1][1]

    def strip_bounds(self, strip: int, ra_min: float, ra_max: float) -> SkyBounds:
        lo, hi = self.strip_decs[strip - 1]
        return SkyBounds(ra_min, ra_max, lo, hi)


@dataclass(frozen=True)
class ImageMeta:
    run: int
    rerun: int
    strip: int
    band: Band
    field: int
    bounds: SkyBounds

    @property
    def key(self) -> str:
        return record_key(self.run, self.band, self.strip, self.field)


def record_key(run: int, band: Band | str, strip: int, field: int) -> str:
    return "fpC-%06d-%c%d-%04d" % (run, Band.parse(band).value, strip, field)


@dataclass(eq=False)
class ImageTile:
    """A float32 pixel raster, shape (height, width), with its projection."""

    wcs: Wcs
    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float32)
        if self.pixels.shape != (self.wcs.height, self.wcs.width):
            raise ValueError(
                f"pixel grid {self.pixels.shape} does not match wcs {self.wcs.height}x{self.wcs.width}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("tile contains non-finite pixels")

    @property
    def width(self) -> int:
        return self.wcs.width

    @property
    def height(self) -> int:
        return self.wcs.height

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageTile):
            return NotImplemented
        return self.wcs == other.wcs and self.pixels.tobytes() == other.pixels.tobytes()


@dataclass(eq=False)
class ImageRecord:
    meta: ImageMeta
    tile: ImageTile

    @property
    def key(self) -> str:
        return self.meta.key

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageRecord):
            return NotImplemented
        return self.meta == other.meta and self.tile == other.tile


# --------------------------------------------------------------------------
# Raster codec


def encode_raster(tile: ImageTile, depth: np.ndarray | None = None, meta: ImageMeta | None = None) -> bytes:
    w = tile.wcs
    flags = (FLAG_DEPTH if depth is not None else 0) | (FLAG_META if meta is not None else 0)
    parts = [
        _HEADER.pack(RASTER_MAGIC, RASTER_VERSION, w.width, w.height,
                     w.center_ra, w.center_dec, w.pixel_scale, w.ref_px_x, w.ref_px_y, flags),
        tile.pixels.astype("<f4", copy=False).tobytes(),
    ]
    if depth is not None:
        depth = np.asarray(depth)
        if depth.shape != tile.pixels.shape:
            raise ValueError(f"depth plane {depth.shape} does not match tile {tile.pixels.shape}")
        if depth.dtype.kind not in "ui" or (depth.size and depth.min() < 0):
            raise ValueError("depth plane must hold non-negative integers")
        parts.append(depth.astype("<u4").tobytes())
    if meta is not None:
        b = meta.bounds
        parts.append(_META.pack(meta.run, meta.rerun, meta.strip, meta.band.index, meta.field,
                                b.ra_min, b.ra_max, b.dec_min, b.dec_max))
    return b"".join(parts)


def decode_raster(buf: bytes) -> tuple[ImageTile, np.ndarray | None, ImageMeta | None]:
    """Inverse of :func:`encode_raster`."""
    if len(buf) < 4:
        raise TruncatedError("raster shorter than its magic")
    if buf[:4] != RASTER_MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {RASTER_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedError("raster header truncated")
    _, version, width, height, cra, cdec, scale, rx, ry, flags = _HEADER.unpack_from(buf)
    if version != RASTER_VERSION:
        raise VersionMismatchError(f"raster version {version}, reader supports {RASTER_VERSION}")
    npix = width * height
    need = _HEADER.size + 4 * npix
    if flags & FLAG_DEPTH:
        need += 4 * npix
    if flags & FLAG_META:
        need += _META.size
    if len(buf) < need:
        raise TruncatedError(f"raster payload truncated: {len(buf)} of {need} bytes")
    if len(buf) > need:
        raise FormatError(f"{len(buf) - need} trailing bytes after raster payload")
    wcs = Wcs(cra, cdec, scale, rx, ry, width, height)
    pos = _HEADER.size
    pixels = np.frombuffer(buf, dtype="<f4", count=npix, offset=pos).reshape(height, width)
    pos += 4 * npix
    depth = None
    if flags & FLAG_DEPTH:
        depth = np.frombuffer(buf, dtype="<u4", count=npix, offset=pos).reshape(height, width).astype(np.uint32)
        pos += 4 * npix
    meta = None
    if flags & FLAG_META:
        run, rerun, strip, band, fld, r0, r1, d0, d1 = _META.unpack_from(buf, pos)
        if band >= len(BANDS):
            raise FormatError(f"band index {band} out of range")
        meta = ImageMeta(run, rerun, strip, BANDS[band], fld, SkyBounds(r0, r1, d0, d1))
    return ImageTile(wcs, pixels.astype(np.float32)), depth, meta


def write_raster(path: str | os.PathLike, tile: ImageTile, depth: np.ndarray | None = None) -> None:
    Path(path).write_bytes(encode_raster(tile, depth))


def read_raster(path: str | os.PathLike) -> tuple[ImageTile, np.ndarray | None]:
    tile, depth, _ = decode_raster(Path(path).read_bytes())
    return tile, depth


def encode_record(record: ImageRecord) -> bytes:
    return encode_raster(record.tile, meta=record.meta)


def decode_record(buf: bytes) -> ImageRecord:
    tile, _, meta = decode_raster(buf)
    if meta is None:
        raise FormatError("raster carries no record metadata")
    return ImageRecord(meta, tile)


def read_record_file(path: str | os.PathLike) -> ImageRecord:
    return decode_record(Path(path).read_bytes())


# --------------------------------------------------------------------------
# Synthetic survey


@dataclass(frozen=True)
class SurveyConfig:
    """Shape of a synthetic survey.

    ``bands`` narrows the bands generated (all five by default); tests that
    only need one band use it to keep memory small.
    """

    n_runs: int = 2
    fields_per_run: int = 3
    dec_min: float = -1.25
    dec_max: float = 1.25
    ra_min: float = 37.0
    ra_max: float = 40.0
    field_width: float = 1.0
    pixel_scale: float = 0.01
    noise_sigma: float = 1.0
    n_sources: int = 200
    source_flux: float = 50.0
    psf_sigma_px: float = 1.5
    seed: int = 42
    run_start: int = 5902
    rerun: int = 40
    field_start: int = 690
    bands: tuple[str, ...] = tuple(b.value for b in BANDS)

    def __post_init__(self) -> None:
        object.__setattr__(self, "bands", tuple(Band.parse(b).value for b in self.bands))
        if self.n_runs < 1 or self.fields_per_run < 1:
            raise ValueError("n_runs and fields_per_run must be >= 1")
        if not self.bands or len(set(self.bands)) != len(self.bands):
            raise ValueError("bands must be a non-empty list of distinct bands")
        if not self.dec_max > self.dec_min:
            raise ValueError("dec_max must exceed dec_min")
        if self.field_width <= 0 or self.pixel_scale <= 0:
            raise ValueError("field_width and pixel_scale must be > 0")
        if self.noise_sigma < 0 or self.n_sources < 0:
            raise ValueError("noise_sigma and n_sources must be >= 0")
        extent = (self.ra_max - self.ra_min) % 360.0 or 360.0
        if not math.isclose(self.fields_per_run * self.field_width, extent, rel_tol=0, abs_tol=1e-9):
            raise ValueError(
                f"field grid does not tile the RA range: {self.fields_per_run} x {self.field_width} "
                f"!= {extent}"
            )
        if extent > 90.0:
            raise ValueError("RA range wider than 90 degrees")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SurveyConfig":
        """Build from a parsed config table, naming the offending field on error."""
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for name, value in data.items():
            if name not in known:
                raise ValueError(f"unknown config field {name!r}")
            default = known[name].default
            try:
                if isinstance(default, bool):
                    kwargs[name] = bool(value)
                elif isinstance(default, int):
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError("expected an integer")
                    kwargs[name] = int(value)
                elif isinstance(default, float):
                    kwargs[name] = float(value)
                elif isinstance(default, tuple):
                    if isinstance(value, str):
                        value = [c for c in value.replace(",", "") if not c.isspace()]
                    kwargs[name] = tuple(str(v) for v in value)
                else:
                    kwargs[name] = value
            except (TypeError, ValueError) as exc:
                raise ValueError(f"config field {name!r}: {exc}") from None
        return cls(**kwargs)

    @property
    def layout(self) -> CameraLayout:
        return CameraLayout.equal_strips(self.dec_min, self.dec_max)

    @property
    def n_records(self) -> int:
        return self.n_runs * len(self.bands) * N_STRIPS * self.fields_per_run

    @property
    def stripe_bounds(self) -> SkyBounds:
        return SkyBounds.from_ranges(self.ra_min, self.ra_max, self.dec_min, self.dec_max)

    def field_ra_edges(self) -> list[float]:
        edges = [_wrap(self.ra_min + f * self.field_width) for f in range(self.fields_per_run)]
        return edges + [_wrap(self.ra_max)]


def _render_sources(
    ra: np.ndarray, dec: np.ndarray, bounds: SkyBounds, src_ra: np.ndarray, src_dec: np.ndarray,
    src_flux: np.ndarray, sigma_deg: float,
) -> np.ndarray:
    image = np.zeros(ra.shape, dtype=np.float64)
    if src_ra.size == 0:
        return image
    pad = 5.0 * sigma_deg
    near = (
        (np.mod(src_ra - bounds.ra_min + pad, 360.0) <= bounds.ra_width + 2 * pad)
        & (src_dec >= bounds.dec_min - pad)
        & (src_dec <= bounds.dec_max + pad)
    )
    cos_dec = np.cos(np.radians(dec))
    for sr, sd, sf in zip(src_ra[near], src_dec[near], src_flux[near]):
        dra = (np.mod(ra - sr + 180.0, 360.0) - 180.0) * cos_dec
        r2 = dra * dra + (dec - sd) ** 2
        image += sf * np.exp(-0.5 * r2 / sigma_deg**2)
    return image


def generate_survey(cfg: SurveyConfig) -> list[ImageRecord]:
    """Generate ``cfg.n_records`` exposures, deterministic in ``cfg.seed``.

    Each tile holds a fixed star field (one catalog drawn from the seed) plus
    i.i.d. Gaussian noise seeded per exposure, so any single record is
    reproducible without generating the others.
    """
    layout = cfg.layout
    bands = [Band.parse(b) for b in cfg.bands]
    ra_edges = cfg.field_ra_edges()
    extent = (cfg.ra_max - cfg.ra_min) % 360.0 or 360.0

    rng = np.random.default_rng(cfg.seed)
    src_ra = np.mod(cfg.ra_min + rng.uniform(0.0, extent, cfg.n_sources), 360.0)
    src_dec = rng.uniform(cfg.dec_min, cfg.dec_max, cfg.n_sources)
    base_flux = cfg.source_flux * rng.lognormal(0.0, 1.0, cfg.n_sources)
    colors = rng.uniform(0.3, 1.5, (len(BANDS), cfg.n_sources))
    sigma_deg = cfg.psf_sigma_px * cfg.pixel_scale

    footprints: dict[tuple[int, int], tuple[SkyBounds, Wcs, tuple[np.ndarray, np.ndarray]]] = {}
    for strip in range(1, N_STRIPS + 1):
        for f in range(cfg.fields_per_run):
            bounds = layout.strip_bounds(strip, ra_edges[f], ra_edges[f + 1])
            wcs = wcs_for_bounds(bounds, cfg.pixel_scale)
            footprints[strip, f] = (bounds, wcs, wcs.pixel_centers())

    signal: dict[tuple[Band, int, int], np.ndarray] = {}
    records = []
    for k in range(cfg.n_runs):
        run = cfg.run_start + k
        for band in bands:
            for strip in range(1, N_STRIPS + 1):
                for f in range(cfg.fields_per_run):
                    bounds, wcs, (ra, dec) = footprints[strip, f]
                    sig = signal.get((band, strip, f))
                    if sig is None:
                        sig = _render_sources(ra, dec, bounds, src_ra, src_dec,
                                              base_flux * colors[band.index], sigma_deg)
                        signal[band, strip, f] = sig
                    fld = cfg.field_start + f
                    noise_rng = np.random.default_rng([cfg.seed, run, band.index, strip, fld])
                    pixels = sig + noise_rng.normal(0.0, cfg.noise_sigma, sig.shape) if cfg.noise_sigma else sig
                    meta = ImageMeta(run, cfg.rerun, strip, band, fld, bounds)
                    records.append(ImageRecord(meta, ImageTile(wcs, pixels.astype(np.float32))))
    return records


# --------------------------------------------------------------------------
# Raw directory layout


def raw_path(root: str | os.PathLike, meta: ImageMeta) -> Path:
    return Path(root) / str(meta.run) / str(meta.rerun) / "corr" / str(meta.strip) / f"{meta.key}.fit"


def materialize_raw_layout(records: Iterable[ImageRecord], root: str | os.PathLike) -> list[Path]:
    """Write each record to ``root/run/rerun/corr/strip/<key>.fit``."""
    paths = []
    for rec in records:
        path = raw_path(root, rec.meta)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(encode_record(rec))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths


def sorted_by_key(records: Sequence[ImageRecord]) -> list[ImageRecord]:
    return sorted(records, key=lambda r: r.key)
