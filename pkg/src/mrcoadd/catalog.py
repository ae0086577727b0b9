"""Prefiltering: glob patterns over the raw tree, and an exact metadata catalog.

Globs select on band and strip only, so they admit records that miss the
query in RA. The catalog stores every record's band and bounds next to its
split and answers queries with exactly the contributing records.

CAT1 layout (little-endian)::

    "CAT1"  u16 version  u64 count
    count x (u32 run, u32 rerun, u8 strip, u8 band, u32 field, 4 x f64 bounds,
             u16 id_len, id utf-8, u64 offset, u64 length)
"""

from __future__ import annotations

import fnmatch
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .coadd import Query
from .errors import BadMagicError, FormatError, TruncatedError, VersionMismatchError
from .geometry import BANDS, Band, SkyBounds, bounds_intersect, strips_overlapping
from .image import CameraLayout, ImageMeta, decode_record
from .seqfile import DEFAULT_BLOCK_SIZE, FileSplit, SeqStore, parse_structured_id

CAT_MAGIC = b"CAT1"
CAT_VERSION = 1

_HEAD = struct.Struct("<4sHQ")
_FIXED = struct.Struct("<IIBBI4d")
_U16 = struct.Struct("<H")
_OFFLEN = struct.Struct("<QQ")


class GlobPattern:
    """A path pattern matched one ``/``-separated segment at a time.

    ``*`` matches any run of characters within a segment and ``[abc]`` one
    character from a class.
    """

    def __init__(self, pattern: str):
        self.pattern = pattern
        self.segments = pattern.split("/")
        for seg in self.segments:
            _check_classes(seg, pattern)

    def match(self, path: str | os.PathLike) -> bool:
        parts = str(path).split("/")
        if len(parts) != len(self.segments):
            return False
        return all(fnmatch.fnmatchcase(p, s) for p, s in zip(parts, self.segments))

    def __str__(self) -> str:
        return self.pattern

    def __repr__(self) -> str:
        return f"GlobPattern({self.pattern!r})"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, GlobPattern) and other.pattern == self.pattern

    def __hash__(self) -> int:
        return hash(self.pattern)


def _check_classes(segment: str, pattern: str) -> None:
    i = 0
    while i < len(segment):
        if segment[i] == "[":
            close = segment.find("]", i + 2)
            if close < 0:
                raise ValueError(f"unclosed character class in glob {pattern!r}")
            i = close
        elif segment[i] == "]":
            raise ValueError(f"unmatched ']' in glob {pattern!r}")
        i += 1


def glob_match(path: str | os.PathLike, pattern: GlobPattern | str) -> bool:
    if not isinstance(pattern, GlobPattern):
        pattern = GlobPattern(pattern)
    return pattern.match(path)


def build_glob(query: Query, layout: CameraLayout, root: str | os.PathLike = "ROOT") -> GlobPattern:
    strips = sorted(strips_overlapping(query.bounds, layout))
    if not strips:
        raise ValueError(f"query {query.id!r} lies outside the stripe")
    cls = "".join(str(s) for s in strips)
    band = query.band.value
    root = str(root).rstrip("/")
    return GlobPattern(f"{root}/*/*/corr/[{cls}]/fpC-*-[{band}][{cls}]-*.fit")


def prefilter_paths(root: str | os.PathLike, pattern: GlobPattern | str) -> list[Path]:
    """Every file under ``root`` matching ``pattern``, sorted."""
    if not isinstance(pattern, GlobPattern):
        pattern = GlobPattern(pattern)
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            if pattern.match(path):
                found.append(Path(path))
    return found


def list_raw_files(root: str | os.PathLike) -> list[Path]:
    return sorted(p for p in Path(root).rglob("*.fit") if p.is_file())


def structured_filter(queries: Sequence[Query], layout: CameraLayout) -> Callable[[str], bool]:
    """Predicate on container ids keeping the (band, strip) pairs any query can touch."""
    wanted = {(q.band, s) for q in queries for s in strips_overlapping(q.bounds, layout)}

    def keep(seqfile_id: str) -> bool:
        parsed = parse_structured_id(seqfile_id)
        return parsed is not None and parsed in wanted

    return keep


@dataclass(frozen=True)
class CatalogEntry:
    meta: ImageMeta
    split: FileSplit


def _sort_key(e: CatalogEntry):
    return (e.meta.band.index, e.meta.strip, e.meta.bounds.ra_min, e.meta.key)


class Catalog:
    """Records' band, bounds and container location, ordered by (band, strip, ra_min, key)."""

    def __init__(self, entries: Iterable[CatalogEntry], block_size: int = DEFAULT_BLOCK_SIZE):
        self.block_size = block_size
        self.entries: tuple[CatalogEntry, ...] = tuple(sorted(entries, key=_sort_key))
        keys = [e.meta.key for e in self.entries]
        if len(set(keys)) != len(keys):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise ValueError(f"duplicate catalog keys: {dupes[:5]}")
        self._partitions: dict[tuple[Band, int], list[CatalogEntry]] = {}
        for e in self.entries:
            self._partitions.setdefault((e.meta.band, e.meta.strip), []).append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Catalog) and self.entries == other.entries

    def partition(self, band: Band, strip: int) -> list[CatalogEntry]:
        return self._partitions.get((band, strip), [])

    # persistence -----------------------------------------------------

    def to_bytes(self) -> bytes:
        parts = [_HEAD.pack(CAT_MAGIC, CAT_VERSION, len(self.entries))]
        for e in self.entries:
            m, b, s = e.meta, e.meta.bounds, e.split
            sid = s.seqfile_id.encode("utf-8")
            parts += [
                _FIXED.pack(m.run, m.rerun, m.strip, m.band.index, m.field, b.ra_min, b.ra_max, b.dec_min, b.dec_max),
                _U16.pack(len(sid)),
                sid,
                _OFFLEN.pack(s.offset, s.length),
            ]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes, block_size: int = DEFAULT_BLOCK_SIZE) -> "Catalog":
        if len(buf) < 4:
            raise TruncatedError("catalog shorter than its magic")
        if buf[:4] != CAT_MAGIC:
            raise BadMagicError(f"bad magic {buf[:4]!r}, expected {CAT_MAGIC!r}")
        if len(buf) < _HEAD.size:
            raise TruncatedError("catalog header truncated")
        _, version, count = _HEAD.unpack_from(buf)
        if version != CAT_VERSION:
            raise VersionMismatchError(f"catalog version {version}, reader supports {CAT_VERSION}")
        pos = _HEAD.size
        entries = []
        try:
            for _ in range(count):
                run, rerun, strip, band, fld, r0, r1, d0, d1 = _FIXED.unpack_from(buf, pos)
                pos += _FIXED.size
                (n,) = _U16.unpack_from(buf, pos)
                pos += _U16.size
                if pos + n > len(buf):
                    raise TruncatedError("catalog record truncated")
                sid = buf[pos : pos + n].decode("utf-8")
                pos += n
                offset, length = _OFFLEN.unpack_from(buf, pos)
                pos += _OFFLEN.size
                if band >= len(BANDS):
                    raise FormatError(f"band index {band} out of range")
                meta = ImageMeta(run, rerun, strip, BANDS[band], fld, SkyBounds(r0, r1, d0, d1))
                entries.append(CatalogEntry(meta, FileSplit(sid, offset, length, meta.key, offset // block_size)))
        except struct.error:
            raise TruncatedError("catalog record truncated") from None
        if pos != len(buf):
            raise FormatError(f"{len(buf) - pos} trailing bytes after catalog")
        return cls(entries, block_size)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike, block_size: int = DEFAULT_BLOCK_SIZE) -> "Catalog":
        return cls.from_bytes(Path(path).read_bytes(), block_size)


def build_catalog(store: SeqStore, block_size: int = DEFAULT_BLOCK_SIZE) -> Catalog:
    """Index every record of every container in ``store``."""
    entries = []
    for seq in store.containers():
        for e in seq.entries:
            split = FileSplit(seq.id, e.offset, e.length, e.key, e.offset // block_size)
            meta = decode_record(store.read_bytes(split)).meta
            if meta.key != e.key:
                raise FormatError(f"container key {e.key!r} holds record {meta.key!r}")
            entries.append(CatalogEntry(meta, split))
    return Catalog(entries, block_size)


def query_catalog(catalog: Catalog, query: Query, layout: CameraLayout | None = None,
                  block_size: int | None = None) -> list[FileSplit]:
    """Splits of exactly the records with the query's band whose bounds overlap it, sorted by key.

    With ``layout`` given, only the (band, strip) partitions the query's
    declination range touches are scanned.
    """
    if layout is not None:
        candidates = [e for s in sorted(strips_overlapping(query.bounds, layout))
                      for e in catalog.partition(query.band, s)]
    else:
        candidates = [e for e in catalog.entries if e.meta.band == query.band]
    hits = [e.split for e in candidates if bounds_intersect(e.meta.bounds, query.bounds) is not None]
    if block_size is not None and block_size != catalog.block_size:
        hits = [replace(s, block_id=s.offset // block_size) for s in hits]
    return sorted(hits, key=lambda s: s.key)
