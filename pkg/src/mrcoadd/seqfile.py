"""SEQ1: a concatenation of record blobs fronted by a key/offset index.

Layout (little-endian)::

    "SEQ1"  u16 version  u64 n_entries
    n_entries x (u32 key_len, key utf-8, u64 offset, u64 length)
    payload

Offsets are absolute file positions. The index sits in front so split
planning never touches the payload.
"""

from __future__ import annotations

import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    CorruptSplitError,
    FormatError,
    TruncatedError,
    UnknownContainerError,
    VersionMismatchError,
)
from .geometry import Band
from .image import ImageRecord, decode_record, encode_record

SEQ_MAGIC = b"SEQ1"
SEQ_VERSION = 1
SEQ_SUFFIX = ".seq"
DEFAULT_BLOCK_SIZE = 64 * 1024 * 1024

_HEAD = struct.Struct("<4sHQ")
_U32 = struct.Struct("<I")
_OFFLEN = struct.Struct("<QQ")


@dataclass(frozen=True)
class SeqEntry:
    key: str
    offset: int
    length: int


@dataclass(frozen=True)
class FileSplit:
    """Everything needed to fetch one record from a container."""

    seqfile_id: str
    offset: int
    length: int
    key: str
    block_id: int


@dataclass(frozen=True)
class SequenceFile:
    id: str
    path: Path
    entries: tuple[SeqEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def keys(self) -> list[str]:
        return [e.key for e in self.entries]


def structured_id(band: Band | str, strip: int) -> str:
    return f"seq-{Band.parse(band).value}{strip}"


def parse_structured_id(seqfile_id: str) -> tuple[Band, int] | None:
    """Inverse of :func:`structured_id`; None for ids that are not structured."""
    if len(seqfile_id) != 6 or not seqfile_id.startswith("seq-"):
        return None
    try:
        return Band.parse(seqfile_id[4]), int(seqfile_id[5])
    except ValueError:
        return None


def encode_index(entries: Sequence[SeqEntry]) -> bytes:
    parts = [_HEAD.pack(SEQ_MAGIC, SEQ_VERSION, len(entries))]
    for e in entries:
        kb = e.key.encode("utf-8")
        parts += [_U32.pack(len(kb)), kb, _OFFLEN.pack(e.offset, e.length)]
    return b"".join(parts)


def index_size(keys: Iterable[str]) -> int:
    return _HEAD.size + sum(_U32.size + len(k.encode("utf-8")) + _OFFLEN.size for k in keys)


def write_container(path: str | os.PathLike, blobs: dict[str, bytes]) -> SequenceFile:
    """Write ``blobs`` (key -> bytes) as one container; entries land in key order."""
    path = Path(path)
    keys = sorted(blobs)
    pos = index_size(keys)
    entries = []
    for k in keys:
        entries.append(SeqEntry(k, pos, len(blobs[k])))
        pos += len(blobs[k])
    with open(path, "wb") as fh:
        fh.write(encode_index(entries))
        for k in keys:
            fh.write(blobs[k])
    return SequenceFile(path.name[: -len(SEQ_SUFFIX)] if path.name.endswith(SEQ_SUFFIX) else path.stem,
                        path, tuple(entries))


def read_index(fh, file_size: int) -> tuple[SeqEntry, ...]:
    head = fh.read(_HEAD.size)
    if len(head) < 4:
        raise TruncatedError("container shorter than its magic")
    if head[:4] != SEQ_MAGIC:
        raise BadMagicError(f"bad magic {head[:4]!r}, expected {SEQ_MAGIC!r}")
    if len(head) < _HEAD.size:
        raise TruncatedError("container header truncated")
    _, version, count = _HEAD.unpack(head)
    if version != SEQ_VERSION:
        raise VersionMismatchError(f"container version {version}, reader supports {SEQ_VERSION}")
    entries = []
    for _ in range(count):
        raw = fh.read(_U32.size)
        if len(raw) < _U32.size:
            raise TruncatedError("container index truncated")
        (klen,) = _U32.unpack(raw)
        kb = fh.read(klen)
        ol = fh.read(_OFFLEN.size)
        if len(kb) < klen or len(ol) < _OFFLEN.size:
            raise TruncatedError("container index truncated")
        offset, length = _OFFLEN.unpack(ol)
        entries.append(SeqEntry(kb.decode("utf-8"), offset, length))
    index_end = fh.tell()
    prev_key, prev_end = None, index_end
    for e in entries:
        if prev_key is not None and e.key <= prev_key:
            raise FormatError(f"index keys not strictly sorted at {e.key!r}")
        if e.offset < prev_end:
            raise FormatError(f"entry {e.key!r} overlaps its predecessor or the index")
        if e.offset + e.length > file_size:
            raise TruncatedError(f"entry {e.key!r} runs past end of file")
        prev_key, prev_end = e.key, e.offset + e.length
    return tuple(entries)


def load_container(path: str | os.PathLike) -> SequenceFile:
    path = Path(path)
    with open(path, "rb") as fh:
        entries = read_index(fh, os.fstat(fh.fileno()).st_size)
    return SequenceFile(path.name[: -len(SEQ_SUFFIX)], path, entries)


class SeqStore:
    """A directory of containers with lazily loaded indices and I/O counters.

    ``opens`` counts index loads; ``seeks`` and ``reads`` count payload access.
    Containers are immutable once written, so the cached indices never go stale
    within a store's lifetime.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"container directory {self.root} does not exist")
        self._paths = {p.name[: -len(SEQ_SUFFIX)]: p for p in sorted(self.root.glob(f"*{SEQ_SUFFIX}"))}
        self._cache: dict[str, SequenceFile] = {}
        self._lookup: dict[str, dict[str, SeqEntry]] = {}
        self._lock = threading.Lock()
        self.opens = 0
        self.seeks = 0
        self.reads = 0

    @property
    def ids(self) -> list[str]:
        return list(self._paths)

    def path(self, seqfile_id: str) -> Path:
        try:
            return self._paths[seqfile_id]
        except KeyError:
            raise UnknownContainerError(f"unknown container {seqfile_id!r}") from None

    def container(self, seqfile_id: str) -> SequenceFile:
        with self._lock:
            seq = self._cache.get(seqfile_id)
            if seq is None:
                seq = load_container(self.path(seqfile_id))
                self.opens += 1
                self._cache[seqfile_id] = seq
                self._lookup[seqfile_id] = {e.key: e for e in seq.entries}
            return seq

    def containers(self, container_filter: Callable[[str], bool] | None = None) -> list[SequenceFile]:
        return [self.container(i) for i in self.ids if container_filter is None or container_filter(i)]

    def read_bytes(self, split: FileSplit) -> bytes:
        self.container(split.seqfile_id)
        entry = self._lookup[split.seqfile_id].get(split.key)
        if entry is None or entry.offset != split.offset or entry.length != split.length:
            raise CorruptSplitError(
                f"corrupt split: {split.key!r} @ {split.offset}+{split.length} not in {split.seqfile_id}"
            )
        with open(self._paths[split.seqfile_id], "rb") as fh:
            fh.seek(split.offset)
            data = fh.read(split.length)
        with self._lock:
            self.seeks += 1
            self.reads += 1
        if len(data) != split.length:
            raise TruncatedError(f"short read for {split.key!r}")
        return data

    def read_record(self, split: FileSplit) -> ImageRecord:
        return decode_record(self.read_bytes(split))

    def reset_counters(self) -> None:
        with self._lock:
            self.opens = self.seeks = self.reads = 0


def read_record(split: FileSplit, store: SeqStore) -> ImageRecord:
    return store.read_record(split)


def _prepare_dir(out_dir: str | os.PathLike) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob(f"*{SEQ_SUFFIX}"):
        stale.unlink()
    return out


def pack_unstructured(
    records: Sequence[ImageRecord], n_files: int, seed: int, out_dir: str | os.PathLike
) -> list[SequenceFile]:
    """Scatter records over ``n_files`` containers by a seeded uniform draw.

    The draw is made over records in key order, so the assignment does not
    depend on the order ``records`` arrive in. Empty containers are legal.
    """
    if n_files < 1:
        raise ValueError("n_files must be >= 1")
    out = _prepare_dir(out_dir)
    ordered = sorted(records, key=lambda r: r.key)
    if len({r.key for r in ordered}) != len(ordered):
        raise ValueError("duplicate record keys")
    slots = np.random.default_rng(seed).integers(0, n_files, size=len(ordered))
    groups: list[dict[str, bytes]] = [{} for _ in range(n_files)]
    for rec, slot in zip(ordered, slots):
        groups[slot][rec.key] = encode_record(rec)
    width = max(4, len(str(n_files - 1)))
    return [write_container(out / f"seq-u{i:0{width}d}{SEQ_SUFFIX}", g) for i, g in enumerate(groups)]


def pack_structured(records: Sequence[ImageRecord], out_dir: str | os.PathLike) -> list[SequenceFile]:
    """One container per occupied (band, strip) pair, named ``seq-<band><strip>``."""
    out = _prepare_dir(out_dir)
    groups: dict[str, dict[str, bytes]] = {}
    for rec in records:
        blobs = groups.setdefault(structured_id(rec.meta.band, rec.meta.strip), {})
        if rec.key in blobs:
            raise ValueError(f"duplicate record key {rec.key}")
        blobs[rec.key] = encode_record(rec)
    return [write_container(out / f"{cid}{SEQ_SUFFIX}", groups[cid]) for cid in sorted(groups)]


def splits_for(
    store: SeqStore,
    container_filter: Callable[[str], bool] | None = None,
    key_filter: Callable[[str], bool] | None = None,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> list[FileSplit]:
    """One split per entry of every container passing ``container_filter``.

    Containers rejected by ``container_filter`` are never opened.
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    out = []
    for seq in store.containers(container_filter):
        for e in seq.entries:
            if key_filter is None or key_filter(e.key):
                out.append(FileSplit(seq.id, e.offset, e.length, e.key, e.offset // block_size))
    return out
