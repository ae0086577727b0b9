"""On-disk survey database: raw tree, both container packings, catalogs, manifest.

Directory layout::

    <root>/dataset.json             survey config (layout + generator knobs)
    <root>/manifest.csv             one row per record
    <root>/raw/<run>/<rerun>/corr/<strip>/<key>.fit
    <root>/seq-unstructured/*.seq
    <root>/seq-structured/*.seq
    <root>/catalog-unstructured.cat
    <root>/catalog-structured.cat
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import Catalog, build_catalog, list_raw_files
from .errors import MissingArtifactError
from .geometry import Band, SkyBounds
from .image import CameraLayout, ImageMeta, ImageRecord, SurveyConfig, materialize_raw_layout, raw_path, read_record_file
from .seqfile import DEFAULT_BLOCK_SIZE, SeqStore, SequenceFile, pack_structured, pack_unstructured

POLICIES = ("unstructured", "structured")
MANIFEST_FIELDS = ("key", "run", "rerun", "strip", "band", "field", "ra_min", "ra_max", "dec_min", "dec_max", "path")


class Database:
    def __init__(self, root: str | os.PathLike, layout: CameraLayout | None = None):
        self.root = Path(root)
        if layout is None:
            layout = self.load_config().layout
        self.layout = layout

    @property
    def config_path(self) -> Path:
        return self.root / "dataset.json"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.csv"

    @property
    def raw_dir(self) -> Path:
        return self.root / "raw"

    def container_dir(self, policy: str) -> Path:
        _check_policy(policy)
        return self.root / f"seq-{policy}"

    def catalog_path(self, policy: str) -> Path:
        _check_policy(policy)
        return self.root / f"catalog-{policy}.cat"

    # builders ---------------------------------------------------------

    @classmethod
    def create(cls, root: str | os.PathLike, cfg: SurveyConfig) -> "Database":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        (root / "dataset.json").write_text(json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n")
        return cls(root, cfg.layout)

    def load_config(self) -> SurveyConfig:
        if not self.config_path.exists():
            raise MissingArtifactError(f"{self.config_path} not found; run `mrcoadd generate` first")
        return SurveyConfig.from_mapping(json.loads(self.config_path.read_text()))

    def write_raw(self, records: Iterable[ImageRecord], provenance: str | None = None) -> list[Path]:
        records = sorted(records, key=lambda r: r.key)
        paths = materialize_raw_layout(records, self.raw_dir)
        write_manifest(self.manifest_path, records, self.raw_dir, provenance)
        return paths

    def read_raw(self) -> list[ImageRecord]:
        self.require_raw()
        return [read_record_file(p) for p in list_raw_files(self.raw_dir)]

    def pack(self, records: Sequence[ImageRecord], policy: str, n_files: int | None = None,
             seed: int = 0) -> list[SequenceFile]:
        out = self.container_dir(policy)
        if policy == "structured":
            if n_files is not None:
                raise ValueError("n_files applies only to unstructured packing")
            return pack_structured(records, out)
        return pack_unstructured(records, n_files or 8, seed, out)

    def build_catalog(self, policy: str, block_size: int = DEFAULT_BLOCK_SIZE) -> Catalog:
        catalog = build_catalog(self.store(policy), block_size)
        catalog.save(self.catalog_path(policy))
        return catalog

    # accessors --------------------------------------------------------

    def require_raw(self) -> None:
        if not self.raw_dir.is_dir():
            raise MissingArtifactError(f"raw tree {self.raw_dir} missing; run `mrcoadd generate`")

    def require_containers(self, policy: str) -> None:
        if not self.container_dir(policy).is_dir():
            raise MissingArtifactError(
                f"{policy} containers missing in {self.container_dir(policy)}; "
                f"run `mrcoadd pack --policy {policy} {self.root}`"
            )

    def require_catalog(self, policy: str) -> None:
        self.require_containers(policy)
        if not self.catalog_path(policy).exists():
            raise MissingArtifactError(
                f"catalog {self.catalog_path(policy)} missing; run `mrcoadd catalog --policy {policy} {self.root}`"
            )

    def store(self, policy: str) -> SeqStore:
        self.require_containers(policy)
        return SeqStore(self.container_dir(policy))

    def catalog(self, policy: str, block_size: int = DEFAULT_BLOCK_SIZE) -> Catalog:
        self.require_catalog(policy)
        return Catalog.load(self.catalog_path(policy), block_size)


def _check_policy(policy: str) -> None:
    if policy not in POLICIES:
        raise ValueError(f"unknown packing policy {policy!r}; expected one of {POLICIES}")


def write_manifest(path: str | os.PathLike, records: Iterable[ImageRecord], raw_root: str | os.PathLike,
                   provenance: str | None = None) -> None:
    raw_root = Path(raw_root)
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for rec in sorted(records, key=lambda r: r.key):
            m, b = rec.meta, rec.meta.bounds
            writer.writerow([m.key, m.run, m.rerun, m.strip, m.band.value, m.field,
                             repr(b.ra_min), repr(b.ra_max), repr(b.dec_min), repr(b.dec_max),
                             raw_path(raw_root, m).relative_to(raw_root).as_posix()])


def read_manifest(path: str | os.PathLike) -> list[ImageMeta]:
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        return [
            ImageMeta(int(r["run"]), int(r["rerun"]), int(r["strip"]), Band.parse(r["band"]), int(r["field"]),
                      SkyBounds(float(r["ra_min"]), float(r["ra_max"]), float(r["dec_min"]), float(r["dec_max"])))
            for r in rows
        ]
