"""scikit-learn style facade: ``fit`` ingests records, ``transform`` coadds queries."""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .coadd import CoaddResult, Query, parse_bounds
from .dataset import Database
from .engine import EngineConfig, InputStrategy, run_job
from .geometry import SkyBounds
from .image import N_STRIPS, CameraLayout, ImageRecord
from .seqfile import DEFAULT_BLOCK_SIZE


def check_records(records: Iterable[ImageRecord]) -> list[ImageRecord]:
    """Validate an input record collection and return it as a key-sorted list."""
    if isinstance(records, ImageRecord):
        raise TypeError("expected a collection of ImageRecord, got a single record")
    out = list(records)
    if not out:
        raise ValueError("at least one record is required")
    bad = [type(r).__name__ for r in out if not isinstance(r, ImageRecord)]
    if bad:
        raise TypeError(f"expected ImageRecord items, got {sorted(set(bad))}")
    keys = [r.key for r in out]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate record keys")
    return sorted(out, key=lambda r: r.key)


def infer_layout(records: Sequence[ImageRecord]) -> CameraLayout:
    decs: dict[int, tuple[float, float]] = {}
    for r in records:
        iv = (r.meta.bounds.dec_min, r.meta.bounds.dec_max)
        if decs.setdefault(r.meta.strip, iv) != iv:
            raise ValueError(f"strip {r.meta.strip} has inconsistent declination bounds")
    missing = sorted(set(range(1, N_STRIPS + 1)) - set(decs))
    if missing:
        raise ValueError(f"records do not cover strips {missing}; pass layout= explicitly")
    return CameraLayout(tuple(decs[s] for s in range(1, N_STRIPS + 1)))


def check_queries(queries: Any) -> list[Query]:
    """Coerce queries given as ``Query``, mappings, or (id, band, bounds, scale) tuples."""
    if isinstance(queries, (Query, Mapping)):
        queries = [queries]
    out = []
    for q in queries:
        if isinstance(q, Query):
            out.append(q)
            continue
        if isinstance(q, Mapping):
            q = (q["id"], q["band"], q["bounds"], q["pixel_scale"])
        qid, band, bounds, scale = q
        if isinstance(bounds, str):
            bounds = parse_bounds(bounds)
        elif not isinstance(bounds, SkyBounds):
            bounds = SkyBounds.from_ranges(*bounds)
        out.append(Query(str(qid), band, bounds, float(scale)))
    if not out:
        raise ValueError("at least one query is required")
    return out


class MapReduceCoadder(BaseEstimator):
    """Coadd images through one input strategy of the map/reduce engine.

    ``fit`` lays the records out on disk in the form ``strategy`` reads (raw
    tree, containers, catalog). ``transform`` runs the queries and returns
    one :class:`CoaddResult` per query; the last run's report and plan are
    kept on ``report_`` and ``plan_``.
    """

    def __init__(
        self,
        strategy: str = "catalog-structured",
        slots: int = 4,
        block_size: int = DEFAULT_BLOCK_SIZE,
        n_files: int = 8,
        seed: int = 0,
        split_rpc_latency: float = 0.0,
        mapper_startup_cost: float = 0.0,
        clock: str = "real",
        work_dir: str | None = None,
        layout: CameraLayout | None = None,
    ):
        self.strategy = strategy
        self.slots = slots
        self.block_size = block_size
        self.n_files = n_files
        self.seed = seed
        self.split_rpc_latency = split_rpc_latency
        self.mapper_startup_cost = mapper_startup_cost
        self.clock = clock
        self.work_dir = work_dir
        self.layout = layout

    def _engine_config(self) -> EngineConfig:
        return EngineConfig(self.slots, self.block_size, self.split_rpc_latency, self.mapper_startup_cost, self.clock)

    def fit(self, X: Iterable[ImageRecord], y: None = None) -> "MapReduceCoadder":
        strategy = InputStrategy(self.strategy)
        self._engine_config()
        records = check_records(X)
        layout = self.layout if self.layout is not None else infer_layout(records)
        root = Path(self.work_dir) if self.work_dir is not None else Path(tempfile.mkdtemp(prefix="mrcoadd-"))
        db = Database(root, layout)
        if strategy.is_raw:
            db.write_raw(records)
        else:
            policy = strategy.policy
            db.pack(records, policy, self.n_files if policy == "unstructured" else None, self.seed)
            if strategy.uses_catalog:
                db.build_catalog(policy, self.block_size)
        self.database_ = db
        self.work_dir_ = root
        self.n_records_ = len(records)
        return self

    def transform(self, queries: Any) -> list[CoaddResult]:
        check_is_fitted(self, "database_")
        qs = check_queries(queries)
        results, report, plan = run_job(self.strategy, qs, self.database_, self._engine_config())
        self.report_ = report
        self.plan_ = plan
        return [results[q.id] for q in qs]

    predict = transform
