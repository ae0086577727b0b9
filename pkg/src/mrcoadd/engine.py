"""Split planning, block-grouped map tasks, per-query shuffle and reduce.

Locating an input file costs ``split_rpc_latency`` seconds, charged serially
once per raw file or once per container opened. Each mapper object costs
``mapper_startup_cost`` once. With ``clock="real"`` charges are slept; with
``clock="simulated"`` they are added to the reported stage times without
sleeping, which lets benchmarks use calibrated latencies in seconds rather
than hours.
"""

from __future__ import annotations

import csv
import enum
import math
import os
import threading
import time
from collections import defaultdict
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

from .catalog import build_glob, list_raw_files, prefilter_paths, query_catalog, structured_filter
from .coadd import CoaddResult, ProjectedTile, Query, map_fn, reduce_fn
from .dataset import Database
from .errors import MapperError
from .geometry import Wcs, bounds_intersect, make_target_wcs
from .image import ImageRecord, read_record_file
from .seqfile import DEFAULT_BLOCK_SIZE, FileSplit, SeqStore, splits_for

STAGES = ("driver_setup", "construct_file_splits", "map", "shuffle", "reduce", "total")
COUNTERS = (
    "input_records",
    "mapper_objects",
    "records_discarded_band",
    "records_discarded_bounds",
    "records_contributing",
    "peak_concurrent_mappers",
)
# Above this many workers a simulated run gains nothing from more threads.
_SIMULATED_THREAD_CAP = 32


class InputStrategy(str, enum.Enum):
    RAW_UNFILTERED = "raw-unfiltered"
    RAW_PREFILTERED = "raw-prefiltered"
    SEQ_UNSTRUCTURED = "seq-unstructured"
    SEQ_STRUCTURED_PREFILTERED = "seq-structured"
    CATALOG_UNSTRUCTURED = "catalog-unstructured"
    CATALOG_STRUCTURED = "catalog-structured"

    @property
    def is_raw(self) -> bool:
        return self in (InputStrategy.RAW_UNFILTERED, InputStrategy.RAW_PREFILTERED)

    @property
    def policy(self) -> str | None:
        if self in (InputStrategy.SEQ_UNSTRUCTURED, InputStrategy.CATALOG_UNSTRUCTURED):
            return "unstructured"
        if self in (InputStrategy.SEQ_STRUCTURED_PREFILTERED, InputStrategy.CATALOG_STRUCTURED):
            return "structured"
        return None

    @property
    def uses_catalog(self) -> bool:
        return self in (InputStrategy.CATALOG_UNSTRUCTURED, InputStrategy.CATALOG_STRUCTURED)


STRATEGIES = tuple(InputStrategy)


@dataclass(frozen=True)
class EngineConfig:
    slots: int = 800
    block_size: int = DEFAULT_BLOCK_SIZE
    split_rpc_latency: float = 0.0
    mapper_startup_cost: float = 0.0
    clock: str = "real"

    def __post_init__(self) -> None:
        if self.slots < 1:
            raise ValueError("slots must be >= 1")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.split_rpc_latency < 0 or self.mapper_startup_cost < 0:
            raise ValueError("latencies must be non-negative")
        if self.clock not in ("real", "simulated"):
            raise ValueError(f"clock must be 'real' or 'simulated', got {self.clock!r}")


class CostClock:
    """Charges simulated costs either by sleeping or by bookkeeping."""

    def __init__(self, mode: str = "real"):
        self.mode = mode
        self.simulated = 0.0
        self._lock = threading.Lock()

    def charge(self, seconds: float) -> None:
        if seconds <= 0:
            return
        if self.mode == "real":
            time.sleep(seconds)
        else:
            with self._lock:
                self.simulated += seconds


@dataclass(frozen=True)
class RawInput:
    path: Path
    key: str


InputUnit = Union[RawInput, FileSplit]


@dataclass(frozen=True)
class MapTask:
    inputs: tuple[InputUnit, ...]
    seqfile_id: str | None = None
    block_id: int | None = None


@dataclass
class TaskPlan:
    strategy: InputStrategy
    tasks: list[MapTask]
    container_dir: Path | None = None
    located_files: int = 0

    @property
    def n_input_records(self) -> int:
        return sum(len(t.inputs) for t in self.tasks)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def input_keys(self) -> list[str]:
        return sorted(u.key for t in self.tasks for u in t.inputs)


@dataclass
class RunReport:
    stages: dict[str, float] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)
    strategy: str | None = None
    queries: tuple[str, ...] = ()

    def check_accounting(self) -> bool:
        c = self.counters
        return c["input_records"] == (
            c["records_discarded_band"] + c["records_discarded_bounds"] + c["records_contributing"]
        )


def _as_queries(queries: Query | Sequence[Query]) -> list[Query]:
    qs = [queries] if isinstance(queries, Query) else list(queries)
    if not qs:
        raise ValueError("at least one query is required")
    ids = [q.id for q in qs]
    if len(set(ids)) != len(ids):
        raise ValueError(f"query ids must be unique: {ids}")
    return qs


def check_prerequisites(strategy: InputStrategy | str, db: Database) -> None:
    strategy = InputStrategy(strategy)
    if strategy.is_raw:
        db.require_raw()
    elif strategy.uses_catalog:
        db.require_catalog(strategy.policy)
    else:
        db.require_containers(strategy.policy)


def group_splits(splits: Sequence[FileSplit]) -> list[MapTask]:
    """One task per distinct (container, block), in sorted order."""
    groups: dict[tuple[str, int], list[FileSplit]] = defaultdict(list)
    for s in splits:
        groups[s.seqfile_id, s.block_id].append(s)
    return [MapTask(tuple(sorted(groups[g], key=lambda s: s.offset)), g[0], g[1]) for g in sorted(groups)]


def plan_splits(
    strategy: InputStrategy | str, queries: Query | Sequence[Query], db: Database, cfg: EngineConfig
) -> tuple[TaskPlan, float]:
    """Enumerate and group the inputs of one job; returns the plan and its duration in seconds."""
    strategy = InputStrategy(strategy)
    qs = _as_queries(queries)
    check_prerequisites(strategy, db)
    clock = CostClock(cfg.clock)
    start = time.perf_counter()

    if strategy.is_raw:
        if strategy is InputStrategy.RAW_UNFILTERED:
            paths = list_raw_files(db.raw_dir)
        else:
            matched: set[Path] = set()
            for q in qs:
                matched.update(prefilter_paths(db.raw_dir, build_glob(q, db.layout, db.raw_dir)))
            paths = sorted(matched)
        tasks = []
        for p in paths:
            clock.charge(cfg.split_rpc_latency)
            tasks.append(MapTask((RawInput(p, p.stem),)))
        plan = TaskPlan(strategy, tasks, None, len(paths))
    else:
        policy = strategy.policy
        store = db.store(policy)
        if strategy.uses_catalog:
            catalog = db.catalog(policy, cfg.block_size)
            picked: dict[str, FileSplit] = {}
            for q in qs:
                for s in query_catalog(catalog, q, db.layout, cfg.block_size):
                    picked[s.key] = s
            splits = [picked[k] for k in sorted(picked)]
            containers = sorted({s.seqfile_id for s in splits})
            for cid in containers:
                store.path(cid)
                clock.charge(cfg.split_rpc_latency)
            located = len(containers)
        else:
            keep = structured_filter(qs, db.layout) if strategy is InputStrategy.SEQ_STRUCTURED_PREFILTERED else None
            splits = splits_for(store, keep, block_size=cfg.block_size)
            for _ in range(store.opens):
                clock.charge(cfg.split_rpc_latency)
            located = store.opens
        plan = TaskPlan(strategy, group_splits(splits), store.root, located)

    return plan, time.perf_counter() - start + clock.simulated


class _Counters:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.values = dict.fromkeys(COUNTERS, 0)
        self._active = 0

    def add(self, name: str, n: int = 1) -> None:
        with self._lock:
            self.values[name] += n

    def enter(self) -> None:
        with self._lock:
            self._active += 1
            self.values["peak_concurrent_mappers"] = max(self.values["peak_concurrent_mappers"], self._active)

    def leave(self) -> None:
        with self._lock:
            self._active -= 1


class Mapper:
    """One mapper object; reused for every record of its task."""

    def __init__(self, queries: Sequence[Query], grids: dict[str, Wcs], counters: _Counters):
        self.queries = queries
        self.grids = grids
        self.counters = counters

    def classify(self, record: ImageRecord) -> str:
        same_band = [q for q in self.queries if q.band == record.meta.band]
        if not same_band:
            return "records_discarded_band"
        if all(bounds_intersect(q.bounds, record.meta.bounds) is None for q in same_band):
            return "records_discarded_bounds"
        return "records_contributing"

    def __call__(self, record: ImageRecord) -> list[ProjectedTile]:
        self.counters.add(self.classify(record))
        return map_fn(record, self.queries, self.grids)


def _read(unit: InputUnit, store: SeqStore | None) -> ImageRecord:
    if isinstance(unit, RawInput):
        return read_record_file(unit.path)
    return store.read_record(unit)


def simulated_makespan(n_tasks: int, slots: int, cost: float) -> float:
    """Completion time of ``n_tasks`` equal-cost tasks on ``slots`` parallel slots."""
    return math.ceil(n_tasks / slots) * cost if n_tasks else 0.0


def execute(
    plan: TaskPlan,
    queries: Query | Sequence[Query],
    cfg: EngineConfig,
    out_dir: str | os.PathLike | None = None,
) -> tuple[dict[str, CoaddResult], RunReport]:
    """Run the map, shuffle and reduce phases of ``plan``.

    Results do not depend on ``cfg.slots`` or on task interleaving. The first
    mapper failure cancels the job and surfaces as :class:`MapperError`.
    """
    qs = _as_queries(queries)
    grids = {q.id: make_target_wcs(q) for q in qs}
    store = SeqStore(plan.container_dir) if plan.container_dir is not None else None
    counters = _Counters()
    clock = CostClock(cfg.clock)
    abort = threading.Event()
    stages: dict[str, float] = {}

    def run_task(task: MapTask) -> list[ProjectedTile]:
        counters.enter()
        try:
            mapper = Mapper(qs, grids, counters)
            counters.add("mapper_objects")
            if cfg.clock == "real":
                clock.charge(cfg.mapper_startup_cost)
            out: list[ProjectedTile] = []
            for unit in task.inputs:
                if abort.is_set():
                    break
                counters.add("input_records")
                try:
                    out.extend(mapper(_read(unit, store)))
                except Exception as exc:
                    abort.set()
                    raise MapperError(unit.key, exc) from exc
            return out
        finally:
            counters.leave()

    t0 = time.perf_counter()
    outputs: list[ProjectedTile] = []
    if plan.tasks:
        workers = min(cfg.slots, plan.n_tasks)
        if cfg.clock == "simulated":
            workers = min(workers, _SIMULATED_THREAD_CAP)
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="mapper") as pool:
            futures = [pool.submit(run_task, t) for t in plan.tasks]
            done, pending = wait(futures, return_when=FIRST_EXCEPTION)
            for f in pending:
                f.cancel()
            for f in futures:
                if f.done() and not f.cancelled() and f.exception() is not None:
                    raise f.exception()
            for f in futures:
                outputs.extend(f.result())
    stages["map"] = time.perf_counter() - t0
    if cfg.clock == "simulated":
        stages["map"] += simulated_makespan(plan.n_tasks, cfg.slots, cfg.mapper_startup_cost)

    t0 = time.perf_counter()
    shuffled: dict[str, list[ProjectedTile]] = {q.id: [] for q in qs}
    for tile in outputs:
        shuffled[tile.query_id].append(tile)
    for tiles in shuffled.values():
        tiles.sort(key=lambda t: t.key)
    stages["shuffle"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=len(qs), thread_name_prefix="reducer") as pool:
        futures = {
            q.id: pool.submit(reduce_fn, q, shuffled[q.id], grids[q.id],
                              out / f"{q.id}.cdf" if out is not None else None)
            for q in qs
        }
        results = {qid: f.result() for qid, f in futures.items()}
    stages["reduce"] = time.perf_counter() - t0

    report = RunReport(stages=stages, counters=dict(counters.values), strategy=plan.strategy.value,
                       queries=tuple(q.id for q in qs))
    return results, report


def run_job(
    strategy: InputStrategy | str,
    queries: Query | Sequence[Query],
    db: Database,
    cfg: EngineConfig,
    out_dir: str | os.PathLike | None = None,
) -> tuple[dict[str, CoaddResult], RunReport, TaskPlan]:
    """Driver setup, split construction and execution, with a full stage breakdown."""
    t_start = time.perf_counter()
    strategy = InputStrategy(strategy)
    qs = _as_queries(queries)
    check_prerequisites(strategy, db)
    for q in qs:
        make_target_wcs(q)
    setup = time.perf_counter() - t_start

    plan, planning = plan_splits(strategy, qs, db, cfg)
    results, report = execute(plan, qs, cfg, out_dir)
    stages = {"driver_setup": setup, "construct_file_splits": planning, **report.stages}
    wall = time.perf_counter() - t_start
    measured = sum(stages[s] for s in ("driver_setup", "construct_file_splits", "map", "shuffle", "reduce"))
    stages["total"] = max(wall, measured) if cfg.clock == "real" else measured
    report.stages = {s: stages[s] for s in STAGES}
    return results, report, plan


def report_rows(report: RunReport) -> list[tuple[str, str, str]]:
    rows = [("stage", name, f"{report.stages[name]:.6f}") for name in STAGES if name in report.stages]
    rows += [("counter", name, str(report.counters[name])) for name in COUNTERS if name in report.counters]
    return rows


def report_emit(report: RunReport, path: str | os.PathLike, provenance: str | None = None) -> None:
    """Write ``report`` as CSV rows ``kind,name,value`` in fixed order."""
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.writer(fh)
        writer.writerow(("kind", "name", "value"))
        writer.writerows(report_rows(report))


def read_report(path: str | os.PathLike) -> RunReport:
    report = RunReport()
    with open(path, newline="") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            if row["kind"] == "stage":
                report.stages[row["name"]] = float(row["value"])
            elif row["kind"] == "counter":
                report.counters[row["name"]] = int(row["value"])
            else:
                raise ValueError(f"{path}: unknown row kind {row['kind']!r}")
    return report
