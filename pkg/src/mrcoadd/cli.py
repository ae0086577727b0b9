"""Command line driver.

Subcommands: generate, pack, catalog, coadd, oracle, bench, report.
Exit codes: 0 success, 2 usage or config error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import shlex
import statistics
import sys
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .coadd import Query, parse_bounds, serial_coadd
from .dataset import Database
from .engine import STRATEGIES, EngineConfig, InputStrategy, read_report, report_emit, run_job
from .errors import FormatError, MapperError, MissingArtifactError
from .geometry import SkyBounds
from .image import SurveyConfig, generate_survey
from .seqfile import DEFAULT_BLOCK_SIZE

log = logging.getLogger("mrcoadd")

EXIT_USAGE = 2
EXIT_DATA = 3

# Bench defaults: 0.18 s per located file puts ~10^5 files at ~5 h of
# planning; 2 s per mapper makes startup visible against ~800 slots.
BENCH_RPC_LATENCY = 0.18
BENCH_STARTUP_COST = 2.0

SUMMARY_FIELDS = ("strategy", "query", "planning_s", "map_s", "reduce_s", "total_s",
                  "input_records", "mapper_objects")


class UsageError(Exception):
    pass


class BenchError(RuntimeError):
    """A benchmark cell failed; the message names the strategy and query."""


@dataclass
class BenchMatrixSpec:
    strategies: list[InputStrategy]
    queries: list[Query]
    repetitions: int = 3
    engine: EngineConfig = field(default_factory=EngineConfig)

    def __post_init__(self) -> None:
        if not self.strategies:
            raise ValueError("bench needs at least one strategy")
        if not self.queries:
            raise ValueError("bench needs at least one query")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")


def default_queries(center_ra: float, center_dec: float, band: str, scale: float) -> list[Query]:
    """A ~1 degree and a ~1/4 degree square query around one center."""
    out = []
    for qid, size in (("q1deg", 1.0), ("q025deg", 0.25)):
        h = size / 2
        out.append(Query(qid, band, SkyBounds.from_ranges(center_ra - h, center_ra + h,
                                                          center_dec - h, center_dec + h), scale))
    return out


def load_config(path: str | Path | None) -> SurveyConfig:
    if path is None:
        return SurveyConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    try:
        return SurveyConfig.from_mapping(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _engine_from_args(args: argparse.Namespace) -> EngineConfig:
    return EngineConfig(slots=args.slots, block_size=args.block_size, split_rpc_latency=args.rpc_latency,
                        mapper_startup_cost=args.startup_cost, clock=args.clock)


def _query_from_args(args: argparse.Namespace) -> Query:
    try:
        return Query(args.query_id, args.band, parse_bounds(args.bounds), args.scale)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_generate(args: argparse.Namespace, provenance: str) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    records = generate_survey(cfg)
    db = Database.create(args.out, cfg)
    db.write_raw(records, provenance)
    print(f"generated {len(records)} records in {db.raw_dir}")
    return 0


def cmd_pack(args: argparse.Namespace, provenance: str) -> int:
    if args.policy == "structured" and args.n_files is not None:
        raise UsageError("--n-files applies only to --policy unstructured")
    db = Database(args.dataset)
    records = db.read_raw()
    seqs = db.pack(records, args.policy, args.n_files, args.seed)
    print(f"packed {sum(len(s) for s in seqs)} entries into {len(seqs)} {args.policy} containers")
    return 0


def cmd_catalog(args: argparse.Namespace, provenance: str) -> int:
    db = Database(args.dataset)
    catalog = db.build_catalog(args.policy, args.block_size)
    print(f"catalogued {len(catalog)} records -> {db.catalog_path(args.policy)}")
    return 0


def cmd_coadd(args: argparse.Namespace, provenance: str) -> int:
    db = Database(args.dataset)
    query = _query_from_args(args)
    out = Path(args.out)
    results, report, _ = run_job(args.strategy, [query], db, _engine_from_args(args), out)
    report_emit(report, out / "report.csv", provenance)
    c = report.counters
    print(f"{args.strategy}: input_records={c['input_records']} contributing={c['records_contributing']} "
          f"mapper_objects={c['mapper_objects']} total={report.stages['total']:.3f}s -> {out / (query.id + '.cdf')}")
    return 0


def cmd_oracle(args: argparse.Namespace, provenance: str) -> int:
    db = Database(args.dataset)
    query = _query_from_args(args)
    result = serial_coadd(db.read_raw(), query)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.save(out / f"{query.id}.cdf")
    print(f"oracle: contributing={result.n_contributing} -> {out / (query.id + '.cdf')}")
    return 0


def run_bench(db: Database, spec: BenchMatrixSpec, out_dir: Path, provenance: str | None = None) -> list[dict]:
    """Run every (strategy, query) cell ``spec.repetitions`` times; write reports and a summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    report_files = []
    for strategy in spec.strategies:
        for q in spec.queries:
            counts = None
            for rep in range(spec.repetitions):
                try:
                    _, report, _ = run_job(strategy, [q], db, spec.engine)
                except Exception as exc:
                    raise BenchError(f"bench {strategy.value} / {q.id}: {exc}") from exc
                cell = (report.counters["input_records"], report.counters["records_contributing"])
                if counts is not None and cell != counts:
                    raise BenchError(f"bench {strategy.value} / {q.id}: record counts changed between repetitions")
                counts = cell
                path = out_dir / f"{strategy.value}__{q.id}__rep{rep}.csv"
                report_emit(report, path, provenance)
                report_files.append(path)
    rows = summarize_reports(report_files)
    write_summary(rows, out_dir / "summary.csv", provenance)
    return rows


def summarize_reports(paths: Sequence[str | Path]) -> list[dict]:
    """Median stage times per (strategy, query) from report files named ``<strategy>__<query>__rep<k>.csv``."""
    cells: dict[tuple[str, str], list] = defaultdict(list)
    for p in paths:
        parts = Path(p).stem.split("__")
        if len(parts) != 3:
            raise ValueError(f"report file name {Path(p).name!r} is not <strategy>__<query>__rep<k>.csv")
        cells[parts[0], parts[1]].append(read_report(p))
    order = {s.value: i for i, s in enumerate(STRATEGIES)}
    rows = []
    for (strategy, qid), reports in sorted(cells.items(), key=lambda kv: (order.get(kv[0][0], 99), kv[0])):
        med = lambda name: statistics.median(r.stages[name] for r in reports)  # noqa: E731
        rows.append({
            "strategy": strategy,
            "query": qid,
            "planning_s": med("construct_file_splits"),
            "map_s": med("map"),
            "reduce_s": med("reduce"),
            "total_s": med("total"),
            "input_records": reports[0].counters["input_records"],
            "mapper_objects": reports[0].counters["mapper_objects"],
        })
    return rows


def write_summary(rows: Sequence[dict], path: Path, provenance: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if provenance:
            fh.write(f"# {provenance}\n")
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def cmd_bench(args: argparse.Namespace, provenance: str) -> int:
    db = Database(args.dataset)
    cfg = db.load_config()
    if args.center:
        try:
            ra, dec = (float(v) for v in args.center.split(":"))
        except ValueError:
            raise UsageError(f"--center {args.center!r} must look like ra:dec") from None
    else:
        ra, dec = cfg.stripe_bounds.center
    strategies = [InputStrategy(s) for s in (args.strategies or [s.value for s in STRATEGIES])]
    queries = default_queries(ra, dec, args.band, args.scale)
    if args.only_query:
        queries = [q for q in queries if q.id in args.only_query]
    spec = BenchMatrixSpec(strategies, queries, args.repetitions, _engine_from_args(args))
    rows = run_bench(db, spec, Path(args.out), provenance)
    for row in rows:
        print(f"{row['strategy']:>22} {row['query']:>8} total={row['total_s']:10.3f}s "
              f"planning={row['planning_s']:10.3f}s input={row['input_records']:>6} "
              f"mappers={row['mapper_objects']:>5}")
    return 0


def cmd_report(args: argparse.Namespace, provenance: str) -> int:
    rows = summarize_reports(args.reports)
    if args.out:
        write_summary(rows, Path(args.out), provenance)
    writer = csv.DictWriter(sys.stdout, fieldnames=SUMMARY_FIELDS)
    writer.writeheader()
    writer.writerows(rows)
    return 0


def _add_engine_args(p: argparse.ArgumentParser, *, latency: float, startup: float, clock: str) -> None:
    p.add_argument("--slots", type=int, default=800, help="max concurrent mappers")
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE, help="bytes per storage block")
    p.add_argument("--rpc-latency", type=float, default=latency, help="seconds charged per located file")
    p.add_argument("--startup-cost", type=float, default=startup, help="seconds charged per mapper object")
    p.add_argument("--clock", choices=("real", "simulated"), default=clock)


def _add_query_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--band", required=True, choices=list("ugriz"))
    p.add_argument("--bounds", required=True, help="ra_min:ra_max:dec_min:dec_max in degrees")
    p.add_argument("--scale", type=float, required=True, help="output pixel scale, degrees/pixel")
    p.add_argument("--query-id", default="query")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mrcoadd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic survey and its raw tree")
    p.add_argument("--config", help="key = value survey config (TOML)")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pack", help="pack raw files into sequence-file containers")
    p.add_argument("dataset")
    p.add_argument("--policy", choices=("unstructured", "structured"), required=True)
    p.add_argument("--n-files", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("catalog", help="build the metadata catalog over packed containers")
    p.add_argument("dataset")
    p.add_argument("--policy", choices=("unstructured", "structured"), required=True)
    p.add_argument("--block-size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.set_defaults(func=cmd_catalog)

    p = sub.add_parser("coadd", help="run one query under one input strategy")
    p.add_argument("dataset")
    p.add_argument("--strategy", required=True, choices=[s.value for s in STRATEGIES])
    _add_query_args(p)
    _add_engine_args(p, latency=0.0, startup=0.0, clock="real")
    p.set_defaults(func=cmd_coadd)

    p = sub.add_parser("oracle", help="serial reference coadd from the raw tree")
    p.add_argument("dataset")
    _add_query_args(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bench", help="run the strategy x query benchmark matrix")
    p.add_argument("dataset")
    p.add_argument("--strategies", nargs="+", choices=[s.value for s in STRATEGIES])
    p.add_argument("--band", default="g", choices=list("ugriz"))
    p.add_argument("--scale", type=float, default=0.01)
    p.add_argument("--center", help="query center ra:dec (default: stripe center)")
    p.add_argument("--only-query", nargs="+", choices=("q1deg", "q025deg"))
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--out", required=True, help="directory for per-run reports and summary.csv")
    _add_engine_args(p, latency=BENCH_RPC_LATENCY, startup=BENCH_STARTUP_COST, clock="simulated")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summarize bench report files")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    provenance = "mrcoadd " + shlex.join(argv)
    try:
        return args.func(args, provenance)
    except UsageError as exc:
        print(f"mrcoadd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingArtifactError, FormatError, MapperError, BenchError, OSError, KeyError, ValueError) as exc:
        print(f"mrcoadd {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
