from __future__ import annotations

import pytest

from mrcoadd.dataset import Database
from mrcoadd.image import SurveyConfig, generate_survey

# 12 runs x 5 bands x 6 strips x 6 fields = 2160 records
BENCH_CFG = SurveyConfig(n_runs=12, fields_per_run=6, field_width=0.5, seed=42)
SMALL_CFG = SurveyConfig(seed=42)


def _build_db(root, cfg, records):
    db = Database.create(root, cfg)
    db.write_raw(records)
    db.pack(records, "unstructured", n_files=8, seed=7)
    db.pack(records, "structured")
    db.build_catalog("unstructured")
    db.build_catalog("structured")
    return db


@pytest.fixture(scope="session")
def small_records():
    return generate_survey(SMALL_CFG)


@pytest.fixture(scope="session")
def small_db(tmp_path_factory, small_records):
    return _build_db(tmp_path_factory.mktemp("small"), SMALL_CFG, small_records)


@pytest.fixture(scope="session")
def bench_records():
    return generate_survey(BENCH_CFG)


@pytest.fixture(scope="session")
def bench_db(tmp_path_factory, bench_records):
    return _build_db(tmp_path_factory.mktemp("bench"), BENCH_CFG, bench_records)


_acceptance: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _acceptance[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance.items(), key=lambda kv: int(kv[0].split("_")[2])):
        terminalreporter.write_line(f"{outcome}  {name}")
