import csv
import subprocess
import sys

import pytest

from mrcoadd.cli import BenchMatrixSpec, default_queries, main, summarize_reports
from mrcoadd.coadd import CoaddResult, compare_coadds, parse_bounds
from mrcoadd.dataset import read_manifest
from mrcoadd.engine import read_report
from mrcoadd.geometry import bounds_intersect

BOUNDS = "38.3:38.55:-0.1:0.15"


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "db"
    assert main(["generate", "--out", str(root), "--seed", "42"]) == 0
    assert main(["pack", str(root), "--policy", "structured"]) == 0
    assert main(["pack", str(root), "--policy", "unstructured", "--n-files", "8"]) == 0
    assert main(["catalog", str(root), "--policy", "structured"]) == 0
    assert main(["catalog", str(root), "--policy", "unstructured"]) == 0
    return root


def coadd(dataset, out, strategy, qid="query"):
    return main(["coadd", str(dataset), "--strategy", strategy, "--band", "g", "--bounds", BOUNDS,
                 "--scale", "0.002", "--query-id", qid, "--out", str(out)])


class TestGenerate:
    def test_default_survey(self, dataset):
        assert len(list((dataset / "raw").rglob("*.fit"))) == 180
        assert len(read_manifest(dataset / "manifest.csv")) == 180

    def test_manifest_deterministic_and_provenance(self, tmp_path):
        texts = []
        for name in ("a", "b"):
            assert main(["generate", "--out", str(tmp_path / name), "--seed", "42"]) == 0
            texts.append((tmp_path / name / "manifest.csv").read_text())
        body = [t.split("\n", 1)[1] for t in texts]
        assert texts[0].startswith("# mrcoadd generate")
        assert body[0].replace(str(tmp_path / "a"), "") == body[1].replace(str(tmp_path / "b"), "")

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "s.toml"
        cfg.write_text("n_runs = 1\nbands = ['g', 'r']\nseed = 3\n")
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
        assert len(read_manifest(tmp_path / "d" / "manifest.csv")) == 1 * 2 * 6 * 3

    @pytest.mark.parametrize("text", ["n_runs = \n", "n_runs = 'x'\n", "colour = 1\n", "field_width = 0.7\n"])
    def test_bad_config_is_usage_error(self, tmp_path, text, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(text)
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2
        assert "bad.toml" in capsys.readouterr().err


class TestPack:
    def test_counts(self, dataset):
        assert len(list((dataset / "seq-structured").glob("*.seq"))) == 30
        assert len(list((dataset / "seq-unstructured").glob("*.seq"))) == 8

    def test_n_files_with_structured_rejected(self, dataset):
        assert main(["pack", str(dataset), "--policy", "structured", "--n-files", "4"]) == 2

    def test_missing_dataset(self, tmp_path):
        assert main(["pack", str(tmp_path / "nope"), "--policy", "structured"]) == 3


class TestCoadd:
    def test_matches_oracle_bytes(self, dataset, tmp_path):
        assert main(["oracle", str(dataset), "--band", "g", "--bounds", BOUNDS, "--scale", "0.002",
                     "--out", str(tmp_path / "oracle")]) == 0
        expected = (tmp_path / "oracle" / "query.cdf").read_bytes()
        for strategy in ("raw-unfiltered", "seq-structured", "catalog-structured"):
            assert coadd(dataset, tmp_path / strategy, strategy) == 0
            assert (tmp_path / strategy / "query.cdf").read_bytes() == expected

    def test_input_record_counts(self, dataset, tmp_path):
        metas = read_manifest(dataset / "manifest.csv")
        q = parse_bounds(BOUNDS)
        coverage = sum(1 for m in metas if m.band.value == "g" and bounds_intersect(m.bounds, q) is not None)
        assert coadd(dataset, tmp_path / "c", "catalog-structured") == 0
        assert read_report(tmp_path / "c" / "report.csv").counters["input_records"] == coverage
        assert coadd(dataset, tmp_path / "r", "raw-unfiltered") == 0
        assert read_report(tmp_path / "r" / "report.csv").counters["input_records"] == 180

    def test_result_loads(self, dataset, tmp_path):
        assert coadd(dataset, tmp_path, "catalog-unstructured") == 0
        res = CoaddResult.load(tmp_path / "query.cdf")
        assert res.depth.max() >= 1

    def test_missing_catalog_is_data_error(self, tmp_path, capsys):
        root = tmp_path / "db"
        assert main(["generate", "--out", str(root)]) == 0
        assert coadd(root, tmp_path / "o", "catalog-structured") == 3
        assert "mrcoadd pack --policy structured" in capsys.readouterr().err
        assert main(["pack", str(root), "--policy", "structured"]) == 0
        assert coadd(root, tmp_path / "o", "catalog-structured") == 3
        assert "mrcoadd catalog" in capsys.readouterr().err

    def test_bad_bounds_is_usage_error(self, dataset, tmp_path):
        assert main(["coadd", str(dataset), "--strategy", "raw-unfiltered", "--band", "g", "--bounds", "1:2",
                     "--scale", "0.01", "--out", str(tmp_path)]) == 2

    def test_unknown_strategy_exits_2(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as info:
            coadd(dataset, tmp_path, "raw-magic")
        assert info.value.code == 2


class TestBench:
    def test_matrix_and_ordering(self, dataset, tmp_path):
        out = tmp_path / "bench"
        assert main(["bench", str(dataset), "--repetitions", "2", "--only-query", "q1deg", "--out", str(out)]) == 0
        reports = sorted(out.glob("*__rep*.csv"))
        assert len(reports) == 6 * 2
        with open(out / "summary.csv") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
        total = {r["strategy"]: float(r["total_s"]) for r in rows}
        assert total["raw-unfiltered"] > total["raw-prefiltered"] > total["seq-unstructured"]
        assert total["seq-unstructured"] >= total["seq-structured"]
        counts = {r["strategy"]: int(r["input_records"]) for r in rows}
        assert counts["raw-unfiltered"] == counts["seq-unstructured"] == 180
        assert counts["raw-prefiltered"] == counts["seq-structured"]
        assert counts["catalog-structured"] == counts["catalog-unstructured"] <= counts["seq-structured"]

    def test_report_subcommand(self, dataset, tmp_path, capsys):
        out = tmp_path / "bench"
        assert main(["bench", str(dataset), "--repetitions", "1", "--strategies", "catalog-structured",
                     "--out", str(out)]) == 0
        capsys.readouterr()
        reports = [str(p) for p in sorted(out.glob("*__rep*.csv"))]
        assert main(["report", *reports, "--out", str(tmp_path / "s.csv")]) == 0
        assert "catalog-structured" in capsys.readouterr().out
        assert len(summarize_reports(reports)) == 2

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            BenchMatrixSpec([], default_queries(38.5, 0, "g", 0.01))

    def test_default_queries(self):
        q1, q2 = default_queries(38.5, 0.0, "g", 0.01)
        assert (q1.bounds.ra_width, q1.bounds.dec_height) == (1.0, 1.0)
        assert (q2.bounds.ra_width, q2.bounds.dec_height) == (0.25, 0.25)


def test_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "mrcoadd.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for name in ("generate", "pack", "catalog", "coadd", "oracle", "bench", "report"):
        assert name in proc.stdout


def test_compare_coadd_files(dataset, tmp_path):
    assert coadd(dataset, tmp_path / "a", "seq-unstructured") == 0
    assert coadd(dataset, tmp_path / "b", "raw-prefiltered") == 0
    a = CoaddResult.load(tmp_path / "a" / "query.cdf")
    b = CoaddResult.load(tmp_path / "b" / "query.cdf")
    assert compare_coadds(a, b).identical
