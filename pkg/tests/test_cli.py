import json
import os
import subprocess
import sys

import pytest

from fixtures import LADDER_COLUMNS, ladder_frame
from svydid.cli import main
from svydid.estimators import estimate
from svydid.simdgp import generate, scenario


@pytest.fixture
def ladder_csv(tmp_path):
    path = tmp_path / "ladder.csv"
    ladder_frame().to_csv(path, index=False)
    cols = tmp_path / "columns.json"
    cols.write_text(json.dumps(LADDER_COLUMNS))
    return str(path), str(cols)


def simulate(tmp_path, name, *extra):
    rec = tmp_path / f"{name}.jsonl"
    rep = tmp_path / f"{name}.txt"
    code = main(
        ["simulate", "--scenario", "s1", "--estimator", "cs_reg", "--n", "400", "--reps", "3", "--seed", "5",
         "--threads", "1", "--records", str(rec), "--report", str(rep), *extra]
    )
    return code, rec, rep


class TestSimulate:
    def test_deterministic_records(self, tmp_path):
        c1, r1, t1 = simulate(tmp_path, "a")
        c2, r2, t2 = simulate(tmp_path, "b")
        assert c1 == c2 == 0
        assert r1.read_bytes() == r2.read_bytes()
        assert t1.read_text() == t2.read_text()
        lines = r1.read_text().splitlines()
        assert len(lines) == 3
        assert all(json.loads(x)["kind"] == "replication" for x in lines)

    def test_seed_required(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as info:
            main(["simulate", "--scenario", "s1", "--reps", "2", "--records", str(tmp_path / "r.jsonl")])
        assert info.value.code == 2
        assert "--seed" in capsys.readouterr().err

    def test_unknown_scenario_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["simulate", "--scenario", "s7", "--reps", "2", "--seed", "1", "--records", str(tmp_path / "r.jsonl")])
        assert info.value.code == 2

    def test_invalid_grid_cell(self, tmp_path):
        code = main(["simulate", "--scenario", "s1", "--n", "10", "--reps", "1", "--seed", "1",
                     "--records", str(tmp_path / "r.jsonl")])
        assert code == 2
        assert not (tmp_path / "r.jsonl").exists()

    def test_unwritable_output(self, tmp_path):
        code = main(["simulate", "--scenario", "s1", "--n", "400", "--reps", "1", "--seed", "1",
                     "--records", str(tmp_path / "missing" / "r.jsonl")])
        assert code == 8

    def test_dump_roundtrip(self, tmp_path, capsys):
        code, _, _ = simulate(tmp_path, "d", "--dump-csv", str(tmp_path / "d.csv"))
        assert code == 0
        out = tmp_path / "est.jsonl"
        code = main(["estimate", str(tmp_path / "d.csv"), "--outcome", "y", "--time", "time", "--first-treat", "first_treat",
                     "--unit", "unit", "--weights", "weight", "--strata", "stratum", "--psu", "psu", "--fpc", "fpc",
                     "--output", str(out)])
        assert code == 0
        rec = json.loads(out.read_text())
        data, design, _ = generate(scenario("s1", n=400, seed=5), 0)
        want = estimate(data, design, "cs_reg")
        assert rec["estimate"] == pytest.approx(want.estimate, rel=1e-12)
        assert rec["se"] == pytest.approx(want.se, rel=1e-10)
        assert rec["df"] == 35


class TestReport:
    def test_sorted_and_merged(self, tmp_path, capsys):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        main(["simulate", "--scenario", "s1", "--estimator", "twfe", "--n", "400", "--reps", "2", "--seed", "1",
              "--threads", "1", "--records", str(a), "--report", str(tmp_path / "ra.txt")])
        main(["simulate", "--scenario", "s1", "--estimator", "cs_reg", "--n", "400", "--reps", "2", "--seed", "1",
              "--threads", "1", "--records", str(b), "--report", str(tmp_path / "rb.txt")])
        cells = tmp_path / "cells.jsonl"
        assert main(["report", str(a), str(b), "--output", str(tmp_path / "r.txt"), "--cells", str(cells)]) == 0
        order = [json.loads(x)["estimator"] for x in cells.read_text().splitlines()]
        assert order == ["cs_reg", "twfe"]
        swapped = tmp_path / "r2.txt"
        main(["report", str(b), str(a), "--output", str(swapped)])
        assert swapped.read_text() == (tmp_path / "r.txt").read_text()

    def test_duplicate_cell_across_files(self, tmp_path, capsys):
        _, rec, _ = simulate(tmp_path, "a")
        copy = tmp_path / "copy.jsonl"
        copy.write_text(rec.read_text())
        assert main(["report", str(rec), str(copy)]) == 7
        err = capsys.readouterr().err
        assert "duplicate cell scenario=s1 estimator=cs_reg n=400" in err

    def test_duplicate_replication(self, tmp_path, capsys):
        _, rec, _ = simulate(tmp_path, "a")
        lines = rec.read_text().splitlines()
        rec.write_text("\n".join(lines + lines[:1]) + "\n")
        assert main(["report", str(rec)]) == 7
        assert "duplicate replication rep=0" in capsys.readouterr().err

    def test_schema_mismatch(self, tmp_path, capsys):
        bad = tmp_path / "bad.jsonl"
        bad.write_text(json.dumps({"schema_version": 99, "scenario": "s1"}) + "\n")
        assert main(["report", str(bad)]) == 7

    def test_missing_file(self, tmp_path):
        assert main(["report", str(tmp_path / "nope.jsonl")]) == 3

    def test_no_partial_output(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        out = tmp_path / "out.txt"
        assert main(["report", str(bad), "--output", str(out)]) == 7
        assert not out.exists()


class TestEstimate:
    def test_ladder(self, ladder_csv, tmp_path, capsys):
        csv, cols = ladder_csv
        out = tmp_path / "ladder.jsonl"
        assert main(["estimate", csv, "--columns", cols, "--nest", "--ladder", "--output", str(out)]) == 0
        recs = [json.loads(x) for x in out.read_text().splitlines()]
        assert [r["specification"] for r in recs] == ["naive", "weights_only", "full_design", "full_design_covariates"]
        naive, wonly, full, cov = recs
        assert full["df"] == 31 and cov["df"] == 31
        assert full["se"] > wonly["se"]
        assert abs(wonly["estimate"] - naive["estimate"]) > 2 * naive["se"]
        assert "weights, strata, PSUs" in capsys.readouterr().out

    def test_ladder_without_covariates_skips_last_row(self, ladder_csv, tmp_path):
        csv, cols = ladder_csv
        mapping = dict(LADDER_COLUMNS)
        del mapping["covariates"]
        cpath = tmp_path / "nocov.json"
        cpath.write_text(json.dumps(mapping))
        out = tmp_path / "l.jsonl"
        assert main(["estimate", csv, "--columns", str(cpath), "--nest", "--ladder", "--output", str(out)]) == 0
        assert json.loads(out.read_text().splitlines()[-1])["skipped"]

    def test_flags_override_column_map(self, ladder_csv, tmp_path):
        csv, cols = ladder_csv
        code = main(["estimate", csv, "--columns", cols, "--outcome", "nope", "--nest", "--output", str(tmp_path / "o.jsonl")])
        assert code == 4

    def test_unknown_column_key(self, ladder_csv, tmp_path):
        csv, _ = ladder_csv
        cpath = tmp_path / "c.json"
        cpath.write_text(json.dumps({"outcome": "y", "colour": "red"}))
        assert main(["estimate", csv, "--columns", str(cpath), "--output", str(tmp_path / "o.jsonl")]) == 2

    def test_unnested_psu_reuse_is_design_error(self, ladder_csv, tmp_path, capsys):
        csv, cols = ladder_csv
        out = tmp_path / "o.jsonl"
        assert main(["estimate", csv, "--columns", cols, "--output", str(out)]) == 5
        assert "nest" in capsys.readouterr().err
        assert not out.exists()

    def test_malformed_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("y,t,g,u\n1,2,3\n4,5,0,1\n")
        args = ["--outcome", "y", "--time", "t", "--first-treat", "g", "--unit", "u"]
        assert main(["estimate", str(bad), *args, "--output", str(tmp_path / "o.jsonl")]) == 3

    def test_jkn_replicate_mode(self, ladder_csv, tmp_path):
        csv, cols = ladder_csv
        a, b = tmp_path / "d.jsonl", tmp_path / "r.jsonl"
        assert main(["estimate", csv, "--columns", cols, "--nest", "--output", str(a)]) == 0
        assert main(["estimate", csv, "--columns", cols, "--nest", "--mode", "replicate", "--jkn", "--output", str(b)]) == 0
        d, r = json.loads(a.read_text()), json.loads(b.read_text())
        assert r["se"] == pytest.approx(d["se"], rel=1e-8)
        assert r["df"] == 31 and r["replicate_method"] == "jkn"

    def test_replicate_mode_needs_source(self, ladder_csv, tmp_path):
        csv, cols = ladder_csv
        assert main(["estimate", csv, "--columns", cols, "--nest", "--mode", "replicate", "--output", str(tmp_path / "o")]) == 2

    def test_estimators(self, ladder_csv, tmp_path):
        csv, cols = ladder_csv
        for est in ("cs", "twfe", "sun_abraham"):
            out = tmp_path / f"{est}.jsonl"
            assert main(["estimate", csv, "--columns", cols, "--nest", "--estimator", est, "--output", str(out)]) == 0
            rec = json.loads(out.read_text())
            assert rec["deff"] is not None and rec["deff"] > 0


def test_module_entry_point(tmp_path):
    env = dict(os.environ)
    out = subprocess.run([sys.executable, "-m", "svydid", "--help"], capture_output=True, text=True, env=env)
    assert out.returncode == 0
    assert "simulate" in out.stdout and "estimate" in out.stdout and "report" in out.stdout
