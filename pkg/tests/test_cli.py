import csv
import io
import json
import math

import pytest

from ksatlab import scalars
from ksatlab.cli import main
from ksatlab.model import ModelParams

D10 = 0.9 * 10 * 2**10 * math.log(2)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def one_clause(tmp_path):
    path = tmp_path / "one.cnf"
    path.write_text("p cnf 3 1\n1 2 3 0\n")
    return path


def test_exact_single_clause(capsys, one_clause):
    code, out, _ = run(capsys, "exact", "--n", 3, "--k", 3, "--clauses", one_clause, "--beta", 2)
    assert code == 0
    rec = json.loads(out)
    assert rec["results"]["logZ"] == pytest.approx(math.log(7 + math.exp(-2)), abs=1e-12)
    assert rec["seed"] == 0 and rec["command"] == "exact"
    assert "wall_time" not in rec


def test_bp_trace_and_marginals(capsys, one_clause, tmp_path):
    trace = tmp_path / "trace.csv"
    code, out, _ = run(capsys, "bp", "--clauses", one_clause, "--beta", 2, "--trace", trace)
    assert code == 0
    assert "marginals" not in json.loads(out)["results"]
    rows = list(csv.DictReader(trace.open()))
    assert float(rows[-1]["bethe_value"]) == pytest.approx(math.log(7 + math.exp(-2)), abs=1e-12)
    code, out, _ = run(capsys, "bp", "--clauses", one_clause, "--beta", 2, "--marginals")
    assert len(json.loads(out)["results"]["marginals"]) == 3


def test_popdyn_repeatable_across_threads(capsys):
    argv = ["popdyn", "--k", 10, "--d", D10, "--beta", 2, "--pop", 20000, "--iters", 8, "--seed", 7]
    outs = [run(capsys, *argv, "--threads", t)[1] for t in (1, 1, 4)]
    assert outs[0] == outs[1] == outs[2]
    assert json.loads(outs[0])["seed"] == 7


def test_moments_f_table(capsys):
    code, out, _ = run(capsys, "moments", "--k", 12, "--beta", 2, "--table", "f", "--grid", 1000)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 1000
    p = ModelParams(12, scalars.reference_thresholds(12)["d_star"], 2.0)
    half = 2 * scalars.first_moment_rate(p)
    assert all(float(r["f_half"]) == half for r in rows)
    mid = min(rows, key=lambda r: abs(float(r["alpha"]) - 0.5))
    alpha = float(mid["alpha"])
    assert float(mid["f"]) == pytest.approx(float(scalars.f_alpha(alpha, p)[0]), abs=1e-12)


def test_moments_thresholds(capsys):
    code, out, _ = run(capsys, "moments", "--table", "thresholds", "--k-min", 5, "--k-max", 7)
    assert code == 0 and len(out.strip().splitlines()) == 4


def test_gen_and_planted_records(capsys, tmp_path):
    path = tmp_path / "f.cnf"
    code, out, _ = run(capsys, "gen", "--k", 3, "--n", 20, "--m", 30, "--write", path)
    assert code == 0 and path.exists()
    code, out, _ = run(capsys, "exact", "--clauses", path, "--beta", 1)
    assert code == 0 and json.loads(out)["results"]["m"] == 30
    code, out, _ = run(capsys, "planted", "--k", 3, "--n", 300, "--m", 2000, "--beta", 1)
    res = json.loads(out)["results"]
    assert abs(res["z"]) < 6


def test_rsb_scalar_and_timing(capsys):
    code, out, _ = run(capsys, "rsb", "--mode", "scalar", "--c", 0.9, "--timing")
    rec = json.loads(out)
    assert code == 0 and rec["results"]["argmin_y"] < 1
    assert "wall_time" in rec and rec["threads"] == 1


def test_out_flag(capsys, tmp_path, one_clause):
    target = tmp_path / "rec.json"
    code, out, _ = run(capsys, "exact", "--clauses", one_clause, "--beta", 2, "--out", target)
    assert code == 0 and out == ""
    assert json.loads(target.read_text())["command"] == "exact"


def test_bad_flag_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["exact", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["nosuch"])
    assert exc.value.code == 2


def test_invalid_model_exit_2(capsys):
    code, _, err = run(capsys, "tree", "--k", 1, "--d", 1.0)
    assert code == 2 and "usage" in err


def test_resource_cap_exit_3(capsys):
    code, _, err = run(capsys, "tree", "--k", 3, "--d", 50, "--depth", 6, "--count", 10)
    assert code == 3 and "resource" in err


def test_missing_file_exit_1(capsys, tmp_path):
    code, _, _ = run(capsys, "exact", "--clauses", tmp_path / "absent.cnf")
    assert code == 1
