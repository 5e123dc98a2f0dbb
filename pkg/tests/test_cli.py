import io
import json
import math
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from conftest import DATA
from qmln.cli import dumps, parse_evidence_file, run_command
from qmln.errors import EvidenceError, ParseError
from qmln.logic import GroundAtom, parse_kb

FIX1 = str(DATA / "fix1.mln")
FIX2 = str(DATA / "fix2.mln")
FIX3 = str(DATA / "fix3.mln")
EVIDENCE = str(DATA / "fix2_evidence.db")
SCHEMA = json.loads(resources.files("qmln").joinpath("report_schema.json").read_text())

FAST = ["--samples", "300", "--burnin", "20", "--chains", "4", "--ladder", "8"]
INVOCATIONS = [
    ["validate", "--kb", FIX2],
    ["normalize", "--kb", FIX2],
    ["ground", "--kb", FIX2],
    ["stats", "--kb", FIX2],
    ["exact", "--kb", FIX2, "--evidence", EVIDENCE],
    ["mcmc", "--kb", FIX2, "--evidence", EVIDENCE, "--query", "Smokes(B)", *FAST],
    ["lifted", "--kb", FIX2, "--trace"],
    ["lifted", "--kb", FIX2, "--base", "ais", *FAST],
    ["quantum", "--kb", FIX2, "--evidence", EVIDENCE, "--samples", "500", "--seed", "4"],
    ["quantum", "--kb", FIX2, "--evidence", EVIDENCE, "--clamp", "20"],
    ["complexity", "--kb", FIX2, "--epsilon", "0.05", "--kappa", "3"],
    ["compare", "--kb", FIX2, *FAST],
]


def run(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run_command(argv, out, err)
    return code, out.getvalue(), err.getvalue()


def report(argv):
    code, out, err = run(argv)
    assert code == 0, err
    return json.loads(out)


# --- evidence files --------------------------------------------------------

def test_parse_evidence():
    ev = parse_evidence_file("Smokes(A) = true\n// note\n\nFriends(A, B) = FALSE\n")
    assert ev == {GroundAtom("Smokes", ("A",)): True, GroundAtom("Friends", ("A", "B")): False}


def test_evidence_must_be_ground():
    with pytest.raises(EvidenceError, match="evidence must be ground"):
        parse_evidence_file("Smokes(x) = true")


def test_evidence_conflict():
    with pytest.raises(EvidenceError, match="conflict"):
        parse_evidence_file("Smokes(A) = true\nSmokes(A) = false\n")


def test_evidence_against_kb(fix2):
    with pytest.raises(EvidenceError, match="unknown predicate"):
        parse_evidence_file("Drinks(A) = true", fix2)
    with pytest.raises(EvidenceError, match="unknown constant"):
        parse_evidence_file("Smokes(Z) = true", fix2)
    with pytest.raises(EvidenceError, match="arity"):
        parse_evidence_file("Smokes(A, B) = true", fix2)


@pytest.mark.parametrize("line", ["Smokes(A) true", "Smokes(A) = maybe", "Smokes = true", "Smokes(A,) = true"])
def test_evidence_syntax(line):
    with pytest.raises(ParseError, match="line 1"):
        parse_evidence_file(line)


# --- serialization ---------------------------------------------------------

def test_dumps():
    assert dumps({"a": 0.1, "b": [1, True, None], "c": math.nan}) == \
        '{"a": 0.10000000000000001, "b": [1, true, null], "c": null}'
    assert json.loads(dumps({"x": 1 / 3}))["x"] == 1 / 3


# --- commands --------------------------------------------------------------

def test_stats_fix2():
    stats = report(["stats", "--kb", FIX2])["stats"]
    assert (stats["num_nodes"], stats["max_clique_size"], stats["max_degree"]) == (6, 3, 4)


def test_exact_fix1():
    rep = report(["exact", "--kb", FIX1])
    assert rep["results"]["exact"]["log_z"] == pytest.approx(2.2063720977709158, abs=1e-12)
    assert rep["results"]["exact"]["method"] == "exact"
    assert rep["kb_digest"].startswith("sha256:")


def test_exact_query():
    rep = report(["exact", "--kb", FIX2, "--evidence", EVIDENCE, "--query", "Smokes(B)"])
    res = rep["results"]["exact"]
    assert list(res["marginals"]) == ["Smokes(B)"]
    assert res["log_evidence_mass"] < res["log_z"]


def test_lifted_fix3_trace():
    rep = report(["lifted", "--kb", FIX3, "--trace"])
    assert math.exp(rep["results"]["lifted"]["log_z"]) == pytest.approx(343.0, rel=1e-12)
    assert [s["rule"] for s in rep["trace"]] == ["decomposer", "base"]


def test_lifted_normalizes_first():
    kb = DATA / "fix2_const.mln"
    rep = report(["lifted", "--kb", str(kb)])
    exact = report(["exact", "--kb", str(kb)])
    assert rep["results"]["lifted"]["log_z"] == pytest.approx(exact["results"]["exact"]["log_z"], abs=1e-10)


def test_normalize_output_parses():
    rep = report(["normalize", "--kb", str(DATA / "fix2_const.mln")])
    kb = parse_kb(rep["normalized_kb"])
    assert "Smokes" in rep["normalization"]["predicate_splits"]
    assert all("Smokes_" in p.name or "Friends_" in p.name for p in kb.predicates)


def test_quantum_reduce_matches_oracle():
    rep = report(["quantum", "--kb", FIX2, "--evidence", EVIDENCE])
    oracle = report(["exact", "--kb", FIX2, "--evidence", EVIDENCE])["results"]["exact"]["marginals"]
    mine = rep["results"]["thermal"]
    assert mine["evidence_mechanism"] == "reduce"
    for atom, p in oracle.items():
        assert abs(mine["marginals"][atom] - p) < 1e-12
    assert rep["hamiltonian"]["n"] == 5


def test_quantum_clamp():
    rep = report(["quantum", "--kb", FIX2, "--evidence", EVIDENCE, "--clamp", "20"])
    oracle = report(["exact", "--kb", FIX2, "--evidence", EVIDENCE])["results"]["exact"]["marginals"]
    for atom, p in oracle.items():
        assert abs(rep["results"]["thermal"]["marginals"][atom] - p) < 1e-3
    assert rep["hamiltonian"]["n"] == 6


def test_complexity_command():
    rep = report(["complexity", "--kb", FIX2])
    c = rep["complexity"]
    assert c["bound_value"] < c["classical_reference"]
    assert c["label"] == "upper-bound shape, constants unspecified"


def test_compare_fix1():
    rep = report(["compare", "--kb", FIX1, "--chains", "64", "--seed", "3"])
    res = rep["results"]
    for a in ("exact", "lifted", "thermal"):
        for b in ("exact", "lifted", "thermal"):
            assert abs(res[a]["log_z"] - res[b]["log_z"]) < 1e-9
    assert abs(res["ais"]["log_z"] - res["exact"]["log_z"]) <= 3 * res["ais"]["std_error"]


def test_compare_zero_weights(tmp_path):
    kb = tmp_path / "zero.mln"
    kb.write_text((DATA / "fix2.mln").read_text().replace("1.1 ", "0.0 ").replace("0.7 ", "0 "))
    res = report(["compare", "--kb", str(kb), *FAST])["results"]
    for method in ("exact", "lifted", "thermal"):
        assert res[method]["log_z"] == pytest.approx(6 * math.log(2), abs=1e-12)
    assert res["ais"]["log_z"] == 6 * math.log(2)


def test_compare_with_evidence():
    rep = report(["compare", "--kb", FIX2, "--evidence", EVIDENCE, "--samples", "20000", "--chains", "8"])
    res = rep["results"]
    assert "skipped" in res["lifted"]
    for atom, p in res["exact"]["marginals"].items():
        assert abs(res["mcmc"]["marginals"][atom] - p) < 0.02
        assert abs(res["thermal"]["marginals"][atom] - p) < 1e-9


# --- exit codes ------------------------------------------------------------

def test_unknown_subcommand():
    code, out, err = run(["bogus"])
    assert code == 1 and out == "" and "usage" in err


def test_missing_subcommand_and_flags():
    assert run([])[0] == 1
    assert run(["exact"])[0] == 1
    assert run(["exact", "--kb", str(DATA / "missing.mln")])[0] == 1
    assert run(["mcmc", "--kb", FIX1, "--samples", "0"])[0] == 1
    assert run(["complexity", "--kb", FIX1, "--epsilon", "2"])[0] == 1


def test_model_errors(tmp_path):
    bad = tmp_path / "bad.mln"
    bad.write_text("domain d = {A}\n0.5 S(x)\n")
    code, _, err = run(["validate", "--kb", str(bad)])
    assert code == 2 and "unknown predicate S" in err
    ev = tmp_path / "ev.db"
    ev.write_text("Smokes(x) = true\n")
    assert run(["exact", "--kb", FIX2, "--evidence", str(ev)])[0] == 2
    assert run(["exact", "--kb", FIX2, "--evidence", EVIDENCE, "--query", "Smokes(A)"])[0] == 2


def test_resource_limits():
    assert run(["ground", "--kb", FIX2, "--max-atoms", "3"])[0] == 3
    assert run(["exact", "--kb", FIX2, "--limit", "4"])[0] == 3
    assert run(["lifted", "--kb", FIX2, "--max-branches", "2"])[0] == 3


# --- report properties -----------------------------------------------------

@pytest.mark.parametrize("argv", INVOCATIONS, ids=lambda a: "-".join(a[:1] + a[3:5]))
def test_reports_validate_and_are_deterministic(argv):
    first = run(argv)
    second = run(argv)
    assert first[0] == 0, first[2]
    assert first[1] == second[1]
    doc = json.loads(first[1])
    jsonschema.validate(doc, SCHEMA)
    assert doc["schema_version"] == "1.0"
    for method, res in doc["results"].items():
        assert res["method"] == method


def test_timing_is_opt_in():
    assert "timing_ms" not in report(["exact", "--kb", FIX1])
    assert "exact" in report(["exact", "--kb", FIX1, "--timing"])["timing_ms"]


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qmln.cli", "stats", "--kb", FIX1],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["stats"]["num_nodes"] == 2
