import pytest
from hypothesis import given
from hypothesis import strategies as st

from kbgen import random_kb
from qmln.exact import log_partition_exact
from qmln.grounding import GroundAtomTable, ground
from qmln.logic import parse_kb, render_kb
from qmln.normalize import is_normal, shatter, to_normal_form

ALICE = "domain person = {Alice, Bob}\npredicate S(person)\n0.9 S(Alice)\n"


def log_z(kb):
    return log_partition_exact(ground(kb)).log_z


def test_is_normal(fix1, fix2):
    assert is_normal(fix1)
    assert is_normal(fix2)
    assert not is_normal(parse_kb("domain d = {A}\npredicate S(d)\n0.5 S(A)\n"))


def test_already_normal_is_identity(fix2):
    out, report = to_normal_form(fix2)
    assert out == fix2
    assert report.is_empty


def test_singleton_shattering():
    kb = parse_kb(ALICE)
    out, report = to_normal_form(kb)
    assert [d.constants for d in out.domains] == [("Alice",), ("Bob",)]
    assert [(p.name, p.argument_domains) for p in out.predicates] == \
        [("S_1", ("person_1",)), ("S_2", ("person_2",))]
    assert render_kb(out).splitlines()[-1] == "0.9 S_1(x1)"
    assert report.domain_splits == {"person": ["person_1", "person_2"]}
    assert log_z(out) == pytest.approx(log_z(kb), abs=1e-12)


def test_fix2_with_constant_formula(fix2):
    kb = parse_kb(render_kb(fix2) + "0.3 Smokes(A)\n")
    out, report = to_normal_form(kb)
    assert is_normal(out)
    assert abs(log_z(out) - log_z(kb)) < 1e-12
    assert set(report.predicate_splits) == {"Smokes", "Friends"}


def test_map_atom_is_a_bijection(fix2):
    kb = parse_kb(render_kb(fix2) + "0.3 Smokes(A)\n")
    out, report = to_normal_form(kb)
    before = GroundAtomTable.from_kb(kb).atoms
    after = GroundAtomTable.from_kb(out).atoms
    mapped = [report.map_atom(a) for a in before]
    assert sorted(mapped) == sorted(after)


def test_shatter_drops_empty_classes(fix1):
    res = shatter(fix1, {"person": [("A", "B"), ()]})
    assert len(res.kb.domains) == 1


# --- properties -----------------------------------------------------------

@given(st.integers(0, 10 ** 6))
def test_z_preservation(seed):
    kb = random_kb(seed, max_atoms=16, constants=True)
    out, _ = to_normal_form(kb)
    assert abs(log_z(out) - log_z(kb)) < 1e-10


@given(st.integers(0, 10 ** 6))
def test_normal_and_idempotent(seed):
    kb = random_kb(seed, max_atoms=20, constants=True)
    once, _ = to_normal_form(kb)
    twice, report = to_normal_form(once)
    assert is_normal(once)
    assert twice == once and report.is_empty


@given(st.integers(0, 10 ** 6))
def test_subdomains_partition_constants(seed):
    kb = random_kb(seed, max_atoms=20, constants=True)
    _, report = to_normal_form(kb)
    for dom, subs in report.domain_splits.items():
        merged = [c for s in subs for c in report.subdomain_constants[s]]
        assert sorted(merged) == sorted(kb.domain_map[dom].constants)
