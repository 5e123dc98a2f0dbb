import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kbgen import random_kb
from qmln.errors import MLNError, ResourceLimitError
from qmln.grounding import (
    GroundAtomTable, clique_score, count_true_groundings, ground, network_stats,
    world_from_assignment, worlds_array,
)
from qmln.logic import GroundAtom, parse_kb


def test_fix1_ground(fix1):
    net = ground(fix1)
    assert net.n == 2
    assert len(net.cliques) == 2
    for c in net.cliques:
        assert len(c.support) == 1
        assert list(c.sat_table) == [False, True]


def test_fix3_ground(fix3):
    net = ground(fix3)
    assert net.n == 6
    assert len(net.cliques) == 3
    for c in net.cliques:
        assert len(c.support) == 2
        assert c.sat_table.sum() == 3


def test_fix2_ground(fix2):
    net = ground(fix2)
    assert net.n == 6
    f1 = [c for c in net.cliques if c.formula_id == 0]
    f2 = [c for c in net.cliques if c.formula_id == 1]
    # one clique per binding: 2*2 for f1, 2 for f2; x=y collapses Smokes(x), Smokes(y)
    assert len(f1) == 4 and len(f2) == 2
    assert sorted(len(c.support) for c in f1) == [2, 2, 3, 3]
    assert all(len(c.support) == 1 for c in f2)


def test_atom_order(fix2):
    table = GroundAtomTable.from_kb(fix2)
    assert [str(a) for a in table.atoms] == [
        "Friends(A,A)", "Friends(A,B)", "Friends(B,A)", "Friends(B,B)", "Smokes(A)", "Smokes(B)"]
    assert table.lookup("Smokes(B)") == 5
    assert table.lookup(GroundAtom("Friends", ("B", "A"))) == 2
    with pytest.raises(MLNError):
        table.lookup("Smokes(C)")


def test_count_true_groundings(fix1, fix2):
    world = world_from_assignment(GroundAtomTable.from_kb(fix1), {"S(A)": True})
    assert count_true_groundings(fix1, 0, world) == 1
    table = GroundAtomTable.from_kb(fix2)
    world = world_from_assignment(table, {a: True for a in table.atoms if a.predicate == "Friends"})
    world[table.lookup("Smokes(A)")] = True
    assert count_true_groundings(fix2, 0, world) == 3
    with pytest.raises(MLNError):
        count_true_groundings(fix2, 5, world)


def test_stats(fix1, fix2, fix3):
    assert network_stats(ground(fix1)).as_dict() == \
        {"num_nodes": 2, "max_clique_size": 1, "max_degree": 0, "num_cliques": 2}
    s2 = network_stats(ground(fix2))
    assert (s2.num_nodes, s2.max_clique_size, s2.max_degree) == (6, 3, 4)
    s3 = network_stats(ground(fix3))
    assert (s3.num_nodes, s3.max_clique_size, s3.max_degree) == (6, 2, 1)


def test_atom_limit(fix2):
    with pytest.raises(ResourceLimitError):
        ground(fix2, max_atoms=5)


def test_ground_accepts_constants():
    kb = parse_kb("domain d = {A, B}\npredicate S(d)\n0.5 S(A)\n")
    net = ground(kb)
    assert len(net.cliques) == 1 and net.cliques[0].support == (0,)


# --- properties -----------------------------------------------------------

@given(st.integers(0, 10 ** 6))
def test_structure_invariants(seed):
    kb = random_kb(seed, max_atoms=20)
    net = ground(kb)
    assert net.n == sum(kb.num_groundings(p.name) for p in kb.predicates)
    exponent = max(kb.max_atoms_per_formula, max(p.arity for p in kb.predicates))
    assert net.n <= len(kb.predicates) * kb.max_domain_size ** exponent
    stats = network_stats(net)
    # equality needs a binding with pairwise distinct atoms, which small domains may not allow
    assert stats.max_clique_size <= kb.max_atoms_per_formula
    for fi, wf in enumerate(kb.formulas):
        expected = math.prod(kb.domain_size(d) for d in kb.variable_domains(wf.formula).values())
        assert sum(c.formula_id == fi for c in net.cliques) == expected
    for c in net.cliques:
        assert len(c.sat_table) == 2 ** len(c.support)
        assert len(set(c.support)) == len(c.support)
        assert all(0 <= a < net.n for a in c.support)


@given(st.integers(0, 10 ** 6))
def test_clique_formula_consistency(seed):
    kb = random_kb(seed, max_atoms=12)
    net = ground(kb)
    for world in worlds_array(net.n):
        direct = sum(wf.weight * count_true_groundings(kb, j, world, net.atom_table)
                     for j, wf in enumerate(kb.formulas))
        assert clique_score(net, world) == pytest.approx(direct, abs=1e-9)


@given(st.integers(0, 10 ** 6))
def test_count_bounds(seed):
    kb = random_kb(seed, max_atoms=10)
    net = ground(kb)
    rng = np.random.default_rng(seed)
    world = rng.random(net.n) < 0.5
    for j, wf in enumerate(kb.formulas):
        total = math.prod(kb.domain_size(d) for d in kb.variable_domains(wf.formula).values())
        assert 0 <= count_true_groundings(kb, j, world) <= total
