import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kbgen import random_kb
from qmln.errors import EvidenceError
from qmln.exact import log_partition_exact, marginals_exact, world_log_probs
from qmln.grounding import count_true_groundings, ground, world_from_assignment
from qmln.logic import GroundAtom
from qmln.thermal import (
    BOUND_LABEL, build_hamiltonian, clamp_evidence, complexity_bound, conditional_distribution,
    energy_of_world, reduce_by_evidence, sample_thermal, thermal_distribution, total_variation,
)

SIGMA_07 = math.exp(0.7) / (1 + math.exp(0.7))


def test_build_fix1(fix1):
    h = build_hamiltonian(ground(fix1))
    assert h.beta == 0.7 and len(h.terms) == 2
    for t in h.terms:
        assert list(t.diagonal) == [0.0, -1.0]


def test_build_fix2(fix2):
    h = build_hamiltonian(ground(fix2))
    assert h.beta == 1.1
    f2 = [t for t, c in zip(h.terms, ground(fix2).cliques) if c.formula_id == 1]
    for t in f2:
        assert t.diagonal == pytest.approx([0.0, -0.7 / 1.1])
    assert -0.7 / 1.1 == pytest.approx(-0.63636, abs=1e-5)


def test_zero_weights(fix2):
    h = build_hamiltonian(ground(fix2).scaled(0.0))
    assert h.beta == 1.0
    assert all(not t.diagonal.any() for t in h.terms)
    probs, _ = thermal_distribution(h)
    assert np.allclose(probs, 1 / 64, atol=1e-15)


def test_energy_of_world(fix1, fix2):
    net = ground(fix2)
    table = net.atom_table
    world = world_from_assignment(table, {a: True for a in table.atoms if a.predicate == "Friends"})
    world[table.lookup("Smokes(A)")] = True
    assert count_true_groundings(fix2, 0, world) == 3
    h = build_hamiltonian(net)
    assert energy_of_world(h, world) == pytest.approx(-(1.1 * 3 + 0.7) / 1.1, abs=1e-12)
    assert energy_of_world(build_hamiltonian(ground(fix1)), [False, False]) == 0.0
    with pytest.raises(ValueError):
        energy_of_world(h, world[:3])


def test_thermal_matches_exact(fix1, fix2):
    for kb in (fix1, fix2):
        net = ground(kb)
        probs, est = thermal_distribution(build_hamiltonian(net))
        assert np.max(np.abs(probs - np.exp(world_log_probs(net)))) < 1e-12
        assert est.method == "thermal"
        assert abs(est.log_z - log_partition_exact(net).log_z) < 1e-12


def test_sample_thermal(fix1):
    h = build_hamiltonian(ground(fix1))
    samples = sample_thermal(h, 100_000, seed=8)
    assert abs(samples[:, 0].mean() - SIGMA_07) < 0.005
    assert sample_thermal(h, 0, seed=8).shape == (0, 2)
    assert np.array_equal(sample_thermal(h, 500, seed=3), sample_thermal(h, 500, seed=3))


def _clamped_tv(kb, atom, value, gamma):
    net = ground(kb)
    i = net.atom_table.lookup(atom)
    h = clamp_evidence(build_hamiltonian(net), {i: value}, gamma)
    probs, _ = thermal_distribution(h)
    oracle = conditional_distribution(np.exp(world_log_probs(net)), net.n, {i: value})
    return total_variation(probs, oracle)


@pytest.mark.parametrize("name, atom", [("fix1", "S(A)"), ("fix2", "Smokes(A)")])
def test_clamping_converges(name, atom, request):
    kb = request.getfixturevalue(name)
    tv = [_clamped_tv(kb, atom, True, g) for g in (2.0, 5.0, 20.0)]
    assert tv[2] < tv[1] < tv[0]
    assert tv[2] < 1e-3


def test_clamping_fix1_query(fix1):
    net = ground(fix1)
    h = clamp_evidence(build_hamiltonian(net), {0: True}, 20.0)
    probs, _ = thermal_distribution(h)
    # marginal of S(B) under the clamped state against the exact conditional
    p_b = probs[[2, 3]].sum()
    exact_b = marginals_exact(net, {"S(A)": True})[1]
    assert abs(p_b - exact_b) < 1e-3
    assert h.n == net.n and h.beta == 0.7


def test_clamping_rejects_nonpositive_strength(fix1):
    h = build_hamiltonian(ground(fix1))
    with pytest.raises(ValueError):
        clamp_evidence(h, {0: True}, 0.0)


def test_reduce_fix2(fix2):
    net = ground(fix2)
    reduced = reduce_by_evidence(net, {"Smokes(A)": True})
    assert reduced.n == 5
    assert reduced.max_abs_weight() <= 1.1
    oracle = marginals_exact(net, {"Smokes(A)": True})
    probs, _ = thermal_distribution(build_hamiltonian(reduced))
    bits = np.array(list(itertools.product([0, 1], repeat=5)))[:, ::-1]
    marg = probs @ bits
    for j, atom in enumerate(reduced.atom_table.atoms):
        assert abs(marg[j] - oracle[net.atom_table.lookup(atom)]) < 1e-12


def test_reduce_all_atoms(fix2):
    net = ground(fix2)
    table = net.atom_table
    world = np.zeros(net.n, bool)
    world[[1, 4]] = True
    evidence = {a: bool(v) for a, v in zip(table.atoms, world)}
    reduced = reduce_by_evidence(net, evidence)
    assert reduced.n == 0
    direct = sum(wf.weight * count_true_groundings(fix2, j, world, table) for j, wf in enumerate(fix2.formulas))
    assert log_partition_exact(reduced).log_z == pytest.approx(direct, abs=1e-12)


def test_reduce_empty_evidence(fix2):
    net = ground(fix2)
    assert reduce_by_evidence(net, {}) == net


def test_reduce_rejects_contradiction(fix2):
    with pytest.raises(EvidenceError):
        reduce_by_evidence(ground(fix2), {"Smokes(A)": True, GroundAtom("Smokes", ("A",)): False})


def test_complexity_reference_point():
    rep = complexity_bound(4, 2, 1.0, math.log(16), 0.01, 2.0)
    assert rep.bound_value == pytest.approx(math.log2(100) ** 2, abs=1e-6)
    assert rep.bound_value == pytest.approx(44.14, abs=5e-3)
    assert rep.classical_reference == pytest.approx(16 / 1e-4)
    assert rep.label == BOUND_LABEL


@pytest.mark.parametrize("kwargs", [
    dict(epsilon=0.0), dict(epsilon=1.0), dict(d=1), dict(beta=0.0),
])
def test_complexity_domain_errors(kwargs):
    args = dict(n=4, d=2, beta=1.0, log_z=1.0, epsilon=0.1)
    args.update(kwargs)
    with pytest.raises(ValueError):
        complexity_bound(**args)


def test_complexity_monotone():
    base = dict(n=6, d=2, beta=1.0, log_z=3.0, epsilon=0.01)
    for key, values, sign in (("beta", [0.5, 1, 2, 4, 8], 1), ("n", [4, 6, 8, 10, 12], 1),
                              ("log_z", [0.5, 1, 2, 3, 4], -1)):
        bounds = [complexity_bound(**{**base, key: v}).bound_value for v in values]
        assert all(sign * (b - a) > 0 for a, b in zip(bounds, bounds[1:]))


def test_complexity_gap_fix2(fix2):
    net = ground(fix2)
    rep = complexity_bound(net.n, 2, 1.1, log_partition_exact(net).log_z, 0.01)
    assert rep.bound_value < rep.classical_reference / 1000
    assert rep.classical_reference == pytest.approx(2 ** 6 / 1e-4)
    assert rep.log_gap > 0


# --- properties -----------------------------------------------------------

@given(st.integers(0, 10 ** 6))
def test_hamiltonian_invariants(seed):
    kb = random_kb(seed, max_atoms=12)
    net = ground(kb)
    h = build_hamiltonian(net)
    for t in h.terms:
        assert t.norm <= 1.0 + 1e-15
        assert len(t.support) <= kb.max_atoms_per_formula
    probs, est = thermal_distribution(h)
    assert np.max(np.abs(probs - np.exp(world_log_probs(net)))) < 1e-12
    assert abs(est.log_z - log_partition_exact(net).log_z) < 1e-12
    energies = h.energies()
    assert np.all(np.abs(energies) <= len(h.terms) + 1e-12)


@given(st.integers(0, 10 ** 6), st.data())
def test_reduce_never_increases_cost(seed, data):
    net = ground(random_kb(seed, max_atoms=12))
    idx = data.draw(st.lists(st.integers(0, net.n - 1), unique=True, max_size=net.n))
    evidence = {net.atom_table.atoms[i]: data.draw(st.booleans()) for i in idx}
    reduced = reduce_by_evidence(net, evidence)
    assert reduced.n == net.n - len(evidence)
    assert len(reduced.cliques) <= len(net.cliques)
    assert reduced.max_abs_weight() <= net.max_abs_weight()
    if reduced.n:
        oracle = marginals_exact(net, evidence)
        mine = marginals_exact(reduced)
        for j, atom in enumerate(reduced.atom_table.atoms):
            assert abs(mine[j] - oracle[net.atom_table.lookup(atom)]) < 1e-12
