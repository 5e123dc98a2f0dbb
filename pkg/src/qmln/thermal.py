"""Diagonal k-local Hamiltonian of a ground network and its thermal state.

Every clique becomes a local term equal to -w/beta times the projector onto
the satisfying assignments of its support, with beta = max |w|. All terms are
diagonal in the truth-assignment basis and commute, so exp(-beta H) is just
elementwise exponentiation of world energies and the thermal state can be
enumerated exactly for small n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import EvidenceError
from .exact import DEFAULT_ENUMERATION_LIMIT, Evidence, PartitionEstimate, _check_limit
from .grounding import Clique, GroundAtomTable, GroundNetwork, assignment_index, worlds_array

BOUND_LABEL = "upper-bound shape, constants unspecified"


@dataclass(frozen=True, eq=False)
class LocalTerm:
    support: tuple[int, ...]
    diagonal: np.ndarray
    kind: str = "formula"  # or "clamp"

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.diagonal))) if len(self.diagonal) else 0.0


@dataclass(frozen=True, eq=False)
class DiagonalHamiltonian:
    n: int
    beta: float
    terms: tuple[LocalTerm, ...]
    # log-space constant carried over from evidence reduction
    log_offset: float = 0.0

    def energies(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        bits = worlds_array(self.n, start, stop)
        e = np.zeros(len(bits))
        for t in self.terms:
            e += t.diagonal[assignment_index(bits, t.support)]
        return e


def build_hamiltonian(net: GroundNetwork) -> DiagonalHamiltonian:
    beta = net.max_abs_weight()
    if beta == 0.0:
        beta = 1.0
    terms = tuple(LocalTerm(c.support, np.where(c.sat_table, -c.weight / beta, 0.0))
                  for c in net.cliques)
    return DiagonalHamiltonian(net.n, beta, terms, net.log_offset)


def energy_of_world(h: DiagonalHamiltonian, world) -> float:
    world = np.asarray(world, dtype=bool)
    if len(world) != h.n:
        raise ValueError(f"world has {len(world)} bits, expected {h.n}")
    total = 0.0
    for t in h.terms:
        idx = sum(1 << i for i, a in enumerate(t.support) if world[a])
        total += float(t.diagonal[idx])
    return total


def thermal_distribution(h: DiagonalHamiltonian, limit: int = DEFAULT_ENUMERATION_LIMIT):
    """World probabilities <w|exp(-beta H)|w>/Z and the matching log Z estimate."""
    _check_limit(h.n, limit)
    log_weights = -h.beta * h.energies()
    log_z_diag = float(logsumexp(log_weights))
    probs = np.exp(log_weights - log_z_diag)
    estimate = PartitionEstimate(log_z_diag + h.log_offset, "thermal", None,
                                 {"beta": h.beta, "terms": len(h.terms), "worlds": 2 ** h.n})
    return probs, estimate


def sample_thermal(h: DiagonalHamiltonian, count: int, seed: int,
                   limit: int = DEFAULT_ENUMERATION_LIMIT) -> np.ndarray:
    """Exact inverse-CDF samples of the thermal state measured in the computational basis."""
    _check_limit(h.n, limit)
    if count == 0:
        return np.zeros((0, h.n), dtype=bool)
    probs, _ = thermal_distribution(h, limit)
    cdf = np.cumsum(probs)
    rng = np.random.Generator(np.random.PCG64(seed))
    codes = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
    codes = np.minimum(codes, len(probs) - 1)
    return ((codes[:, None] >> np.arange(h.n)) & 1).astype(bool)


# ---------------------------------------------------------------------------
# Evidence
# ---------------------------------------------------------------------------

def clamp_evidence(h: DiagonalHamiltonian, evidence: Mapping[int, bool], strength: float) -> DiagonalHamiltonian:
    """Add a +strength energy penalty on the assignment contradicting each evidence bit.

    `evidence` maps atom indices to truth values (resolve names with the atom
    table first).
    """
    if not strength > 0:
        raise ValueError("clamping strength must be positive")
    terms = list(h.terms)
    for atom, value in evidence.items():
        if not 0 <= atom < h.n:
            raise ValueError(f"atom index {atom} out of range")
        diag = np.array([strength, 0.0]) if value else np.array([0.0, strength])
        terms.append(LocalTerm((int(atom),), diag, "clamp"))
    return DiagonalHamiltonian(h.n, h.beta, tuple(terms), h.log_offset)


def reduce_by_evidence(net: GroundNetwork, evidence: Mapping) -> GroundNetwork:
    """Restrict every clique table by the evidence and drop the evidence atoms.

    Cliques whose reduced table is constantly True fold their weight into
    `log_offset`; constantly False cliques contribute nothing and are dropped.
    """
    resolved = Evidence(evidence).resolve(net.atom_table)
    if not resolved:
        return net
    keep = [i for i in range(net.n) if i not in resolved]
    new_index = {old: new for new, old in enumerate(keep)}
    table = GroundAtomTable([net.atom_table.atoms[i] for i in keep])
    offset = net.log_offset
    cliques = []
    for c in net.cliques:
        free_pos = [p for p, a in enumerate(c.support) if a not in resolved]
        fixed = sum(1 << p for p, a in enumerate(c.support) if resolved.get(a, False))
        idx = np.arange(2 ** len(free_pos))
        full = np.full(len(idx), fixed, dtype=np.int64)
        for k, p in enumerate(free_pos):
            full |= ((idx >> k) & 1) << p
        reduced = c.sat_table[full]
        if reduced.all():
            offset += c.weight
        elif reduced.any():
            support = tuple(new_index[c.support[p]] for p in free_pos)
            cliques.append(Clique(c.formula_id, support, c.weight, reduced))
    meta = dict(net.metadata)
    meta["evidence"] = {str(net.atom_table.atoms[i]): v for i, v in sorted(resolved.items())}
    return GroundNetwork(table, tuple(cliques), net.formula_weights, offset, meta)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def conditional_distribution(probs: np.ndarray, n: int, evidence: Mapping[int, bool]) -> np.ndarray:
    """Condition a full world distribution on evidence (inconsistent worlds get 0)."""
    bits = worlds_array(n)
    keep = np.ones(len(probs), dtype=bool)
    for i, v in evidence.items():
        keep &= bits[:, i] == v
    out = np.where(keep, probs, 0.0)
    total = out.sum()
    if total == 0:
        raise EvidenceError("evidence has zero probability")
    return out / total


# ---------------------------------------------------------------------------
# Complexity estimator
# ---------------------------------------------------------------------------

@dataclass
class ComplexityReport:
    n: int
    d: int
    beta: float
    log_z: float
    epsilon: float
    kappa: float
    bound_value: float
    classical_reference: float
    log_bound_value: float
    log_classical_reference: float
    label: str = BOUND_LABEL
    notes: dict = field(default_factory=dict)

    @property
    def log_gap(self) -> float:
        """ln(classical_reference / bound_value)."""
        return self.log_classical_reference - self.log_bound_value

    def as_dict(self) -> dict:
        return {
            "n": self.n, "d": self.d, "beta": self.beta, "log_z": self.log_z,
            "epsilon": self.epsilon, "kappa": self.kappa,
            "bound_value": self.bound_value, "classical_reference": self.classical_reference,
            "log_bound_value": self.log_bound_value,
            "log_classical_reference": self.log_classical_reference,
            "label": self.label,
        }


def complexity_bound(n: int, d: int, beta: float, log_z: float, epsilon: float,
                     kappa: float = 2.0) -> ComplexityReport:
    """Gate-count shape sqrt(d^n beta / Z) * polylog(sqrt(d^n beta / Z) / eps).

    The polylog is taken as max(1, log2(.))^kappa with unit prefactor. The
    classical reference is 1/(delta eps^2) with spectral gap delta = 1/d^n.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if d < 2:
        raise ValueError("local dimension d must be >= 2")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if n < 0:
        raise ValueError("n must be non-negative")
    log_f = 0.5 * (n * math.log(d) + math.log(beta) - log_z)
    polylog = max(1.0, (log_f - math.log(epsilon)) / math.log(2.0))
    log_bound = log_f + kappa * math.log(polylog)
    log_classical = n * math.log(d) - 2.0 * math.log(epsilon)
    return ComplexityReport(
        n=n, d=d, beta=beta, log_z=log_z, epsilon=epsilon, kappa=kappa,
        bound_value=_safe_exp(log_bound), classical_reference=_safe_exp(log_classical),
        log_bound_value=log_bound, log_classical_reference=log_classical,
    )


def _safe_exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf
