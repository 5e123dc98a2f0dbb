"""Brute-force inference by enumerating all 2^n worlds in log space."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import EvidenceError, MLNError, ResourceLimitError
from .grounding import GroundNetwork, assignment_index, worlds_array

DEFAULT_ENUMERATION_LIMIT = 24
CHUNK_BITS = 16
METHODS = ("exact", "ais", "lifted", "thermal")


@dataclass
class PartitionEstimate:
    log_z: float
    method: str
    std_error: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method}")
        if not math.isfinite(self.log_z):
            raise ValueError("log_z must be finite")

    @property
    def stochastic(self) -> bool:
        return self.method == "ais" or self.std_error is not None

    def as_dict(self) -> dict:
        return {"log_z": self.log_z, "method": self.method, "std_error": self.std_error,
                "diagnostics": self.diagnostics}


class Evidence(dict):
    """Ground atom -> truth value. Keys are resolved against an atom table on use."""

    def resolve(self, table) -> dict[int, bool]:
        out: dict[int, bool] = {}
        for atom, value in self.items():
            try:
                i = table.lookup(atom)
            except MLNError as exc:
                raise EvidenceError(str(exc)) from None
            if i in out and out[i] != bool(value):
                raise EvidenceError(f"contradictory evidence for {table.atoms[i]}")
            out[i] = bool(value)
        return out


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("QMLN_THREADS", "1")))
    except ValueError:
        return 1


def _check_limit(n: int, limit: int):
    if n > limit:
        raise ResourceLimitError(f"{n} atoms exceed the enumeration limit of {limit}")


def _chunk_scores(net: GroundNetwork, start: int, stop: int) -> np.ndarray:
    bits = worlds_array(net.n, start, stop)
    score = np.full(len(bits), float(net.log_offset))
    for c in net.cliques:
        score += c.weight * c.sat_table[assignment_index(bits, c.support)]
    return score


def _chunks(n: int):
    total = 2 ** n
    size = 2 ** min(n, CHUNK_BITS)
    return [(s, min(s + size, total)) for s in range(0, total, size)]


def world_scores(net: GroundNetwork, limit: int = DEFAULT_ENUMERATION_LIMIT) -> np.ndarray:
    """Unnormalized log weight sum_j w_j N(f_j, w) of every world, indexed by world code."""
    _check_limit(net.n, limit)
    return np.concatenate([_chunk_scores(net, a, b) for a, b in _chunks(net.n)])


def _lse_chunks(net: GroundNetwork, mask_fn=None) -> float:
    def one(bounds):
        a, b = bounds
        s = _chunk_scores(net, a, b)
        if mask_fn is not None:
            s = np.where(mask_fn(a, b), s, -np.inf)
        return logsumexp(s)

    chunks = _chunks(net.n)
    workers = min(thread_count(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            partial = list(pool.map(one, chunks))
    else:
        partial = [one(c) for c in chunks]
    # fixed left-to-right reduction keeps the result independent of thread count
    return float(logsumexp(np.array(partial)))


def log_partition_exact(net: GroundNetwork, limit: int = DEFAULT_ENUMERATION_LIMIT) -> PartitionEstimate:
    _check_limit(net.n, limit)
    return PartitionEstimate(_lse_chunks(net), "exact", None, {"worlds": 2 ** net.n})


def world_log_probs(net: GroundNetwork, limit: int = DEFAULT_ENUMERATION_LIMIT) -> np.ndarray:
    scores = world_scores(net, limit)
    return scores - logsumexp(scores)


def world_log_prob(net: GroundNetwork, world, limit: int = DEFAULT_ENUMERATION_LIMIT) -> float:
    from .grounding import clique_score
    world = np.asarray(world, dtype=bool)
    if len(world) != net.n:
        raise MLNError(f"world has {len(world)} bits, expected {net.n}")
    return clique_score(net, world) - log_partition_exact(net, limit).log_z


def _evidence_mask(resolved: Mapping[int, bool]):
    def mask(a, b):
        codes = np.arange(a, b, dtype=np.int64)
        keep = np.ones(b - a, dtype=bool)
        for i, v in resolved.items():
            keep &= ((codes >> i) & 1).astype(bool) == v
        return keep
    return mask


def log_evidence_mass(net: GroundNetwork, evidence: Mapping, limit: int = DEFAULT_ENUMERATION_LIMIT) -> float:
    """log of the unnormalized mass of worlds consistent with `evidence`."""
    _check_limit(net.n, limit)
    resolved = Evidence(evidence).resolve(net.atom_table)
    return _lse_chunks(net, _evidence_mask(resolved))


def query_marginal_exact(net: GroundNetwork, query_atom, evidence: Optional[Mapping] = None,
                         limit: int = DEFAULT_ENUMERATION_LIMIT) -> float:
    """P(query = True | evidence) by enumeration."""
    evidence = Evidence(evidence or {})
    resolved = evidence.resolve(net.atom_table)
    q = net.atom_table.lookup(query_atom)
    if q in resolved:
        raise EvidenceError(f"query atom {net.atom_table.atoms[q]} is in the evidence")
    _check_limit(net.n, limit)
    denom = _lse_chunks(net, _evidence_mask(resolved))
    num = _lse_chunks(net, _evidence_mask({**resolved, q: True}))
    return float(math.exp(num - denom))


def marginals_exact(net: GroundNetwork, evidence: Optional[Mapping] = None,
                    limit: int = DEFAULT_ENUMERATION_LIMIT) -> np.ndarray:
    """Conditional P(atom = True | evidence) for every atom (evidence atoms report their value)."""
    resolved = Evidence(evidence or {}).resolve(net.atom_table)
    logp = world_log_probs(net, limit)
    bits = worlds_array(net.n)
    keep = np.ones(len(logp), dtype=bool)
    for i, v in resolved.items():
        keep &= bits[:, i] == v
    p = np.where(keep, np.exp(logp), 0.0)
    p /= p.sum()
    return p @ bits
