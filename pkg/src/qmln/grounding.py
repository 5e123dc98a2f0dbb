"""Ground Markov network construction and structure statistics."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import MLNError, ResourceLimitError
from .logic import (
    GroundAtom, KnowledgeBase, atoms, evaluate, evaluate_ground_formula,
    free_variables, ground_atom,
)

DEFAULT_MAX_ATOMS = 2 ** 20


class GroundAtomTable:
    """Ordered ground atoms with a reverse index."""

    def __init__(self, atoms: Sequence[GroundAtom]):
        self.atoms: tuple[GroundAtom, ...] = tuple(atoms)
        self.index: dict[GroundAtom, int] = {a: i for i, a in enumerate(self.atoms)}
        if len(self.index) != len(self.atoms):
            raise ValueError("duplicate ground atom")

    @classmethod
    def from_kb(cls, kb: KnowledgeBase) -> "GroundAtomTable":
        atoms = []
        for pred in sorted(kb.predicates, key=lambda p: p.name):
            consts = [kb.domain_map[d].constants for d in pred.argument_domains]
            atoms.extend(GroundAtom(pred.name, args) for args in itertools.product(*consts))
        return cls(atoms)

    def __len__(self):
        return len(self.atoms)

    def __getitem__(self, atom: GroundAtom) -> int:
        return self.index[atom]

    def __contains__(self, atom) -> bool:
        return atom in self.index

    def lookup(self, atom) -> int:
        """Resolve a GroundAtom, its string form "P(A,B)", or an index."""
        if isinstance(atom, (int, np.integer)):
            if not 0 <= atom < len(self.atoms):
                raise MLNError(f"atom index {atom} out of range")
            return int(atom)
        if isinstance(atom, str):
            atom = parse_ground_atom(atom)
        try:
            return self.index[atom]
        except KeyError:
            raise MLNError(f"unknown ground atom {atom}") from None

    def __eq__(self, other):
        return isinstance(other, GroundAtomTable) and self.atoms == other.atoms

    def __repr__(self):
        return f"GroundAtomTable({len(self.atoms)} atoms)"


def parse_ground_atom(text: str) -> GroundAtom:
    text = text.strip()
    if not text.endswith(")") or "(" not in text:
        raise MLNError(f"malformed ground atom {text!r}")
    name, rest = text[:-1].split("(", 1)
    args = tuple(a.strip() for a in rest.split(","))
    return GroundAtom(name.strip(), args)


@dataclass(frozen=True, eq=False)
class Clique:
    formula_id: int
    support: tuple[int, ...]
    weight: float
    sat_table: np.ndarray  # bool, length 2**len(support); bit i of index <-> support[i]

    def __eq__(self, other):
        return (isinstance(other, Clique) and self.formula_id == other.formula_id
                and self.support == other.support and self.weight == other.weight
                and np.array_equal(self.sat_table, other.sat_table))

    def __hash__(self):
        return hash((self.formula_id, self.support, self.weight))


@dataclass(frozen=True, eq=False)
class GroundNetwork:
    atom_table: GroundAtomTable
    cliques: tuple[Clique, ...]
    formula_weights: tuple[float, ...]
    # additive log-space constant (from cliques fixed True by evidence)
    log_offset: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.atom_table)

    def scaled(self, factor: float) -> "GroundNetwork":
        """Same network with every weight multiplied by `factor`."""
        cliques = tuple(Clique(c.formula_id, c.support, c.weight * factor, c.sat_table)
                        for c in self.cliques)
        return GroundNetwork(self.atom_table, cliques,
                             tuple(w * factor for w in self.formula_weights),
                             self.log_offset * factor, dict(self.metadata))

    def max_abs_weight(self) -> float:
        return max((abs(c.weight) for c in self.cliques), default=0.0)

    def __eq__(self, other):
        return (isinstance(other, GroundNetwork) and self.atom_table == other.atom_table
                and self.cliques == other.cliques
                and self.formula_weights == other.formula_weights
                and self.log_offset == other.log_offset)


@dataclass(frozen=True)
class NetworkStats:
    num_nodes: int
    max_clique_size: int
    max_degree: int
    num_cliques: int

    def as_dict(self):
        return {"num_nodes": self.num_nodes, "max_clique_size": self.max_clique_size,
                "max_degree": self.max_degree, "num_cliques": self.num_cliques}


def bindings(kb: KnowledgeBase, formula) -> tuple[list[str], list[tuple[str, ...]]]:
    """Variables of `formula` and every tuple of constants they range over."""
    var_doms = free_variables(formula, kb)
    names = [v for v, _ in var_doms]
    return names, list(itertools.product(*(kb.domain_map[d].constants for _, d in var_doms)))


def _sat_table(formula, support_atoms: list[GroundAtom], binding: Mapping[str, str]) -> np.ndarray:
    s = len(support_atoms)
    idx = np.arange(2 ** s)
    columns = {a: ((idx >> i) & 1).astype(bool) for i, a in enumerate(support_atoms)}
    table = evaluate(formula, lambda atom: columns[ground_atom(atom, binding)])
    return np.broadcast_to(np.asarray(table, dtype=bool), (2 ** s,)).copy()


def ground(kb: KnowledgeBase, max_atoms: int = DEFAULT_MAX_ATOMS) -> GroundNetwork:
    """Ground every formula over every binding of its variables.

    Also accepts KBs whose formulas mention constants; such atoms simply
    resolve to the named ground atom.
    """
    n = sum(kb.num_groundings(p.name) for p in kb.predicates)
    if n > max_atoms:
        raise ResourceLimitError(f"{n} ground atoms exceed the limit of {max_atoms}")
    table = GroundAtomTable.from_kb(kb)
    cliques: list[Clique] = []
    cache: dict[tuple, np.ndarray] = {}
    for fid, wf in enumerate(kb.formulas):
        names, tuples = bindings(kb, wf.formula)
        leaves = list(dict.fromkeys(atoms(wf.formula)))
        for values in tuples:
            binding = dict(zip(names, values))
            support_atoms = list(dict.fromkeys(ground_atom(a, binding) for a in leaves))
            support = tuple(table[a] for a in support_atoms)
            # the table only depends on which leaves collapse together
            key = (fid, tuple(support_atoms.index(ground_atom(a, binding)) for a in leaves))
            sat = cache.get(key)
            if sat is None:
                sat = _sat_table(wf.formula, support_atoms, binding)
                sat.setflags(write=False)
                cache[key] = sat
            cliques.append(Clique(fid, support, float(wf.weight), sat))
    return GroundNetwork(table, tuple(cliques), tuple(float(wf.weight) for wf in kb.formulas))


def count_true_groundings(kb: KnowledgeBase, formula_id: int, world, table: Optional[GroundAtomTable] = None) -> int:
    """N(f, world): number of bindings under which formula `formula_id` is True.

    Evaluated directly from the formula tree, independently of clique tables.
    """
    if not 0 <= formula_id < len(kb.formulas):
        raise MLNError(f"unknown formula id {formula_id}")
    table = table or GroundAtomTable.from_kb(kb)
    if len(world) != len(table):
        raise MLNError(f"world has {len(world)} bits, expected {len(table)}")
    formula = kb.formulas[formula_id].formula
    names, tuples = bindings(kb, formula)
    return sum(evaluate_ground_formula(formula, dict(zip(names, values)), world, table)
               for values in tuples)


def clique_score(net: GroundNetwork, world) -> float:
    """sum over cliques of weight * sat_table[restriction of world], plus the log offset."""
    world = np.asarray(world, dtype=bool)
    total = net.log_offset
    for c in net.cliques:
        idx = 0
        for i, a in enumerate(c.support):
            if world[a]:
                idx |= 1 << i
        if c.sat_table[idx]:
            total += c.weight
    return total


def network_stats(net: GroundNetwork) -> NetworkStats:
    neighbors: list[set[int]] = [set() for _ in range(net.n)]
    for c in net.cliques:
        for a in c.support:
            neighbors[a].update(b for b in c.support if b != a)
    return NetworkStats(
        num_nodes=net.n,
        max_clique_size=max((len(c.support) for c in net.cliques), default=0),
        max_degree=max((len(s) for s in neighbors), default=0),
        num_cliques=len(net.cliques),
    )


def network_to_dict(net: GroundNetwork) -> dict:
    """Stable JSON-ready dump of a ground network."""
    return {
        "atoms": [str(a) for a in net.atom_table.atoms],
        "formula_weights": list(net.formula_weights),
        "log_offset": net.log_offset,
        "cliques": [
            {"formula_id": c.formula_id, "support": list(c.support), "weight": c.weight,
             "sat_table": [int(b) for b in c.sat_table]}
            for c in net.cliques
        ],
    }


def world_from_assignment(table: GroundAtomTable, assignment: Mapping, default: bool = False) -> np.ndarray:
    world = np.full(len(table), default, dtype=bool)
    for atom, value in assignment.items():
        world[table.lookup(atom)] = bool(value)
    return world


def worlds_array(n: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Bit matrix of worlds with integer codes in [start, stop); bit i is atom i."""
    stop = 2 ** n if stop is None else stop
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(bool)


def assignment_index(bits: np.ndarray, support: Iterable[int]) -> np.ndarray:
    """Row-wise sat-table index of the restriction of `bits` (..., n) to `support`."""
    support = list(support)
    if not support:
        return np.zeros(bits.shape[:-1], dtype=np.int64)
    weights = (1 << np.arange(len(support), dtype=np.int64))
    return bits[..., support].astype(np.int64) @ weights
