"""Lifted computation of log Z on normal MLNs.

The dispatcher simplifies the first-order model before anything is grounded:

1. fully ground (every domain has one constant): ground and call the base sampler;
2. decomposer: Z(M) = Z(M[X/x]) ** |D_x|;
3. isolated variable (off by default): sum out one predicate per count vector;
4. generalized binomial on a singleton atom: sum over how many groundings are True;
5. fallback: enumerate every assignment of the atom with the fewest groundings.

Conditioning a predicate never introduces constants. The affected domains are
shattered into classes, the specialized copies of the predicate are replaced
by truth values, decided formulas are removed (True ones add w times their
number of groundings), and variables that vanish from a formula multiply its
weight by their domain size. Predicates left without formulas are summed out
as a factor 2 per ground atom.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .errors import MLNError, ResourceLimitError
from .exact import DEFAULT_ENUMERATION_LIMIT, PartitionEstimate, log_partition_exact
from .grounding import DEFAULT_MAX_ATOMS, GroundNetwork, ground
from .logic import (
    Atom, DomainDecl, KnowledgeBase, PredicateDecl, Variable, WeightedFormula,
    atoms, free_variables, partial_evaluate, render_formula, rename_variables,
    variable_names,
)
from .mcmc import SamplerConfig, estimate_log_z_ais
from .normalize import fresh_name, is_normal, shatter
from .thermal import build_hamiltonian, thermal_distribution

LN2 = math.log(2.0)
DEFAULT_RULE_ORDER = ("decomposer", "isolated", "binomial", "fallback")


# ---------------------------------------------------------------------------
# Base samplers
# ---------------------------------------------------------------------------

class ExactBase:
    name = "exact"
    stochastic = False

    def __init__(self, limit: int = DEFAULT_ENUMERATION_LIMIT):
        self.limit = limit

    def __call__(self, net: GroundNetwork, leaf: int = 0) -> PartitionEstimate:
        return log_partition_exact(net, self.limit)


class ThermalBase:
    name = "thermal"
    stochastic = False

    def __init__(self, limit: int = DEFAULT_ENUMERATION_LIMIT):
        self.limit = limit

    def __call__(self, net: GroundNetwork, leaf: int = 0) -> PartitionEstimate:
        return thermal_distribution(build_hamiltonian(net), self.limit)[1]


class AISBase:
    """AIS at the leaves; leaf k runs with seed (config.seed, k) for reproducibility."""

    name = "ais"
    stochastic = True

    def __init__(self, config: SamplerConfig = SamplerConfig()):
        self.config = config

    def __call__(self, net: GroundNetwork, leaf: int = 0) -> PartitionEstimate:
        seed = int(self.config.seed) * 1_000_003 + leaf
        cfg = SamplerConfig(**{**self.config.__dict__, "seed": seed})
        return estimate_log_z_ais(net, cfg)


BASE_SAMPLERS = {"exact": ExactBase, "thermal": ThermalBase, "ais": AISBase}


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------

@dataclass
class TraceStep:
    rule: str
    target: str
    log_multipliers: tuple[float, ...] = ()
    children: tuple[int, ...] = ()
    exponent: int = 1
    value: float = math.nan
    leaf: Optional[dict] = None

    @property
    def branch_count(self) -> int:
        return len(self.children)

    def as_dict(self) -> dict:
        out = {"rule": self.rule, "target": self.target,
               "log_multipliers": list(self.log_multipliers),
               "children": list(self.children), "branch_count": self.branch_count,
               "value": self.value}
        if self.rule == "decomposer":
            out["exponent"] = self.exponent
        if self.leaf is not None:
            out["leaf"] = self.leaf
        return out


def _lse(values: Sequence[float]) -> float:
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(v - m) for v in values))


def combine(step: TraceStep, child_values: Sequence[float]) -> float:
    """Log Z of a node from its children's log Z; shared by evaluation and replay."""
    if step.rule in ("base", "memo"):
        return step.value
    if step.rule == "prune":
        return step.log_multipliers[0] + child_values[0]
    if step.rule == "decomposer":
        return step.exponent * child_values[0]
    return _lse([m + v for m, v in zip(step.log_multipliers, child_values)])


@dataclass
class LiftTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def replay(self, index: int = 0) -> float:
        step = self.steps[index]
        return combine(step, [self.replay(c) for c in step.children])

    def rules(self) -> list[str]:
        return [s.rule for s in self.steps]

    def as_list(self) -> list[dict]:
        return [s.as_dict() for s in self.steps]


@dataclass(frozen=True)
class LiftConfig:
    isolated_rule: bool = False
    rule_order: tuple[str, ...] = DEFAULT_RULE_ORDER
    max_branches: int = 4096
    max_atoms: int = DEFAULT_MAX_ATOMS
    memoize: bool = True


@dataclass
class RuleResult:
    rule: str
    target: str
    branches: list[tuple[float, KnowledgeBase]]


# ---------------------------------------------------------------------------
# KB-level simplification
# ---------------------------------------------------------------------------

def prune(kb: KnowledgeBase) -> tuple[float, KnowledgeBase]:
    """Drop zero-weight formulas, then sum out predicates no formula mentions (ln 2 per atom)."""
    formulas = tuple(wf for wf in kb.formulas if wf.weight != 0.0)
    used = {a.predicate for wf in formulas for a in atoms(wf.formula)}
    log_mult = 0.0
    predicates = []
    for p in kb.predicates:
        if p.name in used:
            predicates.append(p)
        else:
            log_mult += LN2 * kb.num_groundings(p.name)
    used_domains = {d for p in predicates for d in p.argument_domains}
    domains = tuple(d for d in kb.domains if d.name in used_domains)
    if len(formulas) == len(kb.formulas) and len(predicates) == len(kb.predicates) \
            and len(domains) == len(kb.domains):
        return 0.0, kb
    return log_mult, KnowledgeBase(domains, tuple(predicates), formulas)


def condition(kb: KnowledgeBase, partitions, truth: Callable[[str, tuple[int, ...]], Optional[bool]]):
    """Fix predicates class-wise and simplify.

    `partitions` refines domains into classes (see `shatter`); `truth(pred,
    class_indices)` gives the value shared by every grounding of `pred` in that
    class combination, or None to leave it free. Returns (log multiplier, KB).
    """
    res = shatter(kb, partitions)
    kb1 = res.kb
    fixed: dict[str, bool] = {}
    for (pred, combo), name in res.predicate_names.items():
        value = truth(pred, combo)
        if value is not None:
            fixed[name] = bool(value)
    log_mult = 0.0
    formulas = []
    for wf in kb1.formulas:
        var_dom = dict(free_variables(wf.formula, kb1))
        folded = partial_evaluate(wf.formula, lambda a: fixed.get(a.predicate))
        if folded is True:
            log_mult += wf.weight * math.prod(kb1.domain_size(d) for d in var_dom.values())
        elif folded is False:
            continue
        else:
            left = set(variable_names(folded))
            scale = math.prod(kb1.domain_size(d) for v, d in var_dom.items() if v not in left)
            formulas.append(WeightedFormula(folded, wf.weight * scale))
    predicates = tuple(p for p in kb1.predicates if p.name not in fixed)
    p_mult, out = prune(KnowledgeBase(kb1.domains, predicates, tuple(formulas)))
    return log_mult + p_mult, out


def is_fully_ground(kb: KnowledgeBase) -> bool:
    return all(len(d.constants) == 1 for d in kb.domains)


def _retype(kb: KnowledgeBase, predicate: str, position: int, taken: set[str], constants=None):
    """Give one argument position of `predicate` its own copy of its domain."""
    decl = kb.predicate_map[predicate]
    old = kb.domain_map[decl.argument_domains[position]]
    new = DomainDecl(fresh_name(f"{old.name}_{predicate.lower()}", taken),
                     tuple(constants) if constants is not None else old.constants)
    doms = list(decl.argument_domains)
    doms[position] = new.name
    predicates = tuple(PredicateDecl(p.name, tuple(doms)) if p.name == predicate else p
                       for p in kb.predicates)
    return KnowledgeBase(kb.domains + (new,), predicates, kb.formulas), new.name


# ---------------------------------------------------------------------------
# Decomposer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decomposer:
    variables: dict  # formula index -> variable name
    positions: dict  # predicate -> argument position
    domain: str

    @property
    def variable_names(self) -> set[str]:
        return set(self.variables.values())


def find_decomposer(kb: KnowledgeBase, instrument: Optional[dict] = None) -> Optional[Decomposer]:
    """Find variables x (one per formula) with every atom holding exactly one of
    them, always at the same argument position of its predicate.

    Runs in time linear in the number of atom occurrences (times max arity).
    """
    visits = 0
    occurrences: dict[str, list[tuple[int, Atom]]] = {}
    formula_atoms = []
    for fi, wf in enumerate(kb.formulas):
        fa = list(atoms(wf.formula))
        formula_atoms.append(fa)
        for a in fa:
            visits += 1
            occurrences.setdefault(a.predicate, []).append((fi, a))

    def propagate(pred: str, pos: int):
        nonlocal visits
        positions = {pred: pos}
        chosen: dict[int, str] = {}
        queue = [pred]
        while queue:
            r = queue.pop()
            for fi, atom in occurrences[r]:
                visits += 1
                x = atom.args[positions[r]]
                if not isinstance(x, Variable):
                    return None
                if fi in chosen:
                    if chosen[fi] != x.name:
                        return None
                    continue
                chosen[fi] = x.name
                for b in formula_atoms[fi]:
                    visits += 1
                    hits = [i for i, t in enumerate(b.args) if t == x]
                    if len(hits) != 1:
                        return None
                    q = hits[0]
                    if b.predicate in positions:
                        if positions[b.predicate] != q:
                            return None
                    else:
                        positions[b.predicate] = q
                        queue.append(b.predicate)
        domain = kb.predicate_map[pred].argument_domains[pos]
        return chosen, positions, domain

    components = []
    covered: set[int] = set()
    for fi, fa in enumerate(formula_atoms):
        if fi in covered or not fa:
            continue
        seed = fa[0]
        options = []
        for pos in range(len(seed.args)):
            res = propagate(seed.predicate, pos)
            if res is not None:
                options.append(res)
        if not options:
            if instrument is not None:
                instrument["atom_visits"] = instrument.get("atom_visits", 0) + visits
            return None
        components.append(options)
        # every option of one component covers the same formulas
        covered.update(options[0][0])

    if instrument is not None:
        instrument["atom_visits"] = instrument.get("atom_visits", 0) + visits
    if not components:
        return None
    common = set.intersection(*({opt[2] for opt in comp} for comp in components))
    if not common:
        return None
    domain = max(sorted(common), key=lambda d: kb.domain_size(d))
    variables, positions = {}, {}
    for comp in components:
        chosen, pos, _ = next(opt for opt in comp if opt[2] == domain)
        variables.update(chosen)
        positions.update(pos)
    return Decomposer(variables, positions, domain)


def apply_decomposer(kb: KnowledgeBase, dec: Decomposer) -> tuple[KnowledgeBase, int]:
    """Bind every decomposer variable to the domain's first constant.

    The decomposer positions are retyped onto a fresh singleton domain, which
    keeps the result free of constants. log Z(kb) = exponent * log Z(sub).
    Every predicate must occur in some formula (run `prune` first).
    """
    used = {a.predicate for wf in kb.formulas for a in atoms(wf.formula)}
    if any(p.name not in used for p in kb.predicates):
        raise MLNError("apply_decomposer needs a pruned KB")
    exponent = kb.domain_size(dec.domain)
    taken = {d.name for d in kb.domains} | {p.name for p in kb.predicates}
    single = DomainDecl(fresh_name(f"{dec.domain}_1", taken), kb.domain_map[dec.domain].constants[:1])
    predicates = []
    for p in kb.predicates:
        if p.name in dec.positions:
            doms = list(p.argument_domains)
            doms[dec.positions[p.name]] = single.name
            p = PredicateDecl(p.name, tuple(doms))
        predicates.append(p)
    used_domains = {d for p in predicates for d in p.argument_domains}
    domains = tuple(d for d in kb.domains + (single,) if d.name in used_domains)
    return KnowledgeBase(domains, tuple(predicates), kb.formulas), exponent


# ---------------------------------------------------------------------------
# Isolated variables
# ---------------------------------------------------------------------------

def find_isolated_variable(kb: KnowledgeBase) -> Optional[tuple[str, int]]:
    """(predicate, position) whose variable occurs nowhere else in every formula with that predicate."""
    for p in sorted(kb.predicates, key=lambda p: p.name):
        for pos in range(p.arity):
            ok, seen = True, False
            for wf in kb.formulas:
                fa = list(atoms(wf.formula))
                for a in fa:
                    if a.predicate != p.name:
                        continue
                    seen = True
                    x = a.args[pos]
                    count = sum(t == x for b in fa for t in b.args)
                    if not isinstance(x, Variable) or count != 1:
                        ok = False
                        break
                if not ok:
                    break
            if ok and seen:
                return p.name, pos
    return None


def apply_isolated_variable(kb: KnowledgeBase, max_branches: int = 4096) -> Optional[RuleResult]:
    """Sum out predicate R through the counts of True groundings along its isolated position.

    The other argument positions of R are shattered into single constants,
    giving copies R_k(x) that each own a fresh copy D_k of the isolated domain.
    One branch per count vector (j_1..j_K) carries multiplier
    sum_k log C(|D_x|, j_k); the isolated variable vanishes from every
    formula after conditioning.
    """
    found = find_isolated_variable(kb)
    if found is None:
        return None
    pred, pos = found
    decl = kb.predicate_map[pred]
    size = kb.domain_size(decl.argument_domains[pos])
    others = [i for i in range(decl.arity) if i != pos]
    k_copies = math.prod(kb.domain_size(decl.argument_domains[i]) for i in others)
    if (size + 1) ** k_copies > max_branches:
        return None
    taken = {d.name for d in kb.domains} | {p.name for p in kb.predicates}
    kb1, iso_dom = _retype(kb, pred, pos, taken)
    singles = {}
    for i in others:
        d = decl.argument_domains[i]
        singles[d] = [(c,) for c in kb1.domain_map[d].constants]
    res = shatter(kb1, singles)
    kb2 = res.kb
    copies = [name for (p, _), name in sorted(res.predicate_names.items()) if p == pred]
    taken = {d.name for d in kb2.domains} | {p.name for p in kb2.predicates}
    copy_domains = {}
    for name in copies:
        kb2, copy_domains[name] = _retype(kb2, name, pos, taken)
    # shattering can leave specialized predicates that no formula uses
    pruned, kb2 = prune(kb2)
    consts = kb.domain_map[decl.argument_domains[pos]].constants

    branches = []
    for counts in itertools.product(range(size + 1), repeat=len(copies)):
        partitions = {}
        value_of = {}
        for name, j in zip(copies, counts):
            parts = [(consts[:j], True), (consts[j:], False)]
            parts = [(c, v) for c, v in parts if c]
            partitions[copy_domains[name]] = [c for c, _ in parts]
            value_of[name] = [v for _, v in parts]

        def truth(p, combo, value_of=value_of):
            if p not in value_of:
                return None
            return value_of[p][combo[pos]]

        mult, sub = condition(kb2, partitions, truth)
        mult += pruned + sum(math.log(math.comb(size, j)) for j in counts)
        branches.append((mult, sub))
    return RuleResult("isolated", f"{pred}[{pos}]", branches)


# ---------------------------------------------------------------------------
# Generalized binomial and fallback
# ---------------------------------------------------------------------------

def find_binomial_atom(kb: KnowledgeBase) -> Optional[str]:
    """A unary predicate that never occurs twice in the same formula."""
    for p in sorted(kb.predicates, key=lambda p: p.name):
        if p.arity != 1:
            continue
        counts = [sum(a.predicate == p.name for a in atoms(wf.formula)) for wf in kb.formulas]
        if any(c > 0 for c in counts) and max(counts) <= 1:
            return p.name
    return None


def apply_generalized_binomial(kb: KnowledgeBase) -> Optional[RuleResult]:
    pred = find_binomial_atom(kb)
    if pred is None:
        return None
    dom = kb.predicate_map[pred].argument_domains[0]
    consts = kb.domain_map[dom].constants
    size = len(consts)
    branches = []
    for i in range(size + 1):
        parts = [(consts[:i], True), (consts[i:], False)]
        parts = [(c, v) for c, v in parts if c]
        values = [v for _, v in parts]
        mult, sub = condition(kb, {dom: [c for c, _ in parts]},
                              lambda p, combo, values=values: values[combo[0]] if p == pred else None)
        branches.append((math.log(math.comb(size, i)) + mult, sub))
    return RuleResult("binomial", pred, branches)


def choose_fallback_atom(kb: KnowledgeBase) -> str:
    return min(kb.predicates, key=lambda p: (kb.num_groundings(p.name), p.name)).name


def ground_fallback(kb: KnowledgeBase, max_branches: int = 4096, predicate: Optional[str] = None) -> RuleResult:
    """Branch on every truth assignment of all groundings of one predicate."""
    if not kb.predicates:
        raise MLNError("no predicate to ground")
    pred = predicate or choose_fallback_atom(kb)
    decl = kb.predicate_map[pred]
    g = kb.num_groundings(pred)
    if 2 ** g > max_branches:
        raise ResourceLimitError(f"fallback on {pred} needs 2^{g} branches (limit {max_branches})")
    partitions = {d: [(c,) for c in kb.domain_map[d].constants] for d in set(decl.argument_domains)}
    sizes = [kb.domain_size(d) for d in decl.argument_domains]
    # class index tuples in product order; bit k of the code is grounding k
    order = {combo: k for k, combo in enumerate(itertools.product(*(range(s) for s in sizes)))}
    branches = []
    for code in range(2 ** g):
        mult, sub = condition(kb, partitions,
                              lambda p, combo, code=code: bool((code >> order[combo]) & 1) if p == pred else None)
        branches.append((mult, sub))
    return RuleResult("fallback", pred, branches)


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------

def canonical_key(kb: KnowledgeBase):
    """Hashable key invariant under constant and variable renaming."""
    doms = tuple(sorted((d.name, len(d.constants)) for d in kb.domains))
    preds = tuple(sorted((p.name, p.argument_domains) for p in kb.predicates))
    forms = []
    for wf in kb.formulas:
        names = variable_names(wf.formula)
        f = rename_variables(wf.formula, {v: f"x{i}" for i, v in enumerate(names)})
        forms.append((render_formula(f), wf.weight))
    return doms, preds, tuple(sorted(forms))


class _Lifter:
    def __init__(self, base, config: LiftConfig):
        self.base = base
        self.config = config
        self.trace = LiftTrace()
        self.memo: dict = {}
        self.leaves = 0
        self.variance: dict[int, float] = {}

    def add(self, step: TraceStep, var: float) -> int:
        self.trace.steps.append(step)
        idx = len(self.trace.steps) - 1
        self.variance[idx] = var
        return idx

    def run(self, kb: KnowledgeBase) -> int:
        mult, pruned = prune(kb)
        if mult != 0.0 or pruned is not kb:
            idx = self.add(TraceStep("prune", "unused predicates", (mult,)), 0.0)
            child = self.evaluate(pruned)
            step = self.trace.steps[idx]
            step.children = (child,)
            step.value = combine(step, [self.trace.steps[child].value])
            self.variance[idx] = self.variance[child]
            return idx
        return self.evaluate(pruned)

    def evaluate(self, kb: KnowledgeBase) -> int:
        key = canonical_key(kb) if self.config.memoize else None
        if key is not None and key in self.memo:
            value, var = self.memo[key]
            return self.add(TraceStep("memo", "cached sub-model", value=value), var)
        idx = self._evaluate(kb)
        if key is not None:
            self.memo[key] = (self.trace.steps[idx].value, self.variance[idx])
        return idx

    def _evaluate(self, kb: KnowledgeBase) -> int:
        if is_fully_ground(kb):
            net = ground(kb, self.config.max_atoms)
            est = self.base(net, self.leaves)
            self.leaves += 1
            step = TraceStep("base", f"{net.n} ground atoms", value=est.log_z,
                             leaf={"method": est.method, "n": net.n, "log_z": est.log_z,
                                   "std_error": est.std_error})
            return self.add(step, (est.std_error or 0.0) ** 2)

        for rule in self.config.rule_order:
            if rule == "decomposer":
                dec = find_decomposer(kb)
                if dec is None or kb.domain_size(dec.domain) < 2:
                    continue
                sub, exponent = apply_decomposer(kb, dec)
                idx = self.add(TraceStep("decomposer", ",".join(sorted(dec.variable_names)),
                                         exponent=exponent), 0.0)
                child = self.run(sub)
                return self._finish(idx, [child])
            if rule == "isolated":
                if not self.config.isolated_rule:
                    continue
                result = apply_isolated_variable(kb, self.config.max_branches)
            elif rule == "binomial":
                result = apply_generalized_binomial(kb)
            elif rule == "fallback":
                result = ground_fallback(kb, self.config.max_branches)
            else:
                raise MLNError(f"unknown rule {rule}")
            if result is None:
                continue
            return self._branch(result)
        raise MLNError("no lifting rule applies")

    def _branch(self, result: RuleResult) -> int:
        mults = tuple(m for m, _ in result.branches)
        idx = self.add(TraceStep(result.rule, result.target, mults), 0.0)
        children = [self.run(sub) for _, sub in result.branches]
        return self._finish(idx, children)

    def _finish(self, idx: int, children: list[int]) -> int:
        step = self.trace.steps[idx]
        step.children = tuple(children)
        values = [self.trace.steps[c].value for c in children]
        step.value = combine(step, values)
        if step.rule == "decomposer":
            self.variance[idx] = step.exponent ** 2 * self.variance[children[0]]
        else:
            total = step.value
            self.variance[idx] = sum(
                math.exp(2 * (m + v - total)) * self.variance[c]
                for m, v, c in zip(step.log_multipliers, values, children))
        return idx


def lifted_log_z(kb: KnowledgeBase, base=None, config: LiftConfig = LiftConfig()):
    """log Z of a normal MLN by lifted simplification; returns (estimate, trace)."""
    if not is_normal(kb):
        raise MLNError("lifted inference needs a normal MLN (run to_normal_form first)")
    base = base or ExactBase()
    lifter = _Lifter(base, config)
    root = lifter.run(kb)
    assert root == 0
    value = lifter.trace.steps[0].value
    std = math.sqrt(lifter.variance[0]) if getattr(base, "stochastic", False) else None
    counts: dict[str, int] = {}
    for s in lifter.trace.steps:
        counts[s.rule] = counts.get(s.rule, 0) + 1
    est = PartitionEstimate(value, "lifted", std, {
        "base": getattr(base, "name", type(base).__name__), "leaves": lifter.leaves,
        "rule_counts": dict(sorted(counts.items())), "isolated_rule": config.isolated_rule,
        "rule_order": list(config.rule_order),
    })
    return est, lifter.trace
