"""Normal-form conversion by shattering domains into subdomains.

A KB is normal when no formula mentions a constant and atoms of one
predicate agree on the domain of each argument position. Typed predicate
declarations already give the second property, so normalization only has to
remove constants: every constant mentioned in a formula gets its own
singleton subdomain, the rest of its domain stays together, predicates are
specialized per subdomain combination and formulas are expanded over all
subdomain assignments of their variables.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .logic import (
    Atom, Constant, DomainDecl, GroundAtom, KnowledgeBase, PredicateDecl,
    Variable, WeightedFormula, atoms, free_variables, map_atoms, variable_names,
)


@dataclass
class NormalizationReport:
    domain_splits: dict[str, list[str]] = field(default_factory=dict)
    # original predicate -> [(specialized name, argument subdomains)]
    predicate_splits: dict[str, list[tuple[str, tuple[str, ...]]]] = field(default_factory=dict)
    formula_expansion_count: int = 0
    # subdomain name -> constants, for remapping ground atoms
    subdomain_constants: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def is_empty(self) -> bool:
        return not self.domain_splits and not self.predicate_splits

    def map_atom(self, atom: GroundAtom) -> GroundAtom:
        """Rewrite a ground atom over the original vocabulary into the normalized one."""
        for name, doms in self.predicate_splits.get(atom.predicate, ()):
            if all(c in self.subdomain_constants[d] for c, d in zip(atom.args, doms)):
                return GroundAtom(name, atom.args)
        return atom

    def as_dict(self) -> dict:
        return {
            "domain_splits": self.domain_splits,
            "predicate_splits": {
                k: [{"name": n, "domains": list(d)} for n, d in v]
                for k, v in self.predicate_splits.items()
            },
            "formula_expansion_count": self.formula_expansion_count,
        }


def fresh_name(base: str, taken: set[str]) -> str:
    name = base
    k = 1
    while name in taken:
        name = f"{base}_{k}"
        k += 1
    taken.add(name)
    return name


def is_normal(kb: KnowledgeBase) -> bool:
    """True iff no formula has a constant and shared predicate positions agree on domains."""
    position_domains: dict[tuple[str, int], set[str]] = {}
    for wf in kb.formulas:
        var_dom = dict(free_variables(wf.formula, kb))
        for atom in atoms(wf.formula):
            for i, t in enumerate(atom.args):
                if isinstance(t, Constant):
                    return False
                position_domains.setdefault((atom.predicate, i), set()).add(var_dom[t.name])
    return all(len(doms) == 1 for doms in position_domains.values())


@dataclass
class ShatterResult:
    kb: KnowledgeBase
    report: NormalizationReport
    # (original predicate, tuple of class indices) -> new predicate name
    predicate_names: dict[tuple[str, tuple[int, ...]], str]
    # original domain -> list of new domain names (one per class)
    class_domains: dict[str, list[str]]


def shatter(kb: KnowledgeBase, partitions: Mapping[str, Sequence[Sequence[str]]]) -> ShatterResult:
    """Refine domains into the given classes and re-express the KB over them.

    `partitions` maps a domain name to an ordered list of disjoint constant
    classes covering it; unlisted domains are kept whole. Constants in
    formulas are replaced by fresh variables over their (singleton or whole)
    class, so the result is free of constants whenever every mentioned
    constant sits in a singleton class.
    """
    taken = {d.name for d in kb.domains} | {p.name for p in kb.predicates}
    report = NormalizationReport()
    classes: dict[str, list[tuple[str, ...]]] = {}
    class_domains: dict[str, list[str]] = {}
    new_domains: list[DomainDecl] = []
    for d in kb.domains:
        parts = [tuple(p) for p in partitions.get(d.name, [d.constants]) if len(p)]
        classes[d.name] = parts
        if len(parts) == 1:
            class_domains[d.name] = [d.name]
            new_domains.append(d)
            continue
        taken.discard(d.name)
        names = []
        for k, part in enumerate(parts, start=1):
            name = fresh_name(f"{d.name}_{k}", taken)
            names.append(name)
            new_domains.append(DomainDecl(name, part))
            report.subdomain_constants[name] = part
        class_domains[d.name] = names
        report.domain_splits[d.name] = names

    predicate_names: dict[tuple[str, tuple[int, ...]], str] = {}
    new_predicates: list[PredicateDecl] = []
    for p in kb.predicates:
        ranges = [range(len(classes[d])) for d in p.argument_domains]
        combos = list(itertools.product(*ranges))
        if len(combos) == 1:
            predicate_names[(p.name, combos[0])] = p.name
            new_predicates.append(p)
            continue
        taken.discard(p.name)
        report.predicate_splits[p.name] = []
        for k, combo in enumerate(combos, start=1):
            name = fresh_name(f"{p.name}_{k}", taken)
            doms = tuple(class_domains[d][i] for d, i in zip(p.argument_domains, combo))
            predicate_names[(p.name, combo)] = name
            new_predicates.append(PredicateDecl(name, doms))
            report.predicate_splits[p.name].append((name, doms))

    def class_of(domain: str, constant: str) -> int:
        for i, part in enumerate(classes[domain]):
            if constant in part:
                return i
        raise KeyError(constant)

    new_formulas: list[WeightedFormula] = []
    changed = bool(report.domain_splits)
    for wf in kb.formulas:
        var_dom = dict(free_variables(wf.formula, kb))
        used = set(variable_names(wf.formula))
        const_vars: dict[tuple[str, str], str] = {}
        counter = itertools.count(1)
        for atom in atoms(wf.formula):
            decl = kb.predicate_map[atom.predicate]
            for t, dom in zip(atom.args, decl.argument_domains):
                if isinstance(t, Constant) and (dom, t.name) not in const_vars:
                    name = f"x{next(counter)}"
                    while name in used:
                        name = f"x{next(counter)}"
                    used.add(name)
                    const_vars[(dom, t.name)] = name
        if const_vars:
            changed = True
        variables = list(var_dom)
        for combo in itertools.product(*(range(len(classes[var_dom[v]])) for v in variables)):
            assign = dict(zip(variables, combo))

            def rewrite(atom: Atom) -> Atom:
                decl = kb.predicate_map[atom.predicate]
                idx, args = [], []
                for t, dom in zip(atom.args, decl.argument_domains):
                    if isinstance(t, Constant):
                        idx.append(class_of(dom, t.name))
                        args.append(Variable(const_vars[(dom, t.name)]))
                    else:
                        idx.append(assign[t.name])
                        args.append(t)
                return Atom(predicate_names[(atom.predicate, tuple(idx))], tuple(args))

            new_formulas.append(WeightedFormula(map_atoms(wf.formula, rewrite), wf.weight))

    if changed:
        report.formula_expansion_count = len(new_formulas)
    out = KnowledgeBase(tuple(new_domains), tuple(new_predicates), tuple(new_formulas))
    return ShatterResult(out, report, predicate_names, class_domains)


def constant_partitions(kb: KnowledgeBase) -> dict[str, list[tuple[str, ...]]]:
    """Singleton classes for constants mentioned in formulas, the remainder as one class."""
    mentioned: dict[str, set[str]] = {}
    for wf in kb.formulas:
        for atom in atoms(wf.formula):
            decl = kb.predicate_map[atom.predicate]
            for t, dom in zip(atom.args, decl.argument_domains):
                if isinstance(t, Constant):
                    mentioned.setdefault(dom, set()).add(t.name)
    partitions = {}
    for dom, consts in mentioned.items():
        order = kb.domain_map[dom].constants
        singles = [(c,) for c in order if c in consts]
        rest = tuple(c for c in order if c not in consts)
        parts = singles + ([rest] if rest else [])
        parts.sort(key=lambda part: order.index(part[0]))
        partitions[dom] = parts
    return partitions


def to_normal_form(kb: KnowledgeBase) -> tuple[KnowledgeBase, NormalizationReport]:
    """Return an equivalent normal KB plus a record of how names were split."""
    if is_normal(kb):
        return kb, NormalizationReport()
    result = shatter(kb, constant_partitions(kb))
    return result.kb, result.report
