"""Command-line front end. Every invocation prints one JSON report on stdout.

Exit codes: 0 success, 1 usage error, 2 model error, 3 resource limit.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from typing import Optional

import numpy as np

from . import __version__
from .errors import EvidenceError, MLNError, ParseError, ResourceLimitError
from .exact import (
    DEFAULT_ENUMERATION_LIMIT, Evidence, log_partition_exact, marginals_exact,
)
from .grounding import (
    DEFAULT_MAX_ATOMS, GroundNetwork, ground, network_stats, network_to_dict,
)
from .lifted import AISBase, ExactBase, LiftConfig, ThermalBase, lifted_log_z
from .logic import GroundAtom, KnowledgeBase, is_variable_name, parse_kb, render_kb
from .mcmc import SamplerConfig, estimate_log_z_ais, estimate_marginals, run_chains
from .normalize import is_normal, to_normal_form
from .thermal import (
    build_hamiltonian, clamp_evidence, complexity_bound, reduce_by_evidence,
    sample_thermal, thermal_distribution,
)

SCHEMA_VERSION = "1.0"
COMMANDS = ("validate", "normalize", "ground", "stats", "exact", "mcmc", "lifted",
            "quantum", "complexity", "compare")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Evidence files
# ---------------------------------------------------------------------------

def parse_evidence_file(text: str, kb: Optional[KnowledgeBase] = None) -> Evidence:
    """Parse lines of the form `Pred(C1,...,Ck) = true|false`."""
    evidence = Evidence()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'Atom = true|false'", lineno)
        lhs, rhs = (s.strip() for s in line.rsplit("=", 1))
        value = rhs.lower()
        if value not in ("true", "false"):
            raise ParseError(f"expected true or false, found {rhs!r}", lineno)
        if "(" not in lhs or not lhs.endswith(")"):
            raise ParseError(f"malformed atom {lhs!r}", lineno)
        name, rest = lhs[:-1].split("(", 1)
        name = name.strip()
        args = tuple(a.strip() for a in rest.split(","))
        if any(not a for a in args):
            raise ParseError(f"malformed atom {lhs!r}", lineno)
        if any(is_variable_name(a) for a in args):
            raise EvidenceError(f"line {lineno}: evidence must be ground: {lhs}")
        if kb is not None:
            decl = kb.predicate_map.get(name)
            if decl is None:
                raise EvidenceError(f"line {lineno}: unknown predicate {name}")
            if len(args) != decl.arity:
                raise EvidenceError(f"line {lineno}: arity mismatch for {name}")
            for a, d in zip(args, decl.argument_domains):
                if a not in kb.domain_map[d].constants:
                    raise EvidenceError(f"line {lineno}: unknown constant {a} for domain {d}")
        atom = GroundAtom(name, args)
        flag = value == "true"
        if atom in evidence and evidence[atom] != flag:
            raise EvidenceError(f"line {lineno}: conflicting evidence for {atom}")
        evidence[atom] = flag
    return evidence


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def dumps(obj) -> str:
    """JSON with floats at 17 significant digits and sorted-free, insertion-ordered keys."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        return format(x, ".17g")
    if obj is None:
        return "null"
    return json.dumps(str(obj))


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

class _Timer:
    def __init__(self):
        self.phases: dict[str, float] = {}

    def __call__(self, name):
        timer = self

        class _Phase:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.phases[name] = timer.phases.get(name, 0.0) + 1000 * (time.perf_counter() - self.t)

        return _Phase()


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _sampler_config(args) -> SamplerConfig:
    try:
        return SamplerConfig(seed=args.seed, burn_in=args.burnin, samples=args.samples,
                             thinning=args.thin, chains=args.chains, ais_ladder=args.ladder,
                             ladder=args.ladder_kind)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _query_indices(net: GroundNetwork, queries, evidence_idx) -> list[int]:
    if queries:
        out = []
        for q in queries:
            try:
                i = net.atom_table.lookup(q)
            except MLNError as exc:
                raise EvidenceError(str(exc)) from None
            if i in evidence_idx:
                raise EvidenceError(f"query atom {q} is in the evidence")
            out.append(i)
        return out
    return [i for i in range(net.n) if i not in evidence_idx]


def _named(net: GroundNetwork, values: dict) -> dict:
    return {str(net.atom_table.atoms[i]): float(v) for i, v in values.items()}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().strip()}\n{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="qmln", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)

    def common(p, evidence=True):
        p.add_argument("--kb", required=True, help="knowledge base file")
        p.add_argument("--max-atoms", type=int, default=DEFAULT_MAX_ATOMS)
        p.add_argument("--timing", action="store_true", help="include per-phase timings")
        if evidence:
            p.add_argument("--evidence", help="evidence file (Pred(C,...) = true|false per line)")
            p.add_argument("--query", action="append", default=[], help="ground atom, repeatable")

    def limit(p):
        p.add_argument("--limit", type=int, default=DEFAULT_ENUMERATION_LIMIT,
                       help="max atoms for world enumeration")

    def sampler(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--burnin", type=int, default=200)
        p.add_argument("--samples", type=int, default=2000)
        p.add_argument("--thin", type=int, default=1)
        p.add_argument("--chains", type=int, default=8)
        p.add_argument("--ladder", type=int, default=32, help="AIS ladder steps")
        p.add_argument("--ladder-kind", choices=("linear", "geometric"), default="linear")

    for name in ("validate", "normalize", "ground", "stats"):
        common(sub.add_parser(name), evidence=False)
    p = sub.add_parser("exact")
    common(p)
    limit(p)
    p = sub.add_parser("mcmc")
    common(p)
    sampler(p)
    p = sub.add_parser("lifted")
    common(p, evidence=False)
    limit(p)
    sampler(p)
    p.add_argument("--base", choices=("exact", "ais", "thermal"), default="exact")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--isolated-rule", action="store_true", help="enable the isolated-variable rule")
    p.add_argument("--max-branches", type=int, default=4096)
    p = sub.add_parser("quantum")
    common(p)
    limit(p)
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--clamp", type=float, metavar="GAMMA", help="clamp evidence with strength GAMMA")
    group.add_argument("--reduce", action="store_true", help="reduce truth tables by evidence (default)")
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--kappa", type=float, default=2.0)
    p = sub.add_parser("complexity")
    common(p, evidence=False)
    limit(p)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--kappa", type=float, default=2.0)
    p = sub.add_parser("compare")
    common(p)
    limit(p)
    sampler(p)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--kappa", type=float, default=2.0)
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _context(args, timer):
    text = _read(args.kb)
    with timer("parse"):
        kb = parse_kb(text)
    evidence = Evidence()
    if getattr(args, "evidence", None):
        evidence = parse_evidence_file(_read(args.evidence), kb)
    return text, kb, evidence


def _complexity(net_n: int, beta: float, log_z: float, args) -> dict:
    try:
        report = complexity_bound(net_n, 2, beta, log_z, args.epsilon, args.kappa)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = report.as_dict()
    out["log_gap"] = report.log_gap
    return out


def cmd_validate(args, kb, evidence, timer, report):
    report["kb"] = {
        "valid": True, "domains": len(kb.domains), "predicates": len(kb.predicates),
        "formulas": len(kb.formulas), "max_atoms_per_formula": kb.max_atoms_per_formula,
        "max_domain_size": kb.max_domain_size, "is_normal": is_normal(kb),
    }


def cmd_normalize(args, kb, evidence, timer, report):
    with timer("normalize"):
        normal, rep = to_normal_form(kb)
    report["normalized_kb"] = render_kb(normal)
    report["normalization"] = rep.as_dict()


def cmd_ground(args, kb, evidence, timer, report):
    with timer("ground"):
        net = ground(kb, args.max_atoms)
    report["stats"] = network_stats(net).as_dict()
    report["network"] = network_to_dict(net)


def cmd_stats(args, kb, evidence, timer, report):
    with timer("ground"):
        net = ground(kb, args.max_atoms)
    stats = network_stats(net).as_dict()
    stats["max_atoms_per_formula"] = kb.max_atoms_per_formula
    stats["max_domain_size"] = kb.max_domain_size
    exponent = max([kb.max_atoms_per_formula] + [p.arity for p in kb.predicates])
    stats["node_bound"] = len(kb.predicates) * kb.max_domain_size ** exponent
    report["stats"] = stats


def cmd_exact(args, kb, evidence, timer, report):
    with timer("ground"):
        net = ground(kb, args.max_atoms)
    resolved = evidence.resolve(net.atom_table)
    queries = _query_indices(net, args.query, resolved)
    with timer("exact"):
        est = log_partition_exact(net, args.limit)
        result = {"method": "exact", "log_z": est.log_z, "std_error": None,
                  "diagnostics": est.diagnostics}
        if resolved:
            reduced = reduce_by_evidence(net, evidence)
            result["log_evidence_mass"] = log_partition_exact(reduced, args.limit).log_z
        m = marginals_exact(net, evidence, args.limit)
        result["marginals"] = _named(net, {i: m[i] for i in queries})
    report["stats"] = network_stats(net).as_dict()
    report["results"]["exact"] = result


def cmd_mcmc(args, kb, evidence, timer, report):
    config = _sampler_config(args)
    with timer("ground"):
        net = ground(kb, args.max_atoms)
    resolved = evidence.resolve(net.atom_table)
    queries = _query_indices(net, args.query, resolved)
    with timer("gibbs"):
        samples = run_chains(net, evidence, config)
        marg = estimate_marginals(samples, queries)
    with timer("ais"):
        target = reduce_by_evidence(net, evidence) if resolved else net
        ais = estimate_log_z_ais(target, config)
    report["stats"] = network_stats(net).as_dict()
    report["results"]["mcmc"] = {
        "method": "mcmc", "marginals": _named(net, marg.values),
        "marginal_std_errors": _named(net, marg.std_errors), "diagnostics": marg.diagnostics,
    }
    report["results"]["ais"] = {"method": "ais", "log_z": ais.log_z, "std_error": ais.std_error,
                                "conditioned_on_evidence": bool(resolved),
                                "diagnostics": ais.diagnostics}


def _base_sampler(args):
    if args.base == "exact":
        return ExactBase(args.limit)
    if args.base == "thermal":
        return ThermalBase(args.limit)
    return AISBase(_sampler_config(args))


def cmd_lifted(args, kb, evidence, timer, report):
    with timer("normalize"):
        normal, _ = to_normal_form(kb)
    config = LiftConfig(isolated_rule=args.isolated_rule, max_branches=args.max_branches,
                        max_atoms=args.max_atoms)
    with timer("lifted"):
        est, trace = lifted_log_z(normal, _base_sampler(args), config)
    report["results"]["lifted"] = {"method": "lifted", "log_z": est.log_z,
                                   "std_error": est.std_error, "diagnostics": est.diagnostics}
    if args.trace:
        report["trace"] = trace.as_list()


def cmd_quantum(args, kb, evidence, timer, report):
    with timer("ground"):
        net = ground(kb, args.max_atoms)
    resolved = evidence.resolve(net.atom_table)
    queries = _query_indices(net, args.query, resolved)
    mechanism = None
    with timer("hamiltonian"):
        if resolved and args.clamp is not None:
            mechanism = "clamp"
            h = clamp_evidence(build_hamiltonian(net), resolved, args.clamp)
            work = net
        elif resolved:
            mechanism = "reduce"
            work = reduce_by_evidence(net, evidence)
            h = build_hamiltonian(work)
        else:
            work = net
            h = build_hamiltonian(net)
    with timer("thermal"):
        probs, est = thermal_distribution(h, args.limit)
        bits = ((np.arange(len(probs))[:, None] >> np.arange(h.n)) & 1).astype(bool)
        marg = probs @ bits
    names = {str(a): i for i, a in enumerate(work.atom_table.atoms)}
    result = {"method": "thermal", "log_z": est.log_z, "std_error": None,
              "evidence_mechanism": mechanism, "diagnostics": est.diagnostics,
              "marginals": {str(net.atom_table.atoms[q]): float(marg[names[str(net.atom_table.atoms[q])]])
                            for q in queries}}
    if args.samples:
        with timer("sample"):
            worlds = sample_thermal(h, args.samples, args.seed, args.limit)
        emp = worlds.mean(axis=0) if len(worlds) else np.zeros(h.n)
        result["sampled_marginals"] = {
            str(net.atom_table.atoms[q]): float(emp[names[str(net.atom_table.atoms[q])]]) for q in queries}
    report["results"]["thermal"] = result
    report["hamiltonian"] = {"n": h.n, "beta": h.beta, "terms": len(h.terms),
                             "max_formula_term_norm": max((t.norm for t in h.terms if t.kind == "formula"), default=0.0),
                             "max_support": max((len(t.support) for t in h.terms), default=0)}
    report["complexity"] = _complexity(h.n, h.beta, est.log_z, args)


def cmd_complexity(args, kb, evidence, timer, report):
    with timer("ground"):
        net = ground(kb, args.max_atoms)
    h = build_hamiltonian(net)
    with timer("thermal"):
        _, est = thermal_distribution(h, args.limit)
    report["results"]["thermal"] = {"method": "thermal", "log_z": est.log_z, "std_error": None}
    report["complexity"] = _complexity(h.n, h.beta, est.log_z, args)


def cmd_compare(args, kb, evidence, timer, report):
    config = _sampler_config(args)
    with timer("ground"):
        net = ground(kb, args.max_atoms)
    resolved = evidence.resolve(net.atom_table)
    queries = _query_indices(net, args.query, resolved)
    target = reduce_by_evidence(net, evidence) if resolved else net
    results = report["results"]
    with timer("exact"):
        exact = log_partition_exact(target, args.limit)
        oracle = marginals_exact(net, evidence, args.limit)
    results["exact"] = {"method": "exact", "log_z": exact.log_z, "std_error": None,
                        "marginals": _named(net, {q: oracle[q] for q in queries})}
    with timer("ais"):
        ais = estimate_log_z_ais(target, config)
    with timer("gibbs"):
        marg = estimate_marginals(run_chains(net, evidence, config), queries)
    results["ais"] = {"method": "ais", "log_z": ais.log_z, "std_error": ais.std_error,
                      "diagnostics": ais.diagnostics}
    results["mcmc"] = {"method": "mcmc", "marginals": _named(net, marg.values),
                       "marginal_std_errors": _named(net, marg.std_errors)}
    if resolved:
        results["lifted"] = {"method": "lifted", "log_z": None,
                             "skipped": "lifted inference does not take evidence"}
    else:
        with timer("lifted"):
            normal, _ = to_normal_form(kb)
            lifted, _ = lifted_log_z(normal, ExactBase(args.limit),
                                     LiftConfig(max_atoms=args.max_atoms))
        results["lifted"] = {"method": "lifted", "log_z": lifted.log_z, "std_error": None,
                             "diagnostics": lifted.diagnostics}
    with timer("thermal"):
        h = build_hamiltonian(target)
        probs, thermal = thermal_distribution(h, args.limit)
        bits = ((np.arange(len(probs))[:, None] >> np.arange(h.n)) & 1).astype(bool)
        tmarg = probs @ bits
    names = {str(a): i for i, a in enumerate(target.atom_table.atoms)}
    results["thermal"] = {"method": "thermal", "log_z": thermal.log_z, "std_error": None,
                          "marginals": {str(net.atom_table.atoms[q]): float(tmarg[names[str(net.atom_table.atoms[q])]])
                                        for q in queries}}
    log_zs = {m: r["log_z"] for m, r in results.items() if r.get("log_z") is not None}
    methods = list(log_zs)
    report["deviations"] = {
        "log_z": {f"{a}-{b}": abs(log_zs[a] - log_zs[b])
                  for i, a in enumerate(methods) for b in methods[i + 1:]},
        "ais_sigma": abs(ais.log_z - exact.log_z) / ais.std_error if ais.std_error else 0.0,
        "marginals_max_abs": {
            m: max((abs(results[m]["marginals"][k] - results["exact"]["marginals"][k])
                    for k in results["exact"]["marginals"]), default=0.0)
            for m in ("mcmc", "thermal")
        },
    }
    report["stats"] = network_stats(net).as_dict()
    report["complexity"] = _complexity(h.n, h.beta, exact.log_z, args)


HANDLERS = {
    "validate": cmd_validate, "normalize": cmd_normalize, "ground": cmd_ground,
    "stats": cmd_stats, "exact": cmd_exact, "mcmc": cmd_mcmc, "lifted": cmd_lifted,
    "quantum": cmd_quantum, "complexity": cmd_complexity, "compare": cmd_compare,
}


def _config_echo(args) -> dict:
    skip = {"command", "kb", "timing"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def run_command(argv, stdout=None, stderr=None) -> int:
    """Run one CLI invocation; returns the exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip() + "\nqmln: error: a subcommand is required")
        timer = _Timer()
        text, kb, evidence = _context(args, timer)
        report = {
            "schema_version": SCHEMA_VERSION,
            "command": args.command,
            "kb_digest": "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest(),
            "config": _config_echo(args),
            "results": {},
        }
        HANDLERS[args.command](args, kb, evidence, timer, report)
        if args.timing:
            report["timing_ms"] = timer.phases
    except UsageError as exc:
        print(str(exc), file=stderr)
        return 1
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=stderr)
        return 3
    except (MLNError, ValueError) as exc:
        print(f"model error: {exc}", file=stderr)
        return 2
    stdout.write(dumps(report) + "\n")
    return 0


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
