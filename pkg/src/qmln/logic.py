"""Function-free first-order logic over finite typed domains.

A knowledge base file holds one statement per line::

    domain person = {Alice, Bob}
    predicate Smokes(person)
    predicate Friends(person, person)
    1.1 Friends(x, y) ^ Smokes(x) => Smokes(y)   // comment

Identifiers starting with a lowercase letter or underscore are variables,
all other identifiers are constants. Free variables are implicitly
universally quantified; explicit quantifiers are rejected.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterator, Mapping, NamedTuple, Optional, Union

import numpy as np

from .errors import ParseError

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_KEYWORDS = {"domain", "predicate", "v"}
_EXISTENTIAL = {"EXIST", "EXISTS", "exist", "exists"}
_UNIVERSAL = {"FORALL", "forall"}


# ---------------------------------------------------------------------------
# Terms and formulas
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Variable:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Constant:
    name: str

    def __str__(self):
        return self.name


Term = Union[Variable, Constant]


@dataclass(frozen=True)
class Atom:
    predicate: str
    args: tuple[Term, ...]

    def __str__(self):
        return f"{self.predicate}({', '.join(map(str, self.args))})"


@dataclass(frozen=True)
class Not:
    operand: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


Formula = Union[Atom, Not, And, Or, Implies, Iff]
Binary = (And, Or, Implies, Iff)

_SYMBOL = {And: "^", Or: "v", Implies: "=>", Iff: "<=>"}
_PRECEDENCE = {Iff: 1, Implies: 2, Or: 3, And: 4, Not: 5, Atom: 6}


class GroundAtom(NamedTuple):
    predicate: str
    args: tuple[str, ...]

    def __str__(self):
        return f"{self.predicate}({','.join(self.args)})"


# ---------------------------------------------------------------------------
# Declarations and knowledge base
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainDecl:
    name: str
    constants: tuple[str, ...]

    def __len__(self):
        return len(self.constants)


@dataclass(frozen=True)
class PredicateDecl:
    name: str
    argument_domains: tuple[str, ...]

    @property
    def arity(self):
        return len(self.argument_domains)


@dataclass(frozen=True)
class WeightedFormula:
    formula: Formula
    weight: float


@dataclass(frozen=True)
class KnowledgeBase:
    """A Markov logic network: typed domains, predicates and weighted formulas."""

    domains: tuple[DomainDecl, ...] = ()
    predicates: tuple[PredicateDecl, ...] = ()
    formulas: tuple[WeightedFormula, ...] = ()

    @cached_property
    def domain_map(self) -> dict[str, DomainDecl]:
        return {d.name: d for d in self.domains}

    @cached_property
    def predicate_map(self) -> dict[str, PredicateDecl]:
        return {p.name: p for p in self.predicates}

    def domain_size(self, name: str) -> int:
        return len(self.domain_map[name].constants)

    def num_groundings(self, predicate: str) -> int:
        return math.prod(self.domain_size(d) for d in self.predicate_map[predicate].argument_domains)

    @property
    def max_atoms_per_formula(self) -> int:
        """c: the largest number of distinct atoms in any formula."""
        return max((len(set(atoms(wf.formula))) for wf in self.formulas), default=0)

    @property
    def max_domain_size(self) -> int:
        """D: the largest domain cardinality."""
        return max((len(d.constants) for d in self.domains), default=0)

    def variable_domains(self, formula: Formula) -> dict[str, str]:
        return {v: d for v, d in free_variables(formula, self)}

    def validate(self) -> "KnowledgeBase":
        """Check every structural invariant; raise ParseError on the first violation."""
        seen = set()
        for d in self.domains:
            if d.name in seen:
                raise ParseError(f"duplicate domain {d.name}")
            seen.add(d.name)
            if not d.constants:
                raise ParseError(f"domain {d.name} is empty")
            if len(set(d.constants)) != len(d.constants):
                raise ParseError(f"duplicate constant in domain {d.name}")
        seen = set()
        for p in self.predicates:
            if p.name in seen:
                raise ParseError(f"duplicate predicate {p.name}")
            seen.add(p.name)
            if not p.argument_domains:
                raise ParseError(f"predicate {p.name} has no arguments")
            for d in p.argument_domains:
                if d not in self.domain_map:
                    raise ParseError(f"unknown domain {d}")
        for wf in self.formulas:
            if not math.isfinite(wf.weight):
                raise ParseError("non-finite weight")
            for atom in atoms(wf.formula):
                _check_atom(atom, self)
            free_variables(wf.formula, self)
        return self


def _check_atom(atom: Atom, kb: KnowledgeBase, line=None, column=None):
    decl = kb.predicate_map.get(atom.predicate)
    if decl is None:
        raise ParseError(f"unknown predicate {atom.predicate}", line, column)
    if len(atom.args) != decl.arity:
        raise ParseError(
            f"arity mismatch for {atom.predicate}: expected {decl.arity}, got {len(atom.args)}",
            line, column)
    for term, dom in zip(atom.args, decl.argument_domains):
        if isinstance(term, Constant) and term.name not in kb.domain_map[dom].constants:
            raise ParseError(f"constant {term.name} not in domain {dom}", line, column)


# ---------------------------------------------------------------------------
# Tree utilities
# ---------------------------------------------------------------------------

def atoms(formula: Formula) -> Iterator[Atom]:
    """Yield atom leaves left to right (with repetitions)."""
    if isinstance(formula, Atom):
        yield formula
    elif isinstance(formula, Not):
        yield from atoms(formula.operand)
    else:
        yield from atoms(formula.left)
        yield from atoms(formula.right)


def map_atoms(formula: Formula, fn: Callable[[Atom], Formula]) -> Formula:
    if isinstance(formula, Atom):
        return fn(formula)
    if isinstance(formula, Not):
        return Not(map_atoms(formula.operand, fn))
    return type(formula)(map_atoms(formula.left, fn), map_atoms(formula.right, fn))


def free_variables(formula: Formula, kb: KnowledgeBase) -> list[tuple[str, str]]:
    """Distinct variables in order of first appearance, with their inferred domain."""
    found: dict[str, str] = {}
    for atom in atoms(formula):
        decl = kb.predicate_map[atom.predicate]
        for term, dom in zip(atom.args, decl.argument_domains):
            if isinstance(term, Variable):
                prev = found.setdefault(term.name, dom)
                if prev != dom:
                    raise ParseError(
                        f"variable {term.name} used with domains {prev} and {dom}")
    return list(found.items())


def variable_names(formula: Formula) -> list[str]:
    seen = {}
    for atom in atoms(formula):
        for t in atom.args:
            if isinstance(t, Variable):
                seen.setdefault(t.name, None)
    return list(seen)


def substitute(formula: Formula, binding: Mapping[str, str]) -> Formula:
    """Replace bound variables by constants; unbound variables are left alone."""
    if not binding:
        return formula

    def sub(atom: Atom) -> Atom:
        return Atom(atom.predicate, tuple(
            Constant(binding[t.name]) if isinstance(t, Variable) and t.name in binding else t
            for t in atom.args))

    return map_atoms(formula, sub)


def rename_variables(formula: Formula, mapping: Mapping[str, str]) -> Formula:
    def sub(atom: Atom) -> Atom:
        return Atom(atom.predicate, tuple(
            Variable(mapping.get(t.name, t.name)) if isinstance(t, Variable) else t
            for t in atom.args))

    return map_atoms(formula, sub)


def evaluate(formula: Formula, value: Callable[[Atom], object]):
    """Evaluate the connective tree; `value` maps each atom leaf to a truth value.

    Values may be Python bools or numpy boolean arrays (element-wise evaluation).
    """
    if isinstance(formula, Atom):
        return value(formula)
    if isinstance(formula, Not):
        return ~_as_bool(evaluate(formula.operand, value))
    a = _as_bool(evaluate(formula.left, value))
    b = _as_bool(evaluate(formula.right, value))
    if isinstance(formula, And):
        return a & b
    if isinstance(formula, Or):
        return a | b
    if isinstance(formula, Implies):
        return ~a | b
    return ~(a ^ b)


def _as_bool(x):
    return np.bool_(x) if isinstance(x, bool) else x


def ground_atom(atom: Atom, binding: Mapping[str, str]) -> GroundAtom:
    args = []
    for t in atom.args:
        if isinstance(t, Constant):
            args.append(t.name)
        elif t.name in binding:
            args.append(binding[t.name])
        else:
            raise KeyError(f"unbound variable {t.name}")
    return GroundAtom(atom.predicate, tuple(args))


def evaluate_ground_formula(formula: Formula, binding: Mapping[str, str], world, index) -> bool:
    """Truth value of `formula` under `binding` in `world`.

    `index` maps GroundAtom to a position in the world bit vector (a
    GroundAtomTable or a plain dict).
    """
    def value(atom):
        return bool(world[index[ground_atom(atom, binding)]])

    return bool(evaluate(formula, value))


def partial_evaluate(formula: Formula, value: Callable[[Atom], Optional[bool]]) -> Union[Formula, bool]:
    """Fold atoms with known truth values; returns a bool when the formula is decided."""
    if isinstance(formula, Atom):
        v = value(formula)
        return formula if v is None else bool(v)
    if isinstance(formula, Not):
        inner = partial_evaluate(formula.operand, value)
        return (not inner) if isinstance(inner, bool) else Not(inner)
    a = partial_evaluate(formula.left, value)
    b = partial_evaluate(formula.right, value)
    if isinstance(a, bool) and isinstance(b, bool):
        return _fold(type(formula), a, b)
    if isinstance(formula, And):
        if a is False or b is False:
            return False
        return b if a is True else a if b is True else And(a, b)
    if isinstance(formula, Or):
        if a is True or b is True:
            return True
        return b if a is False else a if b is False else Or(a, b)
    if isinstance(formula, Implies):
        if a is False or b is True:
            return True
        if a is True:
            return b
        if b is False:
            return Not(a)
        return Implies(a, b)
    # Iff
    if isinstance(a, bool):
        return b if a else Not(b)
    if isinstance(b, bool):
        return a if b else Not(a)
    return Iff(a, b)


def _fold(kind, a: bool, b: bool) -> bool:
    if kind is And:
        return a and b
    if kind is Or:
        return a or b
    if kind is Implies:
        return (not a) or b
    return a == b


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def render_formula(formula: Formula) -> str:
    if isinstance(formula, Atom):
        return str(formula)
    if isinstance(formula, Not):
        inner = render_formula(formula.operand)
        if not isinstance(formula.operand, (Atom, Not)):
            inner = f"({inner})"
        return "!" + inner
    prec = _PRECEDENCE[type(formula)]
    right_assoc = isinstance(formula, Implies)

    def side(child, is_left):
        text = render_formula(child)
        cprec = _PRECEDENCE[type(child)]
        if cprec < prec or (cprec == prec and is_left == right_assoc):
            text = f"({text})"
        return text

    return f"{side(formula.left, True)} {_SYMBOL[type(formula)]} {side(formula.right, False)}"


def format_weight(w: float) -> str:
    return repr(float(w))


def render_kb(kb: KnowledgeBase) -> str:
    lines = [f"domain {d.name} = {{{', '.join(d.constants)}}}" for d in kb.domains]
    lines += [f"predicate {p.name}({', '.join(p.argument_domains)})" for p in kb.predicates]
    lines += [f"{format_weight(wf.weight)} {render_formula(wf.formula)}" for wf in kb.formulas]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=>|=>|[!^(),{}=])
""", re.VERBOSE)


class _Token(NamedTuple):
    kind: str
    text: str
    column: int


def _tokenize(line: str, lineno: int) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise ParseError(f"unexpected character {line[pos]!r}", lineno, pos + 1)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return tokens


def _strip_comment(line: str) -> str:
    i = line.find("//")
    return line if i < 0 else line[:i]


def is_variable_name(name: str) -> bool:
    return name[0].islower() or name[0] == "_"


class _FormulaParser:
    """Recursive descent over one formula line.

    Grammar (lowest precedence first)::

        iff     := implies ('<=>' implies)*
        implies := or ('=>' implies)?
        or      := and ('v' and)*
        and     := unary ('^' unary)*
        unary   := '!' unary | '(' iff ')' | atom
        atom    := Ident '(' term (',' term)* ')'
    """

    def __init__(self, tokens: list[_Token], lineno: int):
        self.tokens = tokens
        self.pos = 0
        self.lineno = lineno
        self.atom_positions: list[tuple[Atom, int]] = []

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def error(self, message, token=None):
        token = token or self.peek()
        col = token.column if token else (self.tokens[-1].column + len(self.tokens[-1].text) if self.tokens else 1)
        raise ParseError(message, self.lineno, col)

    def accept(self, text) -> bool:
        tok = self.peek()
        if tok is not None and tok.text == text and tok.kind in ("op", "ident"):
            self.pos += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            tok = self.peek()
            self.error(f"expected {text!r}, found {tok.text!r}" if tok else f"expected {text!r} at end of line")

    def parse(self) -> Formula:
        formula = self.iff()
        if self.peek() is not None:
            self.error(f"unexpected token {self.peek().text!r}")
        return formula

    def iff(self):
        left = self.implies()
        while self.accept("<=>"):
            left = Iff(left, self.implies())
        return left

    def implies(self):
        left = self.disjunction()
        if self.accept("=>"):
            return Implies(left, self.implies())
        return left

    def disjunction(self):
        left = self.conjunction()
        while self.accept("v"):
            left = Or(left, self.conjunction())
        return left

    def conjunction(self):
        left = self.unary()
        while self.accept("^"):
            left = And(left, self.unary())
        return left

    def unary(self):
        tok = self.peek()
        if tok is None:
            self.error("unexpected end of formula")
        if self.accept("!"):
            return Not(self.unary())
        if self.accept("("):
            inner = self.iff()
            self.expect(")")
            return inner
        if tok.kind != "ident":
            self.error(f"expected atom, found {tok.text!r}")
        if tok.text in _EXISTENTIAL:
            self.error("existential quantifier not supported", tok)
        if tok.text in _UNIVERSAL:
            self.error("explicit quantifiers not supported; free variables are universally quantified", tok)
        self.pos += 1
        if not self.accept("("):
            self.error(f"expected '(' after predicate {tok.text}")
        args = [self.term()]
        while self.accept(","):
            args.append(self.term())
        self.expect(")")
        atom = Atom(tok.text, tuple(args))
        self.atom_positions.append((atom, tok.column))
        return atom

    def term(self) -> Term:
        tok = self.peek()
        if tok is None or tok.kind != "ident":
            self.error("expected variable or constant")
        self.pos += 1
        return Variable(tok.text) if is_variable_name(tok.text) else Constant(tok.text)


def _parse_name_list(tokens, lineno, open_, close):
    """Parse `open_ ident (, ident)* close` starting at tokens[0]."""
    if not tokens or tokens[0].text != open_:
        raise ParseError(f"expected {open_!r}", lineno, tokens[0].column if tokens else None)
    names = []
    i = 1
    while True:
        if i >= len(tokens) or tokens[i].kind != "ident":
            raise ParseError("expected identifier", lineno, tokens[i].column if i < len(tokens) else None)
        names.append(tokens[i].text)
        i += 1
        if i < len(tokens) and tokens[i].text == ",":
            i += 1
            continue
        if i < len(tokens) and tokens[i].text == close:
            i += 1
            break
        raise ParseError(f"expected ',' or {close!r}", lineno, tokens[i].column if i < len(tokens) else None)
    if i != len(tokens):
        raise ParseError(f"unexpected token {tokens[i].text!r}", lineno, tokens[i].column)
    return names


def parse_formula(text: str, kb: Optional[KnowledgeBase] = None, lineno: int = 1) -> Formula:
    """Parse a bare formula; validate against `kb` when given."""
    parser = _FormulaParser(_tokenize(_strip_comment(text), lineno), lineno)
    formula = parser.parse()
    if kb is not None:
        for atom, col in parser.atom_positions:
            _check_atom(atom, kb, lineno, col)
        try:
            free_variables(formula, kb)
        except ParseError as exc:
            raise ParseError(exc.message, lineno) from None
    return formula


def parse_kb(text: str) -> KnowledgeBase:
    """Parse and validate a knowledge base; raises ParseError with line/column."""
    domains: list[DomainDecl] = []
    predicates: list[PredicateDecl] = []
    formula_lines: list[tuple[int, list[_Token]]] = []
    domain_lines: dict[str, int] = {}
    declared = _declared_domains(text)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = _tokenize(_strip_comment(raw), lineno)
        if not tokens:
            continue
        head = tokens[0]
        if head.kind == "ident" and head.text == "domain":
            if len(tokens) < 3 or tokens[1].kind != "ident" or tokens[2].text != "=":
                raise ParseError("expected 'domain <name> = {...}'", lineno, head.column)
            name = tokens[1].text
            if name in domain_lines:
                raise ParseError(f"duplicate domain {name}", lineno, tokens[1].column)
            consts = _parse_name_list(tokens[3:], lineno, "{", "}")
            if len(set(consts)) != len(consts):
                raise ParseError(f"duplicate constant in domain {name}", lineno, tokens[1].column)
            domain_lines[name] = lineno
            domains.append(DomainDecl(name, tuple(consts)))
        elif head.kind == "ident" and head.text == "predicate":
            if len(tokens) < 2 or tokens[1].kind != "ident":
                raise ParseError("expected 'predicate <Name>(<domain>, ...)'", lineno, head.column)
            name = tokens[1].text
            if name in _KEYWORDS:
                raise ParseError(f"reserved name {name}", lineno, tokens[1].column)
            if any(p.name == name for p in predicates):
                raise ParseError(f"duplicate predicate {name}", lineno, tokens[1].column)
            args = _parse_name_list(tokens[2:], lineno, "(", ")")
            for a, tok in zip(args, tokens[3::2]):
                if a not in declared:
                    raise ParseError(f"unknown domain {a}", lineno, tok.column)
            predicates.append(PredicateDecl(name, tuple(args)))
        elif head.kind == "number":
            formula_lines.append((lineno, tokens))
        else:
            raise ParseError(f"unexpected token {head.text!r}", lineno, head.column)

    kb = KnowledgeBase(tuple(domains), tuple(predicates), ())
    formulas = []
    for lineno, tokens in formula_lines:
        weight = float(tokens[0].text)
        if not math.isfinite(weight):
            raise ParseError("non-finite weight", lineno, tokens[0].column)
        if len(tokens) == 1:
            raise ParseError("missing formula after weight", lineno, tokens[0].column)
        parser = _FormulaParser(tokens[1:], lineno)
        formula = parser.parse()
        for atom, col in parser.atom_positions:
            _check_atom(atom, kb, lineno, col)
        try:
            free_variables(formula, kb)
        except ParseError as exc:
            raise ParseError(exc.message, lineno) from None
        formulas.append(WeightedFormula(formula, weight))
    return KnowledgeBase(tuple(domains), tuple(predicates), tuple(formulas))


def _declared_domains(text: str) -> set[str]:
    # domain declarations may appear after the predicates that use them
    names = set()
    for raw in text.splitlines():
        m = re.match(r"\s*domain\s+([A-Za-z_][A-Za-z0-9_]*)\s*=", _strip_comment(raw))
        if m:
            names.add(m.group(1))
    return names
