"""Horn rule types: atoms, canonical forms, shape checks, taxonomy.

A rule is body -> head over binary atoms. Output rules must be connected
(atoms transitively linked through shared terms), closed (every variable in
at least two atoms) and safe (head variables all appear in the body).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

VARIABLE_ALPHABET = ("X", "Y", "Z", "W", "V", "U", "T", "S")

RULE_TYPES = ("symmetry", "inversion", "hierarchy", "composition", "other")


def variable_symbol(i: int) -> str:
    if i < len(VARIABLE_ALPHABET):
        return VARIABLE_ALPHABET[i]
    return f"V{i - len(VARIABLE_ALPHABET) + 1}"


@dataclass(frozen=True)
class Term:
    """Either a variable from the canonical alphabet or an entity constant."""

    is_var: bool
    name: str

    @staticmethod
    def var(name: str) -> "Term":
        return Term(True, name)

    @staticmethod
    def const(entity: str) -> "Term":
        return Term(False, entity)

    def __repr__(self) -> str:
        return self.name if self.is_var else f"'{self.name}'"


@dataclass(frozen=True)
class Atom:
    predicate: str
    arg1: Term
    arg2: Term

    @property
    def args(self) -> tuple[Term, Term]:
        return (self.arg1, self.arg2)

    def variables(self) -> list[str]:
        return [t.name for t in self.args if t.is_var]

    def terms_key(self) -> frozenset[str]:
        # shared-term connectivity key: variables and constants both connect
        return frozenset(f"v:{t.name}" if t.is_var else f"c:{t.name}" for t in self.args)

    def __repr__(self) -> str:
        return f"{self.predicate}({self.arg1!r},{self.arg2!r})"


@dataclass(frozen=True)
class HornRule:
    """head holds when every body atom holds; body may be empty mid-search."""

    head: Atom
    body: tuple[Atom, ...] = ()

    @property
    def length(self) -> int:
        # atom count including the head
        return len(self.body) + 1

    def atoms(self) -> tuple[Atom, ...]:
        return (self.head,) + self.body

    def variables(self) -> list[str]:
        """Distinct variables in first-appearance order, head first."""
        seen: list[str] = []
        for atom in self.atoms():
            for v in atom.variables():
                if v not in seen:
                    seen.append(v)
        return seen

    def key(self) -> str:
        return format_rule(self)

    def __repr__(self) -> str:
        return format_rule(self)


def format_rule(rule: HornRule) -> str:
    def fa(a: Atom) -> str:
        return f"{a.predicate}({a.arg1!r},{a.arg2!r})"

    body = " & ".join(fa(a) for a in rule.body) if rule.body else "true"
    return f"{body} => {fa(rule.head)}"


class ShapeCheck(NamedTuple):
    connected: bool
    closed: bool
    safe: bool

    def all_ok(self) -> bool:
        return self.connected and self.closed and self.safe


def check_rule_shape(rule: HornRule) -> ShapeCheck:
    """Connectedness / closedness / safety for a rule with >= 1 body atom."""
    if not rule.body:
        raise ValueError("shape checks need at least one body atom")
    atoms = rule.atoms()

    # connected: the atom graph linked by shared terms has one component
    n = len(atoms)
    keys = [a.terms_key() for a in atoms]
    component = {0}
    grew = True
    while grew:
        grew = False
        for i in range(n):
            if i in component:
                continue
            if any(keys[i] & keys[j] for j in component):
                component.add(i)
                grew = True
    connected = len(component) == n

    counts: dict[str, int] = {}
    for atom in atoms:
        for v in atom.variables():
            counts[v] = counts.get(v, 0) + 1
    closed = all(c >= 2 for c in counts.values())

    body_vars = {v for a in rule.body for v in a.variables()}
    safe = set(rule.head.variables()) <= body_vars

    return ShapeCheck(connected, closed, safe)


def canonicalize(rule: HornRule) -> HornRule:
    """Canonical form: variables renamed by first appearance (head first) under
    the body-atom ordering that minimizes the rule signature."""
    best_sig = None
    best_perm = None
    for perm in itertools.permutations(rule.body):
        mapping: dict[str, int] = {}

        def tag(t: Term) -> str:
            if not t.is_var:
                return f"c:{t.name}"
            if t.name not in mapping:
                mapping[t.name] = len(mapping)
            return f"v{mapping[t.name]}"

        sig = tuple(
            (a.predicate, tag(a.arg1), tag(a.arg2)) for a in (rule.head,) + perm
        )
        if best_sig is None or sig < best_sig:
            best_sig = sig
            best_perm = perm

    mapping = {}

    def rename(t: Term) -> Term:
        if not t.is_var:
            return t
        if t.name not in mapping:
            mapping[t.name] = variable_symbol(len(mapping))
        return Term.var(mapping[t.name])

    def ra(a: Atom) -> Atom:
        return Atom(a.predicate, rename(a.arg1), rename(a.arg2))

    head = ra(rule.head)
    body = tuple(ra(a) for a in best_perm)
    return HornRule(head, body)


def classify_rule(rule: HornRule) -> str:
    """One of symmetry / inversion / hierarchy / composition / other."""
    rule = canonicalize(rule)
    head = rule.head
    if any(not t.is_var for a in rule.atoms() for t in a.args):
        return "other"
    h1, h2 = head.arg1.name, head.arg2.name

    if len(rule.body) == 1:
        a = rule.body[0]
        a1, a2 = a.arg1.name, a.arg2.name
        if (a1, a2) == (h2, h1):
            return "symmetry" if a.predicate == head.predicate else "inversion"
        if (a1, a2) == (h1, h2) and a.predicate != head.predicate:
            return "hierarchy"
        return "other"

    if len(rule.body) == 2 and h1 != h2:
        for a, b in itertools.permutations(rule.body):
            mids = set(a.variables() + b.variables()) - {h1, h2}
            if len(mids) != 1:
                continue
            (m,) = mids
            if (a.arg1.name, a.arg2.name) == (h1, m) and (b.arg1.name, b.arg2.name) == (m, h2):
                return "composition"
        return "other"

    return "other"


# -- wire format -----------------------------------------------------------


def term_to_json(t: Term):
    return t.name if t.is_var else {"const": t.name}


def term_from_json(obj) -> Term:
    if isinstance(obj, str):
        return Term.var(obj)
    return Term.const(obj["const"])


def atom_to_json(a: Atom) -> dict:
    return {"p": a.predicate, "args": [term_to_json(a.arg1), term_to_json(a.arg2)]}


def atom_from_json(obj: dict) -> Atom:
    return Atom(obj["p"], term_from_json(obj["args"][0]), term_from_json(obj["args"][1]))


def rule_to_json(rule: HornRule) -> dict:
    return {"head": atom_to_json(rule.head), "body": [atom_to_json(a) for a in rule.body]}


def rule_from_json(obj: dict) -> HornRule:
    return HornRule(
        head=atom_from_json(obj["head"]),
        body=tuple(atom_from_json(a) for a in obj["body"]),
    )
