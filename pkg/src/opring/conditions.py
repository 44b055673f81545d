"""Equality-condition algebra used by the conflict analysis.

Conditions describe when two statement templates can touch the same row.
They are predicates over three kinds of ground terms (table attributes,
transaction parameters, constants), kept in disjunctive normal form: a
disjunction of conjunctions of atoms. The only interpreted atom is
equality; everything else (range predicates, LIKE, ...) is carried as an
opaque atom that is assumed satisfiable and is never used to remove a
clause.

Satisfiability and clause removal are decided per clause by congruence
closure over the equality atoms: union the two sides of every Eq, and a
clause is unsatisfiable exactly when two distinct constants end up in
the same class. There is no arithmetic or inequality reasoning.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple, Union


@dataclass(frozen=True)
class Attribute:
    """A table column, e.g. SHOPPING_CARTS.ID."""

    table: str
    column: str

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class Param:
    """A transaction parameter.

    ``tag`` names the transaction instance the parameter belongs to.
    Within a single template it is empty; when two templates are paired
    during conflict detection each side gets a distinct tag so that e.g.
    sid of the first instance and sid of the second stay distinct terms.
    """

    tag: str
    name: str

    def __str__(self) -> str:
        return f"{self.name}~{self.tag}" if self.tag else self.name


@dataclass(frozen=True)
class Const:
    value: Union[int, str]

    def __str__(self) -> str:
        if isinstance(self.value, str):
            return "'" + self.value.replace("'", "''") + "'"
        return str(self.value)


Term = Union[Attribute, Param, Const]


@dataclass(frozen=True)
class Eq:
    """lhs = rhs. Symmetric: the algebra never distinguishes the sides."""

    lhs: Term
    rhs: Term

    def __str__(self) -> str:
        return f"{self.lhs} = {self.rhs}"


@dataclass(frozen=True)
class Opaque:
    """An uninterpreted predicate, assumed satisfiable, never removable."""

    description: str

    def __str__(self) -> str:
        return f"[{self.description}]"


Atom = Union[Eq, Opaque]


@dataclass(frozen=True)
class Conjunction:
    """An ordered conjunction of atoms. Zero atoms means TRUE."""

    atoms: Tuple[Atom, ...]

    def __str__(self) -> str:
        if not self.atoms:
            return "TRUE"
        return " and ".join(str(a) for a in self.atoms)


@dataclass(frozen=True)
class ConditionDNF:
    """A disjunction of conjunctive clauses. Zero clauses means FALSE."""

    clauses: Tuple[Conjunction, ...]

    def __str__(self) -> str:
        if not self.clauses:
            return "FALSE"
        if len(self.clauses) == 1:
            return str(self.clauses[0])
        return " or ".join(f"({c})" for c in self.clauses)


TRUE = ConditionDNF((Conjunction(()),))
FALSE = ConditionDNF(())


def clause_of(*atoms: Atom) -> Conjunction:
    return Conjunction(tuple(atoms))


def dnf_of(*clauses: Conjunction) -> ConditionDNF:
    return ConditionDNF(tuple(clauses))


def conjoin(a: ConditionDNF, b: ConditionDNF) -> ConditionDNF:
    """Distribute a AND b back into DNF: at most |a| * |b| clauses."""
    out: List[Conjunction] = []
    for ca in a.clauses:
        for cb in b.clauses:
            out.append(Conjunction(ca.atoms + cb.atoms))
    return ConditionDNF(tuple(out))


def disjoin(a: ConditionDNF, b: ConditionDNF) -> ConditionDNF:
    return ConditionDNF(a.clauses + b.clauses)


def retag_params(c: ConditionDNF, tag: str) -> ConditionDNF:
    """Return ``c`` with every Param re-tagged to ``tag``."""

    def term(t: Term) -> Term:
        if isinstance(t, Param):
            return Param(tag, t.name)
        return t

    def atom(a: Atom) -> Atom:
        if isinstance(a, Eq):
            return Eq(term(a.lhs), term(a.rhs))
        return a

    return ConditionDNF(
        tuple(Conjunction(tuple(atom(a) for a in cl.atoms)) for cl in c.clauses)
    )


class _UnionFind:
    """Union-find over terms with constant tracking per class."""

    def __init__(self) -> None:
        self._parent: Dict[Term, Term] = {}
        self._const: Dict[Term, Const] = {}

    def find(self, t: Term) -> Term:
        parent = self._parent
        if t not in parent:
            parent[t] = t
            if isinstance(t, Const):
                self._const[t] = t
            return t
        root = t
        while parent[root] != root:
            root = parent[root]
        while parent[t] != root:  # path compression
            parent[t], t = root, parent[t]
        return root

    def union(self, a: Term, b: Term) -> bool:
        """Merge the classes of a and b.

        Returns False when the merge puts two distinct constants in one
        class (the clause is then unsatisfiable); the merge still happens
        so later queries stay consistent.
        """
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        self._parent[rb] = ra
        ca, cb = self._const.get(ra), self._const.get(rb)
        if ca is not None and cb is not None:
            return ca.value == cb.value
        if cb is not None:
            self._const[ra] = cb
        return True

    def same(self, a: Term, b: Term) -> bool:
        return self.find(a) == self.find(b)


def _close_clause(clause: Conjunction) -> Tuple[_UnionFind, bool]:
    """Congruence-close the Eq atoms of a clause.

    Returns (closure, satisfiable). Opaque atoms are skipped: they can
    neither falsify a clause nor merge terms.
    """
    uf = _UnionFind()
    ok = True
    for atom in clause.atoms:
        if isinstance(atom, Eq):
            if not uf.union(atom.lhs, atom.rhs):
                ok = False
    return uf, ok


def clause_is_satisfiable(clause: Conjunction) -> bool:
    _, ok = _close_clause(clause)
    return ok


def is_satisfiable(c: ConditionDNF) -> bool:
    return any(clause_is_satisfiable(cl) for cl in c.clauses)


def _clause_attributes(clause: Conjunction) -> List[Attribute]:
    attrs: List[Attribute] = []
    seen = set()
    for atom in clause.atoms:
        if isinstance(atom, Eq):
            for t in (atom.lhs, atom.rhs):
                if isinstance(t, Attribute) and t not in seen:
                    seen.add(t)
                    attrs.append(t)
    return attrs


def clause_implies_colocated(clause: Conjunction, k: Param, k2: Param) -> bool:
    """True when the clause's equalities force k = A and k2 = A for a
    common attribute A (chased transitively through the closure)."""
    uf, _ = _close_clause(clause)
    for attr in _clause_attributes(clause):
        if uf.same(k, attr) and uf.same(k2, attr):
            return True
    return False


def remove_colocated_clauses(c: ConditionDNF, k: Param, k2: Param) -> ConditionDNF:
    """Drop every clause that pins both partitioning parameters to one
    common attribute; such a conflict only arises between co-located
    rows, so the assignment (k, k2) already serializes it."""
    kept = tuple(
        cl for cl in c.clauses if not clause_implies_colocated(cl, k, k2)
    )
    return ConditionDNF(kept)


def terms_of(c: ConditionDNF) -> List[Term]:
    """All distinct terms mentioned in Eq atoms, in first-seen order."""
    out: List[Term] = []
    seen = set()
    for cl in c.clauses:
        for atom in cl.atoms:
            if isinstance(atom, Eq):
                for t in (atom.lhs, atom.rhs):
                    if t not in seen:
                        seen.add(t)
                        out.append(t)
    return out
