"""Static partitioning of transaction templates.

Given derived templates, this module finds every potential conflict
between transaction pairs (including a transaction with another instance
of itself), searches for the parameter assignment that removes the most
conflict weight, and classifies each transaction:

  Commutative    appears in no satisfiable conflict at all
  Local          after removal, only ever the reading side of what is left
  Global         a surviving write-write conflict, or some other
                 transaction still reads from it across partitions
  LocalOrGlobal  assigned two or more parameters; the actual class is
                 decided per operation at routing time

Conflict conditions pair instance tags "a" (first transaction) and "b"
(second transaction), so self-conflicts keep the two parameter sets
distinct.
"""
from __future__ import annotations

import itertools
import json
import zlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .conditions import (
    ConditionDNF,
    Conjunction,
    Param,
    clause_implies_colocated,
    clause_is_satisfiable,
    conjoin,
    is_satisfiable,
    retag_params,
)
from .minisql import TransactionTemplate

KIND_WW = "write-write"
KIND_A_READS_B = "a-reads-from-b"
KIND_B_READS_A = "b-reads-from-a"

CLASS_COMMUTATIVE = "Commutative"
CLASS_LOCAL = "Local"
CLASS_GLOBAL = "Global"
CLASS_LOCAL_OR_GLOBAL = "LocalOrGlobal"

DEFAULT_CANDIDATE_CAP = 10_000_000


class SearchSpaceExceeded(RuntimeError):
    """Raised when the assignment search would enumerate more candidates
    than the cap allows; prune parameters or raise the cap."""


@dataclass(frozen=True)
class ConflictRecord:
    """Accumulated conflict condition between transactions a and b.

    kind is write-write, a-reads-from-b, or b-reads-from-a; for
    write-write the writer is both sides, otherwise the writer is the
    side being read from. a and b may name the same transaction.
    """

    a: str
    b: str
    kind: str
    condition: ConditionDNF

    def writer_sides(self) -> Tuple[str, ...]:
        if self.kind == KIND_WW:
            return (self.a, self.b)
        if self.kind == KIND_A_READS_B:
            return (self.b,)
        return (self.a,)

    def render(self) -> str:
        return f"{self.a} / {self.b} [{self.kind}]: {self.condition}"


@dataclass(frozen=True)
class PartitioningArray:
    """Transaction name -> ordered tuple of assigned parameter names."""

    assignment: Tuple[Tuple[str, Tuple[str, ...]], ...]

    @staticmethod
    def of(mapping: Mapping[str, Sequence[str]]) -> "PartitioningArray":
        return PartitioningArray(
            tuple(sorted((k, tuple(v)) for k, v in mapping.items()))
        )

    def params_of(self, name: str) -> Tuple[str, ...]:
        for k, v in self.assignment:
            if k == name:
                return v
        return ()

    def as_dict(self) -> Dict[str, Tuple[str, ...]]:
        return dict(self.assignment)


def _attrs_intersect(x, y) -> bool:
    return bool(x.attributes & y.attributes)


def detect_conflicts(templates: Sequence[TransactionTemplate]) -> List[ConflictRecord]:
    """Accumulate pairwise conflict conditions.

    For every template pair (a <= b by declaration order, including
    a == b) and every entry pair with intersecting attribute sets, the
    conjunction of the two entry conditions joins the record of the
    matching kind. Records whose accumulated condition is unsatisfiable
    are dropped.
    """
    out: List[ConflictRecord] = []
    for i, ta in enumerate(templates):
        for tb in templates[i:]:
            buckets: Dict[str, List[Conjunction]] = {
                KIND_WW: [],
                KIND_A_READS_B: [],
                KIND_B_READS_A: [],
            }

            def accumulate(kind: str, ea, eb) -> None:
                cond = conjoin(
                    retag_params(ea.condition, "a"), retag_params(eb.condition, "b")
                )
                buckets[kind].extend(cond.clauses)

            for wa in ta.write_set:
                for wb in tb.write_set:
                    if _attrs_intersect(wa, wb):
                        accumulate(KIND_WW, wa, wb)
            for ra in ta.read_set:
                for wb in tb.write_set:
                    if _attrs_intersect(ra, wb):
                        accumulate(KIND_A_READS_B, ra, wb)
            if ta.name != tb.name:
                for wa in ta.write_set:
                    for rb in tb.read_set:
                        if _attrs_intersect(wa, rb):
                            accumulate(KIND_B_READS_A, wa, rb)
            for kind, clauses in buckets.items():
                if not clauses:
                    continue
                cond = ConditionDNF(tuple(clauses))
                if is_satisfiable(cond):
                    out.append(ConflictRecord(ta.name, tb.name, kind, cond))
    return out


def _survives(
    record: ConflictRecord,
    params_a: Tuple[str, ...],
    params_b: Tuple[str, ...],
) -> bool:
    """A record survives when some satisfiable clause is removed by no
    assigned parameter pairing."""
    for clause in record.condition.clauses:
        if not clause_is_satisfiable(clause):
            continue
        removed = any(
            clause_implies_colocated(clause, Param("a", ka), Param("b", kb))
            for ka in params_a
            for kb in params_b
        )
        if not removed:
            return True
    return False


def residual_conflicts(
    conflicts: Sequence[ConflictRecord], p: PartitioningArray
) -> List[ConflictRecord]:
    return [
        r for r in conflicts if _survives(r, p.params_of(r.a), p.params_of(r.b))
    ]


def cost(
    p: PartitioningArray,
    conflicts: Sequence[ConflictRecord],
    templates: Sequence[TransactionTemplate],
) -> float:
    """Sum of weight(a) + weight(b) over records that survive removal."""
    weights = {t.name: t.weight for t in templates}
    total = 0.0
    for r in residual_conflicts(conflicts, p):
        total += weights[r.a] + weights[r.b]
    return total


def _global_names(
    conflicts: Sequence[ConflictRecord], p: PartitioningArray
) -> set:
    out = set()
    for r in residual_conflicts(conflicts, p):
        out.update(r.writer_sides())
    return out


def _conflict_components(
    names: Sequence[str], conflicts: Sequence[ConflictRecord]
) -> List[List[str]]:
    parent = {n: n for n in names}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for r in conflicts:
        ra, rb = find(r.a), find(r.b)
        if ra != rb:
            parent[rb] = ra
    groups: Dict[str, List[str]] = {}
    for n in names:
        groups.setdefault(find(n), []).append(n)
    return [sorted(g) for g in groups.values()]


def optimize_partitioning(
    templates: Sequence[TransactionTemplate],
    conflicts: Optional[Sequence[ConflictRecord]] = None,
    *,
    candidate_cap: int = DEFAULT_CANDIDATE_CAP,
    multi_parameter: bool = True,
) -> PartitioningArray:
    """Exhaustively search single-parameter (or none) assignments for the
    globally minimal cost.

    The cost is a sum over conflict records, and each record depends only
    on its two endpoints' assignments, so the search runs independently
    per connected component of the conflict graph; the optimum and the
    tie-breaks (fewer Global transactions, then lexicographically
    smallest assignment) are identical to whole-space enumeration. When
    ``multi_parameter`` is set, a refinement pass then widens
    conflict-involved transactions to several parameters where that
    provably clears every record still touching them; widened writers
    report class LocalOrGlobal.
    """
    if conflicts is None:
        conflicts = detect_conflicts(templates)
    by_name = {t.name: t for t in templates}
    names = [t.name for t in templates]
    weights = {t.name: t.weight for t in templates}

    assignment: Dict[str, Tuple[str, ...]] = {}
    for component in _conflict_components(names, conflicts):
        comp_set = set(component)
        comp_records = [r for r in conflicts if r.a in comp_set]
        options = [
            [()] + [(p,) for p in by_name[n].params]
            for n in component
        ]
        space = 1
        for o in options:
            space *= len(o)
        if space > candidate_cap:
            raise SearchSpaceExceeded(
                f"{space} candidate assignments for component {component} "
                f"exceeds the cap of {candidate_cap}"
            )
        # Survival of a record depends only on the two endpoint options, so
        # cache it; the product loop then does dictionary lookups instead of
        # repeated congruence closures.
        cache: Dict[Tuple[int, Tuple[str, ...], Tuple[str, ...]], bool] = {}

        def survives(ri: int, pa: Tuple[str, ...], pb: Tuple[str, ...]) -> bool:
            key = (ri, pa, pb)
            hit = cache.get(key)
            if hit is None:
                hit = _survives(comp_records[ri], pa, pb)
                cache[key] = hit
            return hit

        best = None
        for combo in itertools.product(*options):
            cand = dict(zip(component, combo))
            c = 0.0
            surviving = []
            for ri, r in enumerate(comp_records):
                if survives(ri, cand[r.a], cand[r.b]):
                    c += weights[r.a] + weights[r.b]
                    surviving.append(r)
            if best is not None and c > best[0]:
                continue
            n_globals = len(
                {side for r in surviving for side in r.writer_sides()}
            )
            key = (c, n_globals, combo)
            if best is None or key < best:
                best = key
        assert best is not None
        assignment.update(dict(zip(component, best[2])))

    p = PartitioningArray.of(assignment)
    if multi_parameter:
        p = _widen_multi_key(p, templates, conflicts)
    return p


def _widen_multi_key(
    p: PartitioningArray,
    templates: Sequence[TransactionTemplate],
    conflicts: Sequence[ConflictRecord],
) -> PartitioningArray:
    """Refinement: give a transaction more parameters when every record
    still touching it is removed under some pairing of the widened
    lists. A coordinated writer turns into LocalOrGlobal, and clearing a
    reader's records can let the transactions it reads from go local.

    Transactions are visited in name order and accepted widenings take
    effect immediately. A transaction with no surviving records is never
    widened: extra parameters would make some of its operations route
    globally for no benefit.
    """
    assignment = p.as_dict()
    by_name = {t.name: t for t in templates}
    for name in sorted(assignment):
        current = PartitioningArray.of(assignment)
        params = by_name[name].params
        if len(params) < 2:
            continue
        blocking = [
            r
            for r in residual_conflicts(conflicts, current)
            if name in (r.a, r.b)
        ]
        if not blocking:
            continue
        base = assignment[name]
        widened = None
        for size in range(max(2, len(base)), len(params) + 1):
            for subset in itertools.combinations(params, size):
                if not set(base) <= set(subset):
                    continue
                trial = dict(assignment)
                trial[name] = subset
                tp = PartitioningArray.of(trial)
                if not any(
                    _survives(r, tp.params_of(r.a), tp.params_of(r.b))
                    for r in blocking
                ):
                    widened = subset
                    break
            if widened:
                break
        if widened:
            assignment[name] = widened
    return PartitioningArray.of(assignment)


# ---------------------------------------------------------------- classify

def stable_hash(value) -> int:
    """Deterministic cross-process hash for routing and homing."""
    if isinstance(value, int):
        data = b"i:" + str(value).encode()
    else:
        data = b"s:" + str(value).encode()
    return zlib.crc32(data)


@dataclass(frozen=True)
class Classification:
    name: str
    cls: str
    params: Tuple[str, ...]


@dataclass
class ClassificationReport:
    classes: Dict[str, str]
    partitioning: Dict[str, Tuple[str, ...]]
    residual: List[ConflictRecord]
    total_cost: float

    def counts(self) -> Dict[str, int]:
        out = {
            CLASS_COMMUTATIVE: 0,
            CLASS_LOCAL: 0,
            CLASS_GLOBAL: 0,
            CLASS_LOCAL_OR_GLOBAL: 0,
        }
        for c in self.classes.values():
            out[c] += 1
        return out

    def to_json(self) -> str:
        doc = {
            "version": 1,
            "total_cost": self.total_cost,
            "transactions": [
                {
                    "name": name,
                    "class": self.classes[name],
                    "params": list(self.partitioning.get(name, ())),
                }
                for name in sorted(self.classes)
            ],
            "counts": self.counts(),
            "residual_conflicts": [
                {
                    "a": r.a,
                    "b": r.b,
                    "kind": r.kind,
                    "condition": str(r.condition),
                }
                for r in self.residual
            ],
        }
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"

    @staticmethod
    def routing_view(doc: dict) -> "RoutingView":
        return RoutingView(
            classes={t["name"]: t["class"] for t in doc["transactions"]},
            partitioning={t["name"]: tuple(t["params"]) for t in doc["transactions"]},
        )

    def view(self) -> "RoutingView":
        return RoutingView(
            classes=dict(self.classes),
            partitioning=dict(self.partitioning),
        )

    def human_table(self) -> str:
        rows = [("transaction", "class", "partitioned by")]
        for name in sorted(self.classes):
            rows.append(
                (name, self.classes[name], ", ".join(self.partitioning.get(name, ())) or "-")
            )
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = []
        for i, r in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        counts = self.counts()
        lines.append("")
        lines.append(
            f"{counts[CLASS_LOCAL]} Local, {counts[CLASS_GLOBAL]} Global, "
            f"{counts[CLASS_COMMUTATIVE]} Commutative, "
            f"{counts[CLASS_LOCAL_OR_GLOBAL]} LocalOrGlobal; "
            f"residual cost {self.total_cost:g}"
        )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RoutingView:
    """The part of a report the runtime needs: classes and keys."""

    classes: Mapping[str, str]
    partitioning: Mapping[str, Tuple[str, ...]]


def classify(
    templates: Sequence[TransactionTemplate],
    p: PartitioningArray,
    conflicts: Optional[Sequence[ConflictRecord]] = None,
) -> ClassificationReport:
    if conflicts is None:
        conflicts = detect_conflicts(templates)
    residual = residual_conflicts(conflicts, p)
    in_any = set()
    for r in conflicts:
        in_any.add(r.a)
        in_any.add(r.b)
    global_names = set()
    for r in residual:
        global_names.update(r.writer_sides())
    classes: Dict[str, str] = {}
    for t in templates:
        if t.name not in in_any:
            classes[t.name] = CLASS_COMMUTATIVE
        elif len(p.params_of(t.name)) >= 2:
            classes[t.name] = CLASS_LOCAL_OR_GLOBAL
        elif t.name in global_names:
            classes[t.name] = CLASS_GLOBAL
        else:
            classes[t.name] = CLASS_LOCAL
    return ClassificationReport(
        classes=classes,
        partitioning={t.name: p.params_of(t.name) for t in templates},
        residual=residual,
        total_cost=cost(p, conflicts, templates),
    )


def partition_templates(
    templates: Sequence[TransactionTemplate],
    *,
    candidate_cap: int = DEFAULT_CANDIDATE_CAP,
    multi_parameter: bool = True,
) -> ClassificationReport:
    """detect + optimize + classify in one step."""
    conflicts = detect_conflicts(templates)
    p = optimize_partitioning(
        templates,
        conflicts,
        candidate_cap=candidate_cap,
        multi_parameter=multi_parameter,
    )
    return classify(templates, p, conflicts)
