"""Offline verification of recorded runs.

Works from the trace alone: the header carries the schema, templates,
and initial state, every request carries its arguments, and per-server
delivery order is the order of apply/append events, so everything here
re-derives expected behavior independently of the runtime that produced
the file.

Four layers:

* structural audits: request conservation, queue discipline, epoch
  arithmetic, token content reconstruction;
* ordering properties over deliveries: integrity, total order with no
  delivery gaps, pairwise agreement, per-origin order, epoch order, and
  the requirement that a server has delivered every earlier epoch
  before appending into a new one;
* serial equivalence: `build_total_order` folds the run into one
  deterministic serial history (coordinated updates at their token
  positions, every other operation between the deliveries its server
  had seen and the next one), and `check_serial_equivalence` executes
  that history on a single fresh store, comparing every reply byte for
  byte and every server's authoritative slice of the final state;
* per-server replay: each server's own effect sequence re-executed
  statement by statement, comparing replies, recorded updates, cells,
  and the final dump.

`brute_force_serializable` is the independent oracle for tiny runs: it
tries every interleaving of the per-server commit sequences instead of
trusting the constructed order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

from .minisql import (
    bind,
    parse_schema,
    parse_templates,
    statement_from_doc,
    statement_to_doc,
)
from .store import ApplyError, Database, StatementError, StateUpdate, Store
from .trace import Trace, parse_trace

ORDER_CHECKS = (
    "integrity",
    "total_order",
    "agreement",
    "local_order",
    "epoch_order",
    "epoch_integrity",
)
ALL_CHECKS = ("structure",) + ORDER_CHECKS + ("serial_equivalence", "replay")


class CheckError(ValueError):
    """The trace is too malformed to evaluate."""


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: Optional[str] = None
    witness: Optional[dict] = None


@dataclass
class Verdict:
    ok: bool
    results: List[CheckResult]
    stats: dict = field(default_factory=dict)

    def result(self, name: str) -> CheckResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def failed(self) -> List[CheckResult]:
        return [r for r in self.results if not r.ok]

    def to_doc(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": r.name, "ok": r.ok, "detail": r.detail, "witness": r.witness}
                for r in self.results
            ],
            "stats": self.stats,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_doc(), indent=2) + "\n"


def _canon(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


class TraceIndex:
    """Precomputed views over one trace.

    `D[p]` is server p's delivery sequence: its own appends plus the
    foreign updates it applied, in trace order. `append_rank` numbers
    appends by global position, which in a correct run is the one total
    order every server's deliveries follow."""

    def __init__(self, trace: Trace):
        self.trace = trace
        self.n = trace.n_servers
        self.header = trace.header
        self.reqs: Dict[str, dict] = {}
        self.req_repeats: Dict[str, List[dict]] = {}
        self.commits: Dict[str, dict] = {}
        self.commit_order: List[List[str]] = [[] for _ in range(self.n)]
        self.appends: List[dict] = []
        self.append_by_op: Dict[str, dict] = {}
        self.append_rank: Dict[str, int] = {}
        self.deliveries: List[List[dict]] = [[] for _ in range(self.n)]
        self.D: List[List[str]] = [[] for _ in range(self.n)]

        for e in trace.events:
            t = e["type"]
            if t == "req":
                self.req_repeats.setdefault(e["op"], []).append(e)
                self.reqs.setdefault(e["op"], e)
            elif t == "exec_commit":
                if e["op"] not in self.commits:
                    self.commits[e["op"]] = e
                    self.commit_order[e["server"]].append(e["op"])
            elif t == "append":
                if e["op"] not in self.append_by_op:
                    self.append_rank[e["op"]] = len(self.appends)
                    self.append_by_op[e["op"]] = e
                self.appends.append(e)
                self.deliveries[e["server"]].append(e)
                self.D[e["server"]].append(e["op"])
            elif t == "apply":
                self.deliveries[e["server"]].append(e)
                self.D[e["server"]].append(e["op"])

        self.delivered_sets = [set(d) for d in self.D]

    def positions(self, server: int) -> Dict[str, int]:
        return {op: i for i, op in enumerate(self.D[server])}


def _index(trace: Union[Trace, str]) -> TraceIndex:
    if isinstance(trace, str):
        trace = parse_trace(trace)
    return TraceIndex(trace)


# ------------------------------------------------------------- audits


def check_structure(ix: TraceIndex) -> CheckResult:
    def fail(detail: str, **witness) -> CheckResult:
        return CheckResult("structure", False, detail, witness or None)

    counted = ("req", "map", "reply", "queue", "exec_commit", "append")
    per_op: Dict[str, Dict[str, int]] = {}
    for e in ix.trace.events:
        if e["type"] in counted:
            counts = per_op.setdefault(e["op"], {})
            counts[e["type"]] = counts.get(e["type"], 0) + 1

    for op, counts in per_op.items():
        if counts.get("reply", 0) != 1:
            return fail(f"operation {op} got {counts.get('reply', 0)} replies", op=op)
        if counts.get("req", 0) != counts.get("map", 0) + 1:
            return fail(
                f"operation {op}: {counts.get('req', 0)} requests vs "
                f"{counts.get('map', 0)} redirects",
                op=op,
            )
        if counts.get("exec_commit", 0) > 1:
            return fail(f"operation {op} committed more than once", op=op)
        if counts.get("append", 0) and not counts.get("exec_commit", 0):
            return fail(f"operation {op} was appended without committing", op=op)

    for op, repeats in ix.req_repeats.items():
        first = repeats[0]
        for e in repeats[1:]:
            if any(e[k] != first[k] for k in ("txn", "args", "cls", "home")):
                return fail(f"operation {op} re-sent with different content", op=op)

    for e in ix.trace.events:
        if e["type"] == "queue":
            req = ix.reqs.get(e["op"])
            if req is None:
                return fail(f"queued op {e['op']} was never requested", op=e["op"])
            if req["cls"] != "Global":
                return fail(
                    f"{req['cls']} operation {e['op']} was queued for the token",
                    op=e["op"],
                )

    # epoch arithmetic plus a replay of the token's content: appends
    # ride until the origin's next receipt, and every recorded length
    # and delivery must match the reconstruction.
    epoch = -1
    entries: List[Tuple[str, int]] = []
    for e in ix.trace.events:
        t = e["type"]
        if t == "token_recv":
            epoch += 1
            if e["epoch"] != epoch:
                return fail(
                    f"token receipt {epoch} carries epoch {e['epoch']}",
                    epoch=e["epoch"],
                )
            if e["server"] != epoch % ix.n:
                return fail(
                    f"epoch {epoch} received by server {e['server']}, "
                    f"expected {epoch % ix.n}",
                    epoch=epoch,
                )
            entries = [(op, o) for op, o in entries if o != e["server"]]
            if e["len"] != len(entries):
                return fail(
                    f"epoch {epoch}: receipt says {e['len']} entries, "
                    f"reconstruction has {len(entries)}",
                    epoch=epoch,
                )
        elif t == "append":
            if e["server"] != e["epoch"] % ix.n:
                return fail(
                    f"append by server {e['server']} in epoch {e['epoch']}",
                    op=e["op"],
                )
            entries.append((e["op"], e["server"]))
        elif t == "token_pass":
            if e["to"] != (e["server"] + 1) % ix.n:
                return fail(
                    f"server {e['server']} passed the token to {e['to']}",
                    epoch=e["epoch"],
                )
            if e["len"] != len(entries):
                return fail(
                    f"epoch {e['epoch']}: pass says {e['len']} entries, "
                    f"reconstruction has {len(entries)}",
                    epoch=e["epoch"],
                )
        elif t == "apply":
            if (e["op"], e["origin"]) not in entries:
                return fail(
                    f"server {e['server']} applied {e['op']}, which is not "
                    "riding the token",
                    op=e["op"],
                )

    return CheckResult("structure", True)


# -------------------------------------------------- ordering properties


def check_integrity(ix: TraceIndex) -> CheckResult:
    """Every delivered update was appended exactly once, reaches each
    server at most once, never comes back to its origin as foreign, and
    carries the origin and epoch it was appended under."""

    def fail(detail: str, **witness) -> CheckResult:
        return CheckResult("integrity", False, detail, witness or None)

    seen_append: Dict[str, int] = {}
    for e in ix.appends:
        seen_append[e["op"]] = seen_append.get(e["op"], 0) + 1
    for op, c in seen_append.items():
        if c != 1:
            return fail(f"{op} appended {c} times", op=op)

    for p in range(ix.n):
        seen = set()
        for e in ix.deliveries[p]:
            op = e["op"]
            if op in seen:
                return fail(f"server {p} delivered {op} twice", server=p, op=op)
            seen.add(op)
            if e["type"] != "apply":
                continue
            if e["origin"] == p:
                return fail(
                    f"server {p} applied its own update {op}", server=p, op=op
                )
            app = ix.append_by_op.get(op)
            if app is None:
                return fail(
                    f"server {p} delivered {op}, which was never appended",
                    server=p,
                    op=op,
                )
            if e["origin"] != app["server"] or e["oepoch"] != app["epoch"]:
                return fail(
                    f"{op} delivered at server {p} as origin/epoch "
                    f"({e['origin']}, {e['oepoch']}) but appended as "
                    f"({app['server']}, {app['epoch']})",
                    server=p,
                    op=op,
                )
    return CheckResult("integrity", True)


def check_total_order(ix: TraceIndex) -> CheckResult:
    """If any server delivers a before b, every server that delivers b
    delivers a, and delivers it first. Checked as two clauses: no
    inversions on common updates, and no gaps in what was delivered
    before a common update."""
    for p in range(ix.n):
        pos_p = ix.positions(p)
        for q in range(ix.n):
            if p == q:
                continue
            pos_q = ix.positions(q)
            common = [op for op in ix.D[p] if op in pos_q]
            for a, b in zip(common, common[1:]):
                if pos_q[a] > pos_q[b]:
                    return CheckResult(
                        "total_order",
                        False,
                        f"servers {p} and {q} deliver {a} and {b} in "
                        "opposite orders",
                        {"servers": [p, q], "ops": [a, b]},
                    )
            first_missing = None
            for b in ix.D[q]:
                if b in pos_p:
                    if first_missing is not None:
                        return CheckResult(
                            "total_order",
                            False,
                            f"server {p} delivered {b} but not "
                            f"{first_missing}, which server {q} delivered "
                            "first",
                            {"servers": [p, q], "ops": [first_missing, b]},
                        )
                elif first_missing is None:
                    first_missing = b
    return CheckResult("total_order", True)


def check_agreement(ix: TraceIndex) -> CheckResult:
    """If p delivered u and q delivered u', then p delivered u' or q
    delivered u: no two servers hold updates the other lacks."""
    for p in range(ix.n):
        for q in range(p + 1, ix.n):
            only_p = ix.delivered_sets[p] - ix.delivered_sets[q]
            only_q = ix.delivered_sets[q] - ix.delivered_sets[p]
            if only_p and only_q:
                a, b = sorted(only_p)[0], sorted(only_q)[0]
                return CheckResult(
                    "agreement",
                    False,
                    f"servers {p} and {q} diverge: {a} reached only {p}, "
                    f"{b} reached only {q}",
                    {"servers": [p, q], "ops": [a, b]},
                )
    return CheckResult("agreement", True)


def check_local_order(ix: TraceIndex) -> CheckResult:
    """Deliveries respect each origin's own append order."""
    origin_rank: Dict[int, Dict[str, int]] = {}
    for e in ix.appends:
        ranks = origin_rank.setdefault(e["server"], {})
        if e["op"] not in ranks:
            ranks[e["op"]] = len(ranks)
    for p in range(ix.n):
        last: Dict[int, int] = {}
        for op in ix.D[p]:
            app = ix.append_by_op.get(op)
            if app is None:
                continue
            origin = app["server"]
            rank = origin_rank[origin][op]
            if last.get(origin, -1) > rank:
                return CheckResult(
                    "local_order",
                    False,
                    f"server {p} delivers {op} out of origin {origin}'s "
                    "append order",
                    {"server": p, "op": op, "origin": origin},
                )
            last[origin] = rank
    return CheckResult("local_order", True)


def check_epoch_order(ix: TraceIndex) -> CheckResult:
    """Deliveries respect the order of the epochs that produced them."""
    for p in range(ix.n):
        prev = (-1, -1)
        prev_op = None
        for op in ix.D[p]:
            app = ix.append_by_op.get(op)
            if app is None:
                continue
            key = (app["epoch"], ix.append_rank[op])
            if key < prev:
                return CheckResult(
                    "epoch_order",
                    False,
                    f"server {p} delivers {op} (epoch {app['epoch']}) after "
                    f"{prev_op} (epoch {prev[0]})",
                    {"server": p, "op": op},
                )
            prev = key
            prev_op = op
    return CheckResult("epoch_order", True)


def check_epoch_integrity(ix: TraceIndex) -> CheckResult:
    """Before its first append into epoch e, a server must have
    delivered every update appended in earlier epochs: the holder
    catches up on the whole token before adding its own work."""
    prior: Dict[int, List[str]] = {}
    acc: List[str] = []
    for a in sorted(ix.appends, key=lambda a: a["epoch"]):
        prior.setdefault(a["epoch"], list(acc))
        acc.append(a["op"])

    for p in range(ix.n):
        delivered = set()
        checked = set()
        for e in ix.deliveries[p]:
            if e["type"] == "append" and e["epoch"] not in checked:
                checked.add(e["epoch"])
                for op in prior.get(e["epoch"], ()):
                    if op not in delivered:
                        return CheckResult(
                            "epoch_integrity",
                            False,
                            f"server {p} appends {e['op']} in epoch "
                            f"{e['epoch']} before delivering {op} from an "
                            "earlier epoch",
                            {"server": p, "op": e["op"], "missing": op},
                        )
            delivered.add(e["op"])
    return CheckResult("epoch_integrity", True)


def check_ordering(trace: Union[Trace, str]) -> Verdict:
    """Just the delivery-ordering properties, no state re-execution."""
    ix = _index(trace)
    results = [
        check_integrity(ix),
        check_total_order(ix),
        check_agreement(ix),
        check_local_order(ix),
        check_epoch_order(ix),
        check_epoch_integrity(ix),
    ]
    return Verdict(all(r.ok for r in results), results)


# -------------------------------------------------------- total order


def build_total_order(trace: Union[Trace, str]) -> List[str]:
    """One serial history equivalent to the run.

    Coordinated updates keep their token positions. Every other
    committed operation sits after the deliveries its server had seen
    when it committed and before the rest; operations at one server
    keep their commit order, and remaining ties across servers resolve
    by operation id. Meaningful once the ordering checks pass; the
    result contains every committed operation exactly once."""
    ix = _index(trace)
    # fence = number of deliveries the committing server had seen
    groups: Dict[int, Dict[int, List[str]]] = {}
    for p in range(ix.n):
        fence = 0
        for e in ix.trace.events:
            if e.get("server") != p:
                continue
            t = e["type"]
            if t in ("apply", "append"):
                fence += 1
            elif t == "exec_commit" and e["op"] not in ix.append_rank:
                groups.setdefault(fence, {}).setdefault(p, []).append(e["op"])

    rank_of = {r: op for op, r in ix.append_rank.items()}
    order: List[str] = []
    for f in range(len(ix.appends) + 1):
        queues = sorted(groups.get(f, {}).items())
        heads = [(ops[0], p) for p, ops in queues]
        cursors = {p: 0 for p, _ in queues}
        by_server = dict(queues)
        while heads:
            heads.sort()
            op, p = heads.pop(0)
            order.append(op)
            cursors[p] += 1
            if cursors[p] < len(by_server[p]):
                heads.append((by_server[p][cursors[p]], p))
        if f in rank_of and rank_of[f] in ix.commits:
            order.append(rank_of[f])
    return order


def order_respects_constraints(
    trace: Union[Trace, str], order: List[str]
) -> Optional[str]:
    """First violated placement constraint in the given serial order,
    or None: coordinated updates must follow their token positions,
    every other operation must sit exactly at its server's delivery
    fence, and one server's operations must keep their commit order."""
    ix = _index(trace)
    fences: Dict[str, int] = {}
    for p in range(ix.n):
        fence = 0
        for e in ix.trace.events:
            if e.get("server") != p:
                continue
            t = e["type"]
            if t in ("apply", "append"):
                fence += 1
            elif t == "exec_commit" and e["op"] not in ix.append_rank:
                fences[e["op"]] = fence

    last_rank = -1
    seen_globals = 0
    commit_pos: Dict[str, int] = {}
    for p in range(ix.n):
        for i, op in enumerate(ix.commit_order[p]):
            commit_pos[op] = i
    last_commit: Dict[int, int] = {}
    for op in order:
        if op not in ix.commits:
            return f"{op} appears in the order but never committed"
        rank = ix.append_rank.get(op)
        if rank is not None:
            if rank < last_rank:
                return f"coordinated update {op} placed out of token order"
            last_rank = rank
            seen_globals += 1
        else:
            if fences.get(op) != seen_globals:
                return (
                    f"{op} placed after {seen_globals} coordinated updates "
                    f"but its server had delivered {fences.get(op)}"
                )
        server = ix.commits[op]["server"]
        if last_commit.get(server, -1) > commit_pos[op]:
            return f"{op} placed out of server {server}'s commit order"
        last_commit[server] = commit_pos[op]
    return None


# ------------------------------------------------------------- replay


class _Replayer:
    """Rebuilds stores from the trace header and re-executes recorded
    work from request arguments alone."""

    def __init__(self, ix: TraceIndex):
        self.ix = ix
        header = ix.header
        self.schema = parse_schema(header["schema"])
        self.templates = {
            t.name: t for t in parse_templates(header["templates"], self.schema)
        }
        self.initial = Database.load(header["initial_db"])

    def bound_body(self, op: str):
        req = self.ix.reqs.get(op)
        if req is None:
            raise CheckError(f"committed op {op} has no request event")
        template = self.templates.get(req["txn"])
        if template is None:
            raise CheckError(f"unknown transaction {req['txn']} in trace")
        return [bind(s, req["args"]) for s in template.body]

    def recorded_update(self, op: str) -> StateUpdate:
        commit = self.ix.commits.get(op)
        if commit is None:
            raise CheckError(f"applied op {op} never committed anywhere")
        return StateUpdate(tuple(statement_from_doc(d) for d in commit["stmts"]))

    def final_db(self, p: int) -> Database:
        final = self.ix.trace.finals.get(p)
        if final is None:
            raise CheckError(f"server {p} has no final state record")
        return Database.load(final["db"])

    def replay_server(self, p: int) -> Optional[CheckResult]:
        def fail(detail: str, **witness) -> CheckResult:
            witness.setdefault("server", p)
            return CheckResult("replay", False, detail, witness)

        ix = self.ix
        db = self.initial.clone()
        store = Store(self.schema, db)
        for e in ix.trace.events:
            if e.get("server") != p or e["type"] not in ("exec_commit", "apply"):
                continue
            op = e["op"]
            if e["type"] == "exec_commit":
                try:
                    reply, update, cells = store.run_transaction(self.bound_body(op))
                except StatementError as err:
                    return fail(f"{op} fails on replay: {err}", op=op)
                if _canon(reply) != _canon(e["reply"]):
                    return fail(
                        f"reply of {op} diverges on replay",
                        op=op,
                        traced=e["reply"],
                        replayed=reply,
                    )
                docs = [statement_to_doc(s) for s in update.statements]
                if _canon(docs) != _canon(e["stmts"]):
                    return fail(f"recorded update of {op} diverges", op=op)
                replayed_cells = [[t, list(pk), c, v] for t, pk, c, v in cells]
                if _canon(replayed_cells) != _canon(e["cells"]):
                    return fail(f"cell effects of {op} diverge", op=op)
            else:
                try:
                    cells = store.apply(self.recorded_update(op))
                except ApplyError as err:
                    return fail(f"applying {op} fails on replay: {err}", op=op)
                replayed_cells = [[t, list(pk), c, v] for t, pk, c, v in cells]
                if _canon(replayed_cells) != _canon(e["cells"]):
                    return fail(f"applied cells of {op} diverge", op=op)

        final = ix.trace.finals.get(p)
        if final is None:
            return fail(f"server {p} has no final state record")
        if db.dump() != final["db"] or db.digest() != final["digest"]:
            return fail(
                f"final state of server {p} diverges from replay",
                replayed=db.digest(),
                traced=final["digest"],
            )
        return None


def check_replay(ix: TraceIndex) -> CheckResult:
    try:
        replayer = _Replayer(ix)
        for p in range(ix.n):
            failure = replayer.replay_server(p)
            if failure is not None:
                return failure
    except CheckError as e:
        return CheckResult("replay", False, str(e))
    return CheckResult("replay", True)


# ------------------------------------------------- serial equivalence


def _authoritative_mismatch(
    ix: TraceIndex, replayer: _Replayer, db: Database, order: List[str]
) -> Optional[CheckResult]:
    """Compare the single-store final state against each server, on the
    cells that server is authoritative for: a cell belongs to every
    server if its last writer was replicated, else to the server that
    ran the last writer."""
    last_writer: Dict[Tuple[str, tuple, str], str] = {}
    for op in order:
        for t, pk, c, _v in ix.commits[op]["cells"]:
            last_writer[(t, tuple(pk), c)] = op
    finals = {}
    for (t, pk, c), op in sorted(last_writer.items()):
        audience = (
            range(ix.n)
            if op in ix.append_rank
            else (ix.commits[op]["server"],)
        )
        replayed = db.value_of(t, pk, c)
        for p in audience:
            if p not in finals:
                finals[p] = replayer.final_db(p)
            recorded = finals[p].value_of(t, pk, c)
            if recorded != replayed:
                return CheckResult(
                    "serial_equivalence",
                    False,
                    f"cell {t}{list(pk)}.{c}: serial history ends with "
                    f"{replayed!r}, server {p} recorded {recorded!r}",
                    {
                        "server": p,
                        "cell": [t, list(pk), c],
                        "replayed": replayed,
                        "recorded": recorded,
                        "last_writer": op,
                    },
                )
    return None


def check_serial_equivalence(
    trace: Union[Trace, str], order: Optional[List[str]] = None
) -> CheckResult:
    """Execute the constructed serial history on one fresh store: every
    reply must come back byte for byte, and the final state must match
    each server on the cells it is authoritative for."""
    ix = _index(trace)
    if order is None:
        order = build_total_order(ix.trace)
    try:
        replayer = _Replayer(ix)
        store = Store(replayer.schema, replayer.initial.clone())
        for op in order:
            commit = ix.commits.get(op)
            if commit is None:
                return CheckResult(
                    "serial_equivalence",
                    False,
                    f"{op} appears in the serial order but never committed",
                    {"op": op},
                )
            try:
                reply, _update, _cells = store.run_transaction(
                    replayer.bound_body(op)
                )
            except StatementError as err:
                return CheckResult(
                    "serial_equivalence",
                    False,
                    f"{op} fails in the serial history: {err}",
                    {"op": op},
                )
            if _canon(reply) != _canon(commit["reply"]):
                return CheckResult(
                    "serial_equivalence",
                    False,
                    f"reply of {op} diverges in the serial history",
                    {"op": op, "traced": commit["reply"], "replayed": reply},
                )
        mismatch = _authoritative_mismatch(ix, replayer, store.db, order)
        if mismatch is not None:
            return mismatch
    except CheckError as e:
        return CheckResult("serial_equivalence", False, str(e))
    return CheckResult("serial_equivalence", True)


# ------------------------------------------------------------ verdicts


def check_trace(trace: Union[Trace, str], *, replay: bool = True) -> Verdict:
    """Run every check; the verdict is the conjunction."""
    ix = _index(trace)
    results = [
        check_structure(ix),
        check_integrity(ix),
        check_total_order(ix),
        check_agreement(ix),
        check_local_order(ix),
        check_epoch_order(ix),
        check_epoch_integrity(ix),
    ]
    if replay:
        results.append(check_serial_equivalence(ix.trace))
        results.append(check_replay(ix))
    stats = {
        "servers": ix.n,
        "operations": len(ix.reqs),
        "commits": len(ix.commits),
        "appends": len(ix.appends),
        "deliveries": sum(len(d) for d in ix.D),
        "epochs": sum(1 for e in ix.trace.events if e["type"] == "token_recv"),
    }
    return Verdict(all(r.ok for r in results), results, stats)


# --------------------------------------------------------- brute force


def _interleavings(queues: List[List[str]]) -> Iterator[List[str]]:
    """All merges of the given sequences that keep each one in order."""
    live = [q for q in queues if q]
    if not live:
        yield []
        return
    for i, q in enumerate(live):
        rest = live[:i] + [q[1:]] + live[i + 1 :]
        for tail in _interleavings(rest):
            yield [q[0]] + tail


def brute_force_serializable(
    trace: Union[Trace, str], max_ops: int = 8
) -> Tuple[bool, int]:
    """Search for one serial history explaining the run, independently
    of `build_total_order`: try every interleaving of the per-server
    commit sequences on a single store, demanding every recorded reply
    byte for byte and a final state matching each server's
    authoritative cells. Returns (found, orders tried). Only for tiny
    runs; the candidate count grows factorially."""
    ix = _index(trace)
    n_ops = len(ix.commits)
    if n_ops > max_ops:
        raise CheckError(
            f"{n_ops} committed operations exceed the brute-force "
            f"bound of {max_ops}"
        )
    replayer = _Replayer(ix)

    tried = 0
    for perm in _interleavings([list(q) for q in ix.commit_order]):
        tried += 1
        store = Store(replayer.schema, replayer.initial.clone())
        matches = True
        for op in perm:
            try:
                reply, _update, _cells = store.run_transaction(
                    replayer.bound_body(op)
                )
            except StatementError:
                matches = False
                break
            if _canon(reply) != _canon(ix.commits[op]["reply"]):
                matches = False
                break
        if matches and _authoritative_mismatch(ix, replayer, store.db, perm) is None:
            return True, tried
    return False, tried
