"""Per-server replication state machine around a circulating token.

Commutative and locally partitioned operations execute the moment they
arrive and are never replicated. Operations that need coordination wait
in the server's pending queue until the token comes around; the holder
first applies the foreign updates the token carries (removing its own,
which have completed the circuit), then snapshots the queue, executes
that batch as store transactions, and appends each resulting update to
the token in commit order. Read-only coordinated operations append an
empty entry so their position in the total order is still defined.

The server never waits for operations that arrive while it holds the
token; they stay queued for the next circuit, so the token cannot be
held forever. A request for an operation homed elsewhere is answered
with the responsible server's id and the client re-sends.

Methods are phase-granular so a discrete-event driver can put time
between phases; handle_request/handle_token compose them for synchronous
threaded use. Trace events for commits and applies are written inside
the store's commit section, so per-server trace order always agrees
with effect order.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from .minisql import Select, Statement, TransactionTemplate, bind, statement_to_doc
from .partitioner import (
    CLASS_COMMUTATIVE,
    CLASS_GLOBAL,
    CLASS_LOCAL,
    CLASS_LOCAL_OR_GLOBAL,
    RoutingView,
    stable_hash,
)
from .store import (
    Cell,
    Database,
    RetryTransaction,
    StatementError,
    StateUpdate,
    Store,
)
from .trace import TraceWriter

Value = Union[int, str]


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Operation:
    """One client request: a template name with bound arguments."""

    op_id: str
    txn: str
    args: Mapping[str, Value]
    client: str


@dataclass
class TokenEntry:
    op_id: str
    origin: int
    epoch: int
    stmts: Tuple[Statement, ...]


@dataclass
class Token:
    """The circulating sequence of updates; epoch counts receipts, so
    the holder of epoch e is server e mod n."""

    epoch: int = -1
    entries: List[TokenEntry] = field(default_factory=list)


def route(
    txn: str, args: Mapping[str, Value], view: RoutingView, n: int
) -> Tuple[Optional[int], str]:
    """(home server, class at routing).

    Commutative operations run anywhere (home None). A keyed transaction
    goes to its key's hash; with several keys it is local exactly when
    they all land on one server, otherwise global at the first key's
    server. Key-less transactions are homed by transaction name."""
    try:
        cls = view.classes[txn]
    except KeyError:
        raise ProtocolError(f"unknown transaction {txn!r}") from None
    if cls == CLASS_COMMUTATIVE:
        return None, CLASS_COMMUTATIVE
    params = view.partitioning.get(txn, ())
    if not params:
        return stable_hash(txn) % n, cls
    try:
        servers = [stable_hash(args[k]) % n for k in params]
    except KeyError as e:
        raise ProtocolError(f"{txn}: missing argument {e.args[0]!r}") from None
    if cls == CLASS_LOCAL_OR_GLOBAL:
        if len(set(servers)) == 1:
            return servers[0], CLASS_LOCAL
        return servers[0], CLASS_GLOBAL
    return servers[0], cls


def _cells_doc(cells: Sequence[Cell]) -> list:
    return [[t, list(pk), c, v] for t, pk, c, v in cells]


class _TokenAppender:
    """UpdateQueue-shaped adapter that lands commits in the token."""

    def __init__(self, token: Token, origin: int):
        self.token = token
        self.origin = origin

    def append(self, op_id: str, update: StateUpdate) -> None:
        self.token.entries.append(
            TokenEntry(op_id, self.origin, self.token.epoch, update.statements)
        )


class ServerState:
    def __init__(
        self,
        server_id: int,
        n_servers: int,
        schema,
        templates: Sequence[TransactionTemplate],
        view: RoutingView,
        trace: TraceWriter,
        *,
        db: Optional[Database] = None,
        max_retries: int = 3,
    ):
        self.p = server_id
        self.n = n_servers
        self.templates = {t.name: t for t in templates}
        self.view = view
        self.trace = trace
        self.store = Store(schema, db)
        self.pending: List[Operation] = []
        self._pending_lock = threading.Lock()
        self.max_retries = max_retries
        self.current_epoch: Optional[int] = None

    # -- request path -------------------------------------------------

    def receive_request(self, op: Operation, ts: Optional[float] = None):
        """Classify and either admit for execution, queue, or redirect.

        Returns ("execute", class) | ("queued", None) | ("map", home)."""
        home, cls = route(op.txn, op.args, self.view, self.n)
        if cls == CLASS_COMMUTATIVE:
            home = self.p
        self.trace.emit(
            "req",
            ts,
            op=op.op_id,
            server=self.p,
            txn=op.txn,
            args=dict(op.args),
            cls=cls,
            home=home,
            client=op.client,
        )
        if home != self.p:
            self.trace.emit(
                "map", ts, op=op.op_id, server=self.p, to=home, client=op.client
            )
            return "map", home
        if cls == CLASS_GLOBAL:
            with self._pending_lock:
                self.pending.append(op)
            self.trace.emit("queue", ts, op=op.op_id, server=self.p)
            return "queued", None
        return "execute", cls

    def bound_statements(self, op: Operation) -> List[Statement]:
        try:
            template = self.templates[op.txn]
        except KeyError:
            raise ProtocolError(f"unknown transaction {op.txn!r}") from None
        try:
            return [bind(s, op.args) for s in template.body]
        except KeyError as e:
            raise ProtocolError(
                f"{op.txn}: missing argument {e.args[0]!r}"
            ) from None

    def statement_lock_keys(self, op: Operation) -> List[Tuple[str, Optional[tuple]]]:
        """Lock keys the operation will take, for contention modeling."""
        return [self.store.lock_key(s) for s in self.bound_statements(op)]

    def statement_lock_plan(self, op: Operation):
        """(lock key, writes) per statement, for contention modeling."""
        return [
            (self.store.lock_key(s), not isinstance(s, Select))
            for s in self.bound_statements(op)
        ]

    def _execute(
        self,
        op: Operation,
        *,
        u_sink=None,
        append_empty: bool = False,
        epoch: Optional[int] = None,
        begin_ts: Optional[float] = None,
        commit_ts: Optional[float] = None,
    ):
        stmts = self.bound_statements(op)
        self.trace.emit(
            "exec_begin", begin_ts, op=op.op_id, server=self.p, epoch=epoch
        )
        attempt = 0
        while True:
            txn = self.store.begin()
            try:
                reply = [self.store.exec_stmt(txn, s) for s in stmts]

                def hook(t, update, reply=reply):
                    self.trace.emit(
                        "exec_commit",
                        commit_ts,
                        op=op.op_id,
                        server=self.p,
                        epoch=epoch,
                        stmts=[statement_to_doc(s) for s in update.statements],
                        cells=_cells_doc(t.cells),
                        reply=reply,
                    )
                    if u_sink is not None:
                        self.trace.emit(
                            "append",
                            commit_ts,
                            server=self.p,
                            op=op.op_id,
                            epoch=epoch,
                            empty=not update,
                        )

                self.store.commit(
                    txn, u_sink, op.op_id, append_empty=append_empty, on_commit=hook
                )
                return reply
            except RetryTransaction:
                self.store.abort(txn)
                attempt += 1
                if attempt > self.max_retries:
                    return {"error": "retries exhausted"}
            except StatementError as e:
                self.store.abort(txn)
                return {"error": str(e)}

    def execute_immediate(
        self,
        op: Operation,
        *,
        begin_ts: Optional[float] = None,
        commit_ts: Optional[float] = None,
    ):
        """Run a commutative or local operation; nothing is replicated."""
        return self._execute(op, begin_ts=begin_ts, commit_ts=commit_ts)

    # -- token path ---------------------------------------------------

    def token_arrives(self, token: Token, ts: Optional[float] = None) -> List[TokenEntry]:
        """Start an epoch: purge own entries (they finished the circuit)
        and hand back the foreign ones to deliver, in token order."""
        token.epoch += 1
        self.current_epoch = token.epoch
        foreign = [e for e in token.entries if e.origin != self.p]
        token.entries = list(foreign)
        self.trace.emit(
            "token_recv", ts, server=self.p, epoch=token.epoch, len=len(foreign)
        )
        return foreign

    def apply_entry(self, entry: TokenEntry, ts: Optional[float] = None) -> None:
        update = StateUpdate(entry.stmts)
        if update:
            def hook(txn, _update):
                self.trace.emit(
                    "apply",
                    ts,
                    server=self.p,
                    op=entry.op_id,
                    origin=entry.origin,
                    oepoch=entry.epoch,
                    cells=_cells_doc(txn.cells),
                )

            self.store.apply(update, on_commit=hook)
        else:
            # a position marker: delivered, nothing to run
            self.trace.emit(
                "apply",
                ts,
                server=self.p,
                op=entry.op_id,
                origin=entry.origin,
                oepoch=entry.epoch,
                cells=[],
            )

    def snapshot_pending(self) -> List[Operation]:
        """Atomic cut of the queue; later arrivals wait an epoch."""
        with self._pending_lock:
            batch = list(self.pending)
            del self.pending[: len(batch)]
        return batch

    def execute_global(
        self,
        op: Operation,
        token: Token,
        *,
        begin_ts: Optional[float] = None,
        commit_ts: Optional[float] = None,
    ):
        if self.current_epoch is None or token.epoch != self.current_epoch:
            raise ProtocolError(f"server {self.p} executing without the token")
        return self._execute(
            op,
            u_sink=_TokenAppender(token, self.p),
            append_empty=True,
            epoch=self.current_epoch,
            begin_ts=begin_ts,
            commit_ts=commit_ts,
        )

    def pass_token(self, token: Token, ts: Optional[float] = None) -> int:
        nxt = (self.p + 1) % self.n
        self.trace.emit(
            "token_pass",
            ts,
            server=self.p,
            to=nxt,
            epoch=token.epoch,
            len=len(token.entries),
        )
        self.current_epoch = None
        return nxt

    def emit_reply(self, op: Operation, ts: Optional[float] = None) -> None:
        self.trace.emit("reply", ts, op=op.op_id, server=self.p, client=op.client)

    # -- synchronous composition --------------------------------------

    def handle_request(self, op: Operation):
        """Threaded entry point: ("reply", payload) | ("map", home) |
        ("queued", None)."""
        verdict, extra = self.receive_request(op)
        if verdict == "execute":
            payload = self.execute_immediate(op)
            self.emit_reply(op)
            return "reply", payload
        return verdict, extra

    def handle_token(self, token: Token):
        """Threaded entry point: full epoch; returns (replies, next)."""
        for entry in self.token_arrives(token):
            self.apply_entry(entry)
        replies = []
        for op in self.snapshot_pending():
            payload = self.execute_global(op, token)
            self.emit_reply(op)
            replies.append((op, payload))
        return replies, self.pass_token(token)
