"""In-memory table storage with strict two-phase locking.

Transactions take shared or exclusive locks statement by statement and
hold everything until commit or abort. A statement whose WHERE pins the
full primary key with equalities locks just that row; anything else
locks the whole table. Deadlocks are broken by aborting the youngest
transaction in the cycle, which the caller retries.

Committing appends the transaction's recorded mutations to an update
queue while its locks are still held, so for any two conflicting
transactions the queue order equals the commit order; replaying the
queue against the initial state reproduces the final state.

Values are integers and strings. The engine can be driven by real
threads (lock waits block) or cooperatively (``blocking=False`` turns a
wait into a WouldBlock the scheduler handles).
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .minisql import (
    Comparison,
    Delete,
    Insert,
    Schema,
    Select,
    Statement,
    Update,
    statement_is_mutation,
)

Value = Union[int, str]
PK = Tuple[Value, ...]

LOCK_S = "S"
LOCK_X = "X"

ACTIVE = "active"
COMMITTED = "committed"
ABORTED = "aborted"


class StoreError(Exception):
    pass


class StatementError(StoreError):
    """The statement failed; the transaction is still active and holds
    its locks."""


class RetryTransaction(StoreError):
    """This transaction was chosen as a deadlock victim; abort it and
    run it again."""


class WouldBlock(StoreError):
    """Non-blocking lock acquisition found the lock held; retry the same
    statement once the holders release."""

    def __init__(self, table: str, pk: Optional[PK], mode: str):
        super().__init__(f"lock {mode} on {table}/{pk} is held")
        self.table = table
        self.pk = pk
        self.mode = mode


class ApplyError(StoreError):
    """A replicated update failed to apply cleanly. The replica diverged
    from its producer, so the run must stop rather than continue on a
    corrupt state."""


# ---------------------------------------------------------------- database

def _typed_key(pk: PK):
    # ints sort before strings so mixed-type keys have one canonical order
    return tuple((0, v) if isinstance(v, int) else (1, str(v)) for v in pk)


@dataclass
class Table:
    name: str
    columns: Tuple[str, ...]
    pk: Tuple[str, ...]
    rows: Dict[PK, Dict[str, Value]] = field(default_factory=dict)

    def pk_of(self, row: Dict[str, Value]) -> PK:
        return tuple(row[c] for c in self.pk)

    def put(self, row: Dict[str, Value]) -> None:
        """Setup helper for initial data; unlisted columns default to 0."""
        full = {c: row.get(c, 0) for c in self.columns}
        unknown = set(row) - set(self.columns)
        if unknown:
            raise StoreError(f"unknown columns {sorted(unknown)} for {self.name}")
        self.rows[self.pk_of(full)] = full

    def sorted_pks(self) -> List[PK]:
        return sorted(self.rows, key=_typed_key)


_DUMP_TABLE_RE = re.compile(r"^TABLE (\w+) \(([^)]*)\) PK \(([^)]*)\)$")


@dataclass
class Database:
    tables: Dict[str, Table]

    @staticmethod
    def from_schema(schema: Schema) -> "Database":
        return Database(
            {
                t.name: Table(t.name, t.columns, t.pk)
                for t in schema.tables
            }
        )

    def table(self, name: str) -> Table:
        return self.tables[name]

    def clone(self) -> "Database":
        return Database(
            {
                name: Table(
                    t.name, t.columns, t.pk, {pk: dict(r) for pk, r in t.rows.items()}
                )
                for name, t in self.tables.items()
            }
        )

    def value_of(self, table: str, pk: PK, column: str) -> Optional[Value]:
        """The cell's value, or None when the row does not exist."""
        row = self.tables[table].rows.get(pk)
        return None if row is None else row.get(column)

    def dump(self) -> str:
        """Canonical text form: tables by name, rows by primary key, one
        JSON array per row. Equal states dump byte-identically."""
        lines: List[str] = []
        for name in sorted(self.tables):
            t = self.tables[name]
            lines.append(
                f"TABLE {t.name} ({', '.join(t.columns)}) PK ({', '.join(t.pk)})"
            )
            for pk in t.sorted_pks():
                row = t.rows[pk]
                lines.append(
                    json.dumps([row[c] for c in t.columns], separators=(",", ":"))
                )
            lines.append("")
        return "\n".join(lines)

    @staticmethod
    def load(text: str) -> "Database":
        tables: Dict[str, Table] = {}
        current: Optional[Table] = None
        for i, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            m = _DUMP_TABLE_RE.match(line)
            if m:
                cols = tuple(c.strip() for c in m.group(2).split(","))
                pk = tuple(c.strip() for c in m.group(3).split(","))
                current = Table(m.group(1), cols, pk)
                tables[current.name] = current
                continue
            if current is None:
                raise StoreError(f"dump line {i}: row before any TABLE header")
            values = json.loads(line)
            row = dict(zip(current.columns, values))
            current.rows[current.pk_of(row)] = row
        return Database(tables)

    def digest(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()


# ---------------------------------------------------------------- updates

@dataclass(frozen=True)
class StateUpdate:
    """The concrete mutating statements a committed transaction ran, in
    execution order. Empty for read-only transactions."""

    statements: Tuple[Statement, ...]

    def __bool__(self) -> bool:
        return bool(self.statements)


class UpdateQueue:
    """Shared ordered queue of (operation id, update); appends are
    atomic."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._entries: List[Tuple[Optional[str], StateUpdate]] = []

    def append(self, op_id: Optional[str], update: StateUpdate) -> None:
        with self._lock:
            self._entries.append((op_id, update))

    def entries(self) -> List[Tuple[Optional[str], StateUpdate]]:
        with self._lock:
            return list(self._entries)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# ---------------------------------------------------------------- locking

def _incompatible(a: str, b: str) -> bool:
    return a == LOCK_X or b == LOCK_X


class _LockManager:
    def __init__(self) -> None:
        self._cv = threading.Condition()
        # table -> txn id -> mode, and table -> pk -> txn id -> mode
        self._table_holders: Dict[str, Dict[int, str]] = {}
        self._row_holders: Dict[str, Dict[PK, Dict[int, str]]] = {}
        self._waiting: Dict[int, Tuple[str, Optional[PK], str]] = {}
        self._txns: Dict[int, "Txn"] = {}

    def _blockers(self, tid: int, table: str, pk: Optional[PK], mode: str) -> set:
        out = set()
        for other, m in self._table_holders.get(table, {}).items():
            if other != tid and _incompatible(m, mode):
                out.add(other)
        rows = self._row_holders.get(table, {})
        if pk is None:
            for holders in rows.values():
                for other, m in holders.items():
                    if other != tid and _incompatible(m, mode):
                        out.add(other)
        else:
            for other, m in rows.get(pk, {}).items():
                if other != tid and _incompatible(m, mode):
                    out.add(other)
        # A transaction's first touch of a table also queues behind any
        # older waiter it is incompatible with. Without this, a stream
        # of fresh S grants on a hot row can starve a waiting upgrade
        # forever: its deadlock victims retry, re-take S, and collide
        # again. Seniority keeps these edges acyclic among waiters, and
        # transactions already holding something in the table (the
        # upgraders themselves) are exempt so they still contend purely
        # through holder edges.
        me = self._txns.get(tid)
        if me is not None and all(t != table for t, _ in me.lock_modes):
            for other, (otable, opk, omode) in self._waiting.items():
                if (
                    other < tid
                    and otable == table
                    and _incompatible(mode, omode)
                    and (pk is None or opk is None or opk == pk)
                ):
                    out.add(other)
        return out

    def _grant(self, txn: "Txn", table: str, pk: Optional[PK], mode: str) -> None:
        if pk is None:
            holders = self._table_holders.setdefault(table, {})
        else:
            holders = self._row_holders.setdefault(table, {}).setdefault(pk, {})
        prev = holders.get(txn.id)
        holders[txn.id] = LOCK_X if LOCK_X in (prev, mode) else LOCK_S
        key = (table, pk)
        if key not in txn.lock_modes:
            txn.lock_keys.append(key)
        txn.lock_modes[key] = holders[txn.id]

    def _find_victim(self, start: int) -> Optional[int]:
        """Walk wait-for edges from start; on a cycle, the youngest
        transaction in it (every cycle member is a waiter)."""
        path: List[int] = []
        seen: set = set()

        def dfs(tid: int) -> Optional[int]:
            if tid in path:
                return max(path[path.index(tid):])
            if tid in seen or tid not in self._waiting:
                seen.add(tid)
                return None
            seen.add(tid)
            path.append(tid)
            table, pk, mode = self._waiting[tid]
            for nxt in sorted(self._blockers(tid, table, pk, mode)):
                found = dfs(nxt)
                if found is not None:
                    return found
            path.pop()
            return None

        return dfs(start)

    def acquire(
        self,
        txn: "Txn",
        table: str,
        pk: Optional[PK],
        mode: str,
        *,
        blocking: bool = True,
    ) -> None:
        with self._cv:
            self._txns[txn.id] = txn
            if txn.doomed:
                self._waiting.pop(txn.id, None)
                raise RetryTransaction(f"txn {txn.id} chosen as deadlock victim")
            if not self._blockers(txn.id, table, pk, mode):
                self._waiting.pop(txn.id, None)
                self._grant(txn, table, pk, mode)
                return
            self._waiting[txn.id] = (table, pk, mode)
            victim = self._find_victim(txn.id)
            if victim is not None:
                doomed = self._txns[victim]
                doomed.doomed = True
                self._cv.notify_all()
                if victim == txn.id:
                    self._waiting.pop(txn.id, None)
                    raise RetryTransaction(f"txn {txn.id} chosen as deadlock victim")
            if not blocking:
                raise WouldBlock(table, pk, mode)
            while True:
                if txn.doomed:
                    self._waiting.pop(txn.id, None)
                    raise RetryTransaction(f"txn {txn.id} chosen as deadlock victim")
                if not self._blockers(txn.id, table, pk, mode):
                    self._waiting.pop(txn.id, None)
                    self._grant(txn, table, pk, mode)
                    return
                self._cv.wait(timeout=1.0)

    def release_all(self, txn: "Txn") -> None:
        with self._cv:
            self._waiting.pop(txn.id, None)
            self._txns.pop(txn.id, None)
            for table, pk in txn.lock_keys:
                if pk is None:
                    holders = self._table_holders.get(table, {})
                else:
                    holders = self._row_holders.get(table, {}).get(pk, {})
                holders.pop(txn.id, None)
            self._cv.notify_all()


# ---------------------------------------------------------------- txns

# cell: (table, pk, column, value) with value None for a deleted row
Cell = Tuple[str, PK, str, Optional[Value]]


@dataclass
class Txn:
    id: int
    status: str = ACTIVE
    doomed: bool = False
    recorded: List[Statement] = field(default_factory=list)
    undo: List[tuple] = field(default_factory=list)
    cells: List[Cell] = field(default_factory=list)
    lock_keys: List[Tuple[str, Optional[PK]]] = field(default_factory=list)
    lock_modes: Dict[Tuple[str, Optional[PK]], str] = field(default_factory=dict)
    commit_seq: int = -1


class Store:
    """One server's database instance plus its lock manager."""

    def __init__(self, schema: Schema, db: Optional[Database] = None):
        self.schema = schema
        self.db = db if db is not None else Database.from_schema(schema)
        self._locks = _LockManager()
        self._meta = threading.Lock()
        self._next_txn = 0
        self._commit_seq = 0
        self._commit_lock = threading.Lock()

    # -- lifecycle ----------------------------------------------------

    def begin(self) -> Txn:
        with self._meta:
            self._next_txn += 1
            return Txn(self._next_txn)

    def commit(
        self,
        txn: Txn,
        u_sink: Optional[UpdateQueue] = None,
        op_id: Optional[str] = None,
        *,
        append_empty: bool = False,
        on_commit=None,
    ) -> StateUpdate:
        """Commit while still holding every lock; the update joins the
        queue inside the same critical section, so conflicting commits
        appear in U in commit order. Empty updates are not enqueued
        unless the caller wants position markers (append_empty). The
        on_commit hook runs inside the critical section, letting callers
        record the commit at its true position relative to others."""
        if txn.status != ACTIVE:
            raise StoreError(f"commit on {txn.status} txn {txn.id}")
        update = StateUpdate(tuple(txn.recorded))
        with self._commit_lock:
            txn.status = COMMITTED
            self._commit_seq += 1
            txn.commit_seq = self._commit_seq
            if u_sink is not None and (update or append_empty):
                u_sink.append(op_id, update)
            if on_commit is not None:
                on_commit(txn, update)
        self._locks.release_all(txn)
        return update

    def abort(self, txn: Txn) -> None:
        if txn.status != ACTIVE:
            return
        txn.status = ABORTED
        for entry in reversed(txn.undo):
            kind, table, pk = entry[0], entry[1], entry[2]
            rows = self.db.tables[table].rows
            if kind == "ins":
                rows.pop(pk, None)
            else:  # overwritten or deleted row snapshot
                rows[pk] = entry[3]
        txn.recorded.clear()
        txn.cells.clear()
        self._locks.release_all(txn)

    # -- statements ---------------------------------------------------

    def lock_key(self, stmt: Statement) -> Tuple[str, Optional[PK]]:
        """(table, pk) when the statement pins the whole primary key by
        equalities, else (table, None) meaning the whole table."""
        table = self._table_for(stmt)
        if isinstance(stmt, Insert):
            row = self._insert_row(table, stmt)
            return (table.name, table.pk_of(row))
        pinned: Dict[str, Value] = {}
        for c in stmt.where:
            if c.op == "=" and c.column in table.pk and c.column not in pinned:
                pinned[c.column] = c.value.value
        if len(pinned) == len(table.pk):
            return (table.name, tuple(pinned[c] for c in table.pk))
        return (table.name, None)

    def _table_for(self, stmt: Statement) -> Table:
        try:
            return self.db.tables[stmt.table]
        except KeyError:
            raise StatementError(f"unknown table {stmt.table}") from None

    def _check_columns(self, table: Table, names: Iterable[str]) -> None:
        for n in names:
            if n not in table.columns:
                raise StatementError(f"unknown column {table.name}.{n}")

    def _insert_row(self, table: Table, stmt: Insert) -> Dict[str, Value]:
        if len(stmt.columns) != len(stmt.values):
            raise StatementError("INSERT arity mismatch")
        self._check_columns(table, stmt.columns)
        row: Dict[str, Value] = {c: 0 for c in table.columns}
        for c, v in zip(stmt.columns, stmt.values):
            row[c] = v.value
        return row

    @staticmethod
    def _match(row: Dict[str, Value], where: Sequence[Comparison]) -> bool:
        for c in where:
            have = row[c.column]
            want = c.value.value
            if c.op == "=":
                ok = have == want
            elif c.op == "!=":
                ok = have != want
            else:
                if isinstance(have, str) != isinstance(want, str):
                    raise StatementError(
                        f"ordered comparison across types on {c.column}"
                    )
                ok = {
                    "<": have < want,
                    "<=": have <= want,
                    ">": have > want,
                    ">=": have >= want,
                }[c.op]
            if not ok:
                return False
        return True

    def _candidates(
        self, table: Table, pk: Optional[PK]
    ) -> List[Tuple[PK, Dict[str, Value]]]:
        if pk is not None:
            row = table.rows.get(pk)
            return [] if row is None else [(pk, row)]
        with self._meta:
            return list(table.rows.items())

    def exec_stmt(self, txn: Txn, stmt: Statement, *, blocking: bool = True):
        """Lock, evaluate, and for mutations record into the
        transaction's update. SELECT returns rows sorted by primary key;
        UPDATE and DELETE return the matched-row count; INSERT returns 1.
        """
        if txn.status != ACTIVE:
            raise StoreError(f"statement on {txn.status} txn {txn.id}")
        if txn.doomed:
            raise RetryTransaction(f"txn {txn.id} chosen as deadlock victim")
        table = self._table_for(stmt)
        if isinstance(stmt, Select):
            self._check_columns(table, stmt.columns)
            self._check_columns(table, (c.column for c in stmt.where))
        elif isinstance(stmt, Update):
            self._check_columns(table, (c for c, _ in stmt.assignments))
            self._check_columns(table, (c.column for c in stmt.where))
            for c, _ in stmt.assignments:
                if c in table.pk:
                    raise StatementError(f"cannot update key column {c}")
        elif isinstance(stmt, Delete):
            self._check_columns(table, (c.column for c in stmt.where))

        name, pk = self.lock_key(stmt)
        mode = LOCK_S if isinstance(stmt, Select) else LOCK_X
        self._locks.acquire(txn, name, pk, mode, blocking=blocking)

        if isinstance(stmt, Select):
            hits = [
                (k, row)
                for k, row in self._candidates(table, pk)
                if self._match(row, stmt.where)
            ]
            hits.sort(key=lambda kr: _typed_key(kr[0]))
            return [[row[c] for c in stmt.columns] for _, row in hits]

        if isinstance(stmt, Insert):
            row = self._insert_row(table, stmt)
            key = table.pk_of(row)
            if key in table.rows:
                raise StatementError(
                    f"duplicate key {key} in {table.name}"
                )
            txn.undo.append(("ins", table.name, key))
            with self._meta:
                table.rows[key] = row
            txn.recorded.append(stmt)
            txn.cells.extend((table.name, key, c, row[c]) for c in table.columns)
            return 1

        if isinstance(stmt, Update):
            count = 0
            for key, row in self._candidates(table, pk):
                if not self._match(row, stmt.where):
                    continue
                txn.undo.append(("row", table.name, key, dict(row)))
                for c, v in stmt.assignments:
                    row[c] = v.value
                    txn.cells.append((table.name, key, c, row[c]))
                count += 1
            txn.recorded.append(stmt)
            return count

        count = 0
        for key, row in self._candidates(table, pk):
            if not self._match(row, stmt.where):
                continue
            txn.undo.append(("row", table.name, key, dict(row)))
            with self._meta:
                del table.rows[key]
            txn.cells.extend((table.name, key, c, None) for c in table.columns)
            count += 1
        txn.recorded.append(stmt)
        return count

    # -- operation wrappers -------------------------------------------

    def run_transaction(
        self,
        stmts: Sequence[Statement],
        u_sink: Optional[UpdateQueue] = None,
        op_id: Optional[str] = None,
        max_retries: int = 3,
    ):
        """Execute the statements as one transaction, retrying deadlock
        victims. Returns (reply, update, cells)."""
        attempt = 0
        while True:
            txn = self.begin()
            try:
                reply = [self.exec_stmt(txn, s) for s in stmts]
                update = self.commit(txn, u_sink, op_id)
                return reply, update, list(txn.cells)
            except RetryTransaction:
                self.abort(txn)
                attempt += 1
                if attempt > max_retries:
                    raise
            except StatementError:
                self.abort(txn)
                raise

    def apply(self, update: StateUpdate, *, on_commit=None) -> List[Cell]:
        """Replay a replicated update in one internal transaction. Any
        statement failure means this replica is not in the producer's
        pre-state, which is an ordering bug upstream, so it halts."""
        while True:
            txn = self.begin()
            try:
                for stmt in update.statements:
                    if not statement_is_mutation(stmt):
                        raise StatementError("read-only statement in update")
                    self.exec_stmt(txn, stmt)
                self.commit(txn, on_commit=on_commit)
                return list(txn.cells)
            except RetryTransaction:
                self.abort(txn)
            except StatementError as e:
                self.abort(txn)
                raise ApplyError(f"replicated update failed: {e}") from e


def replay(
    schema: Schema, initial: Database, updates: Iterable[StateUpdate]
) -> Database:
    """Run every update in order against a copy of the initial state."""
    db = initial.clone()
    store = Store(schema, db)
    for u in updates:
        store.apply(u)
    return db
