"""Transaction templates in a small SQL subset.

A template file holds named transactions over a declared schema:

    TEMPLATES v1
    TXN doCart(sid, iid, q) {
      UPDATE SHOPPING_CARTS SET QTY = q WHERE ID = sid AND I_ID = iid;
    }

Statements are SELECT / UPDATE / INSERT / DELETE with conjunctive WHERE
clauses only; values are parameters, integers, or quoted strings. There
are no joins, nested queries, or expressions. Each statement contributes
one access entry (attribute set plus condition) to the template's read
or write set; those entries are what the conflict analysis consumes.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple, Union

from .conditions import (
    Attribute,
    ConditionDNF,
    Conjunction,
    Const,
    Eq,
    Opaque,
    Param,
)

SCHEMA_HEADER = "SCHEMA v1"
TEMPLATES_HEADER = "TEMPLATES v1"

COMPARISON_OPS = ("<=", ">=", "!=", "=", "<", ">")


class ParseError(ValueError):
    """Syntax or reference error, with 1-based source position."""

    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {msg}")
        self.line = line
        self.col = col


# ---------------------------------------------------------------- schema

@dataclass(frozen=True)
class TableDef:
    name: str
    columns: Tuple[str, ...]
    pk: Tuple[str, ...]

    def render(self) -> str:
        cols = ", ".join(self.columns)
        pk = ", ".join(self.pk)
        return f"TABLE {self.name} ({cols}) PK ({pk})"


@dataclass(frozen=True)
class Schema:
    tables: Tuple[TableDef, ...]

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)

    def has_table(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)

    def render(self) -> str:
        lines = [SCHEMA_HEADER]
        lines.extend(t.render() for t in self.tables)
        return "\n".join(lines) + "\n"


def parse_schema(text: str) -> Schema:
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCHEMA_HEADER:
        raise ParseError(f"expected header {SCHEMA_HEADER!r}", 1, 1)
    tables: List[TableDef] = []
    pat = re.compile(
        r"^TABLE\s+(\w+)\s*\(([^)]*)\)\s*PK\s*\(([^)]*)\)\s*$"
    )
    for i, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].split("--", 1)[0].strip()
        if not line:
            continue
        m = pat.match(line)
        if not m:
            raise ParseError("expected TABLE name (cols) PK (cols)", i, 1)
        name = m.group(1)
        cols = tuple(c.strip() for c in m.group(2).split(",") if c.strip())
        pk = tuple(c.strip() for c in m.group(3).split(",") if c.strip())
        if not cols:
            raise ParseError(f"table {name} has no columns", i, 1)
        if len(set(cols)) != len(cols):
            raise ParseError(f"table {name} repeats a column", i, 1)
        if not pk or not set(pk) <= set(cols):
            raise ParseError(f"table {name} primary key must be a subset of its columns", i, 1)
        if any(t.name == name for t in tables):
            raise ParseError(f"duplicate table {name}", i, 1)
        tables.append(TableDef(name, cols, pk))
    if not tables:
        raise ParseError("schema declares no tables", 1, 1)
    return Schema(tuple(tables))


# ---------------------------------------------------------------- statements

Value = Union[Param, Const]


@dataclass(frozen=True)
class Comparison:
    """column OP value; the only WHERE building block."""

    column: str
    op: str
    value: Value

    def render(self) -> str:
        return f"{self.column} {self.op} {_render_value(self.value)}"


Where = Tuple[Comparison, ...]


@dataclass(frozen=True)
class Select:
    table: str
    columns: Tuple[str, ...]
    where: Where

    def render(self) -> str:
        cols = ", ".join(self.columns)
        return f"SELECT {cols} FROM {self.table}{_render_where(self.where)};"


@dataclass(frozen=True)
class Update:
    table: str
    assignments: Tuple[Tuple[str, Value], ...]
    where: Where

    def render(self) -> str:
        sets = ", ".join(f"{c} = {_render_value(v)}" for c, v in self.assignments)
        return f"UPDATE {self.table} SET {sets}{_render_where(self.where)};"


@dataclass(frozen=True)
class Insert:
    table: str
    columns: Tuple[str, ...]
    values: Tuple[Value, ...]

    def render(self) -> str:
        cols = ", ".join(self.columns)
        vals = ", ".join(_render_value(v) for v in self.values)
        return f"INSERT INTO {self.table} ({cols}) VALUES ({vals});"


@dataclass(frozen=True)
class Delete:
    table: str
    where: Where

    def render(self) -> str:
        return f"DELETE FROM {self.table}{_render_where(self.where)};"


Statement = Union[Select, Update, Insert, Delete]


def _render_value(v: Value) -> str:
    if isinstance(v, Param):
        return v.name
    if isinstance(v.value, str):
        return "'" + v.value.replace("'", "''") + "'"
    return str(v.value)


def _render_where(where: Where) -> str:
    if not where:
        return ""
    return " WHERE " + " AND ".join(c.render() for c in where)


def bind(stmt: Statement, args: Dict[str, Union[int, str]]) -> Statement:
    """Substitute parameters with concrete values, yielding a statement
    the store can execute."""

    def val(v: Value) -> Value:
        if isinstance(v, Param):
            return Const(args[v.name])
        return v

    def where(w: Where) -> Where:
        return tuple(Comparison(c.column, c.op, val(c.value)) for c in w)

    if isinstance(stmt, Select):
        return Select(stmt.table, stmt.columns, where(stmt.where))
    if isinstance(stmt, Update):
        return Update(
            stmt.table,
            tuple((c, val(v)) for c, v in stmt.assignments),
            where(stmt.where),
        )
    if isinstance(stmt, Insert):
        return Insert(stmt.table, stmt.columns, tuple(val(v) for v in stmt.values))
    return Delete(stmt.table, where(stmt.where))


def statement_is_mutation(stmt: Statement) -> bool:
    return not isinstance(stmt, Select)


def _doc_value(v: Value) -> Union[int, str]:
    if isinstance(v, Param):
        raise ValueError(f"unbound parameter {v.name!r} in statement")
    return v.value


def _doc_where(where: Where) -> list:
    return [[c.column, c.op, _doc_value(c.value)] for c in where]


def statement_to_doc(stmt: Statement) -> dict:
    """Serialize a fully bound statement to a plain-JSON structure."""
    if isinstance(stmt, Select):
        return {
            "kind": "select",
            "table": stmt.table,
            "columns": list(stmt.columns),
            "where": _doc_where(stmt.where),
        }
    if isinstance(stmt, Update):
        return {
            "kind": "update",
            "table": stmt.table,
            "set": [[c, _doc_value(v)] for c, v in stmt.assignments],
            "where": _doc_where(stmt.where),
        }
    if isinstance(stmt, Insert):
        return {
            "kind": "insert",
            "table": stmt.table,
            "columns": list(stmt.columns),
            "values": [_doc_value(v) for v in stmt.values],
        }
    return {"kind": "delete", "table": stmt.table, "where": _doc_where(stmt.where)}


def statement_from_doc(doc: dict) -> Statement:
    def where() -> Where:
        return tuple(Comparison(c, op, Const(v)) for c, op, v in doc["where"])

    kind = doc["kind"]
    if kind == "select":
        return Select(doc["table"], tuple(doc["columns"]), where())
    if kind == "update":
        return Update(
            doc["table"], tuple((c, Const(v)) for c, v in doc["set"]), where()
        )
    if kind == "insert":
        return Insert(
            doc["table"], tuple(doc["columns"]), tuple(Const(v) for v in doc["values"])
        )
    if kind == "delete":
        return Delete(doc["table"], where())
    raise ValueError(f"unknown statement kind {kind!r}")


# ---------------------------------------------------------------- access sets

@dataclass(frozen=True)
class AccessEntry:
    """One statement's footprint: the attributes it touches and the
    condition under which it touches a given row."""

    attributes: frozenset
    condition: ConditionDNF

    def render(self) -> str:
        attrs = ", ".join(sorted(str(a) for a in self.attributes))
        return f"<{{{attrs}}}, {self.condition}>"


@dataclass
class TransactionTemplate:
    name: str
    params: Tuple[str, ...]
    body: Tuple[Statement, ...]
    weight: float = 1.0
    read_set: Tuple[AccessEntry, ...] = ()
    write_set: Tuple[AccessEntry, ...] = ()

    def render(self) -> str:
        head = f"TXN {self.name}({', '.join(self.params)}) {{"
        lines = [head] + ["  " + s.render() for s in self.body] + ["}"]
        return "\n".join(lines)


def _where_condition(table: str, where: Where) -> ConditionDNF:
    atoms = []
    for cmp in where:
        attr = Attribute(table, cmp.column)
        if cmp.op == "=":
            atoms.append(Eq(attr, cmp.value))
        else:
            atoms.append(Opaque(f"{attr} {cmp.op} {_render_value(cmp.value)}"))
    return ConditionDNF((Conjunction(tuple(atoms)),))


def derive_access_sets(t: TransactionTemplate, schema: Schema) -> TransactionTemplate:
    """Compute read/write entries, one per body statement.

    SELECT reads its output columns under its WHERE. UPDATE writes its
    SET columns under its WHERE. INSERT and DELETE write every column of
    the table: INSERT under the conjunction of its column bindings,
    DELETE under its WHERE. Columns mentioned only in WHERE do not enter
    the attribute sets.
    """
    reads: List[AccessEntry] = []
    writes: List[AccessEntry] = []
    for stmt in t.body:
        table = schema.table(stmt.table)
        if isinstance(stmt, Select):
            attrs = frozenset(Attribute(table.name, c) for c in stmt.columns)
            reads.append(AccessEntry(attrs, _where_condition(table.name, stmt.where)))
        elif isinstance(stmt, Update):
            attrs = frozenset(Attribute(table.name, c) for c, _ in stmt.assignments)
            writes.append(AccessEntry(attrs, _where_condition(table.name, stmt.where)))
        elif isinstance(stmt, Insert):
            attrs = frozenset(Attribute(table.name, c) for c in table.columns)
            atoms = tuple(
                Eq(Attribute(table.name, c), v) for c, v in zip(stmt.columns, stmt.values)
            )
            writes.append(AccessEntry(attrs, ConditionDNF((Conjunction(atoms),))))
        else:
            attrs = frozenset(Attribute(table.name, c) for c in table.columns)
            writes.append(AccessEntry(attrs, _where_condition(table.name, stmt.where)))
    return replace(t, read_set=tuple(reads), write_set=tuple(writes))


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*|--[^\n]*)
  | (?P<string>'(?:[^']|'')*')
  | (?P<int>-?\d+)
  | (?P<ident>\w+)
  | (?P<op><=|>=|!=|[=<>(),;{}*])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> List[_Tok]:
    toks: List[_Tok] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup or ""
        chunk = m.group(0)
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, chunk, line, col))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, toks: List[_Tok], params: Optional[set] = None):
        self.toks = toks
        self.i = 0
        self.params = params

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg: str, tok: Optional[_Tok] = None):
        tok = tok or self.peek()
        raise ParseError(msg, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        t = self.next()
        if t.text.upper() != text.upper() if t.kind == "ident" else t.text != text:
            self.fail(f"expected {text!r}, found {t.text!r}", t)
        return t

    def keyword(self, *words: str) -> str:
        t = self.next()
        if t.kind != "ident" or t.text.upper() not in words:
            self.fail(f"expected one of {words}, found {t.text!r}", t)
        return t.text.upper()

    def ident(self, what: str = "identifier") -> str:
        t = self.next()
        if t.kind != "ident":
            self.fail(f"expected {what}, found {t.text!r}", t)
        if t.text.upper() in _RESERVED:
            self.fail(f"expected {what}, found keyword {t.text!r}", t)
        return t.text

    def value(self) -> Value:
        t = self.next()
        if t.kind == "int":
            return Const(int(t.text))
        if t.kind == "string":
            return Const(t.text[1:-1].replace("''", "'"))
        if t.kind == "ident":
            if t.text.upper() in _RESERVED:
                self.fail(f"expected value, found keyword {t.text!r}", t)
            if self.params is not None and t.text not in self.params:
                self.fail(f"undeclared parameter {t.text!r}", t)
            return Param("", t.text)
        self.fail(f"expected value, found {t.text!r}", t)
        raise AssertionError


_RESERVED = {
    "TXN",
    "SELECT",
    "UPDATE",
    "INSERT",
    "DELETE",
    "FROM",
    "WHERE",
    "SET",
    "INTO",
    "VALUES",
    "AND",
    "OR",
    "JOIN",
    "LIKE",
}


def _parse_where(p: _Parser) -> Where:
    if p.peek().kind == "ident" and p.peek().text.upper() == "WHERE":
        p.next()
    else:
        return ()
    comps: List[Comparison] = []
    while True:
        col = p.ident("column name")
        t = p.next()
        if t.text not in COMPARISON_OPS:
            if t.kind == "ident" and t.text.upper() == "LIKE":
                p.fail("LIKE is not supported; WHERE takes =, !=, <, <=, >, >= only", t)
            p.fail(f"expected comparison operator, found {t.text!r}", t)
        comps.append(Comparison(col, t.text, p.value()))
        nxt = p.peek()
        if nxt.kind == "ident" and nxt.text.upper() == "AND":
            p.next()
            continue
        if nxt.kind == "ident" and nxt.text.upper() == "OR":
            p.fail("WHERE clauses are conjunctions only; OR is not supported", nxt)
        break
    return tuple(comps)


def _parse_statement(p: _Parser, schema: Optional[Schema]) -> Statement:
    kw = p.keyword("SELECT", "UPDATE", "INSERT", "DELETE", "JOIN")
    if kw == "JOIN":
        p.fail("joins are not supported")
    if kw == "SELECT":
        cols: List[str] = []
        star = False
        if p.peek().text == "*":
            p.next()
            star = True
        else:
            cols.append(p.ident("column name"))
            while p.peek().text == ",":
                p.next()
                cols.append(p.ident("column name"))
        p.keyword("FROM")
        table_tok = p.peek()
        table = p.ident("table name")
        if p.peek().text == "(" or (
            p.peek().kind == "ident" and p.peek().text.upper() == "SELECT"
        ):
            p.fail("nested queries are not supported")
        where = _parse_where(p)
        p.expect(";")
        if star:
            if schema is None:
                raise ParseError("SELECT * needs a schema", table_tok.line, table_tok.col)
            cols = list(_checked_table(p, schema, table, table_tok).columns)
        stmt: Statement = Select(table, tuple(cols), where)
    elif kw == "UPDATE":
        table_tok = p.peek()
        table = p.ident("table name")
        p.keyword("SET")
        assigns: List[Tuple[str, Value]] = []
        while True:
            col = p.ident("column name")
            p.expect("=")
            assigns.append((col, p.value()))
            if p.peek().text == ",":
                p.next()
                continue
            break
        where = _parse_where(p)
        p.expect(";")
        stmt = Update(table, tuple(assigns), where)
    elif kw == "INSERT":
        p.keyword("INTO")
        table_tok = p.peek()
        table = p.ident("table name")
        p.expect("(")
        cols = [p.ident("column name")]
        while p.peek().text == ",":
            p.next()
            cols.append(p.ident("column name"))
        p.expect(")")
        p.keyword("VALUES")
        p.expect("(")
        vals = [p.value()]
        while p.peek().text == ",":
            p.next()
            vals.append(p.value())
        p.expect(")")
        p.expect(";")
        if len(cols) != len(vals):
            p.fail(
                f"INSERT lists {len(cols)} columns but {len(vals)} values", table_tok
            )
        stmt = Insert(table, tuple(cols), tuple(vals))
    else:
        p.keyword("FROM")
        table_tok = p.peek()
        table = p.ident("table name")
        where = _parse_where(p)
        p.expect(";")
        stmt = Delete(table, where)
    if schema is not None:
        _check_statement(p, schema, stmt, table_tok)
    return stmt


def _checked_table(p: _Parser, schema: Schema, name: str, tok: _Tok) -> TableDef:
    if not schema.has_table(name):
        p.fail(f"unknown table {name!r}", tok)
    return schema.table(name)


def _check_statement(p: _Parser, schema: Schema, stmt: Statement, tok: _Tok):
    table = _checked_table(p, schema, stmt.table, tok)
    cols = set(table.columns)

    def check_cols(names, what):
        for c in names:
            if c not in cols:
                p.fail(f"table {table.name} has no column {c!r} ({what})", tok)

    if isinstance(stmt, Select):
        check_cols(stmt.columns, "SELECT list")
        check_cols([c.column for c in stmt.where], "WHERE")
    elif isinstance(stmt, Update):
        check_cols([c for c, _ in stmt.assignments], "SET")
        check_cols([c.column for c in stmt.where], "WHERE")
    elif isinstance(stmt, Insert):
        check_cols(stmt.columns, "INSERT list")
        if len(set(stmt.columns)) != len(stmt.columns):
            p.fail(f"INSERT into {table.name} repeats a column", tok)
    else:
        check_cols([c.column for c in stmt.where], "WHERE")


def parse_template(source: str, schema: Optional[Schema] = None) -> TransactionTemplate:
    """Parse a single TXN block; derives access sets when a schema is given."""
    p = _Parser(_tokenize(source))
    t = _parse_txn(p, schema)
    if p.peek().kind != "eof":
        p.fail("trailing input after transaction")
    return t


def _parse_txn(p: _Parser, schema: Optional[Schema]) -> TransactionTemplate:
    p.keyword("TXN")
    name = p.ident("transaction name")
    p.expect("(")
    params: List[str] = []
    if p.peek().text != ")":
        params.append(p.ident("parameter name"))
        while p.peek().text == ",":
            p.next()
            params.append(p.ident("parameter name"))
    p.expect(")")
    if len(set(params)) != len(params):
        p.fail(f"transaction {name} repeats a parameter")
    p.expect("{")
    p.params = set(params)
    body: List[Statement] = []
    while p.peek().text != "}":
        if p.peek().kind == "eof":
            p.fail("unterminated transaction body")
        body.append(_parse_statement(p, schema))
    p.expect("}")
    p.params = None
    t = TransactionTemplate(name, tuple(params), tuple(body))
    if schema is not None:
        t = derive_access_sets(t, schema)
    return t


def parse_templates(text: str, schema: Schema) -> List[TransactionTemplate]:
    """Parse a versioned template file into derived templates."""
    stripped = text.lstrip()
    if not stripped.startswith(TEMPLATES_HEADER):
        raise ParseError(f"expected header {TEMPLATES_HEADER!r}", 1, 1)
    body = stripped[len(TEMPLATES_HEADER):]
    p = _Parser(_tokenize(body))
    out: List[TransactionTemplate] = []
    while p.peek().kind != "eof":
        t = _parse_txn(p, schema)
        if any(o.name == t.name for o in out):
            raise ParseError(f"duplicate transaction {t.name}", 1, 1)
        out.append(t)
    if not out:
        raise ParseError("template file declares no transactions", 1, 1)
    return out


def render_templates(templates: List[TransactionTemplate]) -> str:
    blocks = [TEMPLATES_HEADER, ""]
    for t in templates:
        blocks.append(t.render())
        blocks.append("")
    return "\n".join(blocks)


def apply_weights(
    templates: List[TransactionTemplate], weights: Dict[str, float]
) -> List[TransactionTemplate]:
    for name in weights:
        if not any(t.name == name for t in templates):
            raise ValueError(f"weight given for unknown transaction {name!r}")
    return [replace(t, weight=float(weights.get(t.name, t.weight))) for t in templates]
