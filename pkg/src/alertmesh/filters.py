"""Subscription filter language: a small path-expression predicate over headers.

A filter is a conjunction of clauses evaluated against an alert header, e.g.::

    //alert[kind="Local" and classification.name="ipsweep"]
    //alert[target.service.port<1024]
    //alert[starts-with(source.node.address,"10.0.") and target.service.port]

``//alert`` alone matches everything.  Disjunction is expressed by holding
several subscriptions, not inside a single filter.  The full grammar ships in
docs/filter-grammar.ebnf; paths come from the closed header-key vocabulary
(docs/header-keys.md), optionally with a trailing wildcard segment such as
``target.*``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .idmef import HEADER_KEYS, NUMERIC_HEADER_KEYS, Header


class FilterSyntaxError(Exception):
    """Filter text does not follow the grammar."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"filter syntax error at offset {position}: {reason}")
        self.position = position
        self.reason = reason


class FilterPathError(Exception):
    """Filter names a key outside the header vocabulary."""

    def __init__(self, path: str):
        super().__init__(f"unknown header key: {path!r}")
        self.path = path


class Op(Enum):
    EQ = "="
    NEQ = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    EXISTS = "exists"
    PREFIX = "starts-with"


_NUMERIC_OPS = {Op.LT, Op.LE, Op.GT, Op.GE}


@dataclass(frozen=True)
class Clause:
    path: str
    op: Op
    value: Union[str, int, None] = None  # None only for EXISTS


@dataclass(frozen=True)
class FilterExpr:
    """A compiled filter: an immutable conjunction of clauses.

    The empty conjunction is the constant TRUE; ``is_false`` marks the
    constant FALSE (matches nothing).
    """

    clauses: tuple[Clause, ...] = ()
    is_false: bool = False


TRUE = FilterExpr()
FALSE = FilterExpr(is_false=True)


@dataclass(frozen=True)
class Subscription:
    """An active filter registration: unique id, compiled filter, owner handle."""

    sub_id: str
    filter: FilterExpr
    owner: object = None
    text: str = ""


_NUM_RE = re.compile(r"^[0-9]+$")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>"[^"\n]*")
  | (?P<number>[0-9]+)
  | (?P<op><=|>=|!=|=|<|>)
  | (?P<lbracket>\[)
  | (?P<rbracket>\])
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<comma>,)
  | (?P<word>[A-Za-z_][A-Za-z0-9_\-]*(?:\.(?:[A-Za-z_][A-Za-z0-9_\-]*|\*))*)
    """,
    re.VERBOSE,
)


def _tokenize(text: str, start: int) -> list[tuple[str, str, int]]:
    tokens = []
    pos = start
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FilterSyntaxError(pos, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    return tokens


def _valid_path(path: str) -> bool:
    if path in HEADER_KEYS:
        return True
    if path.endswith(".*"):
        prefix = path[:-1]  # keep the trailing dot
        return any(key.startswith(prefix) for key in HEADER_KEYS)
    return False


def _numeric_path(path: str) -> bool:
    return path in NUMERIC_HEADER_KEYS


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]], length: int):
        self.tokens = tokens
        self.i = 0
        self.length = length

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self, expected: Optional[str] = None):
        tok = self.peek()
        if tok is None:
            raise FilterSyntaxError(self.length, "unexpected end of filter")
        if expected is not None and tok[0] != expected:
            raise FilterSyntaxError(tok[2], f"expected {expected}, got {tok[1]!r}")
        self.i += 1
        return tok

    def parse_clauses(self) -> tuple[list[Clause], bool]:
        clauses: list[Clause] = []
        saw_false = False
        while True:
            clause = self.parse_clause()
            if clause == "true":
                pass
            elif clause == "false":
                saw_false = True
            else:
                clauses.append(clause)
            tok = self.peek()
            if tok is None:
                raise FilterSyntaxError(self.length, "missing closing bracket")
            if tok[0] == "rbracket":
                self.next()
                break
            if tok[0] == "word" and tok[1] == "and":
                self.next()
                continue
            raise FilterSyntaxError(tok[2], f"expected 'and' or ']', got {tok[1]!r}")
        if self.peek() is not None:
            tok = self.peek()
            raise FilterSyntaxError(tok[2], f"trailing input {tok[1]!r}")
        return clauses, saw_false

    def parse_clause(self):
        tok = self.next()
        if tok[0] != "word":
            raise FilterSyntaxError(tok[2], f"expected a clause, got {tok[1]!r}")
        word = tok[1]
        if word == "true":
            return "true"
        if word == "false":
            return "false"
        if word == "starts-with":
            self.next("lparen")
            path_tok = self.next("word")
            path = self._check_path(path_tok)
            self.next("comma")
            value_tok = self.next("string")
            self.next("rparen")
            return Clause(path, Op.PREFIX, value_tok[1][1:-1])
        # Plain path: either a comparison or a bare existence test.
        path = self._check_path(tok)
        nxt = self.peek()
        if nxt is None or nxt[0] in ("rbracket",) or (nxt[0] == "word" and nxt[1] == "and"):
            return Clause(path, Op.EXISTS, None)
        op_tok = self.next("op")
        op = Op(op_tok[1]) if op_tok[1] not in ("=",) else Op.EQ
        value_tok = self.peek()
        if value_tok is None:
            raise FilterSyntaxError(self.length, "missing comparison value")
        if op in _NUMERIC_OPS:
            if value_tok[0] != "number":
                raise FilterSyntaxError(value_tok[2], f"operator {op.value!r} requires an integer value")
            if not _numeric_path(path):
                raise FilterSyntaxError(op_tok[2], f"operator {op.value!r} requires a numeric header key")
            self.next()
            return Clause(path, op, int(value_tok[1]))
        if value_tok[0] == "string":
            self.next()
            return Clause(path, op, value_tok[1][1:-1])
        if value_tok[0] == "number":
            self.next()
            return Clause(path, op, int(value_tok[1]))
        raise FilterSyntaxError(value_tok[2], f"expected a value, got {value_tok[1]!r}")

    def _check_path(self, tok) -> str:
        path = tok[1]
        if not _valid_path(path):
            raise FilterPathError(path)
        return path


def compile(expr_text: str) -> FilterExpr:
    """Compile filter text into a FilterExpr.

    Raises FilterSyntaxError for malformed input and FilterPathError for
    keys outside the header vocabulary.
    """
    text = expr_text.strip()
    if not text.startswith("//alert"):
        raise FilterSyntaxError(0, "filter must start with //alert")
    rest = text[len("//alert"):]
    if not rest.strip():
        return TRUE
    tokens = _tokenize(text, len("//alert"))
    parser = _Parser(tokens, len(text))
    first = parser.next()
    if first[0] != "lbracket":
        raise FilterSyntaxError(first[2], f"expected '[' after //alert, got {first[1]!r}")
    clauses, saw_false = parser.parse_clauses()
    if saw_false:
        return FALSE
    return FilterExpr(tuple(clauses))


def _header_values(header: Header, path: str) -> tuple[str, ...]:
    if path.endswith(".*"):
        prefix = path[:-1]
        out = []
        for k, v in header.pairs:
            if k.startswith(prefix):
                out.append(v)
        return tuple(out)
    return header.values(path)


def _compare(op: Op, header_value: str, filter_value: Union[str, int]) -> bool:
    if op in _NUMERIC_OPS:
        if not _NUM_RE.match(header_value):
            return False  # type mismatch: clause is false, never an error
        hv = int(header_value)
        fv = filter_value  # guaranteed int by the parser
        if op is Op.LT:
            return hv < fv
        if op is Op.LE:
            return hv <= fv
        if op is Op.GT:
            return hv > fv
        return hv >= fv
    if op is Op.PREFIX:
        return header_value.startswith(str(filter_value))
    # eq / neq with numeric coercion: digit-only strings compare as integers.
    fv_text = str(filter_value)
    h_num = bool(_NUM_RE.match(header_value))
    f_num = bool(_NUM_RE.match(fv_text))
    if h_num != f_num:
        return False
    equal = int(header_value) == int(fv_text) if h_num else header_value == fv_text
    return equal if op is Op.EQ else not equal


def clause_holds(clause: Clause, header: Header) -> bool:
    """Evaluate one clause; multi-valued keys satisfy a clause if ANY value does."""
    values = _header_values(header, clause.path)
    if clause.op is Op.EXISTS:
        return bool(values)
    return any(_compare(clause.op, v, clause.value) for v in values)


def matches(filter: FilterExpr, header: Header) -> bool:
    """Pure predicate: True iff every clause of the filter holds for the header."""
    if filter.is_false:
        return False
    return all(clause_holds(c, header) for c in filter.clauses)


def normalize_value(value: Union[str, int]) -> str:
    """Canonical string form of a clause value for indexing (digits lose leading zeros)."""
    text = str(value)
    if _NUM_RE.match(text):
        return str(int(text))
    return text
