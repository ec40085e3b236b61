"""Brute-force delivery oracle: which (subscription, message) pairs must arrive.

This evaluates every filter clause-by-clause with its own comparison logic —
no broker, no index, and no call into the filter module's matcher — so it can
stand as an independent cross-check for both of them.
"""

from __future__ import annotations

import re
from collections import Counter
from typing import Iterable, Sequence, Union

from . import filters as flt
from .idmef import Alert, Header, project_header

_DIGITS = re.compile(r"\A[0-9]+\Z")


def _values_for(header: Header, path: str) -> list[str]:
    if path.endswith(".*"):
        prefix = path[:-1]
        return [v for k, v in header.pairs if k.startswith(prefix)]
    return [v for k, v in header.pairs if k == path]


def _clause_ok(clause: flt.Clause, header: Header) -> bool:
    values = _values_for(header, clause.path)
    if clause.op is flt.Op.EXISTS:
        return len(values) > 0
    for value in values:
        if _value_ok(clause.op, value, clause.value):
            return True
    return False


def _value_ok(op: flt.Op, header_value: str, filter_value: Union[str, int]) -> bool:
    if op in (flt.Op.LT, flt.Op.LE, flt.Op.GT, flt.Op.GE):
        if not _DIGITS.match(header_value):
            return False
        left, right = int(header_value), int(filter_value)
        return {flt.Op.LT: left < right, flt.Op.LE: left <= right,
                flt.Op.GT: left > right, flt.Op.GE: left >= right}[op]
    if op is flt.Op.PREFIX:
        return header_value.startswith(str(filter_value))
    text = str(filter_value)
    left_num = _DIGITS.match(header_value) is not None
    right_num = _DIGITS.match(text) is not None
    if left_num != right_num:
        return False
    if left_num:
        equal = int(header_value) == int(text)
    else:
        equal = header_value == text
    return equal if op is flt.Op.EQ else not equal


def filter_accepts(expr: flt.FilterExpr, header: Header) -> bool:
    """Naive clause-by-clause evaluation of one compiled filter."""
    if expr.is_false:
        return False
    for clause in expr.clauses:
        if not _clause_ok(clause, header):
            return False
    return True


def expected_deliveries(alerts: Iterable[Alert],
                        filters: Sequence[tuple[str, Union[str, flt.FilterExpr]]],
                        ) -> Counter:
    """Exact multiset of (sub_id, message_id) pairs the filters must receive."""
    compiled = [(sub_id, f if isinstance(f, flt.FilterExpr) else flt.compile(f))
                for sub_id, f in filters]
    out: Counter = Counter()
    for alert in alerts:
        header = project_header(alert)
        for sub_id, expr in compiled:
            if filter_accepts(expr, header):
                out[(sub_id, alert.message_id)] += 1
    return out


def parse_filters_file(text: str) -> list[tuple[str, str]]:
    """Filter list format: one ``<sub_id> <filter text>`` pair per line."""
    out = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        sub_id, _, expr = line.partition(" ")
        if not expr.strip():
            raise ValueError(f"filter line needs '<sub_id> <filter>': {line!r}")
        out.append((sub_id, expr.strip()))
    return out
