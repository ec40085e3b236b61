"""Shared helpers for the line-oriented config files (topology, rules, corpus specs)."""

from __future__ import annotations

from typing import Iterator


class ConfigError(Exception):
    """A configuration file is malformed or inconsistent."""

    def __init__(self, reason: str, lineno: int = 0):
        prefix = f"line {lineno}: " if lineno else ""
        super().__init__(prefix + reason)
        self.lineno = lineno
        self.reason = reason


def iter_directives(text: str) -> Iterator[tuple[int, list[str]]]:
    """Yield (lineno, fields) for non-empty, non-comment lines."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line.split()


def parse_hostport(text: str, lineno: int = 0) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"expected host:port, got {text!r}", lineno)
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"bad port in {text!r}", lineno) from None
