"""Length-prefixed frame protocol shared by clients and broker links.

Frame layout (see docs/protocol.md): a 4-byte big-endian length covering the
rest of the frame, a 1-byte opcode, then an opcode-specific payload.
Text payload sections are ``key=value`` lines, UTF-8, LF-separated and
terminated by one blank line; the alert body follows the last section raw.
"""

from __future__ import annotations

import json
import socket
import struct
from typing import Iterable, Optional, Sequence

# Client operations
CONNECT = 0x01
PUB = 0x02
SUB = 0x03
UNSUB = 0x04
NOTIFY = 0x05
PING = 0x06
ERR = 0x07
DISCONNECT = 0x08
# Broker-to-broker operations
SUB_PROP = 0x10
UNSUB_PROP = 0x11
FWD = 0x12
HELLO = 0x13
STATS = 0x14

OPCODE_NAMES = {
    CONNECT: "CONNECT", PUB: "PUB", SUB: "SUB", UNSUB: "UNSUB", NOTIFY: "NOTIFY",
    PING: "PING", ERR: "ERR", DISCONNECT: "DISCONNECT", SUB_PROP: "SUB-PROP",
    UNSUB_PROP: "UNSUB-PROP", FWD: "FWD", HELLO: "HELLO", STATS: "STATS",
}

MAX_FRAME = 16 * 1024 * 1024

_HEADER = struct.Struct("!I")


class ProtocolError(Exception):
    pass


def encode_frame(opcode: int, payload: bytes = b"") -> bytes:
    return _HEADER.pack(len(payload) + 1) + bytes([opcode]) + payload


def send_frame(sock: socket.socket, opcode: int, payload: bytes = b"") -> None:
    sock.sendall(encode_frame(opcode, payload))


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> Optional[tuple[int, bytes]]:
    """Read one frame; returns None on clean EOF at a frame boundary."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = _HEADER.unpack(head)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    rest = _recv_exact(sock, length)
    if rest is None:
        raise ProtocolError("connection closed mid-frame")
    return rest[0], rest[1:]


# -- key=value sections ------------------------------------------------------

def encode_section(pairs: Iterable[tuple[str, str]]) -> bytes:
    lines = []
    for key, value in pairs:
        lines.append(f"{key}={value}\n")
    lines.append("\n")
    return "".join(lines).encode("utf-8")


def split_sections(payload: bytes, count: int) -> tuple[list[list[tuple[str, str]]], bytes]:
    """Split ``count`` key=value sections off the front of a payload.

    Returns the decoded sections and the remaining raw bytes (the body).
    Values may contain '='; keys may not.
    """
    sections: list[list[tuple[str, str]]] = []
    pos = 0
    for _ in range(count):
        pairs: list[tuple[str, str]] = []
        while True:
            nl = payload.find(b"\n", pos)
            if nl < 0:
                raise ProtocolError("unterminated section")
            line = payload[pos:nl]
            pos = nl + 1
            if not line:
                break
            eq = line.find(b"=")
            if eq < 0:
                raise ProtocolError(f"bad section line: {line!r}")
            pairs.append((line[:eq].decode("utf-8"), line[eq + 1:].decode("utf-8")))
        sections.append(pairs)
    return sections, payload[pos:]


def encode_error(code: str, message: str) -> bytes:
    return encode_section([("code", code), ("message", message.replace("\n", " "))])


def decode_error(payload: bytes) -> tuple[str, str]:
    sections, _ = split_sections(payload, 1)
    fields = dict(sections[0])
    return fields.get("code", "unknown"), fields.get("message", "")


def encode_stats(stats: dict) -> bytes:
    return json.dumps(stats, sort_keys=True).encode("utf-8")


def decode_stats(payload: bytes) -> dict:
    return json.loads(payload.decode("utf-8"))


def control_pairs(control, sub_id: Optional[str] = None) -> list[tuple[str, str]]:
    pairs = []
    if sub_id is not None:
        pairs.append(("sub", sub_id))
    pairs.extend([
        ("publisher", control.publisher),
        ("seq", str(control.seq)),
        ("hops", str(control.hops)),
        ("origin", control.origin),
    ])
    return pairs


def parse_control(pairs: Sequence[tuple[str, str]]) -> dict:
    fields = dict(pairs)
    try:
        return {
            "sub": fields.get("sub"),
            "publisher": fields["publisher"],
            "seq": int(fields["seq"]),
            "hops": int(fields["hops"]),
            "origin": fields["origin"],
        }
    except (KeyError, ValueError) as exc:
        raise ProtocolError(f"bad control section: {exc}") from None
