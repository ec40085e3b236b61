"""Broker overlay: topology config, the socket front end, and inter-broker routing.

A BrokerNode wraps one embedded Broker with a TCP server that speaks the
frame protocol.  Client connections get the four interface operations;
neighbor brokers handshake with HELLO and then exchange subscription
propagation (SUB-PROP/UNSUB-PROP) and forwarded notifications (FWD).

Two routing modes:

* ``flood``: every notification goes to every link except the one it arrived
  on; a bounded seen-set suppresses duplicates, so cycles are safe.
* ``filter_forward``: subscriptions are flooded once, and notifications only
  travel over links that lead toward a matching remote subscription.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from . import filters as flt
from . import protocol as proto
from .broker import (
    Broker,
    BrokerError,
    Control,
    DeadSession,
    DuplicateClient,
    DuplicatePublish,
    Notification,
    NotOwner,
    Session,
    UnknownSubscription,
)
from .config import ConfigError, iter_directives, parse_hostport
from .idmef import (
    Header,
    InvalidAlert,
    ParseError,
    SchemaError,
    parse as parse_alert,
    project_header,
)

log = logging.getLogger(__name__)

MODES = ("flood", "filter_forward")


class HandshakeMismatch(Exception):
    """A neighbor handshake failed (unknown peer or disagreeing routing mode)."""

    def __init__(self, neighbor: str, reason: str):
        super().__init__(f"handshake with {neighbor!r} failed: {reason}")
        self.neighbor = neighbor
        self.reason = reason


# ---------------------------------------------------------------------------
# Topology configuration

@dataclass(frozen=True)
class PeerSpec:
    broker_id: str
    host: str
    port: int


@dataclass(frozen=True)
class BrokerSpec:
    broker_id: str
    host: str
    port: int
    peers: tuple[PeerSpec, ...] = ()


@dataclass(frozen=True)
class Topology:
    mode: str
    brokers: dict[str, BrokerSpec] = field(default_factory=dict)


def parse_topology(text: str, extra_directives: Optional[dict[str, Callable]] = None) -> Topology:
    """Parse a topology config (``broker``/``peer``/``mode`` lines).

    ``peer`` lines attach to the most recent ``broker`` line, so one file can
    describe a whole deployment.  Unknown directives raise ConfigError unless
    a handler for them is supplied (the replay harness adds ``manager``).
    """
    mode: Optional[str] = None
    order: list[str] = []
    listen: dict[str, tuple[str, int]] = {}
    peers: dict[str, list[tuple[int, str, str, int]]] = {}
    current: Optional[str] = None
    for lineno, fields in iter_directives(text):
        kw = fields[0]
        if kw == "mode":
            if len(fields) != 2 or fields[1] not in MODES:
                raise ConfigError(f"mode must be one of {'/'.join(MODES)}", lineno)
            if mode is not None:
                raise ConfigError("duplicate mode line", lineno)
            mode = fields[1]
        elif kw == "broker":
            if len(fields) != 4 or fields[2] != "listen":
                raise ConfigError("expected: broker <id> listen <host:port>", lineno)
            broker_id = fields[1]
            if broker_id in listen:
                raise ConfigError(f"duplicate broker {broker_id!r}", lineno)
            listen[broker_id] = parse_hostport(fields[3], lineno)
            order.append(broker_id)
            peers[broker_id] = []
            current = broker_id
        elif kw == "peer":
            if current is None:
                raise ConfigError("peer line before any broker line", lineno)
            if len(fields) != 3:
                raise ConfigError("expected: peer <id> <host:port>", lineno)
            host, port = parse_hostport(fields[2], lineno)
            peers[current].append((lineno, fields[1], host, port))
        elif extra_directives and kw in extra_directives:
            extra_directives[kw](lineno, fields)
        else:
            raise ConfigError(f"unknown directive {kw!r}", lineno)
    if not order:
        raise ConfigError("no broker lines")
    brokers: dict[str, BrokerSpec] = {}
    for broker_id in order:
        specs = []
        for lineno, pid, host, port in peers[broker_id]:
            if pid == broker_id:
                raise ConfigError(f"broker {broker_id!r} lists itself as peer", lineno)
            if pid in listen and listen[pid] != (host, port):
                raise ConfigError(
                    f"peer {pid!r} address {host}:{port} does not match its listen address", lineno)
            specs.append(PeerSpec(pid, host, port))
        host, port = listen[broker_id]
        brokers[broker_id] = BrokerSpec(broker_id, host, port, tuple(specs))
    # peer links must be declared on both ends when both brokers are in the file
    for broker_id, spec in brokers.items():
        for peer in spec.peers:
            other = brokers.get(peer.broker_id)
            if other is not None and broker_id not in {p.broker_id for p in other.peers}:
                raise ConfigError(
                    f"peer link {broker_id} -> {peer.broker_id} is not bidirectional")
    return Topology(mode=mode or "flood", brokers=brokers)


def load_topology(path) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_topology(fh.read())


# ---------------------------------------------------------------------------
# Duplicate suppression

class SeenSet:
    """Bounded set of already-handled message ids (capacity + TTL).

    check_and_insert is a single atomic step: the first caller wins, every
    later arrival of the same id reports "seen".  That linearization is what
    keeps delivery exactly-once when the same message races in on two links.
    """

    def __init__(self, capacity: int = 1_000_000, ttl: float = 300.0, clock=time.monotonic):
        self._capacity = capacity
        self._ttl = ttl
        self._clock = clock
        self._lock = threading.Lock()
        self._entries: OrderedDict[str, tuple[float, int]] = OrderedDict()
        self.max_forwards = 0

    def check_and_insert(self, message_id: str) -> bool:
        now = self._clock()
        with self._lock:
            while self._entries:
                oldest_id, (stamp, _) = next(iter(self._entries.items()))
                if now - stamp > self._ttl or len(self._entries) >= self._capacity:
                    del self._entries[oldest_id]
                else:
                    break
            if message_id in self._entries:
                return False
            self._entries[message_id] = (now, 0)
            return True

    def note_forwarded(self, message_id: str) -> None:
        with self._lock:
            entry = self._entries.get(message_id)
            if entry is None:
                return
            stamp, count = entry
            self._entries[message_id] = (stamp, count + 1)
            if count + 1 > self.max_forwards:
                self.max_forwards = count + 1

    def __len__(self):
        with self._lock:
            return len(self._entries)


# ---------------------------------------------------------------------------
# Connections

class _Connection:
    """One socket with a serialized writer and a bounded outbound queue."""

    def __init__(self, sock: socket.socket, name: str, queue_limit: int = 10_000):
        self.sock = sock
        self.name = name
        self.alive = True
        self.drops = 0
        self._queue: deque[bytes] = deque()
        self._limit = queue_limit
        self._cond = threading.Condition()
        self._writer = threading.Thread(target=self._write_loop, name=f"writer-{name}", daemon=True)
        self._writer.start()

    def send(self, frame: bytes) -> None:
        with self._cond:
            if not self.alive:
                return
            if len(self._queue) >= self._limit:
                self._queue.popleft()
                self.drops += 1
            self._queue.append(frame)
            self._cond.notify()

    def _write_loop(self):
        while True:
            with self._cond:
                while self.alive and not self._queue:
                    self._cond.wait(0.5)
                if not self.alive and not self._queue:
                    return
                frame = self._queue.popleft() if self._queue else None
            if frame is None:
                continue
            try:
                self.sock.sendall(frame)
            except OSError:
                self.close()
                return

    def close(self):
        with self._cond:
            if not self.alive:
                return
            self.alive = False
            self._cond.notify_all()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass


@dataclass
class _RemoteSub:
    origin: str
    sub_id: str
    text: str
    filter: flt.FilterExpr
    via: str  # link the subscription was learned from; notifications go back that way


class BrokerNode:
    """One overlay node: embedded broker + TCP server + neighbor links."""

    def __init__(self, spec: BrokerSpec, mode: str = "flood", queue_limit: int = 10_000,
                 seen_capacity: int = 1_000_000, seen_ttl: float = 300.0):
        if mode not in MODES:
            raise ConfigError(f"unknown routing mode {mode!r}")
        self.spec = spec
        self.broker_id = spec.broker_id
        self.mode = mode
        self.broker = Broker(spec.broker_id, queue_limit=queue_limit)
        self.broker.on_publish = self._on_local_publish
        self.broker.on_subscribe = self._on_local_subscribe
        self.broker.on_unsubscribe = self._on_local_unsubscribe
        self.seen = SeenSet(seen_capacity, seen_ttl)
        self.listen_host = spec.host
        self.listen_port = spec.port
        self._lock = threading.RLock()
        self._links: dict[str, _Connection] = {}
        self._remote_subs: dict[tuple[str, str], _RemoteSub] = {}
        self._server: Optional[socket.socket] = None
        self._conns: set[_Connection] = set()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.handshake_errors: list[HandshakeMismatch] = []
        self.fwd_sent = 0
        self.fwd_received = 0
        self.fwd_dup_dropped = 0
        self.forward_events = 0

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> "BrokerNode":
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((self.spec.host, self.spec.port))
        server.listen(64)
        self._server = server
        self.listen_port = server.getsockname()[1]
        t = threading.Thread(target=self._accept_loop, name=f"accept-{self.broker_id}", daemon=True)
        t.start()
        self._threads.append(t)
        for peer in self.spec.peers:
            # one TCP link per pair: the lexicographically smaller id dials
            if self.broker_id < peer.broker_id:
                d = threading.Thread(target=self._dial_loop, args=(peer,),
                                     name=f"dial-{self.broker_id}-{peer.broker_id}", daemon=True)
                d.start()
                self._threads.append(d)
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass
        with self._lock:
            conns = list(self._conns) + list(self._links.values())
        for conn in conns:
            conn.close()

    def wait_links(self, timeout: float = 5.0) -> bool:
        """Wait until a link to every configured peer is up."""
        deadline = time.monotonic() + timeout
        want = {p.broker_id for p in self.spec.peers}
        while time.monotonic() < deadline:
            with self._lock:
                if want <= set(self._links):
                    return True
            if self.handshake_errors:
                raise self.handshake_errors[0]
            time.sleep(0.01)
        return False

    def remote_sub_count(self) -> int:
        with self._lock:
            return len(self._remote_subs)

    def stats(self) -> dict:
        base = self.broker.stats()
        with self._lock:
            link_drops = sum(l.drops for l in self._links.values())
            base.update({
                "mode": self.mode,
                "links": sorted(self._links),
                "remote_subs": len(self._remote_subs),
                "fwd_sent": self.fwd_sent,
                "fwd_received": self.fwd_received,
                "fwd_dup_dropped": self.fwd_dup_dropped,
                "forward_events": self.forward_events,
                "max_forwards_per_message": self.seen.max_forwards,
                "link_drops": link_drops,
                "seen_size": len(self.seen),
            })
        return base

    # -- accepting connections ---------------------------------------------------

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                sock, _addr = self._server.accept()
            except OSError:
                return
            t = threading.Thread(target=self._serve_connection, args=(sock,),
                                 name=f"conn-{self.broker_id}", daemon=True)
            t.start()

    def _serve_connection(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            first = proto.recv_frame(sock)
        except proto.ProtocolError:
            sock.close()
            return
        if first is None:
            sock.close()
            return
        opcode, payload = first
        if opcode == proto.CONNECT:
            self._serve_client(sock, payload.decode("utf-8"))
        elif opcode == proto.HELLO:
            self._serve_link_accept(sock, payload)
        else:
            proto.send_frame(sock, proto.ERR, proto.encode_error(
                "bad-request", f"expected CONNECT or HELLO, got {opcode:#x}"))
            sock.close()

    # -- client sessions ----------------------------------------------------------

    def _serve_client(self, sock: socket.socket, client_id: str):
        try:
            session = self.broker.connect(client_id)
        except DuplicateClient:
            try:
                proto.send_frame(sock, proto.ERR, proto.encode_error("duplicate-client", client_id))
            except OSError:
                pass
            sock.close()
            return
        conn = _Connection(sock, f"client-{client_id}", queue_limit=2 * self.broker._queue_limit)
        with self._lock:
            self._conns.add(conn)
        conn.send(proto.encode_frame(proto.CONNECT, self.broker_id.encode("utf-8")))
        pump = threading.Thread(target=self._notify_pump, args=(session, conn),
                                name=f"notify-{client_id}", daemon=True)
        pump.start()
        try:
            while conn.alive:
                try:
                    frame = proto.recv_frame(sock)
                except (proto.ProtocolError, OSError):
                    break
                if frame is None:
                    break
                opcode, payload = frame
                if opcode == proto.DISCONNECT:
                    conn.send(proto.encode_frame(proto.DISCONNECT))
                    break
                self._handle_client_frame(session, conn, opcode, payload)
        finally:
            self.broker.disconnect(session)
            with self._lock:
                self._conns.discard(conn)
            conn.close()

    def _notify_pump(self, session: Session, conn: _Connection):
        while conn.alive:
            try:
                item = session.poll(timeout=0.2)
            except DeadSession:
                return
            if item is None:
                continue
            sub_id, notification = item
            payload = (proto.encode_section(proto.control_pairs(notification.control, sub_id))
                       + proto.encode_section(notification.header.pairs)
                       + notification.body)
            conn.send(proto.encode_frame(proto.NOTIFY, payload))

    def _handle_client_frame(self, session: Session, conn: _Connection, opcode: int, payload: bytes):
        try:
            if opcode == proto.PUB:
                sections, body = proto.split_sections(payload, 1)
                alert = parse_alert(body)
                header = project_header(alert)
                if sorted(sections[0]) != sorted(header.pairs):
                    raise proto.ProtocolError("client header does not match body")
                self.broker.pub(session, alert, body)
                conn.send(proto.encode_frame(proto.PUB, alert.message_id.encode("utf-8")))
            elif opcode == proto.SUB:
                sub_id = self.broker.sub(session, payload.decode("utf-8"))
                conn.send(proto.encode_frame(proto.SUB, sub_id.encode("utf-8")))
            elif opcode == proto.UNSUB:
                self.broker.unsub(session, payload.decode("utf-8"))
                conn.send(proto.encode_frame(proto.UNSUB, payload))
            elif opcode == proto.PING:
                conn.send(proto.encode_frame(proto.PING, payload))
            elif opcode == proto.STATS:
                conn.send(proto.encode_frame(proto.STATS, proto.encode_stats(self.stats())))
            else:
                conn.send(proto.encode_frame(proto.ERR, proto.encode_error(
                    "bad-request", f"unexpected opcode {opcode:#x}")))
        except Exception as exc:  # every request gets exactly one reply
            conn.send(proto.encode_frame(proto.ERR, proto.encode_error(
                _error_code(exc), str(exc))))

    # -- neighbor links -------------------------------------------------------------

    def _hello_payload(self) -> bytes:
        return proto.encode_section([("broker", self.broker_id), ("mode", self.mode)])

    def _serve_link_accept(self, sock: socket.socket, payload: bytes):
        try:
            sections, _ = proto.split_sections(payload, 1)
        except proto.ProtocolError:
            sock.close()
            return
        fields = dict(sections[0])
        peer_id = fields.get("broker", "")
        peer_mode = fields.get("mode", "")
        known = {p.broker_id for p in self.spec.peers}
        if peer_id not in known:
            proto.send_frame(sock, proto.ERR, proto.encode_error(
                "handshake-mismatch", f"{self.broker_id} does not list {peer_id} as a peer"))
            sock.close()
            self.handshake_errors.append(HandshakeMismatch(peer_id, "peer not bidirectional"))
            return
        if peer_mode != self.mode:
            proto.send_frame(sock, proto.ERR, proto.encode_error(
                "handshake-mismatch", f"routing mode {peer_mode!r} != {self.mode!r}"))
            sock.close()
            self.handshake_errors.append(HandshakeMismatch(peer_id, "routing mode disagrees"))
            return
        proto.send_frame(sock, proto.HELLO, self._hello_payload())
        self._run_link(peer_id, sock)

    def _dial_loop(self, peer: PeerSpec):
        deadline = time.monotonic() + 30.0
        while not self._stop.is_set() and time.monotonic() < deadline:
            try:
                sock = socket.create_connection((peer.host, peer.port), timeout=2.0)
            except OSError:
                time.sleep(0.05)
                continue
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            try:
                proto.send_frame(sock, proto.HELLO, self._hello_payload())
                reply = proto.recv_frame(sock)
            except (proto.ProtocolError, OSError):
                sock.close()
                time.sleep(0.05)
                continue
            if reply is None:
                sock.close()
                time.sleep(0.05)
                continue
            opcode, payload = reply
            if opcode == proto.ERR:
                code, message = proto.decode_error(payload)
                self.handshake_errors.append(HandshakeMismatch(peer.broker_id, message))
                sock.close()
                return
            if opcode != proto.HELLO:
                sock.close()
                continue
            sections, _ = proto.split_sections(payload, 1)
            fields = dict(sections[0])
            if fields.get("broker") != peer.broker_id or fields.get("mode") != self.mode:
                self.handshake_errors.append(HandshakeMismatch(
                    peer.broker_id, f"unexpected hello {fields!r}"))
                sock.close()
                return
            self._run_link(peer.broker_id, sock)
            if self._stop.is_set():
                return
            time.sleep(0.1)  # link dropped: retry and re-sync subscriptions
            deadline = time.monotonic() + 30.0

    def _run_link(self, peer_id: str, sock: socket.socket):
        conn = _Connection(sock, f"link-{self.broker_id}-{peer_id}")
        with self._lock:
            old = self._links.get(peer_id)
            self._links[peer_id] = conn
            resync = self._full_exchange_frames() if self.mode == "filter_forward" else []
        if old is not None:
            old.close()
        for frame in resync:
            conn.send(frame)
        try:
            while conn.alive:
                try:
                    frame = proto.recv_frame(sock)
                except (proto.ProtocolError, OSError):
                    break
                if frame is None:
                    break
                opcode, payload = frame
                self._handle_link_frame(peer_id, conn, opcode, payload)
        finally:
            with self._lock:
                if self._links.get(peer_id) is conn:
                    del self._links[peer_id]
            conn.close()

    def _full_exchange_frames(self) -> list[bytes]:
        """SUB-PROP frames for everything this node knows (local + learned)."""
        frames = []
        for sub in self.broker.subscriptions():
            frames.append(proto.encode_frame(proto.SUB_PROP, proto.encode_section(
                [("origin", self.broker_id), ("sub", sub.sub_id), ("filter", sub.text)])))
        for rs in self._remote_subs.values():
            frames.append(proto.encode_frame(proto.SUB_PROP, proto.encode_section(
                [("origin", rs.origin), ("sub", rs.sub_id), ("filter", rs.text)])))
        return frames

    def _handle_link_frame(self, peer_id: str, conn: _Connection, opcode: int, payload: bytes):
        if opcode == proto.FWD:
            self._handle_forwarded(peer_id, payload)
        elif opcode == proto.SUB_PROP:
            sections, _ = proto.split_sections(payload, 1)
            fields = dict(sections[0])
            self._install_remote_sub(fields["origin"], fields["sub"], fields["filter"], peer_id)
        elif opcode == proto.UNSUB_PROP:
            sections, _ = proto.split_sections(payload, 1)
            fields = dict(sections[0])
            self._remove_remote_sub(fields["origin"], fields["sub"], peer_id)
        elif opcode == proto.PING:
            conn.send(proto.encode_frame(proto.PING, payload))
        elif opcode == proto.ERR:
            code, message = proto.decode_error(payload)
            log.warning("link %s->%s error: %s %s", peer_id, self.broker_id, code, message)
        else:
            conn.send(proto.encode_frame(proto.ERR, proto.encode_error(
                "bad-request", f"unexpected link opcode {opcode:#x}")))

    # -- routing ---------------------------------------------------------------------

    def _on_local_publish(self, notification: Notification):
        message_id = notification.header.first("message_id") or ""
        self.seen.check_and_insert(message_id)
        self._forward(notification, incoming=None)

    def _on_local_subscribe(self, sub: flt.Subscription):
        if self.mode != "filter_forward":
            return
        frame = proto.encode_frame(proto.SUB_PROP, proto.encode_section(
            [("origin", self.broker_id), ("sub", sub.sub_id), ("filter", sub.text)]))
        for link in self._link_snapshot(None):
            link.send(frame)

    def _on_local_unsubscribe(self, sub: flt.Subscription):
        if self.mode != "filter_forward":
            return
        frame = proto.encode_frame(proto.UNSUB_PROP, proto.encode_section(
            [("origin", self.broker_id), ("sub", sub.sub_id)]))
        for link in self._link_snapshot(None):
            link.send(frame)

    def _link_snapshot(self, exclude: Optional[str]) -> list[_Connection]:
        with self._lock:
            return [link for pid, link in self._links.items() if pid != exclude]

    def _install_remote_sub(self, origin: str, sub_id: str, text: str, via: str):
        key = (origin, sub_id)
        try:
            expr = flt.compile(text)
        except (flt.FilterSyntaxError, flt.FilterPathError) as exc:
            log.warning("dropping bad propagated filter %r: %s", text, exc)
            return
        with self._lock:
            if key in self._remote_subs or origin == self.broker_id:
                return
            self._remote_subs[key] = _RemoteSub(origin, sub_id, text, expr, via)
        frame = proto.encode_frame(proto.SUB_PROP, proto.encode_section(
            [("origin", origin), ("sub", sub_id), ("filter", text)]))
        for link in self._link_snapshot(via):
            link.send(frame)

    def _remove_remote_sub(self, origin: str, sub_id: str, via: str):
        key = (origin, sub_id)
        with self._lock:
            removed = self._remote_subs.pop(key, None)
        if removed is None:
            return
        frame = proto.encode_frame(proto.UNSUB_PROP, proto.encode_section(
            [("origin", origin), ("sub", sub_id)]))
        for link in self._link_snapshot(via):
            link.send(frame)

    def _handle_forwarded(self, peer_id: str, payload: bytes):
        sections, body = proto.split_sections(payload, 2)
        control_fields = proto.parse_control(sections[0])
        header = Header(tuple(sections[1]))
        self.fwd_received += 1
        message_id = header.first("message_id") or ""
        if not self.seen.check_and_insert(message_id):
            self.fwd_dup_dropped += 1
            return
        control = Control(publisher=control_fields["publisher"], seq=control_fields["seq"],
                          hops=control_fields["hops"], origin=control_fields["origin"])
        notification = Notification(header=header, body=body, control=control)
        self.broker.deliver_remote(notification)
        self._forward(notification, incoming=peer_id)

    def _forward(self, notification: Notification, incoming: Optional[str]):
        message_id = notification.header.first("message_id") or ""
        with self._lock:
            if self.mode == "flood":
                targets = [link for pid, link in self._links.items() if pid != incoming]
            else:
                targets = []
                for pid, link in self._links.items():
                    if pid == incoming:
                        continue
                    for rs in self._remote_subs.values():
                        if rs.via == pid and flt.matches(rs.filter, notification.header):
                            targets.append(link)
                            break
            if targets:
                self.forward_events += 1
                self.fwd_sent += len(targets)
        if not targets:
            return
        self.seen.note_forwarded(message_id)
        bumped = replace(notification.control, hops=notification.control.hops + 1)
        frame = proto.encode_frame(proto.FWD, (
            proto.encode_section(proto.control_pairs(bumped))
            + proto.encode_section(notification.header.pairs)
            + notification.body))
        for link in targets:
            link.send(frame)


def _error_code(exc: Exception) -> str:
    if isinstance(exc, DuplicateClient):
        return "duplicate-client"
    if isinstance(exc, DeadSession):
        return "dead-session"
    if isinstance(exc, DuplicatePublish):
        return "duplicate-publish"
    if isinstance(exc, UnknownSubscription):
        return "unknown-subscription"
    if isinstance(exc, NotOwner):
        return "not-owner"
    if isinstance(exc, flt.FilterSyntaxError):
        return "filter-syntax"
    if isinstance(exc, flt.FilterPathError):
        return "filter-path"
    if isinstance(exc, InvalidAlert):
        return "invalid-alert"
    if isinstance(exc, SchemaError):
        return "schema"
    if isinstance(exc, ParseError):
        return "parse"
    if isinstance(exc, proto.ProtocolError):
        return "header-mismatch"
    if isinstance(exc, BrokerError):
        return "broker-error"
    return "internal"


def start_node(topology: Topology, broker_id: str, **kw) -> BrokerNode:
    """Start the overlay node for one broker of a parsed topology."""
    spec = topology.brokers.get(broker_id)
    if spec is None:
        raise ConfigError(f"broker {broker_id!r} not in topology")
    node = BrokerNode(spec, topology.mode, **kw)
    return node.start()
