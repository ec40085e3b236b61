"""Broker clients: a TCP client for the frame protocol and an in-process twin.

Both expose the same surface (connect implicit in construction, then
pub/sub/unsub, pull via poll() or push via set_callback(), stats, close), so
managers and the replay harness work against either.  The TCP client records
publish-acknowledge timestamps per message id, which the harness joins with
notification receipt times to measure delivery latency.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from . import protocol as proto
from .broker import Broker
from .idmef import Alert, Header, parse as parse_alert, project_header, serialize

import socket


class RemoteError(Exception):
    """An ERR frame from the broker, carrying its error code."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ConnectionLost(Exception):
    pass


@dataclass(frozen=True)
class ReceivedNotification:
    """A delivered notification as seen by a subscriber."""

    sub_id: str
    header: Header
    body: bytes
    publisher: str
    seq: int
    hops: int
    origin: str
    recv_time: float

    def alert(self) -> Alert:
        return parse_alert(self.body)


class _Waiter:
    __slots__ = ("event", "reply", "error")

    def __init__(self):
        self.event = threading.Event()
        self.reply = None
        self.error = None


_ASYNC_PUB = object()


class BrokerClient:
    """Remote broker client over the length-prefixed frame protocol."""

    def __init__(self, host: str, port: int, client_id: str, timeout: float = 10.0,
                 window: int = 64):
        self.client_id = client_id
        self.broker_id = ""
        self.ack_times: dict[str, float] = {}
        self._timeout = timeout
        self._window = window
        self._outstanding = 0
        self._async_error: Optional[Exception] = None
        self._pending: deque = deque()
        self._send_lock = threading.Lock()
        self._state = threading.Condition()
        self._recv: deque[ReceivedNotification] = deque()
        self._recv_cond = threading.Condition()
        self._callback: Optional[Callable[[ReceivedNotification], None]] = None
        self._closed = False
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        proto.send_frame(self._sock, proto.CONNECT, client_id.encode("utf-8"))
        reply = proto.recv_frame(self._sock)
        if reply is None:
            raise ConnectionLost("no CONNECT reply")
        opcode, payload = reply
        if opcode == proto.ERR:
            code, message = proto.decode_error(payload)
            raise RemoteError(code, message)
        if opcode != proto.CONNECT:
            raise proto.ProtocolError(f"unexpected CONNECT reply opcode {opcode:#x}")
        self.broker_id = payload.decode("utf-8")
        self._reader = threading.Thread(target=self._read_loop,
                                        name=f"client-{client_id}", daemon=True)
        self._reader.start()

    # -- reader ----------------------------------------------------------------

    def _read_loop(self):
        try:
            while True:
                frame = proto.recv_frame(self._sock)
                if frame is None:
                    break
                opcode, payload = frame
                if opcode == proto.NOTIFY:
                    self._dispatch_notify(payload)
                    continue
                self._dispatch_reply(opcode, payload)
        except (proto.ProtocolError, OSError):
            pass
        self._fail_pending(ConnectionLost("connection closed"))

    def _dispatch_notify(self, payload: bytes):
        sections, body = proto.split_sections(payload, 2)
        control = proto.parse_control(sections[0])
        rn = ReceivedNotification(
            sub_id=control["sub"] or "",
            header=Header(tuple(sections[1])),
            body=body,
            publisher=control["publisher"],
            seq=control["seq"],
            hops=control["hops"],
            origin=control["origin"],
            recv_time=time.perf_counter(),
        )
        callback = self._callback
        if callback is not None:
            callback(rn)
            return
        with self._recv_cond:
            self._recv.append(rn)
            self._recv_cond.notify()

    def _dispatch_reply(self, opcode: int, payload: bytes):
        with self._state:
            waiter = self._pending.popleft() if self._pending else None
        if waiter is _ASYNC_PUB:
            with self._state:
                self._outstanding -= 1
                if opcode == proto.ERR:
                    code, message = proto.decode_error(payload)
                    self._async_error = RemoteError(code, message)
                else:
                    self.ack_times[payload.decode("utf-8")] = time.perf_counter()
                self._state.notify_all()
            return
        if waiter is None:
            return
        if opcode == proto.ERR:
            code, message = proto.decode_error(payload)
            waiter.error = RemoteError(code, message)
        else:
            waiter.reply = (opcode, payload)
        waiter.event.set()

    def _fail_pending(self, exc: Exception):
        with self._state:
            self._closed = True
            while self._pending:
                waiter = self._pending.popleft()
                if waiter is _ASYNC_PUB:
                    self._outstanding -= 1
                    self._async_error = exc
                else:
                    waiter.error = exc
                    waiter.event.set()
            self._state.notify_all()
        with self._recv_cond:
            self._recv_cond.notify_all()

    # -- requests ----------------------------------------------------------------

    def _request(self, opcode: int, payload: bytes) -> tuple[int, bytes]:
        waiter = _Waiter()
        with self._send_lock:
            if self._closed:
                raise ConnectionLost("client closed")
            with self._state:
                self._pending.append(waiter)
            proto.send_frame(self._sock, opcode, payload)
        if not waiter.event.wait(self._timeout):
            raise TimeoutError(f"no reply to {proto.OPCODE_NAMES.get(opcode, opcode)}")
        if waiter.error is not None:
            raise waiter.error
        return waiter.reply

    def pub(self, alert: Alert, body: Optional[bytes] = None, wait: bool = True) -> str:
        """Publish an alert; with wait=False up to ``window`` publishes pipeline."""
        if body is None:
            body = serialize(alert)
        header = project_header(alert)
        payload = proto.encode_section(header.pairs) + body
        if wait:
            _, reply = self._request(proto.PUB, payload)
            self.ack_times[alert.message_id] = time.perf_counter()
            return reply.decode("utf-8")
        with self._state:
            while self._outstanding >= self._window and not self._closed:
                self._state.wait(0.5)
            if self._async_error is not None:
                exc, self._async_error = self._async_error, None
                raise exc
            if self._closed:
                raise ConnectionLost("client closed")
        with self._send_lock:
            with self._state:
                self._pending.append(_ASYNC_PUB)
                self._outstanding += 1
            proto.send_frame(self._sock, proto.PUB, payload)
        return alert.message_id

    def flush(self, timeout: float = 30.0) -> None:
        """Wait until every pipelined publish has been acknowledged."""
        deadline = time.monotonic() + timeout
        with self._state:
            while self._outstanding > 0 and not self._closed:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError("flush timed out")
                self._state.wait(remaining)
            if self._async_error is not None:
                exc, self._async_error = self._async_error, None
                raise exc

    def sub(self, expr_text: str) -> str:
        _, payload = self._request(proto.SUB, expr_text.encode("utf-8"))
        return payload.decode("utf-8")

    def unsub(self, sub_id: str) -> None:
        self._request(proto.UNSUB, sub_id.encode("utf-8"))

    def ping(self) -> None:
        self._request(proto.PING, b"")

    def stats(self) -> dict:
        _, payload = self._request(proto.STATS, b"")
        return proto.decode_stats(payload)

    # -- notifications --------------------------------------------------------------

    def poll(self, timeout: float = 0.0) -> Optional[ReceivedNotification]:
        deadline = time.monotonic() + timeout if timeout > 0 else None
        with self._recv_cond:
            while True:
                if self._recv:
                    return self._recv.popleft()
                if self._closed or deadline is None:
                    return None
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._recv_cond.wait(remaining)

    def set_callback(self, callback: Optional[Callable[[ReceivedNotification], None]]) -> None:
        self._callback = callback

    def pending(self) -> int:
        with self._recv_cond:
            return len(self._recv)

    def close(self) -> None:
        with self._send_lock:
            if not self._closed:
                try:
                    proto.send_frame(self._sock, proto.DISCONNECT)
                except OSError:
                    pass
        time.sleep(0)  # let the reader drain the DISCONNECT reply
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._fail_pending(ConnectionLost("client closed"))


class LocalClient:
    """In-process client bound directly to an embedded Broker."""

    def __init__(self, broker: Broker, client_id: str):
        self.client_id = client_id
        self.broker_id = broker.broker_id
        self.ack_times: dict[str, float] = {}
        self._broker = broker
        self._session = broker.connect(client_id)
        self._callback: Optional[Callable[[ReceivedNotification], None]] = None

    def _wrap(self, sub_id: str, notification) -> ReceivedNotification:
        return ReceivedNotification(
            sub_id=sub_id,
            header=notification.header,
            body=notification.body,
            publisher=notification.control.publisher,
            seq=notification.control.seq,
            hops=notification.control.hops,
            origin=notification.control.origin,
            recv_time=time.perf_counter(),
        )

    def pub(self, alert: Alert, body: Optional[bytes] = None, wait: bool = True) -> str:
        self._broker.pub(self._session, alert, body)
        self.ack_times[alert.message_id] = time.perf_counter()
        return alert.message_id

    def flush(self, timeout: float = 0.0) -> None:
        pass  # synchronous publishes have no pipeline to drain

    def sub(self, expr_text: str) -> str:
        return self._broker.sub(self._session, expr_text)

    def unsub(self, sub_id: str) -> None:
        self._broker.unsub(self._session, sub_id)

    def ping(self) -> None:
        pass

    def stats(self) -> dict:
        return self._broker.stats()

    def poll(self, timeout: float = 0.0) -> Optional[ReceivedNotification]:
        item = self._session.poll(timeout)
        if item is None:
            return None
        return self._wrap(*item)

    def set_callback(self, callback: Optional[Callable[[ReceivedNotification], None]]) -> None:
        self._callback = callback
        if callback is None:
            self._session.set_callback(None)
        else:
            self._session.set_callback(lambda sid, n: callback(self._wrap(sid, n)))

    def pending(self) -> int:
        return self._session.pending()

    def close(self) -> None:
        self._broker.disconnect(self._session)
