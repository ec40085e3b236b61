"""Single-broker notification service: sessions, subscriptions, matching, delivery.

The broker is embeddable: in-process clients hold a Session and drive it
directly, remote clients get the same semantics through the socket front end
(see overlay.py).  Publications are matched against an inverted subscription
index whose results are, by construction, identical to a linear scan over
all filters.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import OrderedDict, deque
from dataclasses import dataclass
from typing import Callable, Optional

from . import filters as flt
from .idmef import Alert, Header, project_header, serialize


class BrokerError(Exception):
    pass


class DuplicateClient(BrokerError):
    pass


class DeadSession(BrokerError):
    pass


class DuplicatePublish(BrokerError):
    def __init__(self, message_id: str):
        super().__init__(f"message {message_id!r} was already published")
        self.message_id = message_id


class UnknownSubscription(BrokerError):
    pass


class NotOwner(BrokerError):
    pass


@dataclass(frozen=True)
class Control:
    """System control section of a notification."""

    publisher: str
    seq: int
    hops: int
    origin: str


@dataclass(frozen=True)
class Notification:
    """Wire unit: filterable header + serialized alert body + control metadata."""

    header: Header
    body: bytes
    control: Control


DEFAULT_QUEUE_LIMIT = 10_000


class Session:
    """A connected client: delivery queue, liveness, and its subscriptions.

    The queue is bounded; when a consumer cannot keep up the oldest pending
    delivery is dropped and counted, so memory stays bounded at the cost of
    at-most-once delivery.
    """

    def __init__(self, client_id: str, queue_limit: int = DEFAULT_QUEUE_LIMIT):
        self.client_id = client_id
        self.alive = True
        self.drops = 0
        self.pub_seq = 0
        self.sub_ids: set[str] = set()
        self._queue: deque[tuple[str, Notification]] = deque()
        self._limit = queue_limit
        self._cond = threading.Condition()
        self._callback: Optional[Callable[[str, Notification], None]] = None

    def _enqueue(self, sub_id: str, notification: Notification) -> None:
        with self._cond:
            if not self.alive:
                return
            if len(self._queue) >= self._limit:
                self._queue.popleft()
                self.drops += 1
            self._queue.append((sub_id, notification))
            self._cond.notify()

    def poll(self, timeout: float = 0.0) -> Optional[tuple[str, Notification]]:
        """Pull the next pending delivery, waiting up to ``timeout`` seconds.

        Returns None when nothing is pending; raises DeadSession once the
        session has been disconnected.
        """
        deadline = None
        with self._cond:
            while True:
                if not self.alive:
                    raise DeadSession(self.client_id)
                if self._queue:
                    return self._queue.popleft()
                if timeout <= 0:
                    return None
                if deadline is None:
                    deadline = time.monotonic() + timeout
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)

    def set_callback(self, callback: Optional[Callable[[str, Notification], None]]) -> None:
        """Switch to push delivery: new matches are handed to ``callback``.

        Callbacks run on the publishing thread after broker locks are
        released; deliveries already queued are still consumed via poll().
        """
        self._callback = callback

    def pending(self) -> int:
        with self._cond:
            return len(self._queue)

    def _kill(self) -> None:
        with self._cond:
            self.alive = False
            self._queue.clear()
            self._cond.notify_all()


class _BoundedIdSet:
    """Insertion-ordered set of ids with a capacity bound (oldest evicted)."""

    def __init__(self, capacity: int):
        self._capacity = capacity
        self._ids: OrderedDict[str, None] = OrderedDict()

    def add(self, item: str) -> bool:
        if item in self._ids:
            return False
        self._ids[item] = None
        while len(self._ids) > self._capacity:
            self._ids.popitem(last=False)
        return True

    def __contains__(self, item: str) -> bool:
        return item in self._ids

    def __len__(self) -> int:
        return len(self._ids)


class SubscriptionTable:
    """Subscription storage with an inverted index on equality clauses.

    Each filter with at least one non-wildcard equality clause is indexed
    under that (path, value) pair; everything else lands in a residual bucket
    that is always scanned.  Candidates are then verified with the full
    predicate, so lookup results equal a brute-force linear scan.
    """

    def __init__(self):
        self.subs: dict[str, flt.Subscription] = {}
        self._eq_index: dict[tuple[str, str], set[str]] = {}
        self._residual: set[str] = set()
        self._index_key: dict[str, Optional[tuple[str, str]]] = {}

    def __len__(self):
        return len(self.subs)

    @staticmethod
    def _pick_index_key(expr: flt.FilterExpr) -> Optional[tuple[str, str]]:
        if expr.is_false:
            return None
        for clause in expr.clauses:
            if clause.op is flt.Op.EQ and not clause.path.endswith(".*"):
                return (clause.path, flt.normalize_value(clause.value))
        return None

    def add(self, sub: flt.Subscription) -> None:
        self.subs[sub.sub_id] = sub
        key = self._pick_index_key(sub.filter)
        self._index_key[sub.sub_id] = key
        if key is None:
            self._residual.add(sub.sub_id)
        else:
            self._eq_index.setdefault(key, set()).add(sub.sub_id)

    def remove(self, sub_id: str) -> flt.Subscription:
        sub = self.subs.pop(sub_id)
        key = self._index_key.pop(sub_id)
        if key is None:
            self._residual.discard(sub_id)
        else:
            bucket = self._eq_index.get(key)
            if bucket is not None:
                bucket.discard(sub_id)
                if not bucket:
                    del self._eq_index[key]
        return sub

    def match_candidates(self, header: Header) -> list[flt.Subscription]:
        """Exactly the subscriptions whose filter matches the header."""
        candidate_ids = set(self._residual)
        for key, value in header.pairs:
            bucket = self._eq_index.get((key, flt.normalize_value(value)))
            if bucket:
                candidate_ids.update(bucket)
        out = []
        for sub_id in candidate_ids:
            sub = self.subs[sub_id]
            if flt.matches(sub.filter, header):
                out.append(sub)
        return out

    def match_linear(self, header: Header) -> list[flt.Subscription]:
        """Brute-force reference scan (used by tests to pin index correctness)."""
        return [s for s in self.subs.values() if flt.matches(s.filter, header)]


class Broker:
    """The notification service of one broker.

    Thread safety: operations on distinct sessions may interleave freely;
    the subscription table and publish path are serialized by an internal
    lock.  Delivery callbacks and the overlay hook run after that lock is
    released, so client code invoked from a delivery may safely call back
    into the broker.
    """

    def __init__(self, broker_id: str = "broker", queue_limit: int = DEFAULT_QUEUE_LIMIT,
                 published_capacity: int = 1_000_000):
        self.broker_id = broker_id
        self._lock = threading.RLock()
        self._sessions: dict[str, Session] = {}
        self._table = SubscriptionTable()
        self._owners: dict[str, Session] = {}
        self._published = _BoundedIdSet(published_capacity)
        self._sub_counter = itertools.count(1)
        self._queue_limit = queue_limit
        self.published = 0
        self.delivered = 0
        # Overlay hooks; the embedded broker leaves them unset.
        self.on_publish: Optional[Callable[[Notification], None]] = None
        self.on_subscribe: Optional[Callable[[flt.Subscription], None]] = None
        self.on_unsubscribe: Optional[Callable[[flt.Subscription], None]] = None

    # -- session lifecycle ---------------------------------------------------

    def connect(self, client_id: str) -> Session:
        with self._lock:
            if client_id in self._sessions:
                raise DuplicateClient(client_id)
            session = Session(client_id, self._queue_limit)
            self._sessions[client_id] = session
            return session

    def disconnect(self, session: Session) -> None:
        removed = []
        with self._lock:
            if self._sessions.get(session.client_id) is not session:
                return
            del self._sessions[session.client_id]
            for sub_id in list(session.sub_ids):
                removed.append(self._table.remove(sub_id))
                self._owners.pop(sub_id, None)
            session.sub_ids.clear()
            hook = self.on_unsubscribe
        session._kill()
        if hook is not None:
            for sub in removed:
                hook(sub)

    def _check_live(self, session: Session) -> None:
        if not session.alive or self._sessions.get(session.client_id) is not session:
            raise DeadSession(session.client_id)

    # -- interface operations --------------------------------------------------

    def sub(self, session: Session, expr_text: str) -> str:
        """Register a subscription; returns its broker-unique id."""
        expr = flt.compile(expr_text)  # propagate syntax/path errors before touching state
        with self._lock:
            self._check_live(session)
            sub_id = f"{self.broker_id}:s{next(self._sub_counter)}"
            sub = flt.Subscription(sub_id=sub_id, filter=expr, owner=session, text=expr_text)
            self._table.add(sub)
            self._owners[sub_id] = session
            session.sub_ids.add(sub_id)
            hook = self.on_subscribe
        if hook is not None:
            hook(sub)
        return sub_id

    def unsub(self, session: Session, sub_id: str) -> None:
        with self._lock:
            self._check_live(session)
            owner = self._owners.get(sub_id)
            if owner is None:
                raise UnknownSubscription(sub_id)
            if owner is not session:
                raise NotOwner(sub_id)
            sub = self._table.remove(sub_id)
            del self._owners[sub_id]
            session.sub_ids.discard(sub_id)
            hook = self.on_unsubscribe
        if hook is not None:
            hook(sub)

    def pub(self, session: Session, alert: Alert, body: Optional[bytes] = None) -> Notification:
        """Publish an alert: deliver locally to every matching subscription,
        then hand the notification to the overlay hook for remote forwarding.

        An alert can only be published once; a repeated message id raises
        DuplicatePublish.
        """
        if body is None:
            body = serialize(alert)
        header = project_header(alert)
        callbacks: list[tuple[Callable, str, Notification]] = []
        with self._lock:
            self._check_live(session)
            if not self._published.add(alert.message_id):
                raise DuplicatePublish(alert.message_id)
            session.pub_seq += 1
            control = Control(publisher=session.client_id, seq=session.pub_seq,
                              hops=0, origin=self.broker_id)
            notification = Notification(header=header, body=body, control=control)
            callbacks = self._deliver_local(notification)
            self.published += 1
            hook = self.on_publish
        for cb, sub_id, notif in callbacks:
            cb(sub_id, notif)
        if hook is not None:
            hook(notification)
        return notification

    def deliver_remote(self, notification: Notification) -> None:
        """Deliver a notification forwarded from another broker to local matches."""
        with self._lock:
            callbacks = self._deliver_local(notification)
        for cb, sub_id, notif in callbacks:
            cb(sub_id, notif)

    def _deliver_local(self, notification: Notification):
        callbacks = []
        for sub in self._table.match_candidates(notification.header):
            session: Session = self._owners[sub.sub_id]
            self.delivered += 1
            if session._callback is not None:
                callbacks.append((session._callback, sub.sub_id, notification))
            else:
                session._enqueue(sub.sub_id, notification)
        return callbacks

    def match_candidates(self, header: Header) -> list[flt.Subscription]:
        with self._lock:
            return self._table.match_candidates(header)

    # -- introspection ---------------------------------------------------------

    def session(self, client_id: str) -> Optional[Session]:
        with self._lock:
            return self._sessions.get(client_id)

    def subscriptions(self) -> list[flt.Subscription]:
        with self._lock:
            return list(self._table.subs.values())

    def stats(self) -> dict:
        with self._lock:
            queue_drops = sum(s.drops for s in self._sessions.values())
            return {
                "broker_id": self.broker_id,
                "clients": len(self._sessions),
                "local_subs": len(self._table),
                "published": self.published,
                "delivered": self.delivered,
                "queue_drops": queue_drops,
            }
