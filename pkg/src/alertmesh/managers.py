"""The alert processing pipeline built on top of the notification service.

Analyzers publish local alerts; each aggregation manager subscribes to local,
external and correlated alerts, clusters alerts that describe the same
occurrence of an action, and publishes one global alert per cluster (plus an
external copy for exported classifications).  A correlation manager consumes
global alerts, advances multi-step scenario instances and publishes a
correlated alert per advance; when a scenario completes it looks up the
rule's counter-measures and publishes an assessment alert.  A policy manager
consumes assessment alerts and appends effector records to a log.

Every manager is a single-threaded event loop over its own notify stream
(ManagerLoop); managers only share the broker, never state.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from typing import Callable, Optional, Sequence

from .client import ReceivedNotification
from .config import ConfigError, iter_directives
from .idmef import (
    AdditionalData,
    Alert,
    Analyzer,
    Assessment,
    Classification,
    CorrelationInfo,
    Endpoint,
    Impact,
    Instant,
    InvalidAlert,
    Kind,
    Reference,
    Severity,
    Timestamps,
    build_alert,
    parse,
)


def _event_time(alert: Alert) -> float:
    """Event time of an alert: detect time when present, else create time."""
    instant = alert.timestamps.detect or alert.timestamps.create
    return instant.epoch_float()


def _addresses(endpoints: Sequence[Endpoint]) -> frozenset[str]:
    return frozenset(ep.node.address for ep in endpoints
                     if ep.node is not None and ep.node.address)


def _merge_endpoints(*groups: Sequence[Endpoint]) -> tuple[Endpoint, ...]:
    seen = []
    for group in groups:
        for ep in group:
            if ep not in seen:
                seen.append(ep)
    return tuple(seen)


# ---------------------------------------------------------------------------
# Analyzers

@dataclass(frozen=True)
class SensorEvent:
    """What a detection unit hands to its analyzer."""

    classification: str
    sources: tuple[Endpoint, ...] = ()
    targets: tuple[Endpoint, ...] = ()
    detect_time: Optional[Instant] = None
    references: tuple[Reference, ...] = ()


class AnalyzerClient:
    """Publishes local alerts for sensor events under one analyzer identity."""

    def __init__(self, client, analyzer: Analyzer, clock: Callable[[], Instant] = Instant.now):
        self.client = client
        self.analyzer = analyzer
        self._clock = clock

    def publish_event(self, event: SensorEvent) -> Alert:
        if not event.classification:
            raise InvalidAlert("sensor event carries no classification")
        now = self._clock()
        alert = build_alert(
            Kind.LOCAL,
            self.analyzer,
            Timestamps(create=now, detect=event.detect_time or now, analyzer=now),
            sources=event.sources,
            targets=event.targets,
            classification=Classification(event.classification, event.references),
        )
        self.client.pub(alert)
        return alert


# ---------------------------------------------------------------------------
# Aggregation

@dataclass(frozen=True)
class AggregationConfig:
    window: float = 5.0           # clustering window, seconds of event time
    size_limit: int = 100         # clusters close early at this size
    classifications: Optional[tuple[str, ...]] = None  # None: all local alerts
    export: frozenset[str] = frozenset()  # classifications republished as External


@dataclass(frozen=True)
class SubscriptionHandle:
    """One logical interest, possibly spread over several subscriptions."""

    label: str
    sub_ids: tuple[str, ...]


class _Cluster:
    __slots__ = ("key", "members", "deadline")

    def __init__(self, key: Alert, window: float):
        self.key = key
        self.members = [key]
        self.deadline = _event_time(key) + window


class AggregationManager:
    """Clusters alerts that correspond to the same occurrence of an action.

    Two alerts are similar when they share the classification name, overlap
    on source or target node addresses, and their detect times lie within
    the configured window.  Every closed cluster (deadline passed or size
    limit reached) yields one global alert referencing all member message
    ids; singletons are published too so unrepeated actions stay visible to
    correlation.
    """

    def __init__(self, client, analyzer: Analyzer, config: AggregationConfig = AggregationConfig(),
                 clock: Callable[[], Instant] = Instant.now):
        self.client = client
        self.analyzer = analyzer
        self.config = config
        self._clock = clock
        self._clusters: list[_Cluster] = []
        self._watermark = float("-inf")
        self.consumed = 0
        self.emitted_global = 0
        self.emitted_external = 0
        self._handles: dict[str, SubscriptionHandle] = {}

    # -- subscriptions ---------------------------------------------------------

    def subscribe(self) -> tuple[SubscriptionHandle, SubscriptionHandle, SubscriptionHandle]:
        """Register the three interests: local, external, and correlated alerts.

        Restricting local alerts to a classification set needs one
        subscription per name (the filter language has no disjunction), so
        each interest is returned as a handle that can be revoked as a unit.
        """
        if self.config.classifications is None:
            la_texts = ['//alert[kind="Local"]']
        else:
            la_texts = [f'//alert[kind="Local" and classification.name="{name}"]'
                        for name in self.config.classifications]
        ea_text = (f'//alert[kind="External" and '
                   f'analyzer.analyzerid!="{self.analyzer.analyzerid}"]')
        la = SubscriptionHandle("LA", tuple(self.client.sub(t) for t in la_texts))
        ea = SubscriptionHandle("EA", (self.client.sub(ea_text),))
        ca = SubscriptionHandle("CA", (self.client.sub('//alert[kind="Correlated"]'),))
        self._handles = {"LA": la, "EA": ea, "CA": ca}
        return la, ea, ca

    def unsubscribe(self, handle: SubscriptionHandle) -> None:
        for sub_id in handle.sub_ids:
            self.client.unsub(sub_id)
        self._handles.pop(handle.label, None)

    # -- clustering --------------------------------------------------------------

    def _similar(self, cluster: _Cluster, alert: Alert) -> bool:
        key = cluster.key
        if key.classification.name != alert.classification.name:
            return False
        if abs(_event_time(alert) - _event_time(key)) > self.config.window:
            return False
        src_overlap = _addresses(key.sources) & _addresses(alert.sources)
        tgt_overlap = _addresses(key.targets) & _addresses(alert.targets)
        return bool(src_overlap or tgt_overlap)

    def handle_alert(self, alert: Alert) -> list[Alert]:
        """Feed one notified alert into the clustering state; returns published alerts."""
        if alert.classification is None:
            return []
        self.consumed += 1
        out: list[Alert] = []
        et = _event_time(alert)
        if et > self._watermark:
            self._watermark = et
            out.extend(self._close_due())
        placed = False
        for cluster in self._clusters:
            if self._similar(cluster, alert):
                cluster.members.append(alert)
                placed = True
                if len(cluster.members) >= self.config.size_limit:
                    self._clusters.remove(cluster)
                    out.extend(self._emit(cluster))
                break
        if not placed:
            self._clusters.append(_Cluster(alert, self.config.window))
        return out

    def process(self, rn: ReceivedNotification) -> None:
        self.handle_alert(parse(rn.body))

    def _close_due(self) -> list[Alert]:
        out = []
        due = [c for c in self._clusters if self._watermark > c.deadline]
        for cluster in due:
            self._clusters.remove(cluster)
            out.extend(self._emit(cluster))
        return out

    def flush(self) -> list[Alert]:
        """Close every open cluster regardless of the watermark (end of stream)."""
        out = []
        for cluster in list(self._clusters):
            out.extend(self._emit(cluster))
        self._clusters.clear()
        return out

    def _emit(self, cluster: _Cluster) -> list[Alert]:
        members = cluster.members
        detect = min((m.timestamps.detect or m.timestamps.create for m in members),
                     key=lambda i: i.key())
        now = self._clock()
        if detect.key() > now.key():
            now = detect
        classification = members[0].classification
        correlation = CorrelationInfo("aggregate", tuple(m.message_id for m in members))
        ga = build_alert(
            Kind.GLOBAL,
            self.analyzer,
            Timestamps(create=now, detect=detect),
            sources=_merge_endpoints(*[m.sources for m in members]),
            targets=_merge_endpoints(*[m.targets for m in members]),
            classification=classification,
            correlation=correlation,
            additional=(AdditionalData("cluster-size", str(len(members))),),
        )
        out = [ga]
        self.client.pub(ga)
        self.emitted_global += 1
        exported = (classification.name in self.config.export
                    and any(m.kind is Kind.LOCAL for m in members))
        if exported:
            ea = build_alert(
                Kind.EXTERNAL,
                self.analyzer,
                Timestamps(create=now, detect=detect),
                sources=ga.sources,
                targets=ga.targets,
                classification=classification,
                correlation=correlation,
            )
            self.client.pub(ea)
            self.emitted_external += 1
            out.append(ea)
        return out


# ---------------------------------------------------------------------------
# Scenario rules

class Constraint(str, Enum):
    NONE = "none"
    SAME_TARGET = "same_target"
    SAME_SOURCE = "same_source"


@dataclass(frozen=True)
class ScenarioStep:
    classification: str
    constraint: Constraint = Constraint.NONE


@dataclass(frozen=True)
class ScenarioRule:
    """A multi-step attack scenario and the counter-measures reacting to it."""

    name: str
    steps: tuple[ScenarioStep, ...]
    objective: str = ""
    countermeasures: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "countermeasures", tuple(self.countermeasures))
        if len(self.steps) < 2:
            raise ConfigError(f"scenario {self.name!r} needs at least 2 steps")
        if any(not s.classification for s in self.steps):
            raise ConfigError(f"scenario {self.name!r} has an empty step classification")
        if not self.countermeasures:
            raise ConfigError(f"scenario {self.name!r} declares no counter-measures")


def parse_rules(text: str) -> tuple[ScenarioRule, ...]:
    """Parse scenario rule config: scenario/step/objective/counter/end blocks."""
    rules: list[ScenarioRule] = []
    name = None
    steps: list[ScenarioStep] = []
    objective = ""
    counters: list[str] = []
    for lineno, fields in iter_directives(text):
        kw = fields[0]
        if kw == "scenario":
            if name is not None:
                raise ConfigError("scenario block not closed with 'end'", lineno)
            if len(fields) != 2:
                raise ConfigError("expected: scenario <name>", lineno)
            name = fields[1]
            steps, objective, counters = [], "", []
        elif name is None:
            raise ConfigError(f"{kw!r} outside a scenario block", lineno)
        elif kw == "step":
            if len(fields) not in (2, 3):
                raise ConfigError("expected: step <classification> [same_target|same_source]", lineno)
            constraint = Constraint.NONE
            if len(fields) == 3:
                try:
                    constraint = Constraint(fields[2])
                except ValueError:
                    raise ConfigError(f"unknown constraint {fields[2]!r}", lineno) from None
            steps.append(ScenarioStep(fields[1], constraint))
        elif kw == "objective":
            objective = " ".join(fields[1:])
        elif kw == "counter":
            if len(fields) < 2:
                raise ConfigError("counter needs an action", lineno)
            counters.append(" ".join(fields[1:]))
        elif kw == "end":
            if any(r.name == name for r in rules):
                raise ConfigError(f"duplicate scenario {name!r}", lineno)
            try:
                rules.append(ScenarioRule(name, tuple(steps), objective, tuple(counters)))
            except ConfigError as exc:
                raise ConfigError(str(exc), lineno) from None
            name = None
        else:
            raise ConfigError(f"unknown directive {kw!r}", lineno)
    if name is not None:
        raise ConfigError(f"scenario {name!r} not closed with 'end'")
    return tuple(rules)


def load_rules(path) -> tuple[ScenarioRule, ...]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_rules(fh.read())


# ---------------------------------------------------------------------------
# Correlation

class _Instance:
    __slots__ = ("rule", "next_index", "src_binding", "tgt_binding",
                 "contributing", "sources", "targets", "expire_at")

    def __init__(self, rule: ScenarioRule):
        self.rule = rule
        self.next_index = 0
        self.src_binding: Optional[frozenset[str]] = None
        self.tgt_binding: Optional[frozenset[str]] = None
        self.contributing: list[str] = []
        self.sources: tuple[Endpoint, ...] = ()
        self.targets: tuple[Endpoint, ...] = ()
        self.expire_at = float("inf")

    def try_advance(self, alert: Alert) -> bool:
        step = self.rule.steps[self.next_index]
        if alert.classification is None or alert.classification.name != step.classification:
            return False
        if step.constraint is Constraint.SAME_TARGET:
            addrs = _addresses(alert.targets)
            if not addrs:
                return False
            merged = addrs if self.tgt_binding is None else self.tgt_binding & addrs
            if not merged:
                return False
            self.tgt_binding = merged
        elif step.constraint is Constraint.SAME_SOURCE:
            addrs = _addresses(alert.sources)
            if not addrs:
                return False
            merged = addrs if self.src_binding is None else self.src_binding & addrs
            if not merged:
                return False
            self.src_binding = merged
        self.next_index += 1
        self.contributing.append(alert.message_id)
        self.sources = _merge_endpoints(self.sources, alert.sources)
        self.targets = _merge_endpoints(self.targets, alert.targets)
        return True

    @property
    def complete(self) -> bool:
        return self.next_index >= len(self.rule.steps)


class CorrelationManager:
    """Assembles global alerts into attack scenarios and reacts on completion.

    Each advance past the first step publishes a correlated alert naming the
    scenario and the contributing message ids; a completed scenario
    additionally publishes an assessment alert carrying the rule's
    counter-measures (selected by per-rule lookup).
    """

    def __init__(self, client, analyzer: Analyzer, rules: Sequence[ScenarioRule],
                 window: float = 5.0, expiry_factor: float = 10.0,
                 clock: Callable[[], Instant] = Instant.now):
        self.client = client
        self.analyzer = analyzer
        self.rules = tuple(rules)
        self.expiry = expiry_factor * window
        self._clock = clock
        self._instances: dict[str, list[_Instance]] = {r.name: [] for r in self.rules}
        self.consumed = 0
        self.emitted_correlated = 0
        self.emitted_assessment = 0
        self.sub_handle: Optional[SubscriptionHandle] = None

    def subscribe(self) -> SubscriptionHandle:
        sub_id = self.client.sub('//alert[kind="Global"]')
        self.sub_handle = SubscriptionHandle("GA", (sub_id,))
        return self.sub_handle

    def unsubscribe(self) -> None:
        if self.sub_handle is not None:
            for sub_id in self.sub_handle.sub_ids:
                self.client.unsub(sub_id)
            self.sub_handle = None

    def handle_alert(self, ga: Alert) -> list[Alert]:
        if ga.kind is not Kind.GLOBAL:
            return []
        self.consumed += 1
        et = _event_time(ga)
        out: list[Alert] = []
        for rule in self.rules:
            live = [i for i in self._instances[rule.name] if i.expire_at >= et]
            kept: list[_Instance] = []
            for inst in live:
                if inst.try_advance(ga):
                    inst.expire_at = et + self.expiry
                    out.extend(self._emit(inst, ga))
                    if inst.complete:
                        continue  # objective reached: instance retires
                kept.append(inst)
            fresh = _Instance(rule)
            if fresh.try_advance(ga):
                fresh.expire_at = et + self.expiry
                kept.append(fresh)
            self._instances[rule.name] = kept
        for alert in out:
            self.client.pub(alert)
        return out

    def process(self, rn: ReceivedNotification) -> None:
        self.handle_alert(parse(rn.body))

    def _emit(self, inst: _Instance, ga: Alert) -> list[Alert]:
        if inst.next_index < 2:
            return []
        now = self._clock()
        detect = ga.timestamps.detect or ga.timestamps.create
        if detect.key() > now.key():
            now = detect
        correlation = CorrelationInfo(inst.rule.name, tuple(inst.contributing))
        out = [build_alert(
            Kind.CORRELATED,
            self.analyzer,
            Timestamps(create=now, detect=detect),
            sources=inst.sources,
            targets=inst.targets,
            classification=Classification(inst.rule.name),
            correlation=correlation,
        )]
        self.emitted_correlated += 1
        if inst.complete:
            out.append(build_alert(
                Kind.ASSESSMENT,
                self.analyzer,
                Timestamps(create=now, detect=detect),
                sources=inst.sources,
                targets=inst.targets,
                classification=Classification(inst.rule.name),
                assessment=Assessment(
                    impact=Impact(Severity.HIGH, inst.rule.objective),
                    actions=inst.rule.countermeasures,
                ),
                correlation=correlation,
            ))
            self.emitted_assessment += 1
        return out


# ---------------------------------------------------------------------------
# Policy manager

@dataclass(frozen=True)
class EffectorRecord:
    time_iso: str
    scenario: str
    action: str
    targets: str

    def line(self) -> str:
        return f"{self.time_iso}\t{self.scenario}\t{self.action}\t{self.targets}\n"


class PolicyManager:
    """Consumes assessment alerts and appends effector records to a log file."""

    def __init__(self, client, log_path=None, clock: Callable[[], float] = time.time):
        self.client = client
        self.log_path = log_path
        self._clock = clock
        self.records: list[EffectorRecord] = []
        self.sub_handle: Optional[SubscriptionHandle] = None

    def subscribe(self) -> SubscriptionHandle:
        sub_id = self.client.sub('//alert[kind="Assessment"]')
        self.sub_handle = SubscriptionHandle("AA", (sub_id,))
        return self.sub_handle

    def handle_alert(self, aa: Alert) -> list[EffectorRecord]:
        if aa.kind is not Kind.ASSESSMENT or aa.assessment is None:
            return []
        when = datetime.fromtimestamp(self._clock(), tz=timezone.utc).isoformat()
        scenario = aa.correlation.name if aa.correlation is not None else \
            (aa.classification.name if aa.classification else "-")
        targets = ",".join(sorted(_addresses(aa.targets))) or "-"
        new = [EffectorRecord(when, scenario, action, targets)
               for action in aa.assessment.actions]
        self.records.extend(new)
        if self.log_path is not None:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                for record in new:
                    fh.write(record.line())
        return new

    def process(self, rn: ReceivedNotification) -> None:
        self.handle_alert(parse(rn.body))


# ---------------------------------------------------------------------------
# Heartbeats

class HeartbeatEmitter:
    """Publishes a heartbeat every ``interval`` seconds of the given clock."""

    def __init__(self, client, analyzer: Analyzer, interval: float = 30.0,
                 clock: Callable[[], float] = time.time):
        self.client = client
        self.analyzer = analyzer
        self.interval = interval
        self._clock = clock
        self._next_due = clock() + interval
        self.published = 0

    def tick(self, now: Optional[float] = None) -> int:
        """Publish every heartbeat due at ``now``; returns how many were sent."""
        if now is None:
            now = self._clock()
        sent = 0
        while now >= self._next_due:
            hb = build_alert(Kind.HEARTBEAT, self.analyzer,
                             Timestamps(create=Instant.from_epoch(self._next_due)))
            self.client.pub(hb)
            self._next_due += self.interval
            sent += 1
        self.published += sent
        return sent

    def run(self, stop: threading.Event) -> None:
        while not stop.wait(min(self.interval / 4, 1.0)):
            self.tick()


class LivenessMonitor:
    """Subscribes to heartbeats and flags components silent for > factor * interval."""

    def __init__(self, client, interval: float = 30.0, factor: float = 3.0):
        self.client = client
        self.interval = interval
        self.factor = factor
        self.last_seen: dict[str, float] = {}

    def subscribe(self) -> SubscriptionHandle:
        sub_id = self.client.sub('//alert[kind="Heartbeat"]')
        return SubscriptionHandle("HB", (sub_id,))

    def expect(self, analyzerid: str, since: float) -> None:
        self.last_seen.setdefault(analyzerid, since)

    def handle_alert(self, hb: Alert) -> None:
        if hb.kind is Kind.HEARTBEAT:
            stamp = hb.timestamps.create.epoch_float()
            current = self.last_seen.get(hb.analyzer.analyzerid)
            if current is None or stamp > current:
                self.last_seen[hb.analyzer.analyzerid] = stamp

    def process(self, rn: ReceivedNotification) -> None:
        self.handle_alert(parse(rn.body))

    def silent(self, now: float) -> list[str]:
        cutoff = self.factor * self.interval
        return sorted(aid for aid, seen in self.last_seen.items() if now - seen > cutoff)


# ---------------------------------------------------------------------------
# Event loop

class ManagerLoop(threading.Thread):
    """Single-threaded notify loop for one manager client.

    Polls the client, dispatches notifications to ``on_notification``, and
    calls ``on_idle`` once whenever the stream has been quiet for
    ``idle_after`` seconds (used to flush aggregation windows at end of
    stream).
    """

    def __init__(self, client, on_notification: Callable[[ReceivedNotification], None],
                 on_idle: Optional[Callable[[], None]] = None, idle_after: float = 0.5,
                 name: str = "manager"):
        super().__init__(name=f"loop-{name}", daemon=True)
        self.client = client
        self.on_notification = on_notification
        self.on_idle = on_idle
        self.idle_after = idle_after
        self._stop_event = threading.Event()
        self.handled = 0
        self.errors: list[Exception] = []

    def stop(self, timeout: float = 5.0) -> None:
        self._stop_event.set()
        self.join(timeout)

    def run(self) -> None:
        last_activity = time.monotonic()
        idle_fired = False
        while not self._stop_event.is_set():
            try:
                rn = self.client.poll(timeout=0.05)
            except Exception:
                return  # session ended
            if rn is not None:
                try:
                    self.on_notification(rn)
                    self.handled += 1
                except Exception as exc:  # keep the loop alive; surface in .errors
                    self.errors.append(exc)
                last_activity = time.monotonic()
                idle_fired = False
                continue
            if (self.on_idle is not None and not idle_fired
                    and time.monotonic() - last_activity >= self.idle_after):
                try:
                    self.on_idle()
                except Exception as exc:
                    self.errors.append(exc)
                idle_fired = True
