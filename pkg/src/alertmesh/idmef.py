"""IDMEF-style alert model and its canonical XML wire form.

Alerts are immutable values.  ``serialize`` emits a byte-deterministic XML
document (fixed element order, attributes inserted in a fixed order), so
equal alerts always produce identical bytes and golden-file comparisons are
meaningful.  ``parse`` is the inverse; unknown alert sub-elements such as
ToolAlert/OverflowAlert are preserved verbatim as opaque additional data
instead of being rejected.
"""

from __future__ import annotations

import re
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence


class AlertError(Exception):
    """Base class for alert model errors."""


class InvalidAlert(AlertError):
    """An alert violates a model invariant."""


class CycleError(AlertError):
    """A forwarding component already appears in the analyzer chain."""


class ParseError(AlertError):
    """Input is not a well-formed document."""

    def __init__(self, position: tuple[int, int], reason: str):
        super().__init__(f"parse error at line {position[0]}, column {position[1]}: {reason}")
        self.position = position
        self.reason = reason


class SchemaError(AlertError):
    """Well-formed document that does not encode a valid alert."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"schema error at {path}: {reason}")
        self.path = path
        self.reason = reason


class Kind(str, Enum):
    HEARTBEAT = "Heartbeat"
    LOCAL = "Local"
    EXTERNAL = "External"
    GLOBAL = "Global"
    CORRELATED = "Correlated"
    ASSESSMENT = "Assessment"


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class Spoofed(str, Enum):
    """Tri-state flag used for source spoofing and target decoys."""

    UNKNOWN = "unknown"
    YES = "yes"
    NO = "no"


# Characters that cannot survive an XML round trip: \r and \t are normalized
# away inside attribute values, raw control characters are rejected outright.
_BAD_TEXT = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\r]")
_BAD_ATTR = re.compile(r"[\x00-\x1f]")


def _check_text(value: str, what: str) -> None:
    if _BAD_TEXT.search(value):
        raise InvalidAlert(f"{what} contains characters that do not survive serialization")


def _check_attr(value: str, what: str) -> None:
    if _BAD_ATTR.search(value):
        raise InvalidAlert(f"{what} contains control characters")


@dataclass(frozen=True)
class Instant:
    """A point in time: epoch seconds, microseconds and local GMT offset (minutes)."""

    seconds: int
    useconds: int = 0
    gmt_offset_min: int = 0

    def __post_init__(self):
        if not 0 <= self.useconds < 1_000_000:
            raise InvalidAlert(f"useconds out of range: {self.useconds}")

    def key(self) -> tuple[int, int]:
        return (self.seconds, self.useconds)

    def epoch_micros(self) -> int:
        return self.seconds * 1_000_000 + self.useconds

    def epoch_float(self) -> float:
        return self.seconds + self.useconds / 1e6

    @classmethod
    def from_epoch(cls, ts: float, gmt_offset_min: int = 0) -> "Instant":
        micros = round(ts * 1e6)
        return cls(micros // 1_000_000, micros % 1_000_000, gmt_offset_min)

    @classmethod
    def now(cls) -> "Instant":
        offset = time.localtime().tm_gmtoff // 60
        return cls.from_epoch(time.time(), offset)


@dataclass(frozen=True)
class NodeInfo:
    name: str = ""
    address: str = ""

    def __post_init__(self):
        _check_attr(self.name, "node name")
        _check_attr(self.address, "node address")


@dataclass(frozen=True)
class ProcessInfo:
    name: str = ""
    pid: Optional[int] = None

    def __post_init__(self):
        _check_attr(self.name, "process name")


@dataclass(frozen=True)
class ServiceInfo:
    port: int
    protocol: str = ""

    def __post_init__(self):
        if not 0 <= self.port <= 65535:
            raise InvalidAlert(f"service port out of range: {self.port}")
        _check_attr(self.protocol, "service protocol")


@dataclass(frozen=True)
class Analyzer:
    """Identity of the component a message originates from.

    ``previous`` holds the analyzer that produced the message before it was
    forwarded, forming a finite, acyclic chain that records the full
    forwarding path.
    """

    analyzerid: str
    name: str = ""
    manufacturer: str = ""
    model: str = ""
    version: str = ""
    category: str = ""  # serialized as the "class" attribute
    ostype: str = ""
    osversion: str = ""
    node: Optional[NodeInfo] = None
    process: Optional[ProcessInfo] = None
    previous: Optional["Analyzer"] = None

    def __post_init__(self):
        if not self.analyzerid:
            raise InvalidAlert("analyzerid must be non-empty")
        for f in (self.analyzerid, self.name, self.manufacturer, self.model,
                  self.version, self.category, self.ostype, self.osversion):
            _check_attr(f, "analyzer attribute")
        seen = set()
        for aid in self.chain_ids():
            if aid in seen:
                raise InvalidAlert(f"analyzer chain repeats id {aid!r}")
            seen.add(aid)

    def chain_ids(self) -> list[str]:
        ids = []
        node: Optional[Analyzer] = self
        while node is not None:
            ids.append(node.analyzerid)
            node = node.previous
        return ids


@dataclass(frozen=True)
class Timestamps:
    create: Instant
    detect: Optional[Instant] = None
    analyzer: Optional[Instant] = None

    def __post_init__(self):
        if self.detect is not None and self.detect.key() > self.create.key():
            raise InvalidAlert("detect time is later than create time")


@dataclass(frozen=True)
class Endpoint:
    """Origin or destination of the activity behind an alert."""

    ident: str
    interface: str = ""
    node: Optional[NodeInfo] = None
    user: str = ""
    process: Optional[ProcessInfo] = None
    service: Optional[ServiceInfo] = None
    spoofed: Spoofed = Spoofed.UNKNOWN
    files: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "files", tuple(self.files))
        if not self.ident:
            raise InvalidAlert("endpoint ident must be non-empty")
        _check_attr(self.ident, "endpoint ident")
        _check_attr(self.interface, "endpoint interface")
        _check_attr(self.user, "endpoint user")
        for path in self.files:
            if not path:
                raise InvalidAlert("endpoint file path must be non-empty")
            _check_text(path, "endpoint file path")


@dataclass(frozen=True)
class Reference:
    origin: str
    url: str

    def __post_init__(self):
        _check_attr(self.origin, "reference origin")
        _check_attr(self.url, "reference url")


@dataclass(frozen=True)
class Classification:
    name: str
    references: tuple[Reference, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "references", tuple(self.references))
        if not self.name:
            raise InvalidAlert("classification name must be non-empty")
        _check_attr(self.name, "classification name")


@dataclass(frozen=True)
class Impact:
    severity: Severity
    description: str = ""

    def __post_init__(self):
        _check_text(self.description, "impact description")


@dataclass(frozen=True)
class Assessment:
    impact: Optional[Impact] = None
    actions: tuple[str, ...] = ()
    confidence: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        for action in self.actions:
            if not action:
                raise InvalidAlert("assessment action must be non-empty")
            _check_text(action, "assessment action")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise InvalidAlert(f"confidence out of [0,1]: {self.confidence}")


@dataclass(frozen=True)
class CorrelationInfo:
    """Names the correlation a message belongs to and the messages it ties together."""

    name: str
    alert_idents: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "alert_idents", tuple(self.alert_idents))
        _check_attr(self.name, "correlation name")
        for ident in self.alert_idents:
            if not ident:
                raise InvalidAlert("correlated alert ident must be non-empty")
            _check_text(ident, "correlated alert ident")


@dataclass(frozen=True)
class AdditionalData:
    meaning: str
    value: str

    def __post_init__(self):
        _check_attr(self.meaning, "additional-data meaning")
        _check_text(self.value, "additional-data value")


@dataclass(frozen=True)
class Alert:
    message_id: str
    kind: Kind
    analyzer: Analyzer
    timestamps: Timestamps
    sources: tuple[Endpoint, ...] = ()
    targets: tuple[Endpoint, ...] = ()
    classification: Optional[Classification] = None
    assessment: Optional[Assessment] = None
    correlation: Optional[CorrelationInfo] = None
    additional: tuple[AdditionalData, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "additional", tuple(self.additional))


def validate_alert(alert: Alert) -> Optional[str]:
    """Return a reason string if the alert violates a per-kind invariant, else None."""
    if not alert.message_id:
        return "message_id must be non-empty"
    if _BAD_ATTR.search(alert.message_id):
        return "message_id contains control characters"
    if alert.kind is Kind.HEARTBEAT:
        if alert.sources or alert.targets:
            return "heartbeats carry no sources or targets"
        if alert.classification is not None:
            return "heartbeats carry no classification"
    else:
        if alert.classification is None:
            return f"{alert.kind.value} alert requires a classification"
    if alert.kind is Kind.CORRELATED:
        if alert.correlation is None or len(alert.correlation.alert_idents) < 2:
            return "correlated alert requires correlation info referencing at least 2 messages"
    if alert.kind is Kind.ASSESSMENT:
        if alert.assessment is None or not alert.assessment.actions:
            return "assessment alert requires an assessment with at least 1 action"
    for src in alert.sources:
        if src.files:
            return "file lists are only valid on targets"
    return None


_id_lock = threading.Lock()
_id_counters: dict[str, int] = {}


def _next_message_id(analyzerid: str, create: Instant) -> str:
    with _id_lock:
        n = _id_counters.get(analyzerid, 0)
        _id_counters[analyzerid] = n + 1
    return f"{analyzerid}-{create.epoch_micros()}-{n}"


def build_alert(
    kind: Kind,
    analyzer: Analyzer,
    timestamps: Timestamps,
    sources: Sequence[Endpoint] = (),
    targets: Sequence[Endpoint] = (),
    classification: Optional[Classification] = None,
    *,
    assessment: Optional[Assessment] = None,
    correlation: Optional[CorrelationInfo] = None,
    additional: Sequence[AdditionalData] = (),
    message_id: Optional[str] = None,
) -> Alert:
    """Build a validated alert; a fresh message id is minted unless one is given.

    Generated ids are ``<analyzerid>-<create time in epoch microseconds>-<counter>``
    with a per-analyzer counter, so they are unique without coordination and
    sort in creation order per analyzer.
    """
    if message_id is None:
        message_id = _next_message_id(analyzer.analyzerid, timestamps.create)
    alert = Alert(
        message_id=message_id,
        kind=kind,
        analyzer=analyzer,
        timestamps=timestamps,
        sources=tuple(sources),
        targets=tuple(targets),
        classification=classification,
        assessment=assessment,
        correlation=correlation,
        additional=tuple(additional),
    )
    reason = validate_alert(alert)
    if reason:
        raise InvalidAlert(reason)
    return alert


def forward_rewrap(alert: Alert, forwarder: Analyzer, analyzer_time: Optional[Instant] = None) -> Alert:
    """Re-wrap a forwarded alert under the forwarding component's identity.

    The forwarder becomes the alert's analyzer and the old analyzer chain is
    attached as its ``previous`` reference, so the forwarding path stays
    trackable.  The message id and all payload fields are untouched; the
    analyzer timestamp is set to the forwarder's clock.
    """
    if forwarder.analyzerid in alert.analyzer.chain_ids():
        raise CycleError(f"analyzer {forwarder.analyzerid!r} already appears in the chain")
    new_analyzer = replace(forwarder, previous=alert.analyzer)
    ts = replace(alert.timestamps, analyzer=analyzer_time or Instant.now())
    return replace(alert, analyzer=new_analyzer, timestamps=ts)


# ---------------------------------------------------------------------------
# Header projection

# Closed vocabulary of header keys (see docs/header-keys.md).  Filters may
# only name these keys or a wildcard prefix of them.
HEADER_KEYS = (
    "kind",
    "message_id",
    "analyzer.analyzerid",
    "create_time",
    "classification.name",
    "source.node.address",
    "source.service.port",
    "target.node.address",
    "target.service.port",
)

# Keys whose values are rendered as unsigned decimal integers.
NUMERIC_HEADER_KEYS = frozenset({
    "create_time",
    "source.service.port",
    "target.service.port",
})


@dataclass(frozen=True)
class Header:
    """Flat, filterable projection of an alert: an ordered list of key/value pairs.

    Keys may repeat (one entry per source/target), so lookups return tuples.
    """

    pairs: tuple[tuple[str, str], ...]
    _by_key: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        by_key: dict[str, list[str]] = {}
        for k, v in self.pairs:
            by_key.setdefault(k, []).append(v)
        object.__setattr__(self, "_by_key", {k: tuple(v) for k, v in by_key.items()})

    def values(self, key: str) -> tuple[str, ...]:
        return self._by_key.get(key, ())

    def first(self, key: str) -> Optional[str]:
        vals = self._by_key.get(key)
        return vals[0] if vals else None

    def keys(self) -> tuple[str, ...]:
        return tuple(self._by_key)

    def __hash__(self):
        return hash(self.pairs)


def project_header(alert: Alert) -> Header:
    """Deterministically project the filterable header of an alert.

    Addresses keep their stored (dotted-decimal) form; times are decimal
    epoch seconds; ports are decimal integers.
    """
    pairs: list[tuple[str, str]] = [
        ("kind", alert.kind.value),
        ("message_id", alert.message_id),
        ("analyzer.analyzerid", alert.analyzer.analyzerid),
        ("create_time", str(alert.timestamps.create.seconds)),
    ]
    if alert.classification is not None:
        pairs.append(("classification.name", alert.classification.name))
    for prefix, endpoints in (("source", alert.sources), ("target", alert.targets)):
        for ep in endpoints:
            if ep.node is not None and ep.node.address:
                pairs.append((f"{prefix}.node.address", ep.node.address))
            if ep.service is not None:
                pairs.append((f"{prefix}.service.port", str(ep.service.port)))
    return Header(tuple(pairs))


# ---------------------------------------------------------------------------
# XML serialization

_TIME_TAGS = {"CreateTime", "DetectTime", "AnalyzerTime"}


def _set_attrs(el: ET.Element, attrs: Sequence[tuple[str, str]]) -> None:
    for name, value in attrs:
        if value:
            el.set(name, value)


def _instant_el(tag: str, instant: Instant) -> ET.Element:
    el = ET.Element(tag)
    el.set("seconds", str(instant.seconds))
    el.set("useconds", str(instant.useconds))
    el.set("gmtoffset", str(instant.gmt_offset_min))
    return el


def _node_el(node: NodeInfo) -> ET.Element:
    el = ET.Element("Node")
    _set_attrs(el, [("name", node.name), ("address", node.address)])
    return el


def _process_el(proc: ProcessInfo) -> ET.Element:
    el = ET.Element("Process")
    _set_attrs(el, [("name", proc.name)])
    if proc.pid is not None:
        el.set("pid", str(proc.pid))
    return el


def _analyzer_el(an: Analyzer) -> ET.Element:
    el = ET.Element("Analyzer")
    el.set("analyzerid", an.analyzerid)
    _set_attrs(el, [
        ("name", an.name), ("manufacturer", an.manufacturer), ("model", an.model),
        ("version", an.version), ("class", an.category),
        ("ostype", an.ostype), ("osversion", an.osversion),
    ])
    if an.node is not None:
        el.append(_node_el(an.node))
    if an.process is not None:
        el.append(_process_el(an.process))
    if an.previous is not None:
        el.append(_analyzer_el(an.previous))
    return el


def _endpoint_el(tag: str, ep: Endpoint) -> ET.Element:
    el = ET.Element(tag)
    el.set("ident", ep.ident)
    _set_attrs(el, [("interface", ep.interface)])
    el.set("spoofed" if tag == "Source" else "decoy", ep.spoofed.value)
    if ep.node is not None:
        el.append(_node_el(ep.node))
    if ep.user:
        user = ET.Element("User")
        user.set("name", ep.user)
        el.append(user)
    if ep.process is not None:
        el.append(_process_el(ep.process))
    if ep.service is not None:
        svc = ET.Element("Service")
        svc.set("port", str(ep.service.port))
        _set_attrs(svc, [("protocol", ep.service.protocol)])
        el.append(svc)
    for path in ep.files:
        f = ET.Element("File")
        f.text = path
        el.append(f)
    return el


def _alert_element(alert: Alert) -> ET.Element:
    if alert.kind is Kind.HEARTBEAT:
        el = ET.Element("Heartbeat")
    else:
        el = ET.Element("Alert")
        el.set("kind", alert.kind.value)
    el.set("messageid", alert.message_id)
    el.append(_analyzer_el(alert.analyzer))
    el.append(_instant_el("CreateTime", alert.timestamps.create))
    if alert.timestamps.detect is not None:
        el.append(_instant_el("DetectTime", alert.timestamps.detect))
    if alert.timestamps.analyzer is not None:
        el.append(_instant_el("AnalyzerTime", alert.timestamps.analyzer))
    for src in alert.sources:
        el.append(_endpoint_el("Source", src))
    for tgt in alert.targets:
        el.append(_endpoint_el("Target", tgt))
    if alert.classification is not None:
        cls = ET.Element("Classification")
        cls.set("name", alert.classification.name)
        for ref in alert.classification.references:
            r = ET.Element("Reference")
            r.set("origin", ref.origin)
            r.set("url", ref.url)
            cls.append(r)
        el.append(cls)
    if alert.assessment is not None:
        ass = ET.Element("Assessment")
        if alert.assessment.impact is not None:
            imp = ET.Element("Impact")
            imp.set("severity", alert.assessment.impact.severity.value)
            imp.text = alert.assessment.impact.description or None
            ass.append(imp)
        for action in alert.assessment.actions:
            act = ET.Element("Action")
            act.text = action
            ass.append(act)
        if alert.assessment.confidence is not None:
            conf = ET.Element("Confidence")
            conf.set("rating", repr(alert.assessment.confidence))
            ass.append(conf)
        el.append(ass)
    if alert.correlation is not None:
        cor = ET.Element("CorrelationAlert")
        name = ET.Element("name")
        name.text = alert.correlation.name or None
        cor.append(name)
        for ident in alert.correlation.alert_idents:
            ai = ET.Element("alertident")
            ai.text = ident
            cor.append(ai)
        el.append(cor)
    for extra in alert.additional:
        ad = ET.Element("AdditionalData")
        ad.set("meaning", extra.meaning)
        ad.text = extra.value or None
        el.append(ad)
    return el


def serialize(alert: Alert) -> bytes:
    """Serialize an alert to its canonical XML document (UTF-8 bytes)."""
    reason = validate_alert(alert)
    if reason:
        raise InvalidAlert(reason)
    root = ET.Element("IDMEF-Message")
    root.set("version", "1.0")
    root.append(_alert_element(alert))
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


# ---------------------------------------------------------------------------
# Parsing

def _attr(el: ET.Element, name: str, path: str) -> str:
    value = el.get(name)
    if value is None:
        raise SchemaError(path, f"missing attribute {name!r}")
    return value


def _int_attr(el: ET.Element, name: str, path: str) -> int:
    raw = _attr(el, name, path)
    try:
        return int(raw)
    except ValueError:
        raise SchemaError(path, f"attribute {name!r} is not an integer: {raw!r}") from None


def _parse_instant(el: ET.Element, path: str) -> Instant:
    try:
        return Instant(
            seconds=_int_attr(el, "seconds", path),
            useconds=_int_attr(el, "useconds", path),
            gmt_offset_min=_int_attr(el, "gmtoffset", path),
        )
    except InvalidAlert as exc:
        raise SchemaError(path, str(exc)) from None


def _parse_node(el: ET.Element) -> NodeInfo:
    return NodeInfo(name=el.get("name", ""), address=el.get("address", ""))


def _parse_process(el: ET.Element) -> ProcessInfo:
    pid = el.get("pid")
    return ProcessInfo(name=el.get("name", ""), pid=int(pid) if pid is not None else None)


def _parse_analyzer(el: ET.Element, path: str) -> Analyzer:
    node = process = previous = None
    for child in el:
        if child.tag == "Node":
            node = _parse_node(child)
        elif child.tag == "Process":
            process = _parse_process(child)
        elif child.tag == "Analyzer":
            previous = _parse_analyzer(child, path + "/Analyzer")
        else:
            raise SchemaError(path, f"unexpected element {child.tag!r}")
    try:
        return Analyzer(
            analyzerid=_attr(el, "analyzerid", path),
            name=el.get("name", ""),
            manufacturer=el.get("manufacturer", ""),
            model=el.get("model", ""),
            version=el.get("version", ""),
            category=el.get("class", ""),
            ostype=el.get("ostype", ""),
            osversion=el.get("osversion", ""),
            node=node,
            process=process,
            previous=previous,
        )
    except InvalidAlert as exc:
        raise SchemaError(path, str(exc)) from None


def _parse_endpoint(el: ET.Element, path: str) -> Endpoint:
    node = process = service = None
    user = ""
    files: list[str] = []
    for child in el:
        if child.tag == "Node":
            node = _parse_node(child)
        elif child.tag == "User":
            user = child.get("name", "")
        elif child.tag == "Process":
            process = _parse_process(child)
        elif child.tag == "Service":
            service = ServiceInfo(port=_int_attr(child, "port", path + "/Service"),
                                  protocol=child.get("protocol", ""))
        elif child.tag == "File":
            files.append(child.text or "")
        else:
            raise SchemaError(path, f"unexpected element {child.tag!r}")
    flag = el.get("spoofed" if el.tag == "Source" else "decoy", "unknown")
    try:
        spoofed = Spoofed(flag)
    except ValueError:
        raise SchemaError(path, f"invalid flag value {flag!r}") from None
    try:
        return Endpoint(
            ident=_attr(el, "ident", path),
            interface=el.get("interface", ""),
            node=node,
            user=user,
            process=process,
            service=service,
            spoofed=spoofed,
            files=tuple(files),
        )
    except InvalidAlert as exc:
        raise SchemaError(path, str(exc)) from None


def _parse_assessment(el: ET.Element, path: str) -> Assessment:
    impact = None
    confidence = None
    actions: list[str] = []
    for child in el:
        if child.tag == "Impact":
            try:
                severity = Severity(_attr(child, "severity", path + "/Impact"))
            except ValueError:
                raise SchemaError(path + "/Impact", "invalid severity") from None
            impact = Impact(severity=severity, description=child.text or "")
        elif child.tag == "Action":
            actions.append(child.text or "")
        elif child.tag == "Confidence":
            try:
                confidence = float(_attr(child, "rating", path + "/Confidence"))
            except ValueError:
                raise SchemaError(path + "/Confidence", "rating is not a number") from None
        else:
            raise SchemaError(path, f"unexpected element {child.tag!r}")
    try:
        return Assessment(impact=impact, actions=tuple(actions), confidence=confidence)
    except InvalidAlert as exc:
        raise SchemaError(path, str(exc)) from None


def _parse_correlation(el: ET.Element, path: str) -> CorrelationInfo:
    name = ""
    idents: list[str] = []
    for child in el:
        if child.tag == "name":
            name = child.text or ""
        elif child.tag == "alertident":
            idents.append(child.text or "")
        else:
            raise SchemaError(path, f"unexpected element {child.tag!r}")
    try:
        return CorrelationInfo(name=name, alert_idents=tuple(idents))
    except InvalidAlert as exc:
        raise SchemaError(path, str(exc)) from None


_KNOWN_ALERT_CHILDREN = {
    "Analyzer", "CreateTime", "DetectTime", "AnalyzerTime",
    "Source", "Target", "Classification", "Assessment",
    "CorrelationAlert", "AdditionalData",
}


def parse(data: bytes) -> Alert:
    """Parse a serialized alert document back into an Alert value.

    Raises ParseError for malformed markup and SchemaError for well-formed
    markup that does not fit the model (for example a missing CreateTime).
    Unknown alert sub-elements are kept verbatim as additional data entries
    with meaning ``opaque:<element-name>``.
    """
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise ParseError(exc.position or (0, 0), str(exc)) from None
    if root.tag != "IDMEF-Message":
        raise SchemaError("/", f"root element must be IDMEF-Message, got {root.tag!r}")
    children = list(root)
    if len(children) != 1:
        raise SchemaError("/IDMEF-Message", "expected exactly one Alert or Heartbeat element")
    el = children[0]
    if el.tag == "Heartbeat":
        kind = Kind.HEARTBEAT
    elif el.tag == "Alert":
        raw_kind = _attr(el, "kind", "/IDMEF-Message/Alert")
        try:
            kind = Kind(raw_kind)
        except ValueError:
            raise SchemaError("/IDMEF-Message/Alert", f"unknown kind {raw_kind!r}") from None
    else:
        raise SchemaError("/IDMEF-Message", f"unexpected element {el.tag!r}")

    path = f"/IDMEF-Message/{el.tag}"
    message_id = _attr(el, "messageid", path)
    analyzer = None
    create = detect = analyzer_time = None
    sources: list[Endpoint] = []
    targets: list[Endpoint] = []
    classification = assessment = correlation = None
    additional: list[AdditionalData] = []

    def _single(existing, what):
        if existing is not None:
            raise SchemaError(path, f"duplicate {what} element")

    for child in el:
        tag = child.tag
        if tag == "Analyzer":
            _single(analyzer, "Analyzer")
            analyzer = _parse_analyzer(child, path + "/Analyzer")
        elif tag in _TIME_TAGS:
            instant = _parse_instant(child, f"{path}/{tag}")
            if tag == "CreateTime":
                _single(create, "CreateTime")
                create = instant
            elif tag == "DetectTime":
                _single(detect, "DetectTime")
                detect = instant
            else:
                _single(analyzer_time, "AnalyzerTime")
                analyzer_time = instant
        elif tag == "Source":
            sources.append(_parse_endpoint(child, path + "/Source"))
        elif tag == "Target":
            targets.append(_parse_endpoint(child, path + "/Target"))
        elif tag == "Classification":
            _single(classification, "Classification")
            refs = []
            for ref in child:
                if ref.tag != "Reference":
                    raise SchemaError(path + "/Classification", f"unexpected element {ref.tag!r}")
                refs.append(Reference(origin=ref.get("origin", ""), url=ref.get("url", "")))
            try:
                classification = Classification(name=_attr(child, "name", path + "/Classification"),
                                                references=tuple(refs))
            except InvalidAlert as exc:
                raise SchemaError(path + "/Classification", str(exc)) from None
        elif tag == "Assessment":
            _single(assessment, "Assessment")
            assessment = _parse_assessment(child, path + "/Assessment")
        elif tag == "CorrelationAlert":
            _single(correlation, "CorrelationAlert")
            correlation = _parse_correlation(child, path + "/CorrelationAlert")
        elif tag == "AdditionalData":
            additional.append(AdditionalData(meaning=child.get("meaning", ""), value=child.text or ""))
        else:
            # Unknown payload (ToolAlert, OverflowAlert, extensions): keep it verbatim.
            raw = ET.tostring(child, encoding="unicode")
            additional.append(AdditionalData(meaning=f"opaque:{tag}", value=raw.strip()))

    if analyzer is None:
        raise SchemaError(path, "missing Analyzer element")
    if create is None:
        raise SchemaError(path, "missing CreateTime element")
    try:
        timestamps = Timestamps(create=create, detect=detect, analyzer=analyzer_time)
    except InvalidAlert as exc:
        raise SchemaError(path, str(exc)) from None
    alert = Alert(
        message_id=message_id,
        kind=kind,
        analyzer=analyzer,
        timestamps=timestamps,
        sources=tuple(sources),
        targets=tuple(targets),
        classification=classification,
        assessment=assessment,
        correlation=correlation,
        additional=tuple(additional),
    )
    reason = validate_alert(alert)
    if reason:
        raise SchemaError(path, reason)
    return alert


# ---------------------------------------------------------------------------
# Corpus files: newline-delimited length-prefixed records.

def write_corpus(path: str | Path, alerts: Iterable[Alert]) -> int:
    """Write alerts to a corpus file; returns the number of records written."""
    count = 0
    with open(path, "wb") as fh:
        for alert in alerts:
            doc = serialize(alert)
            fh.write(b"%d\n" % len(doc))
            fh.write(doc)
            fh.write(b"\n")
            count += 1
    return count


def iter_corpus_records(path: str | Path) -> Iterator[tuple[Alert, bytes]]:
    """Yield (alert, document bytes) pairs from a corpus file."""
    with open(path, "rb") as fh:
        while True:
            line = fh.readline()
            if not line:
                return
            try:
                length = int(line.strip())
            except ValueError:
                raise ParseError((0, 0), f"bad record length line: {line!r}") from None
            doc = fh.read(length)
            if len(doc) != length:
                raise ParseError((0, 0), "truncated corpus record")
            if fh.read(1) != b"\n":
                raise ParseError((0, 0), "corpus record missing trailing newline")
            yield parse(doc), doc


def iter_corpus(path: str | Path) -> Iterator[Alert]:
    for alert, _ in iter_corpus_records(path):
        yield alert
