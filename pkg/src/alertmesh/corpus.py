"""Synthetic alert corpus generation and the post-hoc scenario scan oracle.

A corpus is a weighted background mix of classifications plus embedded
multi-step scenario instances (ordered, constraint-satisfying step sequences
interleaved at jittered offsets).  Generation is a pure function of the spec:
the same spec always yields byte-identical corpus files.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .config import ConfigError, iter_directives
from .idmef import (
    AdditionalData,
    Alert,
    Analyzer,
    Classification,
    Endpoint,
    Instant,
    Kind,
    NodeInfo,
    ServiceInfo,
    Timestamps,
    build_alert,
)
from .managers import Constraint, ScenarioRule, parse_rules


class SpecError(Exception):
    """A corpus spec is inconsistent or impossible to satisfy."""


# 38 attack classification names for the default background mix.
DEFAULT_CLASSIFICATIONS = (
    "ipsweep", "portsweep", "nmap", "satan", "mscan", "saint", "ssh-bruteforce",
    "back", "land", "neptune", "pod", "smurf", "teardrop", "apache2", "mailbomb",
    "processtable", "udpstorm", "dict-guess", "ftp-write", "imap", "multihop",
    "phf", "spy", "warezclient", "warezmaster", "sendmail", "named", "snmpget",
    "snmpguess", "worm", "xlock", "xsnoop", "buffer-overflow", "loadmodule",
    "perl", "rootkit", "httptunnel", "sqlattack",
)

DEFAULT_MIX = tuple((name, 1.0) for name in DEFAULT_CLASSIFICATIONS)

_TARGET_PORTS = (22, 23, 25, 53, 80, 443, 3306, 8080)


@dataclass(frozen=True)
class EmbeddedScenario:
    rule: ScenarioRule
    count: int
    jitter: float = 2.0
    perturb_final_target: bool = False  # break the last step's target (negative controls)


@dataclass(frozen=True)
class CorpusSpec:
    seed: int = 0
    total: int = 1000                     # background alerts; scenario steps add to this
    mix: tuple[tuple[str, float], ...] = DEFAULT_MIX
    scenarios: tuple[EmbeddedScenario, ...] = ()
    source_pool: int = 50
    target_pool: int = 20
    time_spread: float = 600.0
    analyzers: int = 1
    base_time: int = 1_200_000_000

    def __post_init__(self):
        object.__setattr__(self, "mix", tuple(self.mix))
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        if self.total < 0:
            raise SpecError("total must be >= 0")
        if not self.mix:
            raise SpecError("classification mix is empty")
        for name, weight in self.mix:
            if not name or weight <= 0:
                raise SpecError(f"bad mix entry ({name!r}, {weight})")
        if self.source_pool < 1 or self.target_pool < 1:
            raise SpecError("address pools must hold at least one address")
        if self.time_spread <= 0:
            raise SpecError("time spread must be positive")
        if self.analyzers < 1:
            raise SpecError("need at least one analyzer identity")
        for emb in self.scenarios:
            if emb.count < 0:
                raise SpecError("embedded scenario count must be >= 0")
            if emb.jitter < 0:
                raise SpecError("jitter must be >= 0")
            span = (len(emb.rule.steps) - 1) * (1.0 + emb.jitter)
            if span >= self.time_spread:
                raise SpecError(
                    f"scenario {emb.rule.name!r} steps do not fit inside the time spread")


def _pool_address(prefix: str, index: int) -> str:
    return f"{prefix}.{index // 250}.{index % 250 + 1}"


@dataclass
class _Proto:
    order: int
    detect: float
    create_delay: float
    analyzer_index: int
    classification: str
    sources: tuple[Endpoint, ...]
    targets: tuple[Endpoint, ...]
    additional: tuple[AdditionalData, ...] = ()


def _endpoint(ident: str, address: str, port: Optional[int]) -> Endpoint:
    service = ServiceInfo(port=port, protocol="tcp") if port is not None else None
    return Endpoint(ident=ident, node=NodeInfo(address=address), service=service)


def generate(spec: CorpusSpec) -> list[Alert]:
    """Generate the corpus alerts, ordered by detect time."""
    rng = random.Random(spec.seed)
    names = [name for name, _ in spec.mix]
    weights = [weight for _, weight in spec.mix]
    protos: list[_Proto] = []
    order = 0

    for _ in range(spec.total):
        classification = rng.choices(names, weights=weights, k=1)[0]
        detect = rng.uniform(0.0, spec.time_spread)
        src = _endpoint("src-0", _pool_address("10.1", rng.randrange(spec.source_pool)),
                        rng.randrange(1024, 65536))
        n_targets = 1 if rng.random() < 0.8 else 2
        targets = tuple(
            _endpoint(f"tgt-{i}", _pool_address("10.2", rng.randrange(spec.target_pool)),
                      rng.choice(_TARGET_PORTS))
            for i in range(n_targets)
        )
        protos.append(_Proto(order, detect, rng.uniform(0.05, 0.5),
                             rng.randrange(spec.analyzers), classification, (src,), targets))
        order += 1

    for emb in spec.scenarios:
        steps = emb.rule.steps
        span = (len(steps) - 1) * (1.0 + emb.jitter)
        # dedicated addresses per instance keep concurrent instances separable
        if emb.count <= spec.target_pool:
            target_idx = rng.sample(range(spec.target_pool), emb.count)
        else:
            target_idx = [rng.randrange(spec.target_pool) for _ in range(emb.count)]
        if emb.count <= spec.source_pool:
            source_idx = rng.sample(range(spec.source_pool), emb.count)
        else:
            source_idx = [rng.randrange(spec.source_pool) for _ in range(emb.count)]
        for k in range(emb.count):
            start = rng.uniform(0.0, spec.time_spread - span - 1e-6)
            target_addr = _pool_address("10.2", target_idx[k])
            source_addr = _pool_address("10.1", source_idx[k])
            t = start
            for step_index, step in enumerate(steps):
                final = step_index == len(steps) - 1
                addr = target_addr
                if final and emb.perturb_final_target:
                    addr = f"10.99.0.{k + 1}"
                tag = AdditionalData("embedded-scenario",
                                     f"{emb.rule.name}#{k}:{step_index}")
                protos.append(_Proto(
                    order, t, rng.uniform(0.05, 0.5), rng.randrange(spec.analyzers),
                    step.classification,
                    (_endpoint("src-0", source_addr, rng.randrange(1024, 65536)),),
                    (_endpoint("tgt-0", addr, rng.choice(_TARGET_PORTS)),),
                    (tag,),
                ))
                order += 1
                t += 1.0 + rng.uniform(0.0, emb.jitter)

    protos.sort(key=lambda p: (p.detect, p.order))
    analyzers = [
        Analyzer(analyzerid=f"an-{i + 1:02d}", name="synthetic-sensor",
                 manufacturer="alertmesh", model="replayer", version="1",
                 category="nids", node=NodeInfo(address=f"10.0.0.{i + 10}"))
        for i in range(spec.analyzers)
    ]
    counters = [0] * spec.analyzers
    alerts: list[Alert] = []
    for proto in protos:
        detect = Instant.from_epoch(spec.base_time + proto.detect)
        create = Instant.from_epoch(spec.base_time + proto.detect + proto.create_delay)
        analyzer = analyzers[proto.analyzer_index]
        counter = counters[proto.analyzer_index]
        counters[proto.analyzer_index] += 1
        alerts.append(build_alert(
            Kind.LOCAL,
            analyzer,
            Timestamps(create=create, detect=detect, analyzer=create),
            sources=proto.sources,
            targets=proto.targets,
            classification=Classification(proto.classification),
            additional=proto.additional,
            message_id=f"{analyzer.analyzerid}-{create.epoch_micros()}-{counter}",
        ))
    return alerts


# ---------------------------------------------------------------------------
# Spec files

def parse_corpus_spec(text: str) -> CorpusSpec:
    """Parse a corpus spec file.

    Plain directives: seed/total/spread/sources/targets/analyzers/base-time,
    ``classification <name> <weight>`` lines (omit for the default 38-name
    mix), scenario rule blocks (same syntax as rule files), and
    ``embed <scenario> <count> [jitter <s>] [perturb-final-target]`` lines.
    """
    plain: dict[str, str] = {}
    mix: list[tuple[str, float]] = []
    embeds: list[tuple[int, list[str]]] = []
    rule_lines: list[str] = []
    in_scenario = False
    for lineno, fields in iter_directives(text):
        kw = fields[0]
        if in_scenario:
            rule_lines.append(" ".join(fields))
            if kw == "end":
                in_scenario = False
            continue
        if kw == "scenario":
            in_scenario = True
            rule_lines.append(" ".join(fields))
        elif kw == "classification":
            if len(fields) != 3:
                raise SpecError(f"line {lineno}: expected: classification <name> <weight>")
            try:
                mix.append((fields[1], float(fields[2])))
            except ValueError:
                raise SpecError(f"line {lineno}: bad weight {fields[2]!r}") from None
        elif kw == "embed":
            embeds.append((lineno, fields))
        elif kw in ("seed", "total", "spread", "sources", "targets", "analyzers", "base-time"):
            if len(fields) != 2:
                raise SpecError(f"line {lineno}: expected: {kw} <value>")
            plain[kw] = fields[1]
        else:
            raise SpecError(f"line {lineno}: unknown directive {kw!r}")
    try:
        rules = {r.name: r for r in parse_rules("\n".join(rule_lines))}
    except ConfigError as exc:
        raise SpecError(f"bad scenario block: {exc}") from None

    scenarios = []
    for lineno, fields in embeds:
        if len(fields) < 3:
            raise SpecError(f"line {lineno}: expected: embed <scenario> <count> ...")
        name = fields[1]
        if name not in rules:
            raise SpecError(f"line {lineno}: embed references unknown scenario {name!r}")
        try:
            count = int(fields[2])
        except ValueError:
            raise SpecError(f"line {lineno}: bad count {fields[2]!r}") from None
        jitter = 2.0
        perturb = False
        rest = fields[3:]
        while rest:
            if rest[0] == "jitter" and len(rest) >= 2:
                try:
                    jitter = float(rest[1])
                except ValueError:
                    raise SpecError(f"line {lineno}: bad jitter {rest[1]!r}") from None
                rest = rest[2:]
            elif rest[0] == "perturb-final-target":
                perturb = True
                rest = rest[1:]
            else:
                raise SpecError(f"line {lineno}: unexpected token {rest[0]!r}")
        scenarios.append(EmbeddedScenario(rules[name], count, jitter, perturb))

    def _int(key, default):
        try:
            return int(plain[key]) if key in plain else default
        except ValueError:
            raise SpecError(f"bad integer for {key!r}: {plain[key]!r}") from None

    def _float(key, default):
        try:
            return float(plain[key]) if key in plain else default
        except ValueError:
            raise SpecError(f"bad number for {key!r}: {plain[key]!r}") from None

    try:
        return CorpusSpec(
            seed=_int("seed", 0),
            total=_int("total", 1000),
            mix=tuple(mix) if mix else DEFAULT_MIX,
            scenarios=tuple(scenarios),
            source_pool=_int("sources", 50),
            target_pool=_int("targets", 20),
            time_spread=_float("spread", 600.0),
            analyzers=_int("analyzers", 1),
            base_time=_int("base-time", 1_200_000_000),
        )
    except SpecError:
        raise
    except ConfigError as exc:
        raise SpecError(str(exc)) from None


def load_corpus_spec(path) -> CorpusSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_corpus_spec(fh.read())


# ---------------------------------------------------------------------------
# Post-hoc scenario scan (brute-force oracle, independent of the manager pipeline)

def _scan_time(alert: Alert) -> float:
    return (alert.timestamps.detect or alert.timestamps.create).epoch_float()


def _scan_addresses(endpoints) -> frozenset[str]:
    return frozenset(ep.node.address for ep in endpoints
                     if ep.node is not None and ep.node.address)


def scan_scenarios(alerts: Iterable[Alert], rule: ScenarioRule,
                   expiry: float = 50.0) -> list[list[str]]:
    """Walk a time-ordered alert stream with a naive scenario state machine.

    Returns one message-id sequence per completed scenario instance.  This is
    a straight-line re-implementation used to predict and verify pipeline
    output; it never touches brokers or managers.

    Over raw local alerts the prediction is exact only when scenario steps
    cannot co-cluster with background alerts (step classifications disjoint
    from the background mix, or disjoint addresses): aggregation represents a
    whole cluster by its earliest detect time, so folding a step into an
    unrelated cluster shifts its event time before correlation sees it.
    """
    ordered = sorted(alerts, key=lambda a: (_scan_time(a), a.message_id))
    partial: list[dict] = []
    completions: list[list[str]] = []
    for alert in ordered:
        if alert.classification is None:
            continue
        name = alert.classification.name
        now = _scan_time(alert)
        partial = [p for p in partial if now - p["last"] <= expiry]
        survivors = []
        for p in partial:
            step = rule.steps[p["index"]]
            if name == step.classification and _constraint_ok(p, step, alert):
                p["index"] += 1
                p["ids"].append(alert.message_id)
                p["last"] = now
                if p["index"] == len(rule.steps):
                    completions.append(p["ids"])
                    continue
            survivors.append(p)
        partial = survivors
        first = rule.steps[0]
        if name == first.classification:
            fresh = {"index": 0, "ids": [], "last": now, "src": None, "tgt": None}
            if _constraint_ok(fresh, first, alert):
                fresh["index"] = 1
                fresh["ids"] = [alert.message_id]
                partial.append(fresh)
    return completions


def _constraint_ok(p: dict, step, alert: Alert) -> bool:
    if step.constraint is Constraint.SAME_TARGET:
        addrs = _scan_addresses(alert.targets)
        if not addrs:
            return False
        merged = addrs if p["tgt"] is None else p["tgt"] & addrs
        if not merged:
            return False
        p["tgt"] = merged
    elif step.constraint is Constraint.SAME_SOURCE:
        addrs = _scan_addresses(alert.sources)
        if not addrs:
            return False
        merged = addrs if p["src"] is None else p["src"] & addrs
        if not merged:
            return False
        p["src"] = merged
    return True


def verify_assessment(assessment_alert: Alert, rule: ScenarioRule,
                      contributing: Sequence[Alert]) -> bool:
    """Check that an assessment's contributing alerts satisfy the rule.

    The contributing alerts (resolved from the assessment's correlation ids)
    must carry the rule's step classifications in order, with consistent
    endpoint bindings under each step's constraint.
    """
    if len(contributing) != len(rule.steps):
        return False
    state = {"index": 0, "ids": [], "last": 0.0, "src": None, "tgt": None}
    for alert, step in zip(contributing, rule.steps):
        if alert.classification is None:
            return False
        if alert.classification.name != step.classification:
            return False
        if not _constraint_ok(state, step, alert):
            return False
    times = [_scan_time(a) for a in contributing]
    return times == sorted(times)
