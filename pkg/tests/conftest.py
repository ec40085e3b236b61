"""Shared builders for tests: sample alerts, randomized alerts, free ports."""

from __future__ import annotations

import random
import socket

import pytest

from alertmesh.idmef import (
    AdditionalData,
    Alert,
    Analyzer,
    Assessment,
    Classification,
    CorrelationInfo,
    Endpoint,
    Impact,
    Instant,
    Kind,
    NodeInfo,
    ProcessInfo,
    Reference,
    ServiceInfo,
    Severity,
    Spoofed,
    Timestamps,
    build_alert,
)

BASE_TIME = 1_200_000_000


def make_analyzer(aid="an-1", **kw) -> Analyzer:
    defaults = dict(name="net-sensor", manufacturer="acme", model="ids",
                    version="2.1", category="nids", ostype="linux", osversion="6.1",
                    node=NodeInfo(name="sensor-host", address="10.0.0.2"))
    defaults.update(kw)
    return Analyzer(analyzerid=aid, **defaults)


def make_endpoint(ident="ep-1", address="10.0.0.5", port=None, **kw) -> Endpoint:
    service = ServiceInfo(port=port, protocol="tcp") if port is not None else None
    return Endpoint(ident=ident, node=NodeInfo(address=address), service=service, **kw)


def make_timestamps(offset=0) -> Timestamps:
    return Timestamps(create=Instant(BASE_TIME + offset, 250_000, 60),
                      detect=Instant(BASE_TIME + offset - 2, 500_000, 60))


def make_local_alert(classification="ssh-bruteforce", offset=0, analyzer=None,
                     sources=None, targets=None, message_id=None) -> Alert:
    return build_alert(
        Kind.LOCAL,
        analyzer or make_analyzer(),
        make_timestamps(offset),
        sources if sources is not None else [make_endpoint("src-1", "10.0.0.5")],
        targets if targets is not None else [make_endpoint("tgt-1", "10.0.0.9", port=22)],
        Classification(classification),
        message_id=message_id,
    )


def make_heartbeat(analyzer=None, offset=0) -> Alert:
    return build_alert(Kind.HEARTBEAT, analyzer or make_analyzer(),
                       Timestamps(create=Instant(BASE_TIME + offset)))


_CLASS_NAMES = ["ipsweep", "portsweep", "ssh-bruteforce", "smurf", "neptune",
                "back", "phf", "rootkit", "warezclient", "guess-passwd"]
_ACTIONS = ["block-source", "notify-admin", "rate-limit", "quarantine-host"]


def _random_text(rng: random.Random, n=8) -> str:
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz-0123456789") for _ in range(n))


def _random_instant(rng: random.Random) -> Instant:
    return Instant(BASE_TIME + rng.randrange(0, 100_000),
                   rng.randrange(0, 1_000_000),
                   rng.choice([-300, -60, 0, 60, 120]))


def _random_endpoint(rng: random.Random, target: bool) -> Endpoint:
    node = NodeInfo(name=_random_text(rng, 5) if rng.random() < 0.4 else "",
                    address=f"10.{rng.randrange(4)}.{rng.randrange(4)}.{rng.randrange(30)}"
                    if rng.random() < 0.9 else "")
    service = ServiceInfo(port=rng.randrange(0, 65536),
                          protocol=rng.choice(["tcp", "udp", ""])) if rng.random() < 0.7 else None
    files = tuple(f"/tmp/{_random_text(rng, 4)}" for _ in range(rng.randrange(0, 3))) if target else ()
    return Endpoint(
        ident=f"ep-{rng.randrange(10_000)}",
        interface=rng.choice(["", "eth0", "wlan1"]),
        node=node if (node.name or node.address) else None,
        user=rng.choice(["", "alice", "root"]),
        process=ProcessInfo(name="sshd", pid=rng.randrange(1, 65000)) if rng.random() < 0.3 else None,
        service=service,
        spoofed=rng.choice(list(Spoofed)),
        files=files,
    )


def random_alert(rng: random.Random) -> Alert:
    """A randomized valid alert exercising every optional field and kind."""
    kind = rng.choice(list(Kind))
    analyzer = make_analyzer(
        f"an-{rng.randrange(100)}",
        node=NodeInfo(address=f"10.9.0.{rng.randrange(50)}") if rng.random() < 0.7 else None,
        process=ProcessInfo(name="analyzerd", pid=rng.randrange(1, 9999)) if rng.random() < 0.4 else None,
    )
    if rng.random() < 0.3:
        analyzer = Analyzer(analyzerid=f"fw-{rng.randrange(100)}", name="forwarder",
                            previous=analyzer)
    create = _random_instant(rng)
    detect = Instant(create.seconds - rng.randrange(1, 30), rng.randrange(0, 1_000_000)) \
        if rng.random() < 0.8 else None
    ts = Timestamps(create=create, detect=detect,
                    analyzer=_random_instant(rng) if rng.random() < 0.4 else None)
    additional = tuple(
        AdditionalData(meaning=rng.choice(["note", "payload-hash", "opaque:ToolAlert"]),
                       value=_random_text(rng, 12))
        for _ in range(rng.randrange(0, 3))
    )
    if kind is Kind.HEARTBEAT:
        return build_alert(Kind.HEARTBEAT, analyzer, ts, additional=additional)
    sources = tuple(_random_endpoint(rng, target=False) for _ in range(rng.randrange(0, 3)))
    targets = tuple(_random_endpoint(rng, target=True) for _ in range(rng.randrange(0, 3)))
    classification = Classification(
        name=rng.choice(_CLASS_NAMES),
        references=tuple(Reference(origin="cve", url=f"https://cve.example/{_random_text(rng,6)}")
                         for _ in range(rng.randrange(0, 2))),
    )
    assessment = None
    if kind is Kind.ASSESSMENT or rng.random() < 0.2:
        assessment = Assessment(
            impact=Impact(rng.choice(list(Severity)), "suspicious activity")
            if rng.random() < 0.7 else None,
            actions=tuple(rng.sample(_ACTIONS, rng.randrange(1, 3))),
            confidence=rng.choice([None, 0.25, 0.5, 0.99]),
        )
    correlation = None
    if kind is Kind.CORRELATED or rng.random() < 0.2:
        correlation = CorrelationInfo(
            name=f"scenario-{_random_text(rng, 4)}",
            alert_idents=tuple(f"an-{rng.randrange(9)}-{rng.randrange(10**9)}-{i}"
                               for i in range(rng.randrange(2, 5))),
        )
    return build_alert(kind, analyzer, ts, sources, targets, classification,
                       assessment=assessment, correlation=correlation, additional=additional)


@pytest.fixture
def rng():
    return random.Random(0xA1E27)


def free_ports(n: int) -> list[int]:
    """Grab n distinct free TCP ports (best effort, fine for local tests)."""
    socks, ports = [], []
    for _ in range(n):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    for s in socks:
        s.close()
    return ports
