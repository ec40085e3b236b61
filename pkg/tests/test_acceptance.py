"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The throughput floor (criterion 1) is 150 msg/s measured on a full
colocated pipeline: one broker daemon process, one analyzer publisher, and
aggregation/correlation/policy managers, all on this host.
"""

from __future__ import annotations

import contextlib
import math
import random
import time
from collections import Counter

import pytest

from alertmesh import filters as flt
from alertmesh import oracle
from alertmesh.broker import SubscriptionTable
from alertmesh.client import BrokerClient
from alertmesh.corpus import CorpusSpec, EmbeddedScenario, generate, scan_scenarios
from alertmesh.idmef import Kind, parse, project_header, serialize, write_corpus
from alertmesh.replay import load_samples_csv, run_replay, summarize_samples

from .conftest import free_ports, make_local_alert, random_alert
from .test_filters import random_filter_text
from .test_managers import RULE
from .test_overlay import LINE, RING, build_overlay, settle_subscriptions, stop_all


@contextlib.contextmanager
def criterion(number: int, name: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {number} {name}: FAIL")
        raise
    print(f"\nACCEPTANCE {number} {name}: PASS")


# ---------------------------------------------------------------------------
# Criterion 1 fixture: the colocated 10k replay, shared with criteria 7 and 8.

@pytest.fixture(scope="module")
def colocated_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("colocated")
    spec = CorpusSpec(seed=1234, total=10_000, analyzers=1)
    alerts = generate(spec)
    corpus_path = tmp / "corpus.alerts"
    write_corpus(corpus_path, alerts)
    port = free_ports(1)[0]
    deploy = tmp / "deploy.txt"
    deploy.write_text(
        "mode flood\n"
        f"broker hub listen 127.0.0.1:{port}\n"
        "manager aggregation broker hub\n"
        "manager correlation broker hub\n"
        "manager policy broker hub\n"
    )
    csv_path = tmp / "run.csv"
    t0 = time.monotonic()
    metrics = run_replay(corpus_path, deploy, rules=[RULE], csv_path=csv_path,
                         effector_log=tmp / "effector.log", drain_timeout=90.0)
    runtime = time.monotonic() - t0
    return {"metrics": metrics, "runtime": runtime, "csv": csv_path,
            "corpus_size": len(alerts)}


def test_criterion_1_throughput_floor(colocated_run):
    with criterion(1, "throughput floor (>= 150 msg/s, < 70 s)"):
        metrics = colocated_run["metrics"]
        assert metrics.valid, metrics.manager_errors
        assert metrics.published == 10_000
        assert metrics.dropped == 0
        print(f"\n  throughput: {metrics.throughput:.1f} msg/s over "
              f"{metrics.wall_publish:.2f} s publish phase "
              f"(total runtime {colocated_run['runtime']:.1f} s)")
        assert metrics.throughput >= 150.0
        assert colocated_run["runtime"] < 70.0


def test_criterion_2_matching_oracle_equivalence():
    with criterion(2, "matching oracle equivalence (index == brute force)"):
        rng = random.Random(0xFEED)
        t0 = time.monotonic()
        headers = [project_header(random_alert(rng)) for _ in range(1000)]
        table = SubscriptionTable()
        filters = []
        for i in range(100):
            text = random_filter_text(rng)
            expr = flt.compile(text)
            filters.append((f"f{i}", expr))
            table.add(flt.Subscription(sub_id=f"f{i}", filter=expr, text=text))
        mismatches = 0
        for header in headers:
            indexed = {s.sub_id for s in table.match_candidates(header)}
            brute = {sid for sid, expr in filters if oracle.filter_accepts(expr, header)}
            if indexed != brute:
                mismatches += 1
        elapsed = time.monotonic() - t0
        print(f"\n  100 filters x 1000 headers in {elapsed:.2f} s, {mismatches} mismatches")
        assert mismatches == 0
        assert elapsed < 10.0


def test_criterion_3_round_trip_serialization():
    with criterion(3, "round-trip serialization (1000 randomized alerts)"):
        rng = random.Random(0xC0FFEE)
        for _ in range(1000):
            alert = random_alert(rng)
            data = serialize(alert)
            assert parse(data) == alert
            assert serialize(alert) == data


# ---------------------------------------------------------------------------
# Criterion 4: overlay exactly-once on line and ring, both modes.

def _overlay_subscriber_filters(broker_ids):
    """One subscriber per broker with a mix of broad and selective filters."""
    choices = ["//alert",
               '//alert[classification.name="ipsweep"]',
               '//alert[kind="Local" and target.service.port=22]']
    return {bid: choices[i % len(choices)] for i, bid in enumerate(sorted(broker_ids))}


def _run_overlay_workload(edges, mode, alerts, publish_at):
    nodes = build_overlay(edges, mode)
    delivered: Counter = Counter()
    try:
        filter_by_broker = _overlay_subscriber_filters(nodes)
        subscribers = {}
        expected_filters = []
        for bid, text in filter_by_broker.items():
            client = BrokerClient("127.0.0.1", nodes[bid].listen_port, f"sub-{bid}")
            sub_id = client.sub(text)
            subscribers[bid] = client
            expected_filters.append((sub_id, text))
        if mode == "filter_forward":
            settle_subscriptions(nodes, len(expected_filters))
        else:
            time.sleep(0.2)
        publisher = BrokerClient("127.0.0.1", nodes[publish_at].listen_port, "pub",
                                 window=64)
        for alert in alerts:
            publisher.pub(alert, wait=False)
        publisher.flush(timeout=60.0)

        expected = oracle.expected_deliveries(alerts, expected_filters)
        deadline = time.monotonic() + 30.0
        quiet_since = time.monotonic()
        while time.monotonic() < deadline:
            progress = False
            for client in subscribers.values():
                rn = client.poll()
                if rn is not None:
                    delivered[(rn.sub_id, rn.header.first("message_id"))] += 1
                    progress = True
            if progress:
                quiet_since = time.monotonic()
            elif sum(delivered.values()) >= sum(expected.values()) \
                    and time.monotonic() - quiet_since > 0.5:
                break
            elif time.monotonic() - quiet_since > 3.0:
                break
        publisher.close()
        for client in subscribers.values():
            client.close()
        stats = {bid: nodes[bid].stats() for bid in nodes}
        return expected, delivered, stats
    finally:
        stop_all(nodes)


@pytest.mark.parametrize("label,edges,publish_at", [
    ("line", LINE, "A"),
    ("ring", RING, "A"),
])
@pytest.mark.parametrize("mode", ["flood", "filter_forward"])
def test_criterion_4_overlay_exactly_once(label, edges, publish_at, mode):
    with criterion(4, f"overlay exactly-once ({label}, {mode})"):
        rng = random.Random(hash((label, mode)) & 0xFFFF)
        alerts = [make_local_alert(
            rng.choice(["ipsweep", "portsweep", "smurf"]),
            offset=i,
            message_id=f"{label}-{mode}-{i}")
            for i in range(1000)]
        expected, delivered, stats = _run_overlay_workload(edges, mode, alerts, publish_at)
        missing = expected - delivered
        extra = delivered - expected
        assert not missing, f"{len(missing)} expected deliveries missing"
        assert not extra, f"{len(extra)} duplicate/unexpected deliveries"
        for bid, st in stats.items():
            assert st["max_forwards_per_message"] <= 1, f"broker {bid} re-forwarded"
        print(f"\n  {sum(delivered.values())} deliveries, "
              f"fwd copies: {sum(st['fwd_sent'] for st in stats.values())}")


# ---------------------------------------------------------------------------
# Criterion 5: flood vs filter_forward equivalence on random topologies.

def _random_connected_topology(rng: random.Random):
    n = rng.randint(2, 6)
    ids = [chr(ord("A") + i) for i in range(n)]
    edges = set()
    for i in range(1, n):  # random spanning tree
        j = rng.randrange(i)
        edges.add((ids[j], ids[i]))
    for _ in range(rng.randint(0, 2)):  # a few extra edges make cycles
        a, b = rng.sample(ids, 2)
        edge = (min(a, b), max(a, b))
        if edge not in edges:
            edges.add(edge)
    return ids, sorted(edges)


def test_criterion_5_routing_mode_equivalence():
    with criterion(5, "routing-mode equivalence (20 random topologies)"):
        rng = random.Random(20_2024)
        for run in range(20):
            ids, edges = _random_connected_topology(rng)
            publish_at = rng.choice(ids)
            alerts = [make_local_alert(
                rng.choice(["ipsweep", "portsweep", "smurf", "neptune"]),
                offset=i, message_id=f"t{run}-{i}") for i in range(60)]
            results = {}
            fwd = {}
            for mode in ("flood", "filter_forward"):
                expected, delivered, stats = _run_overlay_workload(
                    edges, mode, alerts, publish_at)
                assert delivered == expected, f"run {run} {mode}: delivery mismatch"
                results[mode] = delivered
                fwd[mode] = sum(st["fwd_sent"] for st in stats.values())
            assert results["flood"] == results["filter_forward"], f"run {run}: sets differ"
            assert fwd["filter_forward"] <= fwd["flood"], \
                f"run {run}: filter_forward used more link messages"


# ---------------------------------------------------------------------------
# Criterion 6: pipeline end to end with embedded scenarios.

_BACKGROUND_MIX = tuple((name, 1.0) for name in
                        ("smurf", "neptune", "teardrop", "back", "pod"))


def _pipeline_run(tmp_path, perturb: bool):
    spec = CorpusSpec(
        seed=606, total=2000, mix=_BACKGROUND_MIX,
        scenarios=(EmbeddedScenario(RULE, count=5, jitter=2.0,
                                    perturb_final_target=perturb),),
    )
    alerts = generate(spec)
    suffix = "perturbed" if perturb else "intact"
    corpus_path = tmp_path / f"c6-{suffix}.alerts"
    write_corpus(corpus_path, alerts)
    port = free_ports(1)[0]
    deploy = tmp_path / f"deploy-{suffix}.txt"
    deploy.write_text(
        "mode flood\n"
        f"broker hub listen 127.0.0.1:{port}\n"
        "manager aggregation broker hub\n"
        "manager correlation broker hub\n"
        "manager policy broker hub\n"
    )
    metrics = run_replay(
        corpus_path, deploy, rules=[RULE], drain_timeout=60.0,
        captures=[("globals", "hub", '//alert[kind="Global"]'),
                  ("assessments", "hub", '//alert[kind="Assessment"]')],
    )
    assert metrics.valid, metrics.manager_errors
    return alerts, metrics


def test_criterion_6_pipeline_end_to_end(tmp_path):
    with criterion(6, "pipeline end-to-end (5 embedded scenarios -> 5 assessments)"):
        alerts, metrics = _pipeline_run(tmp_path, perturb=False)
        # the independent corpus scan predicts exactly 5 completions
        assert len(scan_scenarios(alerts, RULE)) == 5
        assessments = [parse(rn.body) for rn in metrics.captured["assessments"]]
        assert len(assessments) == 5
        globals_by_id = {parse(rn.body).message_id: parse(rn.body)
                         for rn in metrics.captured["globals"]}
        for aa in assessments:
            assert aa.kind is Kind.ASSESSMENT
            assert aa.assessment.actions == RULE.countermeasures
            contributing = [globals_by_id[mid] for mid in aa.correlation.alert_idents]
            assert len(contributing) == len(RULE.steps)
            # step order and the same_target constraint hold post hoc
            names = [g.classification.name for g in contributing]
            assert names == [s.classification for s in RULE.steps]
            target_sets = [frozenset(t.node.address for t in g.targets if t.node)
                           for g in contributing]
            common = frozenset.intersection(*target_sets)
            assert common, "contributing alerts share no target"
            times = [(g.timestamps.detect or g.timestamps.create).key()
                     for g in contributing]
            assert times == sorted(times)
        # policy manager logged every assessment action
        assert len(metrics.effector_records) == 5 * len(RULE.countermeasures)

        perturbed_alerts, perturbed = _pipeline_run(tmp_path, perturb=True)
        assert scan_scenarios(perturbed_alerts, RULE) == []
        assert len(perturbed.captured["assessments"]) == 0
        print(f"\n  5/5 assessments verified; perturbed run emitted "
              f"{len(perturbed.captured['assessments'])}")


def test_criterion_7_per_publisher_fifo(colocated_run):
    with criterion(7, "per-publisher FIFO ordering"):
        sequences = colocated_run["metrics"].sequences
        assert sequences, "no delivery sequences recorded"
        checked = 0
        for label, seq in sequences.items():
            per_pub: dict[str, list[int]] = {}
            for publisher, n in seq:
                per_pub.setdefault(publisher, []).append(n)
            for publisher, ns in per_pub.items():
                assert ns == sorted(ns), f"{label} saw {publisher} out of order"
                checked += 1
        print(f"\n  {checked} (publisher, subscriber) streams in order")


def test_criterion_8_resource_reporting(colocated_run):
    with criterion(8, "resource reporting (CSV samples, round trip)"):
        metrics = colocated_run["metrics"]
        csv_path = colocated_run["csv"]
        samples = load_samples_csv(csv_path)
        assert samples == metrics.samples  # round trip
        per_broker: dict[str, int] = {}
        for s in samples:
            per_broker[s.broker] = per_broker.get(s.broker, 0) + 1
        duration = max(s.t for s in samples)
        for broker_id, count in per_broker.items():
            assert count >= math.floor(duration), \
                f"broker {broker_id}: {count} samples over {duration:.1f} s is below 1 Hz"
        assert all(math.isfinite(s.rss_mb) and s.rss_mb > 0 for s in samples)
        assert all(math.isfinite(s.cpu_pct) and s.cpu_pct >= 0 for s in samples)
        report = summarize_samples(samples)
        assert "throughput" in report and "peak rss" in report
        print(f"\n  {len(samples)} samples over {duration:.1f} s; report renders")
