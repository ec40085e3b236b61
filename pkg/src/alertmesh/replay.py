"""Corpus replay through a live deployment, with throughput/latency/CPU/memory metrics.

A deployment file is a topology config plus ``manager <kind> broker <id>``
lines.  The harness launches one broker daemon process per broker (so CPU and
memory can be accounted per broker), runs the managers as socket clients in
threads, replays the corpus through per-analyzer publisher clients at the
requested rate, and waits for the pipeline to drain before collecting stats.
"""

from __future__ import annotations

import math
import socket
import statistics
import subprocess
import sys
import threading
import time
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import psutil

from .client import BrokerClient, ReceivedNotification
from .config import ConfigError
from .idmef import Analyzer, NodeInfo, iter_corpus_records
from .managers import (
    AggregationConfig,
    AggregationManager,
    CorrelationManager,
    ManagerLoop,
    PolicyManager,
    ScenarioRule,
)
from .overlay import Topology, parse_topology


class DeploymentUnreachable(Exception):
    pass


MANAGER_KINDS = ("aggregation", "correlation", "policy")


@dataclass(frozen=True)
class ManagerSpec:
    kind: str
    broker_id: str


@dataclass(frozen=True)
class Deployment:
    topology: Topology
    managers: tuple[ManagerSpec, ...]


def parse_deployment(text: str) -> Deployment:
    managers: list[tuple[int, str, str]] = []

    def on_manager(lineno, fields):
        if len(fields) != 4 or fields[2] != "broker":
            raise ConfigError("expected: manager <kind> broker <id>", lineno)
        if fields[1] not in MANAGER_KINDS:
            raise ConfigError(f"unknown manager kind {fields[1]!r}", lineno)
        managers.append((lineno, fields[1], fields[3]))

    topology = parse_topology(text, extra_directives={"manager": on_manager})
    for lineno, _kind, broker_id in managers:
        if broker_id not in topology.brokers:
            raise ConfigError(f"manager references unknown broker {broker_id!r}", lineno)
    return Deployment(topology, tuple(ManagerSpec(k, b) for _, k, b in managers))


def load_deployment(path) -> Deployment:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_deployment(fh.read())


# ---------------------------------------------------------------------------
# Metrics

@dataclass(frozen=True)
class Sample:
    t: float
    broker: str
    cpu_pct: float
    rss_mb: float
    delivered: int


@dataclass
class RunMetrics:
    published: int = 0
    delivered: int = 0
    dropped: int = 0
    wall_publish: float = 0.0
    wall_total: float = 0.0
    throughput: float = 0.0
    latency_ms: dict = field(default_factory=dict)       # p50 / p95 / p99
    peak_rss_mb: dict = field(default_factory=dict)      # per broker
    cpu_avg: dict = field(default_factory=dict)          # per broker
    samples: list = field(default_factory=list)
    observed_pairs: Counter = field(default_factory=Counter)
    sequences: dict = field(default_factory=dict)        # client -> [(publisher, seq)]
    broker_stats: dict = field(default_factory=dict)
    captured: dict = field(default_factory=dict)         # label -> [ReceivedNotification]
    effector_records: list = field(default_factory=list)
    manager_errors: list = field(default_factory=list)
    valid: bool = True


CSV_COLUMNS = ("time_s", "broker", "cpu_pct", "rss_mb", "delivered_cum")


def save_samples_csv(samples: Sequence[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for s in samples:
            fh.write(f"{s.t!r},{s.broker},{s.cpu_pct!r},{s.rss_mb!r},{s.delivered}\n")


def load_samples_csv(path) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != ",".join(CSV_COLUMNS):
            raise ValueError(f"unexpected CSV header: {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            t, broker, cpu, rss, delivered = line.split(",")
            samples.append(Sample(float(t), broker, float(cpu), float(rss), int(delivered)))
    return samples


def percentile(sorted_values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile over pre-sorted data."""
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(q * len(sorted_values)))
    return sorted_values[min(rank, len(sorted_values)) - 1]


def render_table(metrics: RunMetrics) -> str:
    lines = [
        f"published            {metrics.published}",
        f"delivered            {metrics.delivered}",
        f"dropped              {metrics.dropped}",
        f"wall publish (s)     {metrics.wall_publish:.3f}",
        f"wall total (s)       {metrics.wall_total:.3f}",
        f"throughput (msg/s)   {metrics.throughput:.1f}",
    ]
    if metrics.latency_ms:
        lines.append("latency (ms)         p50={p50:.2f} p95={p95:.2f} p99={p99:.2f}".format(
            **metrics.latency_ms))
    for broker_id in sorted(metrics.peak_rss_mb):
        lines.append(f"broker {broker_id:<14}peak rss {metrics.peak_rss_mb[broker_id]:.1f} MB, "
                     f"avg cpu {metrics.cpu_avg.get(broker_id, 0.0):.1f}%")
    if not metrics.valid:
        lines.append("WARNING: metrics flagged invalid (drain timeout or protocol error)")
    return "\n".join(lines)


def summarize_samples(samples: Sequence[Sample]) -> str:
    if not samples:
        return "no samples"
    by_broker: dict[str, list[Sample]] = {}
    for s in samples:
        by_broker.setdefault(s.broker, []).append(s)
    duration = max(s.t for s in samples) - min(s.t for s in samples)
    final_delivered = max(s.delivered for s in samples)
    rate = final_delivered / duration if duration > 0 else float(final_delivered)
    lines = [
        f"samples              {len(samples)}",
        f"duration (s)         {duration:.3f}",
        f"delivered            {final_delivered}",
        f"throughput (msg/s)   {rate:.1f}",
    ]
    for broker_id in sorted(by_broker):
        rows = by_broker[broker_id]
        peak = max(r.rss_mb for r in rows)
        cpu = statistics.fmean(r.cpu_pct for r in rows)
        lines.append(f"broker {broker_id:<14}peak rss {peak:.1f} MB, avg cpu {cpu:.1f}%")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Pieces of the replay machinery

class _RateLimiter:
    def __init__(self, rate: float):
        self.interval = 1.0 / rate
        self._next = time.monotonic()
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            slot = max(self._next, now)
            self._next = slot + self.interval
        delay = slot - now
        if delay > 0:
            time.sleep(delay)


class _Recorder:
    """Thread-safe tally of every delivery the harness's clients observe."""

    def __init__(self):
        self._lock = threading.Lock()
        self.pairs: Counter = Counter()
        self.recv_times: list[tuple[str, float]] = []
        self.sequences: dict[str, list[tuple[str, int]]] = {}
        self.count = 0

    def wrap(self, label: str, fn: Callable[[ReceivedNotification], None]):
        def wrapped(rn: ReceivedNotification):
            mid = rn.header.first("message_id") or ""
            with self._lock:
                self.pairs[(rn.sub_id, mid)] += 1
                self.recv_times.append((mid, rn.recv_time))
                self.sequences.setdefault(label, []).append((rn.publisher, rn.seq))
                self.count += 1
            fn(rn)
        return wrapped


def _wait_port(host: str, port: int, timeout: float) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        try:
            with socket.create_connection((host, port), timeout=0.5):
                return True
        except OSError:
            time.sleep(0.05)
    return False


def launch_brokers(deploy_path, topology: Topology, timeout: float = 15.0,
                   ) -> dict[str, subprocess.Popen]:
    procs: dict[str, subprocess.Popen] = {}
    try:
        for broker_id in topology.brokers:
            procs[broker_id] = subprocess.Popen(
                [sys.executable, "-m", "alertmesh.cli", "broker",
                 "--config", str(deploy_path), "--id", broker_id],
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
            )
        for broker_id, spec in topology.brokers.items():
            if not _wait_port(spec.host, spec.port, timeout):
                raise DeploymentUnreachable(
                    f"broker {broker_id} did not start listening on {spec.host}:{spec.port}")
    except Exception:
        stop_brokers(procs)
        raise
    return procs


def stop_brokers(procs: dict[str, subprocess.Popen]) -> None:
    for proc in procs.values():
        if proc.poll() is None:
            proc.terminate()
    for proc in procs.values():
        try:
            proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait(timeout=5.0)


class _Sampler(threading.Thread):
    """1 Hz-or-better CPU/RSS sampling of the broker processes."""

    def __init__(self, pids: dict[str, int], delivered: Callable[[], int],
                 interval: float = 0.5):
        super().__init__(name="sampler", daemon=True)
        self.procs = {}
        for broker_id, pid in pids.items():
            try:
                self.procs[broker_id] = psutil.Process(pid)
            except psutil.NoSuchProcess:
                pass
        self.delivered = delivered
        self.interval = interval
        self.samples: list[Sample] = []
        self._stop_event = threading.Event()
        self._t0 = time.monotonic()

    def _take(self):
        t = time.monotonic() - self._t0
        delivered = self.delivered()
        for broker_id, proc in self.procs.items():
            try:
                cpu = proc.cpu_percent(None)
                rss = proc.memory_info().rss / (1024 * 1024)
            except psutil.Error:
                continue
            self.samples.append(Sample(t, broker_id, cpu, rss, delivered))

    def run(self):
        for proc in self.procs.values():
            try:
                proc.cpu_percent(None)  # prime the counter
            except psutil.Error:
                pass
        while not self._stop_event.wait(self.interval):
            self._take()

    def stop(self):
        self._stop_event.set()
        self.join(timeout=5.0)
        self._take()


# ---------------------------------------------------------------------------
# The replay itself

def run_replay(
    corpus_path,
    deploy_path,
    *,
    rate: Optional[float] = None,
    csv_path=None,
    rules: Sequence[ScenarioRule] = (),
    effector_log=None,
    launch: bool = True,
    captures: Sequence[tuple[str, str, str]] = (),  # (label, broker_id, filter text)
    agg_config: Optional[AggregationConfig] = None,
    window: int = 64,
    drain_timeout: float = 60.0,
    settle_timeout: float = 10.0,
    publish_broker: Optional[str] = None,
) -> RunMetrics:
    """Publish every corpus alert into the deployment and gather RunMetrics."""
    deployment = load_deployment(deploy_path)
    topology = deployment.topology
    records = list(iter_corpus_records(corpus_path))
    metrics = RunMetrics(published=len(records))

    procs = launch_brokers(deploy_path, topology) if launch else {}
    recorder = _Recorder()
    loops: list[ManagerLoop] = []
    clients: list[BrokerClient] = []
    admin: dict[str, BrokerClient] = {}
    policy_managers: list[PolicyManager] = []
    captured: dict[str, list[ReceivedNotification]] = {}
    t_run0 = time.perf_counter()

    def connect(broker_id: str, client_id: str) -> BrokerClient:
        spec = topology.brokers[broker_id]
        try:
            client = BrokerClient(spec.host, spec.port, client_id, window=window)
        except OSError as exc:
            raise DeploymentUnreachable(f"cannot reach broker {broker_id}: {exc}") from None
        clients.append(client)
        return client

    try:
        for broker_id in topology.brokers:
            admin[broker_id] = connect(broker_id, f"replay-admin-{broker_id}")

        for i, mspec in enumerate(deployment.managers):
            label = f"{mspec.kind}-{mspec.broker_id}-{i}"
            client = connect(mspec.broker_id, label)
            identity = Analyzer(analyzerid=f"{mspec.kind}-mgr-{mspec.broker_id}-{i}",
                                name=label, node=NodeInfo(address="127.0.0.1"))
            if mspec.kind == "aggregation":
                manager = AggregationManager(client, identity,
                                             agg_config or AggregationConfig())
                manager.subscribe()
                loop = ManagerLoop(client, recorder.wrap(label, manager.process),
                                   on_idle=manager.flush, name=label)
            elif mspec.kind == "correlation":
                manager = CorrelationManager(client, identity, rules)
                manager.subscribe()
                loop = ManagerLoop(client, recorder.wrap(label, manager.process), name=label)
            else:
                manager = PolicyManager(client, effector_log)
                manager.subscribe()
                policy_managers.append(manager)
                loop = ManagerLoop(client, recorder.wrap(label, manager.process), name=label)
            loop.start()
            loops.append(loop)

        for label, broker_id, filter_text in captures:
            client = connect(broker_id, f"capture-{label}")
            client.sub(filter_text)
            captured[label] = []
            store = captured[label]
            loop = ManagerLoop(client, recorder.wrap(label, store.append), name=label)
            loop.start()
            loops.append(loop)

        _settle_subscriptions(topology, admin, settle_timeout)

        sampler = _Sampler({bid: p.pid for bid, p in procs.items()},
                           delivered=lambda: recorder.count)
        sampler.start()

        # replay: one publisher client per analyzer identity, corpus order preserved
        groups: "OrderedDict[str, list]" = OrderedDict()
        for alert, body in records:
            groups.setdefault(alert.analyzer.analyzerid, []).append((alert, body))
        limiter = _RateLimiter(rate) if rate else None
        pub_broker = publish_broker or topology_first_broker(topology)
        publishers = [connect(pub_broker, f"pub-{aid}") for aid in groups]
        errors: list[Exception] = []

        def publish(client: BrokerClient, items):
            try:
                for alert, body in items:
                    if limiter is not None:
                        limiter.wait()
                    client.pub(alert, body, wait=False)
                client.flush(timeout=max(60.0, drain_timeout))
            except Exception as exc:
                errors.append(exc)

        t0 = time.perf_counter()
        threads = [threading.Thread(target=publish, args=(c, items), daemon=True)
                   for c, items in zip(publishers, groups.values())]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        wall_publish = time.perf_counter() - t0
        if errors:
            metrics.valid = False
            metrics.manager_errors.extend(errors)

        metrics.valid &= _wait_pipeline_idle(recorder, loops, drain_timeout)

        for broker_id, client in admin.items():
            metrics.broker_stats[broker_id] = client.stats()
        sampler.stop()

        metrics.wall_publish = wall_publish
        metrics.wall_total = time.perf_counter() - t_run0
        metrics.throughput = len(records) / wall_publish if wall_publish > 0 else 0.0
        metrics.delivered = recorder.count
        metrics.dropped = sum(st.get("queue_drops", 0) + st.get("link_drops", 0)
                              for st in metrics.broker_stats.values())
        metrics.observed_pairs = Counter(recorder.pairs)
        metrics.sequences = dict(recorder.sequences)
        metrics.captured = captured
        for manager in policy_managers:
            metrics.effector_records.extend(manager.records)

        ack_times: dict[str, float] = {}
        for client in publishers:
            ack_times.update(client.ack_times)
        lat = sorted((recv - ack_times[mid]) * 1000.0
                     for mid, recv in recorder.recv_times if mid in ack_times)
        lat = [max(0.0, v) for v in lat]
        metrics.latency_ms = {"p50": percentile(lat, 0.50), "p95": percentile(lat, 0.95),
                              "p99": percentile(lat, 0.99)}
        for sample in sampler.samples:
            metrics.peak_rss_mb[sample.broker] = max(
                metrics.peak_rss_mb.get(sample.broker, 0.0), sample.rss_mb)
        by_broker: dict[str, list[float]] = {}
        for sample in sampler.samples:
            by_broker.setdefault(sample.broker, []).append(sample.cpu_pct)
        metrics.cpu_avg = {b: statistics.fmean(v) for b, v in by_broker.items() if v}
        metrics.samples = list(sampler.samples)
        for loop in loops:
            metrics.manager_errors.extend(loop.errors)
        if metrics.manager_errors:
            metrics.valid = False
        if csv_path:
            save_samples_csv(metrics.samples, csv_path)
        return metrics
    finally:
        for loop in loops:
            loop.stop(timeout=2.0)
        for client in clients:
            try:
                client.close()
            except Exception:
                pass
        stop_brokers(procs)


def topology_first_broker(topology: Topology) -> str:
    return next(iter(topology.brokers))


def _settle_subscriptions(topology: Topology, admin: dict[str, BrokerClient],
                          timeout: float) -> None:
    """Wait until every broker has learned every remote subscription."""
    if topology.mode != "filter_forward" or len(topology.brokers) == 1:
        time.sleep(0.05)
        return
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        stats = {bid: c.stats() for bid, c in admin.items()}
        total = sum(st["local_subs"] for st in stats.values())
        if all(st["remote_subs"] == total - st["local_subs"] for st in stats.values()):
            return
        time.sleep(0.05)
    raise DeploymentUnreachable("subscription propagation did not settle")


def _wait_pipeline_idle(recorder: _Recorder, loops: Sequence[ManagerLoop],
                        timeout: float, quiet: float = 2.0) -> bool:
    """Wait until no harness client has seen activity for ``quiet`` seconds."""
    deadline = time.monotonic() + timeout
    last_count = -1
    last_change = time.monotonic()
    while time.monotonic() < deadline:
        count = recorder.count + sum(loop.handled for loop in loops)
        if count != last_count:
            last_count = count
            last_change = time.monotonic()
        elif time.monotonic() - last_change >= quiet:
            return True
        time.sleep(0.05)
    return False
