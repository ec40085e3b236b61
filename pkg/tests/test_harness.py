"""Harness: corpus generation, delivery oracle, replay metrics, report, CLI."""

from __future__ import annotations

import random
from collections import Counter

import pytest

from alertmesh import cli
from alertmesh import filters as flt
from alertmesh import oracle
from alertmesh.broker import SubscriptionTable
from alertmesh.corpus import (
    CorpusSpec,
    EmbeddedScenario,
    SpecError,
    generate,
    parse_corpus_spec,
    scan_scenarios,
)
from alertmesh.idmef import Kind, iter_corpus, project_header, serialize, write_corpus
from alertmesh.replay import (
    Sample,
    load_samples_csv,
    parse_deployment,
    percentile,
    render_table,
    save_samples_csv,
    summarize_samples,
    RunMetrics,
)

from .conftest import random_alert
from .test_managers import RULE
from .test_filters import random_filter_text


# -- corpus generation -----------------------------------------------------------

def corpus_bytes(spec):
    return b"".join(serialize(a) for a in generate(spec))


def test_generator_deterministic():
    spec = CorpusSpec(seed=7, total=200)
    assert corpus_bytes(spec) == corpus_bytes(spec)
    assert corpus_bytes(spec) != corpus_bytes(CorpusSpec(seed=8, total=200))


def test_generator_empty_corpus(tmp_path):
    spec = CorpusSpec(seed=1, total=0)
    alerts = generate(spec)
    assert alerts == []
    path = tmp_path / "empty.alerts"
    assert write_corpus(path, alerts) == 0
    assert list(iter_corpus(path)) == []


def test_generator_alerts_are_valid_ordered_locals():
    spec = CorpusSpec(seed=3, total=150, analyzers=3)
    alerts = generate(spec)
    assert len(alerts) == 150
    times = [a.timestamps.detect.epoch_float() for a in alerts]
    assert times == sorted(times)
    assert {a.kind for a in alerts} == {Kind.LOCAL}
    assert len({a.message_id for a in alerts}) == 150
    assert {a.analyzer.analyzerid for a in alerts} == {"an-01", "an-02", "an-03"}


def test_embedded_scenario_steps_in_order_on_common_target():
    spec = CorpusSpec(seed=11, total=100,
                      scenarios=(EmbeddedScenario(RULE, count=1, jitter=1.5),))
    alerts = generate(spec)
    steps = [a for a in alerts if a.additional and
             a.additional[0].meaning == "embedded-scenario"]
    assert len(steps) == 3
    assert [a.classification.name for a in steps] == [s.classification for s in RULE.steps]
    times = [a.timestamps.detect.epoch_float() for a in steps]
    assert times == sorted(times)
    targets = [a.targets[0].node.address for a in steps]
    assert len(set(targets)) == 1
    # and the post-generation scan finds exactly the one instance
    assert len(scan_scenarios(alerts, RULE)) >= 1


def test_scan_counts_embedded_instances():
    mix = tuple((name, 1.0) for name in ("smurf", "neptune", "teardrop"))
    spec = CorpusSpec(seed=5, total=300, mix=mix,
                      scenarios=(EmbeddedScenario(RULE, count=4, jitter=2.0),))
    alerts = generate(spec)
    assert len(scan_scenarios(alerts, RULE)) == 4


def test_perturbed_final_target_breaks_scenarios():
    mix = tuple((name, 1.0) for name in ("smurf", "neptune"))
    spec = CorpusSpec(seed=5, total=300, mix=mix,
                      scenarios=(EmbeddedScenario(RULE, count=4, jitter=2.0,
                                                  perturb_final_target=True),))
    assert scan_scenarios(generate(spec), RULE) == []


def test_spec_validation():
    with pytest.raises(SpecError):
        CorpusSpec(total=-1)
    with pytest.raises(SpecError):
        CorpusSpec(mix=(("x", -1.0),))
    with pytest.raises(SpecError):
        CorpusSpec(time_spread=5.0,
                   scenarios=(EmbeddedScenario(RULE, count=1, jitter=5.0),))


SPEC_TEXT = """
seed 42
total 120
spread 300
sources 10
targets 6
analyzers 2

classification smurf 3
classification neptune 1

scenario recon-chain
step ipsweep same_target
step portsweep same_target
step ssh-bruteforce same_target
objective interactive access on the swept host
counter block-source
counter notify-admin
end

embed recon-chain 2 jitter 1.5
"""


def test_parse_corpus_spec_file():
    spec = parse_corpus_spec(SPEC_TEXT)
    assert spec.seed == 42 and spec.total == 120
    assert spec.mix == (("smurf", 3.0), ("neptune", 1.0))
    assert spec.analyzers == 2
    assert len(spec.scenarios) == 1
    assert spec.scenarios[0].rule == RULE
    assert spec.scenarios[0].count == 2
    alerts = generate(spec)
    assert len(alerts) == 120 + 2 * 3
    assert len(scan_scenarios(alerts, RULE)) == 2


@pytest.mark.parametrize("text,msg", [
    ("seed x", "bad integer"),
    ("bogus 1", "unknown directive"),
    ("embed nope 3", "unknown scenario"),
    ("classification a", "classification <name> <weight>"),
    ("scenario a\nstep x\nend\nembed a 1", "bad scenario block"),
])
def test_parse_corpus_spec_errors(text, msg):
    with pytest.raises(SpecError) as err:
        parse_corpus_spec(text)
    assert msg in str(err.value)


# -- delivery oracle ----------------------------------------------------------------

def test_oracle_true_and_false_filters():
    alerts = generate(CorpusSpec(seed=2, total=50))
    pairs = oracle.expected_deliveries(alerts, [("all", "//alert"), ("none", "//alert[false]")])
    assert sum(n for (sid, _), n in pairs.items() if sid == "all") == 50
    assert not any(sid == "none" for sid, _ in pairs)


def test_oracle_agrees_with_matcher_and_index(rng):
    """Three independently coded matchers agree: oracle, filters.matches, broker index."""
    alerts = [random_alert(rng) for _ in range(300)]
    filters = [(f"f{i}", random_filter_text(rng)) for i in range(60)]
    expected = oracle.expected_deliveries(alerts, filters)

    via_matches = Counter()
    table = SubscriptionTable()
    for sub_id, text in filters:
        table.add(flt.Subscription(sub_id=sub_id, filter=flt.compile(text), text=text))
    via_index = Counter()
    for alert in alerts:
        header = project_header(alert)
        for sub_id, text in filters:
            if flt.matches(flt.compile(text), header):
                via_matches[(sub_id, alert.message_id)] += 1
        for sub in table.match_candidates(header):
            via_index[(sub.sub_id, alert.message_id)] += 1
    assert expected == via_matches == via_index


def test_filters_file_parse():
    text = "# comment\ns1 //alert\ns2 //alert[kind=\"Local\"]\n"
    assert oracle.parse_filters_file(text) == [
        ("s1", "//alert"), ("s2", '//alert[kind="Local"]')]
    with pytest.raises(ValueError):
        oracle.parse_filters_file("lonely-id\n")


# -- deployment config ----------------------------------------------------------------

DEPLOY_ONE = """
mode flood
broker hub listen 127.0.0.1:{port}
manager aggregation broker hub
manager correlation broker hub
manager policy broker hub
"""


def test_parse_deployment():
    dep = parse_deployment(DEPLOY_ONE.format(port=9311))
    assert [m.kind for m in dep.managers] == ["aggregation", "correlation", "policy"]
    assert dep.managers[0].broker_id == "hub"


def test_parse_deployment_errors():
    from alertmesh.config import ConfigError
    with pytest.raises(ConfigError):
        parse_deployment("broker a listen 127.0.0.1:1\nmanager aggregation broker b")
    with pytest.raises(ConfigError):
        parse_deployment("broker a listen 127.0.0.1:1\nmanager prophet broker a")


# -- metrics plumbing ------------------------------------------------------------------

def test_percentiles_monotone():
    data = sorted(random.Random(3).uniform(0, 50) for _ in range(97))
    p50, p95, p99 = (percentile(data, q) for q in (0.50, 0.95, 0.99))
    assert p50 <= p95 <= p99
    assert percentile([], 0.5) == 0.0
    assert percentile([7.0], 0.99) == 7.0


def test_samples_csv_round_trip(tmp_path):
    samples = [Sample(0.5, "hub", 12.25, 38.125, 10),
               Sample(1.0, "hub", 99.9, 40.0625, 222),
               Sample(1.5, "spoke", 0.0, 17.3, 222)]
    path = tmp_path / "run.csv"
    save_samples_csv(samples, path)
    assert load_samples_csv(path) == samples
    text = path.read_text()
    assert text.splitlines()[0] == "time_s,broker,cpu_pct,rss_mb,delivered_cum"


def test_report_rendering():
    samples = [Sample(0.0, "hub", 0.0, 30.0, 0), Sample(2.0, "hub", 50.0, 35.5, 100)]
    table = summarize_samples(samples)
    assert "throughput" in table
    assert "peak rss 35.5 MB" in table
    metrics = RunMetrics(published=10, delivered=20, throughput=123.4,
                         wall_publish=0.081, wall_total=0.2,
                         latency_ms={"p50": 1.0, "p95": 2.0, "p99": 3.0})
    out = render_table(metrics)
    assert "throughput (msg/s)   123.4" in out
    assert "p99=3.00" in out


# -- CLI ---------------------------------------------------------------------------------

def test_cli_gen_oracle_report(tmp_path, capsys):
    spec_path = tmp_path / "spec.txt"
    spec_path.write_text("seed 9\ntotal 40\n")
    corpus_path = tmp_path / "c.alerts"
    assert cli.main(["gen", "--spec", str(spec_path), "--out", str(corpus_path)]) == 0
    assert len(list(iter_corpus(corpus_path))) == 40
    # deterministic regeneration
    first = corpus_path.read_bytes()
    assert cli.main(["gen", "--spec", str(spec_path), "--out", str(corpus_path)]) == 0
    assert corpus_path.read_bytes() == first

    filters_path = tmp_path / "filters.txt"
    filters_path.write_text('all //alert\nssh //alert[classification.name="ssh-bruteforce"]\n')
    out_path = tmp_path / "pairs.txt"
    assert cli.main(["oracle", "--corpus", str(corpus_path), "--filters", str(filters_path),
                     "--out", str(out_path)]) == 0
    lines = out_path.read_text().splitlines()
    assert len([l for l in lines if l.startswith("all\t")]) == 40

    csv_path = tmp_path / "run.csv"
    save_samples_csv([Sample(0.0, "hub", 1.0, 2.0, 3)], csv_path)
    assert cli.main(["report", "--in", str(csv_path)]) == 0
    assert "peak rss" in capsys.readouterr().out


def test_cli_error_exit_code(tmp_path, capsys):
    assert cli.main(["gen", "--spec", str(tmp_path / "missing.txt"),
                     "--out", str(tmp_path / "x")]) == 1
    assert "error:" in capsys.readouterr().err


# -- live replay (single broker, full pipeline) -------------------------------------

from alertmesh.replay import run_replay  # noqa: E402
from .conftest import free_ports  # noqa: E402


def write_single_broker_deploy(tmp_path, managers=("aggregation", "correlation", "policy")):
    port = free_ports(1)[0]
    lines = ["mode flood", f"broker hub listen 127.0.0.1:{port}"]
    lines += [f"manager {kind} broker hub" for kind in managers]
    path = tmp_path / "deploy.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_replay_pipeline_delivers_and_detects(tmp_path):
    mix = tuple((name, 1.0) for name in ("smurf", "neptune", "teardrop"))
    spec = CorpusSpec(seed=21, total=300, mix=mix,
                      scenarios=(EmbeddedScenario(RULE, count=2, jitter=1.5),))
    alerts = generate(spec)
    corpus_path = tmp_path / "c.alerts"
    write_corpus(corpus_path, alerts)
    deploy = write_single_broker_deploy(tmp_path)
    log = tmp_path / "effector.log"
    metrics = run_replay(corpus_path, deploy, rules=[RULE], effector_log=log,
                         csv_path=tmp_path / "run.csv", drain_timeout=30.0)
    assert metrics.valid, metrics.manager_errors
    assert metrics.published == len(alerts)
    assert metrics.dropped == 0
    # every corpus alert is Local; the aggregation manager's LA interest is the
    # only initial subscription matching Locals, so each corpus id is delivered once
    corpus_ids = {a.message_id for a in alerts}
    corpus_deliveries = Counter({pair: n for pair, n in metrics.observed_pairs.items()
                                 if pair[1] in corpus_ids})
    assert sum(corpus_deliveries.values()) == len(alerts)
    assert all(n == 1 for n in corpus_deliveries.values())
    # both embedded scenario instances completed: 2 assessments x 2 actions
    expected_instances = len(scan_scenarios(alerts, RULE))
    assert expected_instances == 2
    assert len(metrics.effector_records) == 2 * expected_instances
    assert log.exists() and len(log.read_text().splitlines()) == 4


def test_replay_rate_limiter(tmp_path):
    spec = CorpusSpec(seed=5, total=80)
    corpus_path = tmp_path / "c.alerts"
    write_corpus(corpus_path, generate(spec))
    deploy = write_single_broker_deploy(tmp_path, managers=("aggregation",))
    metrics = run_replay(corpus_path, deploy, rate=40.0, drain_timeout=20.0)
    assert metrics.valid
    # 80 alerts at 40 msg/s paced from t=0: wall close to 2 s
    assert 1.8 <= metrics.wall_publish <= 2.4
    assert abs(metrics.throughput - 40.0) / 40.0 <= 0.15


def test_cli_replay_threshold_exit_codes(tmp_path, capsys):
    spec = CorpusSpec(seed=3, total=60)
    corpus_path = tmp_path / "c.alerts"
    write_corpus(corpus_path, generate(spec))
    deploy = write_single_broker_deploy(tmp_path, managers=("aggregation",))
    argv = ["replay", "--corpus", str(corpus_path), "--deploy", str(deploy),
            "--rate", "max", "--csv", str(tmp_path / "run.csv")]
    assert cli.main(argv) == 0
    out = capsys.readouterr().out
    assert "throughput (msg/s)" in out
    assert (tmp_path / "run.csv").exists()
    # an absurd floor trips the acceptance-threshold exit code
    assert cli.main(argv + ["--min-throughput", "1e9"]) == 2


def test_replay_empty_corpus(tmp_path):
    corpus_path = tmp_path / "empty.alerts"
    write_corpus(corpus_path, [])
    deploy = write_single_broker_deploy(tmp_path, managers=("aggregation",))
    metrics = run_replay(corpus_path, deploy, drain_timeout=10.0)
    assert metrics.valid
    assert metrics.published == 0
    assert metrics.delivered == 0
    assert metrics.dropped == 0
    assert not metrics.manager_errors
