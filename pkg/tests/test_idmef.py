"""Alert model: construction invariants, serialization round trips, header projection."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from alertmesh.idmef import (
    Analyzer,
    Classification,
    CorrelationInfo,
    CycleError,
    Instant,
    InvalidAlert,
    Kind,
    ParseError,
    SchemaError,
    Timestamps,
    build_alert,
    forward_rewrap,
    iter_corpus_records,
    parse,
    project_header,
    serialize,
    validate_alert,
    write_corpus,
)

from .conftest import (
    BASE_TIME,
    make_analyzer,
    make_endpoint,
    make_heartbeat,
    make_local_alert,
    make_timestamps,
    random_alert,
)


# -- construction -------------------------------------------------------------

def test_minimal_heartbeat():
    hb = make_heartbeat()
    assert hb.kind is Kind.HEARTBEAT
    assert hb.sources == () and hb.targets == ()
    assert hb.classification is None
    assert validate_alert(hb) is None


def test_local_alert_round_trip():
    alert = make_local_alert("ssh-bruteforce")
    assert parse(serialize(alert)) == alert


def test_correlated_needs_two_references():
    with pytest.raises(InvalidAlert):
        build_alert(Kind.CORRELATED, make_analyzer(), make_timestamps(),
                    classification=Classification("chain"),
                    correlation=CorrelationInfo("chain", ("only-one",)))


def test_assessment_kind_needs_action():
    with pytest.raises(InvalidAlert):
        build_alert(Kind.ASSESSMENT, make_analyzer(), make_timestamps(),
                    classification=Classification("reaction"))


def test_heartbeat_rejects_sources():
    with pytest.raises(InvalidAlert):
        build_alert(Kind.HEARTBEAT, make_analyzer(), make_timestamps(),
                    sources=[make_endpoint()])


def test_source_cannot_carry_files():
    src = make_endpoint("s", files=("/etc/passwd",))
    with pytest.raises(InvalidAlert):
        build_alert(Kind.LOCAL, make_analyzer(), make_timestamps(),
                    sources=[src], classification=Classification("x"))


def test_detect_after_create_rejected():
    with pytest.raises(InvalidAlert):
        Timestamps(create=Instant(100), detect=Instant(101))


def test_message_id_scheme_and_uniqueness():
    a1 = make_local_alert()
    a2 = make_local_alert()
    assert a1.message_id != a2.message_id
    assert a1.message_id.startswith("an-1-")
    micros = int(a1.message_id.split("-")[2])
    assert micros == a1.timestamps.create.epoch_micros()


def test_analyzer_chain_repeat_rejected():
    inner = make_analyzer("dup")
    with pytest.raises(InvalidAlert):
        Analyzer(analyzerid="dup", previous=inner)


# -- forwarding ---------------------------------------------------------------

def test_rewrap_builds_chain():
    alert = make_local_alert()
    fwd = Analyzer(analyzerid="relay-1", name="relay")
    t = Instant(BASE_TIME + 10)
    wrapped = forward_rewrap(alert, fwd, analyzer_time=t)
    assert wrapped.analyzer.analyzerid == "relay-1"
    assert wrapped.analyzer.previous == alert.analyzer
    assert wrapped.message_id == alert.message_id
    assert wrapped.timestamps.analyzer == t
    assert wrapped.classification == alert.classification
    assert wrapped.sources == alert.sources and wrapped.targets == alert.targets


def test_rewrap_twice_extends_chain():
    alert = make_local_alert()
    step1 = forward_rewrap(alert, Analyzer(analyzerid="relay-1"), Instant(BASE_TIME + 1))
    step2 = forward_rewrap(step1, Analyzer(analyzerid="relay-2"), Instant(BASE_TIME + 2))
    assert step2.analyzer.chain_ids() == ["relay-2", "relay-1", "an-1"]
    assert step2.message_id == alert.message_id
    assert len(step2.analyzer.chain_ids()) == len(alert.analyzer.chain_ids()) + 2


def test_rewrap_cycle_refused():
    alert = make_local_alert()
    step1 = forward_rewrap(alert, Analyzer(analyzerid="relay-1"), Instant(BASE_TIME + 1))
    with pytest.raises(CycleError):
        forward_rewrap(step1, Analyzer(analyzerid="relay-1"), Instant(BASE_TIME + 2))
    with pytest.raises(CycleError):
        forward_rewrap(step1, Analyzer(analyzerid="an-1"), Instant(BASE_TIME + 2))


def test_rewrapped_alert_serializes():
    alert = make_local_alert()
    wrapped = forward_rewrap(alert, Analyzer(analyzerid="relay-1"), Instant(BASE_TIME + 1))
    assert parse(serialize(wrapped)) == wrapped


# -- serialization ------------------------------------------------------------

def test_heartbeat_document_root_child():
    doc = serialize(make_heartbeat())
    assert b"<Heartbeat" in doc.split(b"<IDMEF-Message", 1)[1]
    assert b"<Alert" not in doc


def test_serialize_deterministic():
    alert = make_local_alert()
    assert serialize(alert) == serialize(alert)


def test_parse_rejects_missing_create_time():
    doc = serialize(make_local_alert())
    broken = doc.replace(b"CreateTime", b"MadeUpTime")
    with pytest.raises(SchemaError) as err:
        parse(broken)
    assert "CreateTime" in str(err.value)


def test_parse_rejects_truncated_stream():
    doc = serialize(make_local_alert())
    with pytest.raises(ParseError):
        parse(doc[: len(doc) // 2])


def test_parse_rejects_garbage():
    with pytest.raises(ParseError):
        parse(b"not xml at all")


def test_unknown_elements_preserved_as_opaque():
    doc = serialize(make_local_alert())
    payload = b"<ToolAlert><name>rootkit-kit</name></ToolAlert></Alert>"
    doc = doc.replace(b"</Alert>", payload)
    alert = parse(doc)
    opaque = [a for a in alert.additional if a.meaning == "opaque:ToolAlert"]
    assert len(opaque) == 1
    assert "rootkit-kit" in opaque[0].value
    # and the opaque entry survives another round trip
    assert parse(serialize(alert)) == alert


def test_randomized_round_trip_seeded():
    rng = random.Random(7)
    for _ in range(250):
        alert = random_alert(rng)
        data = serialize(alert)
        assert parse(data) == alert
        assert serialize(alert) == data


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_round_trip_property(seed):
    alert = random_alert(random.Random(seed))
    assert parse(serialize(alert)) == alert


# -- header projection --------------------------------------------------------

def test_heartbeat_header_has_no_classification():
    header = project_header(make_heartbeat())
    assert header.first("kind") == "Heartbeat"
    assert header.values("classification.name") == ()


def test_header_contains_expected_pairs():
    alert = make_local_alert(
        "ipsweep",
        targets=[make_endpoint("t1", "10.0.0.9", port=22),
                 make_endpoint("t2", "10.0.0.9", port=80)],
    )
    header = project_header(alert)
    expected = [
        ("kind", "Local"),
        ("message_id", alert.message_id),
        ("analyzer.analyzerid", "an-1"),
        ("create_time", str(BASE_TIME)),
        ("classification.name", "ipsweep"),
        ("source.node.address", "10.0.0.5"),
        ("target.node.address", "10.0.0.9"),
        ("target.service.port", "22"),
        ("target.node.address", "10.0.0.9"),
        ("target.service.port", "80"),
    ]
    assert list(header.pairs) == expected
    assert header.values("target.service.port") == ("22", "80")


def test_equal_alerts_equal_headers(rng):
    for _ in range(50):
        alert = random_alert(rng)
        assert project_header(alert) == project_header(parse(serialize(alert)))


# -- corpus files -------------------------------------------------------------

def test_corpus_round_trip(tmp_path, rng):
    alerts = [random_alert(rng) for _ in range(20)]
    path = tmp_path / "corpus.alerts"
    assert write_corpus(path, alerts) == 20
    records = list(iter_corpus_records(path))
    assert [a for a, _ in records] == alerts
    # stored bytes are the canonical serialization
    assert all(doc == serialize(a) for a, doc in records)


def test_corpus_truncation_detected(tmp_path, rng):
    path = tmp_path / "corpus.alerts"
    write_corpus(path, [random_alert(rng)])
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(ParseError):
        list(iter_corpus_records(path))
