"""Session tests over the in-memory loopback transport (plus one TCP smoke).

Handshakes block until the peer's arrives, so loopback sessions are
established from two worker threads; everything after that is driven from
the test thread, one session at a time.
"""

from __future__ import annotations

import socket
import threading

import pytest

from coneloop.bridge import (
    EndpointConfig,
    Handshake,
    HandshakeTimeout,
    PeerClosed,
    Session,
    StepIndexMismatch,
    StepTimeout,
    SyncPolicy,
    TimeRegression,
    UndeclaredTopic,
    VersionMismatch,
    establish,
    loopback_pair,
)
from coneloop.wire import MessageEnvelope, encode_frame

CFG = EndpointConfig("listener", port=7000, handshake_timeout=2.0, step_timeout=2.0)

HS_A = Handshake("alpha", publications=(("t1", "X"), ("t2", "Y")), subscriptions=(("r1", "Z"),))
HS_B = Handshake("beta", publications=(("r1", "Z"),), subscriptions=(("t1", "X"), ("t2", "Y")))


def establish_pair(
    hs_a: Handshake = HS_A,
    hs_b: Handshake = HS_B,
    sync_a: SyncPolicy | None = None,
    sync_b: SyncPolicy | None = None,
    config: EndpointConfig = CFG,
) -> tuple[Session, Session]:
    ta, tb = loopback_pair()
    results: dict[str, object] = {}

    def runner(name, hs, sync, transport):
        try:
            results[name] = establish(config, hs, sync=sync, transport=transport)
        except Exception as exc:                      # surfaced by the caller
            results[name] = exc

    threads = [
        threading.Thread(target=runner, args=("a", hs_a, sync_a, ta)),
        threading.Thread(target=runner, args=("b", hs_b, sync_b, tb)),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=5.0)
    for side in ("a", "b"):
        if isinstance(results[side], Exception):
            raise results[side]
    return results["a"], results["b"]


# ---------------------------------------------------------------------------
# Handshake

def test_establish_exchanges_handshakes():
    a, b = establish_pair()
    assert a.peer.node_name == "beta"
    assert b.peer.node_name == "alpha"
    assert a.peer.publications == (("r1", "Z"),)
    a.close()
    b.close()


def test_version_mismatch_on_both_sides():
    bad = Handshake("beta", protocol_version=2)
    ta, tb = loopback_pair()
    errors: dict[str, Exception | None] = {}

    def runner(name, hs, transport):
        try:
            establish(CFG, hs, transport=transport)
            errors[name] = None
        except Exception as exc:
            errors[name] = exc

    threads = [
        threading.Thread(target=runner, args=("a", HS_A, ta)),
        threading.Thread(target=runner, args=("b", bad, tb)),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=5.0)
    assert isinstance(errors["a"], VersionMismatch)
    assert isinstance(errors["b"], VersionMismatch)


def test_listener_handshake_timeout():
    port = _free_port()
    cfg = EndpointConfig("listener", port=port, handshake_timeout=0.2)
    with pytest.raises(HandshakeTimeout):
        establish(cfg, HS_A)


def test_connector_handshake_timeout():
    port = _free_port()
    cfg = EndpointConfig("connector", port=port, handshake_timeout=0.3)
    with pytest.raises(HandshakeTimeout):
        establish(cfg, HS_A)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_tcp_establish_and_exchange():
    port = _free_port()
    listener_cfg = EndpointConfig("listener", "127.0.0.1", port, handshake_timeout=3.0)
    connector_cfg = EndpointConfig("connector", "127.0.0.1", port, handshake_timeout=3.0)
    result: dict[str, object] = {}

    def listen_side():
        try:
            session = establish(listener_cfg, HS_A)
            session.publish("t1", {"hello": 1}, 0.0)
            assert [e.payload for e in session.poll(2.0)] == [{"reply": 2}]
            session.close()
            result["ok"] = True
        except Exception as exc:
            result["ok"] = exc

    thread = threading.Thread(target=listen_side)
    thread.start()
    session = establish(connector_cfg, HS_B)
    received = session.poll(2.0)
    assert [e.payload for e in received] == [{"hello": 1}]
    assert received[0].msg_type == "X"
    session.publish("r1", {"reply": 2}, 0.0)
    thread.join(timeout=5.0)
    session.close()
    assert result["ok"] is True


# ---------------------------------------------------------------------------
# publish / poll

def test_publish_delivery_fidelity():
    a, b = establish_pair()
    a.publish("t1", {"n": 1, "text": "grüß"}, 0.5)
    received = b.poll(1.0)
    assert len(received) == 1
    env = received[0]
    assert env.topic == "t1" and env.msg_type == "X"
    assert env.sequence == 0 and env.sim_time == 0.5
    assert env.payload == {"n": 1, "text": "grüß"}
    a.close(), b.close()


def test_publish_undeclared_topic():
    a, b = establish_pair()
    with pytest.raises(UndeclaredTopic):
        a.publish("nope", {}, 0.0)
    a.close(), b.close()


def test_publish_time_regression():
    a, b = establish_pair()
    a.publish("t1", {}, 1.0)
    with pytest.raises(TimeRegression):
        a.publish("t1", {}, 0.5)
    a.publish("t1", {}, 1.0)       # equal time is fine
    a.publish("t2", {}, 0.0)       # other topics are independent
    a.close(), b.close()


def test_poll_timeout_returns_empty():
    a, b = establish_pair()
    assert b.poll(0.05) == []
    a.close(), b.close()


def test_poll_preserves_arrival_order():
    a, b = establish_pair()
    a.publish("t1", "A", 0.0)
    a.publish("t1", "B", 0.0)
    received = b.poll(1.0)
    assert [e.payload for e in received] == ["A", "B"]
    a.close(), b.close()


def test_ten_thousand_publishes_ordered_and_gap_free():
    a, b = establish_pair()
    for i in range(10_000):
        topic = "t1" if i % 3 else "t2"
        a.publish(topic, i, float(i) * 1e-3)
    received = []
    while len(received) < 10_000:
        batch = b.poll(2.0)
        assert batch, "poll timed out before all messages arrived"
        received.extend(batch)
    assert len(received) == 10_000
    assert [e.payload for e in received] == list(range(10_000))
    for topic in ("t1", "t2"):
        sequences = [e.sequence for e in received if e.topic == topic]
        assert sequences == list(range(len(sequences)))
    assert b.stats["received"] == 10_000
    a.close(), b.close()


def test_unsubscribed_topic_dropped_and_counted():
    pub_only = Handshake("alpha", publications=(("t1", "X"), ("t2", "Y")))
    sub_t1 = Handshake("beta", subscriptions=(("t1", "X"),))
    a, b = establish_pair(pub_only, sub_t1)
    a.publish("t2", "dropme", 0.0)
    a.publish("t1", "keepme", 0.0)
    received = b.poll(1.0)
    assert [e.payload for e in received] == ["keepme"]
    assert b.stats["dropped_unsubscribed"] == 1
    a.close(), b.close()


def test_peer_closed_raised_identically_on_every_poll():
    a, b = establish_pair()
    a.close()
    with pytest.raises(PeerClosed):
        b.poll(1.0)
    with pytest.raises(PeerClosed):
        b.poll(1.0)
    with pytest.raises(PeerClosed):
        b.publish("r1", {}, 0.0)
    b.close()


def test_messages_before_close_still_delivered():
    a, b = establish_pair()
    a.publish("t1", "parting gift", 0.0)
    a.close()
    received = b.poll(1.0)
    assert [e.payload for e in received] == ["parting gift"]
    with pytest.raises(PeerClosed):
        b.poll(1.0)
    b.close()


# ---------------------------------------------------------------------------
# Lock-step exchange

LOCK = SyncPolicy("lock_step", 0.01)


def _lockstep_pair():
    return establish_pair(sync_a=LOCK, sync_b=LOCK)


def test_step_exchange_hundred_steps():
    a, b = _lockstep_pair()
    got_a = got_b = 0
    for k in range(100):
        t = k * 0.01

        def b_side(step_time=t):
            return b.step_exchange([("r1", {"from": "b"})], step_time)

        result: dict[str, list] = {}
        thread = threading.Thread(target=lambda: result.setdefault("b", b_side()))
        thread.start()
        incoming_a = a.step_exchange([("t1", {"from": "a"})], t)
        thread.join(timeout=5.0)
        got_a += len(incoming_a)
        got_b += len(result["b"])
    assert a.step_index == b.step_index == 100
    assert got_a == 100 and got_b == 100
    assert (a.step_index - 1) * 0.01 == pytest.approx(0.99)
    a.close(), b.close()


def test_step_exchange_barrier_only():
    a, b = _lockstep_pair()
    thread_result = {}
    thread = threading.Thread(
        target=lambda: thread_result.setdefault("b", b.step_exchange([], 0.0))
    )
    thread.start()
    incoming = a.step_exchange([], 0.0)
    thread.join(timeout=5.0)
    assert incoming == [] and thread_result["b"] == []
    assert a.step_index == b.step_index == 1
    a.close(), b.close()


def test_step_exchange_requires_lock_step():
    a, b = establish_pair()
    with pytest.raises(Exception):
        a.step_exchange([], 0.0)
    a.close(), b.close()


def test_step_index_mismatch_detected():
    a, b = _lockstep_pair()
    # Inject a rogue marker claiming k=5 straight onto b's wire.
    rogue = MessageEnvelope("__step", "StepMarker", 0, 0.0, {"k": 5, "dt": 0.01})
    a._transport.send(encode_frame(rogue))
    with pytest.raises(StepIndexMismatch):
        b.step_exchange([], 0.0)
    a.close(), b.close()


def test_mismatched_step_dt_detected_first_step():
    fast = SyncPolicy("lock_step", 0.01)
    slow = SyncPolicy("lock_step", 0.02)
    a, b = establish_pair(sync_a=fast, sync_b=slow)
    errors = {}

    def b_side():
        try:
            b.step_exchange([], 0.0)
        except Exception as exc:
            errors["b"] = exc

    thread = threading.Thread(target=b_side)
    thread.start()
    with pytest.raises(StepIndexMismatch):
        a.step_exchange([], 0.0)
    thread.join(timeout=5.0)
    assert isinstance(errors.get("b"), StepIndexMismatch)
    a.close(), b.close()


def test_step_timeout_when_peer_silent():
    cfg = EndpointConfig("listener", port=7000, handshake_timeout=2.0, step_timeout=0.2)
    a, b = establish_pair(sync_a=LOCK, sync_b=LOCK, config=cfg)
    with pytest.raises(StepTimeout):
        a.step_exchange([("t1", {}), ("t2", {})], 0.0)
    a.close(), b.close()


def test_step_exchange_wrong_sim_time_rejected():
    a, b = _lockstep_pair()
    with pytest.raises(ValueError):
        a.step_exchange([], 0.5)
    a.close(), b.close()


def test_no_message_straddles_a_barrier():
    # Messages sent inside step k must come out of the peer's step k, never
    # step k+1, even when the next step's bytes are already buffered (side a
    # races ahead as soon as its barrier releases).
    a, b = _lockstep_pair()

    def a_side():
        a.step_exchange([("t1", "k0")], 0.0)
        a.step_exchange([("t1", "k1")], 0.01)

    thread = threading.Thread(target=a_side)
    thread.start()
    first = b.step_exchange([], 0.0)
    import time as _time

    _time.sleep(0.2)     # let a's step-1 bytes land in b's buffer
    second = b.step_exchange([], 0.01)
    thread.join(timeout=5.0)
    assert [e.payload for e in first] == ["k0"]
    assert [e.payload for e in second] == ["k1"]
    a.close(), b.close()


def test_lockstep_transcripts_bit_identical_across_runs():
    # The same scripted publish schedule must produce byte-identical received
    # transcripts on both sides, run after run.
    def run_once() -> tuple[list[bytes], list[bytes]]:
        a, b = _lockstep_pair()
        seen_b: list[bytes] = []

        def b_side():
            for k in range(20):
                incoming = b.step_exchange([("r1", {"from_b": k})], k * 0.01)
                seen_b.extend(encode_frame(e) for e in incoming)

        thread = threading.Thread(target=b_side)
        thread.start()
        seen_a: list[bytes] = []
        for k in range(20):
            incoming = a.step_exchange([("t1", {"from_a": k}), ("t2", [k])], k * 0.01)
            seen_a.extend(encode_frame(e) for e in incoming)
        thread.join(timeout=10.0)
        a.close(), b.close()
        return seen_a, seen_b

    first = run_once()
    second = run_once()
    assert first == second
    assert len(first[0]) == 20 and len(first[1]) == 40


def test_session_stats_summary(caplog):
    import logging

    a, b = establish_pair()
    a.publish("t1", {}, 0.0)
    b.poll(1.0)
    with caplog.at_level(logging.INFO, logger="coneloop.bridge"):
        a.close()
        b.close()
    assert a.stats["sent"] == 1
    assert b.stats["received"] == 1
    summaries = [r.message for r in caplog.records if "session closed" in r.message]
    assert len(summaries) == 2


# ---------------------------------------------------------------------------
# Config validation

def test_endpoint_config_validation():
    with pytest.raises(ValueError):
        EndpointConfig("listener", port=0)
    with pytest.raises(ValueError):
        EndpointConfig("listener", port=70000)
    with pytest.raises(ValueError):
        EndpointConfig("server", port=1000)
    with pytest.raises(ValueError):
        EndpointConfig("listener", port=1000, handshake_timeout=0.0)


def test_sync_policy_validation():
    with pytest.raises(ValueError):
        SyncPolicy("lock_step")
    with pytest.raises(ValueError):
        SyncPolicy("lock_step", 0.0)
    with pytest.raises(ValueError):
        SyncPolicy("warp")
    SyncPolicy("free_running")
