"""Point-to-point pub/sub session between a simulator and an autonomy stack.

Exactly two peers talk over a framed byte stream (TCP by default, an
in-memory loopback for tests). The first frame each side sends is a
handshake on the reserved topic ``__handshake`` carrying its protocol
version, node name and topic tables. After that, data envelopes flow on
declared topics with gap-free per-topic sequences.

Synchronization is either free-running (poll whenever) or lock-step: each
simulated step both sides send their outgoing envelopes followed by a step
marker on ``__step`` and block until the peer's matching marker arrives.
Because every envelope is ordered relative to the markers, lock-step runs
are deterministic: the same scripted publishes produce bit-identical
transcripts on every run.

A session is driven from a single caller thread; it owns its transport.
Envelopes arriving on topics the receiver did not subscribe to are dropped
and counted, not errored. A dropped transport ends the session for good --
reconnection is deliberately not attempted, since a deterministic run cannot
survive a silent gap.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Any, Iterable

from .wire import MessageEnvelope, StreamDecoder, WireError, encode_frame

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
HANDSHAKE_TOPIC = "__handshake"
HANDSHAKE_MSG_TYPE = "Handshake"
STEP_TOPIC = "__step"
STEP_MSG_TYPE = "StepMarker"

_RECV_CHUNK = 65536


class BridgeError(Exception):
    """Base class for session and transport errors."""


class TransportError(BridgeError):
    """The byte stream failed (connect, send, receive or malformed framing)."""


class HandshakeTimeout(BridgeError):
    """No peer arrived (or no handshake frame) within handshake_timeout."""


class VersionMismatch(BridgeError):
    """Peer speaks a different protocol version."""


class UndeclaredTopic(BridgeError):
    """Publish on a topic absent from the local publications table."""


class TimeRegression(BridgeError):
    """Publish with sim_time below the topic's last published sim_time."""


class PeerClosed(BridgeError):
    """The peer closed the stream; raised identically on every later call."""


class StepTimeout(BridgeError):
    """The peer's step marker did not arrive within step_timeout."""


class StepIndexMismatch(BridgeError):
    """The peer's step marker disagrees on step index or step size."""


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to reach the peer."""

    role: str                      # "listener" | "connector"
    host: str = "127.0.0.1"
    port: int = 7788
    node_name: str = "node"
    handshake_timeout: float = 5.0
    step_timeout: float = 5.0

    def __post_init__(self) -> None:
        if self.role not in ("listener", "connector"):
            raise ValueError(f"role must be 'listener' or 'connector', got {self.role!r}")
        if not (1 <= self.port <= 65535):
            raise ValueError(f"port must be in [1, 65535], got {self.port}")
        if self.handshake_timeout <= 0 or self.step_timeout <= 0:
            raise ValueError("timeouts must be positive")


@dataclass(frozen=True)
class SyncPolicy:
    """Session time discipline: lock_step (barrier per step) or free_running."""

    mode: str = "lock_step"
    step_dt: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("lock_step", "free_running"):
            raise ValueError(f"mode must be 'lock_step' or 'free_running', got {self.mode!r}")
        if self.mode == "lock_step":
            if self.step_dt is None or not self.step_dt > 0:
                raise ValueError("lock_step requires step_dt > 0")


@dataclass(frozen=True)
class Handshake:
    """First frame on the wire: identity and topic tables."""

    node_name: str
    publications: tuple[tuple[str, str], ...] = ()
    subscriptions: tuple[tuple[str, str], ...] = ()
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "publications", tuple((str(t), str(m)) for t, m in self.publications)
        )
        object.__setattr__(
            self, "subscriptions", tuple((str(t), str(m)) for t, m in self.subscriptions)
        )

    def to_payload(self) -> dict[str, Any]:
        return {
            "protocol_version": self.protocol_version,
            "node_name": self.node_name,
            "publications": [[t, m] for t, m in self.publications],
            "subscriptions": [[t, m] for t, m in self.subscriptions],
        }

    @classmethod
    def from_payload(cls, payload: Any) -> "Handshake":
        try:
            return cls(
                node_name=payload["node_name"],
                publications=tuple((t, m) for t, m in payload["publications"]),
                subscriptions=tuple((t, m) for t, m in payload["subscriptions"]),
                protocol_version=payload["protocol_version"],
            )
        except (TypeError, KeyError, ValueError) as exc:
            raise TransportError(f"malformed handshake payload: {exc}") from exc


# ---------------------------------------------------------------------------
# Transports: a duplex byte stream. recv returns None on timeout and b"" on
# end-of-stream, mirroring socket semantics.

class TcpTransport:
    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sock = sock

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def recv(self, timeout: float) -> bytes | None:
        self._sock.settimeout(max(timeout, 1e-4))
        try:
            return self._sock.recv(_RECV_CHUNK)
        except socket.timeout:
            return None
        except OSError as exc:
            raise TransportError(f"recv failed: {exc}") from exc

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class LoopbackTransport:
    """One end of an in-memory duplex pipe (see :func:`loopback_pair`)."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._chunks: deque[bytes] = deque()
        self._eof = False
        self.peer: "LoopbackTransport | None" = None

    def send(self, data: bytes) -> None:
        peer = self.peer
        assert peer is not None
        with peer._cond:
            if peer._eof:
                raise TransportError("peer endpoint is closed")
            peer._chunks.append(bytes(data))
            peer._cond.notify_all()

    def recv(self, timeout: float) -> bytes | None:
        deadline = time.monotonic() + timeout
        with self._cond:
            while not self._chunks:
                if self._eof:
                    return b""
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                self._cond.wait(remaining)
            return self._chunks.popleft()

    def close(self) -> None:
        with self._cond:
            self._eof = True
            self._cond.notify_all()
        peer = self.peer
        if peer is not None:
            with peer._cond:
                peer._eof = True
                peer._cond.notify_all()


def loopback_pair() -> tuple[LoopbackTransport, LoopbackTransport]:
    a, b = LoopbackTransport(), LoopbackTransport()
    a.peer, b.peer = b, a
    return a, b


def _tcp_listen(config: EndpointConfig) -> TcpTransport:
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        server.bind((config.host, config.port))
        server.listen(1)
        server.settimeout(config.handshake_timeout)
        conn, _ = server.accept()
    except socket.timeout as exc:
        raise HandshakeTimeout(
            f"no connector within {config.handshake_timeout}s on "
            f"{config.host}:{config.port}"
        ) from exc
    except OSError as exc:
        raise TransportError(f"listen failed on {config.host}:{config.port}: {exc}") from exc
    finally:
        server.close()
    return TcpTransport(conn)


def _tcp_connect(config: EndpointConfig) -> TcpTransport:
    deadline = time.monotonic() + config.handshake_timeout
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise HandshakeTimeout(
                f"could not reach {config.host}:{config.port} within "
                f"{config.handshake_timeout}s"
            )
        try:
            sock = socket.create_connection(
                (config.host, config.port), timeout=min(remaining, 1.0)
            )
            return TcpTransport(sock)
        except (ConnectionRefusedError, socket.timeout, ConnectionAbortedError):
            time.sleep(0.05)
        except OSError as exc:
            raise TransportError(f"connect to {config.host}:{config.port} failed: {exc}") from exc


# ---------------------------------------------------------------------------
# Session

class Session:
    """An established bridge connection. Create via :func:`establish`.

    Single-caller: the session may move between threads but must not be
    called concurrently. Statistics count data envelopes only (handshake and
    step markers are protocol overhead).
    """

    def __init__(
        self,
        transport,
        local: Handshake,
        peer: Handshake,
        sync: SyncPolicy,
        step_timeout: float = 5.0,
    ):
        self._transport = transport
        self.local = local
        self.peer = peer
        self.sync = sync
        self._step_timeout = step_timeout
        self._decoder = StreamDecoder()
        self._events: deque[MessageEnvelope] = deque()
        self._pub_types = dict(local.publications)
        self._sub_topics = {topic for topic, _ in local.subscriptions}
        self._sequences: dict[str, int] = {}
        self._last_times: dict[str, float] = {}
        self._step_index = 0
        self._peer_closed = False
        self._closed = False
        self.stats = {"sent": 0, "received": 0, "dropped_unsubscribed": 0}

    # -- internals ----------------------------------------------------------

    def _send_envelope(self, envelope: MessageEnvelope) -> None:
        self._transport.send(encode_frame(envelope))

    def _next_envelope(
        self, topic: str, msg_type: str, payload: Any, sim_time: float
    ) -> MessageEnvelope:
        seq = self._sequences.get(topic, 0)
        envelope = MessageEnvelope(topic, msg_type, seq, sim_time, payload)
        self._sequences[topic] = seq + 1
        self._last_times[topic] = envelope.sim_time
        return envelope

    def _pump(self, timeout: float) -> bool:
        """Read once from the transport; True if any envelope arrived.

        End-of-stream only sets the peer-closed flag: envelopes that arrived
        ahead of the close stay deliverable, and callers raise PeerClosed
        once their buffers run dry.
        """
        if self._peer_closed:
            return False
        data = self._transport.recv(timeout)
        if data is None:
            return False
        if data == b"":
            self._peer_closed = True
            return False
        try:
            envelopes = self._decoder.feed(data)
        except WireError as exc:
            raise TransportError(f"peer sent an invalid frame: {exc}") from exc
        self._events.extend(envelopes)
        return bool(envelopes)

    def _take_data(self) -> list[MessageEnvelope]:
        """Pop leading data envelopes off the event queue (stop at a marker)."""
        out: list[MessageEnvelope] = []
        while self._events and self._events[0].topic != STEP_TOPIC:
            envelope = self._events.popleft()
            if envelope.topic in self._sub_topics:
                self.stats["received"] += 1
                out.append(envelope)
            else:
                self.stats["dropped_unsubscribed"] += 1
        return out

    # -- public API ----------------------------------------------------------

    def publish(self, topic: str, payload: Any, sim_time: float) -> None:
        """Send one envelope on a declared topic.

        Sequence numbers are assigned per topic starting at 0; sim_time must
        not regress on the topic. Delivery is in publication order.
        """
        if self._peer_closed:
            raise PeerClosed("peer closed the stream")
        msg_type = self._pub_types.get(topic)
        if msg_type is None:
            raise UndeclaredTopic(f"topic {topic!r} is not in the local publications table")
        last = self._last_times.get(topic)
        if last is not None and sim_time < last:
            raise TimeRegression(
                f"sim_time {sim_time} is below {last} previously published on {topic!r}"
            )
        self._send_envelope(self._next_envelope(topic, msg_type, payload, sim_time))
        self.stats["sent"] += 1

    def _drain_available(self) -> None:
        while self._pump(0.0):
            pass

    def poll(self, max_wait: float) -> list[MessageEnvelope]:
        """All envelopes that arrived for subscribed topics, in arrival order.

        Waits up to max_wait for the first arrival, then drains everything
        already buffered. Returns an empty list on timeout. Raises PeerClosed
        once the stream has ended and everything delivered before the close
        has been handed out.
        """
        deadline = time.monotonic() + max_wait
        self._drain_available()
        out = self._take_data()
        while not out:
            if self._peer_closed:
                raise PeerClosed("peer closed the stream")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return out
            self._pump(remaining)
            self._drain_available()
            out = self._take_data()
        return out

    def step_exchange(
        self, outgoing: Iterable[tuple[str, Any]], sim_time: float
    ) -> list[MessageEnvelope]:
        """One lock-step barrier: send, mark, block for the peer's marker.

        Sends every (topic, payload) in order, then a step marker carrying the
        step index and step size, then blocks until the peer's matching marker
        arrives. Returns every subscribed envelope the peer sent before that
        marker; later envelopes stay queued for the next step.
        """
        if self.sync.mode != "lock_step":
            raise BridgeError("step_exchange requires a lock_step sync policy")
        k = self._step_index
        expected_time = k * self.sync.step_dt
        if abs(sim_time - expected_time) > 1e-9:
            raise ValueError(
                f"step {k} expects sim_time {expected_time}, got {sim_time}"
            )
        for topic, payload in outgoing:
            self.publish(topic, payload, sim_time)
        marker = self._next_envelope(
            STEP_TOPIC, STEP_MSG_TYPE, {"k": k, "dt": self.sync.step_dt}, sim_time
        )
        self._send_envelope(marker)

        collected: list[MessageEnvelope] = []
        deadline = time.monotonic() + self._step_timeout
        while True:
            collected.extend(self._take_data())
            if self._events and self._events[0].topic == STEP_TOPIC:
                peer_marker = self._events.popleft()
                self._check_marker(peer_marker, k)
                break
            if self._peer_closed:
                raise PeerClosed(f"peer closed before its step {k} marker")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise StepTimeout(
                    f"peer marker for step {k} absent after {self._step_timeout}s"
                )
            self._pump(remaining)
        self._step_index = k + 1
        return collected

    def _check_marker(self, marker: MessageEnvelope, expected_k: int) -> None:
        payload = marker.payload
        if not isinstance(payload, dict) or "k" not in payload:
            raise StepIndexMismatch(f"malformed step marker payload: {payload!r}")
        if payload["k"] != expected_k:
            raise StepIndexMismatch(
                f"peer sent step marker k={payload['k']} when k={expected_k} expected"
            )
        peer_dt = payload.get("dt")
        if peer_dt != self.sync.step_dt:
            raise StepIndexMismatch(
                f"peer step_dt {peer_dt} differs from local {self.sync.step_dt}"
            )

    @property
    def step_index(self) -> int:
        return self._step_index

    def close(self) -> None:
        """Close the transport and emit the statistics summary line."""
        if self._closed:
            return
        self._closed = True
        self._transport.close()
        summary = dict(self.stats)
        summary["node"] = self.local.node_name
        logger.info("session closed: %s", json.dumps(summary, sort_keys=True))

    def __enter__(self) -> "Session":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def establish(
    config: EndpointConfig,
    local: Handshake,
    sync: SyncPolicy | None = None,
    transport=None,
) -> Session:
    """Connect (or accept), exchange handshakes, and return the session.

    The handshake is the first frame on the wire in both directions; protocol
    versions must be equal. Pass ``transport`` to run over a pre-built stream
    (e.g. a loopback half) instead of TCP.

    Raises:
        HandshakeTimeout: no peer or no handshake within handshake_timeout.
        VersionMismatch: peer protocol version differs.
        TransportError: the stream failed or the first frame was not a
            handshake.
    """
    if transport is None:
        transport = _tcp_listen(config) if config.role == "listener" else _tcp_connect(config)
    try:
        hello = MessageEnvelope(
            HANDSHAKE_TOPIC, HANDSHAKE_MSG_TYPE, 0, 0.0, local.to_payload()
        )
        transport.send(encode_frame(hello))

        decoder = StreamDecoder()
        deadline = time.monotonic() + config.handshake_timeout
        leftovers: list[MessageEnvelope] = []
        peer_env: MessageEnvelope | None = None
        while peer_env is None:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise HandshakeTimeout(
                    f"no handshake from peer within {config.handshake_timeout}s"
                )
            data = transport.recv(remaining)
            if data is None:
                continue
            if data == b"":
                raise TransportError("peer closed during handshake")
            try:
                envelopes = decoder.feed(data)
            except WireError as exc:
                raise TransportError(f"invalid frame during handshake: {exc}") from exc
            if envelopes:
                peer_env = envelopes[0]
                leftovers = envelopes[1:]
        if peer_env.topic != HANDSHAKE_TOPIC:
            raise TransportError(
                f"first frame must be the handshake, got topic {peer_env.topic!r}"
            )
        peer = Handshake.from_payload(peer_env.payload)
        if peer.protocol_version != local.protocol_version:
            raise VersionMismatch(
                f"local protocol version {local.protocol_version}, "
                f"peer {peer.protocol_version}"
            )
    except BaseException:
        transport.close()
        raise

    session = Session(
        transport, local, peer, sync or SyncPolicy("free_running"), config.step_timeout
    )
    # Hand over bytes and envelopes that arrived behind the handshake frame.
    session._decoder = decoder
    session._events.extend(leftovers)
    return session
