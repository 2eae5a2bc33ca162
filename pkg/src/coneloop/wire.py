"""Length-prefixed canonical-JSON framing for all bridge traffic.

Frame layout::

    +-----------------+--------------------------------------+
    | length (u32 BE) | body: one envelope, canonical JSON   |
    +-----------------+--------------------------------------+

``length`` is the exact byte count of the UTF-8 body and must not exceed
16 MiB. The body is a JSON object with exactly the keys ``topic``,
``msg_type``, ``sequence``, ``sim_time`` and ``payload``.

Canonical JSON means: object keys sorted by code point (identical to UTF-8
byte order), no insignificant whitespace, floats rendered as their shortest
round-trip decimal, raw UTF-8 (no ``\\uXXXX`` escaping of non-ASCII). Two
equal envelopes therefore always serialize to identical bytes, which is what
makes golden byte-level tests possible. See PROTOCOL.md for worked dumps.
"""

from __future__ import annotations

import json
import math
import struct
import unicodedata
from dataclasses import dataclass
from typing import Any, Callable

MAX_FRAME_BYTES = 16 * 1024 * 1024
HEADER_BYTES = 4
MAX_NAME_BYTES = 256

ENVELOPE_KEYS = frozenset({"topic", "msg_type", "sequence", "sim_time", "payload"})


class WireError(Exception):
    """Base class for framing and serialization errors."""


class EnvelopeInvalid(WireError):
    """An envelope violates its field constraints or is not JSON-serializable."""


class FrameTooLarge(WireError):
    """Frame body exceeds the 16 MiB limit (encoding or declared on the wire)."""


class MalformedBody(WireError):
    """Frame body is not UTF-8, not JSON, or not a well-formed envelope object."""


class DuplicateMsgType(WireError):
    """A codec for this msg_type is already registered."""


def _check_name(value: object, what: str) -> None:
    if type(value) is not str or not value:
        raise EnvelopeInvalid(f"{what} must be a non-empty string")
    try:
        encoded = value.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise EnvelopeInvalid(f"{what} is not encodable as UTF-8") from exc
    if len(encoded) > MAX_NAME_BYTES:
        raise EnvelopeInvalid(f"{what} exceeds {MAX_NAME_BYTES} bytes")
    for ch in value:
        if unicodedata.category(ch) == "Cc":
            raise EnvelopeInvalid(f"{what} contains a control character")


def _check_payload(value: Any) -> None:
    # Iterative walk: rejects anything that would not survive a JSON round
    # trip unchanged (exact types only; bool checked before int on purpose).
    stack = [value]
    while stack:
        node = stack.pop()
        if node is None or type(node) in (str, bool, int):
            continue
        if type(node) is float:
            if not math.isfinite(node):
                raise EnvelopeInvalid("payload contains a non-finite number")
            continue
        if type(node) is dict:
            for key, item in node.items():
                if type(key) is not str:
                    raise EnvelopeInvalid("payload object keys must be strings")
                stack.append(item)
            continue
        if type(node) is list:
            stack.extend(node)
            continue
        raise EnvelopeInvalid(
            f"payload contains unsupported type {type(node).__name__}"
        )


@dataclass(frozen=True)
class MessageEnvelope:
    """One timestamped, topic-addressed JSON payload crossing the bridge.

    ``sim_time`` is seconds of simulated time as a finite non-negative float
    (integers are coerced). ``payload`` may be any JSON value: object, array,
    string, number, boolean or null.
    """

    topic: str
    msg_type: str
    sequence: int
    sim_time: float
    payload: Any = None

    def __post_init__(self) -> None:
        _check_name(self.topic, "topic")
        _check_name(self.msg_type, "msg_type")
        if type(self.sequence) is not int or self.sequence < 0:
            raise EnvelopeInvalid("sequence must be a non-negative integer")
        if isinstance(self.sim_time, bool) or not isinstance(self.sim_time, (int, float)):
            raise EnvelopeInvalid("sim_time must be a finite non-negative number")
        sim_time = float(self.sim_time)
        if not math.isfinite(sim_time) or sim_time < 0.0:
            raise EnvelopeInvalid("sim_time must be a finite non-negative number")
        object.__setattr__(self, "sim_time", sim_time)
        _check_payload(self.payload)


def canonical_json(value: Any) -> bytes:
    """Serialize a JSON value to canonical UTF-8 bytes.

    Sorted keys, compact separators, shortest round-trip floats, raw UTF-8.
    Raises ValueError for NaN/Infinity (canonical JSON cannot express them).
    """
    text = json.dumps(
        value,
        ensure_ascii=False,
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    )
    return text.encode("utf-8")


def encode_frame(envelope: MessageEnvelope) -> bytes:
    """Encode an envelope as a length-prefixed canonical-JSON frame.

    Pure function: equal envelopes produce identical bytes on every call.
    """
    if not isinstance(envelope, MessageEnvelope):
        raise EnvelopeInvalid("expected a MessageEnvelope")
    body_obj = {
        "topic": envelope.topic,
        "msg_type": envelope.msg_type,
        "sequence": envelope.sequence,
        "sim_time": envelope.sim_time,
        "payload": envelope.payload,
    }
    try:
        body = canonical_json(body_obj)
    except (TypeError, ValueError, RecursionError, UnicodeEncodeError) as exc:
        raise EnvelopeInvalid(f"envelope is not serializable: {exc}") from exc
    if len(body) > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"body is {len(body)} bytes (limit {MAX_FRAME_BYTES})")
    return struct.pack(">I", len(body)) + body


def _reject_duplicate_keys(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    obj: dict[str, Any] = {}
    for key, value in pairs:
        if key in obj:
            raise MalformedBody(f"duplicate key {key!r} in body object")
        obj[key] = value
    return obj


def decode_frame(buffer: bytes | bytearray) -> tuple[MessageEnvelope, int] | None:
    """Decode one frame from the head of ``buffer``.

    Incremental: returns None (read more) when the buffer holds less than the
    4-byte prefix or fewer bytes than the declared length; otherwise returns
    the decoded envelope and the number of bytes consumed (4 + length).
    Trailing bytes are never touched. Never raises anything but the typed
    errors below, no matter what bytes it is fed.

    Raises:
        FrameTooLarge: the prefix declares a body over 16 MiB.
        MalformedBody: body is not UTF-8 / not JSON / not a valid envelope
            object (missing, duplicate, extra or ill-typed keys).
    """
    if len(buffer) < HEADER_BYTES:
        return None
    (length,) = struct.unpack_from(">I", buffer, 0)
    if length > MAX_FRAME_BYTES:
        raise FrameTooLarge(f"declared body of {length} bytes (limit {MAX_FRAME_BYTES})")
    total = HEADER_BYTES + length
    if len(buffer) < total:
        return None
    body = bytes(buffer[HEADER_BYTES:total])
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedBody("body is not valid UTF-8") from exc
    try:
        obj = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except MalformedBody:
        raise
    except RecursionError as exc:
        raise MalformedBody("body nests too deeply") from exc
    except ValueError as exc:
        raise MalformedBody(f"body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedBody("body must be a JSON object")
    keys = set(obj)
    if keys != ENVELOPE_KEYS:
        missing = sorted(ENVELOPE_KEYS - keys)
        extra = sorted(keys - ENVELOPE_KEYS)
        raise MalformedBody(f"bad envelope keys (missing={missing}, extra={extra})")
    try:
        envelope = MessageEnvelope(
            topic=obj["topic"],
            msg_type=obj["msg_type"],
            sequence=obj["sequence"],
            sim_time=obj["sim_time"],
            payload=obj["payload"],
        )
    except EnvelopeInvalid as exc:
        raise MalformedBody(f"body is not a valid envelope: {exc}") from exc
    return envelope, total


class StreamDecoder:
    """Incremental decoder over a growing byte stream.

    Feed arbitrary chunks; complete envelopes come out in order. Splitting a
    stream at any byte boundary yields the same envelope sequence as one-shot
    decoding.
    """

    def __init__(self) -> None:
        self._buffer = bytearray()

    def feed(self, data: bytes) -> list[MessageEnvelope]:
        self._buffer.extend(data)
        out: list[MessageEnvelope] = []
        while True:
            result = decode_frame(self._buffer)
            if result is None:
                return out
            envelope, consumed = result
            del self._buffer[:consumed]
            out.append(envelope)

    @property
    def pending_bytes(self) -> int:
        return len(self._buffer)


class CodecRegistry:
    """Maps msg_type names to payload encode/decode functor pairs.

    An encoder turns a domain value into a JSON payload, a decoder does the
    reverse; ``decode(encode(v))`` must reproduce ``v`` for every registered
    pair. Unregistered msg_types pass through untouched, so arbitrary JSON can
    always cross the bridge. Registrations happen during setup; the registry
    is treated as immutable afterwards.
    """

    def __init__(self) -> None:
        self._codecs: dict[str, tuple[Callable[[Any], Any], Callable[[Any], Any]]] = {}

    def register(
        self,
        msg_type: str,
        encoder: Callable[[Any], Any],
        decoder: Callable[[Any], Any],
    ) -> None:
        if msg_type in self._codecs:
            raise DuplicateMsgType(f"codec for {msg_type!r} already registered")
        self._codecs[msg_type] = (encoder, decoder)

    def registered(self, msg_type: str) -> bool:
        return msg_type in self._codecs

    def msg_types(self) -> list[str]:
        return sorted(self._codecs)

    def encode_payload(self, msg_type: str, value: Any) -> Any:
        codec = self._codecs.get(msg_type)
        return codec[0](value) if codec else value

    def decode_payload(self, msg_type: str, payload: Any) -> Any:
        codec = self._codecs.get(msg_type)
        return codec[1](payload) if codec else payload
