"""Wire protocol: u32 little-endian length prefix + UTF-8 JSON message.

Image payloads travel as base64 raw RGB8 with explicit dims — no image codec,
so a round trip is bit-exact regardless of the peer's language.
"""

from __future__ import annotations

import base64
import json
import struct

import numpy as np

LEN = struct.Struct("<I")
MAX_MESSAGE_BYTES = 128 * 1024 * 1024


class ProtocolError(Exception):
    """The inbound bytes violate the framing or message schema."""


class ConnectionClosed(Exception):
    """The peer closed the stream."""


def encode(msg: dict) -> bytes:
    body = json.dumps(msg, separators=(",", ":")).encode("utf-8")
    return LEN.pack(len(body)) + body


def read_exact(read, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = read(n - len(buf))
        if not chunk:
            raise ConnectionClosed("peer closed mid-message")
        buf += chunk
    return buf


def read_message(read) -> dict:
    head = read(LEN.size)
    if not head:
        raise ConnectionClosed("end of stream")
    head += read_exact(read, LEN.size - len(head)) if len(head) < LEN.size else b""
    (length,) = LEN.unpack(head)
    if length > MAX_MESSAGE_BYTES:
        raise ProtocolError(f"frame length {length} exceeds limit")
    body = read_exact(read, length)
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ProtocolError(f"frame body is not JSON: {e}") from e
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError("message must be an object with a string 'type'")
    return msg


def decode_image(msg: dict) -> np.ndarray:
    """Extract the (h, w, 3) uint8 image from a detect/classify request."""
    try:
        w = int(msg["w"])
        h = int(msg["h"])
        raw = base64.b64decode(msg["rgb8_b64"], validate=True)
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"bad image payload: {e}") from e
    if w < 1 or h < 1:
        raise ProtocolError(f"bad image dims {w}x{h}")
    if len(raw) != w * h * 3:
        raise ProtocolError(
            f"payload length {len(raw)} != w*h*3 = {w * h * 3} for {w}x{h}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
