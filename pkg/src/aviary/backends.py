"""Inference backends behind one contract: detect() and classify().

Two implementations: a deterministic mock driven by per-clip JSON fixture
files, and a client for an external model sidecar speaking a length-prefixed
JSON wire protocol (u32 little-endian byte length, then UTF-8 JSON).  The
image payload on the wire is base64 raw RGB8 plus dims — no codec involved,
so round-trips are bit-exact in any sidecar language.

Message types:
    hello{labels}                      handshake, echoed by the sidecar
    detect_req{w,h,rgb8_b64,clip_id,frame_index}
    detect_resp{detections:[{x1,y1,x2,y2,score,class_id}]}
    classify_req{w,h,rgb8_b64}
    classify_resp{probs:[...]} or {logits:[...]}
    error{code,message}
"""

from __future__ import annotations

import base64
import json
import logging
import shlex
import socket
import struct
import subprocess

from pathlib import Path



from .gating import BBox, Detection, ProbVector, softmax
from .media import FrameImage

log = logging.getLogger("aviary.backends")

DETECT_TIMEOUT_S = 10.0
CLASSIFY_TIMEOUT_S = 5.0
RETRIES = 1

HEALTH_OK = "ok"
HEALTH_DEGRADED = "degraded"
HEALTH_DOWN = "down"

_LEN = struct.Struct("<I")
MAX_MESSAGE_BYTES = 128 * 1024 * 1024


class BackendError(Exception):
    """Base for backend failures."""


class BackendRetriableError(BackendError):
    """Transient failure (timeout, dropped connection); safe to retry."""


class BackendProtocolError(BackendError):
    """The peer violated the wire contract; raw payload is in the message."""


# --- Wire framing -------------------------------------------------------------

def encode_message(msg: dict) -> bytes:
    body = json.dumps(msg, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(body)) + body


def read_exact(read, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = read(n - len(buf))
        if not chunk:
            raise BackendRetriableError("connection closed mid-message")
        buf += chunk
    return buf


def decode_stream(read) -> dict:
    """Read one length-prefixed JSON message via read(n) -> bytes."""
    (length,) = _LEN.unpack(read_exact(read, _LEN.size))
    if length > MAX_MESSAGE_BYTES:
        raise BackendProtocolError(f"message length {length} exceeds limit")
    body = read_exact(read, length)
    try:
        msg = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise BackendProtocolError(f"malformed message: {e}; payload={body[:200]!r}") from e
    if not isinstance(msg, dict) or "type" not in msg:
        raise BackendProtocolError(f"message missing type: {body[:200]!r}")
    return msg


def frame_payload(frame: FrameImage) -> dict:
    return {
        "w": frame.width,
        "h": frame.height,
        "rgb8_b64": base64.b64encode(frame.tobytes()).decode("ascii"),
    }


# --- Response validation -------------------------------------------------------

def validate_detections(raw: list, frame_w: int, frame_h: int) -> list[Detection]:
    """Normalize raw detection dicts into Detection values.

    Swapped coordinates are reordered (flag ``normalized``), boxes are clamped
    into [0,w]x[0,h] (flag ``clamped``), scores clamped to [0,1].  Boxes with
    no extent left after clamping are dropped.
    """
    out: list[Detection] = []
    for i, d in enumerate(raw):
        try:
            x1, y1, x2, y2 = (float(d[k]) for k in ("x1", "y1", "x2", "y2"))
            score = float(d["score"])
            class_id = int(d["class_id"])
        except (KeyError, TypeError, ValueError) as e:
            raise BackendProtocolError(f"detection #{i} malformed: {d!r} ({e})") from e
        flags = []
        if x2 < x1 or y2 < y1:
            x1, x2 = min(x1, x2), max(x1, x2)
            y1, y2 = min(y1, y2), max(y1, y2)
            flags.append("normalized")
        cx1, cy1 = max(0.0, x1), max(0.0, y1)
        cx2, cy2 = min(float(frame_w), x2), min(float(frame_h), y2)
        if (cx1, cy1, cx2, cy2) != (x1, y1, x2, y2):
            flags.append("clamped")
        if cx2 <= cx1 or cy2 <= cy1:
            log.warning("dropping zero-extent detection after clamp: %r", d)
            continue
        score = min(1.0, max(0.0, score))
        out.append(Detection(
            bbox=BBox(cx1, cy1, cx2, cy2),
            score=score,
            class_id=class_id,
            flags=tuple(flags),
        ))
    return out


def validate_probs(msg: dict, n_labels: int) -> ProbVector:
    if "probs" in msg:
        values = msg["probs"]
        if len(values) != n_labels:
            raise BackendProtocolError(
                f"classify response length mismatch: expected {n_labels}, got {len(values)}"
            )
        return ProbVector(tuple(float(v) for v in values))
    if "logits" in msg:
        values = msg["logits"]
        if len(values) != n_labels:
            raise BackendProtocolError(
                f"classify response length mismatch: expected {n_labels}, got {len(values)}"
            )
        return softmax([float(v) for v in values])
    raise BackendProtocolError(f"classify response carries neither probs nor logits: {msg}")


# --- Mock backend --------------------------------------------------------------

class MockBackend:
    """Deterministic stand-in driven by ground-truth fixture files.

    ``<fixture_root>/<clip_id>.json`` holds per-frame boxes and a species
    label; lookups fall back to the clip id's content-hash prefix (the part
    before the first '-') so fixtures can be written before a job id exists.
    Classification spreads ``1 - label_conf`` uniformly over the other
    classes.  Pure function of (fixture root, clip_id, frame_index).
    """

    kind = "mock"

    def __init__(self, fixture_root: str, labels: tuple[str, ...]):
        self.fixture_root = Path(fixture_root) if fixture_root else None
        self.labels = labels
        self._cache: dict[str, dict | None] = {}

    def _fixture(self, clip_id: str) -> dict | None:
        if clip_id in self._cache:
            return self._cache[clip_id]
        data = None
        if self.fixture_root is not None:
            candidates = [self.fixture_root / f"{clip_id}.json"]
            prefix = clip_id.split("-", 1)[0]
            if prefix != clip_id:
                candidates.append(self.fixture_root / f"{prefix}.json")
            for path in candidates:
                if path.is_file():
                    data = json.loads(path.read_text())
                    break
        self._cache[clip_id] = data
        return data

    def _frame_entry(self, frame: FrameImage) -> dict | None:
        fx = self._fixture(frame.clip_id)
        if not fx:
            return None
        return fx.get("frames", {}).get(str(frame.frame_index))

    def detect(self, frame: FrameImage) -> list[Detection]:
        entry = self._frame_entry(frame)
        if not entry:
            return []
        raw = [
            {
                "x1": d["bbox"][0], "y1": d["bbox"][1],
                "x2": d["bbox"][2], "y2": d["bbox"][3],
                "score": d["score"], "class_id": d["class_id"],
            }
            for d in entry.get("detections", [])
        ]
        return validate_detections(raw, frame.width, frame.height)

    def classify(self, crop: FrameImage) -> ProbVector:
        n = len(self.labels)
        entry = self._frame_entry(crop)
        if not entry or "label" not in entry:
            return ProbVector(tuple(1.0 / n for _ in range(n)))
        label = entry["label"]
        conf = float(entry.get("label_conf", 1.0))
        if label not in self.labels:
            raise BackendError(f"fixture label {label!r} not in configured species_labels")
        idx = self.labels.index(label)
        rest = (1.0 - conf) / (n - 1) if n > 1 else 0.0
        return ProbVector(tuple(conf if i == idx else rest for i in range(n)))

    def health_check(self) -> str:
        if self.fixture_root is None:
            return HEALTH_OK  # no fixtures configured: empty-world mock
        return HEALTH_OK if self.fixture_root.is_dir() else HEALTH_DOWN

    def close(self) -> None:
        pass


# --- Sidecar backend -------------------------------------------------------------

class _SocketChannel:
    def __init__(self, host: str, port: int):
        self.sock = socket.create_connection((host, port), timeout=DETECT_TIMEOUT_S)

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv_message(self, timeout: float) -> dict:
        self.sock.settimeout(timeout)
        try:
            return decode_stream(self.sock.recv)
        except socket.timeout as e:
            raise BackendRetriableError("sidecar timed out") from e

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class _ProcessChannel:
    """Sidecar as a child process; the wire runs over its stdio."""

    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

    def send(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BackendRetriableError(f"sidecar process gone: {e}") from e

    def recv_message(self, timeout: float) -> dict:
        # Child stdout has no portable timeout; the child is trusted to answer
        # or die, and death surfaces as EOF -> retriable.
        return decode_stream(self.proc.stdout.read)

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


class SidecarBackend:
    """Client for an external inference process.

    ``endpoint`` is either ``tcp://host:port`` or a command line to spawn.
    A hello handshake carrying the label list runs on connect; mismatch is a
    hard failure because silent index misalignment corrupts every record
    downstream.  One in-flight request per connection; one retry with a fresh
    connection on transient failures.
    """

    kind = "sidecar"

    def __init__(self, endpoint: str, labels: tuple[str, ...]):
        if not endpoint:
            raise BackendError("sidecar backend requires sidecar_endpoint")
        self.endpoint = endpoint
        self.labels = labels
        self._channel = None

    def _connect(self):
        if self.endpoint.startswith("tcp://"):
            hostport = self.endpoint[len("tcp://"):]
            host, _, port = hostport.rpartition(":")
            channel = _SocketChannel(host or "127.0.0.1", int(port))
        else:
            channel = _ProcessChannel(self.endpoint)
        channel.send(encode_message({"type": "hello", "labels": list(self.labels)}))
        reply = channel.recv_message(DETECT_TIMEOUT_S)
        if reply.get("type") != "hello":
            channel.close()
            raise BackendProtocolError(f"expected hello reply, got {reply}")
        theirs = reply.get("labels", [])
        if list(theirs) != list(self.labels):
            channel.close()
            raise BackendError(_label_mismatch_message(self.labels, theirs))
        return channel

    def _channel_or_connect(self):
        if self._channel is None:
            self._channel = self._connect()
        return self._channel

    def _drop_channel(self):
        if self._channel is not None:
            self._channel.close()
            self._channel = None

    def _request(self, msg: dict, timeout: float) -> dict:
        last: Exception | None = None
        for _ in range(1 + RETRIES):
            try:
                ch = self._channel_or_connect()
                ch.send(encode_message(msg))
                reply = ch.recv_message(timeout)
                if reply.get("type") == "error":
                    raise BackendProtocolError(
                        f"sidecar error {reply.get('code')}: {reply.get('message')}"
                    )
                return reply
            except BackendRetriableError as e:
                last = e
                self._drop_channel()
        raise BackendRetriableError(f"sidecar unreachable after retry: {last}")

    def detect(self, frame: FrameImage) -> list[Detection]:
        msg = {"type": "detect_req", "clip_id": frame.clip_id,
               "frame_index": frame.frame_index, **frame_payload(frame)}
        reply = self._request(msg, DETECT_TIMEOUT_S)
        if reply.get("type") != "detect_resp" or "detections" not in reply:
            raise BackendProtocolError(f"bad detect response: {reply}")
        return validate_detections(reply["detections"], frame.width, frame.height)

    def classify(self, crop: FrameImage) -> ProbVector:
        msg = {"type": "classify_req", **frame_payload(crop)}
        reply = self._request(msg, CLASSIFY_TIMEOUT_S)
        if reply.get("type") != "classify_resp":
            raise BackendProtocolError(f"bad classify response: {reply}")
        return validate_probs(reply, len(self.labels))

    def health_check(self) -> str:
        try:
            self._channel_or_connect()
            return HEALTH_OK
        except BackendError as e:
            log.warning("sidecar health check failed: %s", e)
            return HEALTH_DOWN
        except OSError as e:
            log.warning("sidecar unreachable: %s", e)
            return HEALTH_DOWN

    def close(self) -> None:
        self._drop_channel()


def _label_mismatch_message(ours, theirs) -> str:
    for i, (a, b) in enumerate(zip(ours, theirs)):
        if a != b:
            return (f"label list mismatch at index {i}: daemon has {a!r}, "
                    f"sidecar has {b!r}")
    return (f"label list length mismatch: daemon has {len(ours)}, "
            f"sidecar has {len(theirs)}")


def make_backend(cfg):
    """Build the backend named by config; labels come from config."""
    if cfg.backend_mode == "mock":
        return MockBackend(cfg.sidecar_endpoint, cfg.species_labels)
    return SidecarBackend(cfg.sidecar_endpoint, cfg.species_labels)
