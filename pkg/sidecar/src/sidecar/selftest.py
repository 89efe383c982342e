"""Golden-file protocol conformance suite (the --selftest flag).

Runs a canned request set through the handler: handshake, detect/classify
round trips on deterministic images, and malformed-input cases.  Every reply
is validated against a JSON schema (zero violations allowed).  Responses are
serialized canonically; for the stub backend they must match the committed
golden bytes exactly, and for any backend two consecutive passes must replay
byte-identically.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .protocol import encode
from .server import Server

GOLDEN_DIR = Path(__file__).parent / "golden"

# Committed goldens are recorded against this label set; other label sets
# still get schema + replay checks, just no byte comparison.
CANONICAL_LABELS = [f"species_{i:02d}" for i in range(40)]

_DETECTION = {
    "type": "object",
    "required": ["x1", "y1", "x2", "y2", "score", "class_id"],
    "properties": {
        "x1": {"type": "number"}, "y1": {"type": "number"},
        "x2": {"type": "number"}, "y2": {"type": "number"},
        "score": {"type": "number"},
        "class_id": {"type": "integer"},
    },
    "additionalProperties": False,
}

RESPONSE_SCHEMAS = {
    "hello": {
        "type": "object",
        "required": ["type", "labels"],
        "properties": {
            "type": {"const": "hello"},
            "labels": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        },
        "additionalProperties": False,
    },
    "detect_resp": {
        "type": "object",
        "required": ["type", "detections"],
        "properties": {
            "type": {"const": "detect_resp"},
            "detections": {"type": "array", "items": _DETECTION},
        },
        "additionalProperties": False,
    },
    "classify_resp": {
        "type": "object",
        "required": ["type", "probs"],
        "properties": {
            "type": {"const": "classify_resp"},
            "probs": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        },
        "additionalProperties": False,
    },
    "error": {
        "type": "object",
        "required": ["type", "code", "message"],
        "properties": {
            "type": {"const": "error"},
            "code": {"type": "string"},
            "message": {"type": "string"},
        },
        "additionalProperties": False,
    },
}

_VALIDATORS = {k: Draft202012Validator(v) for k, v in RESPONSE_SCHEMAS.items()}


def _image_payload(w: int, h: int, seed: int) -> dict:
    rng = np.random.RandomState(seed)
    rgb = rng.randint(0, 256, size=(h, w, 3), dtype=np.uint8)
    return {"w": w, "h": h, "rgb8_b64": base64.b64encode(rgb.tobytes()).decode("ascii")}


def canned_requests(labels: list[str]) -> list[tuple[str, dict, str]]:
    """(name, request, expected reply type) triples."""
    return [
        ("hello", {"type": "hello", "labels": list(labels)}, "hello"),
        ("detect_small", {"type": "detect_req", "clip_id": "golden", "frame_index": 0,
                          **_image_payload(64, 48, 1)}, "detect_resp"),
        ("detect_large", {"type": "detect_req", "clip_id": "golden", "frame_index": 1,
                          **_image_payload(160, 120, 2)}, "detect_resp"),
        ("classify_blank", {"type": "classify_req",
                            "w": 224, "h": 224,
                            "rgb8_b64": base64.b64encode(
                                bytes(224 * 224 * 3)).decode("ascii")}, "classify_resp"),
        ("classify_noise", {"type": "classify_req",
                            **_image_payload(224, 224, 3)}, "classify_resp"),
        ("bad_image_length", {"type": "detect_req", "w": 10, "h": 10,
                              "rgb8_b64": base64.b64encode(b"short").decode("ascii")},
         "error"),
        ("bad_base64", {"type": "classify_req", "w": 2, "h": 2,
                        "rgb8_b64": "!!!not base64!!!"}, "error"),
        ("unknown_type", {"type": "transcode_req"}, "error"),
    ]


def run_selftest(models, golden_name: str | None = None,
                 golden_dir: Path = GOLDEN_DIR) -> tuple[bool, list[str]]:
    """Returns (ok, report lines)."""
    server = Server(models)
    lines: list[str] = []
    ok = True

    def record_pass(requests) -> bytes:
        blobs = []
        for name, req, expected in requests:
            reply = server.handle(req)
            rtype = reply.get("type")
            if rtype != expected:
                raise AssertionError(
                    f"{name}: expected {expected}, got {rtype}: {reply}")
            validator = _VALIDATORS.get(rtype)
            errors = list(validator.iter_errors(reply)) if validator else ["no schema"]
            if errors:
                raise AssertionError(f"{name}: schema violations: {errors}")
            if rtype == "classify_resp":
                total = sum(reply["probs"])
                if abs(total - 1.0) > 1e-6 or len(reply["probs"]) != len(models.labels):
                    raise AssertionError(f"{name}: bad probability vector (sum {total})")
            blobs.append(encode(reply))
        return b"".join(blobs)

    requests = canned_requests(models.labels)
    try:
        first = record_pass(requests)
        lines.append(f"ok: {len(requests)} canned requests, zero schema violations")
        second = record_pass(requests)
        if first != second:
            raise AssertionError("replay differs between passes")
        lines.append("ok: replay is byte-identical across passes")
        if golden_name:
            golden = golden_dir / f"{golden_name}.bin"
            if golden.is_file():
                if golden.read_bytes() != first:
                    raise AssertionError(f"responses differ from golden {golden}")
                lines.append(f"ok: responses match golden {golden.name}")
            else:
                golden.parent.mkdir(parents=True, exist_ok=True)
                golden.write_bytes(first)
                lines.append(f"ok: recorded new golden {golden.name}")
    except AssertionError as e:
        ok = False
        lines.append(f"FAIL: {e}")
    return ok, lines
