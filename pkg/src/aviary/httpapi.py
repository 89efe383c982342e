"""HTTP/JSON API for the review UI and exports.

Stdlib threading server: handlers only touch the store's snapshot reads and
the (locked) review mutation, never clip processing, so they cannot block on
the pipeline.  All timestamps on the wire are RFC-3339 UTC.  The review UI is
served as static files under ``/ui/`` when a UI directory is configured.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlparse

from .store import ConflictError, InvariantError, Store, StoreError, parse_ts

log = logging.getLogger("aviary.http")


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _parse_when(value: str, key: str) -> datetime:
    try:
        return parse_ts(value)
    except ValueError:
        pass
    for fmt in ("%Y-%m-%dT%H:%M:%SZ", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d"):
        try:
            return datetime.strptime(value, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
    raise ApiError(400, f"bad timestamp for {key!r}: {value!r}")


class HttpApi:
    def __init__(self, cfg, store: Store, backend, queue_depth_fn=None,
                 ui_dir: str | Path | None = None):
        self.cfg = cfg
        self.store = store
        self.backend = backend
        self.queue_depth_fn = queue_depth_fn or (lambda: 0)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle --

    def start(self) -> int:
        api = self

        class Handler(_Handler):
            ctx = api

        self.server = ThreadingHTTPServer(("0.0.0.0", self.cfg.http_port), Handler)
        self._thread = threading.Thread(target=self.server.serve_forever,
                                        name="aviary-http", daemon=True)
        self._thread.start()
        return self.server.server_address[1]

    def stop(self) -> None:
        if self.server is not None:
            self.server.shutdown()
            self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # -- payload shaping --

    def review_payload(self, item) -> dict:
        d = item.to_json()
        d["topk"] = [
            {"species_index": i, "label": self.cfg.species_labels[i], "prob": p}
            for i, p in item.topk
        ]
        return d

    # -- routes --

    def handle_get(self, path: str, query: dict) -> tuple[int, dict | bytes, str]:
        if path == "/api/health":
            return 200, {
                "status": "ok",
                "backend_health": self.backend.health_check(),
                "queue_depth": self.queue_depth_fn(),
                # full label list so the review UI can offer out-of-topk picks
                "species_labels": list(self.cfg.species_labels),
            }, "application/json"

        if path == "/api/review/pending":
            limit = _int_param(query, "limit", 20)
            try:
                items, cursor = self.store.list_pending_reviews(
                    limit=limit, cursor=_str_param(query, "cursor"))
            except StoreError as e:
                raise ApiError(400, str(e)) from e
            return 200, {
                "items": [self.review_payload(i) for i in items],
                "next_cursor": cursor,
            }, "application/json"

        if path == "/api/sightings":
            limit = _int_param(query, "limit", 50)
            kwargs = {}
            if "from" in query:
                kwargs["ts_from"] = _parse_when(query["from"][0], "from")
            if "to" in query:
                kwargs["ts_to"] = _parse_when(query["to"][0], "to")
            if "species" in query:
                kwargs["species"] = query["species"][0]
            if "camera" in query:
                kwargs["camera"] = query["camera"][0]
            try:
                items, cursor = self.store.list_sightings(
                    limit=limit, cursor=_str_param(query, "cursor"), **kwargs)
            except StoreError as e:
                raise ApiError(400, str(e)) from e
            return 200, {
                "items": [s.to_json() for s in items],
                "next_cursor": cursor,
            }, "application/json"

        if path == "/api/summary/daily":
            kwargs = {}
            if "from" in query:
                kwargs["ts_from"] = _parse_when(query["from"][0], "from")
            if "to" in query:
                kwargs["ts_to"] = _parse_when(query["to"][0], "to")
            return 200, {"days": self.store.daily_summary(**kwargs)}, "application/json"

        if path.startswith("/api/crops/"):
            ref = unquote(path[len("/api/crops/"):])
            try:
                return 200, self.store.load_crop_bytes(ref), "image/png"
            except StoreError as e:
                raise ApiError(404, str(e)) from e

        if path == "/" or path == "/ui":
            raise ApiError(302, "/ui/")

        if path.startswith("/ui/"):
            return self._serve_static(path[len("/ui/"):] or "index.html")

        raise ApiError(404, f"no such endpoint: {path}")

    def _serve_static(self, rel: str) -> tuple[int, bytes, str]:
        if self.ui_dir is None:
            raise ApiError(404, "review UI not installed")
        target = (self.ui_dir / unquote(rel)).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())):
            raise ApiError(404, "not found")
        if target.is_dir():
            target = target / "index.html"
        if not target.is_file():
            raise ApiError(404, f"no such file: {rel}")
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        return 200, target.read_bytes(), ctype

    def handle_post(self, path: str, body: dict) -> tuple[int, dict, str]:
        if path.startswith("/api/review/"):
            item_id = unquote(path[len("/api/review/"):])
            action = body.get("action")
            if action not in ("label", "reject"):
                raise ApiError(400, f"action must be label or reject, got {action!r}")
            try:
                if action == "label":
                    if not isinstance(body.get("species_index"), int):
                        raise ApiError(400, "label requires integer species_index")
                    item, sighting = self.store.submit_review(
                        item_id, "label", species_index=body["species_index"])
                else:
                    item, sighting = self.store.submit_review(item_id, "reject")
            except ConflictError as e:
                raise ApiError(409, str(e)) from e
            except InvariantError as e:
                raise ApiError(400, str(e)) from e
            except StoreError as e:
                raise ApiError(404, str(e)) from e
            payload = {"item": self.review_payload(item)}
            if sighting is not None:
                payload["sighting"] = sighting.to_json()
            return 200, payload, "application/json"

        raise ApiError(404, f"no such endpoint: {path}")


class _Handler(BaseHTTPRequestHandler):
    ctx: HttpApi = None  # injected by HttpApi.start
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, payload: dict | bytes, ctype: str) -> None:
        body = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, e: ApiError) -> None:
        if e.status == 302:
            self.send_response(302)
            self.send_header("Location", e.message)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        self._send(e.status, {"error": e.message}, "application/json")

    def do_GET(self):
        url = urlparse(self.path)
        try:
            status, payload, ctype = self.ctx.handle_get(url.path, parse_qs(url.query))
            self._send(status, payload, ctype)
        except ApiError as e:
            self._send_error(e)
        except Exception:
            log.exception("GET %s failed", self.path)
            self._send(500, {"error": "internal error"}, "application/json")

    def do_POST(self):
        url = urlparse(self.path)
        try:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b"{}"
            try:
                body = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise ApiError(400, f"bad JSON body: {e}") from e
            status, payload, ctype = self.ctx.handle_post(url.path, body)
            self._send(status, payload, ctype)
        except ApiError as e:
            self._send_error(e)
        except Exception:
            log.exception("POST %s failed", self.path)
            self._send(500, {"error": "internal error"}, "application/json")


def _int_param(query: dict, key: str, default: int) -> int:
    if key not in query:
        return default
    try:
        return int(query[key][0])
    except ValueError:
        raise ApiError(400, f"{key} must be an integer") from None


def _str_param(query: dict, key: str) -> str | None:
    return query[key][0] if key in query else None
