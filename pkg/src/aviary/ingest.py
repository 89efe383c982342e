"""Clip intake: content-hash dedupe, quarantine, and the directory watcher.

The FTP server and the watcher both converge on :func:`enqueue_clip`, which
serializes job creation through the store's writer lock so job ids are
totally ordered.  Dedupe is by content hash over the whole store lifetime
(cameras re-upload after Wi-Fi drops).
"""

from __future__ import annotations

import hashlib
import logging
import threading
import time
from pathlib import Path

from .store import ClipJob, Store, utcnow

log = logging.getLogger("aviary.ingest")

TEMP_PREFIX = ".partial-"


class QuarantinedError(Exception):
    """The file was rejected and moved to quarantine."""


def content_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_job_id(digest: str, received_at) -> str:
    return f"{digest[:12]}-{received_at.strftime('%Y%m%dT%H%M%S%f')}"


def enqueue_clip(store: Store, queue, path: str | Path, source: str,
                 camera_id: str) -> ClipJob:
    """Persist a pending job and hand it to the pipeline queue.

    Byte-identical re-uploads return the existing job without requeueing.
    Zero-byte or unreadable files are quarantined and raise.
    """
    p = Path(path)
    try:
        size = p.stat().st_size
    except OSError as e:
        store.quarantine_file(p, f"unreadable: {e}")
        raise QuarantinedError(f"{p}: unreadable") from e
    if size == 0:
        store.quarantine_file(p, "zero-byte upload")
        raise QuarantinedError(f"{p}: zero-byte upload")
    try:
        digest = content_hash(p)
    except OSError as e:
        store.quarantine_file(p, f"unreadable: {e}")
        raise QuarantinedError(f"{p}: unreadable") from e

    existing = store.find_job_by_hash(digest)
    if existing is not None:
        log.info("duplicate upload %s matches job %s", p.name, existing.id)
        return existing

    received = utcnow()
    job = ClipJob(
        id=make_job_id(digest, received),
        source=source,
        path=str(p),
        size_bytes=size,
        received_at=received,
        camera_id=camera_id,
        status="pending",
        content_hash=digest,
    )
    store.record_job(job)
    if queue is not None:
        queue.put(job.id)
    log.info("enqueued %s from %s (%d bytes, camera %s)", job.id, source, size, camera_id)
    return job


class DirectoryWatcher(threading.Thread):
    """Poll the ingest directory and emit files once their size settles.

    A file counts as complete when its size has not changed for ``settle_ms``
    (upload-completion heuristic for deliveries that bypass the FTP rename
    discipline).  Files already present at startup are emitted once.  The
    camera id is the top-level subdirectory name, or "default" for files in
    the ingest root.
    """

    def __init__(self, ingest_dir: str | Path, settle_ms: float, enqueue_cb,
                 shutdown: threading.Event):
        super().__init__(name="aviary-watcher", daemon=True)
        self.dir = Path(ingest_dir)
        self.settle_s = settle_ms / 1000.0
        self.enqueue_cb = enqueue_cb
        self.shutdown = shutdown
        self._sizes: dict[Path, tuple[int, float]] = {}  # path -> (size, stable since)
        self._emitted: dict[Path, int] = {}  # path -> size at emit

    def _camera_id(self, path: Path) -> str:
        rel = path.relative_to(self.dir)
        return rel.parts[0] if len(rel.parts) > 1 else "default"

    def _scan_once(self, now: float) -> None:
        seen = set()
        for path in sorted(self.dir.rglob("*")):
            if not path.is_file() or path.name.startswith("."):
                continue
            seen.add(path)
            try:
                size = path.stat().st_size
            except OSError:
                continue
            prev = self._sizes.get(path)
            if prev is None or prev[0] != size:
                self._sizes[path] = (size, now)
                continue
            if now - prev[1] < self.settle_s:
                continue
            if self._emitted.get(path) == size:
                continue
            self._emitted[path] = size
            try:
                self.enqueue_cb(path, "watcher", self._camera_id(path))
            except QuarantinedError as e:
                log.warning("watcher quarantined %s: %s", path, e)
            except Exception:
                log.exception("watcher failed to enqueue %s", path)
        for gone in set(self._sizes) - seen:
            self._sizes.pop(gone, None)
            self._emitted.pop(gone, None)

    def run(self) -> None:
        poll = max(0.02, self.settle_s / 2)
        while not self.shutdown.is_set():
            self._scan_once(time.monotonic())
            self.shutdown.wait(poll)
