"""Long-running supervision: ingest, workers, and the HTTP API under one roof.

Startup order matters: the store opens first (corruption surfaces before any
port binds), then the backend handshake runs (a label mismatch is fatal), then
ports bind, then jobs left pending or processing by the previous run are
requeued.  Shutdown broadcasts one event; workers re-persist their in-flight
job as pending so a restart reprocesses it.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
from pathlib import Path

from .backends import HEALTH_OK, make_backend
from .ftp import FtpServer
from .httpapi import HttpApi
from .ingest import DirectoryWatcher, QuarantinedError, enqueue_clip
from .pipeline import ShutdownInterrupt, format_clip_result, process_clip, run_with_retries
from .store import ClipJob, Store, utcnow
from . import ingest

log = logging.getLogger("aviary.daemon")

WORKER_COUNT = 2
WATCHER_SETTLE_MS = 500.0


class DaemonError(Exception):
    pass


class Daemon:
    def __init__(self, cfg, ui_dir: str | Path | None = None):
        self.cfg = cfg
        self.shutdown_event = threading.Event()
        self.store: Store | None = None
        self.backend = None
        self.queue: queue.Queue = queue.Queue()
        self.workers: list[threading.Thread] = []
        self.watcher: DirectoryWatcher | None = None
        self.ftp: FtpServer | None = None
        self.http: HttpApi | None = None
        self.ui_dir = ui_dir if ui_dir is not None else _default_ui_dir()

    # -- lifecycle --

    def start(self) -> None:
        cfg = self.cfg
        Path(cfg.ingest_dir).mkdir(parents=True, exist_ok=True)
        self.store = Store(cfg.store_dir, cfg)

        self.backend = make_backend(cfg)
        health = self.backend.health_check()
        if health != HEALTH_OK:
            self.store.close()
            raise DaemonError(f"backend {cfg.backend_mode} is {health}; refusing to start")

        try:
            self.http = HttpApi(cfg, self.store, self.backend,
                                queue_depth_fn=self._queue_depth, ui_dir=self.ui_dir)
            self.http.start()
            if cfg.ftp_enabled:
                self.ftp = FtpServer(cfg, self._on_ftp_upload, self.shutdown_event)
                self.ftp.quarantine_cb = self.store.quarantine_file
                self.ftp.start()
        except OSError as e:
            self.stop()
            raise DaemonError(f"failed to bind service port: {e}") from e

        self.watcher = DirectoryWatcher(cfg.ingest_dir, WATCHER_SETTLE_MS,
                                        self._enqueue, self.shutdown_event)
        self.watcher.start()

        for i in range(WORKER_COUNT):
            t = threading.Thread(target=self._worker_loop, daemon=True,
                                 name=f"aviary-worker-{i}")
            t.start()
            self.workers.append(t)

        # Jobs interrupted by a crash or shutdown pick up where they left off.
        for job in self.store.jobs_with_status("pending", "processing"):
            self.queue.put(job.id)
        log.info("daemon up: http=%d ftp=%s ingest=%s store=%s",
                 cfg.http_port, cfg.ftp_port if cfg.ftp_enabled else "off",
                 cfg.ingest_dir, cfg.store_dir)

    def run_forever(self) -> None:
        self.shutdown_event.wait()

    def stop(self) -> None:
        self.shutdown_event.set()
        for t in self.workers:
            t.join(timeout=10)
        if self.watcher is not None:
            self.watcher.join(timeout=5)
        if self.ftp is not None:
            self.ftp.join(timeout=5)
        if self.http is not None:
            self.http.stop()
        if self.backend is not None:
            self.backend.close()
        if self.store is not None:
            self.store.close()
        log.info("daemon stopped")

    # -- plumbing --

    def _queue_depth(self) -> int:
        if self.store is None:
            return 0
        return len(self.store.jobs_with_status("pending", "processing"))

    def _enqueue(self, path, source: str, camera_id: str) -> None:
        enqueue_clip(self.store, self.queue, path, source, camera_id)

    def _on_ftp_upload(self, dest: Path, camera_id: str) -> None:
        try:
            self._enqueue(dest, "ftp", camera_id)
        except QuarantinedError as e:
            log.warning("FTP upload quarantined: %s", e)

    def _worker_loop(self) -> None:
        while not self.shutdown_event.is_set():
            try:
                job_id = self.queue.get(timeout=0.2)
            except queue.Empty:
                continue
            job = self.store.get_job(job_id)
            if job is None or job.status not in ("pending", "processing"):
                continue
            try:
                run_with_retries(job, self.cfg, self.backend, self.store,
                                 shutdown=self.shutdown_event)
            except ShutdownInterrupt:
                break
            except Exception:
                log.exception("unexpected failure processing %s", job_id)
                try:
                    self.store.update_job_status(job_id, "failed")
                except Exception:
                    pass


def _default_ui_dir() -> Path | None:
    env = os.environ.get("AVIARY_UI_DIR")
    if env:
        return Path(env)
    local = Path.cwd() / "frontend" / "dist"
    return local if local.is_dir() else None


def run_once(cfg, clip_path: str | Path, commit: bool = False) -> str:
    """Process a single clip synchronously; persists only with commit."""
    path = Path(clip_path)
    if not path.is_file():
        raise DaemonError(f"clip not readable: {path}")
    backend = make_backend(cfg)
    health = backend.health_check()
    if health != HEALTH_OK:
        raise DaemonError(f"backend {cfg.backend_mode} is {health}")
    try:
        if commit:
            store = Store(cfg.store_dir, cfg)
            try:
                job = enqueue_clip(store, None, path, "cli", "cli")
                store.update_job_status(job.id, "processing")
                result = process_clip(job, cfg, backend, store=store)
            finally:
                store.close()
        else:
            digest = ingest.content_hash(path)
            received = utcnow()
            job = ClipJob(
                id=ingest.make_job_id(digest, received),
                source="cli",
                path=str(path),
                size_bytes=path.stat().st_size,
                received_at=received,
                camera_id="cli",
                status="pending",
                content_hash=digest,
            )
            result = process_clip(job, cfg, backend, store=None)
        return format_clip_result(result)
    finally:
        backend.close()
