"""Embedded persistence: append-only JSONL journals plus an in-memory index.

Layout under ``store_dir``:

    jobs.jsonl        clip job records; later lines supersede earlier ones
    sightings.jsonl   sighting records (append-only)
    reviews.jsonl     review item records; later lines supersede earlier ones
    clips.jsonl       per-clip results; the commit point for a processing run
    crops/            lossless PNG crops keyed by crop_ref
    quarantine/       rejected uploads plus ``.reason`` sidecar files

Commit discipline: a clip's sightings and review items are appended first and
only become visible once the ClipResult line referencing them lands in
clips.jsonl.  The last ClipResult per clip wins, so reprocessing replaces
(never duplicates) results; record ids are content-derived, so a replay after
a crash re-appends byte-identical lines that the id-keyed index absorbs.
Journal field names match the HTTP API field names exactly.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from .gating import BBox

JOB_PENDING = "pending"
JOB_PROCESSING = "processing"
JOB_DONE = "done"
JOB_FAILED = "failed"
JOB_QUARANTINED = "quarantined"
_JOB_TERMINAL = {JOB_DONE, JOB_FAILED, JOB_QUARANTINED}

REVIEW_PENDING = "pending"
REVIEW_LABELED = "labeled"
REVIEW_REJECTED = "rejected"
_REVIEW_TERMINAL = {REVIEW_LABELED, REVIEW_REJECTED}


class StoreError(Exception):
    pass


class ConflictError(StoreError):
    """The review item was already decided."""


class InvariantError(StoreError):
    """A record violates its documented invariants."""


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def format_ts(dt: datetime) -> str:
    """RFC-3339 UTC with microseconds and a Z suffix."""
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def parse_ts(s: str) -> datetime:
    return datetime.strptime(s, "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)


def _short_hash(text: str, n: int = 16) -> str:
    return hashlib.sha1(text.encode("utf-8")).hexdigest()[:n]


def _bbox_key(bbox: BBox) -> str:
    return ",".join(f"{v:.6f}" for v in bbox.as_list())


def sighting_id(clip_id: str, frame_index: int, bbox: BBox, species_index: int) -> str:
    return "sg-" + _short_hash(f"{clip_id}|{frame_index}|{_bbox_key(bbox)}|{species_index}|auto")


def human_sighting_id(review_id: str, species_index: int) -> str:
    return "sg-" + _short_hash(f"review|{review_id}|{species_index}")


def review_item_id(clip_id: str, frame_index: int, bbox: BBox) -> str:
    return "rv-" + _short_hash(f"{clip_id}|{frame_index}|{_bbox_key(bbox)}")


def crop_ref_for(pixels: np.ndarray) -> str:
    h, w = pixels.shape[0], pixels.shape[1]
    digest = hashlib.sha256()
    digest.update(w.to_bytes(4, "little"))
    digest.update(h.to_bytes(4, "little"))
    digest.update(np.ascontiguousarray(pixels).tobytes())
    return "cr-" + digest.hexdigest()[:16]


@dataclass(frozen=True)
class ClipJob:
    id: str
    source: str  # ftp | watcher | cli
    path: str
    size_bytes: int
    received_at: datetime
    camera_id: str
    status: str
    content_hash: str

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "source": self.source,
            "path": self.path,
            "size_bytes": self.size_bytes,
            "received_at": format_ts(self.received_at),
            "camera_id": self.camera_id,
            "status": self.status,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ClipJob":
        return cls(
            id=d["id"], source=d["source"], path=d["path"],
            size_bytes=d["size_bytes"], received_at=parse_ts(d["received_at"]),
            camera_id=d["camera_id"], status=d["status"],
            content_hash=d["content_hash"],
        )


@dataclass(frozen=True)
class Sighting:
    id: str
    clip_id: str
    frame_index: int
    bbox: BBox
    species_index: int
    species_label: str
    confidence: float
    decided_by: str  # auto | human
    created_at: datetime
    crop_ref: str
    review_id: str | None = None  # set for human sightings

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "clip_id": self.clip_id,
            "frame_index": self.frame_index,
            "bbox": self.bbox.as_list(),
            "species_index": self.species_index,
            "species_label": self.species_label,
            "confidence": self.confidence,
            "decided_by": self.decided_by,
            "created_at": format_ts(self.created_at),
            "crop_ref": self.crop_ref,
            "review_id": self.review_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Sighting":
        return cls(
            id=d["id"], clip_id=d["clip_id"], frame_index=d["frame_index"],
            bbox=BBox(*d["bbox"]), species_index=d["species_index"],
            species_label=d["species_label"], confidence=d["confidence"],
            decided_by=d["decided_by"], created_at=parse_ts(d["created_at"]),
            crop_ref=d["crop_ref"], review_id=d.get("review_id"),
        )


@dataclass(frozen=True)
class ReviewItem:
    id: str
    crop_ref: str
    clip_id: str
    frame_index: int
    bbox: BBox
    topk: tuple[tuple[int, float], ...]
    status: str = REVIEW_PENDING
    assigned_label: int | None = None
    reviewed_at: datetime | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "crop_ref": self.crop_ref,
            "clip_id": self.clip_id,
            "frame_index": self.frame_index,
            "bbox": self.bbox.as_list(),
            "topk": [[i, p] for i, p in self.topk],
            "status": self.status,
            "assigned_label": self.assigned_label,
            "reviewed_at": format_ts(self.reviewed_at) if self.reviewed_at else None,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ReviewItem":
        return cls(
            id=d["id"], crop_ref=d["crop_ref"], clip_id=d["clip_id"],
            frame_index=d["frame_index"], bbox=BBox(*d["bbox"]),
            topk=tuple((int(i), float(p)) for i, p in d["topk"]),
            status=d["status"], assigned_label=d.get("assigned_label"),
            reviewed_at=parse_ts(d["reviewed_at"]) if d.get("reviewed_at") else None,
        )


@dataclass
class ClipResult:
    clip_id: str
    frames_sampled: int
    frames_blurred: int
    detections_raw: int
    detections_kept: int
    sightings: list[Sighting] = field(default_factory=list)
    review_items: list[ReviewItem] = field(default_factory=list)
    species_summary: list[tuple[str, int, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "frames_sampled": self.frames_sampled,
            "frames_blurred": self.frames_blurred,
            "detections_raw": self.detections_raw,
            "detections_kept": self.detections_kept,
            "sighting_ids": [s.id for s in self.sightings],
            "review_item_ids": [r.id for r in self.review_items],
            "species_summary": [
                {"species_label": lbl, "count": n, "mean_confidence": conf}
                for lbl, n, conf in self.species_summary
            ],
        }


class Store:
    """Single-writer embedded store (thread-safe; one lock guards writes,
    reads copy references under the same lock so they see a stable snapshot)."""

    def __init__(self, store_dir: str | Path, cfg):
        self.dir = Path(store_dir)
        self.cfg = cfg
        self.crops_dir = self.dir / "crops"
        self.quarantine_dir = self.dir / "quarantine"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.crops_dir.mkdir(exist_ok=True)
        self.quarantine_dir.mkdir(exist_ok=True)
        self._lock = threading.RLock()
        self._files: dict[str, object] = {}

        self._jobs: dict[str, ClipJob] = {}
        self._job_order: list[str] = []
        self._hash_to_job: dict[str, str] = {}
        self._sightings: dict[str, Sighting] = {}
        self._reviews: dict[str, ReviewItem] = {}
        self._review_seq: dict[str, int] = {}  # id -> arrival order for paging
        self._clip_lines: dict[str, dict] = {}  # clip_id -> last ClipResult line
        self._replay()

    # -- journal plumbing --

    def _path(self, name: str) -> Path:
        return self.dir / f"{name}.jsonl"

    def _replay(self) -> None:
        for name, apply in (
            ("jobs", self._apply_job),
            ("sightings", self._apply_sighting),
            ("reviews", self._apply_review),
            ("clips", self._apply_clip),
        ):
            path = self._path(name)
            if not path.is_file():
                continue
            with open(path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        apply(json.loads(line))
                    except json.JSONDecodeError:
                        # A torn final line from a crash is expected; anything
                        # mid-file would indicate real corruption.
                        raise StoreError(f"{path}: corrupt journal line: {line[:120]!r}")

    def _append(self, name: str, record: dict, sync: bool = False) -> None:
        f = self._files.get(name)
        if f is None:
            f = open(self._path(name), "a", encoding="utf-8")
            self._files[name] = f
        f.write(json.dumps(record, separators=(",", ":")) + "\n")
        f.flush()
        if sync:
            os.fsync(f.fileno())

    def close(self) -> None:
        with self._lock:
            for f in self._files.values():
                try:
                    f.flush()
                    os.fsync(f.fileno())
                except (OSError, ValueError):
                    pass
                f.close()
            self._files.clear()

    # -- apply functions (shared by replay and live writes) --

    def _apply_job(self, d: dict) -> None:
        job = ClipJob.from_json(d)
        prior = self._jobs.get(job.id)
        if prior is not None and prior.status in _JOB_TERMINAL and job.status not in _JOB_TERMINAL:
            return  # terminal states are sticky
        if prior is None:
            self._job_order.append(job.id)
        self._jobs[job.id] = job
        self._hash_to_job.setdefault(job.content_hash, job.id)

    def _apply_sighting(self, d: dict) -> None:
        self._sightings[d["id"]] = Sighting.from_json(d)

    def _apply_review(self, d: dict) -> None:
        item = ReviewItem.from_json(d)
        if item.id not in self._review_seq:
            self._review_seq[item.id] = len(self._review_seq)
        prior = self._reviews.get(item.id)
        if prior is not None and prior.status in _REVIEW_TERMINAL and item.status == REVIEW_PENDING:
            return  # a reprocessed base record never undoes a human decision
        self._reviews[item.id] = item

    def _apply_clip(self, d: dict) -> None:
        self._clip_lines[d["clip_id"]] = d

    # -- liveness: which records the index serves --

    def _live_sighting(self, s: Sighting) -> bool:
        if s.decided_by == "human":
            rv = self._reviews.get(s.review_id or "")
            return (rv is not None and rv.status == REVIEW_LABELED
                    and self._live_review_base(rv)
                    and human_sighting_id(rv.id, rv.assigned_label) == s.id)
        line = self._clip_lines.get(s.clip_id)
        return line is not None and s.id in line["sighting_ids"]

    def _live_review_base(self, r: ReviewItem) -> bool:
        line = self._clip_lines.get(r.clip_id)
        return line is not None and r.id in line["review_item_ids"]

    # -- jobs --

    def record_job(self, job: ClipJob) -> None:
        with self._lock:
            self._append("jobs", job.to_json(), sync=True)
            self._apply_job(job.to_json())

    def update_job_status(self, job_id: str, status: str) -> ClipJob:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise StoreError(f"unknown job {job_id}")
            updated = replace(job, status=status)
            self._append("jobs", updated.to_json(), sync=status in _JOB_TERMINAL)
            self._apply_job(updated.to_json())
            return self._jobs[job_id]

    def get_job(self, job_id: str) -> ClipJob | None:
        with self._lock:
            return self._jobs.get(job_id)

    def find_job_by_hash(self, content_hash: str) -> ClipJob | None:
        with self._lock:
            job_id = self._hash_to_job.get(content_hash)
            return self._jobs.get(job_id) if job_id else None

    def jobs_with_status(self, *statuses: str) -> list[ClipJob]:
        with self._lock:
            return [self._jobs[j] for j in self._job_order if self._jobs[j].status in statuses]

    # -- clip results --

    def commit_clip_result(self, result: ClipResult) -> None:
        """Persist a processing run atomically: records first, then the
        ClipResult line that makes them visible."""
        with self._lock:
            for s in result.sightings:
                self._check_sighting(s)
                self._append("sightings", s.to_json())
            for r in result.review_items:
                self._append("reviews", r.to_json())
            line = result.to_json()
            self._append("clips", line, sync=True)
            for s in result.sightings:
                self._apply_sighting(s.to_json())
            for r in result.review_items:
                self._apply_review(r.to_json())
            self._apply_clip(line)

    def get_clip_line(self, clip_id: str) -> dict | None:
        with self._lock:
            return self._clip_lines.get(clip_id)

    # -- sightings --

    def _check_sighting(self, s: Sighting) -> None:
        if not 0 <= s.species_index < len(self.cfg.species_labels):
            raise InvariantError(f"species_index {s.species_index} outside label list")
        if s.decided_by == "auto" and not s.confidence > self.cfg.cls_confidence_threshold:
            raise InvariantError(
                f"auto sighting confidence {s.confidence} not above threshold "
                f"{self.cfg.cls_confidence_threshold}"
            )
        if s.decided_by not in ("auto", "human"):
            raise InvariantError(f"decided_by must be auto or human, got {s.decided_by!r}")

    def record_sighting(self, s: Sighting) -> str:
        """Durable before return; human sightings become live once their
        review item is labeled."""
        with self._lock:
            self._check_sighting(s)
            self._append("sightings", s.to_json(), sync=True)
            self._apply_sighting(s.to_json())
            return s.id

    def list_sightings(self, ts_from: datetime | None = None, ts_to: datetime | None = None,
                       species: str | None = None, camera: str | None = None,
                       limit: int = 50, cursor: str | None = None
                       ) -> tuple[list[Sighting], str | None]:
        """Stable (created_at, id) ordering with cursor pagination."""
        if limit < 1:
            raise StoreError(f"limit must be >= 1, got {limit}")
        after = _decode_cursor(cursor) if cursor else None
        with self._lock:
            rows = [s for s in self._sightings.values() if self._live_sighting(s)]
            jobs = dict(self._jobs)
        if ts_from is not None:
            rows = [s for s in rows if s.created_at >= ts_from]
        if ts_to is not None:
            rows = [s for s in rows if s.created_at <= ts_to]
        if species is not None:
            rows = [s for s in rows if s.species_label == species]
        if camera is not None:
            rows = [s for s in rows if (jobs.get(s.clip_id) and jobs[s.clip_id].camera_id == camera)]
        rows.sort(key=lambda s: (format_ts(s.created_at), s.id))
        if after is not None:
            rows = [s for s in rows if (format_ts(s.created_at), s.id) > after]
        page = rows[:limit]
        next_cursor = None
        if len(rows) > limit and page:
            last = page[-1]
            next_cursor = _encode_cursor((format_ts(last.created_at), last.id))
        return page, next_cursor

    def daily_summary(self, ts_from: datetime | None = None,
                      ts_to: datetime | None = None) -> list[dict]:
        """Per-day, per-species sighting counts (auto and human combined)."""
        with self._lock:
            rows = [s for s in self._sightings.values() if self._live_sighting(s)]
        if ts_from is not None:
            rows = [s for s in rows if s.created_at >= ts_from]
        if ts_to is not None:
            rows = [s for s in rows if s.created_at <= ts_to]
        days: dict[str, dict[str, int]] = {}
        for s in rows:
            day = s.created_at.strftime("%Y-%m-%d")
            days.setdefault(day, {})
            days[day][s.species_label] = days[day].get(s.species_label, 0) + 1
        out = []
        for day in sorted(days):
            species = sorted(days[day].items(), key=lambda kv: (-kv[1], kv[0]))
            out.append({
                "date": day,
                "species": [{"species_label": lbl, "count": n} for lbl, n in species],
            })
        return out

    # -- review queue --

    def get_review(self, item_id: str) -> ReviewItem | None:
        with self._lock:
            item = self._reviews.get(item_id)
            return item if item is not None and self._live_review_base(item) else None

    def list_pending_reviews(self, limit: int = 50, cursor: str | None = None
                             ) -> tuple[list[ReviewItem], str | None]:
        """Pending items oldest-first (journal arrival order), cursor
        pagination."""
        if limit < 1:
            raise StoreError(f"limit must be >= 1, got {limit}")
        after = _decode_cursor(cursor) if cursor else None
        with self._lock:
            rows = [(self._review_seq[r.id], r) for r in self._reviews.values()
                    if r.status == REVIEW_PENDING and self._live_review_base(r)]
        rows.sort(key=lambda sr: sr[0])
        if after is not None:
            rows = [(seq, r) for seq, r in rows if seq > after[0]]
        page = rows[:limit]
        next_cursor = None
        if len(rows) > limit and page:
            next_cursor = _encode_cursor((page[-1][0], page[-1][1].id))
        return [r for _, r in page], next_cursor

    def submit_review(self, item_id: str, action: str,
                      species_index: int | None = None
                      ) -> tuple[ReviewItem, Sighting | None]:
        """Resolve a pending item: ``label`` creates a human sighting whose
        confidence is the model's stored probability for the chosen species
        (0 when outside topk); ``reject`` is terminal with no sighting."""
        with self._lock:
            item = self._reviews.get(item_id)
            if item is None or not self._live_review_base(item):
                raise StoreError(f"unknown review item {item_id}")
            if item.status != REVIEW_PENDING:
                raise ConflictError(f"review item {item_id} already {item.status}")
            now = utcnow()
            if action == "reject":
                updated = replace(item, status=REVIEW_REJECTED, reviewed_at=now)
                self._append("reviews", updated.to_json(), sync=True)
                self._apply_review(updated.to_json())
                return self._reviews[item_id], None
            if action != "label":
                raise StoreError(f"unknown review action {action!r}")
            if species_index is None or not 0 <= species_index < len(self.cfg.species_labels):
                raise InvariantError(f"species_index {species_index!r} outside label list")
            stored = dict(item.topk).get(species_index, 0.0)
            sighting = Sighting(
                id=human_sighting_id(item.id, species_index),
                clip_id=item.clip_id,
                frame_index=item.frame_index,
                bbox=item.bbox,
                species_index=species_index,
                species_label=self.cfg.species_labels[species_index],
                confidence=stored,
                decided_by="human",
                created_at=now,
                crop_ref=item.crop_ref,
                review_id=item.id,
            )
            updated = replace(item, status=REVIEW_LABELED,
                              assigned_label=species_index, reviewed_at=now)
            # Sighting lands first; the review update is the commit point.
            self._append("sightings", sighting.to_json())
            self._append("reviews", updated.to_json(), sync=True)
            self._apply_sighting(sighting.to_json())
            self._apply_review(updated.to_json())
            return self._reviews[item_id], sighting

    # -- crops --

    def save_crop(self, pixels: np.ndarray) -> str:
        """Store a lossless PNG crop, keyed (and deduped) by content hash."""
        ref = crop_ref_for(pixels)
        path = self.crops_dir / f"{ref}.png"
        if not path.exists():
            tmp = path.with_suffix(".png.tmp")
            Image.fromarray(np.ascontiguousarray(pixels), mode="RGB").save(tmp, format="PNG")
            os.replace(tmp, path)
        return ref

    def load_crop_bytes(self, crop_ref: str) -> bytes:
        if "/" in crop_ref or ".." in crop_ref:
            raise StoreError(f"bad crop_ref {crop_ref!r}")
        path = self.crops_dir / f"{crop_ref}.png"
        if not path.is_file():
            raise StoreError(f"unknown crop {crop_ref}")
        return path.read_bytes()

    # -- export --

    def export_reviews(self, out_dir: str | Path) -> Path:
        """Write labeled crops plus a JSONL manifest usable as retraining
        data; rejected and pending items are excluded."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with self._lock:
            labeled = [r for r in self._reviews.values()
                       if r.status == REVIEW_LABELED and self._live_review_base(r)]
        labeled.sort(key=lambda r: r.id)
        manifest = out / "manifest.jsonl"
        with open(manifest, "w", encoding="utf-8") as f:
            for r in labeled:
                crop_name = f"{r.crop_ref}.png"
                (out / crop_name).write_bytes(self.load_crop_bytes(r.crop_ref))
                f.write(json.dumps({
                    "crop": crop_name,
                    "species_index": r.assigned_label,
                    "label": self.cfg.species_labels[r.assigned_label],
                    "clip_id": r.clip_id,
                    "frame_index": r.frame_index,
                    "bbox": r.bbox.as_list(),
                    "reviewed_at": format_ts(r.reviewed_at),
                }, separators=(",", ":")) + "\n")
        return manifest

    # -- quarantine --

    def quarantine_file(self, path: str | Path, reason: str) -> Path:
        """Move a rejected file into quarantine with a ``.reason`` sidecar."""
        src = Path(path)
        dest = self.quarantine_dir / src.name
        n = 1
        while dest.exists():
            dest = self.quarantine_dir / f"{src.stem}.{n}{src.suffix}"
            n += 1
        if src.exists():
            os.replace(src, dest)
        else:
            dest.touch()
        dest.with_name(dest.name + ".reason").write_text(reason + "\n")
        return dest


def _encode_cursor(key: tuple) -> str:
    return base64.urlsafe_b64encode(json.dumps(list(key)).encode()).decode("ascii")


def _decode_cursor(cursor: str) -> tuple:
    try:
        decoded = json.loads(base64.urlsafe_b64decode(cursor.encode("ascii")))
        if not isinstance(decoded, list):
            raise ValueError("cursor payload is not a list")
        return tuple(decoded)
    except Exception as e:
        raise StoreError(f"malformed cursor: {e}") from e
