"""Per-clip processing: frames -> blur gate -> detect -> gates -> classify.

Every kept detection ends up as exactly one Sighting (confidence strictly
above the gate) or exactly one ReviewItem (everything else).  Record ids and
timestamps derive from the job and clip content, never from the wall clock,
so reprocessing after a crash reproduces byte-identical records.
"""

from __future__ import annotations

import logging
from datetime import timedelta

from . import gating, media
from .backends import BackendRetriableError
from .store import (
    ClipJob,
    ClipResult,
    ReviewItem,
    Sighting,
    Store,
    crop_ref_for,
    review_item_id,
    sighting_id,
)

log = logging.getLogger("aviary.pipeline")

CLASSIFIER_INPUT_SIZE = 224  # fixed square classifier input, boxes stretched
REVIEW_TOPK = 3  # candidates surfaced to the reviewer


class ShutdownInterrupt(Exception):
    """Raised between frames when the daemon is shutting down."""


def process_clip(job: ClipJob, cfg, backend, store: Store | None = None,
                 shutdown=None) -> ClipResult:
    """Run the full pipeline on one clip.

    With a store, results are committed atomically and the job is marked
    done; without one this is a dry run that persists nothing.  Decode
    failures and backend errors propagate; the caller owns job-status
    bookkeeping for failures.
    """
    frames = media.sample_frames(job.path, cfg.sample_rate_hz, clip_id=job.id,
                                 decoder_cmd=cfg.decoder_cmd)
    result = ClipResult(
        clip_id=job.id,
        frames_sampled=len(frames),
        frames_blurred=0,
        detections_raw=0,
        detections_kept=0,
    )
    crops = {}  # crop_ref -> pixels, written to the store at commit

    for frame in frames:
        if shutdown is not None and shutdown.is_set():
            raise ShutdownInterrupt(f"shutdown during clip {job.id}")
        if frame.width >= 3 and frame.height >= 3:
            if media.blur_score(frame) < cfg.blur_threshold:
                result.frames_blurred += 1
                continue
        raw = backend.detect(frame)
        result.detections_raw += len(raw)
        kept = gating.filter_detections(raw, frame.width, frame.height, cfg)
        result.detections_kept += len(kept)
        for det in kept:
            cropped = media.crop(frame, det.bbox)
            sized = media.resize(cropped, CLASSIFIER_INPUT_SIZE, CLASSIFIER_INPUT_SIZE)
            runs = [backend.classify(sized)]
            if cfg.tta_enabled:
                runs.append(backend.classify(media.flip_horizontal(sized)))
            probs = gating.tta_average(runs)
            decision = gating.classify_gate(probs, cfg, k=REVIEW_TOPK)

            crop_ref = crop_ref_for(cropped.pixels)
            crops[crop_ref] = cropped.pixels
            seen_at = job.received_at + timedelta(seconds=frame.t_offset_s)
            if decision.kind == gating.AUTO_LOG:
                result.sightings.append(Sighting(
                    id=sighting_id(job.id, frame.frame_index, det.bbox,
                                   decision.species_index),
                    clip_id=job.id,
                    frame_index=frame.frame_index,
                    bbox=det.bbox,
                    species_index=decision.species_index,
                    species_label=cfg.species_labels[decision.species_index],
                    confidence=decision.confidence,
                    decided_by="auto",
                    created_at=seen_at,
                    crop_ref=crop_ref,
                ))
            else:
                result.review_items.append(ReviewItem(
                    id=review_item_id(job.id, frame.frame_index, det.bbox),
                    crop_ref=crop_ref,
                    clip_id=job.id,
                    frame_index=frame.frame_index,
                    bbox=det.bbox,
                    topk=decision.topk,
                ))

    result.species_summary = aggregate_clip(result.sightings)

    if store is not None:
        for pixels in crops.values():
            store.save_crop(pixels)
        store.commit_clip_result(result)
        store.update_job_status(job.id, "done")
    return result


def aggregate_clip(sightings: list[Sighting]) -> list[tuple[str, int, float]]:
    """Per-clip species rollup: (label, count, mean confidence), sorted by
    count desc, mean confidence desc, label asc."""
    groups: dict[str, list[float]] = {}
    for s in sightings:
        groups.setdefault(s.species_label, []).append(s.confidence)
    rows = [(label, len(confs), sum(confs) / len(confs)) for label, confs in groups.items()]
    rows.sort(key=lambda row: (-row[1], -row[2], row[0]))
    return rows


def format_clip_result(result: ClipResult, jobs=None) -> str:
    """Human-readable one-clip report for the CLI."""
    lines = [
        f"clip        : {result.clip_id}",
        f"frames      : {result.frames_sampled} sampled, {result.frames_blurred} blurred",
        f"detections  : {result.detections_raw} raw, {result.detections_kept} kept",
        f"sightings   : {len(result.sightings)}",
        f"review items: {len(result.review_items)}",
    ]
    for label, count, conf in result.species_summary:
        lines.append(f"  {label}: {count} (mean confidence {conf:.3f})")
    for s in result.sightings:
        lines.append(
            f"  sighting {s.id} frame {s.frame_index} {s.species_label} p={s.confidence:.3f}"
        )
    for r in result.review_items:
        best = r.topk[0]
        lines.append(
            f"  review {r.id} frame {r.frame_index} top1={best[0]} p={best[1]:.3f}"
        )
    return "\n".join(lines)


def run_with_retries(job: ClipJob, cfg, backend, store: Store,
                     shutdown=None, max_attempts: int = 3,
                     backoff_s: float = 0.5) -> ClipResult | None:
    """Worker entry: bounded retries on transient backend failures.

    Decode failures mark the job failed immediately; backend outages retry
    with a short backoff, then fail the job once attempts are exhausted.
    A shutdown mid-clip re-persists the job as pending for the next start.
    Returns None when the job did not complete.
    """
    store.update_job_status(job.id, "processing")
    for attempt in range(1, max_attempts + 1):
        try:
            return process_clip(job, cfg, backend, store=store, shutdown=shutdown)
        except BackendRetriableError as e:
            log.warning("backend unavailable for %s (attempt %d/%d): %s",
                        job.id, attempt, max_attempts, e)
            if attempt == max_attempts:
                store.update_job_status(job.id, "failed")
                return None
            if shutdown is not None and shutdown.wait(backoff_s):
                store.update_job_status(job.id, "pending")
                raise ShutdownInterrupt(f"shutdown while retrying {job.id}")
        except ShutdownInterrupt:
            store.update_job_status(job.id, "pending")
            raise
        except media.MediaError as e:
            log.error("clip %s failed to decode: %s", job.id, e)
            store.update_job_status(job.id, "failed")
            return None
    return None
