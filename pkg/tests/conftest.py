import hashlib

import numpy as np
import pytest

from aviary.config import AppConfig
from aviary.media import FrameImage, write_avry1


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        verdict = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {verdict}: {name}")


def make_frame(pixels, clip_id="test", frame_index=0, t_offset_s=0.0):
    return FrameImage(pixels=np.asarray(pixels, dtype=np.uint8),
                      clip_id=clip_id, frame_index=frame_index, t_offset_s=t_offset_s)


def noise_frame(w, h, seed=0, **kw):
    rng = np.random.RandomState(seed)
    return make_frame(rng.randint(0, 256, size=(h, w, 3), dtype=np.uint8), **kw)


def constant_frame(w, h, value=128, **kw):
    return make_frame(np.full((h, w, 3), value, dtype=np.uint8), **kw)


def write_clip(path, frames, timebase_hz=1000, interval_ticks=1000):
    """Write an AVRY1 clip from a list of (h, w, 3) arrays at fixed spacing."""
    frames = [np.asarray(f, dtype=np.uint8) for f in frames]
    h, w = frames[0].shape[:2]
    records = [(i * interval_ticks, f) for i, f in enumerate(frames)]
    write_avry1(path, w, h, timebase_hz, records)
    return path


def clip_hash_prefix(path):
    """Content-hash prefix used for job ids and mock fixture lookup."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        digest.update(f.read())
    return digest.hexdigest()[:12]


@pytest.fixture
def cfg(tmp_path):
    return AppConfig(
        ingest_dir=str(tmp_path / "ingest"),
        store_dir=str(tmp_path / "store"),
        ftp_enabled=False,
    )
