"""End-to-end interop with the monitoring daemon, touching only external
interfaces: the daemon CLI + config file, the AVRY1 container bytes, the wire
protocol, and the HTTP API.  No imports from the daemon's package."""

import json
import os
import struct
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

SIDECAR_ROOT = Path(__file__).resolve().parents[1]
DAEMON_SRC = SIDECAR_ROOT.parent / "src"

LABELS = [f"species_{i:02d}" for i in range(40)]


def write_avry1(path, frames, spacing_ticks=1000, timebase=1000):
    h, w = frames[0].shape[:2]
    with open(path, "wb") as f:
        f.write(b"AVRY1")
        f.write(struct.pack("<4I", w, h, len(frames), timebase))
        for i, frame in enumerate(frames):
            f.write(struct.pack("<Q", i * spacing_ticks))
            f.write(frame.tobytes())


def test_daemon_runs_unchanged_against_sidecar(tmp_path):
    labels_file = tmp_path / "labels.json"
    labels_file.write_text(json.dumps(LABELS))
    sidecar_cmd = (f"{sys.executable} -m sidecar.cli "
                   f"--labels {labels_file} --models stub")

    config = tmp_path / "daemon.conf"
    config.write_text("\n".join([
        f"ingest_dir = {tmp_path / 'ingest'}",
        f"store_dir = {tmp_path / 'store'}",
        "ftp_enabled = false",
        "http_port = 0",
        "backend_mode = sidecar",
        f"sidecar_endpoint = {sidecar_cmd}",
        f"species_labels = {','.join(LABELS)}",
        "blur_threshold = 0",
    ]) + "\n")

    rng = np.random.RandomState(0)
    frames = [rng.randint(0, 256, size=(96, 128, 3), dtype=np.uint8)
              for _ in range(3)]
    ingest = tmp_path / "ingest" / "cam"
    ingest.mkdir(parents=True)

    env = {**os.environ,
           "PYTHONPATH": f"{DAEMON_SRC}:{SIDECAR_ROOT / 'src'}",
           "AVIARY_LOG": "WARNING"}
    proc = subprocess.Popen(
        [sys.executable, "-m", "aviary.cli", "--config", str(config), "serve"],
        env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE, text=True)
    try:
        write_avry1(ingest / "clip.avry", frames)
        jobs_path = tmp_path / "store" / "jobs.jsonl"
        deadline = time.monotonic() + 60
        done = False
        while time.monotonic() < deadline:
            if proc.poll() is not None:
                pytest.fail(f"daemon exited early: {proc.stderr.read()}")
            if jobs_path.is_file():
                statuses = [json.loads(l)["status"]
                            for l in jobs_path.read_text().splitlines() if l]
                if "done" in statuses:
                    done = True
                    break
                assert "failed" not in statuses, "daemon failed the clip"
            time.sleep(0.1)
        assert done, "daemon never finished the clip against the sidecar"
        # the clip journal records a completed pipeline run
        clips_path = tmp_path / "store" / "clips.jsonl"
        line = json.loads(clips_path.read_text().splitlines()[-1])
        assert line["frames_sampled"] == 3
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=15)
        except subprocess.TimeoutExpired:
            proc.kill()
