"""Sidecar entry point.

    bird-sidecar --labels labels.json                     # stdio, stub models
    bird-sidecar --labels labels.json --models torchvision \
                 --detector-weights d.pth --classifier-weights c.pth
    bird-sidecar --labels labels.json --listen tcp://0.0.0.0:9900
    bird-sidecar --labels labels.json --selftest
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .models import ModelLoadError, build_models
from .selftest import CANONICAL_LABELS, GOLDEN_DIR, run_selftest
from .server import Server


def load_labels(path: str) -> list[str]:
    labels = json.loads(Path(path).read_text())
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise ModelLoadError(f"{path}: expected a JSON array of label strings")
    return labels


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="bird-sidecar",
                                 description="Inference sidecar for the aviary daemon")
    ap.add_argument("--labels", required=True, help="JSON file with the species label list")
    ap.add_argument("--models", default="stub", choices=("stub", "torchvision"))
    ap.add_argument("--detector-weights", default=None)
    ap.add_argument("--classifier-weights", default=None)
    ap.add_argument("--device", default="cpu")
    ap.add_argument("--det-input-size", type=int, default=800,
                    help="detector transform size; lower it on CPU-only boxes")
    ap.add_argument("--listen", default=None, metavar="tcp://HOST:PORT",
                    help="serve over TCP instead of stdio")
    ap.add_argument("--selftest", action="store_true",
                    help="run the golden-file protocol conformance suite and exit")
    ap.add_argument("--golden-dir", default=str(GOLDEN_DIR))
    args = ap.parse_args(argv)

    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(asctime)s sidecar %(levelname)s %(message)s")
    try:
        labels = load_labels(args.labels)
        models = build_models(args.models, labels,
                              detector_weights=args.detector_weights,
                              classifier_weights=args.classifier_weights,
                              device=args.device,
                              det_input_size=args.det_input_size)
    except (ModelLoadError, OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    if args.selftest:
        # committed goldens cover the deterministic stub backend with the
        # canonical label set; other combinations get schema + replay checks
        golden_name = None
        if args.models == "stub" and labels == CANONICAL_LABELS:
            golden_name = "stub_responses"
        ok, lines = run_selftest(models, golden_name=golden_name,
                                 golden_dir=Path(args.golden_dir))
        for line in lines:
            print(line)
        return 0 if ok else 1

    server = Server(models)
    if args.listen:
        if not args.listen.startswith("tcp://"):
            print(f"error: --listen expects tcp://HOST:PORT, got {args.listen}",
                  file=sys.stderr)
            return 1
        hostport = args.listen[len("tcp://"):]
        host, _, port = hostport.rpartition(":")
        server.serve_tcp(host or "0.0.0.0", int(port))
    else:
        server.serve_stdio()
    return 0


if __name__ == "__main__":
    sys.exit(main())
