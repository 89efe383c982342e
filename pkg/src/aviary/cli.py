"""Command-line entry points.

    aviary serve --config <path> [--set key=value]...
    aviary process <clip> [--commit]
    aviary eval <manifest.jsonl> [--out-dir <dir>]
    aviary export-reviews <dir>

``AVIARY_CONFIG`` is the fallback config path when --config is absent (no
config at all means documented defaults); ``AVIARY_LOG`` sets the log level.
Exit codes: 0 success, 1 usage/config error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
from pathlib import Path

from . import evaluation
from .backends import BackendError
from .config import AppConfig, ConfigError, load_config
from .daemon import Daemon, DaemonError, run_once
from .media import MediaError
from .store import Store, StoreError

log = logging.getLogger("aviary")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aviary",
        description="Self-hosted bird feeder monitoring server",
    )
    parser.add_argument("--config", "-c", default=None,
                        help="config file path (default: $AVIARY_CONFIG or built-in defaults)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("serve", help="run the ingest/pipeline/API daemon")

    p_process = sub.add_parser("process", help="process one clip synchronously")
    p_process.add_argument("clip", help="path to the clip file")
    p_process.add_argument("--commit", action="store_true",
                           help="persist results to the store (default: dry run)")

    p_eval = sub.add_parser("eval", help="run the offline evaluation harness")
    p_eval.add_argument("manifest", help="JSONL manifest of labeled predictions")
    p_eval.add_argument("--out-dir", default=None,
                        help="where metrics.json/confusion.csv land (default: manifest dir)")

    p_export = sub.add_parser("export-reviews", help="export labeled crops for retraining")
    p_export.add_argument("out_dir", help="output directory for crops + manifest.jsonl")

    return parser


def _load(args) -> AppConfig:
    path = args.config or os.environ.get("AVIARY_CONFIG") or None
    return load_config(path, args.overrides)


def _cmd_serve(cfg: AppConfig) -> int:
    daemon = Daemon(cfg)

    def _on_signal(signum, frame):
        log.info("received signal %d, shutting down", signum)
        daemon.shutdown_event.set()

    signal.signal(signal.SIGINT, _on_signal)
    signal.signal(signal.SIGTERM, _on_signal)
    try:
        daemon.start()
    except DaemonError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    try:
        daemon.run_forever()
    finally:
        daemon.stop()
    return EXIT_OK


def _cmd_process(cfg: AppConfig, clip: str, commit: bool) -> int:
    try:
        print(run_once(cfg, clip, commit=commit))
        return EXIT_OK
    except (MediaError, DaemonError, BackendError, StoreError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def _cmd_eval(cfg: AppConfig, manifest: str, out_dir: str | None) -> int:
    path = Path(manifest)
    if not path.is_file():
        print(f"error: manifest not found: {path}", file=sys.stderr)
        return EXIT_USAGE
    try:
        kind = evaluation.manifest_kind(path)
        if kind == "detection":
            frames = evaluation.load_detection_manifest(path)
            res = evaluation.evaluate_detections(frames, cfg.iou_threshold)
            print(evaluation.format_detection_report(res))
            return EXIT_OK
        preds = evaluation.load_classification_manifest(path)
        report, matrix = evaluation.evaluate_classification(preds, cfg.species_labels)
        print(evaluation.format_report(report, len(preds)))
        metrics_path, csv_path = evaluation.write_outputs(
            report, matrix, cfg.species_labels, out_dir or path.parent)
        print(f"wrote {metrics_path} and {csv_path}")
        return EXIT_OK
    except evaluation.EvalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def _cmd_export_reviews(cfg: AppConfig, out_dir: str) -> int:
    try:
        store = Store(cfg.store_dir, cfg)
        try:
            manifest = store.export_reviews(out_dir)
        finally:
            store.close()
        print(f"wrote {manifest}")
        return EXIT_OK
    except (StoreError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("AVIARY_LOG", "INFO").upper(),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "serve":
        return _cmd_serve(cfg)
    if args.command == "process":
        return _cmd_process(cfg, args.clip, args.commit)
    if args.command == "eval":
        return _cmd_eval(cfg, args.manifest, args.out_dir)
    if args.command == "export-reviews":
        return _cmd_export_reviews(cfg, args.out_dir)
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
