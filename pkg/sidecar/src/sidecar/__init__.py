"""Inference sidecar for the aviary daemon.

Hosts a COCO-class instance detector and a fine-grained species classifier
behind the daemon's wire protocol, so the monitoring pipeline runs unchanged
whether inference is mocked or real.
"""

__version__ = "0.1.0"
