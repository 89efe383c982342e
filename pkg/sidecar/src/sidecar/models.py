"""Model backends behind one tiny interface.

``stub`` is a pure-numpy, content-hash-deterministic stand-in used by the
protocol conformance suite: same request bytes, same response bytes, any
machine.  ``torchvision`` hosts the real pair — a Mask R-CNN R50-FPN instance
detector and an EfficientNet-B3 classifier — loading weights from disk when
given, falling back to seeded random init (this box has no model zoo access;
accuracy is explicitly out of scope for protocol conformance).

Detections are returned unthresholded and with the backbone's native class
ids (torchvision COCO: bird=16; detectron2-style 80-class: bird=14).  Every
threshold and the bird class id live in the daemon's config, in one place.
"""

from __future__ import annotations

import hashlib

import numpy as np

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class ModelLoadError(Exception):
    pass


class StubModels:
    """Deterministic fake inference driven by a content hash of the pixels."""

    kind = "stub"

    def __init__(self, labels: list[str]):
        if not labels:
            raise ModelLoadError("label list is empty")
        self.labels = list(labels)

    def _digest(self, rgb: np.ndarray) -> bytes:
        h = hashlib.sha256()
        h.update(rgb.shape[1].to_bytes(4, "little"))
        h.update(rgb.shape[0].to_bytes(4, "little"))
        h.update(rgb.tobytes())
        return h.digest()

    def detect(self, rgb: np.ndarray) -> list[dict]:
        h, w = rgb.shape[:2]
        d = self._digest(rgb)
        out = []
        for i in range(d[0] % 3):  # 0..2 boxes
            s = d[4 * i + 1: 4 * i + 5]
            x1 = (s[0] * (w - 1)) // 512
            y1 = (s[1] * (h - 1)) // 512
            bw = max(1, (s[2] * w) // 512)
            bh = max(1, (s[3] * h) // 512)
            out.append({
                "x1": float(x1),
                "y1": float(y1),
                "x2": float(min(w, x1 + bw)),
                "y2": float(min(h, y1 + bh)),
                "score": 0.5 + d[8 + i] / 512.0,
                "class_id": 14 if d[12 + i] % 4 else 15,
            })
        return out

    def classify(self, rgb: np.ndarray) -> list[float]:
        d = self._digest(rgb)
        weights = [1 + d[i % len(d)] for i in range(len(self.labels))]
        total = sum(weights)
        return [wgt / total for wgt in weights]


class TorchvisionModels:
    """Real inference pair on torch; fully encapsulated behind the protocol."""

    kind = "torchvision"

    def __init__(self, labels: list[str], detector_weights: str | None = None,
                 classifier_weights: str | None = None, device: str = "cpu",
                 det_input_size: int = 800):
        if not labels:
            raise ModelLoadError("label list is empty")
        self.labels = list(labels)
        try:
            import torch
            import torchvision
        except ImportError as e:
            raise ModelLoadError(
                "torchvision backend requires torch+torchvision installed") from e
        self._torch = torch
        self.device = torch.device(device)
        torch.manual_seed(0)

        self.detector = torchvision.models.detection.maskrcnn_resnet50_fpn(
            weights=None, weights_backbone=None, num_classes=91,
            min_size=det_input_size, max_size=det_input_size)
        if detector_weights:
            state = torch.load(detector_weights, map_location=self.device)
            self.detector.load_state_dict(state)
        self.detector.to(self.device).eval()

        self.classifier = torchvision.models.efficientnet_b3(weights=None)
        in_features = self.classifier.classifier[1].in_features
        self.classifier.classifier[1] = torch.nn.Linear(in_features, len(labels))
        if classifier_weights:
            state = torch.load(classifier_weights, map_location=self.device)
            head = state.get("classifier.1.weight")
            if head is not None and head.shape[0] != len(labels):
                raise ModelLoadError(
                    f"classifier output width {head.shape[0]} does not match "
                    f"{len(labels)} labels")
            self.classifier.load_state_dict(state)
        self.classifier.to(self.device).eval()

    def detect(self, rgb: np.ndarray) -> list[dict]:
        torch = self._torch
        with torch.no_grad():
            t = torch.from_numpy(rgb.copy()).permute(2, 0, 1).float() / 255.0
            pred = self.detector([t.to(self.device)])[0]
        out = []
        boxes = pred["boxes"].cpu().numpy()
        scores = pred["scores"].cpu().numpy()
        classes = pred["labels"].cpu().numpy()
        for (x1, y1, x2, y2), score, cls in zip(boxes, scores, classes):
            out.append({
                "x1": float(x1), "y1": float(y1),
                "x2": float(x2), "y2": float(y2),
                "score": float(score),
                "class_id": int(cls),
            })
        return out

    def classify(self, rgb: np.ndarray) -> list[float]:
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(rgb.copy()).permute(2, 0, 1).float() / 255.0
            mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
            std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
            x = ((x - mean) / std).unsqueeze(0).to(self.device)
            logits = self.classifier(x)[0]
            probs = torch.softmax(logits, dim=0)
        return [float(p) for p in probs.cpu()]


def build_models(kind: str, labels: list[str], detector_weights=None,
                 classifier_weights=None, device="cpu", det_input_size=800):
    if kind == "stub":
        return StubModels(labels)
    if kind == "torchvision":
        return TorchvisionModels(labels, detector_weights, classifier_weights,
                                 device, det_input_size)
    raise ModelLoadError(f"unknown models backend {kind!r}")
