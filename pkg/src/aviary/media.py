"""Frame decoding and raster operations.

Everything downstream of the decoder works on ``FrameImage``: a row-major
RGB8 raster held as a numpy ``(h, w, 3)`` uint8 array.  Real codecs are
delegated to an external decoder command that must emit the raw AVRY1
container; AVRY1 itself is parsed here bit-exactly.

AVRY1 layout (little-endian throughout):

    magic   5 bytes  b"AVRY1"
    u32     width
    u32     height
    u32     frame_count
    u32     timebase_hz
    then frame_count records of:
        u64     timestamp_ticks
        bytes   width*height*3 RGB8
"""

from __future__ import annotations

import shlex
import struct
import subprocess
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

AVRY1_MAGIC = b"AVRY1"

# Canonical ImageNet statistics used for classifier input standardization.
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class MediaError(Exception):
    """Base for decode and raster errors."""


class ClipDecodeError(MediaError):
    """The clip bytes could not be decoded into frames."""


class ZeroDurationClipError(MediaError):
    """The clip decoded fine but contains no frames."""


@dataclass
class FrameImage:
    pixels: np.ndarray  # (h, w, 3) uint8, row-major RGB
    clip_id: str
    frame_index: int
    t_offset_s: float

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be (h, w, 3), got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("frame must be at least 1x1")
        self.pixels = px

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass
class NormalizedTensor:
    width: int
    height: int
    channels: int
    values: np.ndarray  # (h, w, 3) float32, per-channel standardized


# --- AVRY1 container ---------------------------------------------------------

_HEADER = struct.Struct("<4I")  # width, height, frame_count, timebase_hz
_TS = struct.Struct("<Q")


def write_avry1(path: str | Path, width: int, height: int, timebase_hz: int,
                frames: list[tuple[int, np.ndarray]]) -> None:
    """Write an AVRY1 file from (timestamp_ticks, (h,w,3) uint8) pairs."""
    with open(path, "wb") as f:
        f.write(AVRY1_MAGIC)
        f.write(_HEADER.pack(width, height, len(frames), timebase_hz))
        for ticks, pixels in frames:
            pixels = np.asarray(pixels, dtype=np.uint8)
            if pixels.shape != (height, width, 3):
                raise ValueError(f"frame shape {pixels.shape} != ({height}, {width}, 3)")
            f.write(_TS.pack(ticks))
            f.write(pixels.tobytes())


class _Avry1Reader:
    def __init__(self, path: Path):
        self.path = path
        data_start = len(AVRY1_MAGIC) + _HEADER.size
        with open(path, "rb") as f:
            head = f.read(data_start)
        if len(head) < data_start or head[: len(AVRY1_MAGIC)] != AVRY1_MAGIC:
            raise ClipDecodeError(f"{path}: not an AVRY1 file")
        self.width, self.height, self.frame_count, self.timebase_hz = _HEADER.unpack(
            head[len(AVRY1_MAGIC):]
        )
        if self.width < 1 or self.height < 1:
            raise ClipDecodeError(f"{path}: invalid dimensions {self.width}x{self.height}")
        if self.timebase_hz < 1:
            raise ClipDecodeError(f"{path}: invalid timebase {self.timebase_hz}")
        self._frame_bytes = self.width * self.height * 3
        self._record = _TS.size + self._frame_bytes
        self._data_start = data_start
        expected = data_start + self.frame_count * self._record
        actual = path.stat().st_size
        if actual < expected:
            raise ClipDecodeError(
                f"{path}: truncated, expected {expected} bytes, have {actual}"
            )

    def timestamps_ticks(self) -> list[int]:
        out = []
        with open(self.path, "rb") as f:
            for i in range(self.frame_count):
                f.seek(self._data_start + i * self._record)
                out.append(_TS.unpack(f.read(_TS.size))[0])
        return out

    def read_frame(self, index: int) -> np.ndarray:
        with open(self.path, "rb") as f:
            f.seek(self._data_start + index * self._record + _TS.size)
            buf = f.read(self._frame_bytes)
        if len(buf) != self._frame_bytes:
            raise ClipDecodeError(f"{self.path}: short read at frame {index}")
        return np.frombuffer(buf, dtype=np.uint8).reshape(self.height, self.width, 3)


def run_decoder(cmd_template: str, clip: Path, out: Path, rate_hz: float) -> None:
    """Run the external decoder command to produce an AVRY1 file."""
    cmd = [
        part.format(input=str(clip), output=str(out), rate=rate_hz)
        for part in shlex.split(cmd_template)
    ]
    try:
        proc = subprocess.run(cmd, capture_output=True, timeout=300)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise ClipDecodeError(f"decoder failed for {clip}: {e}") from e
    if proc.returncode != 0:
        tail = proc.stderr.decode(errors="replace")[-400:]
        raise ClipDecodeError(f"decoder exited {proc.returncode} for {clip}: {tail}")
    if not out.is_file():
        raise ClipDecodeError(f"decoder produced no output for {clip}")


def sample_frames(clip: str | Path, rate_hz: float, clip_id: str | None = None,
                  decoder_cmd: str = "") -> list[FrameImage]:
    """Decode a clip and sample frames at t = 0, 1/rate, 2/rate, ...

    Sample instants run strictly within the clip duration; any nonempty clip
    yields at least the t=0 frame.  Each sample maps to the stored frame whose
    timestamp is nearest (ties to the earlier frame).  ``frame_index`` is the
    sample ordinal, so ``t_offset_s == frame_index / rate_hz`` holds.
    """
    if rate_hz <= 0:
        raise ValueError(f"rate_hz must be > 0, got {rate_hz}")
    path = Path(clip)
    if not path.is_file():
        raise ClipDecodeError(f"clip not found: {path}")
    if clip_id is None:
        clip_id = path.stem

    with open(path, "rb") as f:
        magic = f.read(len(AVRY1_MAGIC))
    if magic == AVRY1_MAGIC:
        reader = _Avry1Reader(path)
        return _sample_from_reader(reader, rate_hz, clip_id)
    if not decoder_cmd:
        raise ClipDecodeError(f"{path}: not an AVRY1 file and no decoder configured")
    with tempfile.TemporaryDirectory(prefix="aviary-decode-") as tmp:
        out = Path(tmp) / "decoded.avry"
        run_decoder(decoder_cmd, path, out, rate_hz)
        reader = _Avry1Reader(out)
        return _sample_from_reader(reader, rate_hz, clip_id)


def _sample_from_reader(reader: _Avry1Reader, rate_hz: float, clip_id: str) -> list[FrameImage]:
    n = reader.frame_count
    if n == 0:
        raise ZeroDurationClipError(f"{reader.path}: clip has no frames")
    ticks = reader.timestamps_ticks()
    ts = [t / reader.timebase_hz for t in ticks]
    if n == 1:
        duration = 0.0
    else:
        # Assume the last frame persists for one nominal inter-frame period,
        # so a 25-frame capture spanning 9.6 s is a 10 s clip.
        duration = ts[-1] + (ts[-1] - ts[0]) / (n - 1)

    # floor(duration * rate) samples, never fewer than one; the 1e-9 guard
    # keeps exact products like 10.0 * 1.0 from flooring down.
    count = max(1, int(np.floor(duration * rate_hz + 1e-9)))
    frames: list[FrameImage] = []
    for k in range(count):
        t = k / rate_hz
        deltas = [abs(s - t) for s in ts]
        src = deltas.index(min(deltas))  # index() takes the earliest tie
        frames.append(FrameImage(
            pixels=reader.read_frame(src),
            clip_id=clip_id,
            frame_index=k,
            t_offset_s=t,
        ))
    return frames


# --- Raster operations -------------------------------------------------------

def grayscale(frame: FrameImage) -> np.ndarray:
    """Integer luma (77*R + 150*G + 29*B) >> 8, bit-exact across platforms."""
    px = frame.pixels.astype(np.int32)
    return (77 * px[:, :, 0] + 150 * px[:, :, 1] + 29 * px[:, :, 2]) >> 8


def blur_score(frame: FrameImage) -> float:
    """Variance of the 3x3 Laplacian response on the integer-luma grayscale.

    Kernel [0,1,0; 1,-4,1; 0,1,0], edge pixels excluded; returns the
    population variance over interior pixels.  Low values indicate blur.
    """
    if frame.width < 3 or frame.height < 3:
        raise ValueError(f"frame smaller than 3x3: {frame.width}x{frame.height}")
    g = grayscale(frame).astype(np.int64)
    resp = (g[:-2, 1:-1] + g[2:, 1:-1] + g[1:-1, :-2] + g[1:-1, 2:] - 4 * g[1:-1, 1:-1])
    return float(np.var(resp.astype(np.float64)))


def crop(frame: FrameImage, bbox) -> FrameImage:
    """Extract the bbox region: rows y1..y2-1, cols x1..x2-1.

    Fractional coordinates are floored (mins) / ceiled (maxes) and clamped to
    the frame, salvaging partial boxes at frame edges.  Provenance fields are
    inherited so downstream consumers can trace the crop to its frame.
    """
    for v in (bbox.x1, bbox.y1, bbox.x2, bbox.y2):
        if not np.isfinite(v):
            raise ValueError(f"bbox coordinates must be finite, got {bbox}")
    x1 = max(0, int(np.floor(bbox.x1)))
    y1 = max(0, int(np.floor(bbox.y1)))
    x2 = min(frame.width, int(np.ceil(bbox.x2)))
    y2 = min(frame.height, int(np.ceil(bbox.y2)))
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"degenerate bbox: {bbox} on {frame.width}x{frame.height} frame")
    return replace(frame, pixels=frame.pixels[y1:y2, x1:x2].copy())


def resize(frame: FrameImage, out_w: int, out_h: int) -> FrameImage:
    """Bilinear resize with half-pixel centers; aspect ratio is NOT preserved
    (the classifier expects a fixed square input, so boxes are stretched)."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output dims must be >= 1, got {out_w}x{out_h}")
    if out_w == frame.width and out_h == frame.height:
        return replace(frame, pixels=frame.pixels.copy())

    src = frame.pixels.astype(np.float64)
    sx = (np.arange(out_w) + 0.5) * (frame.width / out_w) - 0.5
    sy = (np.arange(out_h) + 0.5) * (frame.height / out_h) - 0.5
    sx = np.clip(sx, 0.0, frame.width - 1.0)
    sy = np.clip(sy, 0.0, frame.height - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, frame.width - 1)
    y1 = np.minimum(y0 + 1, frame.height - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    vals = top * (1 - fy) + bot * fy
    out = np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)
    return replace(frame, pixels=out)


def flip_horizontal(frame: FrameImage) -> FrameImage:
    return replace(frame, pixels=frame.pixels[:, ::-1].copy())


def normalize(frame: FrameImage) -> NormalizedTensor:
    """Per-channel standardization with the canonical ImageNet constants:
    value = (pixel/255 - mean_c) / std_c."""
    scaled = frame.pixels.astype(np.float32) / 255.0
    mean = np.array(IMAGENET_MEAN, dtype=np.float32)
    std = np.array(IMAGENET_STD, dtype=np.float32)
    return NormalizedTensor(
        width=frame.width,
        height=frame.height,
        channels=3,
        values=(scaled - mean) / std,
    )
