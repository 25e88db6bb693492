"""Bouncing-shapes videos, frame-directory ingestion, and still/raw export."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff.rng import generator
from .checkpoint import Record, read_records, write_records

SUPERSAMPLE = 4
STILL_SUFFIXES = (".ppm", ".pgm")


@dataclass
class DatasetSpec:
    resolution: int = 32
    channels: int = 1
    n_videos: int = 64
    frames_per_video: int = 64
    shape_classes: tuple = ("circle", "square")
    velocity_range: tuple = (0.5, 2.0)
    size_range: tuple = (4.0, 6.0)
    fps: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        self.shape_classes = tuple(self.shape_classes)
        self.velocity_range = tuple(self.velocity_range)
        self.size_range = tuple(self.size_range)


@dataclass
class VideoClip:
    frames: np.ndarray  # (n, C, H, W) in [-1, 1]
    label: int = -1
    source_id: str = ""
    fps: float = 8.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim != 4 or f.shape[0] < 1:
            raise ValueError(f"clip frames must be (n>=1, C, H, W), got {f.shape}")
        if not np.all(np.isfinite(f)) or f.min() < -1.0 or f.max() > 1.0:
            raise ValueError("clip frames must be finite and within [-1, 1]")
        self.frames = f

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def __len__(self) -> int:
        return self.frames.shape[0]


def simulate(p0, v0, n: int, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-velocity motion with elastic reflection at ``lo``/``hi``.

    Returns positions and velocities, both (n, 2). Overshoot past a wall is
    mirrored back inside and that velocity component flips sign.
    """
    p = np.array(p0, dtype=np.float64)
    v = np.array(v0, dtype=np.float64)
    pos, vel = np.empty((n, 2)), np.empty((n, 2))
    for t in range(n):
        pos[t], vel[t] = p, v
        p = p + v
        for k in range(2):
            # loop covers velocities larger than the box
            while p[k] < lo or p[k] > hi:
                p[k] = 2 * lo - p[k] if p[k] < lo else 2 * hi - p[k]
                v[k] = -v[k]
    return pos, vel


def coverage(kind: str, center, size: float, resolution: int) -> np.ndarray:
    """Fraction of each pixel covered by the shape, via 4x4 supersampling.

    Pixel (row i, col j) spans [j, j+1) x [i, i+1); ``center`` is (x, y).
    """
    offs = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    coords = (np.arange(resolution)[:, None] + offs[None, :]).reshape(-1)
    xs = coords[None, :] - center[0]
    ys = coords[:, None] - center[1]
    if kind == "circle":
        inside = xs * xs + ys * ys <= size * size
    elif kind == "square":
        inside = (np.abs(xs) <= size) & (np.abs(ys) <= size)
    else:
        raise ValueError(f"unknown shape class {kind!r}")
    return inside.reshape(resolution, SUPERSAMPLE, resolution, SUPERSAMPLE).mean(axis=(1, 3))


def gen_bouncing_video(spec: DatasetSpec, index: int) -> VideoClip:
    if not 0 <= index < spec.n_videos:
        raise IndexError(f"video index {index} out of range [0, {spec.n_videos})")
    rng = generator(spec.seed, "video", index)
    label = int(rng.integers(len(spec.shape_classes)))
    size = rng.uniform(*spec.size_range)
    lo, hi = size, spec.resolution - size
    p0 = rng.uniform(lo, hi, size=2)
    speed = rng.uniform(*spec.velocity_range)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    color = rng.uniform(0.4, 1.0, size=spec.channels) if spec.channels == 3 else np.ones(1)
    pos, _ = simulate(p0, (speed * math.cos(angle), speed * math.sin(angle)), spec.frames_per_video, lo, hi)
    kind = spec.shape_classes[label]
    frames = np.empty((spec.frames_per_video, spec.channels, spec.resolution, spec.resolution), np.float32)
    for t, c in enumerate(pos):
        cov = coverage(kind, c, size, spec.resolution)
        frames[t] = -1.0 + 2.0 * cov[None] * color[:, None, None]
    return VideoClip(frames, label, f"bouncing-{spec.seed}-{index}", spec.fps)


def make_dataset(spec: DatasetSpec) -> list[VideoClip]:
    return [gen_bouncing_video(spec, i) for i in range(spec.n_videos)]


def sample_training_clip(video: VideoClip, n_frames: int, rng: np.random.Generator) -> VideoClip:
    """``n_frames`` consecutive frames from a uniformly random start."""
    if video.n_frames < n_frames:
        raise ValueError(f"video has {video.n_frames} frames, need {n_frames}")
    start = int(rng.integers(video.n_frames - n_frames + 1))
    return VideoClip(video.frames[start:start + n_frames], video.label, video.source_id, video.fps)


# -- still images -----------------------------------------------------------

def quantize(x: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to 0..255, rounding half away from zero (0 -> 128)."""
    y = (np.clip(np.asarray(x, dtype=np.float64), -1.0, 1.0) + 1.0) * 127.5
    return np.floor(y + 0.5).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return (q.astype(np.float32) / 127.5 - 1.0).astype(np.float32)


def encode_still(frame: np.ndarray, fmt: str) -> bytes:
    """Encode one (C, H, W) frame as binary PPM (P6) or PGM (P5)."""
    c, h, w = frame.shape
    if fmt == "ppm":
        rgb = frame if c == 3 else np.repeat(frame, 3, axis=0)
        body = quantize(rgb).transpose(1, 2, 0).tobytes()
        magic = b"P6"
    elif fmt == "pgm":
        if c != 1:
            raise ValueError("pgm export needs single-channel frames")
        body = quantize(frame[0]).tobytes()
        magic = b"P5"
    else:
        raise ValueError(f"unknown still format {fmt!r}")
    return magic + b"\n%d %d\n255\n" % (w, h) + body


def decode_still(buf: bytes) -> np.ndarray:
    """Decode binary PPM/PGM (maxval 255) into a (C, H, W) array in [-1, 1]."""
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        tokens.append(buf[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    c = {b"P6": 3, b"P5": 1}.get(magic)
    if c is None:
        raise ValueError(f"unsupported magic {magic!r}")
    body = np.frombuffer(buf, dtype=np.uint8, count=w * h * c, offset=pos) if len(buf) >= pos + w * h * c else None
    if body is None:
        raise ValueError("pixel data truncated")
    return dequantize(body.reshape(h, w, c).transpose(2, 0, 1))


def export_frames(clip: VideoClip, path, fmt: str = "pgm") -> list[Path]:
    """Write one still per frame as ``frame_0000.<fmt>`` under ``path``."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        out = []
        for t, frame in enumerate(clip.frames):
            f = path / f"frame_{t:04d}.{fmt}"
            f.write_bytes(encode_still(frame, fmt))
            out.append(f)
    except OSError as exc:
        raise OSError(f"export to {path} failed: {exc}") from exc
    return out


def export_raw(clip: VideoClip, path) -> None:
    """Write the clip losslessly in the checkpoint container, role ``video``."""
    tensors = {"frames": clip.frames, "label": np.array([clip.label], np.float32),
               "fps": np.array([clip.fps], np.float32)}
    try:
        write_records(path, [Record("video", tensors)])
    except OSError as exc:
        raise OSError(f"raw export to {path} failed: {exc}") from exc


def load_raw(path) -> VideoClip:
    rec = read_records(path)["video"]
    return VideoClip(rec.tensors["frames"], int(rec.tensors["label"][0]), Path(path).stem,
                     float(rec.tensors["fps"][0]))


def resize(frame: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a (C, H, W) frame to (C, size, size), pixel-centre aligned."""
    c, h, w = frame.shape
    if (h, w) == (size, size):
        return frame.astype(np.float32)
    ys = np.clip((np.arange(size) + 0.5) * h / size - 0.5, 0, h - 1)
    xs = np.clip((np.arange(size) + 0.5) * w / size - 0.5, 0, w - 1)
    y0, x0 = np.floor(ys).astype(int), np.floor(xs).astype(int)
    y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    top = frame[:, y0][:, :, x0] * (1 - fx) + frame[:, y0][:, :, x1] * fx
    bot = frame[:, y1][:, :, x0] * (1 - fx) + frame[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def _to_channels(frame: np.ndarray, channels: int) -> np.ndarray:
    if frame.shape[0] == channels:
        return frame
    if channels == 1:
        return frame.mean(axis=0, keepdims=True)
    return np.repeat(frame, 3, axis=0)


def load_frame_dir(path, spec: DatasetSpec) -> list[VideoClip]:
    """Load ``path/<video>/<frame>.ppm|pgm`` sequences, sorted lexicographically."""
    root = Path(path)
    videos = sorted(d for d in root.iterdir() if d.is_dir()) if root.is_dir() else []
    if not videos:
        warnings.warn(f"no video subdirectories under {root}")
        return []
    clips, bad = [], []
    for d in videos:
        frames = []
        for f in sorted(p for p in d.iterdir() if p.suffix.lower() in STILL_SUFFIXES):
            try:
                img = decode_still(f.read_bytes())
            except (OSError, ValueError) as exc:
                bad.append(f"{f}: {exc}")
                continue
            frames.append(resize(_to_channels(img, spec.channels), spec.resolution))
        if frames:
            clips.append(VideoClip(np.clip(np.stack(frames), -1, 1), -1, d.name, spec.fps))
    if bad:
        raise ValueError("unreadable frames:\n  " + "\n  ".join(bad))
    return clips


def write_dataset(spec: DatasetSpec, out_dir, fmt: str | None = None) -> Path:
    """Synthesise the dataset as frame directories plus ``manifest.txt``.

    Manifest lines are ``id,label,n_frames,path`` with paths relative to ``out_dir``.
    """
    out = Path(out_dir)
    fmt = fmt or ("pgm" if spec.channels == 1 else "ppm")
    lines = []
    for i in range(spec.n_videos):
        clip = gen_bouncing_video(spec, i)
        rel = f"video_{i:05d}"
        export_frames(clip, out / rel, fmt)
        lines.append(f"{clip.source_id},{clip.label},{clip.n_frames},{rel}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_manifest(path) -> list[dict]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            vid, label, n, rel = line.split(",", 3)
            rows.append({"id": vid, "label": int(label), "n_frames": int(n), "path": rel})
    return rows


def load_dataset_dir(path, spec: DatasetSpec) -> list[VideoClip]:
    """Load a directory written by :func:`write_dataset`, restoring labels from the manifest."""
    root = Path(path)
    clips = load_frame_dir(root, spec)
    manifest = root / "manifest.txt"
    if manifest.exists():
        labels = {row["path"]: row["label"] for row in read_manifest(manifest)}
        for c in clips:
            c.label = labels.get(c.source_id, -1)
    return clips


@dataclass
class FramePool:
    """All frames of a clip list flattened to (N, C, H, W), with labels."""

    frames: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    @classmethod
    def from_clips(cls, clips) -> "FramePool":
        frames = np.concatenate([c.frames for c in clips])
        labels = np.concatenate([np.full(c.n_frames, c.label) for c in clips])
        return cls(frames, labels)
