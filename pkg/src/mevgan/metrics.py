"""Fréchet distances, Inception Score and the desk-scale probe classifier.

All statistics are computed in float64 regardless of model precision. The
feature extractor is a small convolutional probe trained on the synthetic
shape labels; pretrained Inception/I3D networks are not used, so values are
only comparable within this toolkit.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ops
from .autodiff.nn import Conv2d, Linear, Module
from .autodiff.optim import Adam
from .autodiff.rng import generator
from .autodiff.tensor import Tape, Tensor, grad, no_grad

RIDGE = 1e-6
EIG_CLAMP = 1e-10
NEG_TOLERANCE = 1e-6
PROBE_GATE = 0.90


class MetricError(ValueError):
    pass


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def fit_gaussian(features) -> GaussianStats:
    """Sample mean and unbiased, symmetrised covariance; ridge added when N <= d."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise MetricError(f"fit_gaussian needs (N >= 2, d) samples, got shape {x.shape}")
    n, d = x.shape
    mu = x.mean(axis=0)
    xc = x - mu
    sigma = xc.T @ xc / (n - 1)
    sigma = 0.5 * (sigma + sigma.T)
    if n <= d:
        sigma = sigma + RIDGE * np.eye(d)
    return GaussianStats(mu, sigma)


def sqrtm_psd(a: np.ndarray) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition."""
    a = 0.5 * (a + a.T)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"eigendecomposition failed: {exc}") from exc
    w = np.where(w < EIG_CLAMP, 0.0, w)
    return (v * np.sqrt(w)) @ v.T


def trace_sqrt_product(sa: np.ndarray, sb: np.ndarray) -> float:
    """tr((Sa Sb)^1/2), computed as tr((Sa^1/2 Sb Sa^1/2)^1/2)."""
    ra = sqrtm_psd(sa)
    m = ra @ sb @ ra
    m = 0.5 * (m + m.T)
    try:
        w = np.linalg.eigvalsh(m)
    except np.linalg.LinAlgError as exc:
        raise MetricError(f"eigendecomposition failed: {exc}") from exc
    return float(np.sum(np.sqrt(np.where(w < EIG_CLAMP, 0.0, w))))


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise MetricError(f"dimension mismatch: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    d = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * trace_sqrt_product(a.sigma, b.sigma))
    if not math.isfinite(d) or d < -NEG_TOLERANCE:
        raise MetricError(f"Fréchet distance came out as {d}")
    return max(d, 0.0)


def inception_score(probs, splits: int = 5, seed: int | None = None) -> tuple[float, float]:
    """Mean and std of exp(E_x KL(p(y|x) || p(y))) over ``splits`` parts.

    Parts are contiguous in the given order, or a random partition when
    ``seed`` is given.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise MetricError("inception_score needs a non-empty (N, classes) array")
    if splits < 1 or splits > p.shape[0]:
        raise MetricError(f"splits must be in [1, {p.shape[0]}], got {splits}")
    if seed is not None:
        p = p[generator(seed, "is-split").permutation(p.shape[0])]
    scores = []
    for part in np.array_split(p, splits):
        marginal = part.mean(axis=0, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            kl = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0).sum(axis=1)
        scores.append(math.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


# -- probe classifier -------------------------------------------------------

class ProbeClassifier(Module):
    """Small conv classifier whose penultimate layer serves as the metric embedding."""

    def __init__(self, channels: int = 1, resolution: int = 32, n_classes: int = 2,
                 feature_dim: int = 64, seed: int = 0):
        rng = generator(seed, "probe-init")
        self.conv1 = Conv2d(channels, 8, 3, rng=rng)
        self.conv2 = Conv2d(8, 16, 3, rng=rng)
        self.fc = Linear(16 * (resolution // 4) ** 2, feature_dim, rng)
        self.out = Linear(feature_dim, n_classes, rng, init="xavier")
        self.resolution = resolution
        self.accuracy = float("nan")

    def features(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[2:] != (self.resolution, self.resolution):
            raise ValueError(f"probe expects {self.resolution}px frames, got shape {x.shape}")
        h = ops.avg_pool2x(ops.relu(self.conv1(ops.pad2d(x, 1))))
        h = ops.avg_pool2x(ops.relu(self.conv2(ops.pad2d(h, 1))))
        return ops.relu(self.fc(ops.reshape(h, (x.shape[0], -1))))

    def forward(self, x: Tensor) -> Tensor:
        return self.out(self.features(x))

    def embed(self, frames, batch: int = 256) -> np.ndarray:
        """Penultimate features (N, feature_dim) as float64."""
        frames = np.asarray(frames, dtype=np.float32)
        with no_grad():
            return np.concatenate([self.features(Tensor(frames[i:i + batch])).data.astype(np.float64)
                                   for i in range(0, len(frames), batch)])

    def predict_proba(self, frames, batch: int = 256) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float32)
        out = []
        with no_grad():
            for i in range(0, len(frames), batch):
                logits = self(Tensor(frames[i:i + batch])).data.astype(np.float64)
                logits -= logits.max(axis=1, keepdims=True)
                e = np.exp(logits)
                out.append(e / e.sum(axis=1, keepdims=True))
        return np.concatenate(out)

    def require_gate(self) -> None:
        if not self.accuracy >= PROBE_GATE:
            raise MetricError(f"probe accuracy {self.accuracy:.3f} below the {PROBE_GATE:.0%} gate")


def train_probe(frames, labels, n_classes: int = 2, steps: int = 1000, batch: int = 32,
                holdout: float = 0.2, seed: int = 0) -> ProbeClassifier:
    """Fit the probe on labelled frames; held-out accuracy is stored on the model."""
    frames = np.asarray(frames, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    if len(frames) != len(labels) or len(frames) < 2:
        raise ValueError("need matching frames and labels")
    rng = generator(seed, "probe-train")
    order = rng.permutation(len(frames))
    n_hold = max(1, int(round(holdout * len(frames))))
    hold, train = order[:n_hold], order[n_hold:]
    probe = ProbeClassifier(frames.shape[1], frames.shape[2], n_classes, seed=seed)
    opt = Adam(probe.parameters(), lr=1e-3, betas=(0.9, 0.999))
    for _ in range(steps):
        idx = train[rng.integers(len(train), size=batch)]
        with Tape():
            loss = ops.cross_entropy(probe(Tensor(frames[idx])), labels[idx])
            grads = grad(loss, probe.parameters())
        opt.step(grads)
    pred = probe.predict_proba(frames[hold]).argmax(axis=1)
    probe.accuracy = float(np.mean(pred == labels[hold]))
    return probe


# -- distances over frames and clips ----------------------------------------

def fid(real_frames, fake_frames, extractor) -> float:
    """Fréchet distance between Gaussian fits of per-frame embeddings."""
    if len(real_frames) == 0 or len(fake_frames) == 0:
        raise MetricError("fid needs non-empty frame sets")
    return frechet_distance(fit_gaussian(extractor(real_frames)), fit_gaussian(extractor(fake_frames)))


def clip_embedding(feats: np.ndarray) -> np.ndarray:
    """Per-clip embedding from per-frame features (N, n, d).

    Concatenates the mean feature over frames with the mean absolute change
    between consecutive frames, giving (N, 2d).
    """
    mean = feats.mean(axis=1)
    if feats.shape[1] > 1:
        motion = np.abs(np.diff(feats, axis=1)).mean(axis=1)
    else:
        motion = np.zeros_like(mean)
    return np.concatenate([mean, motion], axis=1)


def fvd_proxy(real_clips, fake_clips, extractor) -> float:
    """Fréchet distance between clip embeddings; clips are (N, n, C, H, W)."""
    real = np.asarray(real_clips, dtype=np.float32)
    fake = np.asarray(fake_clips, dtype=np.float32)
    if real.ndim != 5 or fake.ndim != 5:
        raise MetricError("clips must be (N, n, C, H, W)")
    if real.shape[1] != fake.shape[1]:
        raise MetricError(f"clip lengths differ: {real.shape[1]} vs {fake.shape[1]}")

    def embed(clips):
        n, t = clips.shape[:2]
        f = np.asarray(extractor(clips.reshape(n * t, *clips.shape[2:])), dtype=np.float64)
        return clip_embedding(f.reshape(n, t, -1))

    return frechet_distance(fit_gaussian(embed(real)), fit_gaussian(embed(fake)))


# -- reporting --------------------------------------------------------------

@dataclass
class MetricResult:
    metric: str
    value: float
    std: float
    n_samples: int
    extractor_id: str


def format_report(results, as_json: bool = False) -> str:
    if as_json:
        return json.dumps([asdict(r) for r in results], indent=2)
    lines = ["metric,value,std,n_samples,extractor_id"]
    lines += [f"{r.metric},{r.value:.6g},{r.std:.6g},{r.n_samples},{r.extractor_id}" for r in results]
    return "\n".join(lines) + "\n"
