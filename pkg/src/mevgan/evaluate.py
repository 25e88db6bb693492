"""Evaluation runs: metric reports and the temporal-coherence checks.

The extractor is always a probe classifier trained on the real frames' class
labels and gated at 90% held-out accuracy. Reports name it ``probe-conv64``
so they are never mistaken for Inception/I3D numbers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.rng import generator
from .autodiff.tensor import Tensor, no_grad
from .data import FramePool, sample_training_clip
from .metrics import MetricError, MetricResult, fid, fvd_proxy, inception_score, train_probe
from .trainer import CompositeGenerator, real_feature_video, timeline

EXTRACTOR_ID = "probe-conv64"
METRICS = ("fid", "fvd", "is")


class ProbeGateError(MetricError):
    pass


def gated_probe(videos, seed: int = 0, steps: int = 1000):
    pool = FramePool.from_clips(videos)
    if len(np.unique(pool.labels)) < 2 or np.any(pool.labels < 0):
        raise ProbeGateError("probe training needs labelled frames from at least two classes")
    probe = train_probe(pool.frames, pool.labels, n_classes=int(pool.labels.max()) + 1, steps=steps, seed=seed)
    try:
        probe.require_gate()
    except MetricError as exc:
        raise ProbeGateError(str(exc)) from exc
    return probe


def real_clips(videos, n_clips: int, n_frames: int, rng) -> np.ndarray:
    """(n_clips, n, C, H, W): windows from videos taken round-robin in a shuffled order."""
    order = rng.permutation(len(videos))
    return np.stack([sample_training_clip(videos[order[i % len(videos)]], n_frames, rng).frames
                     for i in range(n_clips)])


def shuffle_frames(clips: np.ndarray, rng) -> np.ndarray:
    return np.stack([c[rng.permutation(len(c))] for c in clips])


def generated_clips(composite: CompositeGenerator, n_clips: int, n_frames: int, rng, batch: int = 32) -> np.ndarray:
    out = []
    t = timeline(n_frames)
    with no_grad():
        for start in range(0, n_clips, batch):
            b = min(batch, n_clips - start)
            z = rng.standard_normal((b, 2047)).astype(np.float32)
            frames = composite.frames(t, z).data
            out.append(frames.reshape(b, n_frames, *frames.shape[1:]))
    return np.concatenate(out)


def metric_report(composite: CompositeGenerator, videos, metrics=METRICS, n_clips: int = 256,
                  n_frames: int = 8, seed: int = 0, probe=None, splits: int = 5) -> list[MetricResult]:
    """FID and IS over five random parts of the generated frames (mean, std); FVD over all clips."""
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}; choose from {', '.join(METRICS)}")
    probe = probe or gated_probe(videos, seed)
    rng = generator(seed, "evaluate")
    fake = generated_clips(composite, n_clips, n_frames, rng)
    real = real_clips(videos, n_clips, n_frames, rng)
    fake_frames = fake.reshape(-1, *fake.shape[2:])
    real_frames = real.reshape(-1, *real.shape[2:])
    results = []
    if "fid" in metrics:
        parts = np.array_split(rng.permutation(len(fake_frames)), splits)
        values = [fid(real_frames, fake_frames[p], probe.embed) for p in parts]
        results.append(MetricResult("fid", float(np.mean(values)), float(np.std(values)), len(fake_frames),
                                    EXTRACTOR_ID))
    if "fvd" in metrics:
        results.append(MetricResult("fvd", fvd_proxy(real, fake, probe.embed), 0.0, n_clips, EXTRACTOR_ID))
    if "is" in metrics:
        mean, std = inception_score(probe.predict_proba(fake_frames), splits=splits, seed=seed)
        results.append(MetricResult("is", mean, std, len(fake_frames), EXTRACTOR_ID))
    return results


@dataclass
class TemporalCheck:
    fvd_generated: float
    fvd_shuffled: float
    d_ordered: float
    d_permuted: float
    probe_accuracy: float

    @property
    def fvd_ok(self) -> bool:
        return self.fvd_generated < self.fvd_shuffled

    @property
    def d_ok(self) -> bool:
        return self.d_ordered > self.d_permuted


def temporal_check(composite: CompositeGenerator, vdisc, videos, probe, n_clips: int = 256,
                   seed: int = 0) -> TemporalCheck:
    """Generated vs frame-shuffled real clips under the FVD proxy, and D on ordered vs row-permuted features.

    Both comparisons use the same real reference set; the shuffled and the
    permuted sets come from a second, independent draw of real windows.
    """
    rng = generator(seed, "temporal-check")
    n = 8
    reference = real_clips(videos, n_clips, n, rng)
    other = real_clips(videos, n_clips, n, rng)
    fake = generated_clips(composite, n_clips, n, rng)
    fvd_gen = fvd_proxy(reference, fake, probe.embed)
    fvd_shuf = fvd_proxy(reference, shuffle_frames(other, rng), probe.embed)
    fv = real_feature_video(other, composite.backbone).data
    permuted = np.stack([f[:, rng.permutation(n)] for f in fv])
    with no_grad():
        d_ord = float(vdisc(Tensor(fv)).data.mean())
        d_perm = float(vdisc(Tensor(permuted)).data.mean())
    return TemporalCheck(fvd_gen, fvd_shuf, d_ord, d_perm, probe.accuracy)
