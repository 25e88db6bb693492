"""Time-conditioned plugin mapping (timeline, noise) to unit-norm latent trajectories.

Each frame is computed independently: the frame time is appended to the
input of every linear layer, the first three layers use ReLU, and the
512-d output is projected onto the unit sphere.
"""
from __future__ import annotations

import numpy as np

from .autodiff import ops
from .autodiff.nn import Linear, Module
from .autodiff.rng import generator
from .autodiff.tensor import Tensor

NOISE_DIM = 2047
LATENT_DIM = 512
# (in, out) per linear layer; every input includes the one time column
LAYERS = ((2048, 1535), (1536, 1023), (1024, 511), (512, 512))
TIME_STEP = 1.0 / 8.0


def training_timeline(n: int = 8) -> np.ndarray:
    """Frame times 0, 1/8, ..., (n-1)/8."""
    if n < 1:
        raise ValueError("timeline needs at least one frame")
    return np.arange(n, dtype=np.float32) * np.float32(TIME_STEP)


def validate_timeline(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float32).reshape(-1)
    if t.size < 1:
        raise ValueError("timeline needs at least one frame")
    if not np.all(np.isfinite(t)):
        raise ValueError("timeline must be finite")
    if np.any(np.diff(t) <= 0):
        raise ValueError("timeline must be strictly increasing")
    return t


def extend_timeline(t, k_extra: int) -> np.ndarray:
    """Append ``k_extra`` points continuing the grid spacing of ``t``."""
    t = np.asarray(t, dtype=np.float32).reshape(-1)
    if k_extra < 0:
        raise ValueError("k_extra must be non-negative")
    step = t[-1] - t[-2] if t.size > 1 else np.float32(TIME_STEP)
    extra = t[-1] + step * np.arange(1, k_extra + 1, dtype=np.float32)
    return np.concatenate([t, extra]).astype(np.float32)


def sample_noise(batch: int, seed: int, *keys, n_frames: int | None = None) -> np.ndarray:
    """N(0, I) plugin noise: (batch, 2047), or (batch, n_frames, 2047) per-frame."""
    shape = (batch, NOISE_DIM) if n_frames is None else (batch, n_frames, NOISE_DIM)
    return generator(seed, "plugin-noise", *keys).standard_normal(shape).astype(np.float32)


class PluginNet(Module):
    def __init__(self, rng: np.random.Generator | None = None, seed: int = 0):
        rng = rng if rng is not None else generator(seed, "plugin-init")
        last = len(LAYERS) - 1
        self.layers = [Linear(i, o, rng, init="xavier" if k == last else "he") for k, (i, o) in enumerate(LAYERS)]

    def rows(self, t: Tensor, z: Tensor) -> Tensor:
        """Latents for independent (time, noise) rows: ``t`` (N, 1), ``z`` (N, 2047)."""
        if z.ndim != 2 or z.shape[1] != NOISE_DIM:
            raise ValueError(f"noise must have width {NOISE_DIM}, got shape {z.shape}")
        h = z
        for k, layer in enumerate(self.layers):
            h = layer(ops.concat_last(h, t))
            if k < len(self.layers) - 1:
                h = ops.relu(h)
        return ops.l2_normalize_rows(h)

    def trajectories(self, t, z, check_order: bool = True) -> Tensor:
        """Latent trajectories for a batch of clips, rows ordered clip-major.

        ``z`` is (B, 2047) shared by all frames of a clip, or (B, n, 2047) for
        per-frame noise. Returns (B * n, 512).
        """
        t = validate_timeline(t) if check_order else np.asarray(t, np.float32).reshape(-1)
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
        n = t.size
        if z.ndim == 1:
            z = ops.reshape(z, (1, -1))
        if z.shape[-1] != NOISE_DIM:
            raise ValueError(f"noise must have width {NOISE_DIM}, got shape {z.shape}")
        b = z.shape[0]
        if z.ndim == 2:
            z = ops.broadcast_to(ops.reshape(z, (b, 1, NOISE_DIM)), (b, n, NOISE_DIM))
        elif z.shape[1] != n:
            raise ValueError(f"per-frame noise has {z.shape[1]} frames, timeline has {n}")
        z = ops.reshape(z, (b * n, NOISE_DIM))
        tt = Tensor(np.tile(t, b).reshape(-1, 1).astype(z.data.dtype))
        return self.rows(tt, z)

    def forward(self, t, z) -> Tensor:
        return self.trajectories(t, z)


def plugin_forward(t, z, net: PluginNet, check_order: bool = True) -> Tensor:
    """Trajectory (n, 512) for one clip. ``check_order=False`` admits any time vector."""
    z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float32)
    if z.shape != (NOISE_DIM,):
        raise ValueError(f"noise must have shape ({NOISE_DIM},), got {z.shape}")
    return net.trajectories(t, z[None], check_order=check_order)


def expected_parameter_count() -> int:
    return sum(i * o + o for i, o in LAYERS)
