"""Stage-2 training: plugin against the video discriminator over a frozen backbone.

A generated clip is ``G(phi(t_i, z))`` for each frame time; its feature video
is the backbone discriminator's penultimate features of those frames,
stacked to (1, 1, n, 512). Gradients reach the plugin through both frozen
networks without touching their weights.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import ops
from .autodiff.optim import Adam
from .autodiff.rng import generator
from .autodiff.tensor import Tape, Tensor, grad, no_grad
from .backbone import Backbone, FrozenContractError, NonFiniteLossError, trainable
from .checkpoint import Record, read_records, weight_checksum, write_records
from .data import VideoClip, sample_training_clip
from .plugin import NOISE_DIM, PluginNet, extend_timeline, training_timeline
from .video_disc import FEATURE_WIDTH, VideoDiscriminator

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,step,d_loss,g_loss,d_real,d_fake"


@dataclass
class TrainConfig:
    seed: int = 0
    n_frames: int = 8
    epochs: int = 50
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    saturating: bool = False
    d_steps: int = 1
    g_steps: int = 1
    per_frame_noise: bool = False
    log_path: str | None = None


def timeline(n: int) -> np.ndarray:
    """Training timeline, extended on the same grid beyond eight frames."""
    base = training_timeline(min(n, 8))
    return extend_timeline(base, n - 8) if n > 8 else base


class CompositeGenerator:
    """Plugin (trainable) feeding the frozen backbone generator and feature extractor."""

    def __init__(self, plugin: PluginNet, backbone: Backbone):
        if not backbone.frozen:
            raise FrozenContractError("composite generator needs a frozen backbone (freeze contract)")
        self.plugin = plugin
        self.backbone = backbone

    def latents(self, t, z) -> Tensor:
        return self.plugin.trajectories(t, z)

    def frames(self, t, z) -> Tensor:
        """Frames (B * n, C, H, W), clip-major."""
        return self.backbone.generate(self.latents(t, z))

    def feature_video(self, t, z) -> Tensor:
        """Feature videos (B, 1, n, 512)."""
        n = np.asarray(t).size
        f = self.backbone.extract_features(self.frames(t, z))
        return ops.reshape(f, (-1, 1, n, FEATURE_WIDTH))

    def sample_video(self, seed: int, n_frames: int = 8) -> VideoClip:
        """Deterministic clip for a noise seed."""
        z = noise_for_seed(seed)
        with no_grad():
            frames = self.frames(timeline(n_frames), z).data
        return VideoClip(np.clip(frames, -1.0, 1.0), label=-1, source_id=f"seed-{seed}")


def noise_for_seed(seed: int) -> np.ndarray:
    return generator(seed, "clip-noise").standard_normal((1, NOISE_DIM)).astype(np.float32)


def fake_feature_video(t, z, composite: CompositeGenerator) -> Tensor:
    return composite.feature_video(t, z)


def real_feature_video(clips, backbone: Backbone) -> Tensor:
    """Feature videos for real frames: a VideoClip or an array (B, n, C, H, W)."""
    frames = clips.frames[None] if isinstance(clips, VideoClip) else np.asarray(clips, np.float32)
    if frames.ndim != 5:
        raise ValueError(f"real clips must be (B, n, C, H, W), got {frames.shape}")
    b, n = frames.shape[:2]
    expected = (backbone.cfg.channels, backbone.resolution, backbone.resolution)
    if frames.shape[2:] != expected:
        raise ValueError(f"clip frames {frames.shape[2:]} do not match backbone {expected}")
    with no_grad():
        f = backbone.extract_features(frames.reshape(b * n, *expected))
    return Tensor(f.data.reshape(b, 1, n, FEATURE_WIDTH))


@dataclass
class TrainLog:
    epoch: list = field(default_factory=list)
    step: list = field(default_factory=list)
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    d_real: list = field(default_factory=list)
    d_fake: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.step)

    def append(self, *row) -> None:
        for name, value in zip(("epoch", "step", "d_loss", "g_loss", "d_real", "d_fake"), row):
            getattr(self, name).append(value)

    def lines(self) -> list[str]:
        return [f"{e},{s},{d:.6f},{g:.6f},{r:.6f},{f:.6f}"
                for e, s, d, g, r, f in zip(self.epoch, self.step, self.d_loss, self.g_loss, self.d_real, self.d_fake)]

    def to_text(self) -> str:
        return "\n".join([LOG_HEADER] + self.lines()) + "\n"


def _finite(value: float, what: str, epoch: int, step: int) -> float:
    if not math.isfinite(value):
        raise NonFiniteLossError(f"{what} became non-finite at epoch {epoch}, step {step}")
    return value


def generator_loss(p_fake: Tensor, saturating: bool) -> Tensor:
    if saturating:
        # minimise log(1 - D(fake)), the literal minimax form
        return ops.neg(ops.bce_loss(p_fake, np.zeros(p_fake.shape, np.float32)))
    return ops.bce_loss(p_fake, np.ones(p_fake.shape, np.float32))


def discriminator_loss(p_real: Tensor, p_fake: Tensor) -> Tensor:
    return ops.add(ops.bce_loss(p_real, np.ones(p_real.shape, np.float32)),
                   ops.bce_loss(p_fake, np.zeros(p_fake.shape, np.float32)))


def train_plugin(backbone: Backbone, videos, cfg: TrainConfig | None = None,
                 plugin: PluginNet | None = None, vdisc: VideoDiscriminator | None = None):
    """Alternate video-discriminator and plugin updates for ``cfg.epochs`` passes.

    Returns (plugin, video discriminator, TrainLog). The backbone must be
    frozen and its checksum is verified after the last step.
    """
    cfg = cfg or TrainConfig()
    if not backbone.frozen:
        raise FrozenContractError("stage 2 requires a frozen backbone (freeze contract)")
    backbone.verify_frozen()
    videos = list(videos)
    if not videos:
        raise ValueError("train_plugin needs at least one training video")
    plugin = plugin or PluginNet(seed=cfg.seed)
    vdisc = vdisc or VideoDiscriminator(seed=cfg.seed)
    composite = CompositeGenerator(plugin, backbone)
    betas = (cfg.beta1, cfg.beta2)
    opt_p = Adam(plugin.parameters(), lr=cfg.lr, betas=betas)
    opt_d = Adam(vdisc.parameters(), lr=cfg.lr, betas=betas)
    rng = generator(cfg.seed, "stage2")
    t = timeline(cfg.n_frames)
    history = TrainLog()
    n_batches = math.ceil(len(videos) / cfg.batch_size)

    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(videos))
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            real = np.stack([sample_training_clip(videos[i], cfg.n_frames, rng).frames for i in idx])
            real_fv = real_feature_video(real, backbone)
            # a side with zero steps in the schedule logs NaN for its columns
            loss_d = loss_g = p_real = p_fake = None
            for _ in range(cfg.d_steps):
                z = _noise(rng, len(idx), cfg)
                with no_grad():
                    fake_fv = composite.feature_video(t, z)
                with Tape():
                    p_real, p_fake = vdisc(real_fv), vdisc(fake_fv)
                    loss_d = discriminator_loss(p_real, p_fake)
                    grads = grad(loss_d, vdisc.parameters())
                _finite(loss_d.item(), "discriminator loss", epoch, step)
                opt_d.step(grads)
            for _ in range(cfg.g_steps):
                z = _noise(rng, len(idx), cfg)
                with trainable(vdisc, False), Tape():
                    p_gen = vdisc(composite.feature_video(t, z))
                    loss_g = generator_loss(p_gen, cfg.saturating)
                    grads = grad(loss_g, plugin.parameters())
                _finite(loss_g.item(), "plugin loss", epoch, step)
                opt_p.step(grads)
            history.append(epoch, step, _value(loss_d), _value(loss_g), _value(p_real), _value(p_fake))
            step += 1
        if history:
            log.info("stage2 epoch %d d_loss %.4f g_loss %.4f D(real) %.3f D(fake) %.3f", epoch,
                     history.d_loss[-1], history.g_loss[-1], history.d_real[-1], history.d_fake[-1])
    backbone.verify_frozen()
    if cfg.log_path:
        Path(cfg.log_path).parent.mkdir(parents=True, exist_ok=True)
        Path(cfg.log_path).write_text(history.to_text())
    return plugin, vdisc, history


def _value(t: Tensor | None) -> float:
    return float(t.data.mean()) if t is not None else math.nan


def _noise(rng: np.random.Generator, batch: int, cfg: TrainConfig) -> np.ndarray:
    shape = (batch, cfg.n_frames, NOISE_DIM) if cfg.per_frame_noise else (batch, NOISE_DIM)
    return rng.standard_normal(shape).astype(np.float32)


# -- checkpoints ------------------------------------------------------------

def save_video_model(path, backbone: Backbone, plugin: PluginNet, vdisc: VideoDiscriminator) -> None:
    """Full MeVGAN checkpoint: backbone roles plus plugin and video discriminator."""
    write_records(path, backbone.records() + [Record("plugin", plugin.state_dict()),
                                              Record("video-discriminator", vdisc.state_dict())])


def load_video_model(path) -> tuple[Backbone, PluginNet, VideoDiscriminator]:
    records = read_records(path)
    for role in ("plugin", "video-discriminator"):
        if role not in records:
            raise KeyError(f"checkpoint {path} lacks role {role!r}")
    backbone = Backbone.from_records(records)
    plugin, vdisc = PluginNet(), VideoDiscriminator()
    plugin.load_state_dict(records["plugin"].tensors)
    vdisc.load_state_dict(records["video-discriminator"].tensors)
    return backbone, plugin, vdisc


def module_checksum(module) -> int:
    return weight_checksum(module.state_dict())


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
