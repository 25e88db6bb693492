"""Desk-scale progressive image GAN used as the frozen backbone.

The generator maps a 512-d latent on the unit hypersphere to an image in
[-1, 1]; the discriminator's penultimate 512-d activation doubles as the
frame feature extractor for the video stage. Both networks are organised in
resolution levels (base, 2x base, ...) so they can grow progressively with a
fade-in weight, or be built directly at the target resolution.
"""
from __future__ import annotations

import contextlib
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.nn import Conv2d, Linear, Module
from .autodiff.optim import Adam
from .autodiff.rng import generator
from .autodiff.tensor import Tape, Tensor, grad, no_grad
from .checkpoint import Record, weight_checksum

log = logging.getLogger(__name__)

LATENT_DIM = 512
FEATURE_DIM = 512
LRELU = 0.2


@dataclass
class BackboneConfig:
    resolution: int = 32
    base_resolution: int = 8
    channels: int = 1
    g_widths: tuple = (32, 16, 8)
    d_widths: tuple = (32, 16, 8)
    progressive: bool = False
    steps: int = 2000
    batch_size: int = 8
    # batch switch used by the original 1024px schedule; never reached at desk scale
    batch_size_high_res: int = 4
    high_res_threshold: int = 256
    fade_steps: int = 200
    gp_lambda: float = 10.0
    n_critic: int = 1
    lr: float = 1e-3
    betas: tuple = (0.0, 0.99)
    seed: int = 0

    def __post_init__(self):
        self.g_widths = tuple(self.g_widths)
        self.d_widths = tuple(self.d_widths)
        self.betas = tuple(self.betas)
        n = self.n_levels
        if self.base_resolution * 2 ** (n - 1) != self.resolution:
            raise ValueError("resolution must be base_resolution times a power of two")
        if len(self.g_widths) < n or len(self.d_widths) < n:
            raise ValueError(f"need {n} widths per network for {self.resolution}px")

    @property
    def n_levels(self) -> int:
        return int(round(math.log2(self.resolution / self.base_resolution))) + 1

    def batch_for(self, resolution: int) -> int:
        return self.batch_size if resolution <= self.high_res_threshold else self.batch_size_high_res


def sample_latents(n: int, seed: int, *keys) -> Tensor:
    """Gaussian latents projected onto the unit sphere."""
    z = generator(seed, "latent", *keys).standard_normal((n, LATENT_DIM))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return Tensor(z.astype(np.float32))


class BackboneGenerator(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        w = cfg.g_widths
        b = cfg.base_resolution
        self.base = (w[0], b, b)
        self.fc = Linear(LATENT_DIM, w[0] * b * b, rng)
        self.blocks = [Conv2d(w[0], w[0], 3, rng=rng)] + [
            Conv2d(w[i - 1], w[i], 3, rng=rng) for i in range(1, cfg.n_levels)]
        self.to_rgb = [Conv2d(w[i], cfg.channels, 1, rng=rng, init="xavier") for i in range(cfg.n_levels)]
        self.level = cfg.n_levels - 1
        self.alpha = 1.0

    @property
    def resolution(self) -> int:
        return self.base[1] * 2 ** self.level

    def _block(self, i: int, h: Tensor) -> Tensor:
        if i > 0:
            h = ops.upsample2x(h)
        h = ops.leaky_relu(self.blocks[i](ops.pad2d(h, 1)), LRELU)
        return ops.pixel_norm(h)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise ValueError(f"latent must be (B, {LATENT_DIM}), got {z.shape}")
        h = ops.pixel_norm(z)
        h = ops.reshape(self.fc(h), (z.shape[0],) + self.base)
        h = ops.pixel_norm(ops.leaky_relu(h, LRELU))
        h = self._block(0, h)
        prev = h
        for i in range(1, self.level + 1):
            prev = h
            h = self._block(i, h)
        rgb = self.to_rgb[self.level](h)
        if self.level > 0 and self.alpha < 1.0:
            skip = ops.upsample2x(self.to_rgb[self.level - 1](prev))
            rgb = ops.add(ops.mul(rgb, self.alpha), ops.mul(skip, 1.0 - self.alpha))
        return ops.tanh(rgb)


class BackboneDiscriminator(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        w = cfg.d_widths
        b = cfg.base_resolution
        self.from_rgb = [Conv2d(cfg.channels, w[i], 1, rng=rng) for i in range(cfg.n_levels)]
        self.blocks = [Conv2d(w[0], w[0], 3, rng=rng)] + [
            Conv2d(w[i], w[i - 1], 3, rng=rng) for i in range(1, cfg.n_levels)]
        self.fc = Linear(w[0] * b * b, FEATURE_DIM, rng)
        self.head = Linear(FEATURE_DIM, 1, rng, init="xavier")
        self.base_resolution = b
        self.level = cfg.n_levels - 1
        self.alpha = 1.0

    @property
    def resolution(self) -> int:
        return self.base_resolution * 2 ** self.level

    def features(self, x: Tensor) -> Tensor:
        """Penultimate 512-d activation for images ``x`` (B, C, H, W)."""
        if x.ndim != 4 or x.shape[2:] != (self.resolution, self.resolution):
            raise ValueError(f"expected images at {self.resolution}px, got shape {x.shape}")
        h = ops.leaky_relu(self.from_rgb[self.level](x), LRELU)
        for i in range(self.level, 0, -1):
            h = ops.avg_pool2x(ops.leaky_relu(self.blocks[i](ops.pad2d(h, 1)), LRELU))
            if i == self.level and self.alpha < 1.0:
                skip = ops.leaky_relu(self.from_rgb[i - 1](ops.avg_pool2x(x)), LRELU)
                h = ops.add(ops.mul(h, self.alpha), ops.mul(skip, 1.0 - self.alpha))
        h = ops.leaky_relu(self.blocks[0](ops.pad2d(h, 1)), LRELU)
        h = ops.reshape(h, (x.shape[0], -1))
        return ops.leaky_relu(self.fc(h), LRELU)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))


@dataclass
class FreezeState:
    frozen: bool = False
    weight_checksum: int = 0


@contextlib.contextmanager
def trainable(module: Module, flag: bool):
    """Temporarily set ``requires_grad`` on a module's (unfrozen) parameters."""
    params = [p for p in module.parameters() if not p.frozen]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = flag
    try:
        yield
    finally:
        for p, s in zip(params, saved):
            p.requires_grad = s


class Backbone:
    """Generator/discriminator pair with its freeze state."""

    def __init__(self, cfg: BackboneConfig | None = None):
        self.cfg = cfg or BackboneConfig()
        rng = generator(self.cfg.seed, "backbone-init")
        self.generator = BackboneGenerator(self.cfg, rng)
        self.discriminator = BackboneDiscriminator(self.cfg, rng)
        self.freeze_state = FreezeState()
        if self.cfg.progressive:
            self.generator.level = self.discriminator.level = 0

    @property
    def resolution(self) -> int:
        return self.generator.resolution

    @property
    def level(self) -> int:
        return self.generator.level

    def set_alpha(self, alpha: float) -> None:
        self.generator.alpha = self.discriminator.alpha = float(alpha)

    def grow_resolution(self) -> None:
        """Add the next resolution level with fade-in weight 0."""
        if self.level >= self.cfg.n_levels - 1:
            raise ValueError(f"already at maximum resolution {self.resolution}px")
        self.generator.level += 1
        self.discriminator.level += 1
        self.set_alpha(0.0)

    def generate(self, z: Tensor) -> Tensor:
        return self.generator(z)

    def generate_frame(self, z) -> np.ndarray:
        """One image (C, H, W) from one latent of width 512."""
        z = np.asarray(z.data if isinstance(z, Tensor) else z, dtype=np.float32)
        if z.shape != (LATENT_DIM,):
            raise ValueError(f"latent must have shape ({LATENT_DIM},), got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ValueError("latent contains non-finite values")
        with no_grad():
            return self.generator(Tensor(z[None])).data[0]

    def extract_features(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
        if x.ndim == 3:
            x = Tensor(x.data[None])
        return self.discriminator.features(x)

    def discriminate(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
        return self.discriminator(x)

    def parameters(self) -> list[Tensor]:
        return self.generator.parameters() + self.discriminator.parameters()

    def named_state(self) -> dict:
        return {"generator": self.generator.state_dict(), "discriminator": self.discriminator.state_dict()}

    def checksum(self) -> int:
        flat = {f"g.{k}": v for k, v in self.generator.state_dict().items()}
        flat.update({f"d.{k}": v for k, v in self.discriminator.state_dict().items()})
        return weight_checksum(flat)

    def freeze(self) -> FreezeState:
        """Stop gradients into every backbone parameter and record a checksum. Idempotent."""
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
            p.frozen = True
        if not self.freeze_state.frozen:
            self.freeze_state = FreezeState(True, self.checksum())
        return self.freeze_state

    @property
    def frozen(self) -> bool:
        return self.freeze_state.frozen

    def verify_frozen(self) -> None:
        if not self.frozen:
            raise FrozenContractError("backbone is not frozen")
        now = self.checksum()
        if now != self.freeze_state.weight_checksum:
            raise FrozenContractError(
                f"frozen backbone weights changed: checksum {now:016x} != {self.freeze_state.weight_checksum:016x}")

    # -- serialisation ------------------------------------------------------

    def records(self) -> list[Record]:
        cfg = self.cfg
        meta = {
            "backbone.resolution": [cfg.resolution], "backbone.base_resolution": [cfg.base_resolution],
            "backbone.channels": [cfg.channels], "backbone.g_widths": list(cfg.g_widths),
            "backbone.d_widths": list(cfg.d_widths), "backbone.level": [self.level],
            "backbone.alpha": [self.generator.alpha],
        }
        meta = {k: np.asarray(v, np.float32) for k, v in meta.items()}
        return [Record("meta", meta),
                Record("backbone-generator", self.generator.state_dict(), self.frozen),
                Record("backbone-discriminator", self.discriminator.state_dict(), self.frozen)]

    @classmethod
    def from_records(cls, records: dict) -> "Backbone":
        for role in ("meta", "backbone-generator", "backbone-discriminator"):
            if role not in records:
                raise KeyError(f"checkpoint lacks role {role!r}")
        m = records["meta"].tensors
        ints = lambda k: [int(v) for v in m[k]]  # noqa: E731
        cfg = BackboneConfig(resolution=ints("backbone.resolution")[0],
                             base_resolution=ints("backbone.base_resolution")[0],
                             channels=ints("backbone.channels")[0],
                             g_widths=tuple(ints("backbone.g_widths")),
                             d_widths=tuple(ints("backbone.d_widths")))
        bb = cls(cfg)
        bb.generator.level = bb.discriminator.level = ints("backbone.level")[0]
        bb.set_alpha(float(m["backbone.alpha"][0]))
        bb.generator.load_state_dict(records["backbone-generator"].tensors)
        bb.discriminator.load_state_dict(records["backbone-discriminator"].tensors)
        g_frozen = records["backbone-generator"].frozen
        d_frozen = records["backbone-discriminator"].frozen
        if g_frozen != d_frozen:
            raise ValueError("generator and discriminator freeze flags disagree")
        if g_frozen:
            bb.freeze()
        return bb


class FrozenContractError(RuntimeError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


# -- WGAN-GP ----------------------------------------------------------------

def gradient_penalty(critic, real: Tensor, fake: Tensor, weights: np.ndarray) -> Tensor:
    """Mean of (||grad_x critic(x_hat)||_2 - 1)^2 at x_hat = w*real + (1-w)*fake.

    Must run under an active tape: the returned value is differentiable with
    respect to the critic's parameters.
    """
    w = Tensor(weights.reshape(-1, *([1] * (real.ndim - 1))).astype(real.data.dtype))
    x_hat = Tensor(w.data * real.data + (1.0 - w.data) * fake.data, requires_grad=True)
    scores = ops.sum(critic(x_hat))
    (g,) = grad(scores, [x_hat], create_graph=True)
    axes = tuple(range(1, g.ndim))
    norms = ops.sqrt(ops.add(ops.sum(ops.mul(g, g), axis=axes), 1e-12))
    return ops.mean(ops.power(ops.sub(norms, 1.0), 2))


def critic_loss(critic, real: Tensor, fake: Tensor, gp_lambda: float, weights: np.ndarray):
    d_real = ops.mean(critic(real))
    d_fake = ops.mean(critic(fake))
    gp = gradient_penalty(critic, real, fake, weights)
    loss = ops.add(ops.sub(d_fake, d_real), ops.mul(gp, gp_lambda))
    return loss, gp


def downsample_to(frames: np.ndarray, resolution: int) -> np.ndarray:
    while frames.shape[-1] > resolution:
        n, c, h, w = frames.shape
        frames = frames.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return frames


@dataclass
class BackboneLog:
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    gp: list = field(default_factory=list)
    resolution: list = field(default_factory=list)


def _check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise NonFiniteLossError(f"{what} became non-finite at step {step}")


def train_backbone(frames: np.ndarray, cfg: BackboneConfig | None = None,
                   backbone: Backbone | None = None) -> tuple[Backbone, BackboneLog]:
    """Stage 1: WGAN-GP training on a pool of frames (N, C, H, W) in [-1, 1].

    With ``cfg.progressive`` the step budget is split evenly across levels and
    each new level fades in linearly over ``cfg.fade_steps``.
    """
    cfg = cfg or BackboneConfig()
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or len(frames) == 0:
        raise ValueError("train_backbone needs a non-empty (N, C, H, W) frame pool")
    if frames.shape[1:] != (cfg.channels, cfg.resolution, cfg.resolution):
        raise ValueError(f"frames {frames.shape[1:]} do not match config "
                         f"({cfg.channels}, {cfg.resolution}, {cfg.resolution})")
    bb = backbone or Backbone(cfg)
    if bb.frozen:
        raise FrozenContractError("cannot train a frozen backbone")
    G, D = bb.generator, bb.discriminator
    opt_g = Adam(G.parameters(), lr=cfg.lr, betas=cfg.betas)
    opt_d = Adam(D.parameters(), lr=cfg.lr, betas=cfg.betas)
    rng = generator(cfg.seed, "backbone-train")
    history = BackboneLog()

    levels_left = cfg.n_levels - 1 - bb.level
    per_level = cfg.steps // (levels_left + 1) if cfg.progressive else cfg.steps
    level_start = 0
    pools = {}
    for step in range(cfg.steps):
        if cfg.progressive and step - level_start >= per_level and bb.level < cfg.n_levels - 1:
            bb.grow_resolution()
            level_start = step
        if bb.generator.alpha < 1.0:
            bb.set_alpha(min(1.0, (step - level_start + 1) / max(cfg.fade_steps, 1)))
        res = bb.resolution
        if res not in pools:
            pools[res] = downsample_to(frames, res)
        pool = pools[res]
        batch = cfg.batch_for(res)

        for _ in range(cfg.n_critic):
            real = Tensor(pool[rng.integers(len(pool), size=batch)])
            z = Tensor(_unit_rows(rng.standard_normal((batch, LATENT_DIM))))
            with no_grad():
                fake = G(z)
            with trainable(G, False), Tape():
                loss_d, gp = critic_loss(D, real, fake, cfg.gp_lambda, rng.uniform(size=batch))
                grads_d = grad(loss_d, D.parameters())
            _check_finite(loss_d.item(), "critic loss", step)
            opt_d.step(grads_d)

        z = Tensor(_unit_rows(rng.standard_normal((batch, LATENT_DIM))))
        with trainable(D, False), Tape():
            loss_g = ops.neg(ops.mean(D(G(z))))
            grads_g = grad(loss_g, G.parameters())
        _check_finite(loss_g.item(), "generator loss", step)
        opt_g.step(grads_g)

        history.d_loss.append(loss_d.item())
        history.g_loss.append(loss_g.item())
        history.gp.append(gp.item())
        history.resolution.append(res)
        if step % 200 == 0:
            log.info("backbone step %d res %d d_loss %.4f g_loss %.4f gp %.4f",
                     step, res, loss_d.item(), loss_g.item(), gp.item())
    return bb, history


def _unit_rows(z: np.ndarray) -> np.ndarray:
    return (z / np.linalg.norm(z, axis=1, keepdims=True)).astype(np.float32)


def config_dict(cfg: BackboneConfig) -> dict:
    return asdict(cfg)
