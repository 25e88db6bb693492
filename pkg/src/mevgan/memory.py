"""Parameter counts and analytic training-memory bounds.

Two pipelines are profiled from symbolic layer tables (shapes only, no
arithmetic on data):

``mevgan-stage2``
    plugin (trainable) -> frozen backbone generator -> frozen backbone
    feature extractor -> video discriminator (trainable).

``baseline-3d``
    a fully trainable video GAN in the TGANv2 mould used as a sizing
    stand-in: a temporal generator producing per-frame latents, a 3-D
    convolutional video generator and a 3-D convolutional discriminator.
    The temporal generator reuses the plugin's layer arithmetic, since both
    map (noise, time) to a latent trajectory. Layer table for clips of ``n``
    frames at ``R`` px with the backbone widths ``w`` (last width repeated
    when more levels are needed), ``L = log2(R / 8) + 1`` levels, kernels
    3x3x3 unless noted::

        temporal generator
          as the plugin: 4 linear layers, per frame
        generator
          fc            512 -> w0 * n * 8 * 8, reshape (w0, n, 8, 8), lrelu
          block 0       conv w0 -> w0, lrelu
          block i >= 1  upsample x2 in space, conv w[i-1] -> w[i], lrelu
          to_rgb        conv 1x1x1 w[L-1] -> C, tanh
        discriminator
          from_rgb      conv 1x1x1 C -> w[L-1], lrelu
          block i >= 1  conv w[i] -> w[i-1], lrelu, avgpool x2 in space
          block 0       conv w0 -> w0, lrelu
          fc            w0 * n * 8 * 8 -> 512, lrelu
          head          512 -> 1

    The time axis keeps all ``n`` frames throughout.

The activation bound is twice the sum of every recorded activation (forward
values retained for the backward pass), in float32. Parameter, gradient and
Adam-moment bytes are added for trainable parameters only.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .backbone import FEATURE_DIM, LATENT_DIM, Backbone, BackboneConfig
from .plugin import LAYERS as PLUGIN_LAYERS
from .video_disc import CONV_LAYERS, FEATURE_WIDTH, FLAT_WIDTH, shape_chain_report

BYTES = 4
PIPELINES = ("mevgan-stage2", "baseline-3d")
ALIASES = {"mevgan": "mevgan-stage2", "baseline": "baseline-3d"}
BASE = 8


@dataclass
class Layer:
    name: str
    activation: tuple      # per-item output shape
    params: int
    trainable: bool
    per: str               # "frame" or "clip": which batch axis the shape is per


@dataclass
class MemoryProfile:
    pipeline: str
    batch: int
    n_frames: int
    resolution: int
    trainable_params: int
    frozen_params: int
    peak_activation_bytes: int
    optimizer_state_bytes: int

    @property
    def param_bytes(self) -> int:
        return BYTES * self.trainable_params

    @property
    def grad_bytes(self) -> int:
        return BYTES * self.trainable_params

    @property
    def total_bytes(self) -> int:
        return self.peak_activation_bytes + self.param_bytes + self.grad_bytes + self.optimizer_state_bytes

    def to_dict(self) -> dict:
        return {**asdict(self), "total_bytes": self.total_bytes}


def count_params(model) -> tuple[int, int]:
    """(trainable, frozen) element counts of a Module or Backbone."""
    params = model.parameters()
    trainable = sum(p.size for p in params if p.requires_grad)
    return trainable, sum(p.size for p in params) - trainable


def _widths(widths, levels: int) -> list[int]:
    w = list(widths)
    return w + [w[-1]] * max(0, levels - len(w))


def _levels(resolution: int) -> int:
    levels = int(round(math.log2(resolution / BASE))) + 1
    if resolution < BASE or BASE * 2 ** (levels - 1) != resolution:
        raise ValueError(f"resolution must be {BASE} times a power of two, got {resolution}")
    return levels


def _conv(c_in: int, c_out: int, *kernel) -> int:
    return c_in * c_out * math.prod(kernel) + c_out


def _linear(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def plugin_table() -> list[Layer]:
    out = []
    for k, (n_in, n_out) in enumerate(PLUGIN_LAYERS, start=1):
        out.append(Layer(f"plugin.concat{k}", (n_in,), 0, True, "frame"))
        out.append(Layer(f"plugin.linear{k}", (n_out,), _linear(n_in, n_out), True, "frame"))
        if k < len(PLUGIN_LAYERS):
            out.append(Layer(f"plugin.relu{k}", (n_out,), 0, True, "frame"))
    out.append(Layer("plugin.normalize", (LATENT_DIM,), 0, True, "frame"))
    return out


def backbone_table(resolution: int, channels: int = 1, g_widths=(32, 16, 8), d_widths=(32, 16, 8)) -> list[Layer]:
    """Frozen generator and feature-extractor activations; the unused D head counts as a frozen parameter."""
    levels = _levels(resolution)
    gw, dw = _widths(g_widths, levels), _widths(d_widths, levels)
    t = [Layer("G.fc", (gw[0] * BASE * BASE,), _linear(LATENT_DIM, gw[0] * BASE * BASE), False, "frame")]
    r = BASE
    for i in range(levels):
        if i:
            r *= 2
            t.append(Layer(f"G.up{i}", (gw[i - 1], r, r), 0, False, "frame"))
        c_in = gw[i - 1] if i else gw[0]
        t.append(Layer(f"G.conv{i}", (gw[i], r, r), _conv(c_in, gw[i], 3, 3), False, "frame"))
        t.append(Layer(f"G.norm{i}", (gw[i], r, r), 0, False, "frame"))
    # every level keeps its to_rgb layer; only the last one is exercised
    for i in range(levels):
        t.append(Layer(f"G.to_rgb{i}", (channels, r, r) if i == levels - 1 else (), _conv(gw[i], channels, 1, 1),
                       False, "frame"))
    t.append(Layer("G.tanh", (channels, r, r), 0, False, "frame"))
    for i in range(levels):
        t.append(Layer(f"D.from_rgb{i}", (dw[i], r, r) if i == levels - 1 else (), _conv(channels, dw[i], 1, 1),
                       False, "frame"))
    for i in range(levels - 1, 0, -1):
        t.append(Layer(f"D.conv{i}", (dw[i - 1], r, r), _conv(dw[i], dw[i - 1], 3, 3), False, "frame"))
        r //= 2
        t.append(Layer(f"D.pool{i}", (dw[i - 1], r, r), 0, False, "frame"))
    t.append(Layer("D.conv0", (dw[0], r, r), _conv(dw[0], dw[0], 3, 3), False, "frame"))
    t.append(Layer("D.fc", (FEATURE_DIM,), _linear(dw[0] * BASE * BASE, FEATURE_DIM), False, "frame"))
    t.append(Layer("D.head", (), _linear(FEATURE_DIM, 1), False, "frame"))
    return t


def video_disc_table(n_frames: int = 8) -> list[Layer]:
    chain = shape_chain_report(n_frames, FEATURE_WIDTH)
    if not chain.compatible:
        raise ValueError(f"video discriminator cannot take {n_frames} frames: {chain.error}")
    t = [Layer("vD.input", (1, n_frames, FEATURE_WIDTH), 0, True, "clip")]
    for k, ((c_in, c_out, kernel, _), shape) in enumerate(zip(CONV_LAYERS, chain.shapes), start=1):
        t.append(Layer(f"vD.conv{k}", (c_out, *shape), _conv(c_in, c_out, *kernel), True, "clip"))
    t.append(Layer("vD.linear", (1,), _linear(FLAT_WIDTH, 1), True, "clip"))
    return t


def baseline_table(n_frames: int, resolution: int, channels: int = 1, widths=(32, 16, 8)) -> list[Layer]:
    levels = _levels(resolution)
    w = _widths(widths, levels)
    t = [Layer(layer.name.replace("plugin", "T"), layer.activation, layer.params, True, layer.per)
         for layer in plugin_table()]
    t += [Layer("G3.fc", (w[0], n_frames, BASE, BASE), _linear(LATENT_DIM, w[0] * n_frames * BASE * BASE),
                True, "clip")]
    r = BASE
    for i in range(levels):
        if i:
            r *= 2
            t.append(Layer(f"G3.up{i}", (w[i - 1], n_frames, r, r), 0, True, "clip"))
        c_in = w[i - 1] if i else w[0]
        t.append(Layer(f"G3.conv{i}", (w[i], n_frames, r, r), _conv(c_in, w[i], 3, 3, 3), True, "clip"))
    t.append(Layer("G3.to_rgb", (channels, n_frames, r, r), _conv(w[-1], channels, 1, 1, 1), True, "clip"))
    t.append(Layer("D3.from_rgb", (w[-1], n_frames, r, r), _conv(channels, w[-1], 1, 1, 1), True, "clip"))
    for i in range(levels - 1, 0, -1):
        t.append(Layer(f"D3.conv{i}", (w[i - 1], n_frames, r, r), _conv(w[i], w[i - 1], 3, 3, 3), True, "clip"))
        r //= 2
        t.append(Layer(f"D3.pool{i}", (w[i - 1], n_frames, r, r), 0, True, "clip"))
    t.append(Layer("D3.conv0", (w[0], n_frames, r, r), _conv(w[0], w[0], 3, 3, 3), True, "clip"))
    t.append(Layer("D3.fc", (FEATURE_DIM,), _linear(w[0] * n_frames * r * r, FEATURE_DIM), True, "clip"))
    t.append(Layer("D3.head", (1,), _linear(FEATURE_DIM, 1), True, "clip"))
    return t


def layer_table(pipeline: str, n_frames: int = 8, resolution: int = 32, channels: int = 1,
                cfg: BackboneConfig | None = None) -> list[Layer]:
    pipeline = ALIASES.get(pipeline, pipeline)
    cfg = cfg or BackboneConfig()
    if pipeline == "mevgan-stage2":
        return (plugin_table() + backbone_table(resolution, channels, cfg.g_widths, cfg.d_widths)
                + video_disc_table(n_frames))
    if pipeline == "baseline-3d":
        return baseline_table(n_frames, resolution, channels, cfg.g_widths)
    raise ValueError(f"unknown pipeline {pipeline!r}; expected one of {', '.join(PIPELINES)}")


def profile(pipeline: str, batch: int, n_frames: int = 8, resolution: int = 32, channels: int = 1,
            cfg: BackboneConfig | None = None) -> MemoryProfile:
    """Analytic memory profile for ``batch`` clips of ``n_frames`` frames."""
    if batch < 1 or n_frames < 1:
        raise ValueError("batch and n_frames must be positive")
    table = layer_table(pipeline, n_frames, resolution, channels, cfg)
    trainable = sum(layer.params for layer in table if layer.trainable)
    frozen = sum(layer.params for layer in table if not layer.trainable)
    items = {"frame": batch * n_frames, "clip": batch}
    activations = sum(math.prod(layer.activation) * items[layer.per] for layer in table if layer.activation)
    return MemoryProfile(ALIASES.get(pipeline, pipeline), batch, n_frames, resolution, trainable, frozen,
                         2 * BYTES * activations, 2 * BYTES * trainable)


def backbone_param_count(cfg: BackboneConfig) -> int:
    """Parameter count of an instantiated backbone, for cross-checking the tables."""
    return sum(count_params(Backbone(cfg)))


# -- reports ----------------------------------------------------------------

FIELDS = ("trainable_params", "frozen_params", "peak_activation_bytes", "optimizer_state_bytes", "total_bytes")


def compare(batch: int, n_frames: int = 8, resolutions=(16, 32, 64)) -> dict:
    """Both pipelines across resolutions, with the two scaling assertions."""
    rows = {res: {p: profile(p, batch, n_frames, res) for p in PIPELINES} for res in resolutions}
    mev = [rows[r]["mevgan-stage2"].trainable_params for r in resolutions]
    base = [rows[r]["baseline-3d"].trainable_params for r in resolutions]
    checks = {
        "mevgan_fewer_trainable": all(m < b for m, b in zip(mev, base)),
        "mevgan_trainable_constant": len(set(mev)) == 1,
        "baseline_trainable_grows": all(a < b for a, b in zip(base, base[1:])),
    }
    ratios = {res: {f: rows[res]["baseline-3d"].to_dict()[f] / max(rows[res]["mevgan-stage2"].to_dict()[f], 1)
                    for f in FIELDS} for res in resolutions}
    return {"profiles": rows, "ratios": ratios, "checks": checks}


def format_table(profiles, ratio_of=None) -> str:
    """Aligned plain-text table of profiles; optional ratio row (second / first)."""
    names = ["field"] + [f"{p.pipeline}@{p.resolution}px" for p in profiles]
    rows = [[f] + [str(p.to_dict()[f]) for p in profiles] for f in ("batch", "n_frames") + FIELDS]
    if ratio_of is not None:
        a, b = ratio_of
        rows += [[f"ratio {f} ({b.pipeline} / {a.pipeline})", f"{b.to_dict()[f] / max(a.to_dict()[f], 1):.2f}"]
                 + [""] * (len(profiles) - 1) for f in ("trainable_params", "total_bytes")]
    widths = [max(len(r[i]) for r in [names] + rows) for i in range(len(names))]
    fmt = lambda r: "  ".join(c.rjust(w) if k else c.ljust(w) for k, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
    return "\n".join([fmt(names)] + [fmt(r) for r in rows]) + "\n"


def report(batch: int, n_frames: int = 8, resolution: int = 32, as_json: bool = False,
           first: str = "mevgan-stage2") -> str:
    """Comparison report; raises AssertionError if either scaling claim fails.

    ``first`` picks the pipeline shown in the first column; ratios are
    always baseline over MeVGAN.
    """
    if first not in PIPELINES:
        raise ValueError(f"unknown pipeline {first!r}; expected one of {', '.join(PIPELINES)}")
    cmp = compare(batch, n_frames, sorted({16, 32, 64, resolution}))
    if not all(cmp["checks"].values()):
        raise AssertionError(f"memory claims violated: {cmp['checks']}")
    mev = cmp["profiles"][resolution]["mevgan-stage2"]
    base = cmp["profiles"][resolution]["baseline-3d"]
    if as_json:
        return json.dumps({
            "mevgan-stage2": mev.to_dict(), "baseline-3d": base.to_dict(),
            "ratios": cmp["ratios"][resolution], "checks": cmp["checks"],
            "trainable_by_resolution": {str(r): {p: v.trainable_params for p, v in d.items()}
                                        for r, d in cmp["profiles"].items()},
        }, indent=2)
    shown = [mev, base] if first == "mevgan-stage2" else [base, mev]
    lines = [format_table(shown, ratio_of=(mev, base))]
    lines.append("trainable parameters by resolution:")
    for r, d in cmp["profiles"].items():
        m, b = d["mevgan-stage2"].trainable_params, d["baseline-3d"].trainable_params
        lines.append(f"  {r:>4}px  mevgan-stage2 {m:>10}  baseline-3d {b:>10}  ratio {b / m:.2f}")
    lines += [f"check {k}: {'ok' if v else 'FAILED'}" for k, v in cmp["checks"].items()]
    return "\n".join(lines) + "\n"
