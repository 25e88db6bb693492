"""2-D convolutional discriminator over (frames x features) feature videos."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.nn import Conv2d, Linear, Module
from .autodiff.ops import conv_output_size
from .autodiff.rng import generator
from .autodiff.tensor import Tensor

# (c_in, c_out, kernel, stride), each followed by ReLU
CONV_LAYERS = (
    (1, 16, (3, 10), (1, 2)),
    (16, 8, (3, 8), (1, 2)),
    (8, 4, (3, 6), (1, 2)),
    (4, 1, (2, 6), (1, 2)),
)
N_FRAMES = 8
FEATURE_WIDTH = 512
FLAT_WIDTH = 27


@dataclass
class ShapeChain:
    shapes: list = field(default_factory=list)
    flat_width: int | None = None
    error: str | None = None

    @property
    def compatible(self) -> bool:
        return self.error is None


def shape_chain_report(n: int, feat_width: int, layers=CONV_LAYERS, linear_in: int = FLAT_WIDTH) -> ShapeChain:
    """Per-layer (H, W) under valid convolution, flagging any dead end."""
    report = ShapeChain()
    h, w = n, feat_width
    for k, (_, c_out, (kh, kw), (sh, sw)) in enumerate(layers, start=1):
        h, w = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)
        if h <= 0 or w <= 0:
            report.error = f"layer {k}: output ({h}, {w}) has a non-positive dimension"
            return report
        report.shapes.append((h, w))
    report.flat_width = layers[-1][1] * h * w
    if report.flat_width != linear_in:
        report.error = f"flattened width {report.flat_width} incompatible with Linear({linear_in}, 1)"
    return report


class VideoDiscriminator(Module):
    def __init__(self, rng: np.random.Generator | None = None, seed: int = 0):
        rng = rng if rng is not None else generator(seed, "video-disc-init")
        self.convs = [Conv2d(ci, co, k, s, rng=rng) for ci, co, k, s in CONV_LAYERS]
        self.head = Linear(FLAT_WIDTH, 1, rng, init="xavier")

    def forward(self, fv: Tensor, trace: list | None = None) -> Tensor:
        """Probabilities (B,) for feature videos (B, 1, 8, 512).

        ``trace``, when given, receives every intermediate activation shape.
        """
        expected = (1, N_FRAMES, FEATURE_WIDTH)
        if fv.ndim != 4 or fv.shape[1:] != expected:
            raise ValueError(f"feature video must be (B, {', '.join(map(str, expected))}), got {fv.shape}")
        h = fv
        for conv in self.convs:
            h = ops.relu(conv(h))
            if trace is not None:
                trace.append(h.shape)
        h = ops.reshape(h, (fv.shape[0], -1))
        p = ops.sigmoid(self.head(h))
        return ops.reshape(p, (fv.shape[0],))


def vdisc_forward(fv, net: VideoDiscriminator) -> Tensor:
    fv = fv if isinstance(fv, Tensor) else Tensor(np.asarray(fv, dtype=np.float32))
    while fv.ndim < 4:
        fv = ops.reshape(fv, (1,) + fv.shape)
    return net(fv)


def expected_parameter_count() -> int:
    convs = sum(ci * co * kh * kw + co for ci, co, (kh, kw), _ in CONV_LAYERS)
    return convs + FLAT_WIDTH + 1
