"""The gradient-check suite: every differentiable op plus the full stage-2 composite.

Each case builds a function and its inputs from a seeded generator at a given
precision; ``run_suite`` checks every case on several random instances in
both float32 and float64.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import GradCheckReport, grad_check
from .autodiff.rng import generator
from .autodiff.tensor import Tensor, grad, shadow64

CASES = {}


def case(name: str, max_coords: int | None = None):
    def register(builder):
        CASES[name] = (builder, max_coords)
        return builder
    return register


def _t(rng, shape, dtype, lo=None, hi=None):
    x = rng.uniform(lo, hi, shape) if lo is not None else rng.standard_normal(shape)
    return Tensor(x.astype(dtype), requires_grad=True)


def _away_from_zero(rng, shape, dtype, gap=0.1):
    # keeps kinks of relu/clamp/leaky_relu outside the difference stencil
    x = rng.standard_normal(shape)
    return Tensor((np.sign(x) * (np.abs(x) + gap)).astype(dtype), requires_grad=True)


def _unary(fn, make=None):
    def build(rng, dtype):
        x = make(rng, dtype) if make else _t(rng, (3, 4), dtype)
        return lambda xs: fn(xs[0]), [x]
    return build


CASES.update({
    "neg": (_unary(ops.neg), None),
    "exp": (_unary(ops.exp), None),
    "log": (_unary(ops.log, lambda r, d: _t(r, (3, 4), d, 0.5, 2.0)), None),
    "sqrt": (_unary(ops.sqrt, lambda r, d: _t(r, (3, 4), d, 0.5, 2.0)), None),
    "power": (_unary(lambda x: ops.power(x, 3.0)), None),
    "tanh": (_unary(ops.tanh), None),
    "sigmoid": (_unary(ops.sigmoid), None),
    "relu": (_unary(ops.relu, lambda r, d: _away_from_zero(r, (3, 4), d)), None),
    "leaky_relu": (_unary(ops.leaky_relu, lambda r, d: _away_from_zero(r, (3, 4), d)), None),
    "clamp": (_unary(lambda x: ops.clamp(x, -0.5, 0.5), lambda r, d: _t(r, (3, 4), d, -1.0, 1.0)), None),
    "sum_axis": (_unary(lambda x: ops.sum(x, axis=1)), None),
    "mean": (_unary(lambda x: ops.mean(x, axis=0, keepdims=True)), None),
    "reshape": (_unary(lambda x: ops.mul(ops.reshape(x, (2, 6)), Tensor(np.arange(12.0).reshape(2, 6)))), None),
    "transpose": (_unary(lambda x: ops.mul(ops.transpose(x), Tensor(np.arange(12.0).reshape(4, 3)))), None),
    "broadcast_to": (_unary(lambda x: ops.mul(ops.broadcast_to(ops.reshape(x, (1, 3, 4)), (2, 3, 4)),
                                              Tensor(np.arange(24.0).reshape(2, 3, 4)))), None),
    "getitem": (_unary(lambda x: ops.mul(ops.getitem(x, (slice(0, 2), [0, 2, 2])), Tensor(np.arange(6.0).reshape(2, 3)))),
                None),
    "pad2d": (_unary(lambda x: ops.mul(ops.pad2d(x, 1), Tensor(np.arange(100.0).reshape(1, 1, 10, 10))),
                     lambda r, d: _t(r, (1, 1, 8, 8), d)), None),
    "upsample2x": (_unary(lambda x: ops.mul(ops.upsample2x(x), Tensor(np.arange(64.0).reshape(1, 1, 8, 8))),
                          lambda r, d: _t(r, (1, 1, 4, 4), d)), None),
    "sum_pool2x": (_unary(lambda x: ops.mul(ops.sum_pool2x(x), Tensor(np.arange(16.0).reshape(1, 1, 4, 4))),
                          lambda r, d: _t(r, (1, 1, 8, 8), d)), None),
    "avg_pool2x": (_unary(lambda x: ops.mul(ops.avg_pool2x(x), Tensor(np.arange(16.0).reshape(1, 1, 4, 4))),
                          lambda r, d: _t(r, (1, 1, 8, 8), d)), None),
    "l2_normalize_rows": (_unary(lambda x: ops.mul(ops.l2_normalize_rows(x), Tensor(np.arange(12.0).reshape(3, 4)))),
                          None),
    "pixel_norm": (_unary(lambda x: ops.mul(ops.pixel_norm(x), Tensor(np.arange(48.0).reshape(1, 3, 4, 4))),
                          lambda r, d: _t(r, (1, 3, 4, 4), d)), None),
    "log_softmax": (_unary(lambda x: ops.mul(ops.log_softmax(x), Tensor(np.arange(12.0).reshape(3, 4)))), None),
})


def _binary(fn, make_b=None, shape_a=(3, 4), shape_b=(3, 4)):
    def build(rng, dtype):
        a = _t(rng, shape_a, dtype)
        b = make_b(rng, dtype) if make_b else _t(rng, shape_b, dtype)
        return lambda xs: fn(xs[0], xs[1]), [a, b]
    return build


CASES.update({
    "add_broadcast": (_binary(ops.add, shape_b=(1, 4)), None),
    "sub_broadcast": (_binary(ops.sub, shape_b=(3, 1)), None),
    "mul": (_binary(ops.mul), None),
    "div": (_binary(ops.div, lambda r, d: _t(r, (3, 4), d, 0.5, 2.0)), None),
    "matmul": (_binary(ops.matmul, shape_b=(4, 5)), None),
    "concat": (_binary(lambda a, b: ops.mul(ops.concat([a, b], axis=0), Tensor(np.arange(24.0).reshape(6, 4)))), None),
    "concat_last": (_binary(lambda a, b: ops.mul(ops.concat_last(a, b), Tensor(np.arange(15.0).reshape(3, 5))),
                            shape_b=(3, 1)), None),
})


@case("conv2d")
def _conv(rng, dtype):
    x, w, b = _t(rng, (2, 2, 7, 9), dtype), _t(rng, (3, 2, 3, 4), dtype), _t(rng, (3,), dtype)
    return lambda xs: ops.conv2d(xs[0], xs[1], xs[2], stride=(1, 2)), [x, w, b]


@case("bce_loss")
def _bce(rng, dtype):
    p = _t(rng, (6,), dtype, 0.05, 0.95)
    target = rng.integers(0, 2, 6).astype(dtype)
    return lambda xs: ops.bce_loss(xs[0], target), [p]


@case("cross_entropy")
def _ce(rng, dtype):
    logits = _t(rng, (5, 3), dtype)
    labels = rng.integers(0, 3, 5)
    return lambda xs: ops.cross_entropy(xs[0], labels), [logits]


@case("gradient_penalty")
def _double_backward(rng, dtype):
    # d/dw of ||d critic / d x||^2: differentiates through a recorded backward pass
    x, w = rng.standard_normal((3, 4)).astype(dtype), _t(rng, (4, 2), dtype)

    def fn(xs):
        xi = Tensor(x, requires_grad=True)
        score = ops.sum(ops.tanh(ops.matmul(xi, xs[0])))
        (gx,) = grad(score, [xi], create_graph=True)
        return ops.sum(ops.mul(gx, gx))
    return fn, [w]


@case("composite", max_coords=4)
def _composite(rng, dtype):
    """Plugin -> frozen backbone generator -> frozen extractor -> video discriminator."""
    from .backbone import Backbone, BackboneConfig
    from .plugin import NOISE_DIM, PluginNet
    from .trainer import timeline
    from .video_disc import VideoDiscriminator

    seed = int(rng.integers(2 ** 31))
    backbone = Backbone(BackboneConfig(seed=seed))
    backbone.freeze()
    plugin = PluginNet(seed=seed).astype(dtype)
    vdisc = VideoDiscriminator(seed=seed).astype(dtype)
    g, d = backbone.generator.astype(dtype), backbone.discriminator.astype(dtype)
    t = timeline(8)
    z = Tensor(rng.standard_normal((1, NOISE_DIM)).astype(dtype), requires_grad=True)
    inputs = [z, plugin.layers[0].weight, plugin.layers[3].weight, plugin.layers[3].bias,
              vdisc.convs[0].weight, vdisc.head.weight]

    def fn(xs):
        latents = plugin.trajectories(t, xs[0])
        feats = d.features(g(latents))
        return vdisc(ops.reshape(feats, (1, 1, 8, -1)))
    return fn, inputs


@dataclass
class SuiteResult:
    reports: dict = field(default_factory=dict)    # (case, dtype name) -> list[GradCheckReport]
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(self.reports) and all(r.passed for rs in self.reports.values() for r in rs)

    def worst(self, dtype_name: str) -> float:
        return max(r.max_rel_error for (_, d), rs in self.reports.items() if d == dtype_name for r in rs)

    def lines(self) -> list[str]:
        out = []
        for (name, dname), rs in self.reports.items():
            worst = max(r.max_rel_error for r in rs)
            ok = all(r.passed for r in rs)
            out.append(f"{'PASS' if ok else 'FAIL'} {name:<20} {dname:<8} instances={len(rs):>2} "
                       f"max_rel_err={worst:.2e} tol={rs[0].tolerance:.0e}")
        return out


def check_case(name: str, seed: int, dtype) -> GradCheckReport:
    builder, max_coords = CASES[name]
    rng = generator(seed, "gradcheck", name)
    if dtype == np.float64:
        with shadow64():
            fn, inputs = builder(rng, dtype)
            return grad_check(fn, inputs, max_coords=max_coords, seed=seed)
    fn, inputs = builder(rng, dtype)
    return grad_check(fn, inputs, max_coords=max_coords, seed=seed)


def run_suite(instances: int = 10, names=None, dtypes=(np.float32, np.float64)) -> SuiteResult:
    start = time.perf_counter()
    result = SuiteResult()
    for name in names or CASES:
        for dtype in dtypes:
            result.reports[(name, np.dtype(dtype).name)] = [check_case(name, k, dtype) for k in range(instances)]
    result.seconds = time.perf_counter() - start
    return result
