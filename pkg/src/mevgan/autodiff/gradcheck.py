"""Tape gradients versus central finite differences."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    n_skipped: int = 0
    per_input: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error < self.tolerance


def _evaluate(fn, inputs) -> tuple[float, tuple]:
    ops.branch_log = []
    try:
        with Tape():
            value = float(np.asarray(fn(inputs).data, dtype=np.float64).sum())
        return value, tuple(ops.branch_log)
    finally:
        ops.branch_log = None


def grad_check(fn: Callable[[Sequence[Tensor]], Tensor], inputs: Sequence[Tensor],
               tolerance: float | None = None, h: float | None = None,
               max_coords: int | None = None, seed: int = 0,
               oracle_dtype=np.float64) -> GradCheckReport:
    """Compare tape gradients of ``sum(fn(inputs))`` with central differences.

    ``fn`` may return any shape; the sum is accumulated in float64 on the
    numeric side, so returning the unreduced output keeps 32-bit checks quiet.

    The error for one input is ``max|analytic - numeric| / max|analytic|`` over
    the checked coordinates, scaled by the largest analytic entry of that input.
    Coordinates whose perturbation flips a ReLU/clamp branch are skipped, since
    the function is not differentiable inside that stencil. Step and tolerance
    default to 1e-4 / 1e-4 for float32 inputs and 1e-6 / 1e-6 for float64.

    The analytic side runs at the inputs' precision. The difference quotients
    are evaluated on float64 copies of the inputs (``oracle_dtype``): a float32
    quotient with h=1e-3 carries roundoff of order 1e-4 by itself.
    """
    inputs = list(inputs)
    wide = all(t.data.dtype == np.float64 for t in inputs)
    h = h if h is not None else (1e-6 if wide else 1e-4)
    tolerance = tolerance if tolerance is not None else (1e-6 if wide else 1e-4)

    saved = [t.requires_grad for t in inputs]
    for t in inputs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            out = ops.sum(fn(inputs))
            analytic = [g.data.astype(np.float64) for g in tape.gradient(out, inputs)]
    finally:
        for t, flag in zip(inputs, saved):
            t.requires_grad = flag

    original = [t.data for t in inputs]
    for t in inputs:
        t.data = t.data.astype(oracle_dtype)
    try:
        return _numeric_compare(fn, inputs, analytic, h, tolerance, max_coords, seed)
    finally:
        for t, data in zip(inputs, original):
            t.data = data


def _numeric_compare(fn, inputs, analytic, h, tolerance, max_coords, seed) -> GradCheckReport:
    _, base_sig = _evaluate(fn, inputs)
    rng = np.random.default_rng(seed)
    worst, checked, skipped, per_input = 0.0, 0, 0, []
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        scale = max(float(np.max(np.abs(a))), 1e-12)
        err = 0.0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp, sig_p = _evaluate(fn, inputs)
            flat[i] = orig - h
            fm, sig_m = _evaluate(fn, inputs)
            flat[i] = orig
            if sig_p != base_sig or sig_m != base_sig:
                skipped += 1
                continue
            num = (fp - fm) / (2.0 * h)
            err = max(err, abs(a.reshape(-1)[i] - num) / scale)
            checked += 1
        per_input.append(err)
        worst = max(worst, err)
    return GradCheckReport(worst, tolerance, checked, skipped, per_input)
