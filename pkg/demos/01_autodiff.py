"""
Reverse-mode gradients on a tape
================================

Operations run inside a ``Tape`` are recorded in execution order. Backward
rules are themselves tape operations, so a gradient can be differentiated
again, which is what a gradient penalty needs.
"""
import numpy as np

from mevgan.autodiff import Tape, Tensor, grad, grad_check, ops

# %%
# A scalar function of two vectors and its gradients.
a = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
b = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
with Tape():
    loss = ops.sum(ops.mul(ops.tanh(a), b))
    ga, gb = grad(loss, [a, b])
print("d/da:", ga.data)
print("d/db:", gb.data, "(equals tanh(a))")

# %%
# Second derivative of x**3 at x = 2 is 6x = 12.
x = Tensor(np.array([2.0]), requires_grad=True)
with Tape():
    (g1,) = grad(ops.sum(ops.power(x, 3.0)), [x], create_graph=True)
    (g2,) = grad(ops.sum(g1), [x])
print("f'(2) =", g1.data[0], " f''(2) =", g2.data[0])

# %%
# Finite differences check any function of tensors. Float32 inputs are
# compared at h=1e-4 against a float64 difference quotient.
rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((2, 3, 8, 8)).astype(np.float32), requires_grad=True)
w = Tensor(rng.standard_normal((4, 3, 3, 3)).astype(np.float32), requires_grad=True)
report = grad_check(lambda xs: ops.conv2d(xs[0], xs[1], stride=(1, 2)), [x, w], max_coords=20)
print(f"conv2d grad check: max rel error {report.max_rel_error:.2e} (tolerance {report.tolerance:.0e})")
