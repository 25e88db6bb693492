import numpy as np
import pytest

from mevgan.autodiff import (
    Adam, FrozenParameterError, Tape, TapeError, Tensor, generator, grad, grad_check, no_grad, ops, randn, shadow64,
)
from oracles import adam_reference, conv2d_loops


def leaf(x, dtype=np.float64):
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=True)


def test_backward_accumulates_into_leaves():
    a, b = leaf([1.0, 2.0, 3.0]), leaf([4.0, 5.0, 6.0])
    with Tape() as tape:
        loss = ops.sum(ops.mul(a, b))
    tape.backward(loss)
    np.testing.assert_array_equal(a.grad, b.data)
    np.testing.assert_array_equal(b.grad, a.data)


def test_backward_twice_needs_reset():
    a = leaf([1.0])
    with Tape() as tape:
        loss = ops.sum(ops.mul(a, a))
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_grad_outside_tape_raises():
    with pytest.raises(TapeError):
        grad(leaf([1.0]), [leaf([1.0])])


def test_non_scalar_target_rejected():
    a = leaf([1.0, 2.0])
    with Tape() as tape, pytest.raises(TapeError):
        tape.gradient(ops.mul(a, a), [a])


def test_unreachable_source_gets_zeros():
    a, b = leaf([1.0, 2.0]), leaf([3.0])
    with Tape():
        (gb,) = grad(ops.sum(a), [b])
    np.testing.assert_array_equal(gb.data, [0.0])


def test_no_grad_records_nothing():
    a = leaf([1.0, 2.0])
    with Tape() as tape:
        with no_grad():
            y = ops.mul(a, a)
    assert tape.nodes == [] and not y.requires_grad


def test_shared_subexpression_sums_paths():
    # y = x*x + x  ->  dy/dx = 2x + 1
    x = leaf([3.0])
    with Tape():
        (g,) = grad(ops.sum(ops.add(ops.mul(x, x), x)), [x])
    assert g.data[0] == 7.0


def test_double_backward_of_cubic():
    x = leaf([2.0])
    with Tape():
        y = ops.sum(ops.power(x, 3.0))
        (g1,) = grad(y, [x], create_graph=True)
        (g2,) = grad(ops.sum(g1), [x])
    assert g1.data[0] == pytest.approx(12.0)
    assert g2.data[0] == pytest.approx(12.0)


def test_frozen_parameter_rejects_gradient_write():
    p = leaf([1.0, 2.0])
    p.frozen = True
    with Tape() as tape:
        loss = ops.sum(ops.mul(p, p))
    with pytest.raises(FrozenParameterError):
        tape.backward(loss)


def test_adam_refuses_frozen_parameter():
    p = leaf([1.0])
    p.frozen = True
    with pytest.raises(FrozenParameterError):
        Adam([p]).step([np.ones(1)])


def test_adam_matches_reference_over_several_steps():
    rng = np.random.default_rng(0)
    start = rng.standard_normal(5)
    grads = [rng.standard_normal(5) for _ in range(4)]
    p = leaf(start.copy())
    opt = Adam([p], lr=1e-2, betas=(0.5, 0.999))
    for g in grads:
        opt.step([g])
    np.testing.assert_allclose(p.data, adam_reference(start, grads, lr=1e-2), rtol=0, atol=1e-12)


def test_first_adam_step_moves_each_coordinate_by_lr():
    # with bias correction the first step is lr * sign(g) (up to eps)
    p = leaf([0.0, 0.0, 0.0])
    Adam([p], lr=0.1).step([np.array([3.0, -0.5, 2e-3])])
    np.testing.assert_allclose(p.data, [-0.1, 0.1, -0.1], atol=1e-6)


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x, w, b = rng.standard_normal((2, 3, 9, 11)), rng.standard_normal((4, 3, 3, 5)), rng.standard_normal(4)
    out = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=(2, 3)).data
    np.testing.assert_allclose(out, conv2d_loops(x, w, b, (2, 3)), atol=1e-12)


def test_conv2d_backward_matches_loop_oracle_directional_derivative():
    rng = np.random.default_rng(2)
    x, w = rng.standard_normal((1, 2, 7, 8)), rng.standard_normal((3, 2, 3, 3))
    dw = rng.standard_normal(w.shape)
    wt = leaf(w)
    with Tape():
        (g,) = grad(ops.sum(ops.conv2d(Tensor(x), wt, stride=(1, 2))), [wt])
    eps = 1e-6
    numeric = (conv2d_loops(x, w + eps * dw, stride=(1, 2)).sum()
               - conv2d_loops(x, w - eps * dw, stride=(1, 2)).sum()) / (2 * eps)
    assert float((g.data * dw).sum()) == pytest.approx(numeric, rel=1e-8)


def test_grad_check_flags_a_wrong_gradient():
    from mevgan.autodiff.tensor import make

    def bad_square(x):
        return make(x.data ** 2, (x,), lambda g: (ops.mul(g, Tensor(3.0 * x.data)),), "bad_square")

    report = grad_check(lambda xs: bad_square(xs[0]), [leaf([0.5, -1.0, 2.0])])
    assert not report.passed
    assert report.max_rel_error > 0.1


def test_grad_check_skips_coordinates_on_a_kink():
    x = leaf([0.0, 1.0, -1.0])
    report = grad_check(lambda xs: ops.relu(xs[0]), [x])
    assert report.n_skipped == 1 and report.passed


def test_grad_check_defaults_follow_precision():
    x32 = Tensor(np.array([0.3, 0.7], np.float32), requires_grad=True)
    assert grad_check(lambda xs: ops.tanh(xs[0]), [x32]).tolerance == 1e-4
    assert grad_check(lambda xs: ops.tanh(xs[0]), [leaf([0.3, 0.7])]).tolerance == 1e-6


def test_shadow64_switches_default_dtype():
    assert Tensor([1, 2]).dtype == np.float32
    with shadow64():
        assert Tensor([1, 2]).dtype == np.float64
        assert randn((2,), 0).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


def test_generator_streams_are_reproducible_and_independent():
    a = generator(7, "stream").standard_normal(4)
    np.testing.assert_array_equal(a, generator(7, "stream").standard_normal(4))
    assert not np.array_equal(a, generator(7, "other").standard_normal(4))
    assert not np.array_equal(a, generator(8, "stream").standard_normal(4))
    assert isinstance(generator(0).bit_generator, np.random.Philox)


def test_randn_rejects_empty_shape():
    with pytest.raises(ValueError):
        randn((0, 3), 0)


def test_l2_normalize_rows_gives_unit_rows():
    x = Tensor(np.random.default_rng(3).standard_normal((5, 7)))
    np.testing.assert_allclose(np.linalg.norm(ops.l2_normalize_rows(x).data, axis=1), 1.0, atol=1e-12)


def test_bce_and_cross_entropy_values():
    p = Tensor(np.array([0.8, 0.3]))
    expected = -(np.log(0.8) + np.log(0.7)) / 2
    assert ops.bce_loss(p, np.array([1.0, 0.0])).item() == pytest.approx(expected, rel=1e-6)
    logits = Tensor(np.zeros((2, 4)))
    assert ops.cross_entropy(logits, np.array([0, 3])).item() == pytest.approx(np.log(4.0))
