import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from botdasr import autodiff as ad
from botdasr.autodiff import (
    LAYER_CASES,
    AdamState,
    NumericalError,
    ShapeError,
    Tensor,
    adam_step,
    conv2d,
    conv_output_size,
    grad_check,
    kaiming_init,
    layer_suite,
    maxpool2d,
    mse_loss,
    no_grad,
    relu,
    width_mask,
)


@pytest.mark.parametrize("layer", sorted(LAYER_CASES))
def test_layer_gradients_20_seeds(layer):
    reports = layer_suite(20, 1e-4, [layer])
    assert len(reports) == 20
    worst = max(r.max_rel_error for r in reports)
    assert worst < 1e-4, f"{layer}: {worst:.2e}"


def test_conv_of_ones_counts_window():
    x = Tensor(np.ones((1, 5, 5, 1)))
    w = Tensor(np.ones((3, 3, 1, 1)))
    out = conv2d(x, w, padding=1)
    assert out.shape == (1, 5, 5, 1)
    assert out.data[0, 2, 2, 0] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 6, 5, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    out = conv2d(Tensor(x), Tensor(w), stride=(2, 1), padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros_like(out)
    for i in range(out.shape[1]):
        for j in range(out.shape[2]):
            patch = xp[:, 2 * i : 2 * i + 3, j : j + 3, :]
            ref[:, i, j, :] = np.einsum("bhwc,hwco->bo", patch, w)
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 200), k=st.integers(1, 7), s=st.integers(1, 3), p=st.integers(0, 3))
def test_conv_output_size_formula(n, k, s, p):
    assert conv_output_size(n, k, s, p) == (n + 2 * p - k) // s + 1


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))
    with pytest.raises(ShapeError):
        ad.residual_add(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3))))


def test_maxpool_first_max_wins_on_ties():
    x = Tensor(np.zeros((1, 2, 2, 1)), requires_grad=True)
    out = maxpool2d(x, 2, 2, 0)
    out.backward(np.ones(out.shape))
    assert x.grad.sum() == 1.0
    assert x.grad[0, 0, 0, 0] == 1.0


def test_relu_and_no_grad():
    x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
    with no_grad():
        y = relu(x)
    assert y._parents == () or not y.requires_grad
    np.testing.assert_array_equal(y.data, [0.0, 2.0])


def test_mse_loss_masked_value():
    pred = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
    loss = mse_loss(pred, np.zeros((1, 4)), width_mask(4, 2))
    assert float(loss.data) == pytest.approx((4 + 9) / 2)


def test_checked_mode_flags_non_finite():
    ad.set_checked(True)
    try:
        with np.errstate(invalid="ignore"), pytest.raises(NumericalError):
            ad.residual_add(Tensor(np.array([np.inf])), Tensor(np.array([-np.inf])))
    finally:
        ad.set_checked(False)
    # unchecked mode lets the value through
    with np.errstate(invalid="ignore"):
        out = ad.residual_add(Tensor(np.array([np.inf])), Tensor(np.array([-np.inf])))
    assert np.isnan(out.data[0])


def test_grad_check_detects_wrong_gradient():
    def bad(x):
        def backward(g):
            x._accumulate(2.0 * g)  # true derivative of identity is 1
        return ad._make(x.data.copy(), (x,), backward)

    rep = grad_check(bad, [np.random.default_rng(0).standard_normal(5)])
    assert not rep.passed


def test_adam_matches_reference_update():
    p = np.array([1.0, -2.0])
    g = np.array([0.5, -0.1])
    state = AdamState(lr=0.1)
    adam_step([p], [g], state)
    m = 0.1 * g
    v = 0.001 * g**2
    expected = np.array([1.0, -2.0]) - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    np.testing.assert_allclose(p, expected)
    assert state.step == 1


def test_adam_minimizes_quadratic():
    p = np.array([3.0, -4.0])
    state = AdamState(lr=0.1)
    for _ in range(500):
        adam_step([p], [2 * p], state)
    assert np.abs(p).max() < 0.05


def test_kaiming_init_scale():
    w = kaiming_init((3, 3, 64, 64), 3 * 3 * 64, np.random.default_rng(0))
    assert w.dtype == np.float32
    assert w.std() == pytest.approx(np.sqrt(2 / 576), rel=0.05)


def test_backward_twice_accumulates_on_leaves():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = ad.residual_add(x, x)
    y.backward(np.ones(2))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
