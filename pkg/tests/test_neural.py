import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnxva.neural import (AdamState, MlpSpec, SpecError, TrainingError, adam_step, init_params, mlp_backward,
                          mlp_forward, pack, stacked_backward, stacked_forward, unpack)


def test_flat_length_default_widths():
    assert MlpSpec(1, (11, 11), 1).n_params == 166
    assert MlpSpec.default(1).widths == (1, 11, 11, 1)
    assert MlpSpec.default(3).n_params == 3 * 13 + 13 + 13 * 13 + 13 + 13 * 3 + 3


def test_zero_width_rejected():
    with pytest.raises(SpecError):
        MlpSpec(1, (0, 11), 1)
    with pytest.raises(SpecError):
        MlpSpec(1, (4,), 1, activation="softplus")


def test_init_deterministic_with_zero_bias():
    spec = MlpSpec.default(3)
    a, b = init_params(spec, 42), init_params(spec, 42)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_params(spec, 43))
    for _, B in unpack(spec, a):
        assert np.all(B == 0.0)


def test_zero_params_give_zero_output():
    spec = MlpSpec.default(2)
    out = mlp_forward(spec, np.zeros(spec.n_params), np.array([[0.3, -1.0], [2.0, 0.5]]))
    assert np.all(out == 0.0)


def test_odd_activation_maps_zero_to_zero():
    spec = MlpSpec.default(3)
    assert np.all(mlp_forward(spec, init_params(spec, 1), np.zeros(3)) == 0.0)


def test_hand_evaluated_tiny_net():
    spec = MlpSpec(1, (1,), 1, bias=False)
    out = mlp_forward(spec, np.array([1.0, 2.0]), np.array([0.5]))
    assert out[0] == pytest.approx(2 * np.tanh(0.5), rel=1e-15)
    assert out[0] == pytest.approx(0.924235, rel=1e-6)


def test_pack_unpack_roundtrip():
    spec = MlpSpec(2, (5, 4), 3)
    p = init_params(spec, 0)
    assert np.array_equal(pack(spec, unpack(spec, p)), p)


def test_input_dimension_checked():
    spec = MlpSpec(2, (4,), 2)
    with pytest.raises(SpecError):
        mlp_forward(spec, init_params(spec, 0), np.zeros(3))


def test_zero_upstream_zero_gradient():
    spec = MlpSpec.default(2)
    gp, gx = mlp_backward(spec, init_params(spec, 0), np.ones((4, 2)), np.zeros((4, 2)))
    assert np.all(gp == 0.0) and np.all(gx == 0.0)


@pytest.mark.parametrize("act", ["tanh", "sigmoid", "relu", "linear"])
@pytest.mark.parametrize("bias", [True, False])
def test_backward_matches_finite_differences(act, bias):
    spec = MlpSpec(3, (5, 4), 2, activation=act, bias=bias)
    rng = np.random.default_rng(7)
    p = init_params(spec, 3) + (rng.normal(0, 0.1, spec.n_params) if bias else 0.0)
    x = rng.normal(size=(6, 3))
    u = rng.normal(size=(6, 2))
    gp, gx = mlp_backward(spec, p, x, u)
    f = lambda q, z: np.sum(u * mlp_forward(spec, q, z))  # noqa: E731
    h = 1e-6
    num_p = np.array([(f(p + h * e, x) - f(p - h * e, x)) / (2 * h) for e in np.eye(p.size)])
    assert np.allclose(gp, num_p, rtol=1e-6, atol=1e-8)
    num_x = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            d = np.zeros_like(x)
            d[i, j] = h
            num_x[i, j] = (f(p, x + d) - f(p, x - d)) / (2 * h)
    assert np.allclose(gx, num_x, rtol=1e-6, atol=1e-8)


def test_stacked_matches_individual_networks():
    spec = MlpSpec.default(2)
    params = init_params(spec, 5, n_networks=3)
    x = np.random.default_rng(0).normal(size=(3, 7, 2))
    out = stacked_forward(spec, params, x)
    for m in range(3):
        assert np.allclose(out[m], mlp_forward(spec, params[m], x[m]), rtol=1e-14)
    u = np.ones_like(out)
    gp, gx = stacked_backward(spec, params, x, u)
    gp2, _ = stacked_backward(spec, params, x, u, input_grad=False)
    assert np.allclose(gp, gp2)
    for m in range(3):
        assert np.allclose(gp[m], mlp_backward(spec, params[m], x[m], u[m])[0], rtol=1e-12)


def test_adam_zero_gradient_keeps_params():
    s = AdamState(3)
    p = np.array([1.0, -2.0, 0.5])
    q, _ = adam_step(s, p, np.zeros(3))
    assert np.array_equal(q, p)


def test_adam_first_step_hand_value():
    s = AdamState(1, lr=0.001)
    q, _ = adam_step(s, np.array([1.0]), np.array([2.0]))
    assert q[0] == pytest.approx(0.999, abs=1e-10)
    assert s.step == 1


def test_adam_rejects_nan_gradient():
    s = AdamState(2)
    with pytest.raises(TrainingError, match="step 1"):
        adam_step(s, np.zeros(2), np.array([0.0, np.nan]))


def test_adam_minimises_quadratic():
    s = AdamState(2, lr=0.05)
    p = np.array([3.0, -2.0])
    for _ in range(2000):
        p, _ = adam_step(s, p, 2 * p)
    assert np.max(np.abs(p)) < 1e-2


@settings(max_examples=30, deadline=None)
@given(g=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3), lr=st.floats(1e-4, 0.1))
def test_adam_first_step_size_is_lr(g, lr):
    s = AdamState(1, lr=lr)
    q, _ = adam_step(s, np.array([0.0]), np.array([g]))
    assert q[0] == pytest.approx(-lr * np.sign(g), rel=1e-4)
