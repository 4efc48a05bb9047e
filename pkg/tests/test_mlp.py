import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnes.mlp import GradientBundle, MLPParams, init_mlp, mlp_backward, mlp_forward

from conftest import central_diff, rel_err


def _zero_mlp(sizes):
    return MLPParams(tuple(np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])),
                     tuple(np.zeros(b) for b in sizes[1:]))


def test_zero_network_outputs_zero():
    p = _zero_mlp([3, 16, 2])
    np.testing.assert_array_equal(mlp_forward(p, np.array([0.4, -1.0, 7.0])), np.zeros(2))


def test_single_linear_layer_identity():
    p = MLPParams((np.array([[1.0]]),), (np.array([0.0]),))
    np.testing.assert_array_equal(mlp_forward(p, np.array([0.3])), [0.3])


def test_forward_matches_scalar_hand_computation(rng):
    p = init_mlp([1, 16, 1], rng, out_scale=1.0)
    p = p.unflatten(rng.normal(size=p.size))
    w1, b1 = p.weights[0], p.biases[0]
    w2, b2 = p.weights[1], p.biases[1]
    x = 0.5
    expected = b2[0]
    for j in range(16):
        expected += math.tanh(x * w1[0, j] + b1[j]) * w2[j, 0]
    assert mlp_forward(p, np.array([x]))[0] == pytest.approx(expected, rel=1e-14, abs=1e-14)


def test_forward_rejects_wrong_input_length(rng):
    p = init_mlp([2, 4, 1], rng)
    with pytest.raises(ValueError):
        mlp_forward(p, np.zeros(3))


def test_backward_rejects_wrong_upstream_length(rng):
    p = init_mlp([2, 4, 1], rng)
    with pytest.raises(ValueError):
        mlp_backward(p, np.zeros(2), np.zeros(2))


def test_zero_upstream_gives_zero_bundle(rng):
    p = init_mlp([2, 16, 2], rng, out_scale=1.0)
    g = mlp_backward(p, np.array([0.1, -0.7]), np.zeros(2))
    assert isinstance(g, GradientBundle)
    np.testing.assert_array_equal(g.d_input, 0.0)
    np.testing.assert_array_equal(g.d_params.flatten(), 0.0)


def test_scalar_affine_chain_rule():
    w, x = 1.7, -0.4
    p = MLPParams((np.array([[w]]),), (np.array([0.25]),))
    g = mlp_backward(p, np.array([x]), np.array([1.0]))
    assert g.d_input[0] == w
    assert g.d_params.weights[0][0, 0] == x
    assert g.d_params.biases[0][0] == 1.0


def test_shapes_mirror_params(rng):
    p = init_mlp([3, 5, 7, 2], rng, out_scale=1.0)
    x = rng.normal(size=(4, 3))
    g = mlp_backward(p, x, rng.normal(size=(4, 2)))
    assert g.d_input.shape == x.shape
    assert g.d_params.layer_sizes == p.layer_sizes


def test_batch_gradient_is_sum_of_rows(rng):
    p = init_mlp([2, 16, 2], rng, out_scale=1.0)
    x = rng.normal(size=(5, 2))
    up = rng.normal(size=(5, 2))
    batch = mlp_backward(p, x, up)
    rows = sum(mlp_backward(p, x[i], up[i]).d_params.flatten() for i in range(5))
    np.testing.assert_allclose(batch.d_params.flatten(), rows, rtol=1e-12, atol=1e-14)


def test_init_scales(rng):
    p = init_mlp([4, 16, 3], rng, out_scale=1e-3)
    assert np.all(np.abs(p.weights[0]) <= 0.5)
    assert np.all(np.abs(p.weights[1]) <= 1e-3 * 0.25)
    np.testing.assert_array_equal(p.biases[0], 0.0)
    zero = init_mlp([4, 16, 3], rng)
    np.testing.assert_array_equal(mlp_forward(zero, rng.normal(size=(6, 4))), 0.0)


def test_flatten_roundtrip(rng):
    p = init_mlp([2, 16, 3], rng, out_scale=1.0)
    q = p.unflatten(p.flatten())
    for a, b in zip(p.weights + p.biases, q.weights + q.biases):
        np.testing.assert_array_equal(a, b)


def test_inconsistent_shapes_rejected():
    with pytest.raises(ValueError):
        MLPParams((np.zeros((2, 3)), np.zeros((4, 1))), (np.zeros(3), np.zeros(1)))


def _fd_check(p, x, up):
    g = mlp_backward(p, x, up)
    num_in = central_diff(lambda v: float(up @ mlp_forward(p, v)), x)
    num_par = central_diff(lambda v: float(up @ mlp_forward(p.unflatten(v), x)), p.flatten())
    return (rel_err(g.d_input, num_in).max(), rel_err(g.d_params.flatten(), num_par).max())


def test_backward_matches_finite_differences_2_16_2(rng):
    p = init_mlp([2, 16, 2], rng, out_scale=1.0)
    p = p.unflatten(rng.normal(size=p.size))
    e_in, e_par = _fd_check(p, rng.normal(size=2), rng.normal(size=2))
    assert e_in < 1e-5 and e_par < 1e-5


@settings(max_examples=100)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_backward_fd_property(seed):
    r = np.random.default_rng(seed)
    p = init_mlp([2, 16, 2], r, out_scale=1.0)
    p = p.unflatten(r.normal(size=p.size))
    e_in, e_par = _fd_check(p, r.normal(size=2), r.normal(size=2))
    assert e_in < 1e-5 and e_par < 1e-5


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_forward_is_deterministic(seed):
    r = np.random.default_rng(seed)
    p = init_mlp([3, 16, 2], r, out_scale=1.0)
    x = r.normal(size=(8, 3))
    a = mlp_forward(p, x)
    b = mlp_forward(p, x.copy())
    assert a.tobytes() == b.tobytes()
