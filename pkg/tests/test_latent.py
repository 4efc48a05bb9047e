import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnnes.flow import LatentParams
from gnnes.latent import (PGES, XNES, DivergenceError, XNESRates, default_xnes_rates,
                          make_utilities, pges_update, ranks, retriangularize, xnes_step,
                          xnes_update)
from gnnes.objectives import sphere


def _latent(d, rng):
    a = np.tril(rng.normal(size=(d, d)) * 0.2)
    np.fill_diagonal(a, rng.uniform(0.5, 1.5, size=d))
    return LatentParams(rng.normal(size=d), a)


def _population(latent, n, rng):
    return latent.mean + rng.normal(size=(n, latent.dim)) @ latent.cov_factor.T


# -- utilities ---------------------------------------------------------------

def test_two_point_utilities():
    u = make_utilities([3.0, 1.0])
    assert u[1] > 0 > u[0]
    assert u.sum() == pytest.approx(0.0, abs=1e-15)


def test_tied_fitness_ranks_by_index():
    np.testing.assert_array_equal(ranks([2.0, 2.0, 2.0, 2.0]), [1, 2, 3, 4])
    u = make_utilities([2.0] * 6)
    np.testing.assert_array_equal(u, make_utilities([2.0] * 6))
    assert np.all(np.diff(u) <= 0)


def test_nan_and_inf_rank_last():
    r = ranks([np.nan, 1.0, np.inf, 0.5])
    assert r[3] == 1 and r[1] == 2
    assert set(r[[0, 2]]) == {3, 4}


def test_utilities_closed_form_n10(rng):
    F = rng.normal(size=10)
    # independent recomputation: walk the sorted order by hand
    order = sorted(range(10), key=lambda i: (F[i], i))
    raw = [0.0] * 10
    for rank, i in enumerate(order, start=1):
        raw[i] = max(0.0, math.log(10 / 2 + 1) - math.log(rank))
    total = math.fsum(raw)
    expected = [r / total - 1 / 10 for r in raw]
    np.testing.assert_allclose(make_utilities(F), expected, rtol=0, atol=1e-15)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60))
def test_utilities_sum_to_zero_and_follow_rank(values):
    u = make_utilities(values)
    assert abs(u.sum()) < 1e-12
    order = np.argsort(np.asarray(values), kind="stable")
    assert np.all(np.diff(u[order]) <= 1e-15)


# -- xNES ----------------------------------------------------------------------

def test_default_rates():
    eta_mean, eta_cov = default_xnes_rates(4)
    assert eta_mean == 1.0
    assert eta_cov == pytest.approx((9 + 3 * math.log(4)) / (5 * 4 * 2))


def test_equal_utilities_antithetic_pair_keeps_mean():
    a = np.array([[1.3, 0.0], [0.4, 0.7]])
    lat = LatentParams(np.zeros(2), a)
    s = np.array([0.9, -1.7])
    Z = np.stack([a @ s, -(a @ s)])
    new = xnes_step(lat, Z, np.array([0.25, 0.25]))
    np.testing.assert_array_equal(new.mean, lat.mean)


def test_xnes_matches_reference_formulas(rng):
    lat = _latent(3, rng)
    Z = _population(lat, 12, rng)
    F = rng.normal(size=12)
    new = xnes_update(lat, Z, F)
    # reference: sorted-order formulation with a dense inverse
    eta_m, eta_c = default_xnes_rates(3)
    order = np.argsort(F, kind="stable")
    n = 12
    u = np.maximum(0, np.log(n / 2 + 1) - np.log(np.arange(1, n + 1)))
    u = u / u.sum() - 1 / n
    s = (np.linalg.inv(lat.cov_factor) @ (Z[order] - lat.mean).T).T
    gd = sum(u[i] * s[i] for i in range(n))
    gm = sum(u[i] * (np.outer(s[i], s[i]) - np.eye(3)) for i in range(n))
    from scipy.linalg import expm
    a_new = lat.cov_factor @ expm(0.5 * eta_c * gm)
    np.testing.assert_allclose(new.mean, lat.mean + eta_m * lat.cov_factor @ gd, rtol=1e-12)
    np.testing.assert_allclose(new.cov, a_new @ a_new.T, rtol=1e-10)


def test_xnes_sphere_convergence():
    rng = np.random.default_rng(3)
    lat = LatentParams(np.array([1.0, 1.0]), np.eye(2))
    best = np.inf
    opt = XNES()
    for _ in range(200):
        Z = _population(lat, 20, rng)
        F = sphere(Z)
        best = min(best, F.min())
        lat = opt(lat, Z, F)
    assert best < 1e-8


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_monotone_transform_invariance(seed):
    r = np.random.default_rng(seed)
    lat = _latent(3, r)
    Z = _population(lat, 15, r)
    F = r.normal(size=15)
    a = xnes_update(lat, Z, F)
    b = xnes_update(lat, Z, np.exp(3 * F) + 7.0)
    assert a.mean.tobytes() == b.mean.tobytes()
    assert a.cov_factor.tobytes() == b.cov_factor.tobytes()


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_factor_stays_canonical(seed, d):
    r = np.random.default_rng(seed)
    lat = _latent(d, r)
    for _ in range(5):
        Z = _population(lat, 4 * d, r)
        lat = xnes_update(lat, Z, r.normal(size=4 * d))
        a = lat.cov_factor
        assert np.all(np.isfinite(a))
        assert np.all(np.triu(a, 1) == 0)
        assert np.all(np.diag(a) > 0)


def test_zero_rates_are_identity(rng):
    lat = _latent(3, rng)
    Z = _population(lat, 10, rng)
    assert xnes_update(lat, Z, rng.normal(size=10), XNESRates(0.0, 0.0)) is lat


def test_xnes_divergence_signalled(rng):
    lat = LatentParams.standard(2)
    Z = np.array([[50.0, 0.0], [0.0, 0.0], [-50.0, 0.0]])
    with pytest.raises(DivergenceError):
        xnes_update(lat, Z, np.array([3.0, 1.0, 2.0]), XNESRates(1.0, 1e4))


def test_retriangularize_preserves_covariance(rng):
    a = rng.normal(size=(4, 4))
    low = retriangularize(a)
    np.testing.assert_allclose(low @ low.T, a @ a.T, rtol=1e-12, atol=1e-12)
    assert np.all(np.triu(low, 1) == 0) and np.all(np.diag(low) > 0)


def test_population_shape_checked(rng):
    lat = _latent(2, rng)
    with pytest.raises(ValueError):
        xnes_update(lat, np.zeros((5, 3)), np.zeros(5))
    with pytest.raises(ValueError):
        xnes_update(lat, np.zeros((1, 2)), np.zeros(1))


# -- PGES ----------------------------------------------------------------------

def test_pges_constant_fitness_keeps_mean(rng):
    lat = _latent(3, rng)
    Z = _population(lat, 10, rng)
    new = pges_update(lat, Z, np.full(10, 0.1), lr=0.5)
    np.testing.assert_array_equal(new.mean, lat.mean)


def test_pges_hand_computed_step():
    lat = LatentParams(np.array([1.0]), np.array([[1.0]]))
    z = [0.5, 1.5, 0.8, 2.0]
    f = [v * v for v in z]
    fbar = sum(f) / 4
    # d/dm log N(z; m, 1) = z - m
    grad = sum((fi - fbar) * (zi - 1.0) for fi, zi in zip(f, z)) / 4
    lr = 0.1
    new = pges_update(lat, np.array(z)[:, None], np.array(f), lr)
    assert new.mean[0] == pytest.approx(1.0 - lr * grad, rel=1e-14)
    assert new.mean[0] < 1.0


def test_pges_zero_lr_identity(rng):
    lat = _latent(2, rng)
    Z = _population(lat, 6, rng)
    assert PGES(0.0)(lat, Z, rng.normal(size=6)) is lat


def test_pges_rejects_single_sample():
    with pytest.raises(ValueError):
        pges_update(LatentParams.standard(2), np.zeros((1, 2)), np.zeros(1), 0.1)


def test_pges_covariance_gradient_matches_score(rng):
    lat = _latent(2, rng)
    Z = _population(lat, 8, rng)
    F = rng.normal(size=8)
    lr = 1e-3
    new = pges_update(lat, Z, F, lr)
    # reference via finite differences of the log-likelihood in (mean, A)
    w = (F - F.mean()) / 8

    def loglik(m, a):
        lp = LatentParams(m, a)
        return float(w @ lp.log_pdf(Z))

    h = 1e-6
    g_m = np.array([(loglik(lat.mean + h * e, lat.cov_factor) -
                     loglik(lat.mean - h * e, lat.cov_factor)) / (2 * h) for e in np.eye(2)])
    g_a = np.zeros((2, 2))
    for i, j in [(0, 0), (1, 0), (1, 1)]:
        e = np.zeros((2, 2))
        e[i, j] = h
        g_a[i, j] = (loglik(lat.mean, lat.cov_factor + e) - loglik(lat.mean, lat.cov_factor - e)) / (2 * h)
    np.testing.assert_allclose(new.mean, lat.mean - lr * g_m, rtol=1e-8, atol=1e-10)
    a_ref = lat.cov_factor - lr * g_a
    np.testing.assert_allclose(new.cov, a_ref @ a_ref.T, rtol=1e-8, atol=1e-10)
