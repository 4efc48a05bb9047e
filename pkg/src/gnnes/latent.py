"""Search-distribution updates for the Gaussian latent.

An optimizer is any callable ``(latent, Z, F) -> latent`` where ``Z`` holds
the latent samples of one generation and ``F`` their objective values
(lower is better).  ``XNES`` and ``PGES`` implement that interface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.linalg import expm

from .flow import LatentParams


class DivergenceError(ArithmeticError):
    """A latent update produced a non-finite or degenerate covariance factor."""


class LatentOptimizer(Protocol):
    def __call__(self, latent: LatentParams, Z: np.ndarray, F: np.ndarray) -> LatentParams: ...


def _check_population(latent: LatentParams, Z, F):
    Z = np.asarray(Z, dtype=float)
    F = np.asarray(F, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != latent.dim:
        raise ValueError(f"Z has shape {Z.shape}, expected (n, {latent.dim})")
    if F.shape != (Z.shape[0],):
        raise ValueError(f"F has shape {F.shape}, expected ({Z.shape[0]},)")
    if Z.shape[0] < 2:
        raise ValueError("need at least two samples")
    return Z, F


def ranks(F) -> np.ndarray:
    """1-based ranks, ascending in F; NaN counts as +inf; ties by sample index."""
    F = np.where(np.isnan(F), np.inf, np.asarray(F, dtype=float))
    order = np.argsort(F, kind="stable")
    r = np.empty(F.size, dtype=int)
    r[order] = np.arange(1, F.size + 1)
    return r


def make_utilities(F) -> np.ndarray:
    """Rank-based fitness shaping; ``u[i]`` belongs to sample ``i``.

    ``u = max(0, log(n/2 + 1) - log(rank))``, normalised to sum to one and
    shifted by ``-1/n`` so the weights sum to zero.
    """
    F = np.asarray(F, dtype=float).reshape(-1)
    n = F.size
    raw = np.maximum(0.0, np.log(n / 2 + 1) - np.log(ranks(F)))
    return raw / raw.sum() - 1.0 / n


def retriangularize(a: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with positive diagonal and ``L L^T = a a^T``.

    Computed from a QR factorisation of ``a^T`` so that ``a a^T`` is never
    formed (keeps very small factors representable).
    """
    q, r = np.linalg.qr(a.T)
    low = r.T
    signs = np.sign(np.diag(low))
    signs[signs == 0] = 1.0
    low = low * signs
    return np.tril(low)


def _checked_latent(mean, a) -> LatentParams:
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(a))):
        raise DivergenceError("latent update is not finite")
    low = retriangularize(a)
    if np.any(np.diag(low) <= 0.0) or not np.all(np.isfinite(low)):
        raise DivergenceError("covariance factor lost positive definiteness")
    return LatentParams(mean, low)


def default_xnes_rates(d: int) -> tuple[float, float]:
    """``(eta_mean, eta_cov)`` defaults from the xNES literature."""
    return 1.0, (9.0 + 3.0 * np.log(d)) / (5.0 * d * np.sqrt(d))


@dataclass(frozen=True)
class XNESRates:
    mean: float | None = None
    cov: float | None = None

    def resolve(self, d: int) -> tuple[float, float]:
        eta_mean, eta_cov = default_xnes_rates(d)
        return (eta_mean if self.mean is None else self.mean,
                eta_cov if self.cov is None else self.cov)


def xnes_step(latent: LatentParams, Z, utilities, rates: XNESRates = XNESRates()) -> LatentParams:
    """xNES step with caller-supplied utilities (``utilities[i]`` weights ``Z[i]``)."""
    Z = np.asarray(Z, dtype=float)
    u = np.asarray(utilities, dtype=float)
    eta_mean, eta_cov = rates.resolve(latent.dim)
    if eta_mean == 0.0 and eta_cov == 0.0:
        return latent
    s = latent.standardize(Z)
    a = latent.cov_factor
    g_delta = u @ s
    g_m = (s * u[:, None]).T @ s - u.sum() * np.eye(latent.dim)
    mean = latent.mean + eta_mean * (a @ g_delta)
    with np.errstate(over="ignore", invalid="ignore"):
        new_a = a @ expm(0.5 * eta_cov * g_m)
    return _checked_latent(mean, new_a)


def xnes_update(latent: LatentParams, Z, F, rates: XNESRates = XNESRates()) -> LatentParams:
    """One exponential natural-gradient step on the Gaussian latent."""
    Z, F = _check_population(latent, Z, F)
    return xnes_step(latent, Z, make_utilities(F), rates)


def pges_update(latent: LatentParams, Z, F, lr: float) -> LatentParams:
    """Plain score-function gradient step with a mean-fitness baseline.

    Parameters are ``(mean, A)``; the step is ``-lr`` times the Monte-Carlo
    estimate of ``E[(f - mean f) grad log N(z; mean, A A^T)]``.
    """
    Z, F = _check_population(latent, Z, F)
    if lr == 0.0:
        return latent
    if not np.all(np.isfinite(F)):
        raise ValueError("PGES needs finite fitness values")
    n, d = Z.shape
    w = (F - F.mean()) / n
    if np.all(F == F[0]):
        # rounding in the mean must not turn constant fitness into a step
        w = np.zeros(n)
    s = latent.standardize(Z)
    a_inv_t = np.linalg.inv(latent.cov_factor).T
    # grad_mean log N = A^{-T} s ; grad_A log N = A^{-T} (s s^T - I)
    g_mean = a_inv_t @ (w @ s)
    g_a = a_inv_t @ ((s * w[:, None]).T @ s - w.sum() * np.eye(d))
    mean = latent.mean - lr * g_mean
    a = np.tril(latent.cov_factor - lr * np.tril(g_a))
    if not np.all(np.isfinite(a)) or np.any(np.diag(a) <= 0.0):
        raise DivergenceError("PGES step left the positive-definite cone")
    return _checked_latent(mean, a)


@dataclass(frozen=True)
class XNES:
    rates: XNESRates = XNESRates()

    def __call__(self, latent, Z, F):
        return xnes_update(latent, Z, F, self.rates)


@dataclass(frozen=True)
class PGES:
    lr: float = 1e-3

    def __call__(self, latent, Z, F):
        return pges_update(latent, Z, F, self.lr)
