"""Synthetic benchmark landscapes with random translation and call counting.

Every landscape is written for a batch ``(n, d)`` and returns ``(n,)``.
``ObjectiveSpec`` evaluates ``f(x - translation)`` and counts calls.

Two printed forms are replaced by the standard definitions:
Rosenbrock uses ``100 (x_{i+1} - x_i^2)^2`` and Griewank uses
``cos(x_i / sqrt(i))`` with the product over all coordinates.
The Bent Cigar applies the rotation twice, as in BBOB:
``cigar(R T_asy(R x))``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

STYBLINSKI_ARGMIN = -2.903534027771178
STYBLINSKI_MIN_PER_DIM = -39.16616570377142


def sphere(x):
    return np.sum(x * x, axis=-1)


def rosenbrock(x):
    return np.sum((1.0 - x[..., :-1]) ** 2 + 100.0 * (x[..., 1:] - x[..., :-1] ** 2) ** 2, axis=-1)


def cigar(x):
    return x[..., 0] ** 2 + 1e4 * np.sum(x[..., 1:] ** 2, axis=-1)


def rastrigin(x, amplitude=10.0):
    d = x.shape[-1]
    return amplitude * d + np.sum(x * x - amplitude * np.cos(2.0 * np.pi * x), axis=-1)


def griewank(x):
    i = np.arange(1, x.shape[-1] + 1)
    return np.sum(x * x, axis=-1) / 4000.0 - np.prod(np.cos(x / np.sqrt(i)), axis=-1) + 1.0


def beale(x):
    x1, x2 = x[..., 0], x[..., 1]
    return ((1.5 - x1 + x1 * x2) ** 2
            + (2.25 - x1 + x1 * x2 ** 2) ** 2
            + (2.625 - x1 + x1 * x2 ** 3) ** 2
            + np.sum(x[..., 2:] ** 2, axis=-1))


def styblinski(x):
    return 0.5 * np.sum(x ** 4 - 16.0 * x ** 2 + 5.0 * x, axis=-1)


def t_asy(x, beta: float):
    """BBOB asymmetry: positive ``x_i`` become ``x_i^(1 + beta (i-1)/(d-1) sqrt(x_i))``."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    ramp = np.arange(d) / (d - 1) if d > 1 else np.zeros(1)
    pos = x > 0
    xp = np.where(pos, x, 1.0)
    return np.where(pos, xp ** (1.0 + beta * ramp * np.sqrt(xp)), x)


def bent_cigar(x, rotation: np.ndarray, beta: float):
    # rows are points, so R x becomes x @ R.T
    y = t_asy(x @ rotation.T, beta)
    return cigar(y @ rotation.T)


def default_bent_cigar_beta(d: int) -> float:
    return 2.0 if d >= 10 else 0.5


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotation (determinant +1)."""
    if d == 1:
        return np.ones((1, 1))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


_LANDSCAPES = {
    "sphere": sphere,
    "rosenbrock": rosenbrock,
    "cigar": cigar,
    "rastrigin": rastrigin,
    "griewank": griewank,
    "beale": beale,
    "styblinski": styblinski,
}

# name -> (min dimension, optimum location builder, optimal value builder)
_OPTIMA = {
    "sphere": (1, lambda d: np.zeros(d), lambda d: 0.0),
    "rosenbrock": (2, lambda d: np.ones(d), lambda d: 0.0),
    "cigar": (1, lambda d: np.zeros(d), lambda d: 0.0),
    "bent_cigar": (2, lambda d: np.zeros(d), lambda d: 0.0),
    "rastrigin": (1, lambda d: np.zeros(d), lambda d: 0.0),
    "griewank": (1, lambda d: np.zeros(d), lambda d: 0.0),
    "beale": (2, lambda d: np.r_[3.0, 0.5, np.zeros(d - 2)], lambda d: 0.0),
    "styblinski": (1, lambda d: np.full(d, STYBLINSKI_ARGMIN),
                   lambda d: STYBLINSKI_MIN_PER_DIM * d),
}

OBJECTIVES = tuple(_OPTIMA)


@dataclass
class ObjectiveSpec:
    name: str
    dim: int
    translation: np.ndarray = None
    rotation: np.ndarray | None = None
    beta: float | None = None
    evaluations: int = field(default=0, init=False)

    def __post_init__(self):
        if self.name not in _OPTIMA:
            raise KeyError(f"unknown objective {self.name!r}; choose from {', '.join(OBJECTIVES)}")
        if self.dim < _OPTIMA[self.name][0]:
            raise ValueError(f"{self.name} needs dimension >= {_OPTIMA[self.name][0]}")
        if self.translation is None:
            self.translation = np.zeros(self.dim)
        self.translation = np.asarray(self.translation, dtype=float)
        if self.translation.shape != (self.dim,):
            raise ValueError("translation must have length dim")
        if self.name == "bent_cigar":
            if self.rotation is None:
                self.rotation = np.eye(self.dim)
            if self.beta is None:
                self.beta = default_bent_cigar_beta(self.dim)
        if self.rotation is not None:
            r = np.asarray(self.rotation, dtype=float)
            if r.shape != (self.dim, self.dim) or not np.allclose(r.T @ r, np.eye(self.dim), atol=1e-10):
                raise ValueError("rotation must be an orthogonal dim x dim matrix")
            self.rotation = r
        self._lock = threading.Lock()

    @property
    def optimum(self) -> np.ndarray:
        """Location of the global minimum, translation included."""
        return _OPTIMA[self.name][1](self.dim) + self.translation

    @property
    def optimal_value(self) -> float:
        return _OPTIMA[self.name][2](self.dim)

    def _raw(self, y):
        if self.name == "bent_cigar":
            return bent_cigar(y, self.rotation, self.beta)
        return _LANDSCAPES[self.name](y)

    def evaluate_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected points of shape (n, {self.dim}), got {X.shape}")
        with np.errstate(over="ignore", invalid="ignore"):
            values = self._raw(X - self.translation)
        with self._lock:
            self.evaluations += X.shape[0]
        return values

    def __call__(self, x) -> float:
        return evaluate(self, x)


def evaluate(spec: ObjectiveSpec, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a point of length {spec.dim}, got {x.shape}")
    return float(spec.evaluate_batch(x[None, :])[0])


def make_objective(name: str, dim: int, rng: np.random.Generator | None = None,
                   translate: bool = True) -> ObjectiveSpec:
    """Landscape instance; with ``rng`` the translation is uniform in [-2, 2]^d.

    The Bent Cigar also receives a random rotation drawn from ``rng``.
    """
    if name not in _OPTIMA:
        raise KeyError(f"unknown objective {name!r}; choose from {', '.join(OBJECTIVES)}")
    translation = None
    rotation = None
    if rng is not None:
        if translate:
            translation = rng.uniform(-2.0, 2.0, size=dim)
        if name == "bent_cigar":
            rotation = random_rotation(dim, rng)
    return ObjectiveSpec(name, dim, translation=translation, rotation=rotation)
