"""NICE search distribution: additive coupling layers over a Gaussian latent.

A sample is ``x = g(z)`` with ``z ~ N(mean, A A^T)`` and ``g`` a stack of
additive coupling layers.  Each layer keeps the coordinates selected by its
binary mask and shifts the others by an MLP of the kept ones, so ``g`` has a
unit Jacobian determinant and ``log pi(x) = log N(g^{-1}(x); mean, A A^T)``.

All transforms accept a single point ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .mlp import MLPParams, init_mlp, mlp_backward, mlp_forward

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class CouplingLayer:
    mask: np.ndarray  # bool, True = pass-through coordinate
    t_net: MLPParams

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", mask)
        n_keep = int(mask.sum())
        if mask.size >= 2 and (n_keep == 0 or n_keep == mask.size):
            raise ValueError("mask must select at least one and not all coordinates")
        if self.t_net.n_in != n_keep or self.t_net.n_out != mask.size - n_keep:
            raise ValueError(
                f"t_net maps {self.t_net.n_in}->{self.t_net.n_out}, mask needs "
                f"{n_keep}->{mask.size - n_keep}")

    @property
    def dim(self) -> int:
        return self.mask.size


@dataclass(frozen=True)
class FlowParams:
    """An ordered stack of coupling layers acting on ``dimension`` coordinates.

    An empty stack is the identity map; the Gaussian baseline uses it.
    """

    layers: tuple[CouplingLayer, ...]
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.dimension < 2:
            raise ValueError("coupling flows need dimension >= 2")
        for layer in self.layers:
            if layer.dim != self.dimension:
                raise ValueError(f"layer of dim {layer.dim} in a {self.dimension}-d flow")

    @property
    def size(self) -> int:
        return sum(layer.t_net.size for layer in self.layers)

    def flatten(self) -> np.ndarray:
        if not self.layers:
            return np.zeros(0)
        return np.concatenate([layer.t_net.flatten() for layer in self.layers])

    def unflatten(self, vec: np.ndarray) -> "FlowParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got {vec.shape}")
        layers, i = [], 0
        for layer in self.layers:
            n = layer.t_net.size
            layers.append(CouplingLayer(layer.mask, layer.t_net.unflatten(vec[i:i + n])))
            i += n
        return FlowParams(tuple(layers), self.dimension)


@dataclass(frozen=True)
class LatentParams:
    """Gaussian ``N(mean, A A^T)`` with ``A`` lower triangular, positive diagonal."""

    mean: np.ndarray
    cov_factor: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        a = np.array(self.cov_factor, dtype=float)
        d = mean.size
        if a.shape != (d, d):
            raise ValueError(f"cov_factor shape {a.shape} does not match mean of length {d}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(a))):
            raise ValueError("latent parameters must be finite")
        if np.any(np.triu(a, 1) != 0.0):
            raise ValueError("cov_factor must be lower triangular")
        if np.any(np.diag(a) <= 0.0):
            raise ValueError("cov_factor must have a strictly positive diagonal")
        mean.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_factor", a)

    @classmethod
    def standard(cls, d: int, mean=None, scale: float = 1.0) -> "LatentParams":
        m = np.zeros(d) if mean is None else mean
        return cls(m, scale * np.eye(d))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def cov(self) -> np.ndarray:
        return self.cov_factor @ self.cov_factor.T

    def entropy(self) -> float:
        """Differential entropy ``0.5 log det(2 pi e Sigma)``."""
        d = self.dim
        return 0.5 * d * (_LOG_2PI + 1.0) + float(np.sum(np.log(np.diag(self.cov_factor))))

    def standardize(self, z: np.ndarray) -> np.ndarray:
        """``A^{-1} (z - mean)`` row-wise."""
        z = np.asarray(z, dtype=float)
        diff = z - self.mean
        return solve_triangular(self.cov_factor, diff.T, lower=True).T

    def log_pdf(self, z: np.ndarray) -> np.ndarray:
        s = self.standardize(z)
        log_norm = 0.5 * self.dim * _LOG_2PI + np.sum(np.log(np.diag(self.cov_factor)))
        return -0.5 * np.sum(s * s, axis=-1) - log_norm

    def grad_log_pdf(self, z: np.ndarray) -> np.ndarray:
        """``-Sigma^{-1} (z - mean)`` row-wise."""
        s = self.standardize(z)
        return -solve_triangular(self.cov_factor, s.T, lower=True, trans="T").T


def alternating_masks(d: int, n_layers: int) -> list[np.ndarray]:
    """Layer ``k`` keeps the coordinates whose index has parity ``k % 2``."""
    idx = np.arange(d)
    return [(idx % 2) == (k % 2) for k in range(n_layers)]


def init_flow(d: int, rng: np.random.Generator, n_layers: int = 3,
              hidden: tuple[int, ...] = (16,), out_scale: float = 0.0) -> FlowParams:
    layers = []
    for mask in alternating_masks(d, n_layers):
        n_keep = int(mask.sum())
        sizes = (n_keep, *hidden, d - n_keep)
        layers.append(CouplingLayer(mask, init_mlp(sizes, rng, out_scale=out_scale)))
    return FlowParams(tuple(layers), d)


def _check_points(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != d:
        raise ValueError(f"points of shape {x.shape} do not have dimension {d}")
    return x


def coupling_forward(layer: CouplingLayer, u: np.ndarray) -> np.ndarray:
    u = _check_points(u, layer.dim)
    v = u.copy()
    v[..., ~layer.mask] = u[..., ~layer.mask] + mlp_forward(layer.t_net, u[..., layer.mask])
    return v


def coupling_inverse(layer: CouplingLayer, v: np.ndarray) -> np.ndarray:
    v = _check_points(v, layer.dim)
    u = v.copy()
    u[..., ~layer.mask] = v[..., ~layer.mask] - mlp_forward(layer.t_net, v[..., layer.mask])
    return u


def flow_forward(flow: FlowParams, z: np.ndarray) -> np.ndarray:
    x = _check_points(z, flow.dimension).copy()
    for layer in flow.layers:
        x = coupling_forward(layer, x)
    return x


def flow_inverse(flow: FlowParams, x: np.ndarray) -> np.ndarray:
    z = _check_points(x, flow.dimension).copy()
    for layer in reversed(flow.layers):
        z = coupling_inverse(layer, z)
    return z


def log_density(latent: LatentParams, flow: FlowParams, x: np.ndarray):
    """Log-density of the search distribution; no Jacobian term is needed."""
    if latent.dim != flow.dimension:
        raise ValueError("latent and flow dimensions differ")
    return latent.log_pdf(flow_inverse(flow, x))


def sample(latent: LatentParams, flow: FlowParams, n: int, rng: np.random.Generator):
    """Draw ``n`` points; returns ``(Z, X)`` with ``X = flow_forward(Z)``."""
    s = rng.standard_normal((n, latent.dim))
    z = latent.mean + s @ latent.cov_factor.T
    return z, flow_forward(flow, z)


def inverse_trace(flow: FlowParams, x: np.ndarray):
    """``flow_inverse`` that also returns the input seen by each layer."""
    x = _check_points(x, flow.dimension)
    inputs = []
    u = x.copy()
    for layer in reversed(flow.layers):
        inputs.append(u)
        u = coupling_inverse(layer, u)
    inputs.reverse()
    return inputs, u


def backprop_latent_grad(flow: FlowParams, inputs, g) -> FlowParams:
    """Pull a cotangent ``g`` on the latent point back onto the flow parameters."""
    grads = [None] * len(flow.layers)
    for k, layer in enumerate(flow.layers):
        v = inputs[k]
        # u_out[~mask] = v[~mask] - t(v[mask]); u_out[mask] = v[mask]
        bundle = mlp_backward(layer.t_net, v[..., layer.mask], -g[..., ~layer.mask])
        grads[k] = CouplingLayer(layer.mask, bundle.d_params)
        g = g.copy()
        g[..., layer.mask] += bundle.d_input
    return FlowParams(tuple(grads), flow.dimension)


def grad_log_density_eta(latent: LatentParams, flow: FlowParams, x: np.ndarray,
                         weights: np.ndarray | None = None) -> FlowParams:
    """Gradient of ``log_density`` w.r.t. every coupling-layer parameter.

    For a batch ``x`` the result is ``sum_i weights[i] * grad log pi(x_i)``
    (``weights`` defaults to ones).  Returned as a ``FlowParams`` with the
    same layout as ``flow`` so that ``.flatten()`` lines up.
    """
    inputs, z = inverse_trace(flow, x)
    g = latent.grad_log_pdf(z)
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        g = g * (w[:, None] if g.ndim == 2 else w)
    return backprop_latent_grad(flow, inputs, g)


def numerical_jacobian(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at a single point (debug/test aid)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * step))
    return np.stack(cols, axis=-1)


# -- checkpoint format ------------------------------------------------------

def _mlp_to_dict(p: MLPParams) -> dict:
    return {
        "layer_sizes": list(p.layer_sizes),
        "weights": [w.tolist() for w in p.weights],
        "biases": [b.tolist() for b in p.biases],
    }


def _mlp_from_dict(d: dict) -> MLPParams:
    params = MLPParams(tuple(np.array(w, dtype=float) for w in d["weights"]),
                       tuple(np.array(b, dtype=float) for b in d["biases"]))
    if list(params.layer_sizes) != list(d["layer_sizes"]):
        raise ValueError("layer_sizes disagree with the stored weights")
    return params


def params_to_dict(latent: LatentParams, flow: FlowParams) -> dict:
    return {
        "latent": {
            "mean": latent.mean.tolist(),
            "cov_factor": latent.cov_factor.tolist(),
        },
        "flow": {
            "dimension": flow.dimension,
            "layers": [
                {"mask": layer.mask.astype(int).tolist(), "t_net": _mlp_to_dict(layer.t_net)}
                for layer in flow.layers
            ],
        },
    }


def params_from_dict(data: dict) -> tuple[LatentParams, FlowParams]:
    latent = LatentParams(np.array(data["latent"]["mean"], dtype=float),
                          np.array(data["latent"]["cov_factor"], dtype=float))
    f = data["flow"]
    layers = tuple(CouplingLayer(np.array(layer["mask"], dtype=bool), _mlp_from_dict(layer["t_net"]))
                   for layer in f["layers"])
    return latent, FlowParams(layers, int(f["dimension"]))


def dumps(latent: LatentParams, flow: FlowParams) -> str:
    """Serialize to JSON; floats use shortest round-trip repr so output is byte-stable."""
    return json.dumps(params_to_dict(latent, flow), sort_keys=True, indent=1) + "\n"


def loads(text: str) -> tuple[LatentParams, FlowParams]:
    return params_from_dict(json.loads(text))
