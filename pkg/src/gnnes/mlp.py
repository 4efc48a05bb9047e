"""Small dense tanh networks with hand-written reverse-mode gradients.

Inputs may be a single vector of shape ``(n_in,)`` or a batch ``(n, n_in)``.
Weights are stored as ``(n_in, n_out)`` so that a batch forward pass is
``x @ W + b``.  Parameter gradients of a batch are summed over rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MLPParams:
    """Weights and biases of a tanh MLP with an affine output layer."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    layer_sizes: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        sizes = [self.weights[0].shape[0]]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[0] != sizes[-1]:
                raise ValueError(f"weight shape {w.shape} does not chain from {sizes[-1]}")
            if b.shape != (w.shape[1],):
                raise ValueError(f"bias shape {b.shape} does not match weight {w.shape}")
            sizes.append(w.shape[1])
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in sizes))

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def unflatten(self, vec: np.ndarray) -> "MLPParams":
        """Return params of the same shapes filled from ``vec``."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got {vec.shape}")
        weights, biases, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            weights.append(vec[i:i + w.size].reshape(w.shape).copy())
            i += w.size
            biases.append(vec[i:i + b.size].copy())
            i += b.size
        return MLPParams(tuple(weights), tuple(biases))


@dataclass(frozen=True)
class GradientBundle:
    d_input: np.ndarray
    d_params: MLPParams


def init_mlp(layer_sizes, rng: np.random.Generator, out_scale: float = 0.0) -> MLPParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    The last weight matrix is multiplied by ``out_scale``; the default of 0
    makes the network output exactly zero at initialisation.
    """
    layer_sizes = [int(s) for s in layer_sizes]
    if len(layer_sizes) < 2 or min(layer_sizes) < 1:
        raise ValueError(f"invalid layer sizes {layer_sizes}")
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        s = 1.0 / np.sqrt(n_in)
        w = rng.uniform(-s, s, size=(n_in, n_out))
        if k == len(layer_sizes) - 2:
            w = w * out_scale
        weights.append(w)
        biases.append(np.zeros(n_out))
    return MLPParams(tuple(weights), tuple(biases))


def _check_input(params: MLPParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != params.n_in:
        raise ValueError(f"input of shape {x.shape} does not match n_in={params.n_in}")
    return x


def _forward_trace(params: MLPParams, x: np.ndarray):
    # activations[k] is the input to layer k; the last entry is the output
    activations = [x]
    h = x
    n_layers = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if k < n_layers - 1:
            h = np.tanh(h)
        activations.append(h)
    return activations


def mlp_forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    x = _check_input(params, x)
    return _forward_trace(params, x)[-1]


def mlp_backward(params: MLPParams, x: np.ndarray, upstream: np.ndarray) -> GradientBundle:
    """Gradients of ``sum(upstream * mlp_forward(params, x))``.

    ``d_input`` has the shape of ``x``; parameter gradients are summed over
    the batch when ``x`` is two-dimensional.
    """
    x = _check_input(params, x)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != x.shape[:-1] + (params.n_out,):
        raise ValueError(
            f"upstream shape {upstream.shape} does not match output "
            f"{x.shape[:-1] + (params.n_out,)}")
    acts = _forward_trace(params, x)
    n_layers = len(params.weights)
    d_w = [None] * n_layers
    d_b = [None] * n_layers
    g = upstream
    for k in range(n_layers - 1, -1, -1):
        if k < n_layers - 1:
            # acts[k + 1] = tanh(pre-activation)
            g = g * (1.0 - acts[k + 1] ** 2)
        a_in = acts[k]
        if a_in.ndim == 1:
            d_w[k] = np.outer(a_in, g)
            d_b[k] = g.copy()
        else:
            d_w[k] = a_in.T @ g
            d_b[k] = g.sum(axis=0)
        g = g @ params.weights[k].T
    return GradientBundle(d_input=g, d_params=MLPParams(tuple(d_w), tuple(d_b)))
