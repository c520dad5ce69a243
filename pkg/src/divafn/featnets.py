"""Small feedforward feature networks with hand-written backpropagation.

A network maps a ``p x n`` feature matrix to a ``d x n`` representation
matrix, one column per sample. Layers compute ``act(W @ x + b)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # out x in
    bias: np.ndarray    # out
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ContractError(
                f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")


@dataclass(frozen=True)
class NetworkParams:
    layers: tuple[Layer, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ContractError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise ContractError(
                    f"layer dims do not chain: {prev.weight.shape} then {nxt.weight.shape}")
        if layers[-1].activation != "identity":
            raise ContractError("the output layer must use the identity activation")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self):
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[0]

    @property
    def dims(self):
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    @property
    def activations(self):
        return [layer.activation for layer in self.layers]


def init_params(layer_dims, activations, seed):
    """He-style init: ``W ~ N(0, 1/fan_in)``, zero biases.

    ``layer_dims`` lists input width then each layer's output width, so a
    two-layer net is ``[p, hidden, d]`` with two activation tags.
    """
    layer_dims = [int(v) for v in layer_dims]
    if len(layer_dims) < 2 or len(activations) != len(layer_dims) - 1:
        raise ContractError("need len(activations) == len(layer_dims) - 1 >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out, act in zip(layer_dims, layer_dims[1:], activations):
        W = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        layers.append(Layer(W, np.zeros(fan_out), act))
    return NetworkParams(tuple(layers))


def _check_input(params, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != params.input_dim:
        raise ContractError(
            f"network expects {params.input_dim} input rows, got shape {X.shape}")
    return X


def _forward_cached(params, X):
    acts = [X]
    pre = []
    h = X
    for layer in params.layers:
        z = layer.weight @ h + layer.bias[:, None]
        pre.append(z)
        h = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(h)
    return acts, pre


def forward(params, X):
    """Representations for the columns of ``X`` (``d x n``)."""
    X = _check_input(params, X)
    return _forward_cached(params, X)[0][-1]


def gradients(params, X, output_grad):
    """Per-layer ``(dW, db)`` for a loss whose gradient w.r.t. the output is ``output_grad``.

    Contributions are summed over the columns of the batch.
    """
    X = _check_input(params, X)
    delta = np.asarray(output_grad, dtype=np.float64)
    if delta.shape != (params.output_dim, X.shape[1]):
        raise ContractError(
            f"output_grad must be {params.output_dim}x{X.shape[1]}, got {delta.shape}")
    acts, pre = _forward_cached(params, X)
    grads = [None] * len(params.layers)
    for idx in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[idx]
        if layer.activation == "relu":
            # subgradient at exactly zero is taken as 0
            delta = delta * (pre[idx] > 0)
        grads[idx] = (delta @ acts[idx].T, delta.sum(axis=1))
        if idx:
            delta = layer.weight.T @ delta
    return grads


def backward_update(params, X, output_grad, lr):
    """One SGD step ``theta <- theta - lr * dJ/dtheta``; returns new params."""
    if not lr >= 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    grads = gradients(params, X, output_grad)
    layers = tuple(
        Layer(layer.weight - lr * gW, layer.bias - lr * gb, layer.activation)
        for layer, (gW, gb) in zip(params.layers, grads))
    return NetworkParams(layers)


def flatten(params):
    """All parameters as one vector (weights then bias, layer by layer)."""
    return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in params.layers])


def unflatten(params, theta):
    """Inverse of :func:`flatten` using ``params`` as the shape template."""
    theta = np.asarray(theta, dtype=np.float64)
    expected = sum(l.weight.size + l.bias.size for l in params.layers)
    if theta.shape != (expected,):
        raise ContractError(f"parameter vector has shape {theta.shape}, expected ({expected},)")
    layers, pos = [], 0
    for l in params.layers:
        nw = l.weight.size
        W = theta[pos:pos + nw].reshape(l.weight.shape)
        pos += nw
        b = theta[pos:pos + l.bias.size].copy()
        pos += l.bias.size
        layers.append(Layer(W.copy(), b, l.activation))
    return NetworkParams(tuple(layers))
