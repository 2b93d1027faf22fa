"""Operator network: MLP with ELU hidden layers and a linear output.

The network maps a low-dimensional parameter tuple to the free finite
element DOFs. Gradients with respect to the weights are computed by an
explicit reverse pass: the upstream DOF-space gradient is the assembled
element residual, so the chain rule dE/dtheta = (dE/du) (du/dtheta) needs
no general autodiff.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class CheckpointError(ValueError):
    """Checkpoint file is corrupt or inconsistent with its target."""


def elu(x):
    """x for x > 0, exp(x) - 1 otherwise; continuous with slope 1 at 0."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_prime(x):
    """Derivative of elu: 1 for x > 0, exp(x) otherwise."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass
class Mlp:
    """Weights (out, in) and biases (out,) per layer; ELU between layers,
    no activation on the output layer."""

    weights: list
    biases: list

    @property
    def layer_dims(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list:
        """Flat list [W1, b1, W2, b2, ...] referencing the live arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(layer_dims, rng: np.random.Generator) -> Mlp:
    """Glorot-uniform weights, zero biases; deterministic given the rng."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"need at least two positive layer dims, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights=weights, biases=biases)


def forward(mlp: Mlp, p: np.ndarray):
    """Network output and the activation cache needed by `backward`.

    `p` is one input (d,) or a batch (M, d); the output has matching
    leading shape with n_outputs trailing.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    a = p[None, :] if single else p
    if a.shape[1] != mlp.n_inputs:
        raise ValueError(f"expected {mlp.n_inputs} inputs, got {a.shape[1]}")
    inputs = [a]
    pre = []
    n_layers = len(mlp.weights)
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T + b
        pre.append(z)
        a = elu(z) if i < n_layers - 1 else z
        inputs.append(a)
    cache = {"inputs": inputs[:-1], "pre": pre, "single": single}
    out = inputs[-1]
    return (out[0], cache) if single else (out, cache)


def backward(mlp: Mlp, cache: dict, upstream: np.ndarray) -> list:
    """Exact gradient of sum_m upstream_m . forward(p_m) in theta.

    `upstream` matches the forward output shape. Returns gradients in
    `Mlp.parameters()` order.
    """
    g = np.asarray(upstream, dtype=float)
    if cache["single"]:
        g = g[None, :]
    delta = g
    grads_w = [None] * len(mlp.weights)
    grads_b = [None] * len(mlp.biases)
    for i in range(len(mlp.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ cache["inputs"][i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ mlp.weights[i]) * elu_prime(cache["pre"][i - 1])
    out = []
    for gw, gb in zip(grads_w, grads_b):
        out.extend((gw, gb))
    return out


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for Adam."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_mlp(cls, mlp: Mlp, **kwargs) -> "AdamState":
        params = mlp.parameters()
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kwargs)


def adam_step(state: AdamState, params: list, grads: list, lr: float) -> None:
    """One Adam update with bias correction, applied in place."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter/gradient/state lengths do not match")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g**2
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def save_checkpoint(mlp: Mlp, meta: dict, path) -> None:
    """Single JSON document; floats round-trip exactly via repr."""
    doc = {
        "meta": meta,
        "layer_dims": mlp.layer_dims,
        "weights": [w.ravel().tolist() for w in mlp.weights],
        "biases": [b.tolist() for b in mlp.biases],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path, expect_outputs: int | None = None):
    """Load (Mlp, meta); raises CheckpointError naming any bad field."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"not valid JSON: {exc}") from exc
    for key in ("meta", "layer_dims", "weights", "biases"):
        if key not in doc:
            raise CheckpointError(f"missing field {key!r}")
    dims = doc["layer_dims"]
    if len(doc["weights"]) != len(dims) - 1 or len(doc["biases"]) != len(dims) - 1:
        raise CheckpointError("weights/biases do not match layer_dims")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = np.asarray(doc["weights"][i], dtype=float)
        if w.size != fan_in * fan_out:
            raise CheckpointError(
                f"weights[{i}] has {w.size} entries, expected {fan_in * fan_out}"
            )
        weights.append(w.reshape(fan_out, fan_in))
        b = np.asarray(doc["biases"][i], dtype=float)
        if b.shape != (fan_out,):
            raise CheckpointError(f"biases[{i}] has shape {b.shape}, expected ({fan_out},)")
        biases.append(b)
    if expect_outputs is not None and dims[-1] != expect_outputs:
        raise CheckpointError(
            f"layer_dims output {dims[-1]} does not match expected free-DOF count "
            f"{expect_outputs}"
        )
    return Mlp(weights=weights, biases=biases), doc["meta"]
