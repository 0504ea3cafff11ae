"""Dense-layer and vanilla-RNN building blocks with explicit backprop.

Everything runs in float64. Gradients are exact analytic derivatives;
`grad_check` verifies any (value, grads) closure against central finite
differences, which is the oracle used throughout the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def _relu(z):
    return np.maximum(z, 0.0)


def _drelu(z):
    return (z > 0.0).astype(float)


def _dtanh(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _dsigmoid(z):
    s = sigmoid(z)
    return s * (1.0 - s)


def _identity(z):
    return z


def _didentity(z):
    return np.ones_like(z)


# activation -> (forward, derivative w.r.t. pre-activation)
ACTIVATIONS = {
    "relu": (_relu, _drelu),
    "tanh": (np.tanh, _dtanh),
    "sigmoid": (sigmoid, _dsigmoid),
    "identity": (_identity, _didentity),
}


@dataclass
class DenseLayer:
    """Affine map plus pointwise activation. weight is (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weight.ndim != 2:
            raise ValueError("weight must be 2-D (out, in)")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias length {self.bias.shape} does not match weight rows "
                f"{self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self):
        return self.weight.shape[1]

    @property
    def n_out(self):
        return self.weight.shape[0]

    def params(self):
        return [self.weight, self.bias]


@dataclass
class RnnCell:
    """Vanilla tanh recurrence: h_t = tanh(w_in x_t + w_hid h_{t-1} + bias)."""

    w_in: np.ndarray
    w_hid: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.w_in = np.asarray(self.w_in, dtype=float)
        self.w_hid = np.asarray(self.w_hid, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        h = self.w_in.shape[0]
        if self.w_hid.shape != (h, h):
            raise ValueError("w_hid must be square (H, H) matching w_in rows")
        if self.bias.shape != (h,):
            raise ValueError("bias length must equal hidden size")

    @property
    def n_in(self):
        return self.w_in.shape[1]

    @property
    def n_hidden(self):
        return self.w_in.shape[0]

    def params(self):
        return [self.w_in, self.w_hid, self.bias]


def glorot_uniform(n_in, n_out, rng):
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


def init_dense(n_in, n_out, rng, activation="identity"):
    return DenseLayer(glorot_uniform(n_in, n_out, rng), np.zeros(n_out), activation)


def init_rnn(n_in, n_hidden, rng):
    return RnnCell(
        glorot_uniform(n_in, n_hidden, rng),
        glorot_uniform(n_hidden, n_hidden, rng),
        np.zeros(n_hidden),
    )


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim == 2:
        return x, False
    raise ValueError("expected a vector or a (n, dim) batch")


def mlp_apply(layers, x):
    """Apply a stack of DenseLayers to a vector or a batch of row vectors."""
    out, squeeze = _as_batch(x)
    for i, layer in enumerate(layers):
        if out.shape[1] != layer.n_in:
            raise ValueError(
                f"layer {i}: input width {out.shape[1]} != expected {layer.n_in}"
            )
        fwd, _ = ACTIVATIONS[layer.activation]
        out = fwd(out @ layer.weight.T + layer.bias)
    return out[0] if squeeze else out


def mlp_backward(layers, x, upstream_gradient):
    """Exact gradients of the composed MLP.

    Returns ([(dW, db) per layer], gradient w.r.t. the input). For a batch,
    parameter gradients are summed over rows.
    """
    inp, squeeze = _as_batch(x)
    inputs = [inp]
    zs = []
    for i, layer in enumerate(layers):
        if inputs[-1].shape[1] != layer.n_in:
            raise ValueError(
                f"layer {i}: input width {inputs[-1].shape[1]} != expected {layer.n_in}"
            )
        fwd, _ = ACTIVATIONS[layer.activation]
        z = inputs[-1] @ layer.weight.T + layer.bias
        zs.append(z)
        inputs.append(fwd(z))

    g, _ = _as_batch(upstream_gradient)
    if g.shape != inputs[-1].shape:
        raise ValueError(
            f"upstream gradient shape {g.shape} != output shape {inputs[-1].shape}"
        )
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        _, dact = ACTIVATIONS[layers[i].activation]
        dz = g * dact(zs[i])
        grads[i] = (dz.T @ inputs[i], dz.sum(axis=0))
        g = dz @ layers[i].weight
    return grads, (g[0] if squeeze else g)


def rnn_forward(cell, inputs, h0):
    """Unroll the tanh RNN over a (T, I) sequence; returns all (T, H) states."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("inputs must be a non-empty (T, I) sequence")
    if inputs.shape[1] != cell.n_in:
        raise ValueError(
            f"input width {inputs.shape[1]} != expected {cell.n_in}"
        )
    h = np.asarray(h0, dtype=float)
    if h.shape != (cell.n_hidden,):
        raise ValueError("h0 length must equal hidden size")
    out = np.empty((inputs.shape[0], cell.n_hidden))
    for t in range(inputs.shape[0]):
        h = np.tanh(inputs[t] @ cell.w_in.T + h @ cell.w_hid.T + cell.bias)
        out[t] = h
    return out


def rnn_backward(cell, inputs, h0, hidden_states, upstream):
    """Backprop through time.

    upstream holds dL/dh_t for every step (zeros where the loss does not read
    the state). Returns ((dw_in, dw_hid, dbias), dinputs, dh0).
    """
    inputs = np.asarray(inputs, dtype=float)
    h0 = np.asarray(h0, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != hidden_states.shape:
        raise ValueError("upstream shape must match hidden_states shape")
    n_steps = inputs.shape[0]
    dw_in = np.zeros_like(cell.w_in)
    dw_hid = np.zeros_like(cell.w_hid)
    dbias = np.zeros_like(cell.bias)
    dinputs = np.empty_like(inputs)
    carry = np.zeros(cell.n_hidden)
    for t in range(n_steps - 1, -1, -1):
        dh = upstream[t] + carry
        dz = dh * (1.0 - hidden_states[t] ** 2)
        prev = hidden_states[t - 1] if t > 0 else h0
        dw_in += np.outer(dz, inputs[t])
        dw_hid += np.outer(dz, prev)
        dbias += dz
        dinputs[t] = dz @ cell.w_in
        carry = dz @ cell.w_hid
    return (dw_in, dw_hid, dbias), dinputs, carry


def bce_loss(probability, label):
    """Binary cross entropy; returns (loss, gradient w.r.t. the logit)."""
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    p = min(max(float(probability), 1e-12), 1.0 - 1e-12)
    loss = -(label * math.log(p) + (1 - label) * math.log(1.0 - p))
    return loss, p - label


def softmax_xent(logits, label):
    """Stable softmax cross-entropy; returns (loss, gradients w.r.t. logits)."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 1:
        raise ValueError("logits must be a vector")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if not 0 <= label < logits.shape[0]:
        raise ValueError(f"label {label} out of range for {logits.shape[0]} logits")
    m = logits.max()
    lse = m + math.log(np.exp(logits - m).sum())
    loss = lse - logits[label]
    grad = np.exp(logits - lse)
    grad[label] -= 1.0
    return loss, grad


def softmax_xent_batch(logits, labels):
    """Mean cross-entropy over rows and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=int)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ValueError("one label per row required")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    m = logits.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    losses = lse[:, 0] - logits[rows, labels]
    grad = np.exp(logits - lse)
    grad[rows, labels] -= 1.0
    return losses.mean(), grad / n


class SgdMomentum:
    """SGD with momentum: v <- mu*v - lr*g; p <- p + v.

    Updates are applied in place so that parameter arrays shared between
    models stay shared. Velocity buffers persist across calls and are matched
    to the parameter list positionally.
    """

    def __init__(self, learning_rate=0.001, momentum=0.9):
        if learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = None

    def step(self, params, grads):
        if len(params) != len(grads):
            raise ValueError("params and grads must have equal length")
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        if len(self.velocity) != len(params):
            raise ValueError("parameter list changed length between steps")
        for p, g, v in zip(params, grads, self.velocity):
            g = np.asarray(g, dtype=float)
            if g.shape != p.shape or v.shape != p.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter {p.shape}"
                )
            v *= self.momentum
            v -= self.learning_rate * g
            p += v


def sgd_step(opt, params, grads):
    opt.step(params, grads)
    return params


def grad_check(function, params, epsilon=1e-5):
    """Max relative error between analytic gradients and central differences.

    `function(params)` must return (value, grads) with grads aligned to
    params. Parameters are perturbed in place and restored.
    """
    value, grads = function(params)
    if not np.isfinite(value):
        raise ValueError("function value is not finite")
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = np.asarray(g, dtype=float).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = function(params)
            flat[i] = orig - epsilon
            down, _ = function(params)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ValueError("function value is not finite at perturbed point")
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
