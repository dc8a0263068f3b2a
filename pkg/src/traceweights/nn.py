"""Minimal neural-network engine on numpy.

Float64 throughout.  Layers cache what their backward pass needs, so the
usage pattern is forward -> backward -> read ``grad_params``.  There is no
autodiff: each layer kind carries a hand-written backward, checked against
central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "relu",
    "relu_grad",
    "sigmoid",
    "sigmoid_grad",
    "softmax",
    "mse_loss",
    "cross_entropy_from_probs",
    "dropout_apply",
    "Adam",
    "Dense",
    "Conv1D",
    "ConvTranspose1D",
    "ReLU",
    "Dropout",
    "Flatten",
    "ReshapeToSignal",
    "ReshapeToMatrix",
]


def relu(x):
    """Elementwise max(x, 0)."""
    return np.maximum(x, 0.0)


def relu_grad(x):
    """Derivative of relu wrt its input (0 at the kink)."""
    return (x > 0.0).astype(np.float64)


def sigmoid(x):
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def softmax(x):
    """Row-wise softmax of a (n, c) array."""
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def mse_loss(pred, target):
    """Mean over the batch of the squared L2 distance per sample.

    Returns (loss, dloss/dpred).  Entries beyond the first axis are
    summed, so a (n, r, c) prediction contributes the full Frobenius
    square per sample.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    n = pred.shape[0]
    diff = pred - target
    loss = float(np.sum(diff * diff) / n)
    return loss, (2.0 / n) * diff


def cross_entropy_from_probs(probs, labels):
    """Mean negative log-likelihood of integer labels under row probs.

    ``probs`` is (n, c); for a single-unit sigmoid head pass the
    two-column form [1-p, p].  Probabilities are floored at 1e-12.
    """
    n = probs.shape[0]
    p = np.clip(probs[np.arange(n), labels], 1e-12, None)
    return float(-np.mean(np.log(p)))


def dropout_apply(x, rate, rng):
    """Inverted dropout: zero with probability ``rate``, rescale the rest.

    rate == 0 is an exact identity and consumes no randomness.
    """
    if rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    mask = rng.random(x.shape) >= rate
    return x * mask / (1.0 - rate)


class Adam:
    """Adam optimizer over a list of parameter arrays, updated in place.

    Standard bias-corrected form: p -= lr * m_hat / (sqrt(v_hat) + eps).
    ``lr`` is a plain attribute so schedules can mutate it between steps.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _uniform_fan_in(rng, fan_in, shape):
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """Affine layer: (n, fan_in) -> (n, fan_out)."""

    def __init__(self, fan_in, fan_out, rng):
        self.w = _uniform_fan_in(rng, fan_in, (fan_in, fan_out))
        self.b = _uniform_fan_in(rng, fan_in, (fan_out,))
        self.params = [self.w, self.b]
        self.grad_params = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout):
        self.grad_params[0][...] = self._x.T @ dout
        self.grad_params[1][...] = dout.sum(axis=0)
        return dout @ self.w.T


class Conv1D:
    """Valid (no padding) 1-d convolution: (n, c_in, l) -> (n, c_out, l_out).

    l_out = (l - kernel) // stride + 1.  Weights are (c_out, c_in, kernel).
    """

    def __init__(self, c_in, c_out, kernel, rng, stride=1):
        if kernel < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        self.kernel = kernel
        self.stride = stride
        fan_in = c_in * kernel
        self.w = _uniform_fan_in(rng, fan_in, (c_out, c_in, kernel))
        self.b = _uniform_fan_in(rng, fan_in, (c_out,))
        self.params = [self.w, self.b]
        self.grad_params = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._win = None
        self._in_len = None

    @staticmethod
    def out_len(l, kernel, stride=1):
        if l < kernel:
            raise ValueError(f"input length {l} shorter than kernel {kernel}")
        return (l - kernel) // stride + 1

    def forward(self, x, train=False, rng=None):
        self._in_len = x.shape[2]
        win = sliding_window_view(x, self.kernel, axis=2)[:, :, :: self.stride, :]
        self._win = win
        out = np.einsum("nclk,ock->nol", win, self.w, optimize=True)
        return out + self.b[None, :, None]

    def backward(self, dout):
        self.grad_params[0][...] = np.einsum(
            "nclk,nol->ock", self._win, dout, optimize=True
        )
        self.grad_params[1][...] = dout.sum(axis=(0, 2))
        n, _, l_out = dout.shape
        c_in = self.w.shape[1]
        dx = np.zeros((n, c_in, self._in_len), dtype=np.float64)
        # one scatter per kernel tap keeps this a handful of GEMMs
        for k in range(self.kernel):
            contrib = np.einsum("nol,oc->ncl", dout, self.w[:, :, k], optimize=True)
            dx[:, :, k : k + l_out * self.stride : self.stride] += contrib
        return dx


class ConvTranspose1D:
    """Transposed 1-d convolution: (n, c_in, l) -> (n, c_out, l_out).

    l_out = (l - 1) * stride + kernel.  Weights are (c_in, c_out, kernel).
    The forward pass is the adjoint of Conv1D's forward, so every input
    position spreads across ``kernel`` output positions.
    """

    def __init__(self, c_in, c_out, kernel, rng, stride=1):
        if kernel < 1 or stride < 1:
            raise ValueError("kernel and stride must be >= 1")
        self.kernel = kernel
        self.stride = stride
        fan_in = c_in * kernel
        self.w = _uniform_fan_in(rng, fan_in, (c_in, c_out, kernel))
        self.b = _uniform_fan_in(rng, fan_in, (c_out,))
        self.params = [self.w, self.b]
        self.grad_params = [np.zeros_like(self.w), np.zeros_like(self.b)]
        self._x = None

    @staticmethod
    def out_len(l, kernel, stride=1):
        return (l - 1) * stride + kernel

    def forward(self, x, train=False, rng=None):
        self._x = x
        n, _, l = x.shape
        c_out = self.w.shape[1]
        l_out = self.out_len(l, self.kernel, self.stride)
        out = np.zeros((n, c_out, l_out), dtype=np.float64)
        for k in range(self.kernel):
            contrib = np.einsum("ncl,co->nol", x, self.w[:, :, k], optimize=True)
            out[:, :, k : k + l * self.stride : self.stride] += contrib
        return out + self.b[None, :, None]

    def backward(self, dout):
        x = self._x
        l = x.shape[2]
        dx = np.zeros_like(x)
        dw = self.grad_params[0]
        dw[...] = 0.0
        for k in range(self.kernel):
            sl = dout[:, :, k : k + l * self.stride : self.stride]
            dw[:, :, k] = np.einsum("ncl,nol->co", x, sl, optimize=True)
            dx += np.einsum("nol,co->ncl", sl, self.w[:, :, k], optimize=True)
        self.grad_params[1][...] = dout.sum(axis=(0, 2))
        return dx


class ReLU:
    params: list = []
    grad_params: list = []

    def __init__(self):
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return relu(x)

    def backward(self, dout):
        return dout * relu_grad(self._x)


class Dropout:
    """Inverted dropout layer; identity when not training."""

    params: list = []
    grad_params: list = []

    def __init__(self, rate):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class Flatten:
    params: list = []
    grad_params: list = []

    def __init__(self):
        self._shape = None

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class ReshapeToSignal:
    """(n, f) -> (n, channels, f // channels)."""

    params: list = []
    grad_params: list = []

    def __init__(self, channels=1):
        self.channels = channels

    def forward(self, x, train=False, rng=None):
        n, f = x.shape
        return x.reshape(n, self.channels, f // self.channels)

    def backward(self, dout):
        return dout.reshape(dout.shape[0], -1)


class ReshapeToMatrix:
    """(n, rows * cols) -> (n, rows, cols)."""

    params: list = []
    grad_params: list = []

    def __init__(self, rows, cols):
        self.rows = rows
        self.cols = cols

    def forward(self, x, train=False, rng=None):
        return x.reshape(x.shape[0], self.rows, self.cols)

    def backward(self, dout):
        return dout.reshape(dout.shape[0], self.rows * self.cols)
