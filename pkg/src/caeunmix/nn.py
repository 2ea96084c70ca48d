"""Small layer library with hand-written forward and backward passes.

All tensors are float64 numpy arrays. Spatial tensors are channel-last,
indexed ``[row, col, channel]``, and carry a single sample (no batch axis).
Layers cache what they need during ``forward`` and add parameter gradients
into ``Param.grad`` during ``backward``; callers zero gradients explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError, ShapeError

KERNEL = 3
POOL = 2


@dataclass
class Param:
    """A trainable array together with its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


# ---------------------------------------------------------------------------
# Functional ops
# ---------------------------------------------------------------------------


def _patches(x):
    """Return the zero-padded 3x3 neighbourhoods of ``x`` as ``(H, W, 3, 3, C)``."""
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(0, 1))  # H, W, C, 3, 3
    return win.transpose(0, 1, 3, 4, 2)


def conv2d_forward(x, kernels, bias):
    """3x3 'same' convolution, stride 1.

    ``x`` is ``H x W x Cin``, ``kernels`` is ``3 x 3 x Cin x Cout`` and
    ``bias`` has length ``Cout``. Positions outside the image read as zero.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects an H x W x C input, got shape {x.shape}")
    if kernels.ndim != 4 or kernels.shape[:2] != (KERNEL, KERNEL):
        raise ShapeError(f"conv2d kernels must be 3 x 3 x Cin x Cout, got {kernels.shape}")
    if kernels.shape[2] != x.shape[2]:
        raise ShapeError(
            f"input has {x.shape[2]} channels but kernels expect {kernels.shape[2]}"
        )
    cout = kernels.shape[3]
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    h, w, _ = x.shape
    cols = _patches(x).reshape(h * w, -1)
    out = cols @ kernels.reshape(-1, cout) + bias
    return out.reshape(h, w, cout)


def conv2d_backward(grad_out, x, kernels):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernels and bias."""
    h, w, cin = x.shape
    cout = kernels.shape[3]
    g = grad_out.reshape(h * w, cout)
    cols = _patches(x).reshape(h * w, -1)
    d_kernels = (cols.T @ g).reshape(kernels.shape)
    d_bias = g.sum(axis=0)
    dxp = np.zeros((h + 2, w + 2, cin))
    for u in range(KERNEL):
        for v in range(KERNEL):
            dxp[u:u + h, v:v + w, :] += grad_out @ kernels[u, v].T
    return dxp[1:-1, 1:-1, :], d_kernels, d_bias


def maxpool2d_forward(x):
    """2x2 max pooling with stride 2; a trailing odd row/column is dropped.

    Returns the pooled tensor and an argmax map holding, for every output
    cell, the flat position (0..3, row-major) of the winner in its window.
    """
    if x.ndim != 3:
        raise ShapeError(f"maxpool expects an H x W x C input, got shape {x.shape}")
    h, w, c = x.shape
    if h < POOL or w < POOL:
        raise ShapeError(f"maxpool needs H, W >= 2, got {h} x {w}")
    ho, wo = h // POOL, w // POOL
    blocks = x[: ho * POOL, : wo * POOL].reshape(ho, POOL, wo, POOL, c)
    blocks = blocks.transpose(0, 2, 4, 1, 3).reshape(ho, wo, c, POOL * POOL)
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool2d_backward(grad_out, argmax, in_shape):
    """Route each upstream gradient to the single input that won its window."""
    h, w, c = in_shape
    ho, wo, _ = grad_out.shape
    blocks = np.zeros((ho, wo, c, POOL * POOL))
    np.put_along_axis(blocks, argmax[..., None], grad_out[..., None], axis=-1)
    blocks = blocks.reshape(ho, wo, c, POOL, POOL).transpose(0, 3, 1, 4, 2)
    dx = np.zeros((h, w, c))
    dx[: ho * POOL, : wo * POOL] = blocks.reshape(ho * POOL, wo * POOL, c)
    return dx


def dense_forward(x, weights, bias=None):
    if x.ndim != 1 or weights.ndim != 2 or weights.shape[1] != x.shape[0]:
        raise ShapeError(
            f"dense weights {weights.shape} cannot be applied to input {x.shape}"
        )
    out = weights @ x
    if bias is not None:
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} does not match {weights.shape[0]} units")
        out = out + bias
    return out


def dense_backward(grad_out, x, weights):
    """Return ``(dx, dW, db)`` for ``out = W x + b``."""
    return weights.T @ grad_out, np.outer(grad_out, x), grad_out.copy()


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    # subgradient at exactly zero is zero
    return grad_out * (x > 0.0)


def dropout_forward(x, rate, rng, training):
    """Inverted dropout.

    Returns ``(out, mask)`` where ``mask`` already includes the ``1/(1-rate)``
    survivor scale, so the backward pass is ``grad * mask``. In eval mode, or
    with ``rate == 0``, the mask is all ones and ``out`` equals ``x``.
    """
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x.copy(), np.ones_like(x)
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def flatten(x):
    return x.reshape(-1).copy()


# ---------------------------------------------------------------------------
# Layer objects
# ---------------------------------------------------------------------------


class Layer:
    """Base layer: stateless by default, no parameters."""

    name = "layer"

    def __init__(self, name=None):
        if name is not None:
            self.name = name
        self.params: list[Param] = []

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class Conv2D(Layer):
    name = "conv"

    def __init__(self, kernels, bias, name=None):
        super().__init__(name)
        self.kernels = Param(f"{self.name}.kernels", kernels)
        self.bias = Param(f"{self.name}.bias", bias)
        self.params = [self.kernels, self.bias]

    @property
    def out_channels(self):
        return self.kernels.value.shape[3]

    def forward(self, x, training=False):
        self._x = x
        return conv2d_forward(x, self.kernels.value, self.bias.value)

    def backward(self, grad):
        dx, dk, db = conv2d_backward(grad, self._x, self.kernels.value)
        self.kernels.grad += dk
        self.bias.grad += db
        return dx


class MaxPool2D(Layer):
    name = "pool"

    def forward(self, x, training=False):
        self._shape = x.shape
        out, self._argmax = maxpool2d_forward(x)
        return out

    def backward(self, grad):
        return maxpool2d_backward(grad, self._argmax, self._shape)


class Dense(Layer):
    """Fully connected layer, ``out = W x (+ b)`` with ``W`` of shape ``q x p``."""

    name = "dense"

    def __init__(self, weights, bias=None, name=None):
        super().__init__(name)
        self.weights = Param(f"{self.name}.weights", weights)
        self.params = [self.weights]
        self.bias = None
        if bias is not None:
            self.bias = Param(f"{self.name}.bias", bias)
            self.params.append(self.bias)

    @property
    def units(self):
        return self.weights.value.shape[0]

    def forward(self, x, training=False):
        self._x = x
        return dense_forward(x, self.weights.value, None if self.bias is None else self.bias.value)

    def backward(self, grad):
        dx, dw, db = dense_backward(grad, self._x, self.weights.value)
        self.weights.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class ReLU(Layer):
    name = "relu"

    def forward(self, x, training=False):
        self._x = x
        return relu_forward(x)

    def backward(self, grad):
        return relu_backward(grad, self._x)


class Dropout(Layer):
    name = "dropout"

    def __init__(self, rate, rng, name=None):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def forward(self, x, training=False):
        out, self._mask = dropout_forward(x, self.rate, self.rng, training)
        return out

    def backward(self, grad):
        return grad * self._mask


class Standardize(Layer):
    """Fixed affine input map ``(x - mean) / scale``; holds buffers, not parameters."""

    name = "standardize"

    def __init__(self, mean, scale=1.0, name=None):
        super().__init__(name)
        self.mean = np.array(mean, dtype=np.float64)
        self.scale = np.array([scale], dtype=np.float64).reshape(1)

    def forward(self, x, training=False):
        return (x - self.mean) / self.scale[0]

    def backward(self, grad):
        return grad / self.scale[0]


class Flatten(Layer):
    name = "flatten"

    def forward(self, x, training=False):
        self._shape = x.shape
        return flatten(x)

    def backward(self, grad):
        return grad.reshape(self._shape)


def forward_stack(layers, x, training=False):
    for layer in layers:
        x = layer.forward(x, training)
    return x


def backward_stack(layers, grad):
    for layer in reversed(layers):
        grad = layer.backward(grad)
    return grad


def parameters(layers):
    return [p for layer in layers for p in layer.params]


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def _loss_head(kind, target):
    if kind == "sum":
        return lambda y: float(np.sum(y)), lambda y: np.ones_like(y)
    if kind == "mse":
        def value(y):
            t = np.zeros_like(y) if target is None else target
            return float(np.mean((y - t) ** 2))

        def grad(y):
            t = np.zeros_like(y) if target is None else target
            return 2.0 * (y - t) / y.size

        return value, grad
    raise ParameterError(f"unknown loss head {kind!r}; use 'sum' or 'mse'")


def _rel_err(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def gradient_errors(layers, x, step=1e-5, loss="sum", target=None, training=False):
    """Compare analytic gradients with central differences.

    Returns a dict mapping each parameter name (and ``"input"``) to the
    maximum relative error over its elements. Random state of any dropout
    layer is rewound before every evaluation so all passes share one mask.
    """
    if step <= 0:
        raise ParameterError("finite-difference step must be positive")
    value, dvalue = _loss_head(loss, target)
    rngs = [layer.rng for layer in layers if getattr(layer, "rng", None) is not None]
    states = [g.bit_generator.state for g in rngs]

    def run(inp):
        for g, s in zip(rngs, states):
            g.bit_generator.state = s
        return forward_stack(layers, inp, training)

    def f(inp):
        return value(run(inp))

    x = np.array(x, dtype=np.float64)
    for layer in layers:
        layer.zero_grad()
    dx = backward_stack(layers, dvalue(run(x)))

    errors = {}
    for p in parameters(layers):
        analytic = p.grad.copy()
        numeric = np.empty_like(analytic)
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = f(x)
            flat[i] = old - step
            fm = f(x)
            flat[i] = old
            numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
        errors[p.name] = float(_rel_err(analytic, numeric).max())

    numeric = np.empty_like(x)
    xf = x.reshape(-1)
    for i in range(xf.size):
        old = xf[i]
        xf[i] = old + step
        fp = f(x)
        xf[i] = old - step
        fm = f(x)
        xf[i] = old
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * step)
    errors["input"] = float(_rel_err(dx, numeric).max())
    return errors


def grad_check(layers, x, step=1e-5, loss="sum", target=None, training=False):
    """Maximum relative gradient error over every parameter and input element."""
    return max(gradient_errors(layers, x, step, loss, target, training).values())
