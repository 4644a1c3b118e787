"""
Layers with explicit forward/backward passes, the softmax cross-entropy loss,
and SGD/Adam optimizers.

All layers operate on batched arrays: ``(N, C, L)`` for the convolutional
part of a network and ``(N, D)`` for dense layers (a dense layer flattens
whatever trailing dimensions it receives). Parameters are stored as float32
by default; pass ``dtype=np.float64`` (or call :meth:`Layer.astype`) to run
a layer in double precision, e.g. for finite-difference checks.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, NumericError, StateError

real_type = np.float32

# Numbering is part of the weight-file format.
KIND_TAGS = {
    "Conv1D": 1,
    "ReLU": 2,
    "MaxPool1D": 3,
    "BatchNorm1D": 4,
    "Dense": 5,
    "Dropout": 6,
    "Softmax": 7,
}


class Layer:
    kind = "Layer"

    def __init__(self, dtype=real_type):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample input shape."""
        return tuple(in_shape)

    def flops(self, in_shape: tuple) -> int:
        """Inference cost: MACs for conv/dense, one op per element otherwise."""
        return int(np.prod(in_shape))

    def extents(self) -> tuple:
        return ()

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def astype(self, dtype):
        self.dtype = np.dtype(dtype)
        for store in (self.params, self.grads, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)
        return self

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _require_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called before forward")
        return self._cache

    def __repr__(self):
        return f"{self.kind}{self.extents()}"


def _check_finite(x, who):
    if not np.isfinite(x).all():
        raise NumericError(f"{who}: non-finite input")


class Conv1D(Layer):
    kind = "Conv1D"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0,
                 rng=None, dtype=real_type):
        super().__init__(dtype)
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ConfigurationError(
                f"Conv1D extents must be positive: {in_channels, out_channels, kernel_size, stride, padding}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size
        rng = np.random.default_rng() if rng is None else rng
        bound = np.sqrt(6.0 / fan_in)
        self.params["weight"] = rng.uniform(-bound, bound, (out_channels, in_channels, kernel_size)).astype(dtype)
        self.params["bias"] = np.zeros(out_channels, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def output_length(self, length):
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1

    def output_shape(self, in_shape):
        c, length = in_shape
        if c != self.in_channels:
            raise ConfigurationError(f"Conv1D expects {self.in_channels} channels, got {c}")
        out = self.output_length(length)
        if out < 1:
            raise ConfigurationError(f"Conv1D{self.extents()}: input length {length} too short")
        return (self.out_channels, out)

    def flops(self, in_shape):
        c_out, l_out = self.output_shape(in_shape)
        return c_out * l_out * self.in_channels * self.kernel_size

    def extents(self):
        return (self.in_channels, self.out_channels, self.kernel_size, self.stride, self.padding)

    def _columns(self, x):
        """(N, C*K, Lout) patches, ordered channel-major to match ``weight.reshape(C_out, -1)``."""
        p, k, s = self.padding, self.kernel_size, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p))) if p else x
        l_out = (xp.shape[2] - k) // s + 1
        stop = s * (l_out - 1) + 1
        cols = np.stack([xp[:, :, j:j + stop:s] for j in range(k)], axis=2)
        return cols.reshape(x.shape[0], self.in_channels * k, l_out), l_out, xp.shape[2]

    def forward(self, x, train=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ConfigurationError(f"Conv1D expects (N, {self.in_channels}, L), got {x.shape}")
        self.output_shape(x.shape[1:])
        _check_finite(x, "Conv1D")
        cols, l_out, lp = self._columns(x)
        out = np.matmul(self.params["weight"].reshape(self.out_channels, -1), cols)
        out += self.params["bias"][:, None]
        self._cache = (cols, l_out, lp)
        return out

    def backward(self, grad_out):
        cols, l_out, lp = self._require_cache()
        n = cols.shape[0]
        if grad_out.shape != (n, self.out_channels, l_out):
            raise ConfigurationError(f"Conv1D grad shape {grad_out.shape} != {(n, self.out_channels, l_out)}")
        w = self.params["weight"]
        self.grads["weight"] += np.matmul(grad_out, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        self.grads["bias"] += grad_out.sum(axis=(0, 2))
        w_t = np.ascontiguousarray(w.reshape(self.out_channels, -1).T)
        dcols = np.matmul(w_t, grad_out).reshape(n, self.in_channels, self.kernel_size, l_out)
        dxp = np.zeros((n, self.in_channels, lp), dtype=dcols.dtype)
        s = self.stride
        stop = s * (l_out - 1) + 1
        for k in range(self.kernel_size):
            dxp[:, :, k:k + stop:s] += dcols[:, :, k, :]
        p = self.padding
        return dxp[:, :, p:lp - p] if p else dxp


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, train=False):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad_out):
        return grad_out * self._require_cache()


class MaxPool1D(Layer):
    kind = "MaxPool1D"

    def __init__(self, window, stride=None, dtype=real_type):
        super().__init__(dtype)
        stride = window if stride is None else stride
        if window < 1 or stride < 1:
            raise ConfigurationError(f"MaxPool1D extents must be positive: {window, stride}")
        self.window = window
        self.stride = stride

    def output_shape(self, in_shape):
        c, length = in_shape
        if length < self.window:
            raise ConfigurationError(f"MaxPool1D window {self.window} exceeds length {length}")
        return (c, (length - self.window) // self.stride + 1)

    def extents(self):
        return (self.window, self.stride)

    def forward(self, x, train=False):
        c, l_out = self.output_shape(x.shape[1:])
        stop = self.stride * (l_out - 1) + 1
        out = x[:, :, 0:stop:self.stride].copy()
        idx = np.zeros(out.shape, dtype=np.int8 if self.window < 128 else np.int64)
        for k in range(1, self.window):
            cand = x[:, :, k:k + stop:self.stride]
            # strict comparison keeps the lowest index on ties
            better = cand > out
            np.maximum(out, cand, out=out)
            idx *= ~better
            idx += better * idx.dtype.type(k)
        self._cache = (idx, x.shape)
        return out

    def backward(self, grad_out):
        idx, shape = self._require_cache()
        dx = np.zeros(shape, dtype=grad_out.dtype)
        stop = self.stride * (idx.shape[2] - 1) + 1
        for k in range(self.window):
            dx[:, :, k:k + stop:self.stride] += grad_out * (idx == k)
        return dx


class BatchNorm1D(Layer):
    """Per-channel normalization over the batch and length axes."""

    kind = "BatchNorm1D"

    def __init__(self, channels, momentum=0.1, epsilon=1e-5, dtype=real_type):
        super().__init__(dtype)
        if channels < 1 or epsilon <= 0 or not 0 <= momentum <= 1:
            raise ConfigurationError(f"bad BatchNorm1D settings {channels, momentum, epsilon}")
        self.channels = channels
        self.momentum = float(np.float32(momentum))
        self.epsilon = float(np.float32(epsilon))
        self.params["gamma"] = np.ones(channels, dtype)
        self.params["beta"] = np.zeros(channels, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.buffers["running_mean"] = np.zeros(channels, dtype)
        self.buffers["running_var"] = np.ones(channels, dtype)

    def output_shape(self, in_shape):
        if in_shape[0] != self.channels:
            raise ConfigurationError(f"BatchNorm1D expects {self.channels} channels, got {in_shape[0]}")
        return tuple(in_shape)

    def extents(self):
        return (self.channels,)

    def forward(self, x, train=False):
        self.output_shape(x.shape[1:])
        if train:
            mean = x.mean(axis=(0, 2), dtype=np.float64)
            centered = x - mean[:, None].astype(x.dtype)
            var = np.mean(np.square(centered), axis=(0, 2), dtype=np.float64)
            n = x.shape[0] * x.shape[2]
            unbiased = var * n / (n - 1) if n > 1 else var
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            rm[...] = (1 - m) * rm + m * mean
            rv[...] = (1 - m) * rv + m * unbiased
        else:
            var = self.buffers["running_var"].astype(np.float64)
            centered = x - self.buffers["running_mean"][:, None].astype(x.dtype)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = centered * inv_std[:, None].astype(x.dtype)
        self._cache = (x_hat, inv_std, train)
        return x_hat * self.params["gamma"][:, None] + self.params["beta"][:, None]

    def backward(self, grad_out):
        x_hat, inv_std, train = self._require_cache()
        gx = grad_out * x_hat
        sum_g = grad_out.sum(axis=(0, 2), dtype=np.float64)
        sum_gx = gx.sum(axis=(0, 2), dtype=np.float64)
        self.grads["gamma"] += sum_gx.astype(self.dtype)
        self.grads["beta"] += sum_g.astype(self.dtype)
        gamma = self.params["gamma"].astype(np.float64)
        dt = grad_out.dtype
        if not train:
            return grad_out * (gamma * inv_std).astype(dt)[:, None]
        n = grad_out.shape[0] * grad_out.shape[2]
        # dx = gamma*inv_std/n * (n*g - sum(g) - x_hat*sum(g*x_hat))
        scale = (gamma * inv_std)[:, None]
        dx = grad_out * scale.astype(dt)
        dx -= (scale * sum_g[:, None] / n).astype(dt)
        dx -= x_hat * (scale * sum_gx[:, None] / n).astype(dt)
        return dx


class Dense(Layer):
    kind = "Dense"

    def __init__(self, in_dim, out_dim, rng=None, dtype=real_type):
        super().__init__(dtype)
        if in_dim < 1 or out_dim < 1:
            raise ConfigurationError(f"Dense extents must be positive: {in_dim, out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = np.random.default_rng() if rng is None else rng
        bound = np.sqrt(6.0 / in_dim)
        self.params["weight"] = rng.uniform(-bound, bound, (out_dim, in_dim)).astype(dtype)
        self.params["bias"] = np.zeros(out_dim, dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_dim:
            raise ConfigurationError(f"Dense expects {self.in_dim} inputs, got shape {tuple(in_shape)}")
        return (self.out_dim,)

    def flops(self, in_shape):
        return self.in_dim * self.out_dim

    def extents(self):
        return (self.in_dim, self.out_dim)

    def forward(self, x, train=False):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_dim:
            raise ConfigurationError(f"Dense expects {self.in_dim} inputs, got shape {x.shape[1:]}")
        self._cache = (flat, x.shape)
        return flat @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad_out):
        flat, shape = self._require_cache()
        self.grads["weight"] += grad_out.T @ flat
        self.grads["bias"] += grad_out.sum(axis=0)
        return (grad_out @ self.params["weight"]).reshape(shape)


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""

    kind = "Dropout"

    def __init__(self, rate, rng=None, dtype=real_type):
        super().__init__(dtype)
        if not 0 <= rate < 1:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(np.float32(rate))
        self.rng = np.random.default_rng() if rng is None else rng

    def extents(self):
        return (self.rate,)

    def flops(self, in_shape):
        return 0  # identity at inference

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._cache = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad_out):
        if self._cache is None:
            return grad_out
        return grad_out * self._cache


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    kind = "Softmax"

    def forward(self, x, train=False):
        p = softmax(x)
        self._cache = p
        return p

    def backward(self, grad_out):
        p = self._require_cache()
        return p * (grad_out - (grad_out * p).sum(axis=-1, keepdims=True))


def cross_entropy(probs, labels):
    """Mean negative natural-log likelihood and its gradient w.r.t. the logits.

    ``probs`` is ``(N, K)`` (or a single ``(K,)`` distribution) produced by a
    softmax; the gradient is the fused softmax+CE form ``(probs - onehot) / N``.
    """
    probs = np.asarray(probs)
    single = probs.ndim == 1
    if single:
        probs = probs[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = probs.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ConfigurationError(f"labels {labels} incompatible with probs of shape {probs.shape}")
    picked = probs[np.arange(n), labels].astype(np.float64)
    loss = float(-np.log(np.maximum(picked, 1e-12)).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, (grad[0] if single else grad)


class Optimizer:
    """Updates the parameters of a fixed list of layers in place."""

    def __init__(self, layers, lr):
        if lr <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {lr}")
        self.layers = [layer for layer in layers if layer.params]
        self.lr = lr
        self.t = 0

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def _check(self):
        for i, layer in enumerate(self.layers):
            for name, g in layer.grads.items():
                if not np.isfinite(g).all():
                    raise NumericError(f"non-finite gradient in {layer!r} (#{i}) parameter '{name}'")

    def step(self):
        self._check()
        self.t += 1
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                self._update(i, name, p, layer.grads[name])

    def _update(self, i, name, p, g):
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, layers, lr=0.01, momentum=0.0):
        super().__init__(layers, lr)
        if not 0 <= momentum < 1:
            raise ConfigurationError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = momentum
        self.velocity = {}

    def _update(self, i, name, p, g):
        if self.momentum:
            v = self.velocity.setdefault((i, name), np.zeros_like(p))
            v *= self.momentum
            v += g
            g = v
        p -= p.dtype.type(self.lr) * g


class Adam(Optimizer):
    def __init__(self, layers, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(layers, lr)
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigurationError(f"betas must be in [0, 1), got {beta1, beta2}")
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                self.m[i, name] = np.zeros_like(p)
                self.v[i, name] = np.zeros_like(p)

    def _update(self, i, name, p, g):
        b1, b2 = self.beta1, self.beta2
        m, v = self.m[i, name], self.v[i, name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = self.lr / (1 - b1 ** self.t)
        denom = np.sqrt(v / (1 - b2 ** self.t)) + self.eps
        p -= (step * m / denom).astype(p.dtype)
