"""Network layers with explicit forward/backward passes.

Each layer owns its parameters and gradient buffers. A train-mode forward
caches whatever backward needs; eval-mode forwards cache nothing and are
side-effect free. Upstream gradients use the sum-reduction convention:
``backward(dy)`` expects d(scalar loss)/d(output) and returns the gradient
with respect to the input while accumulating parameter gradients in-place.
"""

from __future__ import annotations

import numpy as np


def kaiming_uniform(rng, shape, fan_in, dtype):
    """He-uniform draw: U(-b, b) with b = sqrt(6 / fan_in)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    """Base layer: parameter/grad maps plus forward/backward."""

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def state(self) -> dict:
        """Non-trainable tensors (running statistics)."""
        return {}

    def zero_grad(self):
        for g in self.grads().values():
            g.fill(0.0)

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _require_cache(self):
        if getattr(self, "_cache", None) is None:
            raise RuntimeError(
                f"{type(self).__name__}.backward called without a cached "
                f"train-mode forward pass"
            )


class Conv2d(Layer):
    """Stride-1 'same' convolution with square odd kernels.

    Implemented as a sum over the k*k kernel offsets, each a single GEMM on
    a shifted view of the padded input. Keeps memory at O(input) instead of
    the O(input * k^2) of an im2col buffer.
    """

    def __init__(self, in_channels, out_channels, kernel, rng, dtype=np.float32):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd for same-size output")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.pad = kernel // 2
        fan_in = in_channels * kernel * kernel
        self.weight = kaiming_uniform(
            rng, (out_channels, in_channels, kernel, kernel), fan_in, dtype
        )
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._cache = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.d_weight, "bias": self.d_bias}

    def forward(self, x, train: bool):
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        p, k = self.pad, self.kernel
        xpad = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
        xpad[:, :, p : p + h, p : p + w] = x
        # Accumulate in (out, n, h, w) layout so the offset GEMMs need no
        # per-iteration transpose.
        yt = np.zeros((self.out_channels, n, h, w), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                yt += np.tensordot(
                    self.weight[:, :, di, dj],
                    xpad[:, :, di : di + h, dj : dj + w],
                    axes=(1, 1),
                )
        yt += self.bias[:, None, None, None]
        y = np.ascontiguousarray(yt.transpose(1, 0, 2, 3))
        self._cache = xpad if train else None
        return y

    def backward(self, dy):
        self._require_cache()
        xpad = self._cache
        n = dy.shape[0]
        h, w = dy.shape[2], dy.shape[3]
        p, k = self.pad, self.kernel
        dyt = dy.transpose(1, 0, 2, 3)
        self.d_bias += dy.sum(axis=(0, 2, 3))
        dxpad_t = np.zeros(
            (self.in_channels, n, h + 2 * p, w + 2 * p), dtype=dy.dtype
        )
        for di in range(k):
            for dj in range(k):
                xs = xpad[:, :, di : di + h, dj : dj + w]
                self.d_weight[:, :, di, dj] += np.tensordot(
                    dyt, xs, axes=([1, 2, 3], [0, 2, 3])
                )
                dxpad_t[:, :, di : di + h, dj : dj + w] += np.tensordot(
                    self.weight[:, :, di, dj], dyt, axes=(0, 0)
                )
        dx = dxpad_t[:, :, p : p + h, p : p + w].transpose(1, 0, 2, 3)
        self._cache = None
        return np.ascontiguousarray(dx)


class MaxPool2d(Layer):
    """2x2 max pooling, stride 2. Gradient goes to the first maximum."""

    def __init__(self):
        self._cache = None

    def forward(self, x, train: bool):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"spatial size ({h},{w}) not divisible by 2")
        windows = (
            x.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )
        # argmax returns the first occurrence, which fixes the tie rule
        idx = np.argmax(windows, axis=-1)
        y = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
        self._cache = (idx, (n, c, h, w)) if train else None
        return y

    def backward(self, dy):
        self._require_cache()
        idx, (n, c, h, w) = self._cache
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = (
            dwin.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        self._cache = None
        return dx


class _BatchNormBase(Layer):
    """Shared batch-norm math; subclasses fix the normalization axes."""

    axes: tuple

    def __init__(self, num_features, epsilon, momentum, dtype=np.float32):
        self.num_features = num_features
        self.epsilon = epsilon
        self.momentum = momentum
        self.gamma = np.ones(num_features, dtype=dtype)
        self.beta = np.zeros(num_features, dtype=dtype)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.d_gamma = np.zeros_like(self.gamma)
        self.d_beta = np.zeros_like(self.beta)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self.d_gamma, "beta": self.d_beta}

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _reshape(self, v):
        shape = [1] * self._ndim
        shape[1] = self.num_features
        return v.reshape(shape)

    def forward(self, x, train: bool):
        self._ndim = x.ndim
        if train:
            mu = x.mean(axis=self.axes)
            var = x.var(axis=self.axes)
            n = x.size // self.num_features
            # Running stats follow the usual convention: unbiased variance
            # for the running estimate, biased for the normalization itself.
            unbiased = var * (n / max(n - 1, 1))
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mu
            self.running_var[...] = (1 - m) * self.running_var + m * unbiased
        else:
            mu = self.running_mean
            var = self.running_var
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - self._reshape(mu)) * self._reshape(inv_std)
        y = self._reshape(self.gamma) * xhat + self._reshape(self.beta)
        self._cache = (xhat, inv_std) if train else None
        return y.astype(x.dtype, copy=False)

    def backward(self, dy):
        self._require_cache()
        xhat, inv_std = self._cache
        n = dy.size // self.num_features
        self.d_gamma += (dy * xhat).sum(axis=self.axes)
        self.d_beta += dy.sum(axis=self.axes)
        dxhat = dy * self._reshape(self.gamma)
        mean_dxhat = dxhat.mean(axis=self.axes)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=self.axes)
        dx = self._reshape(inv_std) * (
            dxhat - self._reshape(mean_dxhat) - xhat * self._reshape(mean_dxhat_xhat)
        )
        self._cache = None
        return dx.astype(dy.dtype, copy=False)


class BatchNorm2d(_BatchNormBase):
    axes = (0, 2, 3)


class BatchNorm1d(_BatchNormBase):
    axes = (0,)


class LeakyReLU(Layer):
    """Leaky rectifier; slope 0 gives a plain ReLU. x == 0 takes the slope side."""

    def __init__(self, slope=0.01):
        self.slope = slope
        self._cache = None

    def forward(self, x, train: bool):
        y = np.where(x > 0, x, self.slope * x)
        self._cache = (x > 0) if train else None
        return y.astype(x.dtype, copy=False)

    def backward(self, dy):
        self._require_cache()
        pos = self._cache
        dx = np.where(pos, dy, self.slope * dy)
        self._cache = None
        return dx.astype(dy.dtype, copy=False)


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, train: bool):
        self._cache = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        self._require_cache()
        shape = self._cache
        self._cache = None
        return dy.reshape(shape)


class Linear(Layer):
    def __init__(self, in_features, out_features, rng, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = kaiming_uniform(
            rng, (out_features, in_features), in_features, dtype
        )
        self.bias = np.zeros(out_features, dtype=dtype)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._cache = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.d_weight, "bias": self.d_bias}

    def forward(self, x, train: bool):
        if x.shape[1] != self.in_features:
            raise ValueError(f"expected {self.in_features} features, got {x.shape[1]}")
        self._cache = x if train else None
        return x @ self.weight.T + self.bias

    def backward(self, dy):
        self._require_cache()
        x = self._cache
        self.d_weight += dy.T @ x
        self.d_bias += dy.sum(axis=0)
        self._cache = None
        return dy @ self.weight
