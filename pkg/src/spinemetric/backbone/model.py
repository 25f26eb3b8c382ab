"""The patch-encoding convolutional network.

Architecture: a stack of (conv -> batchnorm -> relu -> maxpool) blocks
followed by (linear -> batchnorm -> leaky-relu) blocks and a bare final
linear layer. The final layer is the swappable head: an embedding head for
metric training or a two-logit classifier head for fracture detection.
Reduced configurations (smaller inputs, fewer channels) are first-class so
property tests and desk-scale benchmarks stay fast.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .layers import (
    BatchNorm1d,
    BatchNorm2d,
    Conv2d,
    Flatten,
    LeakyReLU,
    Linear,
    MaxPool2d,
)

HEAD_EMBEDDING = "embedding8"
HEAD_CLASSIFIER = "classifier2"
HEADS = (HEAD_EMBEDDING, HEAD_CLASSIFIER)


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 2
    input_size: int = 112
    conv_channels: tuple = (32, 64, 128, 256)
    kernel: int = 5
    linear_dims: tuple = (256, 128, 64, 8)
    classifier_classes: int = 2
    leaky_slope: float = 0.01
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "linear_dims", tuple(self.linear_dims))
        divisor = 2 ** len(self.conv_channels)
        if self.input_size % divisor != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by {divisor} "
                f"(one 2x2 pool per conv block)"
            )
        if self.kernel % 2 != 1:
            raise ValueError("kernel must be odd")
        if not self.conv_channels or not self.linear_dims:
            raise ValueError("conv_channels and linear_dims must be non-empty")

    @property
    def final_spatial(self) -> int:
        return self.input_size // (2 ** len(self.conv_channels))

    @property
    def flat_features(self) -> int:
        return self.conv_channels[-1] * self.final_spatial**2

    @property
    def embedding_dim(self) -> int:
        return self.linear_dims[-1]

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["linear_dims"] = list(self.linear_dims)
        return d

    @classmethod
    def from_dict(cls, d) -> "NetworkConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["linear_dims"] = tuple(d["linear_dims"])
        return cls(**d)


def _init_head(config: NetworkConfig, head: str, rng) -> Linear:
    in_features = (
        config.linear_dims[-2] if len(config.linear_dims) > 1 else config.flat_features
    )
    out = (
        config.embedding_dim if head == HEAD_EMBEDDING else config.classifier_classes
    )
    return Linear(in_features, out, rng, dtype=config.np_dtype)


class PatchEncoder:
    """Convolutional encoder over 2-channel patches with a swappable head."""

    def __init__(self, config: NetworkConfig, seed: int):
        self.config = config
        self.head = HEAD_EMBEDDING
        self.mode = "train"
        self._forward_live = False
        rng = np.random.default_rng([seed])
        dtype = config.np_dtype

        self._names: list[str] = []
        self._layers: list = []
        c_in = config.input_channels
        for i, c_out in enumerate(config.conv_channels, start=1):
            self._add(f"conv{i}", Conv2d(c_in, c_out, config.kernel, rng, dtype))
            self._add(f"bn{i}", BatchNorm2d(c_out, config.bn_epsilon, config.bn_momentum, dtype))
            self._add(f"relu{i}", LeakyReLU(0.0))
            self._add(f"pool{i}", MaxPool2d())
            c_in = c_out
        self._add("flatten", Flatten())
        d_in = config.flat_features
        for j, d_out in enumerate(config.linear_dims[:-1], start=1):
            self._add(f"fc{j}", Linear(d_in, d_out, rng, dtype))
            self._add(f"fbn{j}", BatchNorm1d(d_out, config.bn_epsilon, config.bn_momentum, dtype))
            self._add(f"lrelu{j}", LeakyReLU(config.leaky_slope))
            d_in = d_out
        self._add("head", _init_head(config, self.head, rng))

    def _add(self, name, layer):
        self._names.append(name)
        self._layers.append(layer)

    def _named_layers(self):
        return zip(self._names, self._layers)

    # --- parameter access -------------------------------------------------

    def parameters(self) -> dict:
        out = {}
        for name, layer in self._named_layers():
            for pname, arr in layer.params().items():
                out[f"{name}.{pname}"] = arr
        return out

    def gradients(self) -> dict:
        out = {}
        for name, layer in self._named_layers():
            for pname, arr in layer.grads().items():
                out[f"{name}.{pname}"] = arr
        return out

    def bn_stats(self) -> dict:
        out = {}
        for name, layer in self._named_layers():
            for sname, arr in layer.state().items():
                out[f"{name}.{sname}"] = arr
        return out

    def zero_grad(self):
        for layer in self._layers:
            layer.zero_grad()

    @property
    def output_dim(self) -> int:
        return self._layers[-1].out_features

    # --- forward / backward -----------------------------------------------

    def forward(self, x, train: bool | None = None):
        """Run the network on a (N, C, H, W) batch.

        Train mode normalizes with batch statistics, updates running stats,
        and caches activations for backward. Eval mode uses running stats
        and leaves the model untouched.
        """
        train = (self.mode == "train") if train is None else train
        x = np.asarray(x, dtype=self.config.np_dtype)
        expected = (
            self.config.input_channels,
            self.config.input_size,
            self.config.input_size,
        )
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"expected batch of shape (N,{expected[0]},{expected[1]},{expected[2]}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input batch contains non-finite values")
        for layer in self._layers:
            x = layer.forward(x, train)
        self._forward_live = train
        return x

    def backward(self, d_out) -> dict:
        """Backpropagate d(loss)/d(output); returns the parameter gradient map."""
        if not self._forward_live:
            raise RuntimeError("backward requires a preceding train-mode forward")
        dx = np.asarray(d_out, dtype=self.config.np_dtype)
        for layer in reversed(self._layers):
            dx = layer.backward(dx)
        self._forward_live = False
        return self.gradients()

    # --- head management ----------------------------------------------------

    def swap_head(self, new_head: str, seed: int) -> "PatchEncoder":
        """Replace the final linear layer with a freshly seeded one.

        Every other parameter and all running statistics are left untouched.
        """
        if new_head not in HEADS:
            raise ValueError(f"unknown head {new_head!r}; expected one of {HEADS}")
        rng = np.random.default_rng([seed])
        self._layers[-1] = _init_head(self.config, new_head, rng)
        self.head = new_head
        self._forward_live = False
        return self

    def embed(self, x):
        """Eval-mode forward, asserting the embedding head is mounted."""
        if self.head != HEAD_EMBEDDING:
            raise RuntimeError("embed() requires the embedding head")
        return self.forward(x, train=False)


def init_model(config: NetworkConfig, seed: int) -> PatchEncoder:
    """Build a seeded network: He-uniform weights, zero biases, unit BN scale."""
    return PatchEncoder(config, seed)


def parameter_count(config: NetworkConfig) -> int:
    """Total trainable parameter count implied by a configuration."""
    total = 0
    c_in = config.input_channels
    for c_out in config.conv_channels:
        total += c_out * c_in * config.kernel**2 + c_out  # conv weight + bias
        total += 2 * c_out  # bn gamma + beta
        c_in = c_out
    d_in = config.flat_features
    for d_out in config.linear_dims[:-1]:
        total += d_out * d_in + d_out
        total += 2 * d_out
        d_in = d_out
    total += config.embedding_dim * d_in + config.embedding_dim
    return total
