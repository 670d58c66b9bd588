"""Parameterized layers built on the autodiff ops."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.ops import BatchNormStats


class Layer:
    """Base class: walks attributes to find parameters, buffers and children.

    Attribute insertion order defines parameter order, which keeps
    checkpoints and optimizer state deterministic.
    """

    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Tensor, Layer, BatchNormStats)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Layer) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for name, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + name, value))
            elif isinstance(value, Layer):
                out.extend(value.named_parameters(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_stats(self, prefix: str = "") -> list[tuple[str, BatchNormStats]]:
        out = []
        for name, value in self._children():
            if isinstance(value, BatchNormStats):
                out.append((prefix + name, value))
            elif isinstance(value, Layer):
                out.extend(value.named_stats(f"{prefix}{name}."))
        return out

    def train(self, mode: bool = True) -> "Layer":
        self.training = mode
        for _, value in self._children():
            if isinstance(value, Layer):
                value.train(mode)
        return self

    def eval(self) -> "Layer":
        return self.train(False)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, st in self.named_stats():
            state[f"{name}.mean"] = st.mean.copy()
            state[f"{name}.var"] = st.var.copy()
            state[f"{name}.initialized"] = np.array(st.initialized)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        stats = dict(self.named_stats())
        expected = set(params) | {f"{n}.{f}" for n in stats for f in ("mean", "var", "initialized")}
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)
        for name, st in stats.items():
            st.mean = np.array(state[f"{name}.mean"], dtype=np.float64)
            st.var = np.array(state[f"{name}.var"], dtype=np.float64)
            st.initialized = bool(state[f"{name}.initialized"])


def _uniform(rng: np.random.Generator, bound: float, shape) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Conv1d(Layer):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, bias: bool = True):
        fan_in = c_in * kernel
        self.weight = _uniform(rng, math.sqrt(6.0 / fan_in), (c_out, c_in, kernel))
        self.bias = _uniform(rng, 1.0 / math.sqrt(fan_in), (c_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, padding="same")


class BatchNorm1d(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.stats = BatchNormStats(channels)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm1d(x, self.gamma, self.beta, self.stats, self.training, self.eps, self.momentum)


class Dense(Layer):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = _uniform(rng, math.sqrt(6.0 / d_in), (d_out, d_in))
        self.bias = _uniform(rng, 1.0 / math.sqrt(d_in), (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dense(x, self.weight, self.bias)


class LSTM(Layer):
    """Many-to-one LSTM; returns the final hidden state."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.w_x = _uniform(rng, bound, (4 * hidden, d_in))
        self.w_h = _uniform(rng, bound, (4 * hidden, hidden))
        b = rng.uniform(-bound, bound, size=4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate
        self.b = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.lstm_sequence(x, self.w_x, self.w_h, self.b)


class MLP(Layer):
    """Dense layers with ReLU between them (none after the last)."""

    def __init__(self, widths: list[int], rng: np.random.Generator):
        self.layers = [Dense(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


class ResidualUnit(Layer):
    """conv-BN-ReLU-conv-BN plus skip, then ReLU.

    When ``pool > 1`` both the main path and the skip are max-pooled with
    the same width before the addition. A width-1 projection aligns the
    skip when the channel count changes.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, pool: int, rng: np.random.Generator):
        self.conv1 = Conv1d(c_in, c_out, kernel, rng, bias=False)
        self.bn1 = BatchNorm1d(c_out)
        self.conv2 = Conv1d(c_out, c_out, kernel, rng, bias=False)
        self.bn2 = BatchNorm1d(c_out)
        self.proj = Conv1d(c_in, c_out, 1, rng, bias=False) if c_in != c_out else None
        self.pool = pool

    def __call__(self, x: Tensor) -> Tensor:
        h = ops.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        skip = self.proj(x) if self.proj is not None else x
        if self.pool > 1:
            h = ops.maxpool1d(h, self.pool)
            skip = ops.maxpool1d(skip, self.pool)
        return ops.relu(ops.add(h, skip))


class InceptionBlock(Layer):
    """Parallel conv-BN-ReLU branches, concatenated, fused by a width-1 conv."""

    def __init__(self, c_in: int, branch_channels: int, kernel_sizes: list[int], c_out: int, rng: np.random.Generator):
        self.branches = [_Branch(c_in, branch_channels, k, rng) for k in kernel_sizes]
        self.fuse = Conv1d(branch_channels * len(kernel_sizes), c_out, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fuse(ops.concat([br(x) for br in self.branches], axis=-2))


class _Branch(Layer):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator):
        self.conv = Conv1d(c_in, c_out, kernel, rng, bias=False)
        self.bn = BatchNorm1d(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))
