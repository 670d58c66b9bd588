"""Classifier (CNN + LSTM branches fused by an MLP head) and the CAM network.

Shapes for a 720-sample window at paper scale::

    CNN branch  -> z1  [640]   (64 channels x 10 positions)
    LSTM branch -> z2  [40]    (10 steps of 72 samples)
    head(z1||z2) -> z3 [8]     (680 -> 128 -> 32 -> 8)

The CAM network drops the inception block, keeps 4 residual units pooled
down to 48 positions, and ends in GAP followed by a single linear map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple

import numpy as np

from .autodiff import ShapeError, Tensor, ops
from .nn import LSTM, MLP, Conv1d, Dense, InceptionBlock, Layer, ResidualUnit
from .signal_io import N_CLASSES, WINDOW_LENGTH


class ConfigurationError(ValueError):
    pass


def k_schedule(n_units: int) -> list[int]:
    """Channel multiplier per residual unit: +1 every 4th unit."""
    return [1 + i // 4 for i in range(n_units)]


@dataclass(frozen=True)
class ClassifierConfig:
    inception_kernels: tuple[int, ...] = (15, 17, 19, 21)
    branch_channels: int = 8
    residual_units: int = 8
    residual_kernel: int = 16
    base_channels: int = 16
    pools: tuple[int, ...] = (3, 1, 2, 1, 2, 1, 2, 3)
    feature_channels: int = 16
    lstm_step: int = 72
    lstm_hidden: int = 40
    head_widths: tuple[int, ...] = (128, 32)
    n_classes: int = N_CLASSES
    input_length: int = WINDOW_LENGTH

    def __post_init__(self):
        if self.input_length % self.lstm_step:
            raise ConfigurationError(f"input length {self.input_length} not divisible by LSTM step {self.lstm_step}")
        if len(self.pools) != self.residual_units:
            raise ConfigurationError(f"{len(self.pools)} pool widths for {self.residual_units} residual units")
        if self.input_length % int(np.prod(self.pools)):
            raise ConfigurationError(f"pool product {int(np.prod(self.pools))} does not divide {self.input_length}")

    @property
    def cnn_positions(self) -> int:
        return self.input_length // int(np.prod(self.pools))

    @property
    def cnn_features(self) -> int:
        return self.feature_channels * self.cnn_positions


PAPER_CLASSIFIER = ClassifierConfig(
    branch_channels=32,
    residual_units=15,
    base_channels=64,
    pools=(1, 2, 1, 2, 1, 2, 1, 3, 1, 3, 1, 1, 1, 1, 1),
    feature_channels=64,
)


@dataclass(frozen=True)
class CamNetConfig:
    residual_units: int = 4
    residual_kernel: int = 16
    base_channels: int = 16
    pools: tuple[int, ...] = (3, 1, 5, 1)
    n_classes: int = N_CLASSES
    input_length: int = WINDOW_LENGTH
    cam_length: int = 48

    def __post_init__(self):
        if len(self.pools) != self.residual_units:
            raise ConfigurationError(f"{len(self.pools)} pool widths for {self.residual_units} residual units")
        length = self.input_length
        for p in self.pools:
            if length % p:
                raise ConfigurationError(f"pool width {p} does not divide length {length}")
            length //= p
        if length != self.cam_length:
            raise ConfigurationError(f"pooling schedule {self.pools} yields {length} positions, need {self.cam_length}")


PAPER_CAMNET = CamNetConfig(base_channels=64)


@dataclass(frozen=True)
class LstmNetConfig:
    lstm_step: int = 72
    lstm_hidden: int = 40
    head_widths: tuple[int, ...] = (128, 32)
    n_classes: int = N_CLASSES
    input_length: int = WINDOW_LENGTH

    def __post_init__(self):
        if self.input_length % self.lstm_step:
            raise ConfigurationError(f"input length {self.input_length} not divisible by LSTM step {self.lstm_step}")


def _as_input(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 1:
        t = ops.reshape(t, (1, t.shape[0]))
    return t


def _check_length(x: Tensor, length: int) -> None:
    if x.ndim != 2 or x.shape[1] != length:
        raise ShapeError(f"expected windows of length {length}, got input shape {x.shape}")


class Trace(NamedTuple):
    z1: Tensor
    z2: Tensor
    logits: Tensor
    probs: Tensor


class CamTrace(NamedTuple):
    features: Tensor  # [B, K, 48]
    pooled: Tensor  # [B, K]
    logits: Tensor
    probs: Tensor


class CnnBranch(Layer):
    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator):
        self.inception = InceptionBlock(1, cfg.branch_channels, list(cfg.inception_kernels), cfg.base_channels, rng)
        units = []
        c_in = cfg.base_channels
        for k, pool in zip(k_schedule(cfg.residual_units), cfg.pools):
            c_out = cfg.base_channels * k
            units.append(ResidualUnit(c_in, c_out, cfg.residual_kernel, pool, rng))
            c_in = c_out
        self.units = units
        self.reduce = Conv1d(c_in, cfg.feature_channels, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.inception(x)
        for unit in self.units:
            h = unit(h)
        return ops.flatten(self.reduce(h))


class LstmBranch(Layer):
    def __init__(self, step: int, hidden: int, rng: np.random.Generator):
        self.step = step
        self.lstm = LSTM(step, hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        B, L = x.shape
        return self.lstm(ops.reshape(x, (B, L // self.step, self.step)))


class ClassifierModel(Layer):
    def __init__(self, cfg: ClassifierConfig = ClassifierConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = cfg
        self.cnn = CnnBranch(cfg, rng)
        self.lstm = LstmBranch(cfg.lstm_step, cfg.lstm_hidden, rng)
        self.head = MLP([cfg.cnn_features + cfg.lstm_hidden, *cfg.head_widths, cfg.n_classes], rng)

    def forward(self, x) -> Trace:
        x = _as_input(x)
        _check_length(x, self.config.input_length)
        z1 = self.cnn(ops.reshape(x, (x.shape[0], 1, x.shape[1])))
        z2 = self.lstm(x)
        z3 = self.head(ops.concat([z1, z2], axis=-1))
        return Trace(z1, z2, z3, ops.softmax(z3))

    def logits(self, x) -> Tensor:
        return self.forward(x).logits

    def perturbation_fn(self, x_clean: np.ndarray) -> Callable[[Tensor], Tensor]:
        """Map perturbed windows to class probabilities through the LSTM branch only.

        The CNN features of the clean windows are computed once and held
        constant, so gradients flow through LSTM and head only.
        """
        clean = _as_input(np.asarray(x_clean, dtype=np.float64))
        z1 = Tensor(self.cnn(ops.reshape(clean, (clean.shape[0], 1, clean.shape[1]))).data)

        def probs(phi: Tensor) -> Tensor:
            z2 = self.lstm(_as_input(phi))
            return ops.softmax(self.head(ops.concat([z1, z2], axis=-1)))

        return probs


class LstmNetModel(Layer):
    """LSTM branch followed by an MLP head: the network the deletion mask probes."""

    def __init__(self, cfg: LstmNetConfig = LstmNetConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = cfg
        self.lstm = LstmBranch(cfg.lstm_step, cfg.lstm_hidden, rng)
        self.head = MLP([cfg.lstm_hidden, *cfg.head_widths, cfg.n_classes], rng)

    def forward(self, x) -> Trace:
        x = _as_input(x)
        _check_length(x, self.config.input_length)
        z2 = self.lstm(x)
        z3 = self.head(z2)
        return Trace(z2, z2, z3, ops.softmax(z3))

    def logits(self, x) -> Tensor:
        return self.forward(x).logits

    def perturbation_fn(self, x_clean: np.ndarray | None = None) -> Callable[[Tensor], Tensor]:
        return lambda phi: ops.softmax(self.head(self.lstm(_as_input(phi))))


class CamNetModel(Layer):
    def __init__(self, cfg: CamNetConfig = CamNetConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = cfg
        units = []
        c_in = 1
        for k, pool in zip(k_schedule(cfg.residual_units), cfg.pools):
            c_out = cfg.base_channels * k
            units.append(ResidualUnit(c_in, c_out, cfg.residual_kernel, pool, rng))
            c_in = c_out
        self.units = units
        self.classifier = Dense(c_in, cfg.n_classes, rng)

    @property
    def channels(self) -> int:
        return self.classifier.weight.shape[1]

    def forward(self, x) -> CamTrace:
        x = _as_input(x)
        _check_length(x, self.config.input_length)
        h = ops.reshape(x, (x.shape[0], 1, x.shape[1]))
        for unit in self.units:
            h = unit(h)
        pooled = ops.gap(h)
        logits = self.classifier(pooled)
        return CamTrace(h, pooled, logits, ops.softmax(logits))

    def logits(self, x) -> Tensor:
        return self.forward(x).logits

    def class_weights(self, label: int) -> np.ndarray:
        return self.classifier.weight.data[int(label)].copy()


def forward_classifier(model: ClassifierModel, window) -> Trace:
    return model.forward(getattr(window, "samples", window))


def forward_camnet(model: CamNetModel, window) -> CamTrace:
    return model.forward(getattr(window, "samples", window))


def config_dict(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()}


MODEL_KINDS = {"classifier": (ClassifierModel, ClassifierConfig), "camnet": (CamNetModel, CamNetConfig),
               "lstmnet": (LstmNetModel, LstmNetConfig)}


def build_model(kind: str, seed: int = 0, **overrides) -> Layer:
    try:
        cls, cfg_cls = MODEL_KINDS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None
    cfg = cfg_cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()})
    return cls(cfg, seed=seed)

