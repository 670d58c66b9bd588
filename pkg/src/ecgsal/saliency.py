"""Class activation maps and learned deletion masks.

CAM: for a network whose last conv features ``f[k, x]`` are globally
average-pooled and fed to one linear layer, the map for class ``c`` is
``sum_k w[c, k] * f[k, x]``.

Masks: a per-sample mask ``m`` in [0, 1] perturbs the input and is fitted by
projected gradient descent on

    J(m) = lam1 * sparsity(m) + lam2 * sum_t |m[t+1] - m[t]| + p_target(perturb(x, m))

Two conventions are supported. ``literal`` uses ``(1-m)*x + k*(1-m)`` with
sparsity ``sum |1 - m|``. ``deletion`` (the default) uses ``(1-m)*x + k*m``
with sparsity ``sum |m|``, so that ``m = 0`` keeps the input untouched and
the mask grows only where deleting the signal lowers the target
probability.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ShapeError, Tape, Tensor, gradient_descent_step, ops
from .signal_io import WINDOW_LENGTH, RhythmClass

log = logging.getLogger(__name__)

CAM_LENGTH = 48


class Convention(str, enum.Enum):
    DELETION = "deletion"
    LITERAL = "literal"


class MaskOptimizationError(FloatingPointError):
    def __init__(self, iteration: int, value: float):
        super().__init__(f"mask loss became {value} at iteration {iteration}")
        self.iteration = iteration


# ---------------------------------------------------------------------------
# CAM


@dataclass
class Cam:
    label: RhythmClass
    raw: np.ndarray  # [48]
    upsampled: np.ndarray  # [720]
    overlay: np.ndarray  # [720], in [0, 1]


def compute_cam(features: np.ndarray, class_weights: np.ndarray) -> np.ndarray:
    """Weighted sum of feature maps: ``raw[x] = sum_k w[k] * f[k, x]``.

    Channels are accumulated in order rather than through BLAS, so the result
    is bit-identical to a plain double loop.
    """
    f = np.asarray(features, dtype=np.float64)
    w = np.asarray(class_weights, dtype=np.float64)
    if f.ndim != 2 or w.shape != (f.shape[0],):
        raise ShapeError(f"compute_cam: features {f.shape} vs class weights {w.shape}")
    raw = np.zeros(f.shape[1])
    for k in range(f.shape[0]):
        raw += w[k] * f[k]
    return raw


def normalize01(v: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant vector maps to 0.5 everywhere."""
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.full_like(v, 0.5)
    return (v - lo) / (hi - lo)


def upsample_normalize(raw: np.ndarray, length: int = WINDOW_LENGTH) -> tuple[np.ndarray, np.ndarray]:
    """Linear interpolation to ``length`` with both endpoints aligned, plus its [0, 1] overlay."""
    raw = np.asarray(raw, dtype=np.float64)
    pos = np.linspace(0.0, raw.size - 1, length)
    up = np.interp(pos, np.arange(raw.size), raw)
    return up, normalize01(up)


def cam_for_window(model, window: np.ndarray, label: int | None = None) -> Cam:
    """CAM of one window from a CAM network; ``label`` defaults to the predicted class."""
    x = np.asarray(getattr(window, "samples", window), dtype=np.float64)
    model.eval()
    trace = model.forward(x)
    if label is None:
        label = int(trace.probs.data[0].argmax())
    raw = compute_cam(trace.features.data[0], model.class_weights(label))
    up, overlay = upsample_normalize(raw, x.size)
    return Cam(RhythmClass(label), raw, up, overlay)


# ---------------------------------------------------------------------------
# masks


@dataclass(frozen=True)
class MaskConfig:
    lambda1: float = 1.0
    lambda2: float = 0.001
    lr: float = 0.001
    iterations: int = 500
    k: float = 0.0
    convention: Convention = Convention.DELETION

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0 or self.lr <= 0:
            raise ValueError("lambda1, lambda2 and lr must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        object.__setattr__(self, "convention", Convention(self.convention))


@dataclass
class MaskState:
    m: np.ndarray
    # rows: (total, sparsity, smoothness, target probability) at each iterate
    history: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    final: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))
    target: RhythmClass = RhythmClass.N
    warnings: list[str] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.history)


def perturb(x: np.ndarray, m: np.ndarray, k: float = 0.0, convention: Convention | str = Convention.DELETION) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if x.shape != m.shape:
        raise ShapeError(f"perturb: signal {x.shape} vs mask {m.shape}")
    if Convention(convention) is Convention.LITERAL:
        return (1.0 - m) * x + k * (1.0 - m)
    return (1.0 - m) * x + k * m


def _perturb_tensor(x: np.ndarray, m: Tensor, k: float, convention: Convention) -> Tensor:
    keep = ops.sub(Tensor(1.0), m)
    kept = ops.mul(keep, Tensor(x))
    fill = keep if convention is Convention.LITERAL else m
    return ops.add(kept, ops.mul(fill, Tensor(k)))


def sparsity_term(m: np.ndarray, lambda1: float, convention: Convention | str) -> tuple[np.ndarray, np.ndarray]:
    """Per-row sparsity value and its subgradient (``sign(0) = 0``)."""
    if Convention(convention) is Convention.LITERAL:
        d = 1.0 - m
        return lambda1 * np.abs(d).sum(axis=-1), -lambda1 * np.sign(d)
    return lambda1 * np.abs(m).sum(axis=-1), lambda1 * np.sign(m)


def smoothness_term(m: np.ndarray, lambda2: float) -> tuple[np.ndarray, np.ndarray]:
    """Total variation ``lambda2 * sum |m[t+1] - m[t]|`` and its subgradient."""
    d = np.diff(m, axis=-1)
    s = np.sign(d)
    g = np.zeros_like(m)
    g[..., 1:] += s
    g[..., :-1] -= s
    return lambda2 * np.abs(d).sum(axis=-1), lambda2 * g


def _target_prob(probs_fn, X: np.ndarray, M: np.ndarray, targets: np.ndarray, cfg: MaskConfig, with_grad: bool):
    if not with_grad:
        probs = probs_fn(Tensor(perturb(X, M, cfg.k, cfg.convention)))
        return probs.data[np.arange(len(X)), targets], None
    mt = Tensor(M, requires_grad=True)
    with Tape() as tape:
        probs = probs_fn(_perturb_tensor(X, mt, cfg.k, cfg.convention))
        p = ops.gather(probs, targets)
        total = ops.sum(p)
    tape.backward(total)
    return p.data.copy(), mt.grad


def mask_loss(model, x: np.ndarray, m: np.ndarray, target: int, cfg: MaskConfig = MaskConfig()):
    """``(total, sparsity, smoothness, target probability)`` for one window."""
    X, M = np.atleast_2d(x), np.atleast_2d(m)
    model.eval()
    terms = _loss_terms(model.perturbation_fn(X), X, M, np.array([int(target)]), cfg, with_grad=False)[0]
    return tuple(float(v) for v in terms[0])


def mask_loss_grad(model, x: np.ndarray, m: np.ndarray, target: int, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    """(Sub)gradient of the total mask loss with respect to ``m``."""
    X, M = np.atleast_2d(x), np.atleast_2d(m)
    model.eval()
    return _loss_terms(model.perturbation_fn(X), X, M, np.array([int(target)]), cfg, with_grad=True)[1][0]


def _loss_terms(probs_fn, X, M, targets, cfg: MaskConfig, with_grad: bool):
    s1, g1 = sparsity_term(M, cfg.lambda1, cfg.convention)
    s2, g2 = smoothness_term(M, cfg.lambda2)
    p, g3 = _target_prob(probs_fn, X, M, targets, cfg, with_grad)
    terms = np.stack([s1 + s2 + p, s1, s2, p], axis=1)
    if not with_grad:
        return terms, None
    # At the kink of the sparsity term pick the subgradient of least norm, so
    # an entry stays at its bound unless the rest of the objective pulls
    # harder than lambda1.
    rest = g2 + g3
    kink = M == (1.0 if cfg.convention is Convention.LITERAL else 0.0)
    g1 = np.where(kink, -np.clip(rest, -cfg.lambda1, cfg.lambda1), g1)
    return terms, g1 + rest


def optimize_masks(
    model,
    X: np.ndarray,
    targets,
    cfg: MaskConfig = MaskConfig(),
    on_iteration: Callable[[int, np.ndarray], None] | None = None,
) -> list[MaskState]:
    """Fit one mask per row of ``X`` by projected gradient descent.

    Masks start at zero. Rows are independent (the frozen network has no
    cross-sample coupling in eval mode), so they are optimized as a batch.
    ``on_iteration(it, M)`` sees the projected masks after every step.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.intp))
    if targets.shape != (len(X),):
        raise ShapeError(f"{len(X)} windows but {targets.shape} targets")
    model.eval()
    probs_fn = model.perturbation_fn(X)
    warnings: list[list[str]] = [[] for _ in range(len(X))]
    pred = probs_fn(Tensor(X)).data.argmax(axis=1)
    for i in np.flatnonzero(pred != targets):
        msg = f"model predicts {RhythmClass(int(pred[i])).name}, optimizing against {RhythmClass(int(targets[i])).name}"
        warnings[i].append(msg)
        log.warning("window %d: %s", i, msg)

    M = np.zeros_like(X)
    history = np.zeros((len(X), cfg.iterations, 4))
    for it in range(cfg.iterations):
        terms, grad = _loss_terms(probs_fn, X, M, targets, cfg, with_grad=True)
        if not np.all(np.isfinite(terms)):
            raise MaskOptimizationError(it, float(terms[~np.isfinite(terms)][0]))
        history[:, it] = terms
        M = np.clip(gradient_descent_step(M, grad, cfg.lr), 0.0, 1.0)
        if on_iteration is not None:
            on_iteration(it, M)
    final, _ = _loss_terms(probs_fn, X, M, targets, cfg, with_grad=False)
    if not np.all(np.isfinite(final)):
        raise MaskOptimizationError(cfg.iterations, float("nan"))
    return [
        MaskState(M[i].copy(), history[i], final[i], RhythmClass(int(targets[i])), warnings[i])
        for i in range(len(X))
    ]


def optimize_mask(model, x: np.ndarray, target: int, cfg: MaskConfig = MaskConfig()) -> MaskState:
    return optimize_masks(model, np.asarray(x)[None], [int(target)], cfg)[0]


def saliency_from_mask(state: MaskState | np.ndarray, convention: Convention | str = Convention.DELETION) -> np.ndarray:
    """Overlay in [0, 1]: the deletion mask itself, or ``1 - m`` for the literal form."""
    m = state.m if isinstance(state, MaskState) else np.asarray(state, dtype=np.float64)
    if Convention(convention) is Convention.LITERAL:
        m = 1.0 - m
    return normalize01(m)


def top_fraction_mass_inside(overlay: np.ndarray, inside: np.ndarray, fraction: float = 0.1) -> float:
    """Share of overlay mass, among the top ``fraction`` of samples, that falls inside ``inside``."""
    n = max(int(math.ceil(fraction * overlay.size)), 1)
    top = np.argsort(-overlay, kind="stable")[:n]
    mass = overlay[top]
    total = mass.sum()
    if total <= 0:
        return float(inside[top].mean())
    return float(mass[inside[top]].sum() / total)


def most_confident_correct(
    probs: np.ndarray, labels: np.ndarray, top_k: int, classes=None
) -> dict[RhythmClass, list[int]]:
    """Per class, indices of up to ``top_k`` correctly classified windows by descending confidence.

    Ties keep the lower index first. Classes without any correct window map
    to an empty list.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    classes = [RhythmClass(c) for c in (range(probs.shape[1]) if classes is None else classes)]
    pred = probs.argmax(axis=1)
    out: dict[RhythmClass, list[int]] = {}
    for c in classes:
        idx = np.flatnonzero((labels == c) & (pred == c))
        conf = probs[idx, c]
        order = np.lexsort((idx, -conf))
        out[c] = [int(i) for i in idx[order][:top_k]]
    return out
