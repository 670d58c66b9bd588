"""Differentiable operations.

Every op takes and returns :class:`Tensor` objects, computes its forward
value eagerly with numpy and, when a tape is active, records a closure that
maps the upstream gradient to one gradient per input (``None`` for inputs
that do not need one).

Spatial ops (conv1d, batchnorm1d, maxpool1d, gap) accept ``[C, L]`` or a
batched ``[B, C, L]``; dense accepts ``[D]`` or ``[B, D]``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ContractError, ShapeError, Tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data)
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (broadcasting) product."""
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, (a, b), back, "mul")


elementwise_mul = mul


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(np.maximum(x.data, 0.0))  # keeps NaN visible downstream
    return record(out, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    out = Tensor(s)
    return record(out, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t)
    return record(out, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- reductions and reshaping --------------------------------------------------

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    out = Tensor(np.sum(x.data, axis=axis))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return record(out, (x,), back, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    out = Tensor(np.mean(x.data, axis=axis))

    def back(g):
        if axis is None:
            return (np.full(x.shape, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape).copy(),)

    return record(out, (x,), back, "mean")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = Tensor(x.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) axis."""
    return reshape(x, (x.shape[0], -1))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ShapeError("concat: no operands")
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError as exc:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return record(out, tuple(tensors), back, "concat")


def gather(x: Tensor, index) -> Tensor:
    """Pick ``x[b, index[b]]`` for a ``[B, C]`` tensor (or ``x[index]`` for ``[C]``)."""
    idx = np.asarray(index, dtype=np.intp)
    if x.ndim == 1:
        out = Tensor(x.data[idx])

        def back1(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            return (gx,)

        return record(out, (x,), back1, "gather")
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"gather: need [B, C] values and [B] indices, got {x.shape} and {idx.shape}")
    rows = np.arange(x.shape[0])
    out = Tensor(x.data[rows, idx])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return record(out, (x,), back, "gather")


# -- layers ----------------------------------------------------------------------

def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w.T + b`` with ``w`` of shape ``[out, in]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"dense: bias {b.shape} does not match weight {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data
    out = Tensor(y)

    def back(g):
        gx = g @ w.data
        g2 = g.reshape(-1, w.shape[0])
        gw = g2.T @ x.data.reshape(-1, w.shape[1])
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, back, "dense")


def _as_batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise ShapeError(f"{op}: expected [C, L] or [B, C, L], got {x.shape}")


def _same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out_len = -(-length // stride)
    total = max((out_len - 1) * stride + kernel - length, 0)
    left = total // 2
    return out_len, left, total - left


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: str = "same") -> Tensor:
    """1D cross-correlation (no kernel flip).

    ``w`` has shape ``[C_out, C_in, K]``. With ``padding="same"`` the output
    length is ``ceil(L / stride)`` and any odd padding goes on the right.
    """
    X, squeeze = _as_batched(x, "conv1d")
    B, C, L = X.shape
    if w.ndim != 3 or w.shape[1] != C:
        raise ShapeError(f"conv1d: input {x.shape} has {C} channels but weight {w.shape} expects {w.shape[1] if w.ndim == 3 else '?'}")
    O, _, K = w.shape
    if b is not None and b.shape != (O,):
        raise ShapeError(f"conv1d: bias {b.shape} does not match weight {w.shape}")
    if stride < 1:
        raise ValueError("conv1d: stride must be >= 1")

    if padding == "same":
        L_out, left, right = _same_padding(L, K, stride)
    elif padding == "valid":
        if K > L:
            raise ShapeError(f"conv1d: kernel {K} longer than input {L} with valid padding")
        L_out, left, right = (L - K) // stride + 1, 0, 0
    else:
        raise ValueError(f"conv1d: unknown padding {padding!r}")

    Xp = np.pad(X, ((0, 0), (0, 0), (left, right))) if left or right else X
    win = sliding_window_view(Xp, K, axis=2)[:, :, ::stride][:, :, :L_out]  # [B, C, L_out, K]
    cols = win.transpose(0, 2, 1, 3).reshape(B * L_out, C * K)
    Wm = w.data.reshape(O, C * K)
    Y = (cols @ Wm.T).reshape(B, L_out, O).transpose(0, 2, 1)
    if b is not None:
        Y = Y + b.data[:, None]
    out = Tensor(Y[0] if squeeze else np.ascontiguousarray(Y))

    def back(g):
        G = g[None] if squeeze else g
        G2 = G.transpose(0, 2, 1).reshape(B * L_out, O)
        gw = (G2.T @ cols).reshape(O, C, K)
        gb = G.sum(axis=(0, 2)) if b is not None else None
        gx = None
        if x.requires_grad:
            if stride == 1:
                gx = _conv_input_grad(G, w.data, L, left)
            else:
                dcols = (G2 @ Wm).reshape(B, L_out, C, K).transpose(0, 2, 1, 3)
                dXp = np.zeros((B, C, L + left + right))
                span = stride * (L_out - 1) + 1
                for k in range(K):
                    dXp[:, :, k:k + span:stride] += dcols[:, :, :, k]
                gx = dXp[:, :, left:left + L]
            if squeeze:
                gx = gx[0]
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return record(out, inputs, back, "conv1d")


def _conv_input_grad(G: np.ndarray, W: np.ndarray, L: int, left: int) -> np.ndarray:
    """Input gradient of a stride-1 correlation: full correlation of the
    upstream gradient with the channel-swapped, flipped kernel."""
    B, O, L_out = G.shape
    _, C, K = W.shape
    # dX[l] = sum_k W[k] G[l + left - k]; pad G by K-1 on the left so every
    # window start l + left is a valid index
    right = max(L + left - L_out, 0)
    Gp = np.pad(G, ((0, 0), (0, 0), (K - 1, right)))[:, :, left:left + L + K - 1]
    win = sliding_window_view(Gp, K, axis=2)[:, :, :L]  # [B, O, L, K]
    cols = win.transpose(0, 2, 1, 3).reshape(B * L, O * K)
    Wf = W[:, :, ::-1].transpose(1, 0, 2).reshape(C, O * K)
    return (cols @ Wf.T).reshape(B, L, C).transpose(0, 2, 1)


class BatchNormStats:
    """Running mean/variance carried between calls to :func:`batchnorm1d`."""

    def __init__(self, channels: int):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.initialized = False


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    stats: BatchNormStats,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalization over batch and spatial axes.

    In training mode the batch statistics are used and ``stats`` is updated
    in place (running var uses the unbiased estimate). Eval mode requires
    that ``stats`` has seen at least one training batch.
    """
    X, squeeze = _as_batched(x, "batchnorm1d")
    C = X.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm1d: {C} channels but gamma {gamma.shape}, beta {beta.shape}")
    g_ = gamma.data[:, None]
    b_ = beta.data[:, None]

    if training:
        n = X.shape[0] * X.shape[2]
        mu = X.mean(axis=(0, 2))
        var = X.var(axis=(0, 2))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (X - mu[:, None]) * inv[:, None]
        if stats.initialized:
            stats.mean = (1 - momentum) * stats.mean + momentum * mu
            stats.var = (1 - momentum) * stats.var + momentum * var * n / max(n - 1, 1)
        else:
            stats.mean = mu.copy()
            stats.var = var * n / max(n - 1, 1)
            stats.initialized = True
    else:
        if not stats.initialized:
            raise ContractError("batchnorm1d: eval mode before any training statistics were collected")
        inv = 1.0 / np.sqrt(stats.var + eps)
        xhat = (X - stats.mean[:, None]) * inv[:, None]

    Y = xhat * g_ + b_
    out = Tensor(Y[0] if squeeze else Y)

    def back(g):
        G = g[None] if squeeze else g
        dgamma = (G * xhat).sum(axis=(0, 2))
        dbeta = G.sum(axis=(0, 2))
        dxhat = G * g_
        if training:
            n = X.shape[0] * X.shape[2]
            dx = (inv[:, None] / n) * (
                n * dxhat
                - dxhat.sum(axis=(0, 2))[:, None]
                - xhat * (dxhat * xhat).sum(axis=(0, 2))[:, None]
            )
        else:
            dx = dxhat * inv[:, None]
        return (dx[0] if squeeze else dx), dgamma, dbeta

    return record(out, (x, gamma, beta), back, "batchnorm1d")


def maxpool1d(x: Tensor, width: int, stride: int | None = None) -> Tensor:
    """Max over sliding windows along the last axis; ties go to the lowest index."""
    stride = width if stride is None else stride
    L = x.shape[-1]
    if width < 1 or stride < 1:
        raise ValueError("maxpool1d: width and stride must be >= 1")
    if width > L:
        raise ShapeError(f"maxpool1d: width {width} exceeds length {L}")
    L_out = (L - width) // stride + 1
    win = sliding_window_view(x.data, width, axis=-1)[..., ::stride, :][..., :L_out, :]
    arg = win.argmax(axis=-1)
    out = Tensor(np.take_along_axis(win, arg[..., None], axis=-1)[..., 0])
    pos = arg + np.arange(L_out) * stride

    def back(g):
        gx = np.zeros_like(x.data)
        if stride >= width:
            np.put_along_axis(gx, pos, g, axis=-1)
        else:
            lead = gx.reshape(-1, L)
            np.add.at(lead, (np.arange(lead.shape[0])[:, None], pos.reshape(-1, L_out)), g.reshape(-1, L_out))
        return (gx,)

    return record(out, (x,), back, "maxpool1d")


def gap(x: Tensor) -> Tensor:
    """Global average pooling: spatial mean of each channel."""
    if x.ndim < 2:
        raise ShapeError(f"gap: expected [C, L] or [B, C, L], got {x.shape}")
    return mean(x, axis=-1)


# -- probabilities -------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    p = _softmax(x.data)
    out = Tensor(p)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record(out, (x,), back, "softmax")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of ``softmax(logits)`` against integer labels."""
    Z = logits.data[None] if logits.ndim == 1 else logits.data
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if Z.ndim != 2 or y.shape != (Z.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {y.shape}")
    if y.min(initial=0) < 0 or y.max(initial=0) >= Z.shape[1]:
        raise ShapeError(f"softmax_cross_entropy: label out of range for {Z.shape[1]} classes")
    shifted = Z - Z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(Z.shape[0])
    nll = logsum - shifted[rows, y]
    out = Tensor(nll.mean())

    def back(g):
        p = _softmax(Z)
        p[rows, y] -= 1.0
        grad = p * (float(g) / Z.shape[0])
        return (grad[0] if logits.ndim == 1 else grad,)

    return record(out, (logits,), back, "softmax_cross_entropy")


# -- recurrent -------------------------------------------------------------------

def lstm_sequence(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> Tensor:
    """Many-to-one LSTM over ``x`` of shape ``[T, D]`` or ``[B, T, D]``.

    Gate rows are stacked ``[input, forget, candidate, output]`` so ``w_x``
    is ``[4H, D]``, ``w_h`` is ``[4H, H]`` and ``b`` is ``[4H]``. The state
    starts at zero; the final hidden state ``h_T`` is returned and the
    backward pass runs full backpropagation through time.
    """
    squeeze = x.ndim == 2
    X = x.data[None] if squeeze else x.data
    if X.ndim != 3:
        raise ShapeError(f"lstm_sequence: expected [T, D] or [B, T, D], got {x.shape}")
    Bn, T, D = X.shape
    if T < 1:
        raise ShapeError("lstm_sequence: need at least one time step")
    H4 = w_x.shape[0]
    H = H4 // 4
    if w_x.shape != (4 * H, D) or w_h.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_sequence: input dim {D} with w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}")

    Wx, Wh, bias = w_x.data, w_h.data, b.data
    pre_x = X @ Wx.T + bias  # [B, T, 4H]
    h = np.zeros((Bn, H))
    c = np.zeros((Bn, H))
    hs, cs, gates = [h], [c], []
    for t in range(T):
        a = pre_x[:, t] + h @ Wh.T
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        gg = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates.append((i, f, gg, o))
        hs.append(h)
        cs.append(c)
    out = Tensor(h[0] if squeeze else h)

    def back(g):
        dh = g[None] if squeeze else g
        dc = np.zeros((Bn, H))
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros_like(bias)
        dX = np.zeros_like(X)
        for t in range(T - 1, -1, -1):
            i, f, gg, o = gates[t]
            tc = np.tanh(cs[t + 1])
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * gg
            dg = dc * i
            df = dc * cs[t]
            da = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1
            )
            dWx += da.T @ X[:, t]
            dWh += da.T @ hs[t]
            db += da.sum(axis=0)
            dX[:, t] = da @ Wx
            dh = da @ Wh
            dc = dc * f
        return (dX[0] if squeeze else dX), dWx, dWh, db

    return record(out, (x, w_x, w_h, b), back, "lstm_sequence")
