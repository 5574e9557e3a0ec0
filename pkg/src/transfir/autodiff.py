"""Dense float64 tensors with tape-based reverse-mode differentiation.

Ops execute eagerly on numpy arrays. While a Tape is active (context
manager, thread-local), any op whose inputs require gradients appends a
node to the tape; backward() replays the nodes in reverse execution
order, accumulating adjoints into the gradients of leaf tensors. With no
active tape the same ops run as plain inference, which keeps evaluation
cheap and thread-safe.

Everything is double precision: the gradient checks that back this
module run at tolerances that single precision cannot hold.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, NumericError, ShapeError


class Tensor:
    """Dense array, immutable after creation except for grad accumulation."""

    __slots__ = ("values", "requires_grad", "grad", "is_leaf")

    def __init__(self, values, requires_grad: bool = False, *, leaf: bool = True):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = leaf

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.values.shape}")
        return float(self.values.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def parameter(values) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def constant(values) -> Tensor:
    """A non-trainable leaf (frozen inputs, masks, time codes)."""
    return Tensor(values, requires_grad=False)


# ---------------------------------------------------------------------------
# Tape


class _TapeState(threading.local):
    def __init__(self):
        self.active: "Tape | None" = None


_STATE = _TapeState()


class Tape:
    """Execution-ordered record of op nodes for one backward replay.

    A node is (output, inputs, backward_fn); backward_fn maps the output
    adjoint to one adjoint (or None) per input. Execution order is a
    topological order of the recorded graph, so a single reverse sweep
    visits every node exactly once.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False
        self._prev: "Tape | None" = None

    def __enter__(self) -> "Tape":
        self._prev = _STATE.active
        _STATE.active = self
        return self

    def __exit__(self, *exc) -> bool:
        _STATE.active = self._prev
        self._prev = None
        return False


def active_tape() -> Tape | None:
    return _STATE.active


def _emit(values: np.ndarray, inputs: Sequence[Tensor], backfn: Callable) -> Tensor:
    tape = _STATE.active
    track = tape is not None and not tape.consumed and any(t.requires_grad for t in inputs)
    out = Tensor(values, requires_grad=track, leaf=False)
    if track:
        tape.nodes.append((out, tuple(inputs), backfn))
    return out


def backward(loss: Tensor) -> None:
    """Replay the active tape in reverse, populating grads of trainable leaves.

    Rejected: non-scalar loss, missing tape, and repeated calls on a tape
    that has already been consumed (re-record the forward pass instead).
    """
    if loss.values.shape != ():
        raise ContractError(f"backward expects a scalar loss, got shape {loss.values.shape}")
    tape = _STATE.active
    if tape is None:
        raise ContractError("backward called with no active tape")
    if tape.consumed or not tape.nodes:
        raise ContractError("tape already consumed or empty; re-record the forward pass")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for out, inputs, backfn in reversed(tape.nodes):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        grads = backfn(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if t.is_leaf:
                if t.grad is None:
                    t.grad = np.zeros_like(t.values)
                t.grad += gt
            else:
                key = id(t)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gt
                else:
                    adjoint[key] = gt
    tape.nodes.clear()
    tape.consumed = True


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op}: shapes {a.values.shape} and {b.values.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.values + b.values, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.values - b.values, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return _emit(av * bv, (a, b), lambda g: (g * bv, g * av))


def neg(a: Tensor) -> Tensor:
    return _emit(-a.values, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _emit(a.values * s, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: shapes {av.shape} and {bv.shape} do not chain")
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.values.shape}")
    return _emit(a.values.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.values.shape
    return _emit(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_rows: empty input list")
    sizes = [t.values.shape[0] for t in tensors]

    def back(g):
        out, pos = [], 0
        for n in sizes:
            out.append(g[pos:pos + n])
            pos += n
        return tuple(out)

    return _emit(np.concatenate([t.values for t in tensors], axis=0), tuple(tensors), back)


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_cols: empty input list")
    widths = [t.values.shape[1] for t in tensors]

    def back(g):
        out, pos = [], 0
        for w in widths:
            out.append(g[:, pos:pos + w])
            pos += w
        return tuple(out)

    return _emit(np.concatenate([t.values for t in tensors], axis=1), tuple(tensors), back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    av = a.values
    if av.ndim != 2 or not (0 <= start < stop <= av.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] invalid for shape {av.shape}")

    def back(g):
        ga = np.zeros_like(av)
        ga[:, start:stop] = g
        return (ga,)

    return _emit(av[:, start:stop].copy(), (a,), back)


def take_rows(m: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    mv = m.values

    def back(g):
        gm = np.zeros_like(mv)
        np.add.at(gm, idx, g)
        return (gm,)

    return _emit(mv[idx], (m,), back)


def stack_pair(a: Tensor, b: Tensor) -> Tensor:
    """Rows (B,d),(B,d) -> (B,2,d); single rows (1,d) stack to (2,d) upstream via concat_rows."""
    _same_shape(a, b, "stack_pair")
    out = np.stack([a.values, b.values], axis=1)
    return _emit(out, (a, b), lambda g: (g[:, 0, :], g[:, 1, :]))


def repeat_rows(v: Tensor, n: int) -> Tensor:
    if v.values.ndim != 2 or v.values.shape[0] != 1:
        raise ShapeError(f"repeat_rows: expected a 1-row matrix, got shape {v.values.shape}")
    return _emit(np.repeat(v.values, n, axis=0), (v,), lambda g: (g.sum(axis=0, keepdims=True),))


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    av, vv = a.values, v.values
    if av.ndim != 2 or vv.shape != (1, av.shape[1]):
        raise ShapeError(f"add_rowvec: shapes {av.shape} and {vv.shape} incompatible")
    return _emit(av + vv, (a, v), lambda g: (g, g.sum(axis=0, keepdims=True)))


def mean_rows(a: Tensor) -> Tensor:
    av = a.values
    if av.ndim != 2 or av.shape[0] < 1:
        raise ShapeError(f"mean_rows: expected a non-empty matrix, got shape {av.shape}")
    n = av.shape[0]
    return _emit(av.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.repeat(g, n, axis=0) / n,))


def sum_all(a: Tensor) -> Tensor:
    shape = a.values.shape
    return _emit(np.asarray(a.values.sum()), (a,), lambda g: (np.full(shape, float(g)),))


# ---------------------------------------------------------------------------
# Nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.values)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_values(a.values)
    return _emit(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    av = a.values
    return _emit(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


# ---------------------------------------------------------------------------
# Composite numeric ops


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    xv = x.values
    if xv.ndim != 2 or xv.shape[1] < 1:
        raise ShapeError(f"softmax_rows: expected a matrix with columns, got shape {xv.shape}")
    if np.isnan(xv).any():
        raise NumericError("softmax_rows: NaN in input")
    e = np.exp(xv - xv.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - dot) * y,)

    return _emit(y, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    xv = x.values
    if xv.ndim != 2 or xv.shape[1] < 1:
        raise ShapeError(f"layer_norm: expected a matrix, got shape {xv.shape}")
    d = xv.shape[1]
    if gain.values.shape != (d,) or shift.values.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain {gain.values.shape} / shift {shift.values.shape} do not match width {d}")
    mu = xv.mean(axis=1, keepdims=True)
    xc = xv - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * inv
    y = xhat * gain.values + shift.values

    def back(g):
        gg = g * gain.values
        gx = inv * (gg - gg.mean(axis=1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=1, keepdims=True))
        return (gx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return _emit(y, (x, gain, shift), back)


def linear(x: Tensor, w: Tensor, bias: Tensor) -> Tensor:
    """Affine map on rows: x @ w + bias."""
    xv, wv = x.values, w.values
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise ShapeError(f"linear: input {xv.shape} incompatible with weight {wv.shape}")
    if bias.values.shape != (wv.shape[1],):
        raise ShapeError(f"linear: bias {bias.values.shape} does not match weight {wv.shape}")

    def back(g):
        return (g @ wv.T, xv.T @ g, g.sum(axis=0))

    return _emit(xv @ wv + bias.values, (x, w, bias), back)


def conv_rows(stack: Tensor, kernels: Tensor, pad: int) -> Tensor:
    """1-D convolution of a two-row stack against C kernels of shape 2 x w.

    Zero padding keeps the output length equal to the input length, which
    requires pad == (w-1)/2 with odd w. A batched stack (B,2,d) yields
    (B,C,d); the plain (2,d) form yields (C,d).
    """
    kv = kernels.values
    if kv.ndim != 3 or kv.shape[1] != 2:
        raise ShapeError(f"conv_rows: kernels must be (C,2,w), got {kv.shape}")
    w = kv.shape[2]
    if w % 2 == 0:
        raise ConfigError(f"conv_rows: kernel width must be odd, got {w}")
    if pad != (w - 1) // 2:
        raise ConfigError(f"conv_rows: pad must be (w-1)/2 = {(w - 1) // 2}, got {pad}")
    sv = stack.values
    batched = sv.ndim == 3
    if batched:
        if sv.shape[1] != 2:
            raise ShapeError(f"conv_rows: batched stack must be (B,2,d), got {sv.shape}")
        sv3 = sv
    else:
        if sv.ndim != 2 or sv.shape[0] != 2:
            raise ShapeError(f"conv_rows: stack must be (2,d), got {sv.shape}")
        sv3 = sv[None]
    d = sv3.shape[2]
    padded = np.pad(sv3, ((0, 0), (0, 0), (pad, pad)))
    # windows[b, r, j, u] = stack[b, r, j + u - pad]
    windows = np.stack([padded[:, :, u:u + d] for u in range(w)], axis=-1)
    out = np.einsum("brdu,cru->bcd", windows, kv, optimize=True)

    def back(g):
        g3 = g if batched else g[None]
        gk = np.einsum("brdu,bcd->cru", windows, g3, optimize=True)
        spread = np.einsum("bcd,cru->brdu", g3, kv, optimize=True)
        gp = np.zeros_like(padded)
        for u in range(w):
            gp[:, :, u:u + d] += spread[:, :, :, u]
        gs = gp[:, :, pad:pad + d]
        return (gs if batched else gs[0], gk)

    return _emit(out if batched else out[0], (stack, kernels), back)


def cross_entropy_logits(logits: Tensor, targets) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]."""
    lv = logits.values
    if lv.ndim != 2:
        raise ShapeError(f"cross_entropy_logits: expected (n, classes), got {lv.shape}")
    idx = np.asarray(targets, dtype=np.intp)
    n, c = lv.shape
    if idx.shape != (n,):
        raise ShapeError(f"cross_entropy_logits: {n} rows but {idx.shape} targets")
    if idx.size and (idx.min() < 0 or idx.max() >= c):
        raise IndexError(f"cross_entropy_logits: target out of range for {c} classes")
    m = lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(lv - m).sum(axis=1, keepdims=True)) + m
    rows = np.arange(n)
    loss = float((lse[:, 0] - lv[rows, idx]).mean())

    def back(g):
        p = np.exp(lv - lse)
        p[rows, idx] -= 1.0
        return (float(g) * p / n,)

    return _emit(np.asarray(loss), (logits,), back)


# ---------------------------------------------------------------------------
# Verification oracle


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5) -> float:
    """Max relative disagreement between reverse-mode and central differences.

    Per coordinate: |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
    `f` must be a deterministic scalar function of `x` alone; it is
    re-evaluated 2 per coordinate with `x.values` perturbed in place.
    """
    if h <= 0:
        raise ConfigError(f"finite_diff_check: h must be positive, got {h}")
    saved_grad = x.grad
    x.grad = None
    with Tape():
        out = f(x)
        if out.values.shape != ():
            raise ContractError(f"finite_diff_check: f must return a scalar, got {out.values.shape}")
        if not np.isfinite(out.values):
            raise NumericError("finite_diff_check: non-finite objective value")
        backward(out)
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.values)).reshape(-1).copy()
    x.grad = saved_grad

    flat = x.values.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f1 = float(f(x).values)
        flat[i] = orig - h
        f2 = float(f(x).values)
        flat[i] = orig
        if not (np.isfinite(f1) and np.isfinite(f2)):
            raise NumericError("finite_diff_check: non-finite objective during perturbation")
        numeric = (f1 - f2) / (2.0 * h)
        a = analytic[i]
        worst = max(worst, abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12))
    return worst
