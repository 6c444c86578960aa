"""Dense float64 tensors with tape-based reverse-mode differentiation.

The engine is deliberately small: row-major numpy storage, a handful of
operations with hand-written backward rules, and a backward sweep that
walks nodes in reverse creation order. There is no broadcasting beyond
the row-wise affine inside layer_norm, no higher-order gradients, and no
dtype other than float64. Frozen leaves never get gradient storage.

matmul keeps an explicit loop over the inner dimension so its result is
bit-identical to a naive triple loop accumulating k left-to-right; a BLAS
call would not honor that accumulation order.
"""

from __future__ import annotations

import itertools
import threading
from collections.abc import Callable, Sequence

import numpy as np

from .errors import ShapeError

_ids = itertools.count()

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables tape recording (eval / finite differences)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array plus the bookkeeping needed for the backward sweep.

    Leaves are built directly (learnable iff requires_grad=True); non-leaf
    nodes are created through the op functions below, which attach parents
    and a backward rule. `grad` stays None until backward reaches the node.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("leaf tensor contains NaN or Inf")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], None] | None = None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant copy, cut off from the graph."""
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", learnable" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"


def from_op(data: np.ndarray, parents: Sequence[Tensor],
            bw: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result. Records on the tape only if recording is on and
    some parent participates in a gradient; otherwise returns a constant.

    This is also the extension hook for fused ops defined outside this
    module (cosine logits, masked cross-entropy): `bw` receives the output
    gradient and must call `accumulate` on whichever parents need it.
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out._id = next(_ids)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._bw = bw
    else:
        out.requires_grad = False
        out._parents = ()
        out._bw = None
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution to `t`; frozen tensors get no storage."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss, in reverse node-creation order.

    Creation order is a topological order (inputs always precede outputs),
    so walking it backwards guarantees every node has its full gradient
    before its rule fires. Fan-out contributions are summed in sweep order,
    which is fixed, making repeated runs bit-identical.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: list[Tensor] = []
    seen: set[int] = {id(loss)}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._bw is not None:
            nodes.append(t)
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                seen.add(id(p))
                stack.append(p)
    nodes.sort(key=lambda t: t._id, reverse=True)
    accumulate(loss, np.ones_like(loss.data))
    for t in nodes:
        t._bw(t.grad)


def grads(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Backward pass returning one gradient per param; disconnected
    learnable params come back as exact zeros."""
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in params]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _ordered_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Accumulates over k in ascending order: bit-equal to the naive triple
    # loop `for i: for j: for k: c[i,j] += a[i,k]*b[k,j]`.
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n), dtype=np.float64)
    tmp = np.empty((m, n), dtype=np.float64)
    for kk in range(k):
        np.multiply(a[:, kk, None], b[kk, :], out=tmp)
        out += tmp
    return out


def _ordered_matmul3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Slice-wise product of [G,m,k] x [G,k,n], same ordered-k accumulation
    # per slice as the 2-d kernel.
    g, m, k = a.shape
    n = b.shape[2]
    out = np.zeros((g, m, n), dtype=np.float64)
    tmp = np.empty((g, m, n), dtype=np.float64)
    for kk in range(k):
        np.multiply(a[:, :, kk, None], b[:, kk, None, :], out=tmp)
        out += tmp
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {list(a.shape)} x {list(b.shape)}")
    out_data = _ordered_matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate(a, _ordered_matmul(g, bd.T))
        if b.requires_grad:
            accumulate(b, _ordered_matmul(ad.T, g))

    return from_op(out_data, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes {list(a.shape)} vs {list(b.shape)}")
    def bw(g: np.ndarray) -> None:
        accumulate(a, g)
        accumulate(b, g)
    return from_op(a.data + b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product (same shapes)."""
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes {list(a.shape)} vs {list(b.shape)}")
    ad, bd = a.data, b.data
    def bw(g: np.ndarray) -> None:
        accumulate(a, g * bd)
        accumulate(b, g * ad)
    return from_op(ad * bd, (a, b), bw)


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """scale * x + shift with python-float coefficients."""
    def bw(g: np.ndarray) -> None:
        accumulate(x, g * scale)
    return from_op(x.data * scale + shift, (x,), bw)


def tsum(x: Tensor) -> Tensor:
    def bw(g: np.ndarray) -> None:
        accumulate(x, np.full_like(x.data, g.reshape(())))
    return from_op(np.sum(x.data), (x,), bw)


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    def bw(g: np.ndarray) -> None:
        accumulate(x, np.full_like(x.data, g.reshape(()) / n))
    return from_op(np.sum(x.data) / n, (x,), bw)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction for stability."""
    if x.data.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs a 2-d tensor with columns, got {list(x.shape)}")
    shifted = x.data - np.max(x.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=1, keepdims=True)

    def bw(g: np.ndarray) -> None:
        # per row: dx = y * (g - <g, y>)
        dot = np.sum(g * y, axis=1, keepdims=True)
        accumulate(x, y * (g - dot))

    return from_op(y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization followed by the affine gamma*xhat + beta."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    if x.data.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm shapes x={list(x.shape)} gamma={list(gamma.shape)} beta={list(beta.shape)}")
    mu = np.mean(x.data, axis=1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gamma.data + beta.data

    def bw(g: np.ndarray) -> None:
        if gamma.requires_grad:
            accumulate(gamma, np.sum(g * xhat, axis=0))
        if beta.requires_grad:
            accumulate(beta, np.sum(g, axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = np.mean(gx, axis=1, keepdims=True)
            m2 = np.mean(gx * xhat, axis=1, keepdims=True)
            accumulate(x, inv * (gx - m1 - xhat * m2))

    return from_op(y, (x, gamma, beta), bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximation GELU, the ViT convention."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def bw(g: np.ndarray) -> None:
        sech2 = 1.0 - t * t
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        accumulate(x, g * (0.5 * (1.0 + t) + 0.5 * xd * sech2 * dinner))

    return from_op(y, (x,), bw)


def concat_rows(*parts: Tensor) -> Tensor:
    """Stack 2-d tensors along rows; gradients split back by row extent."""
    if len(parts) < 1:
        raise ShapeError("concat_rows needs at least one tensor")
    cols = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != cols:
            raise ShapeError(
                f"concat_rows column mismatch: {[list(p.shape) for p in parts]}")
    sizes = [p.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)

    def bw(g: np.ndarray) -> None:
        ofs = 0
        for p, r in zip(parts, sizes):
            accumulate(p, g[ofs:ofs + r])
            ofs += r

    return from_op(out, tuple(parts), bw)


def concat_cols(*parts: Tensor) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError(
                f"concat_cols row mismatch: {[list(p.shape) for p in parts]}")
    sizes = [p.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)

    def bw(g: np.ndarray) -> None:
        ofs = 0
        for p, c in zip(parts, sizes):
            accumulate(p, g[:, ofs:ofs + c])
            ofs += c

    return from_op(out, tuple(parts), bw)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= start <= stop <= x.shape[0]):
        raise ShapeError(f"slice_rows [{start}:{stop}] of {list(x.shape)}")

    def bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[start:stop] = g
        accumulate(x, full)

    return from_op(x.data[start:stop].copy(), (x,), bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= start <= stop <= x.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] of {list(x.shape)}")

    def bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        accumulate(x, full)

    return from_op(x.data[:, start:stop].copy(), (x,), bw)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-d tensor, got {list(x.shape)}")
    def bw(g: np.ndarray) -> None:
        accumulate(x, g.T)
    return from_op(x.data.T.copy(), (x,), bw)


# ---------------------------------------------------------------------------
# batched three-axis ops (attention runs over stacked sample x head slices)
# ---------------------------------------------------------------------------


def matmul3(a: Tensor, b: Tensor) -> Tensor:
    """Slice-wise matrix product: [G,m,k] x [G,k,n] -> [G,m,n]."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] \
            or a.shape[2] != b.shape[1]:
        raise ShapeError(f"matmul3 shapes {list(a.shape)} x {list(b.shape)}")
    ad_, bd = a.data, b.data
    out = _ordered_matmul3(ad_, bd)

    def bw(g: np.ndarray) -> None:
        if a.requires_grad:
            accumulate(a, _ordered_matmul3(g, bd.transpose(0, 2, 1)))
        if b.requires_grad:
            accumulate(b, _ordered_matmul3(ad_.transpose(0, 2, 1), g))

    return from_op(out, (a, b), bw)


def transpose3(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"transpose3 needs a 3-d tensor, got {list(x.shape)}")
    def bw(g: np.ndarray) -> None:
        accumulate(x, g.transpose(0, 2, 1))
    return from_op(np.ascontiguousarray(x.data.transpose(0, 2, 1)), (x,), bw)


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted; any rank."""
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def bw(g: np.ndarray) -> None:
        dot = np.sum(g * y, axis=-1, keepdims=True)
        accumulate(x, y * (g - dot))

    return from_op(y, (x,), bw)


def gather3(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """out[g,i,j] = x[rows[g,i], cols[g,j]] for a 2-d x.

    Backward scatter-adds, so repeated indices are fine (shared prompts
    fan out across samples and heads).
    """
    if x.data.ndim != 2:
        raise ShapeError(f"gather3 needs a 2-d source, got {list(x.shape)}")
    r = rows[:, :, None]
    c = cols[:, None, :]

    def bw(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        np.add.at(full, (r, c), g)
        accumulate(x, full)

    return from_op(x.data[r, c], (x,), bw)


def scatter3(x: Tensor, rows: np.ndarray, cols: np.ndarray,
             shape: tuple[int, int]) -> Tensor:
    """Inverse of gather3 for disjoint targets: places x[g] slices into a
    zeros 2-d array. Every (row, col) cell must be written at most once."""
    if x.data.ndim != 3:
        raise ShapeError(f"scatter3 needs a 3-d source, got {list(x.shape)}")
    r = rows[:, :, None]
    c = cols[:, None, :]
    out = np.zeros(shape, dtype=np.float64)
    out[r, c] = x.data

    def bw(g: np.ndarray) -> None:
        accumulate(x, g[r, c])

    return from_op(out, (x,), bw)


def concat3_mid(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along axis 1: [G,p,n] + [G,q,n] -> [G,p+q,n]."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[0] != b.shape[0] \
            or a.shape[2] != b.shape[2]:
        raise ShapeError(f"concat3_mid shapes {list(a.shape)} + {list(b.shape)}")
    p = a.shape[1]

    def bw(g: np.ndarray) -> None:
        accumulate(a, g[:, :p])
        accumulate(b, g[:, p:])

    return from_op(np.concatenate([a.data, b.data], axis=1), (a, b), bw)


# ---------------------------------------------------------------------------
# finite-difference harness
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor],
               step: float = 1e-3) -> float:
    """Max relative error between autodiff and central finite differences.

    `f` must be a pure function of the params' current data. Only learnable
    params are checked; frozen tensors are excluded from the report. The
    finite-difference side evaluates the forward path alone, so it stays
    independent of every backward rule it is checking.
    """
    if step <= 0:
        raise ValueError("grad_check step must be > 0")
    checked = [p for p in params if p.requires_grad]
    auto = grads(f(), checked)
    worst = 0.0
    for p, a in zip(checked, auto):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with no_grad():
                up = f().item()
            flat[i] = orig - step
            with no_grad():
                down = f().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * step)
            err = abs(aflat[i] - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    return worst
