"""A small reverse-mode autodiff engine over numpy arrays.

Every operation returns a :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients.  Calling
:func:`backward` sorts the reachable graph topologically (this ordered list is
the tape) and walks it once in reverse, accumulating ``.grad`` on leaves that
require gradients.

Values default to float32.  ``with precision(np.float64):`` switches every
tensor created inside the block to float64, which is what the gradient checks
use.
"""

from __future__ import annotations

import contextlib
import json
import math
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_DTYPE = [np.float32]


class ShapeError(ValueError):
    pass


def default_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype):
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: tuple = (), _backward: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    size = property(lambda self: self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __matmul__ = lambda self, o: matmul(self, o)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=default_dtype()), requires_grad, name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, True, _parents=tuple(parents), _backward=backward)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2 * g * a.data,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1 + t)

    def back(g):
        dinner = _GELU_C * (1 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1 + t) + 0.5 * x * (1 - t * t) * dinner),)

    return _make(out, (a,), back)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def round_ste(a) -> Tensor:
    """Round half away from zero; the gradient passes straight through."""
    a = as_tensor(a)
    return _make(round_half_away(a.data), (a,), lambda g: (g,))


# --------------------------------------------------------------------------
# reductions and shape ops

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    basic = all(isinstance(i, (slice, int, type(Ellipsis), type(None)))
                for i in (idx if isinstance(idx, tuple) else (idx,)))

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def pad_axis(a, before: int, after: int, axis: int) -> Tensor:
    """Zero padding along one axis."""
    a = as_tensor(a)
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(before, before + a.shape[axis])
    return _make(out, (a,), lambda g: (g[tuple(sl)],))


# --------------------------------------------------------------------------
# linear algebra and layers

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), back)


def linear(x, W, b=None) -> Tensor:
    """``x @ W + b`` with ``W`` of shape ``(in, out)``."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {W.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ W.data
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {W.shape}")
        out = out + b.data
    out = out.reshape(lead + (W.shape[1],))

    def back(g):
        g2 = g.reshape(-1, W.shape[1])
        gx = (g2 @ W.data.T).reshape(x.shape)
        gW = x2.T @ g2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _make(out, parents, back)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make(out, (a,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def rms_norm(x, gain, eps: float = 1e-6) -> Tensor:
    """``x / sqrt(mean(x^2) + eps) * gain`` over the last axis."""
    x, gain = as_tensor(x), as_tensor(gain)
    if gain.shape != (x.shape[-1],):
        raise ShapeError(f"rms_norm: gain {gain.shape} does not match input {x.shape}")
    d = x.shape[-1]
    r = np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data / r
    out = xhat * gain.data

    def back(g):
        gh = g * gain.data
        gx = (gh - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / d) / r
        ggain = (g * xhat).reshape(-1, d).sum(axis=0)
        return gx, ggain

    return _make(out, (x, gain), back)


def embedding(ids, table) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: ids outside [0, {table.shape[0]})")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.ravel(), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(table.data[ids], (table,), back)


def cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``mask`` (same shape as ``targets``) selects the positions that count.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    V = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise IndexError(f"cross_entropy: targets outside [0, {V})")
    m = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise ValueError("cross_entropy: no unmasked positions")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    out = -(picked * m).sum() / count

    def back(g):
        p = np.exp(logp)
        np.put_along_axis(p, targets[..., None], np.take_along_axis(p, targets[..., None], -1) - 1.0, -1)
        return (g * p * (m[..., None] / count),)

    return _make(np.asarray(out), (logits,), back)


def mse(a, b) -> Tensor:
    return mean(square(sub(a, b)))


# --------------------------------------------------------------------------
# backward

def topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Optional[Iterable[Tensor]] = None) -> Optional[list[np.ndarray]]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    With ``params`` given, returns their gradients (zeros for parameters the
    loss does not depend on).
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    if loss.requires_grad:
        for node in reversed(topo_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.astype(node.data.dtype) if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if p.requires_grad and pg is not None:
                    k = id(p)
                    grads[k] = grads[k] + pg if k in grads else pg
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# --------------------------------------------------------------------------
# optimizer

class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, grad_clip: Optional[float] = None):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.grad_clip = grad_clip
        self.state = {"t": 0, "m": [np.zeros_like(p.data) for p in self.params],
                      "v": [np.zeros_like(p.data) for p in self.params]}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if self.grad_clip is not None:
            total = math.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
            if total > self.grad_clip:
                grads = [g * (self.grad_clip / total) for g in grads]
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state:
        state.update(t=0, m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params])
    state["t"] += 1
    t = state["t"]
    c1 = 1 - beta1 ** t
    c2 = 1 - beta2 ** t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.shape}")
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)


# --------------------------------------------------------------------------
# gradient checking

def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``x.data``."""
    g = np.zeros(x.shape, dtype=np.float64)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f().data)
        flat[i] = old - h
        fm = float(f().data)
        flat[i] = old
        g.reshape(-1)[i] = (fp - fm) / (2 * h)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max(initial=0.0))


def gradcheck(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-3) -> float:
    """Largest relative error between analytic and finite-difference gradients."""
    for x in inputs:
        x.grad = None
    backward(f())
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        worst = max(worst, max_relative_error(analytic, numeric_grad(f, x, h)))
    return worst


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, params: dict[str, Tensor], meta: Optional[dict] = None,
                    seed: Optional[int] = None, step: Optional[int] = None) -> None:
    """Write ``<path>/manifest.json`` plus one little-endian float32 file per parameter.

    The manifest lists parameter names, shapes and files, the training
    ``seed`` and ``step`` (null when unknown) and free-form ``meta``.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, t) in enumerate(params.items()):
        fname = f"{i:04d}.f32"
        (path / fname).write_bytes(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        entries.append({"name": name, "shape": list(t.shape), "file": fname})
    manifest = {"format": "motionkit-checkpoint/1", "dtype": "float32", "endianness": "little",
                "params": entries, "seed": seed, "step": step, "meta": meta or {}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"checkpoint {path}: unreadable manifest ({e})") from None
    out = {}
    for e in manifest["params"]:
        raw = (path / e["file"]).read_bytes()
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        if len(raw) != 4 * n:
            raise ValueError(f"checkpoint {path}: {e['name']} payload has {len(raw)} bytes, expected {4 * n}")
        out[e["name"]] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"]).astype(np.float32)
    return out, manifest.get("meta", {})
