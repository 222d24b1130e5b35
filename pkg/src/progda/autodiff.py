"""Reverse-mode automatic differentiation over dense float64 arrays.

Each operation returns a Tensor that remembers its input tensors and a
closure implementing the chain rule for that primitive. ``backward()``
on a scalar walks the recorded graph once in reverse topological order.
Gradients accumulate into ``.grad`` across backward calls until cleared
(the optimizer clears them after every step), so one graph can feed
several loss terms.

All values are float64. Tensors are never mutated by operations; only
``grad`` buffers (during backward) and ``data`` (by the optimizer) are
written in place.
"""

from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class MissingGradient(RuntimeError):
    """A parameter reached the optimizer without a populated gradient."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _shape_error(op: str, *shapes) -> ShapeError:
    described = " and ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"{op}: incompatible shapes {described}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate gradients of this scalar into every ancestor.

        The graph is retained (it lives on the tensors themselves), so a
        second backward on the same scalar adds the gradients again;
        callers are expected to clear grads between optimizer steps.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward: loss must be a scalar, got shape {tuple(self.shape)}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # Convenience arithmetic; scalars and arrays are wrapped on the fly.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, powconst(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return mean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _result(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
    return out


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", a.shape, b.shape) from None
    out = _result(data, (a, b))
    if out._parents:

        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))

        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", a.shape, b.shape) from None
    out = _result(data, (a, b))
    if out._parents:

        def _bw():
            g = out.grad
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

        out._backward = _bw
    return out


def neg(x) -> Tensor:
    x = _as_tensor(x)
    out = _result(-x.data, (x,))
    if out._parents:

        def _bw():
            _accum(x, -out.grad)

        out._backward = _bw
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    out = _result(a.data @ b.data, (a, b))
    if out._parents:

        def _bw():
            g = out.grad
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

        out._backward = _bw
    return out


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out = _result(np.exp(x.data), (x,))
    if out._parents:

        def _bw():
            _accum(x, out.grad * out.data)

        out._backward = _bw
    return out


def log(x) -> Tensor:
    x = _as_tensor(x)
    out = _result(np.log(x.data), (x,))
    if out._parents:

        def _bw():
            _accum(x, out.grad / x.data)

        out._backward = _bw
    return out


def _sigmoid_values(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = _result(_sigmoid_values(x.data), (x,))
    if out._parents:

        def _bw():
            _accum(x, out.grad * out.data * (1.0 - out.data))

        out._backward = _bw
    return out


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    out = _result(np.where(x.data > 0, x.data, slope * x.data), (x,))
    if out._parents:

        def _bw():
            _accum(x, np.where(x.data > 0, out.grad, slope * out.grad))

        out._backward = _bw
    return out


def softmax(x) -> Tensor:
    """Row-wise softmax over the last axis."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _result(y, (x,))
    if out._parents:

        def _bw():
            g = out.grad
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accum(x, y * (g - dot))

        out._backward = _bw
    return out


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise _shape_error("concat", *[p.shape for p in parts]) from None
    out = _result(data, parts)
    if out._parents:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def _bw():
            g = out.grad
            ax = axis if axis >= 0 else g.ndim + axis
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                _accum(p, g[tuple(idx)])

        out._backward = _bw
    return out


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = _result(x.data.sum(axis=axis, keepdims=keepdims), (x,))
    if out._parents:

        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.data.shape).copy())

        out._backward = _bw
    return out


def mean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    if n == 0:
        raise _shape_error("mean", x.shape)
    return mul(reduce_sum(x), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", x.shape, shape) from None
    out = _result(data, (x,))
    if out._parents:

        def _bw():
            _accum(x, out.grad.reshape(x.data.shape))

        out._backward = _bw
    return out


def powconst(x, p: float) -> Tensor:
    """Elementwise x**p for a constant exponent."""
    x = _as_tensor(x)
    p = float(p)
    if p == 0.0:
        return _result(np.ones_like(x.data), ())
    out = _result(x.data**p, (x,))
    if out._parents:

        def _bw():
            _accum(x, out.grad * p * x.data ** (p - 1.0))

        out._backward = _bw
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only strictly inside."""
    x = _as_tensor(x)
    out = _result(np.clip(x.data, lo, hi), (x,))
    if out._parents:
        mask = (x.data > lo) & (x.data < hi)

        def _bw():
            _accum(x, out.grad * mask)

        out._backward = _bw
    return out


def dropout(x, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return _as_tensor(x)
    x = _as_tensor(x)
    keep = rng.random(x.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = _result(x.data * keep * scale, (x,))
    if out._parents:

        def _bw():
            _accum(x, out.grad * keep * scale)

        out._backward = _bw
    return out


def grad_reverse(x, coefficient: float) -> Tensor:
    """Identity forward; backward multiplies the gradient by -coefficient."""
    if coefficient < 0:
        raise ValueError(f"grad_reverse: coefficient must be >= 0, got {coefficient}")
    x = _as_tensor(x)
    out = _result(x.data, (x,))
    if out._parents:

        def _bw():
            _accum(x, -coefficient * out.grad)

        out._backward = _bw
    return out


def pairwise_abs_diff(v) -> Tensor:
    """All-pairs elementwise |v_i - v_j| for a row matrix, shape (N*N, d)."""
    v = _as_tensor(v)
    if v.ndim != 2:
        raise _shape_error("pairwise_abs_diff", v.shape)
    n, d = v.shape
    diff = v.data[:, None, :] - v.data[None, :, :]
    out = _result(np.abs(diff).reshape(n * n, d), (v,))
    if out._parents:
        sign = np.sign(diff)

        def _bw():
            g = out.grad.reshape(n, n, d) * sign
            _accum(v, g.sum(axis=1) - g.sum(axis=0))

        out._backward = _bw
    return out


def pairwise_l2_norm(v) -> Tensor:
    """All-pairs Euclidean distance between rows, shape (N*N, 1)."""
    v = _as_tensor(v)
    if v.ndim != 2:
        raise _shape_error("pairwise_l2_norm", v.shape)
    n, d = v.shape
    diff = v.data[:, None, :] - v.data[None, :, :]
    norms = np.sqrt((diff**2).sum(axis=-1))
    out = _result(norms.reshape(n * n, 1), (v,))
    if out._parents:
        unit = diff / np.maximum(norms, 1e-300)[:, :, None]

        def _bw():
            g = out.grad.reshape(n, n)[:, :, None] * unit
            _accum(v, g.sum(axis=1) - g.sum(axis=0))

        out._backward = _bw
    return out


def gather_rows(x, index) -> Tensor:
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    out = _result(x.data[index], (x,))
    if out._parents:

        def _bw():
            buf = np.zeros_like(x.data)
            np.add.at(buf, index, out.grad)
            _accum(x, buf)

        out._backward = _bw
    return out


def take_rc(x, rows, cols) -> Tensor:
    """Pick x[rows[k], cols[k]] for each k, returning a 1-D tensor."""
    x = _as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if x.ndim != 2 or rows.shape != cols.shape:
        raise _shape_error("take_rc", x.shape, rows.shape)
    out = _result(x.data[rows, cols], (x,))
    if out._parents:

        def _bw():
            buf = np.zeros_like(x.data)
            np.add.at(buf, (rows, cols), out.grad)
            _accum(x, buf)

        out._backward = _bw
    return out


def submatrix(x, rows, cols) -> Tensor:
    """The cross product x[rows][:, cols] as a dense block."""
    x = _as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if x.ndim != 2:
        raise _shape_error("submatrix", x.shape)
    ix = np.ix_(rows, cols)
    out = _result(x.data[ix], (x,))
    if out._parents:

        def _bw():
            buf = np.zeros_like(x.data)
            np.add.at(buf, ix, out.grad)
            _accum(x, buf)

        out._backward = _bw
    return out


class Adam:
    """Adam with decoupled weight decay over a named parameter set.

    Moment buffers persist across steps; ``step()`` clears the gradients
    it consumed. A parameter without a gradient is an error, named.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float,
        weight_decay: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise MissingGradient(
                f"optimizer step with no gradient for parameter(s): {', '.join(sorted(missing))}"
            )
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            m = self._m[k]
            v = self._v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / b1c) / (np.sqrt(v / b2c) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update
            p.grad = None

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}/t": np.array([float(self.t)])}
        for k in self.params:
            out[f"{prefix}/m/{k}"] = self._m[k]
            out[f"{prefix}/v/{k}"] = self._v[k]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]):
        self.t = int(arrays[f"{prefix}/t"][0])
        for k in self.params:
            self._m[k] = np.array(arrays[f"{prefix}/m/{k}"], dtype=np.float64)
            self._v[k] = np.array(arrays[f"{prefix}/v/{k}"], dtype=np.float64)
