"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation that produces a tensor from inputs that require gradients
records its parents and a backward rule.  ``Tensor.backward`` walks the
recorded graph in reverse topological order and accumulates into ``.grad``.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand dimensions are incompatible."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- graph plumbing -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward: Callable) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def backward(self) -> None:
        """Populate ``.grad`` on every requires-grad ancestor of this scalar.

        Gradients accumulate across calls; use :func:`zero_grad` to reset.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            return

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                pending[key] = pending[key] + pg if key in pending else pg

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- introspection ----------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4, threshold=8)}{flag})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None,
            )

        return Tensor._make(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None,
            )

        return Tensor._make(a.data - b.data, (a, b), backward)

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
            )

        return Tensor._make(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None,
            )

        return Tensor._make(a.data / b.data, (a, b), backward)

    def __rtruediv__(self, other) -> "Tensor":
        return _as_tensor(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        x = self.data

        def backward(g):
            return (g * exponent * x ** (exponent - 1),)

        return Tensor._make(x**exponent, (self,), backward)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, _as_tensor(other))

    def __rmatmul__(self, other) -> "Tensor":
        return matmul(_as_tensor(other), self)

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def backward(g):
            full = np.zeros(shape, dtype=DTYPE)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(self.data[index], (self,), backward)

    # -- reductions and reshaping -----------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    # -- elementwise nonlinearities ---------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> "Tensor":
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# free functions


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim > 2 or b.ndim > 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g):
        a2 = a_data if a_data.ndim == 2 else a_data[None, :]
        b2 = b_data if b_data.ndim == 2 else b_data[:, None]
        g2 = np.reshape(g, (a2.shape[0], b2.shape[1]))
        ga = (g2 @ b2.T).reshape(a_data.shape) if a.requires_grad else None
        gb = (a2.T @ g2).reshape(b_data.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a_data @ b_data, (a, b), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack() needs at least one tensor")
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(data, tensors, backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat() needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._make(data, tensors, backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    out = matmul(x, weight)
    return out if bias is None else out + bias


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward)


def softmax_cross_entropy(logits: Tensor, label) -> Tensor:
    """Negative log-likelihood of ``label`` under ``softmax(logits)``.

    ``logits`` is (C,) with an int label, or (N, C) with N labels; the batch
    form returns the mean over rows.
    """
    if logits.shape[-1] < 2:
        raise ShapeError(f"need at least 2 classes, got logits of shape {logits.shape}")
    labels = np.atleast_1d(np.asarray(label))
    if labels.dtype.kind not in "iu":
        raise ValueError(f"labels must be integers, got {label!r}")
    num_classes = logits.shape[-1]
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"label {label!r} out of range [0, {num_classes})")

    z = logits.data if logits.ndim == 2 else logits.data[None, :]
    if len(labels) != z.shape[0]:
        raise ShapeError(f"{len(labels)} labels for {z.shape[0]} rows of logits")
    rows = np.arange(z.shape[0])
    shifted = z - z.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    total = expz.sum(axis=1, keepdims=True)
    losses = np.log(total[:, 0]) - shifted[rows, labels]
    n = z.shape[0]

    def backward(g):
        grad = expz / total
        grad[rows, labels] -= 1.0
        grad *= g / n
        return (grad.reshape(logits.shape),)

    return Tensor._make(np.asarray(losses.mean()), (logits,), backward)


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIKK kernel."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d kernel must be (O, I, K, K), got shape {kernel.shape}")
    n, c, h, w = x.shape
    o, ci, k, _ = kernel.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels but kernel expects {ci}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride={stride} padding={padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {k}x{k}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    wmat = kernel.data.reshape(o, c * k * k)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (o,):
            raise ShapeError(f"conv2d bias must have shape ({o},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gx = gk = gb = None
        if kernel.requires_grad:
            gk = (g2.T @ cols).reshape(kernel.shape)
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((n, c, hp, wp), dtype=DTYPE)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[..., i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(out, parents, backward)


def avg_pool2d(x: Tensor, factor: int) -> Tensor:
    """Mean over non-overlapping ``factor`` x ``factor`` blocks of the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"avg_pool2d needs at least 2 dims, got shape {x.shape}")
    if factor < 1:
        raise ShapeError(f"avg_pool2d factor must be >= 1, got {factor}")
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool2d: spatial dims {h}x{w} not divisible by factor {factor}")
    if factor == 1:
        return x
    blocks = x.data.reshape(*lead, h // factor, factor, w // factor, factor)
    out = blocks.mean(axis=(-3, -1))
    scale = 1.0 / (factor * factor)

    def backward(g):
        return (np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1) * scale,)

    return Tensor._make(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """NCHW -> NC by averaging over the spatial axes."""
    return x.mean(axis=(2, 3))


# ---------------------------------------------------------------------------
# recurrent cell


class LSTMParams(NamedTuple):
    """Gate weights stored input-major, gates ordered (input, forget, cell, output)."""

    w_input: Tensor  # (d, 4k)
    w_hidden: Tensor  # (k, 4k)
    bias: Tensor  # (4k,)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LSTMParams) -> tuple[Tensor, Tensor]:
    k = h_prev.shape[-1]
    d = x.shape[-1]
    if params.w_input.shape != (d, 4 * k):
        raise ShapeError(f"lstm_step: w_input {params.w_input.shape} != ({d}, {4 * k})")
    if params.w_hidden.shape != (k, 4 * k):
        raise ShapeError(f"lstm_step: w_hidden {params.w_hidden.shape} != ({k}, {4 * k})")
    if params.bias.shape != (4 * k,):
        raise ShapeError(f"lstm_step: bias {params.bias.shape} != ({4 * k},)")
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_step: cell {c_prev.shape} and hidden {h_prev.shape} differ")

    gates = matmul(x, params.w_input) + matmul(h_prev, params.w_hidden) + params.bias
    i = gates[..., :k].sigmoid()
    f = gates[..., k : 2 * k].sigmoid()
    g = gates[..., 2 * k : 3 * k].tanh()
    o = gates[..., 3 * k :].sigmoid()
    c = f * c_prev + i * g
    h = o * c.tanh()
    return h, c


def zero_grad(params) -> None:
    for p in params:
        p.grad = None
