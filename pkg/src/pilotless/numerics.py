"""
Minimal reverse-mode automatic differentiation on numpy arrays.

Every differentiable quantity is a :class:`Tensor` holding a float64 array and
a closure that pushes the upstream gradient to its parents. Complex values are
carried as separate real/imaginary tensors by callers; nothing here knows
about complex numbers.

The module also provides the Adam optimizer and a central-difference gradient
checker used as the test oracle for every network in the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its documented contract."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # Sum out axes that were broadcast in the forward pass.
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the differentiation graph.

    Args:
        value: Array-like data, stored as float64.
        requires_grad: Whether gradients should be tracked for this leaf.
        parents: Producing inputs (internal use).
        backward_fn: Maps the upstream gradient to one gradient per parent.
    """

    __slots__ = ("value", "_grad", "parents", "backward_fn", "requires_grad", "name")
    __array_priority__ = 100.0

    def __init__(self, value, requires_grad: bool = False, parents=(), backward_fn=None,
                 name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self._grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self.name = name

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, g):
        self._grad = None if g is None else np.asarray(g, dtype=np.float64)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.size == 1 else float("nan")

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn) -> Tensor:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(value)
    return Tensor(value, parents=parents, backward_fn=backward_fn)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av ** exponent, (a,), lambda g: (g * exponent * av ** (exponent - 1),))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ContractError("matmul expects operands of rank >= 2")

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _make(av @ bv, (a, b), backward)


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def _extreme(a, pick) -> Tensor:
    a = as_tensor(a)
    flat = a.value.reshape(-1)
    idx = int(pick(flat))  # argmin/argmax return the first index on ties

    def backward(g):
        out = np.zeros(flat.shape)
        out[idx] = g
        return (out.reshape(a.shape),)

    return _make(flat[idx], (a,), backward)


def tmax(a) -> Tensor:
    """Maximum over all entries; the gradient flows to the first maximizer."""
    return _extreme(a, np.argmax)


def tmin(a) -> Tensor:
    """Minimum over all entries; the gradient flows to the first minimizer."""
    return _extreme(a, np.argmin)


# ---------------------------------------------------------------- shaping

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None
                for i in parts)

    def backward(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g  # basic indexing never repeats an element
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.value[index], (a,), backward)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along one axis; repeated indices accumulate in backward."""
    a = as_tensor(a)
    indices = np.asarray(indices)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)),
                         tuple(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (out,)

    return _make(np.take(a.value, indices, axis=axis), (a,), backward)


def concatenate(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.value for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return _make(np.stack([t.value for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ---------------------------------------------------------------- elementwise

def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0  # subgradient 0 at the kink
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sin(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _make(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` with a constant floor."""
    a = as_tensor(a)
    keep = a.value > floor
    return _make(np.where(keep, a.value, floor), (a,), lambda g: (g * keep,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _make(p, (a,), backward)


# ---------------------------------------------------------------- convolution

def _conv_taps(kh: int, kw: int, dilation: tuple[int, int]):
    dh, dw = dilation
    return [(i * dh, j * dw) for i in range(kh) for j in range(kw)]


def conv2d(x, weight, bias=None, dilation: tuple[int, int] = (1, 1)) -> Tensor:
    """Zero-padded 'same' 2D convolution over channels-last input.

    Args:
        x: Input of shape (B, H, W, Cin).
        weight: Kernel of shape (kh, kw, Cin, Cout); kh and kw must be odd.
        bias: Optional bias of shape (Cout,).
        dilation: Dilation along (H, W).

    Returns:
        Tensor of shape (B, H, W, Cout).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xv, wv = x.value, weight.value
    if xv.ndim != 4 or wv.ndim != 4 or xv.shape[-1] != wv.shape[2]:
        raise ContractError(f"conv2d shape mismatch: x {xv.shape}, weight {wv.shape}")
    kh, kw, cin, cout = wv.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError("conv2d kernel sizes must be odd")
    B, H, W, _ = xv.shape
    ph, pw = dilation[0] * (kh // 2), dilation[1] * (kw // 2)
    xp = np.pad(xv, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    taps = _conv_taps(kh, kw, dilation)
    cols = np.empty((B, H, W, len(taps), cin))
    for t, (oi, oj) in enumerate(taps):
        cols[:, :, :, t, :] = xp[:, oi:oi + H, oj:oj + W, :]
    cols = cols.reshape(B * H * W, kh * kw * cin)
    wmat = wv.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(B, H, W, cout)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.value
        parents.append(bias)

    def backward(g):
        g2 = g.reshape(B * H * W, cout)
        gw = (cols.T @ g2).reshape(wv.shape)
        gcols = (g2 @ wmat.T).reshape(B, H, W, len(taps), cin)
        gxp = np.zeros(xp.shape)
        for t, (oi, oj) in enumerate(taps):
            gxp[:, oi:oi + H, oj:oj + W, :] += gcols[:, :, :, t, :]
        gx = gxp[:, ph:ph + H, pw:pw + W, :]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward)


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, params: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
    """Propagate d(root)/d(node) to every node reachable from ``root``.

    Gradients of reachable nodes are reset before accumulation, so the result
    is exactly the derivative of ``root`` rather than a running sum.

    Args:
        root: Scalar tensor.
        params: If given, their gradients are returned in order; parameters
            not reachable from ``root`` get zeros.

    Raises:
        ContractError: If ``root`` is not a scalar.
    """
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root) if root.requires_grad else [root]
    for node in order:
        node._grad = None
    if params is not None:
        for p in params:
            p._grad = None
    root._grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node._grad is None:
            continue
        grads = node.backward_fn(node._grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            if parent._grad is None:
                parent._grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent._grad = parent._grad + g
    if params is None:
        return None
    return [p.grad for p in params]


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    """Moment estimates and step counter for Adam."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence, **hyper) -> "AdamState":
        arrays = [p.value if isinstance(p, Tensor) else np.asarray(p) for p in params]
        return cls(m=[np.zeros_like(a, dtype=np.float64) for a in arrays],
                   v=[np.zeros_like(a, dtype=np.float64) for a in arrays], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update.

    Returns new parameter arrays and a new state; inputs are not modified.

    Raises:
        ContractError: On shape mismatch.
        FloatingPointError: If any gradient holds NaN or Inf.
    """
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("params, grads and optimizer moments differ in length")
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if np.shape(p) != np.shape(g) or np.shape(p) != m.shape:
            raise ContractError(f"shape mismatch for parameter {i}: "
                                f"{np.shape(p)} vs {np.shape(g)} vs {m.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise FloatingPointError(f"gradient {i} has {bad} non-finite entries")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        new_params.append(np.asarray(p, dtype=np.float64) - state.lr * mhat / (np.sqrt(vhat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float):
    """Scale gradients so their joint L2 norm is at most ``max_norm``.

    Returns:
        (clipped gradients, norm before clipping, whether clipping happened)
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return list(grads), norm, False
    scale = max_norm / norm
    return [g * scale for g in grads], norm, True


# ---------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple = field(default=())
    checked: int = 0


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                      coords: Sequence[Sequence[int]] | None = None,
                      report: bool = False):
    """Compare reverse-mode gradients against central differences.

    Args:
        f: Zero-argument callable that rebuilds the scalar objective from the
            current values of ``params``.
        params: Leaf tensors to differentiate; perturbed in place and restored.
        eps: Central-difference step.
        coords: Optional per-parameter flat indices to check (default: all).
        report: Return a :class:`GradCheckReport` instead of a float.

    Returns:
        max over checked coordinates of
        ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-12)``.
    """
    for p in params:
        p.requires_grad = True
        if not p.value.flags.c_contiguous:
            p.value = np.ascontiguousarray(p.value)
    analytic = backward(f(), params)
    worst, where, count = 0.0, (), 0
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        idx = range(flat.size) if coords is None else coords[pi]
        ga = analytic[pi].reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp = f().item()
            flat[j] = orig - eps
            fm = f().item()
            flat[j] = orig
            gfd = (fp - fm) / (2.0 * eps)
            err = abs(ga[j] - gfd) / max(abs(ga[j]), abs(gfd), 1e-12)
            count += 1
            if err > worst:
                worst, where = err, (pi, int(j), float(ga[j]), gfd)
    if report:
        return GradCheckReport(worst, where, count)
    return worst
