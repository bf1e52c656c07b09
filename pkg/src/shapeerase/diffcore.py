"""Minimal reverse-mode differentiation over float64 numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` together with the parents it was computed
from and a closure mapping the output adjoint to parent adjoints.  Graphs are
built eagerly by calling the primitives below and differentiated with
:func:`grad` or :func:`value_and_grad`.  Nothing is mutated during the backward
pass, so a graph can be differentiated several times with respect to
different outputs (the trainer relies on this).

Broadcasting is limited on purpose: elementwise ops need equal shapes, except
that a 1-D bias may be added row-wise to a 2-D array and Python scalars may be
used as constants.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "as_tensor",
    "constant",
    "detach",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "relu",
    "exp",
    "log",
    "sqrt",
    "absolute",
    "tsum",
    "mean",
    "sq_norm",
    "l1_norm",
    "log_softmax",
    "batch_norm",
    "masked_max",
    "masked_min",
    "pairwise_sqdist",
    "transpose",
    "take_rows",
    "concat",
    "grad",
    "value_and_grad",
    "grad_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for a primitive."""

    def __init__(self, op: str, a: tuple, b: tuple, detail: str = ""):
        self.op, self.shapes = op, (tuple(a), tuple(b))
        msg = f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class NonFiniteError(FloatingPointError):
    """A forward value contains NaN or Inf."""

    def __init__(self, op: str, name: Optional[str] = None):
        self.op, self.node = op, name
        where = f"node '{name}' ({op})" if name else f"node ({op})"
        super().__init__(f"non-finite value produced at {where}")


class Tensor:
    """A node of the differentiation graph."""

    __slots__ = ("value", "parents", "backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward=None,
                 op: str = "leaf", name: Optional[str] = None):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op, name)
        self.value = value
        self.parents = tuple(parents)
        self.backward = backward
        self.op = op
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def constant(x, name: Optional[str] = None) -> Tensor:
    return Tensor(x, op="const", name=name)


def detach(x) -> Tensor:
    """Stop-gradient: same value, no parents."""
    return Tensor(as_tensor(x).value, op="detach")


def _is_scalar(x) -> bool:
    return isinstance(x, (int, float, np.floating, np.integer))


# --- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return Tensor(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeError("transpose", a.shape, (), "expected a 2-D array")
    return Tensor(a.value.T, (a,), lambda g: (g.T,), "transpose")


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    if _is_scalar(b):
        a = as_tensor(a)
        return Tensor(a.value + b, (a,), lambda g: (g,), "add")
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return Tensor(a.value + b.value, (a, b), lambda g: (g, g), "add")
    if a.value.ndim == 2 and b.value.ndim == 1 and b.shape[0] == a.shape[1]:
        return Tensor(a.value + b.value, (a, b), lambda g: (g, g.sum(axis=0)), "add_bias")
    raise ShapeError("add", a.shape, b.shape)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(-a.value, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    if _is_scalar(a):
        return add(neg(b), a)
    return add(a, -b if _is_scalar(b) else neg(b))


def mul(a, b) -> Tensor:
    if _is_scalar(b):
        a, c = as_tensor(a), float(b)
        return Tensor(a.value * c, (a,), lambda g: (g * c,), "scale")
    if _is_scalar(a):
        return mul(b, a)
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    av, bv = a.value, b.value
    return Tensor(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.value > 0
    return Tensor(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return Tensor(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.value <= 0):
        raise NonFiniteError("log")
    av = a.value
    return Tensor(np.log(av), (a,), lambda g: (g / av,), "log")


def sqrt(a) -> Tensor:
    """Square root whose derivative at exactly 0 is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt(a.value)
    pos = out > 0
    safe = np.where(pos, out, 1.0)
    return Tensor(out, (a,), lambda g: (np.where(pos, g / (2.0 * safe), 0.0),), "sqrt")


def absolute(a) -> Tensor:
    """|x| with subgradient 0 at 0."""
    a = as_tensor(a)
    s = np.sign(a.value)
    return Tensor(np.abs(a.value), (a,), lambda g: (g * s,), "abs")


# --- reductions -----------------------------------------------------------

def tsum(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        return Tensor(a.value.sum(), (a,), lambda g: (np.full(shape, float(g)),), "sum")

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor(a.value.sum(axis=axis), (a,), back, "sum")


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / count)


def sq_norm(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return Tensor(np.sum(av * av), (a,), lambda g: (2.0 * g * av,), "sq_norm")


def l1_norm(a) -> Tensor:
    return tsum(absolute(a))


def masked_max(a, mask, axis: int = 1) -> Tensor:
    """Row-wise (``axis=1``) or column-wise max over entries where ``mask`` is true.

    The gradient flows to the first maximising entry.
    """
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape or a.value.ndim != 2:
        raise ShapeError("masked_max", a.shape, mask.shape)
    if not np.all(mask.any(axis=axis)):
        empty = int(np.flatnonzero(~mask.any(axis=axis))[0])
        raise ValueError(f"masked_max: slice {empty} along axis {axis} has no selected entries")
    filled = np.where(mask, a.value, -np.inf)
    idx = np.argmax(filled, axis=axis)
    out = np.take_along_axis(filled, np.expand_dims(idx, axis), axis).squeeze(axis)
    shape = a.shape

    def back(g):
        da = np.zeros(shape)
        np.put_along_axis(da, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (da,)

    return Tensor(out, (a,), back, "masked_max")


def masked_min(a, mask, axis: int = 1) -> Tensor:
    return neg(masked_max(neg(a), mask, axis))


# --- fused primitives -----------------------------------------------------

def log_softmax(a) -> Tensor:
    """Row-wise log-softmax of a 2-D array."""
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeError("log_softmax", a.shape, (), "expected (batch, classes)")
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return Tensor(out, (a,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),), "log_softmax")


def pairwise_sqdist(a) -> Tensor:
    """Squared Euclidean distances between all rows, exactly 0 on the diagonal."""
    a = as_tensor(a)
    if a.value.ndim != 2:
        raise ShapeError("pairwise_sqdist", a.shape, (), "expected (batch, dim)")
    x = a.value
    diff = x[:, None, :] - x[None, :, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)

    def back(g):
        s = g + g.T
        return (2.0 * (s.sum(axis=1)[:, None] * x - s @ x),)

    return Tensor(out, (a,), back, "pairwise_sqdist")


def batch_norm(x, gamma, beta, *, running_mean=None, running_var=None,
               training: bool = True, eps: float = 1e-5):
    """Per-feature normalisation of a (batch, features) array.

    In training mode the batch mean and biased variance are used and returned
    alongside the output as ``(out, batch_mean, batch_var_unbiased)`` so the
    caller can update running statistics.  In eval mode the running statistics
    are constants and ``(out, None, None)`` is returned.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.value.ndim != 2:
        raise ShapeError("batch_norm", x.shape, gamma.shape, "expected (batch, features)")
    d = x.shape[1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("batch_norm", x.shape, gamma.shape)
    xv, gv = x.value, gamma.value
    if training:
        b = xv.shape[0]
        mu = xv.mean(axis=0)
        var = xv.var(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xv - mu) * inv

        def back(g):
            dgamma = (g * xhat).sum(axis=0)
            dbeta = g.sum(axis=0)
            dxhat = g * gv
            dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
            return dx, dgamma, dbeta

        out = Tensor(xhat * gv + beta.value, (x, gamma, beta), back, "batch_norm")
        unbiased = var * b / (b - 1) if b > 1 else var
        return out, mu, unbiased

    if running_mean is None or running_var is None:
        raise ValueError("batch_norm: eval mode needs running statistics")
    inv = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    xhat = (xv - running_mean) * inv

    def back_eval(g):
        return g * gv * inv, (g * xhat).sum(axis=0), g.sum(axis=0)

    out = Tensor(xhat * gv + beta.value, (x, gamma, beta), back_eval, "batch_norm_eval")
    return out, None, None


# --- structural -----------------------------------------------------------

def take_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def back(g):
        da = np.zeros(shape)
        np.add.at(da, idx, g)
        return (da,)

    return Tensor(a.value[idx], (a,), back, "take_rows")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    ref = parts[0].shape
    for p in parts[1:]:
        if p.value.ndim != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(p.shape, ref)) if i != axis):
            raise ShapeError("concat", ref, p.shape)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return Tensor(np.concatenate([p.value for p in parts], axis=axis), parts,
                  lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# --- differentiation ------------------------------------------------------

def _topo_order(output: Tensor) -> List[Tensor]:
    order, seen = [], set()
    stack = [(output, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(output: Tensor, wrt: Iterable[Tensor]) -> List[np.ndarray]:
    """Gradients of scalar ``output`` with respect to each node in ``wrt``.

    Nodes that do not influence ``output`` get a zero array.
    """
    wrt = list(wrt)
    if output.value.size != 1:
        raise ShapeError("grad", output.shape, (), "output must be a scalar")
    keep = {id(t) for t in wrt}
    adj: Dict[int, np.ndarray] = {id(output): np.ones_like(output.value)}
    for node in reversed(_topo_order(output)):
        key = id(node)
        g = adj.get(key) if key in keep or not node.parents else adj.pop(key, None)
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg
    return [adj.get(id(t), np.zeros_like(t.value)).reshape(t.shape) for t in wrt]


Objective = Callable[[Mapping[str, Tensor]], Tensor]


def value_and_grad(objective: Objective, params: Mapping[str, np.ndarray]):
    """Evaluate ``objective(leaves)`` and its gradient for every named parameter.

    Returns ``(value, grads)`` with ``grads[name]`` shaped like ``params[name]``.
    """
    leaves = {k: Tensor(v, op="param", name=k) for k, v in params.items()}
    out = objective(leaves)
    if not isinstance(out, Tensor) or out.value.size != 1:
        raise ShapeError("value_and_grad", getattr(out, "shape", ()), (), "objective must be scalar")
    grads = grad(out, leaves.values())
    return float(out.value), dict(zip(leaves.keys(), grads))


def grad_check(objective: Objective, params: Mapping[str, np.ndarray], eps: float = 1e-6,
               names: Optional[Iterable[str]] = None) -> Dict[str, float]:
    """Max relative error per parameter between analytic and central-difference gradients.

    Relative error is ``|a - f| / max(|a|, |f|, 1e-8)``.
    """
    if eps <= 0:
        raise ValueError(f"grad_check: eps must be positive, got {eps}")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, analytic = value_and_grad(objective, base)

    def f(p):
        return float(objective({k: Tensor(v, op="param", name=k) for k, v in p.items()}).value)

    report = {}
    for name in (names if names is not None else base):
        arr = base[name]
        worst = 0.0
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + eps
            hi = f(base)
            arr[i] = orig - eps
            lo = f(base)
            arr[i] = orig
            fd = (hi - lo) / (2 * eps)
            a = analytic[name][i]
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-8))
        report[name] = worst
    return report
