"""Dense float64 tensors with a reverse-mode tape, plus Adam.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape (or with constant inputs)
they are plain numpy evaluations, which is what evaluation-mode forwards use.

    >>> w = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_all(mul(w, w))
    >>> tape.backward(loss)[w].tolist()
    [2.0, 4.0, 6.0]
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError

_ACTIVE_TAPES: list["Tape"] = []
_DEBUG = False


def set_debug(flag: bool) -> None:
    """Toggle finiteness checks on every op output."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class _Node:
    op: str
    out: Tensor
    inputs: tuple
    vjp: object


@dataclass
class Tape:
    """Ordered record of primitive ops; creation order is a topological order."""

    nodes: list = field(default_factory=list)

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.remove(self)
        return False

    def record(self, op, out, inputs, vjp):
        self.nodes.append(_Node(op, out, inputs, vjp))

    def backward(self, loss: Tensor, wrt=None, debug=False):
        """Propagate d(loss)/d(.) through the recorded nodes.

        Returns a dict mapping each requires-grad leaf to its gradient array and
        also stores it on ``leaf.grad``. Leaves listed in ``wrt`` that the loss
        does not depend on receive zeros.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        produced = {id(n.out) for n in self.nodes}
        adjoint = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        report = []
        for idx in range(len(self.nodes) - 1, -1, -1):
            node = self.nodes[idx]
            g = adjoint.pop(id(node.out), None)
            if g is None:
                continue
            if debug:
                report.append(f"{idx:5d} {node.op:<12s} {str(node.out.shape):<16s} {np.linalg.norm(g):.6e}")
            grads = node.vjp(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not isinstance(inp, Tensor) or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gi
                else:
                    adjoint[key] = gi
                if key not in produced:
                    leaves[key] = inp
        result = {}
        for key, leaf in leaves.items():
            leaf.grad = adjoint[key]
            result[leaf] = leaf.grad
        if loss.requires_grad and id(loss) not in produced:
            loss.grad = np.ones_like(loss.data)
            result[loss] = loss.grad
        for leaf in wrt or ():
            if leaf not in result:
                leaf.grad = np.zeros_like(leaf.data)
                result[leaf] = leaf.grad
        self.last_report = "\n".join(report)
        return result

    def gradient_norms(self):
        """Text dump of per-node adjoint norms from the last ``backward(debug=True)``."""
        return getattr(self, "last_report", "")


def backward(tape: Tape, loss: Tensor, wrt=None):
    return tape.backward(loss, wrt=wrt)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op, value, inputs, vjp):
    out = Tensor(value)
    if _DEBUG and not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite output from {op}")
    if _ACTIVE_TAPES and any(isinstance(i, Tensor) and i.requires_grad for i in inputs):
        out.requires_grad = True
        _ACTIVE_TAPES[-1].record(op, out, inputs, vjp)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# --- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def tanh(x):
    y = np.tanh(x.data)
    return _emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x):
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x):
    y = np.exp(x.data)
    return _emit("exp", y, (x,), lambda g: (g * y,))


def square(x):
    return mul(x, x)


# --- linear algebra ----------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        value = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", value, (a, b), vjp)


def transpose(x):
    """Swap the last two axes."""
    return _emit("transpose", np.swapaxes(x.data, -1, -2), (x,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def einsum2(subscripts, a, b):
    """Two-operand einsum without repeated indices inside an operand."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    value = np.einsum(subscripts, a.data, b.data)

    def vjp(g):
        def grad_for(target, other_sub, other, shape):
            # numpy refuses to sum broadcast (ellipsis) axes implicitly
            keep = "..." + target if "..." in out and "..." not in target else target
            return _unbroadcast(np.einsum(f"{out},{other_sub}->{keep}", g, other), shape)

        ga = grad_for(sa, sb, b.data, a.shape) if a.requires_grad else None
        gb = grad_for(sb, sa, a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _emit("einsum", value, (a, b), vjp)


# --- reductions and shape ops -------------------------------------------------

def sum_all(x):
    return _emit("sum", np.sum(x.data), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x, axis=None, keepdims=False):
    if axis is None:
        n = x.data.size
        return _emit("mean", np.mean(x.data), (x,), lambda g: (np.full(x.shape, g / n),))
    n = x.shape[axis]

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _emit("mean", np.mean(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def reshape(x, shape):
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _emit("concat", np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(x, indices, axis=0):
    idx = np.asarray(indices)

    def vjp(g):
        out = np.zeros_like(x.data)
        np.add.at(np.moveaxis(out, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _emit("take", np.take(x.data, idx, axis=axis), (x,), vjp)


# --- network primitives -------------------------------------------------------

def softmax_rows(x):
    """Softmax over the last axis with per-row max subtraction."""
    x = as_tensor(x)
    z = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _emit("softmax", y, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    value = xhat * gain.data + bias.data

    def vjp(g):
        gx_hat = g * gain.data
        d = x.shape[-1]
        gx = inv / d * (d * gx_hat - np.sum(gx_hat, axis=-1, keepdims=True)
                        - xhat * np.sum(gx_hat * xhat, axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return _emit("layer_norm", value, (x, gain, bias), vjp)


def dropout(x, p, rng, training=True):
    """Inverted dropout: kept activations scale by 1/(1-p); identity at eval."""
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(keep))


# --- optimizer ----------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    learning_rate: float = 1e-4

    @classmethod
    def zeros_like(cls, param, **kwargs):
        shape = np.shape(param)
        return cls(np.zeros(shape), np.zeros(shape), **kwargs)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.first_moment.shape != params.shape:
        raise DimensionError(
            f"adam_step: params {params.shape}, grads {grads.shape}, state {state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.epsilon, state.learning_rate)
    return new_params, new_state


def decay_learning_rate(lr: float, epoch: int, gamma: float = 5e-3) -> float:
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    return lr * math.exp(-gamma * epoch)


def numerical_gradient(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn`` w.r.t. ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
