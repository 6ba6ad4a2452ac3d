"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable op that touches a tensor with ``requires_grad`` appends a
node to the calling thread's tape.  :func:`backward` walks that tape in exact
reverse append order, accumulates gradients into leaf tensors, and frees the
tape.  Gradients are never zeroed implicitly; call :meth:`Tensor.zero_grad`.

Broadcasting follows the trailing-dimension rule: shapes are right-aligned,
missing leading dims count as extent 1, and an extent-1 dim stretches to match
the other operand.  Anything else raises :class:`ShapeError`.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ParameterError, ShapeError

__all__ = [
    "Tensor", "Tape", "RngStream", "GradCheckReport",
    "create", "tensor", "matmul", "add", "sub", "mul", "ewise", "activation",
    "sigmoid", "tanh", "relu", "softmax", "layer_norm", "reduce", "sum", "mean",
    "reshape", "transpose", "concat", "stack", "slice_axis", "dropout",
    "backward", "grad_check", "no_grad", "is_grad_enabled", "active_tape",
    "reset_tape", "inject_fault",
]

LAYER_NORM_EPS = 1e-5

_local = threading.local()
# op kinds whose backward rule is sign-flipped (verification negative control)
_FAULTS: set[str] = set()


class Tape:
    """Append-only record of differentiable ops for one thread."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def append(self, op, inputs, backward_fn, output):
        node = _Node(len(self.nodes), op, tuple(inputs), backward_fn, output, self)
        self.nodes.append(node)
        return node

    def clear(self):
        for node in self.nodes:
            node.output._node = None
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def dump(self) -> str:
        """Line-oriented listing: ``node_id op input_ids``; leaves print as ``leaf``."""
        lines = []
        for node in self.nodes:
            ids = []
            for t in node.inputs:
                ids.append(str(t._node.index) if t._node is not None and t._node.tape is self else "leaf")
            lines.append(f"{node.index} {node.op} {','.join(ids)}")
        return "\n".join(lines)


class _Node:
    __slots__ = ("index", "op", "inputs", "backward_fn", "output", "tape")

    def __init__(self, index, op, inputs, backward_fn, output, tape):
        self.index = index
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.output = output
        self.tape = tape


def active_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def reset_tape():
    """Drop every recorded node on this thread without computing gradients."""
    active_tape().clear()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


@contextmanager
def inject_fault(op: str):
    """Negate the backward rule of ``op`` while the context is active."""
    _FAULTS.add(op)
    try:
        yield
    finally:
        _FAULTS.discard(op)


def _check_shape(shape) -> tuple[int, ...]:
    try:
        dims = tuple(int(d) for d in shape)
    except TypeError:
        raise ShapeError(f"shape must be a sequence of ints, got {shape!r}") from None
    if len(dims) == 0 or any(d < 1 for d in dims):
        raise ShapeError(f"invalid shape {shape!r}: rank >= 1 and every dim >= 1 required")
    return dims


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeError("tensors must have at least one element")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._node = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has {self.data.size}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.requires_grad:
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            else:
                self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag}, data={np.array2string(self.data, threshold=8)})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; multiply by a constant reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=np.float64))


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _record(out: np.ndarray, inputs: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    result = Tensor._wrap(out)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result._node = active_tape().append(op, inputs, backward_fn, result)
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, d in enumerate(shape):
        if d == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# random streams


class RngStream:
    """Seeded, splittable random stream backed by numpy's Philox4x64-10.

    Philox is counter-based, so a stream's output depends only on its seed
    and the sequence of draws made from it.  :meth:`split` derives independent
    child streams through ``SeedSequence.spawn``.
    """

    algorithm = "philox4x64-10"

    def __init__(self, seed: int, _seed_seq: np.random.SeedSequence | None = None):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._seq = _seed_seq if _seed_seq is not None else np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self, n: int = 2) -> list["RngStream"]:
        return [RngStream(self.seed, s) for s in self._seq.spawn(n)]

    def uniform(self, low, high, shape):
        return self._gen.uniform(low, high, size=shape)

    def normal(self, mean, std, shape):
        return self._gen.normal(mean, std, size=shape)

    def random(self, shape):
        return self._gen.random(size=shape)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def exponential(self, scale, shape):
        return self._gen.exponential(scale, size=shape)

    def bernoulli(self, p, shape):
        return self._gen.random(size=shape) < p


def create(shape, init: str = "zeros", *, value: float = 0.0, low: float = 0.0, high: float = 1.0,
           mean: float = 0.0, std: float = 1.0, rng: RngStream | None = None,
           requires_grad: bool = False) -> Tensor:
    """Allocate a tensor filled by ``init``: zeros, constant, uniform or gaussian."""
    dims = _check_shape(shape)
    if init == "zeros":
        data = np.zeros(dims)
    elif init == "constant":
        data = np.full(dims, float(value))
    elif init in ("uniform", "gaussian"):
        if rng is None:
            raise ParameterError(f"{init} init needs an RngStream")
        if init == "uniform":
            if not low < high:
                raise ParameterError(f"uniform init needs low < high, got ({low}, {high})")
            data = rng.uniform(low, high, dims)
        else:
            if not std > 0:
                raise ParameterError(f"gaussian init needs std > 0, got {std}")
            data = rng.normal(mean, std, dims)
    else:
        raise ParameterError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# arithmetic


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), "add",
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), "sub",
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad * bd, (a, b), "mul", backward_fn)


def ewise(op: str, a, b) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ParameterError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two dims; leading dims broadcast.

    ``[m,k] @ [k,n]``, ``[B,m,k] @ [B,k,n]`` and ``[..., m,k] @ [k,n]`` are all
    accepted.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {list(a.shape)} and {list(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {list(a.shape)} @ {list(b.shape)}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch dims do not broadcast: {list(a.shape)} @ {list(b.shape)}") from None
    ad, bd = a.data, b.data

    def backward_fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _record(out, (a, b), "matmul", backward_fn)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # split by sign so exp never overflows
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ez = np.exp(xd[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _record(out, (x,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _record(out, (x,), "tanh", lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    active = x.data > 0
    return _record(np.where(active, x.data, 0.0), (x,), "relu", lambda g: (g * active,))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ParameterError(f"unknown activation {kind!r}") from None


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), "softmax", backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize each last-dim slice to zero mean / unit variance, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if eps <= 0:
        raise ParameterError("layer_norm eps must be > 0")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape [{d}], got {list(gain.shape)}, {list(bias.shape)}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def backward_fn(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record(out, (x, gain, bias), "layer_norm", backward_fn)


# ---------------------------------------------------------------------------
# reductions and data movement


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def reduce(kind: str, x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axis`` (int, tuple, or None for all elements)."""
    x = _as_tensor(x)
    if kind not in ("sum", "mean"):
        raise ParameterError(f"unknown reduction {kind!r}")
    if axis is None:
        axes = tuple(range(x.ndim))
    else:
        axes = tuple(sorted({_norm_axis(a, x.ndim) for a in np.atleast_1d(axis)}))
    count = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.sum(axis=axes, keepdims=True)
    if kind == "mean":
        out = out / count
    kept_shape = out.shape
    if not keepdims:
        out = out.reshape([d for i, d in enumerate(x.shape) if i not in axes] or [1])
    shape = x.shape
    scale = 1.0 / count if kind == "mean" else 1.0

    def backward_fn(g):
        return (np.broadcast_to(g.reshape(kept_shape) * scale, shape).copy(),)

    return _record(out, (x,), kind, backward_fn)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return reduce("sum", x, axis, keepdims)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return reduce("mean", x, axis, keepdims)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(int(d) for d in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {list(x.shape)} to {list(shape)}") from None
    if out.ndim == 0 or out.size != x.size:
        raise ShapeError(f"cannot reshape {list(x.shape)} to {list(shape)}")
    src = x.shape
    return _record(out, (x,), "reshape", lambda g: (g.reshape(src),))


def transpose(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(_norm_axis(a, x.ndim) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(x.data, axes), (x,), "transpose",
                   lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = _norm_axis(axis, ndim)
    for t in tensors:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: shapes {[list(t.shape) for t in tensors]} differ off axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward_fn(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack needs at least one tensor")
    if any(t.shape != tensors[0].shape for t in tensors):
        raise ShapeError(f"stack: shapes {[list(t.shape) for t in tensors]} differ")
    axis = _norm_axis(axis, tensors[0].ndim + 1)
    n = len(tensors)

    def backward_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _record(np.stack([t.data for t in tensors], axis=axis), tensors, "stack", backward_fn)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start, stop)`` along one axis; bounds are enforced."""
    x = _as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}, {stop}) out of bounds for axis {axis} of extent {x.shape[axis]}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return _getitem(x, tuple(index))


def _getitem(x: Tensor, index) -> Tensor:
    try:
        out = x.data[index]
    except IndexError as exc:
        raise ShapeError(str(exc)) from None
    out = np.array(out, dtype=np.float64)
    shape = x.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)

    def backward_fn(g):
        full = np.zeros(shape)
        g = g.reshape(out.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _record(out, (x,), "slice", backward_fn)


def dropout(x: Tensor, rate: float, rng: RngStream | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("training-mode dropout needs an RngStream")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor._wrap(keep))


# ---------------------------------------------------------------------------
# differentiation


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor the scalar ``loss`` depends on."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    tape = active_tape()
    node = loss._node
    if node is None or node.tape is not tape:
        raise ContractError("loss was not produced on this thread's active tape")
    pending: dict[int, np.ndarray] = {node.index: np.ones_like(loss.data)}
    for nd in reversed(tape.nodes[: node.index + 1]):
        g = pending.pop(nd.index, None)
        if g is None:
            continue
        nd.output.grad = g
        in_grads = nd.backward_fn(g)
        if nd.op in _FAULTS:
            in_grads = tuple(None if ig is None else -ig for ig in in_grads)
        for inp, ig in zip(nd.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            parent = inp._node
            if parent is not None and parent.tape is tape:
                prev = pending.get(parent.index)
                pending[parent.index] = ig if prev is None else prev + ig
            else:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += ig
    tape.clear()


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    worst_input: int
    worst_index: tuple
    n_elements: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: max_rel_err={self.max_rel_error:.3e} "
                f"(input {self.worst_input}, index {self.worst_index}, n={self.n_elements})")


def grad_check(f: Callable[..., Tensor], inputs, h: float = 1e-5, tol: float = 1e-4,
               name: str = "f") -> GradCheckReport:
    """Compare tape gradients of scalar ``f(*inputs)`` against central differences.

    Per element the relative error is ``|g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12)``;
    the report carries the worst element.
    """
    if h <= 0:
        raise ParameterError("finite-difference step must be > 0")
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    reset_tape()
    for x in inputs:
        x.requires_grad = True
        x.zero_grad()
    out = f(*inputs)
    backward(out)
    analytic = [x.grad.copy() for x in inputs]

    worst, worst_input, worst_index, n = 0.0, 0, (), 0
    with no_grad():
        for k, x in enumerate(inputs):
            flat = x.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = f(*inputs).item()
                flat[i] = orig - h
                fm = f(*inputs).item()
                flat[i] = orig
                fd = (fp - fm) / (2.0 * h)
                ad = analytic[k].reshape(-1)[i]
                rel = abs(ad - fd) / (abs(ad) + abs(fd) + 1e-12)
                n += 1
                if rel > worst or n == 1:
                    worst, worst_input = rel, k
                    worst_index = tuple(int(j) for j in np.unravel_index(i, x.shape))
    for x in inputs:
        x.zero_grad()
    return GradCheckReport(name, float(worst), worst_input, worst_index, n, tol)
