"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive is a :class:`Function` whose ``backward`` is written in terms of
other primitives.  When gradients are requested with ``create_graph=True`` the
backward pass is itself recorded, which is what lets a loss consume a gradient
(the Hamiltonian decoder needs this) and still be differentiated.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericDomainError(ArithmeticError):
    """An operation left its mathematical domain or produced NaN/Inf."""


class NonDifferentiableError(RuntimeError):
    """A node has no backward rule usable at the requested derivative order."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def enable_grad():
    prev = is_grad_enabled()
    _state.enabled = True
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Tensor | None = None
        self._node: Node | None = None
        self.name = name

    # -- basic properties --------------------------------------------------
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
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ----------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        raise NotImplementedError("only square powers are supported")

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def backward(self, seed=None) -> None:
        backward(self, seed)


def _raise_item(t: Tensor):
    raise DimensionError(f"item() needs a single element, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# graph nodes
# ---------------------------------------------------------------------------


class Node:
    """One recorded primitive application."""

    __slots__ = ("fn", "inputs", "ctx", "output_shape", "__weakref__")

    def __init__(self, fn: type[Function], inputs: tuple[Tensor, ...], ctx: Context, output_shape):
        self.fn = fn
        self.inputs = inputs
        self.ctx = ctx
        self.output_shape = output_shape

    @property
    def tag(self) -> str:
        return self.fn.tag


class Context:
    """Values a primitive saves during forward for its backward rule."""

    __slots__ = ("saved", "needs", "out", "inputs")

    def __init__(self, inputs: tuple = ()):
        self.inputs = inputs
        self.saved: tuple = ()
        self.needs: tuple[bool, ...] = ()
        self.out: np.ndarray | None = None

    def save(self, *values) -> None:
        self.saved = values


class Function:
    tag = "function"

    @staticmethod
    def forward(ctx: Context, *args, **kwargs) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: Tensor) -> tuple[Tensor | None, ...]:
        raise NonDifferentiableError("no backward rule registered")

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tins = tuple(as_tensor(x) for x in inputs)
        ctx = Context(tins)
        out = cls.forward(ctx, *tins, **kwargs)
        result = Tensor(out)
        if is_grad_enabled() and any(t.requires_grad for t in tins):
            ctx.needs = tuple(t.requires_grad for t in tins)
            ctx.out = out
            result.requires_grad = True
            result._node = Node(cls, tins, ctx, out.shape)
        return result


def _check_finite(arr: np.ndarray, tag: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericDomainError(f"{tag} produced non-finite values")
    return arr


def _broadcast_shape(a: Tensor, b: Tensor, tag: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"{tag}: shapes {a.shape} and {b.shape} do not broadcast") from exc


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------


class SumTo(Function):
    tag = "sum_to"

    @staticmethod
    def forward(ctx, x, shape=()):
        ctx.save(x.shape)
        return _sum_to_array(x.data, shape)

    @staticmethod
    def backward(ctx, grad):
        (shape,) = ctx.saved
        return (broadcast_to(grad, shape),)


class BroadcastTo(Function):
    tag = "broadcast_to"

    @staticmethod
    def forward(ctx, x, shape=()):
        ctx.save(x.shape)
        return np.broadcast_to(x.data, shape).copy()

    @staticmethod
    def backward(ctx, grad):
        (shape,) = ctx.saved
        return (sum_to(grad, shape),)


def _sum_to_array(arr: np.ndarray, shape) -> np.ndarray:
    shape = tuple(shape)
    if arr.shape == shape:
        return arr
    lead = arr.ndim - len(shape)
    if lead:
        arr = arr.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and arr.shape[i] != 1)
    if axes:
        arr = arr.sum(axis=axes, keepdims=True)
    return arr


def sum_to(x: Tensor, shape) -> Tensor:
    if x.shape == tuple(shape):
        return x
    return SumTo.apply(x, shape=tuple(shape))


def broadcast_to(x: Tensor, shape) -> Tensor:
    if x.shape == tuple(shape):
        return x
    return BroadcastTo.apply(x, shape=tuple(shape))


class Reshape(Function):
    tag = "reshape"

    @staticmethod
    def forward(ctx, x, shape=()):
        ctx.save(x.shape)
        try:
            return x.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(str(exc)) from exc

    @staticmethod
    def backward(ctx, grad):
        (shape,) = ctx.saved
        return (reshape(grad, shape),)


def reshape(x: Tensor, shape) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


class Transpose(Function):
    """Swap the last two axes."""

    tag = "transpose"

    @staticmethod
    def forward(ctx, x):
        if x.ndim < 2:
            raise DimensionError("transpose needs at least 2 dimensions")
        return np.swapaxes(x.data, -1, -2)

    @staticmethod
    def backward(ctx, grad):
        return (transpose(grad),)


def transpose(x: Tensor) -> Tensor:
    return Transpose.apply(x)


class Permute(Function):
    tag = "permute"

    @staticmethod
    def forward(ctx, x, axes=()):
        ctx.save(axes)
        return np.transpose(x.data, axes)

    @staticmethod
    def backward(ctx, grad):
        (axes,) = ctx.saved
        return (permute(grad, tuple(np.argsort(axes))),)


def permute(x: Tensor, axes) -> Tensor:
    return Permute.apply(x, axes=tuple(int(a) for a in axes))


class GetItem(Function):
    tag = "slice"

    @staticmethod
    def forward(ctx, x, idx=None):
        ctx.save(x.shape, idx)
        try:
            return np.array(x.data[idx], dtype=DTYPE)
        except IndexError as exc:
            raise DimensionError(str(exc)) from exc

    @staticmethod
    def backward(ctx, grad):
        shape, idx = ctx.saved
        return (ScatterAdd.apply(grad, shape=shape, idx=idx),)


class ScatterAdd(Function):
    """Place ``grad`` into a zero tensor of ``shape`` at ``idx`` (adjoint of slicing)."""

    tag = "scatter_add"

    @staticmethod
    def forward(ctx, g, shape=(), idx=None):
        ctx.save(idx)
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g.data)
        return out

    @staticmethod
    def backward(ctx, grad):
        (idx,) = ctx.saved
        return (getitem(grad, idx),)


def getitem(x: Tensor, idx) -> Tensor:
    return GetItem.apply(x, idx=idx)


class Concat(Function):
    tag = "concat"

    @staticmethod
    def forward(ctx, *xs, axis=-1):
        ndim = xs[0].ndim
        ax = axis % ndim
        sizes = [x.shape[ax] for x in xs]
        ctx.save(ax, sizes, ndim)
        try:
            return np.concatenate([x.data for x in xs], axis=ax)
        except ValueError as exc:
            raise DimensionError(str(exc)) from exc

    @staticmethod
    def backward(ctx, grad):
        ax, sizes, ndim = ctx.saved
        outs = []
        start = 0
        for n in sizes:
            idx = [slice(None)] * ndim
            idx[ax] = slice(start, start + n)
            outs.append(getitem(grad, tuple(idx)))
            start += n
        return tuple(outs)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    return Concat.apply(*xs, axis=axis)


def concat_lastdim(xs: Sequence[Tensor]) -> Tensor:
    return Concat.apply(*xs, axis=-1)


class Stack(Function):
    tag = "stack"

    @staticmethod
    def forward(ctx, *xs, axis=0):
        ax = axis % (xs[0].ndim + 1)
        ctx.save(ax, len(xs), xs[0].ndim + 1)
        try:
            return np.stack([x.data for x in xs], axis=ax)
        except ValueError as exc:
            raise DimensionError(str(exc)) from exc

    @staticmethod
    def backward(ctx, grad):
        ax, n, ndim = ctx.saved
        outs = []
        for i in range(n):
            idx = [slice(None)] * ndim
            idx[ax] = i
            outs.append(getitem(grad, tuple(idx)))
        return tuple(outs)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Stack.apply(*xs, axis=axis)


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


class Add(Function):
    tag = "add"

    @staticmethod
    def forward(ctx, a, b):
        _broadcast_shape(a, b, "add")
        ctx.save(a.shape, b.shape)
        return a.data + b.data

    @staticmethod
    def backward(ctx, grad):
        sa, sb = ctx.saved
        return sum_to(grad, sa), sum_to(grad, sb)


class Sub(Function):
    tag = "sub"

    @staticmethod
    def forward(ctx, a, b):
        _broadcast_shape(a, b, "sub")
        ctx.save(a.shape, b.shape)
        return a.data - b.data

    @staticmethod
    def backward(ctx, grad):
        sa, sb = ctx.saved
        return sum_to(grad, sa), sum_to(neg(grad), sb)


class Mul(Function):
    tag = "elementwise_mul"

    @staticmethod
    def forward(ctx, a, b):
        _broadcast_shape(a, b, "elementwise_mul")
        ctx.save(a, b)
        return a.data * b.data

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        ga = sum_to(mul(grad, b), a.shape) if ctx.needs[0] else None
        gb = sum_to(mul(grad, a), b.shape) if ctx.needs[1] else None
        return ga, gb


class Div(Function):
    tag = "div"

    @staticmethod
    def forward(ctx, a, b):
        _broadcast_shape(a, b, "div")
        if np.any(b.data == 0):
            raise NumericDomainError("division by zero")
        ctx.save(a, b)
        return a.data / b.data

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        ga = sum_to(div(grad, b), a.shape) if ctx.needs[0] else None
        gb = None
        if ctx.needs[1]:
            gb = sum_to(neg(div(mul(grad, a), square(b))), b.shape)
        return ga, gb


class Neg(Function):
    tag = "neg"

    @staticmethod
    def forward(ctx, x):
        return -x.data

    @staticmethod
    def backward(ctx, grad):
        return (neg(grad),)


class MatMul(Function):
    tag = "matmul"

    @staticmethod
    def forward(ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
        ctx.save(a, b)
        return np.matmul(a.data, b.data)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx.saved
        ga = sum_to(matmul(grad, transpose(b)), a.shape) if ctx.needs[0] else None
        gb = sum_to(matmul(transpose(a), grad), b.shape) if ctx.needs[1] else None
        return ga, gb


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(x) -> Tensor:
    return Neg.apply(x)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


class Tanh(Function):
    tag = "tanh"

    @staticmethod
    def forward(ctx, x):
        return np.tanh(x.data)

    @staticmethod
    def backward(ctx, grad):
        y = _reuse(ctx, tanh)
        return (mul(grad, sub(1.0, square(y))),)


class Sigmoid(Function):
    tag = "sigmoid"

    @staticmethod
    def forward(ctx, x):
        return _sigmoid(x.data)

    @staticmethod
    def backward(ctx, grad):
        s = _reuse(ctx, sigmoid)
        return (mul(grad, mul(s, sub(1.0, s))),)


class Softplus(Function):
    tag = "softplus"

    @staticmethod
    def forward(ctx, x):
        return np.logaddexp(0.0, x.data)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.inputs
        return (mul(grad, sigmoid(x)),)


class Exp(Function):
    tag = "exp"

    @staticmethod
    def forward(ctx, x):
        with np.errstate(over="ignore"):
            return _check_finite(np.exp(x.data), "exp")

    @staticmethod
    def backward(ctx, grad):
        return (mul(grad, _reuse(ctx, exp)),)


class Log(Function):
    tag = "log"

    @staticmethod
    def forward(ctx, x):
        if np.any(x.data <= 0):
            raise NumericDomainError("log of a non-positive value")
        return np.log(x.data)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.inputs
        return (div(grad, x),)


class Abs(Function):
    tag = "abs"

    @staticmethod
    def forward(ctx, x):
        return np.abs(x.data)

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.inputs
        return (mul(grad, Tensor(np.sign(x.data))),)


class Square(Function):
    tag = "square"

    @staticmethod
    def forward(ctx, x):
        return x.data * x.data

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.inputs
        return (mul(grad, mul(2.0, x)),)


def _reuse(ctx: Context, fn) -> Tensor:
    # Recompute from the input when building a differentiable backward graph;
    # otherwise the saved forward output is a constant.
    if is_grad_enabled():
        return fn(ctx.inputs[0])
    return Tensor(ctx.out)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def tanh(x) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def softplus(x) -> Tensor:
    return Softplus.apply(x)


def exp(x) -> Tensor:
    return Exp.apply(x)


def log(x) -> Tensor:
    return Log.apply(x)


def tabs(x) -> Tensor:
    return Abs.apply(x)


def square(x) -> Tensor:
    return Square.apply(x)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


class Sum(Function):
    tag = "sum"

    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        axes = _norm_axes(axis, x.ndim)
        ctx.save(x.shape, axes, keepdims)
        return np.asarray(x.data.sum(axis=axes, keepdims=keepdims))

    @staticmethod
    def backward(ctx, grad):
        shape, axes, keepdims = ctx.saved
        if not keepdims:
            kshape = tuple(1 if i in axes else n for i, n in enumerate(shape))
            grad = reshape(grad, kshape)
        return (broadcast_to(grad, shape),)


def tsum(x, axis=None, keepdims=False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DimensionError("mean over an empty axis")
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


class SoftmaxLast(Function):
    tag = "softmax_lastdim"

    @staticmethod
    def forward(ctx, x):
        if x.ndim == 0 or x.shape[-1] == 0:
            raise DimensionError("softmax over an empty last dimension")
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    @staticmethod
    def backward(ctx, grad):
        y = _reuse(ctx, softmax_lastdim)
        inner = tsum(mul(grad, y), axis=-1, keepdims=True)
        return (mul(y, sub(grad, inner)),)


def softmax_lastdim(x) -> Tensor:
    return SoftmaxLast.apply(x)


# Registry of primitive tags, used by forward_primitive.
PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "elementwise_mul": mul,
    "div": div,
    "neg": neg,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "sum": tsum,
    "mean": mean,
    "softmax_lastdim": softmax_lastdim,
    "concat_lastdim": lambda *xs: concat_lastdim(xs),
    "slice": getitem,
    "abs": tabs,
    "square": square,
    "reshape": reshape,
    "transpose": transpose,
    "stack": lambda *xs, axis=0: stack(xs, axis=axis),
}


def forward_primitive(op_tag: str, *inputs, **kwargs) -> Tensor:
    """Apply a primitive by tag, e.g. ``forward_primitive("tanh", x)``."""
    try:
        fn = PRIMITIVES[op_tag]
    except KeyError:
        raise NonDifferentiableError(f"unknown primitive {op_tag!r}") from None
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


class ComputationRecord:
    """Topologically ordered nodes reachable from an output tensor.

    Traversal does not continue past tensors listed in ``stop``.
    """

    def __init__(self, output: Tensor, stop: Iterable[Tensor] = ()):
        self.output = output
        self.nodes: list[Node] = []
        self._order: list[Tensor] = []
        if output._node is None:
            return
        stop_ids = {id(t) for t in stop}
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self._order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if id(t) in stop_ids and t is not output:
                continue
            for parent in t._node.inputs:
                if parent._node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        self.nodes = [t._node for t in self._order]

    def __len__(self) -> int:
        return len(self.nodes)

    def tensors(self) -> list[Tensor]:
        return list(self._order)


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    seed: Tensor | np.ndarray | float | None = None,
    create_graph: bool = False,
    allow_unused: bool = True,
) -> list[Tensor | None]:
    """Return d(output)/d(inputs) contracted with ``seed``.

    With ``create_graph=True`` the returned gradients are themselves recorded and
    can be differentiated again.
    """
    if seed is None:
        if output.size != 1:
            raise DimensionError("a seed is required for non-scalar outputs")
        seed_t = Tensor(np.ones(output.shape))
    else:
        seed_t = as_tensor(seed)
        if seed_t.shape != output.shape:
            raise DimensionError(f"seed shape {seed_t.shape} does not match output {output.shape}")
    wanted = {id(t) for t in inputs}
    record = ComputationRecord(output, stop=inputs)
    order = record.tensors()
    # Only nodes with a path to a requested input contribute.
    reaches: set[int] = set()
    for t in order:
        if id(t) in wanted or any(
            id(p) in wanted or id(p) in reaches for p in t._node.inputs
        ):
            reaches.add(id(t))
    grads: dict[int, Tensor] = {id(output): seed_t}
    ctx_mgr = enable_grad() if create_graph else no_grad()
    with ctx_mgr:
        for t in reversed(order):
            key = id(t)
            if key not in reaches or key in wanted and t is not output:
                continue
            g = grads.pop(key, None)
            if g is None:
                continue
            node = t._node
            in_grads = node.fn.backward(node.ctx, g)
            for parent, pg in zip(node.inputs, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pk = id(parent)
                if pk not in wanted and pk not in reaches:
                    continue
                prev = grads.get(pk)
                grads[pk] = pg if prev is None else add(prev, pg)
            if key in wanted:
                grads[key] = g
    out: list[Tensor | None] = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None and not allow_unused:
            raise NonDifferentiableError("an input does not influence the output")
        if g is not None and g.shape != t.shape:
            g = sum_to(g, t.shape)
        out.append(g)
    return out


def backward(output: Tensor, seed=None, create_graph: bool = False) -> None:
    """Accumulate gradients into ``.grad`` of every leaf with ``requires_grad``."""
    record = ComputationRecord(output)
    leaves = []
    seen = set()
    for node in record.nodes:
        for parent in node.inputs:
            if parent.requires_grad and parent._node is None and id(parent) not in seen:
                seen.add(id(parent))
                leaves.append(parent)
    if output._node is None and output.requires_grad:
        leaves.append(output)
    grads = grad(output, leaves, seed=seed, create_graph=create_graph)
    for leaf, g in zip(leaves, grads):
        if g is None:
            continue
        leaf.grad = g if leaf.grad is None else Tensor(leaf.grad.data + g.data)


def grad_through_grad(
    outer_fn,
    params: Sequence[Tensor],
) -> list[Tensor | None]:
    """Differentiate a scalar loss whose forward pass itself takes gradients.

    ``outer_fn`` is called with no arguments and must build its inner gradients
    through :func:`grad` with ``create_graph=True``.
    """
    with enable_grad():
        loss = outer_fn()
    return grad(loss, list(params))


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
