"""Dense tensors with a dynamic tape for reverse-mode differentiation.

Every op is a pair of numpy functions registered under an op kind. When any
input requires a gradient, :func:`apply` appends a node to the thread-local
tape; :func:`backward` walks that tape once in reverse and then frees it.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's arity rules."""

    def __init__(self, op: str, message: str, dims: Any = None):
        self.op = op
        self.dims = dims
        super().__init__(f"{op}: {message}" + (f" (dims: {dims})" if dims is not None else ""))


class UnknownOpError(KeyError):
    pass


class _State(threading.local):
    def __init__(self) -> None:
        self.tape: list[Node] = []
        self.grad_enabled = True
        self.dtype = DEFAULT_DTYPE


_state = _State()


@contextlib.contextmanager
def no_grad():
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the dtype used for freshly created tensors."""
    prev = _state.dtype
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def get_default_dtype():
    return _state.dtype


def tape() -> list["Node"]:
    return _state.tape


def clear_tape() -> None:
    _state.tape = []


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.asarray(data, dtype=dtype or _state.dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self._gacc: np.ndarray | None = None

    # -- basic properties ----------------------------------------------
    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(arr)
        t.requires_grad = requires_grad
        t.grad = None
        t._node = None
        t._gacc = None
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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return apply("add", self, _lift(other, self))

    def __radd__(self, other):
        return apply("add", _lift(other, self), self)

    def __sub__(self, other):
        return apply("sub", self, _lift(other, self))

    def __rsub__(self, other):
        return apply("sub", _lift(other, self), self)

    def __mul__(self, other):
        return apply("mul", self, _lift(other, self))

    def __rmul__(self, other):
        return apply("mul", _lift(other, self), self)

    def __truediv__(self, other):
        return apply("div", self, _lift(other, self))

    def __rtruediv__(self, other):
        return apply("div", _lift(other, self), self)

    def __neg__(self):
        return apply("neg", self)

    def __pow__(self, exponent: float):
        return apply("pow", self, exponent=float(exponent))

    def __matmul__(self, other):
        return apply("matmul", self, _lift(other, self))

    def __getitem__(self, index):
        return apply("getitem", self, index=index)

    # -- method forms --------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return apply("max", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply("transpose", self, axes=axes or None)

    def exp(self):
        return apply("exp", self)

    def log(self):
        return apply("log", self)

    def tanh(self):
        return apply("tanh", self)

    def sigmoid(self):
        return apply("sigmoid", self)

    def relu(self):
        return apply("relu", self)

    def abs(self):
        return apply("abs", self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=like.dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype or _state.dtype), requires_grad=requires_grad)


# ----------------------------------------------------------------------
# tape
# ----------------------------------------------------------------------


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    ctx: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OpDef:
    kind: str
    forward: Callable
    backward: Callable
    surrogate: bool = False


_OPS: dict[str, OpDef] = {}


def register(kind: str, surrogate: bool = False):
    """Register ``forward(ctx, *arrays, **attrs)`` / ``backward(ctx, g)`` pair."""

    def deco(cls):
        _OPS[kind] = OpDef(kind, cls.forward, cls.backward, surrogate)
        return cls

    return deco


def op_kinds() -> list[str]:
    return sorted(_OPS)


def is_surrogate(kind: str) -> bool:
    return _OPS[kind].surrogate


def apply(op_kind: str, *inputs: Tensor, **attrs) -> Tensor:
    try:
        op = _OPS[op_kind]
    except KeyError:
        raise UnknownOpError(f"unknown op kind {op_kind!r}") from None
    needs = _state.grad_enabled and any(t.requires_grad for t in inputs)
    ctx: dict = {"needs": tuple(t.requires_grad for t in inputs)} if needs else {}
    out = op.forward(ctx, *(t.data for t in inputs), **attrs)
    result = Tensor._wrap(out, requires_grad=needs)
    if needs:
        node = Node(op_kind, inputs, result, ctx)
        result._node = node
        _state.tape.append(node)
    return result


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf on the tape with d(loss)/d(leaf).

    Leaves recorded on the tape that do not reach ``loss`` get a zero grad.
    The tape is freed afterwards.
    """
    if loss.size != 1:
        raise ShapeError("backward", "loss must be a scalar", loss.shape)
    nodes = _state.tape
    _state.tape = []
    leaves: dict[int, Tensor] = {}
    loss._gacc = np.ones_like(loss.data)
    try:
        for node in reversed(nodes):
            g = node.output._gacc
            node.output._gacc = None
            for t in node.inputs:
                if t.requires_grad and t._node is None:
                    leaves[id(t)] = t
            if g is None:
                continue
            grads = _OPS[node.op].backward(node.ctx, g)
            for t, gi in zip(node.inputs, grads):
                if gi is None or not t.requires_grad:
                    continue
                gi = np.asarray(gi, dtype=t.data.dtype)
                if gi.shape != t.shape:
                    gi = _unbroadcast(gi, t.shape)
                t._gacc = gi if t._gacc is None else t._gacc + gi
        if loss._node is None and loss.requires_grad:
            leaves[id(loss)] = loss
    finally:
        for t in leaves.values():
            t.grad = t._gacc if t._gacc is not None else np.zeros_like(t.data)
            t._gacc = None
        loss._gacc = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, "operands do not broadcast", (a.shape, b.shape)) from None


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------


@register("add")
class _Add:
    def forward(ctx, a, b):
        _broadcast_shape("add", a, b)
        return a + b

    def backward(ctx, g):
        return g, g


@register("sub")
class _Sub:
    def forward(ctx, a, b):
        _broadcast_shape("sub", a, b)
        return a - b

    def backward(ctx, g):
        return g, -g


@register("mul")
class _Mul:
    def forward(ctx, a, b):
        _broadcast_shape("mul", a, b)
        ctx["a"], ctx["b"] = a, b
        return a * b

    def backward(ctx, g):
        return g * ctx["b"], g * ctx["a"]


@register("div")
class _Div:
    def forward(ctx, a, b):
        _broadcast_shape("div", a, b)
        ctx["a"], ctx["b"] = a, b
        return a / b

    def backward(ctx, g):
        a, b = ctx["a"], ctx["b"]
        return g / b, -g * a / (b * b)


@register("neg")
class _Neg:
    def forward(ctx, a):
        return -a

    def backward(ctx, g):
        return (-g,)


@register("pow")
class _Pow:
    def forward(ctx, a, exponent):
        ctx["a"], ctx["p"] = a, exponent
        return a**exponent

    def backward(ctx, g):
        a, p = ctx["a"], ctx["p"]
        return (g * p * a ** (p - 1),)


@register("exp")
class _Exp:
    def forward(ctx, a):
        out = np.exp(a)
        ctx["out"] = out
        return out

    def backward(ctx, g):
        return (g * ctx["out"],)


@register("log")
class _Log:
    def forward(ctx, a):
        ctx["a"] = a
        return np.log(a)

    def backward(ctx, g):
        return (g / ctx["a"],)


@register("abs")
class _Abs:
    def forward(ctx, a):
        ctx["a"] = a
        return np.abs(a)

    def backward(ctx, g):
        return (g * np.sign(ctx["a"]),)


@register("relu")
class _Relu:
    def forward(ctx, a):
        ctx["mask"] = a > 0
        return np.where(ctx["mask"], a, 0).astype(a.dtype)

    def backward(ctx, g):
        return (g * ctx["mask"],)


@register("tanh")
class _Tanh:
    def forward(ctx, a):
        out = np.tanh(a)
        ctx["out"] = out
        return out

    def backward(ctx, g):
        return (g * (1 - ctx["out"] ** 2),)


@register("sigmoid")
class _Sigmoid:
    def forward(ctx, a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1 / (1 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1 + ea)
        ctx["out"] = out
        return out

    def backward(ctx, g):
        s = ctx["out"]
        return (g * s * (1 - s),)


@register("clip")
class _Clip:
    # grad passes where lo <= a <= hi
    def forward(ctx, a, lo, hi):
        ctx["mask"] = (a >= lo) & (a <= hi)
        return np.clip(a, lo, hi)

    def backward(ctx, g):
        return (g * ctx["mask"],)


# ----------------------------------------------------------------------
# reductions / shape
# ----------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@register("sum")
class _Sum:
    def forward(ctx, a, axis=None, keepdims=False):
        ctx["shape"], ctx["axis"] = a.shape, _norm_axis(axis, a.ndim)
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(ctx, g):
        shape, axis = ctx["shape"], ctx["axis"]
        g = np.expand_dims(g, axis) if g.ndim != len(shape) else g
        return (np.broadcast_to(g, shape),)


@register("mean")
class _Mean:
    def forward(ctx, a, axis=None, keepdims=False):
        ax = _norm_axis(axis, a.ndim)
        ctx["shape"], ctx["axis"] = a.shape, ax
        ctx["n"] = int(np.prod([a.shape[i] for i in ax])) if ax else 1
        return np.mean(a, axis=axis, keepdims=keepdims)

    def backward(ctx, g):
        shape, axis = ctx["shape"], ctx["axis"]
        g = np.expand_dims(g, axis) if g.ndim != len(shape) else g
        return (np.broadcast_to(g / ctx["n"], shape),)


@register("max")
class _Max:
    # ties share the gradient evenly
    def forward(ctx, a, axis=None, keepdims=False):
        ax = _norm_axis(axis, a.ndim)
        out = np.max(a, axis=axis, keepdims=True)
        mask = (a == out).astype(a.dtype)
        ctx["mask"] = mask / mask.sum(axis=ax, keepdims=True)
        ctx["axis"] = ax
        return out if keepdims else np.squeeze(out, axis=ax)

    def backward(ctx, g):
        mask = ctx["mask"]
        if g.ndim != mask.ndim:
            g = np.expand_dims(g, ctx["axis"])
        return (g * mask,)


@register("reshape")
class _Reshape:
    def forward(ctx, a, shape):
        ctx["shape"] = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", "cannot reshape", (a.shape, shape)) from None

    def backward(ctx, g):
        return (g.reshape(ctx["shape"]),)


@register("transpose")
class _Transpose:
    def forward(ctx, a, axes=None):
        axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
        ctx["inv"] = tuple(np.argsort(axes))
        return np.transpose(a, axes)

    def backward(ctx, g):
        return (np.transpose(g, ctx["inv"]),)


@register("getitem")
class _GetItem:
    def forward(ctx, a, index):
        ctx["shape"], ctx["index"], ctx["dtype"] = a.shape, index, a.dtype
        return np.array(a[index])

    def backward(ctx, g):
        out = np.zeros(ctx["shape"], dtype=ctx["dtype"])
        np.add.at(out, ctx["index"], g)
        return (out,)


@register("concat")
class _Concat:
    def forward(ctx, *arrays, axis=0):
        ref = arrays[0].shape
        for arr in arrays[1:]:
            if arr.ndim != len(ref) or any(
                x != y for i, (x, y) in enumerate(zip(arr.shape, ref)) if i != axis % len(ref)
            ):
                raise ShapeError("concat", "non-concat dims differ", [a.shape for a in arrays])
        ctx["splits"] = np.cumsum([arr.shape[axis] for arr in arrays])[:-1]
        ctx["axis"] = axis
        return np.concatenate(arrays, axis=axis)

    def backward(ctx, g):
        return tuple(np.split(g, ctx["splits"], axis=ctx["axis"]))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


# ----------------------------------------------------------------------
# linear algebra / nn primitives
# ----------------------------------------------------------------------


@register("matmul")
class _Matmul:
    def forward(ctx, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", "inner dimensions differ", (a.shape, b.shape))
        ctx["a"], ctx["b"] = a, b
        return a @ b

    def backward(ctx, g):
        a, b = ctx["a"], ctx["b"]
        return g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g


@register("softmax")
class _Softmax:
    def forward(ctx, a, axis=-1):
        z = a - a.max(axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)
        ctx["out"], ctx["axis"] = out, axis
        return out

    def backward(ctx, g):
        s, ax = ctx["out"], ctx["axis"]
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)


@register("log_softmax")
class _LogSoftmax:
    def forward(ctx, a, axis=-1):
        z = a - a.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
        out = z - lse
        ctx["out"], ctx["axis"] = out, axis
        return out

    def backward(ctx, g):
        s = np.exp(ctx["out"])
        return (g - s * g.sum(axis=ctx["axis"], keepdims=True),)


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


@register("conv2d")
class _Conv2d:
    """NCHW cross-correlation; weight is (C_out, C_in, kh, kw)."""

    def forward(ctx, x, w, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError("conv2d", "expected 4-d input and weight", (x.shape, w.shape))
        n, c, h, wd = x.shape
        co, ci, kh, kw = w.shape
        if c != ci:
            raise ShapeError("conv2d", "input channels differ from weight", (x.shape, w.shape))
        ho = (h + 2 * padding - kh) // stride + 1
        wo = (wd + 2 * padding - kw) // stride + 1
        if ho <= 0 or wo <= 0:
            raise ShapeError("conv2d", "kernel larger than padded input", (x.shape, w.shape))
        xp = _pad(x, padding)
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
        # (n, ho, wo, c, kh, kw)
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
        wm = w.reshape(co, -1)
        out = cols @ wm.T
        ctx.update(cols=cols, w=w, xshape=xp.shape, stride=stride, padding=padding, out_hw=(ho, wo))
        return np.ascontiguousarray(out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2))

    def backward(ctx, g):
        cols, w, stride, p = ctx["cols"], ctx["w"], ctx["stride"], ctx["padding"]
        n, c, hp, wp = ctx["xshape"]
        co, _, kh, kw = w.shape
        ho, wo = ctx["out_hw"]
        gm = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gw = (gm.T @ cols).reshape(w.shape)
        if not ctx.get("needs", (True,))[0]:
            return None, gw
        gcols = (gm @ w.reshape(co, -1)).reshape(n, ho, wo, c, kh, kw)
        gcols = np.ascontiguousarray(gcols.transpose(4, 5, 0, 3, 1, 2))  # (kh, kw, n, c, ho, wo)
        gx = np.zeros((n, c, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += gcols[i, j]
        if p:
            gx = gx[:, :, p:-p, p:-p]
        return gx, gw


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return apply("conv2d", x, w, stride=stride, padding=padding)


@register("batch_norm")
class _BatchNorm:
    """Per-channel normalization over every axis except 1.

    ``running_mean``/``running_var`` are updated in place when ``training``.
    """

    def forward(ctx, x, gamma, beta, running_mean, running_var, training=False, momentum=0.1, eps=1e-5):
        if x.ndim < 2 or gamma.shape != (x.shape[1],):
            raise ShapeError("batch_norm", "gamma must match channel dim", (x.shape, gamma.shape))
        axes = tuple(i for i in range(x.ndim) if i != 1)
        bshape = (1, -1) + (1,) * (x.ndim - 2)
        if training:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // x.shape[1]
            running_mean *= 1 - momentum
            running_mean += momentum * mu
            running_var *= 1 - momentum
            running_var += momentum * var * m / max(m - 1, 1)
        else:
            mu, var = running_mean, running_var
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mu.reshape(bshape)) * inv.reshape(bshape)
        ctx.update(xhat=xhat, inv=inv, gamma=gamma, axes=axes, bshape=bshape, training=training)
        return (xhat * gamma.reshape(bshape) + beta.reshape(bshape)).astype(x.dtype)

    def backward(ctx, g):
        xhat, inv, gamma, axes, bshape = ctx["xhat"], ctx["inv"], ctx["gamma"], ctx["axes"], ctx["bshape"]
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gx_hat = g * gamma.reshape(bshape)
        if ctx["training"]:
            gx = inv.reshape(bshape) * (
                gx_hat - gx_hat.mean(axis=axes, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=axes, keepdims=True)
            )
        else:
            gx = gx_hat * inv.reshape(bshape)
        return gx, ggamma, gbeta


def batch_norm(x, gamma, beta, running_mean, running_var, training=False, momentum=0.1, eps=1e-5):
    return apply(
        "batch_norm", x, gamma, beta,
        running_mean=running_mean, running_var=running_var,
        training=training, momentum=momentum, eps=eps,
    )


# ----------------------------------------------------------------------
# surrogate-gradient ops
# ----------------------------------------------------------------------


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@register("round_ste", surrogate=True)
class _RoundSTE:
    def forward(ctx, a):
        return round_half_away(a).astype(a.dtype)

    def backward(ctx, g):
        return (g,)


@register("straight_through", surrogate=True)
class _StraightThrough:
    """Forward emits ``hard``; backward passes the gradient to the soft input."""

    def forward(ctx, soft, hard):
        if hard.shape != soft.shape:
            raise ShapeError("straight_through", "hard/soft shapes differ", (hard.shape, soft.shape))
        return np.asarray(hard, dtype=soft.dtype)

    def backward(ctx, g):
        return (g,)


def round_ste(x: Tensor) -> Tensor:
    return apply("round_ste", x)


def straight_through(soft: Tensor, hard: np.ndarray) -> Tensor:
    return apply("straight_through", soft, hard=hard)


# ----------------------------------------------------------------------
# functional shorthands
# ----------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return apply("softmax", x, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    return apply("log_softmax", x, axis=axis)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    return apply("clip", x, lo=lo, hi=hi)


def relu(x: Tensor) -> Tensor:
    return apply("relu", x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply("matmul", a, b)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logp = log_softmax(logits, axis=-1)
    labels = np.asarray(labels)
    picked = logp[np.arange(labels.shape[0]), labels]
    return -picked.mean()


# ----------------------------------------------------------------------
# gradient checking
# ----------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    skipped: bool = False
    reason: str = ""
    analytic: list[np.ndarray] = field(default_factory=list)
    numeric: list[np.ndarray] = field(default_factory=list)


def finite_diff_check(
    fn: Callable[..., Tensor],
    point,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    allow_surrogate: Sequence[str] = (),
    floor: float = 1e-3,
) -> GradCheckReport:
    """Compare backward gradients of ``fn`` against central differences.

    ``point`` is one array or a list of arrays, each becoming a float64
    argument to ``fn``. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    If ``fn`` records a surrogate-gradient op not in ``allow_surrogate`` the
    check is skipped and flagged.
    """
    points = [np.array(p, dtype=np.float64) for p in (point if isinstance(point, (list, tuple)) else [point])]

    def evaluate(arrays, grad):
        with default_dtype(np.float64):
            args = [Tensor(a.copy(), requires_grad=grad) for a in arrays]
            out = fn(*args)
        return args, out

    clear_tape()
    args, out = evaluate(points, True)
    kinds = {n.op for n in tape()}
    bad = sorted(k for k in kinds if _OPS[k].surrogate and k not in allow_surrogate)
    if bad:
        clear_tape()
        return GradCheckReport(float("nan"), passed=False, skipped=True, reason=f"surrogate op present: {', '.join(bad)}")
    if not np.all(np.isfinite(out.data)):
        clear_tape()
        return GradCheckReport(float("nan"), passed=False, reason="nan in fn output")
    if out.requires_grad:
        backward(out)
    else:
        clear_tape()
    analytic = [a.grad if a.grad is not None else np.zeros_like(a.data) for a in args]

    numeric = []
    with no_grad():
        for k, base in enumerate(points):
            num = np.zeros_like(base)
            it = np.nditer(base, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                plus = [p.copy() for p in points]
                minus = [p.copy() for p in points]
                plus[k][idx] += step
                minus[k][idx] -= step
                fp = float(evaluate(plus, False)[1].data)
                fm = float(evaluate(minus, False)[1].data)
                num[idx] = (fp - fm) / (2 * step)
            numeric.append(num)
    if not all(np.all(np.isfinite(n)) for n in numeric):
        return GradCheckReport(float("nan"), passed=False, reason="nan in finite differences")
    err = 0.0
    for a, n in zip(analytic, numeric):
        if a.size:
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            err = max(err, float(np.max(np.abs(a - n) / denom)))
    return GradCheckReport(err, passed=err <= tolerance, analytic=analytic, numeric=numeric)
