"""Tensor type, tape, and differentiable primitives.

Design notes
------------
A Tensor wraps a float32 (or float64, for high-precision checks) numpy
array.  Applying a primitive while gradients are enabled links the output to
its parents together with one VJP closure per parent.  The closures compute
cotangents *with these same primitives*, so running a backward sweep with
gradients enabled records a new graph — that is what makes second
derivatives (gradient penalty) work.

The Tape is the topologically ordered list of recorded applications behind a
value; `backward` replays it in exact reverse order.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..errors import NonScalarLoss, OddDimension, ShapeMismatch

_DEFAULT_DTYPE = np.float32
_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that pauses graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _set_grad_enabled(flag: bool) -> bool:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = flag
    return prev


class Tensor:
    """Shape-tagged dense real array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps", "_op", "_nid")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjps = ()
        self._op = "leaf"
        self._nid = next(_ids)

    # -- introspection ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _scalar_error(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{grad}, op={self._op!r})"


def _scalar_error(t):
    raise NonScalarLoss(f"expected a scalar tensor, got shape {t.shape}")


def _contig(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes 0-d arrays to 1-d; keep rank intact
    if arr.ndim == 0:
        return np.array(arr)
    return np.ascontiguousarray(arr)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _apply(op_name, data, parents, vjps) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
        out._op = op_name
    return out


class Tape:
    """Ordered record of the primitive applications behind a root tensor."""

    def __init__(self, nodes):
        self.nodes = nodes  # ascending creation order

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda t: t._nid)
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def _sweep(root, tape, seed, sinks, create_graph, accumulate):
    """Shared reverse sweep: visits tape nodes in exact reverse order."""
    cot = {id(root): seed}
    keep = {id(t) for t in sinks}
    prev = _set_grad_enabled(create_graph)
    try:
        for node in reversed(tape.nodes):
            g = cot.get(id(node))
            if g is None:
                continue
            if id(node) not in keep:
                del cot[id(node)]
            if accumulate and node.requires_grad:
                gd = g.data.astype(node.dtype, copy=False)
                node.grad = gd.copy() if node.grad is None else node.grad + gd
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                pg = vjp(g)
                if pg.shape != parent.shape:
                    raise ShapeMismatch(
                        f"vjp of {node._op!r} produced {pg.shape} for parent {parent.shape}"
                    )
                acc = cot.get(id(parent))
                cot[id(parent)] = pg if acc is None else add(acc, pg)
    finally:
        _set_grad_enabled(prev)
    return cot


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/dt into `t.grad` for every requires_grad tensor
    reachable from `loss`.  Accumulation across fan-out (and across repeated
    calls) is additive."""
    if loss.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = tape if tape is not None else Tape.trace(loss)
    seed = Tensor(np.ones_like(loss.data))
    _sweep(loss, tape, seed, (), create_graph=False, accumulate=True)


def grad(output: Tensor, inputs, create_graph: bool = False):
    """Return d(sum(output))/d(input) for each input, as Tensors.

    With `create_graph=True` the returned cotangents are part of the graph,
    so they can be differentiated again.
    """
    inputs = list(inputs)
    tape = Tape.trace(output)
    seed = Tensor(np.ones_like(output.data))
    cot = _sweep(output, tape, seed, inputs, create_graph, accumulate=False)
    out = []
    for t in inputs:
        g = cot.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------


def _sum_to(g: Tensor, shape) -> Tensor:
    """Reduce a broadcast cotangent back to `shape`."""
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    if lead < 0:
        raise ShapeMismatch(f"cannot reduce {g.shape} to {shape}")
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and g.shape[i + lead] != 1
    )
    if axes:
        g = sum_axes(g, axes=axes, keepdims=False)
    return reshape(g, shape)


def _binary(op_name, a, b, fwd, vjp_a, vjp_b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = fwd(a.data, b.data)
    except ValueError as exc:
        raise ShapeMismatch(f"{op_name}: shapes {a.shape} and {b.shape}") from exc
    return _apply(op_name, data, (a, b), (vjp_a(a, b), vjp_b(a, b)))


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    return _binary(
        "add", a, b, np.add,
        lambda a, b: lambda g: _sum_to(g, a.shape),
        lambda a, b: lambda g: _sum_to(g, b.shape),
    )


def sub(a, b) -> Tensor:
    return _binary(
        "sub", a, b, np.subtract,
        lambda a, b: lambda g: _sum_to(g, a.shape),
        lambda a, b: lambda g: _sum_to(neg(g), b.shape),
    )


def mul(a, b) -> Tensor:
    return _binary(
        "mul", a, b, np.multiply,
        lambda a, b: lambda g: _sum_to(mul(g, b), a.shape),
        lambda a, b: lambda g: _sum_to(mul(g, a), b.shape),
    )


def div(a, b) -> Tensor:
    return _binary(
        "div", a, b, np.divide,
        lambda a, b: lambda g: _sum_to(div(g, b), a.shape),
        lambda a, b: lambda g: _sum_to(neg(div(mul(g, a), mul(b, b))), b.shape),
    )


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _apply("neg", -x.data, (x,), (lambda g: neg(g),))


def pow_const(x, p) -> Tensor:
    x = as_tensor(x)
    p = float(p)
    data = x.data ** p
    return _apply("pow", data, (x,), (lambda g: mul(g, mul(Tensor(np.array(p, dtype=x.dtype)), pow_const(x, p - 1))),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = _apply("sqrt", np.sqrt(x.data), (x,), ())
    if out.requires_grad:
        out._vjps = (lambda g: div(g, mul(Tensor(np.array(2.0, dtype=x.dtype)), out)),)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    return _apply("log", np.log(x.data), (x,), (lambda g: div(g, x),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = _apply("exp", np.exp(x.data), (x,), ())
    if out.requires_grad:
        out._vjps = (lambda g: mul(g, out),)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))
    out = _apply("sigmoid", data.astype(x.dtype, copy=False), (x,), ())
    if out.requires_grad:
        one = Tensor(np.array(1.0, dtype=x.dtype))
        out._vjps = (lambda g: mul(g, mul(out, sub(one, out))),)
    return out


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    gate = np.where(x.data >= 0, 1.0, slope).astype(x.dtype)
    data = x.data * gate
    return _apply("leaky_relu", data, (x,), (lambda g: mul(g, Tensor(gate)),))


def clamp_min(x, lo: float) -> Tensor:
    x = as_tensor(x)
    gate = (x.data >= lo).astype(x.dtype)
    return _apply("clamp_min", np.maximum(x.data, lo), (x,), (lambda g: mul(g, Tensor(gate)),))


# ---------------------------------------------------------------------------
# shape primitives
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    return _apply("reshape", x.data.reshape(shape), (x,), (lambda g: reshape(g, x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    return _apply("transpose", _contig(np.transpose(x.data, axes)), (x,),
                  (lambda g: transpose(g, inverse),))


def swap01(x) -> Tensor:
    """Swap the first two axes (kernel in/out channel exchange)."""
    x = as_tensor(x)
    axes = (1, 0) + tuple(range(2, x.ndim))
    return transpose(x, axes)


def flip_hw(x) -> Tensor:
    """Reverse the last two (spatial) axes."""
    x = as_tensor(x)
    data = _contig(x.data[..., ::-1, ::-1])
    return _apply("flip_hw", data, (x,), (lambda g: flip_hw(g),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    try:
        data = _contig(np.broadcast_to(x.data, shape))
    except ValueError as exc:
        raise ShapeMismatch(f"cannot broadcast {x.shape} to {shape}") from exc
    return _apply("broadcast_to", data, (x,), (lambda g: _sum_to(g, x.shape),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    starts = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def make_vjp(i):
        return lambda g: narrow(g, axis, int(starts[i]), tensors[i].shape[axis])

    return _apply("concat", data, tuple(tensors), tuple(make_vjp(i) for i in range(len(tensors))))


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    data = _contig(x.data[tuple(index)])
    total = x.shape[axis]

    def vjp(g):
        pieces = []
        if start > 0:
            head = list(g.shape)
            head[axis] = start
            pieces.append(Tensor(np.zeros(head, dtype=g.dtype)))
        pieces.append(g)
        if start + length < total:
            tail = list(g.shape)
            tail[axis] = total - start - length
            pieces.append(Tensor(np.zeros(tail, dtype=g.dtype)))
        return concat(pieces, axis=axis) if len(pieces) > 1 else g

    return _apply("narrow", data, (x,), (vjp,))


def pad2d(x, pads) -> Tensor:
    """Zero-pad the last two axes; pads = (top, bottom, left, right)."""
    x = as_tensor(x)
    top, bottom, left, right = (int(p) for p in pads)
    spec = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    data = np.pad(x.data, spec)
    h, w = x.shape[-2], x.shape[-1]

    def vjp(g):
        g = narrow(g, g.ndim - 2, top, h)
        return narrow(g, g.ndim - 1, left, w)

    return _apply("pad2d", data, (x,), (vjp,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_axes(x, axes=None, keepdims: bool = False) -> Tensor:
    """Sum over the given axes with a 64-bit accumulator."""
    x = as_tensor(x)
    axes = tuple(range(x.ndim)) if axes is None else (
        (axes,) if isinstance(axes, int) else tuple(axes)
    )
    axes = tuple(a % max(x.ndim, 1) for a in axes)
    data = x.data.sum(axis=axes if x.ndim else None, keepdims=keepdims, dtype=np.float64)
    data = np.asarray(data, dtype=x.dtype)

    def vjp(g):
        if not keepdims and x.ndim:
            kept = [1 if i in axes else s for i, s in enumerate(x.shape)]
            g = reshape(g, kept)
        return broadcast_to(g, x.shape)

    return _apply("sum", data, (x,), (vjp,))


def mean(x, axes=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        count = x.size
    else:
        ax = (axes,) if isinstance(axes, int) else tuple(axes)
        count = int(np.prod([x.shape[a] for a in ax]))
    return mul(sum_axes(x, axes, keepdims), Tensor(np.array(1.0 / count, dtype=x.dtype)))


def variance(x, axes=None, keepdims: bool = False) -> Tensor:
    """Population variance (divide by the element count)."""
    x = as_tensor(x)
    centered = sub(x, mean(x, axes, keepdims=True))
    return mean(mul(centered, centered), axes, keepdims)


# ---------------------------------------------------------------------------
# resampling primitives
# ---------------------------------------------------------------------------


def zero_insert(x, stride: int) -> Tensor:
    """Insert stride-1 zeros between neighboring pixels of the last two axes."""
    x = as_tensor(x)
    if stride == 1:
        return x
    h, w = x.shape[-2], x.shape[-1]
    out_shape = x.shape[:-2] + ((h - 1) * stride + 1, (w - 1) * stride + 1)
    data = np.zeros(out_shape, dtype=x.dtype)
    data[..., ::stride, ::stride] = x.data
    return _apply("zero_insert", data, (x,), (lambda g: strided_sample(g, stride),))


def strided_sample(x, stride: int) -> Tensor:
    """Keep every stride-th pixel along the last two axes (offset 0)."""
    x = as_tensor(x)
    if stride == 1:
        return x
    data = _contig(x.data[..., ::stride, ::stride])
    h, w = x.shape[-2], x.shape[-1]

    def vjp(g):
        gh, gw = g.shape[-2], g.shape[-1]
        up = zero_insert(g, stride)
        pad_b = h - ((gh - 1) * stride + 1)
        pad_r = w - ((gw - 1) * stride + 1)
        if pad_b or pad_r:
            up = pad2d(up, (0, pad_b, 0, pad_r))
        return up

    return _apply("strided_sample", data, (x,), (vjp,))


def avg_pool2(x) -> Tensor:
    """2x2 average pooling (64-bit accumulation), halving both extents."""
    x = as_tensor(x)
    h, w = x.shape[-2], x.shape[-1]
    if h % 2 or w % 2:
        raise OddDimension(f"avg_pool2 needs even extents, got {h}x{w}")
    view = x.data.reshape(x.shape[:-2] + (h // 2, 2, w // 2, 2))
    data = view.mean(axis=(-3, -1), dtype=np.float64).astype(x.dtype)
    return _apply("avg_pool2", data, (x,), (lambda g: avg_unpool2(g),))


def avg_unpool2(x) -> Tensor:
    """Adjoint of avg_pool2: replicate each value into its 2x2 window / 4."""
    x = as_tensor(x)
    data = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1) * x.dtype.type(0.25)
    return _apply("avg_unpool2", data, (x,), (lambda g: avg_pool2(g),))


def nearest_up2(x) -> Tensor:
    """Nearest-neighbor 2x upsampling of the last two axes."""
    x = as_tensor(x)
    data = _contig(np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1))

    def vjp(g):
        return mul(avg_pool2(g), Tensor(np.array(4.0, dtype=x.dtype)))

    return _apply("nearest_up2", data, (x,), (vjp,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return _apply(
        "matmul", data, (a, b),
        (lambda g: matmul(g, transpose(b)), lambda g: matmul(transpose(a), g)),
    )


def dense(x, weight, bias=None) -> Tensor:
    """Affine map out = x @ weight + bias, batched over rows of x."""
    out = matmul(x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (out.shape[1],):
            raise ShapeMismatch(f"bias {bias.shape} does not match output width {out.shape[1]}")
        out = add(out, bias)
    return out
