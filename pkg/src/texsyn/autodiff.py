"""Dense tensors and reverse-mode automatic differentiation.

The engine is deliberately small.  A :class:`Tensor` wraps a numpy array
together with a gradient slot; every operation builds a define-by-run graph
(the graph doubles as the tape and is rebuilt on each forward pass), and
:func:`backward` replays it in reverse topological order.

Two float widths exist.  Training code runs in float32 for speed; gradient
checks build their graphs in float64, because central finite differences are
unreliable in single precision.  Operations never mix widths: all operands of
one op must share a dtype.

Every public operation validates that its result is finite and raises
:class:`NonFiniteError` otherwise, so NaN/Inf can never propagate silently.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

TRAIN_DTYPE = np.dtype(np.float32)
CHECK_DTYPE = np.dtype(np.float64)


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def _check_finite(array: np.ndarray, op: str) -> None:
    if array.size and not np.isfinite(array).all():
        raise NonFiniteError(f"non-finite values in output of '{op}'")


class Tensor:
    """A dense float array enrolled in a differentiation graph.

    ``data`` holds the value, ``grad`` the accumulated gradient (allocated
    lazily, zero until a backward pass reaches this node).  Leaves are
    constructed directly; operation results additionally carry their parent
    nodes and a closure computing the parents' adjoints.  ``requires_grad``
    marks leaves that should receive gradients; it propagates automatically
    to operation results.
    """

    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype=None,
        _parents: tuple = (),
        _backward=None,
        _op: str = "leaf",
    ):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (TRAIN_DTYPE, CHECK_DTYPE):
            arr = arr.astype(TRAIN_DTYPE)
        _check_finite(arr, _op)
        self.data = arr
        self.requires_grad = requires_grad
        self._grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def detach(self) -> "Tensor":
        """A constant leaf sharing this tensor's value."""
        return Tensor(self.data, _op="detach")

    def backward(self) -> None:
        backward(self)

    def sum(self) -> "Tensor":
        out_data = self.data.sum()
        shape, dtype = self.shape, self.dtype

        def grad_fn(g):
            return (np.broadcast_to(g, shape).astype(dtype, copy=False),)

        return _result(out_data, (self,), grad_fn, "sum")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, op={self._op!r})"

    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _result(data: np.ndarray, parents: tuple, grad_fn, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(
        data,
        requires_grad=needs,
        dtype=data.dtype,
        _parents=parents if needs else (),
        _backward=grad_fn if needs else None,
        _op=op,
    )


def _same_dtype(op: str, *tensors: Tensor):
    dtype = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dtype:
            raise ShapeError(
                f"{op}: mixed dtypes {dtype.name} and {t.dtype.name}; "
                "build the whole graph in one precision"
            )
    return dtype


def _toposort(root: Tensor) -> list:
    order: list[Tensor] = []
    seen = {id(root)}
    stack: list[tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, idx = stack.pop()
        parents = node._parents
        while idx < len(parents) and (
            id(parents[idx]) in seen or not parents[idx].requires_grad
        ):
            idx += 1
        if idx < len(parents):
            stack.append((node, idx + 1))
            child = parents[idx]
            seen.add(id(child))
            stack.append((child, 0))
        else:
            order.append(node)
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every reachable node requiring gradients.

    ``loss`` must be scalar (shape () or (1,)).  Adjoints are computed per
    call and then added into each node's ``grad``, so repeated calls without
    zeroing accumulate.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    adjoint: dict[int, np.ndarray] = {
        id(loss): np.ones(loss.shape, dtype=loss.dtype)
    }
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node._grad is None:
            node._grad = g.copy()
        else:
            node._grad = node._grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> tuple:
    """Output shape for an elementwise binary op; one side may be scalar."""
    if a.shape == b.shape:
        return a.shape
    if a.size == 1:
        return b.shape
    if b.size == 1:
        return a.shape
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum().reshape(shape).astype(g.dtype, copy=False)


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("add", a, b)
    _binary_shapes("add", a, b)

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("sub", a, b)
    _binary_shapes("sub", a, b)

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("mul", a, b)
    _binary_shapes("mul", a, b)

    def grad_fn(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), grad_fn, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    if not np.isfinite(factor):
        raise NonFiniteError("scale: factor is not finite")
    s = x.dtype.type(factor)

    def grad_fn(g):
        return (g * s,)

    return _result(x.data * s, (x,), grad_fn, "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def grad_fn(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, x.dtype.type(0)), (x,), grad_fn, "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    s = x.dtype.type(slope)
    mask = x.data >= 0

    def grad_fn(g):
        return (np.where(mask, g, g * s),)

    return _result(np.where(mask, x.data, x.data * s), (x,), grad_fn, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1 - y * y),)

    return _result(y, (x,), grad_fn, "tanh")


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    in_shape = x.shape

    def grad_fn(g):
        return (g.reshape(in_shape),)

    return _result(x.data.reshape(shape), (x,), grad_fn, "reshape")


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d: expected rank 2, got shape {x.shape}")

    def grad_fn(g):
        return (g.T,)

    return _result(x.data.T, (x,), grad_fn, "transpose2d")


def mean(x: Tensor) -> Tensor:
    inv = x.dtype.type(1.0 / x.size)
    shape = x.shape

    def grad_fn(g):
        return (np.broadcast_to(g * inv, shape).astype(g.dtype, copy=False),)

    return _result(x.data.mean(), (x,), grad_fn, "mean")


def l1_norm(x: Tensor) -> Tensor:
    """Sum of absolute values; the subgradient at 0 is taken as 0."""
    sign = np.sign(x.data)

    def grad_fn(g):
        return (g * sign,)

    return _result(np.abs(x.data).sum(), (x,), grad_fn, "l1_norm")


# ---------------------------------------------------------------------------
# structural primitives


def outer_product(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("outer_product", a, b)
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(
            f"outer_product: expected two 1-D tensors, got {a.shape} and {b.shape}"
        )

    def grad_fn(g):
        return g @ b.data, g.T @ a.data

    return _result(np.outer(a.data, b.data), (a, b), grad_fn, "outer_product")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: expected rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), grad_fn, "matmul")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _same_dtype("concat_channels", a, b)
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError(
            f"concat_channels: expected rank-4 tensors, got {a.shape} and {b.shape}"
        )
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(
            f"concat_channels: batch/spatial mismatch {a.shape} vs {b.shape}"
        )

    def grad_fn(g):
        return g[:, :ca], g[:, ca:]

    return _result(
        np.concatenate([a.data, b.data], axis=1), (a, b), grad_fn, "concat_channels"
    )


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest: expected rank 4, got shape {x.shape}")
    if int(factor) < 1:
        raise ShapeError(f"upsample_nearest: factor must be >= 1, got {factor}")
    f = int(factor)
    n, c, h, w = x.shape

    def grad_fn(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    out = x.data.repeat(f, axis=2).repeat(f, axis=3)
    return _result(out, (x,), grad_fn, "upsample_nearest")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2."""
    if x.data.ndim != 4:
        raise ShapeError(f"avg_pool2: expected rank 4, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2: spatial size {h}x{w} is not even")
    quarter = x.dtype.type(0.25)

    def grad_fn(g):
        return ((g * quarter).repeat(2, axis=2).repeat(2, axis=3),)

    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return _result(out, (x,), grad_fn, "avg_pool2")


# ---------------------------------------------------------------------------
# convolutions


def _windows(padded: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Sliding cross-correlation windows [N, C, H', W', kh, kw] (a view)."""
    n, c, h, w = padded.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = padded.strides
    return as_strided(
        padded,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )


def conv2d(
    input: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    pad: int = 0,
) -> Tensor:
    """Cross-correlation of [N,C,H,W] with kernel [O,C,kh,kw] plus bias [O]."""
    operands = (input, kernel) if bias is None else (input, kernel, bias)
    _same_dtype("conv2d", *operands)
    if input.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(
            f"conv2d: expected rank-4 input and kernel, got {input.shape} and {kernel.shape}"
        )
    n, c, h, w = input.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise ShapeError(
            f"conv2d: kernel expects {ck} input channels but input has {c}"
        )
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    stride = int(stride)
    pad = int(pad)
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeError(f"conv2d: pad must be >= 0, got {pad}")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input "
            f"{h + 2 * pad}x{w + 2 * pad}"
        )

    padded = (
        np.pad(input.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        if pad
        else input.data
    )
    win = _windows(padded, kh, kw, stride)
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)
    oh, ow = out.shape[2], out.shape[3]

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        grad_in = None
        if input.requires_grad:
            gpad = np.zeros_like(padded)
            for u in range(kh):
                for v in range(kw):
                    # [n,oh,ow,c] contribution of kernel tap (u, v)
                    t = np.tensordot(g, kernel.data[:, :, u, v], axes=([1], [0]))
                    gpad[
                        :,
                        :,
                        u : u + stride * (oh - 1) + 1 : stride,
                        v : v + stride * (ow - 1) + 1 : stride,
                    ] += t.transpose(0, 3, 1, 2)
            grad_in = gpad[:, :, pad : pad + h, pad : pad + w] if pad else gpad
        grad_k = None
        if kernel.requires_grad:
            grad_k = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias is None:
            return grad_in, grad_k
        grad_b = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return grad_in, grad_k, grad_b

    return _result(out, operands, grad_fn, "conv2d")


def full_conv2d(input: Tensor, kernel: Tensor, stride: int = 1) -> Tensor:
    """Transposed convolution: the adjoint of conv2d with the same kernel.

    ``input`` is [N,I,h,w] and ``kernel`` [I,O,kh,kw]; the output spatial size
    is (h-1)*stride + kh.  In the generator this expands 1x1 seed maps into
    the first spatial representation.
    """
    _same_dtype("full_conv2d", input, kernel)
    if input.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(
            f"full_conv2d: expected rank-4 input and kernel, got {input.shape} and {kernel.shape}"
        )
    n, i, h, w = input.shape
    ik, o, kh, kw = kernel.shape
    if ik != i:
        raise ShapeError(
            f"full_conv2d: kernel expects {ik} input channels but input has {i}"
        )
    stride = int(stride)
    if stride < 1:
        raise ShapeError(f"full_conv2d: stride must be >= 1, got {stride}")

    oh = (h - 1) * stride + kh
    ow = (w - 1) * stride + kw
    out = np.zeros((n, o, oh, ow), dtype=input.dtype)
    for u in range(kh):
        for v in range(kw):
            t = np.tensordot(input.data, kernel.data[:, :, u, v], axes=([1], [0]))
            out[
                :,
                :,
                u : u + stride * (h - 1) + 1 : stride,
                v : v + stride * (w - 1) + 1 : stride,
            ] += t.transpose(0, 3, 1, 2)
    _check_finite(out, "full_conv2d")

    def grad_fn(g):
        g = np.ascontiguousarray(g)
        win = _windows(g, kh, kw, stride)
        grad_in = None
        if input.requires_grad:
            grad_in = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3]))
            grad_in = np.ascontiguousarray(grad_in.transpose(0, 3, 1, 2))
        grad_k = None
        if kernel.requires_grad:
            grad_k = np.tensordot(input.data, win, axes=([0, 2, 3], [0, 2, 3]))
        return grad_in, grad_k

    return _result(out, (input, kernel), grad_fn, "full_conv2d")
