"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays (float64 by default, float32 for training
speed). Each operation links its output to its inputs and records a
backward rule; ``Tensor.backward()`` materializes the tape — the
operations in topological order — and replays it once in reverse,
accumulating gradients additively. Callers zero gradients between
optimizer steps.

Reductions run in a fixed order (ascending index for segment sums), so
repeated forward passes over identical inputs are bit-identical.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray


def _as_array(data, dtype=None) -> Array:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """N-dimensional array with an optional gradient slot.

    ``data`` is immutable by convention once the tensor has entered a
    computation; only optimizers touch leaf ``data`` in place, between
    tapes. ``grad`` is lazily allocated and owned by the running
    backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float64, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=np.float64, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

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

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut from the tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- autodiff machinery ----------------------------------------------------

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) into every reachable ``grad`` slot.

        ``self`` must be a scalar. The tape (reverse topological order of
        the recorded ops) is rebuilt iteratively, so arbitrarily deep
        recurrent graphs are fine. Gradients accumulate: run
        ``zero_grad`` on parameters between steps.
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.shape}"
            )
        tape: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                tape.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(tape):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        data = self.data[key]
        out = _make(data, (self,))
        if out._parents:

            def bw(g: Array, key=key) -> None:
                buf = np.zeros_like(self.data)
                buf[key] += g
                self._accumulate(buf)

            out._backward = bw
        return out

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes=None) -> "Tensor":
        return transpose(self, axes)

    @property
    def T(self) -> "Tensor":
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: Array, parents: Sequence[Tensor]) -> Tensor:
    """Output tensor; keeps parent links only when a gradient can flow."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = None
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ops --------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = _make(a.data + b.data, (a, b))
    if out._parents:

        def bw(g: Array) -> None:
            a._accumulate(_unbroadcast(g, a.shape))
            b._accumulate(_unbroadcast(g, b.shape))

        out._backward = bw
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = _make(a.data * b.data, (a, b))
    if out._parents:

        def bw(g: Array) -> None:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
            b._accumulate(_unbroadcast(g * a.data, b.shape))

        out._backward = bw
    return out


def div(a: Tensor, b) -> Tensor:
    b = _wrap(b, a.dtype)
    out = _make(a.data / b.data, (a, b))
    if out._parents:

        def bw(g: Array) -> None:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        out._backward = bw
    return out


def exp(x: Tensor) -> Tensor:
    out = _make(np.exp(x.data), (x,))
    if out._parents:
        out._backward = lambda g: x._accumulate(g * out.data)
    return out


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; the derivative at exactly 0 is taken as 0."""
    root = np.sqrt(x.data)
    out = _make(root, (x,))
    if out._parents:

        def bw(g: Array) -> None:
            scale = np.divide(
                0.5, root, out=np.zeros_like(root), where=root != 0.0
            )
            x._accumulate(g * scale)

        out._backward = bw
    return out


def tanh(x: Tensor) -> Tensor:
    out = _make(np.tanh(x.data), (x,))
    if out._parents:
        out._backward = lambda g: x._accumulate(g * (1.0 - out.data * out.data))
    return out


def sigmoid(x: Tensor) -> Tensor:
    # computed via tanh for stability at large |x|
    s = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    out = _make(s, (x,))
    if out._parents:
        out._backward = lambda g: x._accumulate(g * out.data * (1.0 - out.data))
    return out


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """x where x >= 0, slope*x elsewhere."""
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must be in (0,1), got {slope}")
    mask = x.data >= 0
    out = _make(np.where(mask, x.data, x.data * slope), (x,))
    if out._parents:
        out._backward = lambda g: x._accumulate(g * np.where(mask, 1.0, slope))
    return out


# -- shape ops --------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = _make(x.data.reshape(shape), (x,))
    if out._parents:
        out._backward = lambda g: x._accumulate(g.reshape(x.shape))
    return out


def transpose(x: Tensor, axes=None) -> Tensor:
    out = _make(np.transpose(x.data, axes), (x,))
    if out._parents:
        inv = None if axes is None else np.argsort(axes)
        out._backward = lambda g: x._accumulate(np.transpose(g, inv))
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out._parents:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def bw(g: Array) -> None:
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                t._accumulate(piece)

        out._backward = bw
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    out = _make(np.stack([t.data for t in tensors], axis=axis), tensors)
    if out._parents:

        def bw(g: Array) -> None:
            for i, t in enumerate(tensors):
                t._accumulate(np.take(g, i, axis=axis))

        out._backward = bw
    return out


# -- reductions -------------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,))
    if out._parents:

        def bw(g: Array) -> None:
            if axis is None:
                x._accumulate(np.broadcast_to(g, x.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(np.broadcast_to(g, x.shape).copy())

        out._backward = bw
    return out


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod(
        [x.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


# -- linear algebra ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product with exact backward rules."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = _make(a.data @ b.data, (a, b))
    if out._parents:

        def bw(g: Array) -> None:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

        out._backward = bw
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, stabilized by row-max subtraction."""
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)
    out = _make(y, (x,))
    if out._parents:

        def bw(g: Array) -> None:
            dot = (g * y).sum(axis=1, keepdims=True)
            x._accumulate(y * (g - dot))

        out._backward = bw
    return out


# -- structured ops ---------------------------------------------------------------


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int) -> Tensor:
    """Valid (no padding) cross-correlation.

    ``x`` is [C,H,W] or [B,C,H,W]; ``kernels`` is [O,C,kh,kw]; output
    spatial size is floor((H-kh)/stride)+1 per side. Gradients are exact
    for input, kernels and the per-channel bias.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(
            f"conv2d needs [B,C,H,W] input and [O,C,kh,kw] kernels, "
            f"got {x.shape} and {kernels.shape}"
        )
    B, C, H, W = xd.shape
    O, Ck, kh, kw = kernels.shape
    if Ck != C:
        raise ShapeError(f"conv2d channel mismatch: input {C}, kernels {Ck}")
    if kh > H or kw > W:
        raise ShapeError(
            f"conv2d kernel {kh}x{kw} larger than input {H}x{W}"
        )
    if stride < 1:
        raise ContractError(f"conv2d stride must be >= 1, got {stride}")
    Ho = (H - kh) // stride + 1
    Wo = (W - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # [B,C,Ho,Wo,kh,kw]
    out_data = np.einsum(
        "bcijkl,ockl->boij", windows, kernels.data, optimize=True
    )
    out_data = out_data + bias.data[None, :, None, None]
    out = _make(out_data[0] if squeeze else out_data, (x, kernels, bias))
    if out._parents:

        def bw(g: Array) -> None:
            g4 = g[None] if squeeze else g
            bias._accumulate(g4.sum(axis=(0, 2, 3)))
            kernels._accumulate(
                np.einsum("boij,bcijkl->ockl", g4, windows, optimize=True)
            )
            gx = np.zeros_like(xd)
            for di in range(kh):
                for dj in range(kw):
                    patch = np.einsum(
                        "boij,oc->bcij", g4, kernels.data[:, :, di, dj],
                        optimize=True,
                    )
                    gx[
                        :, :,
                        di : di + (Ho - 1) * stride + 1 : stride,
                        dj : dj + (Wo - 1) * stride + 1 : stride,
                    ] += patch
            x._accumulate(gx[0] if squeeze else gx)

        out._backward = bw
    return out


def segment_sum(values: Tensor, segment_ids, n_segments: int) -> Tensor:
    """Sum rows of ``values`` into ``n_segments`` buckets by id.

    Rows are accumulated in ascending segment order (stable within a
    segment), which pins the floating-point reduction order.
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.shape[0] != values.shape[0]:
        raise ShapeError(
            f"segment_ids length {ids.shape} does not match values {values.shape}"
        )
    if ids.size and (ids.min() < 0 or ids.max() >= n_segments):
        raise IndexError(
            f"segment id out of range [0,{n_segments}): "
            f"min={ids.min()}, max={ids.max()}"
        )
    order = np.argsort(ids, kind="stable")
    out_data = np.zeros((n_segments,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out_data, ids[order], values.data[order])
    out = _make(out_data, (values,))
    if out._parents:
        out._backward = lambda g: values._accumulate(g[ids])
    return out


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows by integer index; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    out = _make(x.data[idx], (x,))
    if out._parents:

        def bw(g: Array) -> None:
            buf = np.zeros_like(x.data)
            np.add.at(buf, idx, g)
            x._accumulate(buf)

        out._backward = bw
    return out


# -- gradient checking --------------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must map ``x`` to a scalar tensor. The analytic gradient comes
    from one backward pass; each coordinate is then perturbed by ±h and
    the error is |analytic - numeric| / max(1, |analytic|), maximized
    over coordinates. ``x.data`` is restored on exit.
    """
    if not x.data.flags["C_CONTIGUOUS"]:
        x.data = np.ascontiguousarray(x.data)
    x.requires_grad = True
    x.zero_grad()
    out = f(x)
    out.backward()
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    base = x.data.copy()
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        x.data.reshape(-1)[i] = orig + h
        hi = float(f(x).data)
        x.data.reshape(-1)[i] = orig - h
        lo = float(f(x).data)
        x.data.reshape(-1)[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * h)
    x.data[...] = base

    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(err.max()) if err.size else 0.0
