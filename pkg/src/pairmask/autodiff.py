"""Minimal dense-tensor reverse-mode autodiff engine on numpy.

Every operator records its inputs and a vector-Jacobian closure on the
output tensor; ``backward`` walks the recorded graph in reverse
topological order exactly once and accumulates gradients into leaves
that were created with ``requires_grad=True``.

Scope is deliberately small: exactly the operators the paired-pretraining
model needs, each with an analytic backward that is validated against
central finite differences by ``grad_check``. Forward passes are pure
numpy on contiguous arrays, so identical inputs give bit-identical
outputs; reductions keep numpy's fixed sequential order.

Numeric defaults are float32. Gradient checking runs the same graphs at
float64 (pass 64-bit inputs; ops inherit the dtype of their arguments).
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when operator inputs have incompatible shapes or dtypes."""


class GraphError(RuntimeError):
    """Raised on invalid graph use, e.g. backward through a spent graph."""


class Tensor:
    """A dense array plus the graph edge that produced it.

    ``data`` is treated as immutable once wrapped; in-place optimizer
    updates go through ``assign_`` which is only legal on leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps", "_op", "_spent")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        # grad_check perturbs through flat views; keep leaves contiguous
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjps: tuple = ()
        self._op: str = "leaf"
        self._spent = False

    # ---- basic introspection ----
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, dtype={self.data.dtype})"

    # ---- graph helpers ----
    def zero_grad(self) -> None:
        self.grad = None

    def assign_(self, new_data: np.ndarray) -> None:
        if self._parents:
            raise GraphError("assign_ is only legal on leaf tensors")
        new_data = np.ascontiguousarray(new_data, dtype=self.data.dtype)
        if new_data.shape != self.data.shape:
            raise ShapeError(
                f"assign_: shape {new_data.shape} != parameter shape {self.data.shape}"
            )
        self.data = new_data

    def backward(self) -> None:
        backward(self)

    # ---- operator sugar ----
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _make(data: np.ndarray, parents: Sequence[Tensor], vjps: Sequence[Callable], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._spent = False
    out._op = op
    track = any(p.requires_grad or p._parents for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
    else:
        out._parents = ()
        out._vjps = ()
    return out


def _check_same_dtype(op: str, *tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _make(
        data,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("mul", a, b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc
    return _make(
        data,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.data, a.shape),
            lambda g: _unbroadcast(g * a.data, b.shape),
        ),
        "mul",
    )


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * np.asarray(s, dtype=a.data.dtype), (a,), (lambda g: g * s,), "scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Both 2-D, or both stacked with equal leading dims."""
    _check_same_dtype("matmul", a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: ranks {a.ndim} and {b.ndim}, need >= 2")
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dims differ, {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} vs {b.shape}")
    data = a.data @ b.data
    return _make(
        data,
        (a, b),
        (
            lambda g: g @ b.data.swapaxes(-1, -2),
            lambda g: a.data.swapaxes(-1, -2) @ g,
        ),
        "matmul",
    )


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for rank {a.ndim}")
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), (lambda g: g.transpose(inverse),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {a.shape} -> {shape}") from exc
    old = a.shape
    return _make(data, (a,), (lambda g: g.reshape(old),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    _check_same_dtype("concat", *tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} on axis {axis}") from exc
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp_for(i: int) -> Callable:
        return lambda g: np.split(g, splits, axis=axis)[i]

    return _make(data, tuple(tensors), tuple(vjp_for(i) for i in range(len(tensors))), "concat")


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis."""
    n = a.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice_axis: [{start}:{stop}] out of range for axis size {n}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros(shape, dtype=g.dtype)
        out[index] = g
        return out

    return _make(a.data[index].copy(), (a,), (vjp,), "slice_axis")


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; duplicate indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: indices must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return out

    return _make(a.data[idx].copy(), (a,), (vjp,), "take_rows")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Row lookup into an embedding table, shape [V, D] -> [len(ids), D]."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"embedding_lookup: ids must be 1-D, got {idx.shape}")
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: id out of range for table {table.shape}")
    shape = table.shape

    def vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return out

    return _make(table.data[idx].copy(), (table,), (vjp,), "embedding_lookup")


def layer_normalize(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """LayerNorm over the last axis with learned gain and bias."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_normalize: gain/bias {gain.shape}/{bias.shape} vs last dim {n}")
    _check_same_dtype("layer_normalize", x, gain, bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    d = x.data - mu
    var = (d * d).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    data = gain.data * xhat + bias.data

    lead = tuple(range(x.ndim - 1))

    def vjp_x(g: np.ndarray) -> np.ndarray:
        dxhat = g * gain.data
        dvar = (dxhat * d).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
        dmu = -(dxhat.sum(axis=-1, keepdims=True)) * inv
        return dxhat * inv + dvar * (2.0 / n) * d + dmu / n

    return _make(
        data,
        (x, gain, bias),
        (
            vjp_x,
            lambda g: (g * xhat).sum(axis=lead),
            lambda g: g.sum(axis=lead),
        ),
        "layer_normalize",
    )


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> np.ndarray:
        dot = (g * data).sum(axis=axis, keepdims=True)
        return data * (g - dot)

    return _make(data, (x,), (vjp,), "softmax")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = (x.data * phi).astype(x.data.dtype)
    density = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI

    def vjp(g: np.ndarray) -> np.ndarray:
        return g * (phi + x.data * density)

    return _make(data, (x,), (vjp,), "gelu")


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        n = x.data.size
        data = np.asarray(x.data.mean(), dtype=x.data.dtype)
        shape = x.shape
        return _make(data, (x,), (lambda g: np.broadcast_to(g / n, shape).copy(),), "mean")
    n = x.shape[axis]
    data = x.data.mean(axis=axis)
    ax = axis

    def vjp(g: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.expand_dims(g / n, ax), x.shape).copy()

    return _make(data, (x,), (vjp,), "mean")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    data = np.asarray(x.data.sum(), dtype=x.data.dtype)
    return _make(data, (x,), (lambda g: np.broadcast_to(g, shape).copy(),), "sum_all")


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    if pred.shape != target.shape:
        raise ShapeError(f"mse: shapes {pred.shape} vs {target.shape}")
    _check_same_dtype("mse", pred, target)
    diff = pred.data - target.data
    n = diff.size
    data = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)
    return _make(
        data,
        (pred, target),
        (lambda g: (2.0 / n) * g * diff, lambda g: (-2.0 / n) * g * diff),
        "mse",
    )


def weighted_mse(pred: Tensor, target: Tensor, weights: np.ndarray, eps: float = 1e-8) -> Tensor:
    """Weighted squared error: sum(w * (pred-target)^2) / (sum(w) + eps).

    ``weights`` is a constant array (no gradient path through it).
    """
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights)
    if pred.shape != target.shape or w.shape != pred.shape:
        raise ShapeError(f"weighted_mse: shapes {pred.shape}/{target.shape}/{w.shape}")
    if np.any(w < 0):
        raise ValueError("weighted_mse: negative weights")
    w = w.astype(pred.data.dtype, copy=False)
    diff = pred.data - target.data
    denom = float(w.sum()) + eps
    data = np.asarray((w * diff * diff).sum() / denom, dtype=pred.data.dtype)
    return _make(
        data,
        (pred, target),
        (
            lambda g: (2.0 / denom) * g * w * diff,
            lambda g: (-2.0 / denom) * g * w * diff,
        ),
        "weighted_mse",
    )


def cross_entropy_with_logits(logits: Tensor, targets) -> Tensor:
    """Per-row negative log likelihood, shape [L, V] + [L] ids -> [L].

    Uses max-subtracted logsumexp; finite logits give finite output.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy_with_logits: logits must be 2-D, got {logits.shape}")
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy_with_logits: targets {idx.shape} vs logits rows {logits.shape[0]}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= logits.shape[1]):
        raise ShapeError("cross_entropy_with_logits: target id out of vocabulary range")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    sumexp = e.sum(axis=1, keepdims=True)
    lse = (np.log(sumexp) + zmax).squeeze(1)
    rows = np.arange(idx.size)
    data = lse - z[rows, idx]
    probs = e / sumexp

    def vjp(g: np.ndarray) -> np.ndarray:
        grad = probs * g[:, None]
        grad[rows, idx] -= g
        return grad

    return _make(data, (logits,), (vjp,), "cross_entropy_with_logits")


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1: [Cin,H,W] -> [Cout,H,W]."""
    _check_same_dtype("conv2d", x, w, *( (b,) if b is not None else () ))
    if x.ndim != 3 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d: x {x.shape}, w {w.shape}; need [Cin,H,W] and [Cout,Cin,3,3]")
    cin, h, wd = x.shape
    cout = w.shape[0]
    if w.shape[1] != cin:
        raise ShapeError(f"conv2d: channel mismatch, x has {cin}, w expects {w.shape[1]}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} vs {cout} output channels")

    xp = np.zeros((cin, h + 2, wd + 2), dtype=x.data.dtype)
    xp[:, 1 : h + 1, 1 : wd + 1] = x.data
    # cols[k] is the input window for kernel tap k = 3*di + dj.  (9, Cin, H, W)
    cols = np.stack([xp[:, di : di + h, dj : dj + wd] for di in range(3) for dj in range(3)])
    w9 = w.data.reshape(cout, cin, 9)
    data = np.einsum("ock,kchw->ohw", w9, cols)
    if b is not None:
        data = data + b.data[:, None, None]

    def vjp_x(g: np.ndarray) -> np.ndarray:
        gcols = np.einsum("ock,ohw->kchw", w9, g)
        gxp = np.zeros_like(xp)
        for k in range(9):
            di, dj = divmod(k, 3)
            gxp[:, di : di + h, dj : dj + wd] += gcols[k]
        return gxp[:, 1 : h + 1, 1 : wd + 1]

    def vjp_w(g: np.ndarray) -> np.ndarray:
        return np.einsum("ohw,kchw->ock", g, cols).reshape(cout, cin, 3, 3)

    parents = [x, w]
    vjps = [vjp_x, vjp_w]
    if b is not None:
        parents.append(b)
        vjps.append(lambda g: g.sum(axis=(1, 2)))
    return _make(data, tuple(parents), tuple(vjps), "conv2d")


def _bilinear_grids(n: int, factor: int):
    """Source indices and blend weights for half-pixel-center upsampling."""
    dst = np.arange(n * factor, dtype=np.float64)
    src = np.clip((dst + 0.5) / factor - 0.5, 0.0, n - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    t = src - i0
    return i0, i1, t


def bilinear_upsample(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear 2x upsampling of a single-channel image [H,W] -> [fH,fW].

    Half-pixel-center sampling; blend weights sum to one per output pixel,
    so constant inputs are preserved exactly.
    """
    if x.ndim != 2:
        raise ShapeError(f"bilinear_upsample: need 2-D image, got {x.shape}")
    if factor < 1:
        raise ShapeError(f"bilinear_upsample: factor {factor} < 1")
    h, w = x.shape
    i0, i1, ti = _bilinear_grids(h, factor)
    j0, j1, tj = _bilinear_grids(w, factor)
    ti = ti[:, None].astype(x.data.dtype)
    tj = tj[None, :].astype(x.data.dtype)
    d = x.data
    data = (
        d[np.ix_(i0, j0)] * (1 - ti) * (1 - tj)
        + d[np.ix_(i1, j0)] * ti * (1 - tj)
        + d[np.ix_(i0, j1)] * (1 - ti) * tj
        + d[np.ix_(i1, j1)] * ti * tj
    )

    def vjp(g: np.ndarray) -> np.ndarray:
        gx = np.zeros((h, w), dtype=g.dtype)
        np.add.at(gx, (i0[:, None], j0[None, :]), g * (1 - ti) * (1 - tj))
        np.add.at(gx, (i1[:, None], j0[None, :]), g * ti * (1 - tj))
        np.add.at(gx, (i0[:, None], j1[None, :]), g * (1 - ti) * tj)
        np.add.at(gx, (i1[:, None], j1[None, :]), g * ti * tj)
        return gx

    return _make(data, (x,), (vjp,), "bilinear_upsample")


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list:
    """Iterative post-order DFS; graphs run to thousands of nodes."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf.

    The loss must be scalar. Each graph may be walked once; a second
    backward through the same loss raises ``GraphError`` (gradients from
    the first walk would silently double otherwise).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._spent:
        raise GraphError("backward already ran on this graph; rebuild the graph or reset")
    loss._spent = True

    order = _topo_order(loss)
    grads: dict = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in zip(node._parents, node._vjps):
            if not parent.requires_grad:
                continue
            pg = vjp(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad_leaf(loss: Tensor, leaf: Tensor) -> np.ndarray:
    """Convenience: run backward and return a copy of ``leaf.grad``."""
    leaf.zero_grad()
    backward(loss)
    if leaf.grad is None:
        return np.zeros_like(leaf.data)
    return leaf.grad.copy()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Compare analytic gradients of scalar ``f`` against central differences.

    Inputs must be float64 leaves with ``requires_grad=True``. Returns the
    maximum relative error over all checked coordinates, with the
    denominator clamped at 1e-8 so agreeing zeros score zero. When
    ``max_coords`` is set, a random subset of coordinates per input is
    checked (needed for composite losses over whole parameter sets).
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        if not t.requires_grad:
            raise ValueError("grad_check inputs must have requires_grad=True")
        t.zero_grad()

    loss = f(inputs)
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for t, ana in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = f(inputs).item()
            flat[c] = orig - eps
            f_minus = f(inputs).item()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = ana.reshape(-1)[c]
            denom = max(abs(a), abs(numeric), 1e-8)
            rel = abs(a - numeric) / denom
            if rel > worst:
                worst = rel
    return worst


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.asarray(data), requires_grad=True, dtype=dtype)


def constant(data, dtype=DEFAULT_DTYPE) -> Tensor:
    """A non-trainable tensor (targets, fixed tables)."""
    return Tensor(np.asarray(data), requires_grad=False, dtype=dtype)
