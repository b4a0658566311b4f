"""Dense float64 matrix kernels with hand-written backward passes.

All pipeline code works on column-position matrices: a sequence of n
vectors of dimension d is stored as a (d, n) array. Forward ops record
themselves on the active GradientTape (if any); ``backward`` replays the
records in reverse and accumulates gradients per Param. Params with
``frozen=True`` never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf


class NumericsError(ValueError):
    """Invalid numeric input (non-finite values, bad domains)."""


class ShapeError(NumericsError):
    """Operand shapes do not match the operation's contract."""


class TapeError(RuntimeError):
    """Backward requested for a value not recorded on the tape."""


def matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validated float64 matrix constructor.

    Accepts nested sequences or a flat row-major sequence plus explicit
    (rows, cols). Rejects empty, non-finite, and mis-sized input.
    """
    arr = np.asarray(data, dtype=np.float64)
    if rows is not None and cols is not None and arr.ndim == 1:
        if arr.size != rows * cols:
            raise ShapeError(f"flat data of length {arr.size} cannot fill {rows}x{cols}")
        arr = arr.reshape(rows, cols)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"expected 2-D data, got ndim={arr.ndim}")
    if arr.size == 0:
        raise ShapeError("empty matrix")
    if rows is not None and arr.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise NumericsError("matrix entries must be finite")
    return arr


class Param:
    """A named learnable array. ``frozen`` excludes it from gradients."""

    __slots__ = ("name", "value", "frozen")

    def __init__(self, name: str, value, frozen: bool = False):
        self.name = name
        self.value = matrix(value)
        self.frozen = frozen

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Param({self.name!r}, {self.value.shape}, frozen={self.frozen})"


@dataclass(frozen=True)
class LinearParams:
    """Affine map y = w @ x + b with b broadcast across columns."""

    w: Param
    b: Param

    def __post_init__(self):
        if self.b.shape != (self.w.shape[0], 1):
            raise ShapeError(
                f"bias shape {self.b.shape} does not match weight rows {self.w.shape[0]}"
            )

    @property
    def d_out(self) -> int:
        return self.w.shape[0]

    @property
    def d_in(self) -> int:
        return self.w.shape[1]


ACTIVATIONS = ("identity", "relu", "gelu", "geglu", "softmax")


@dataclass(frozen=True)
class MlpSpec:
    """Ordered (activation, LinearParams) layers; activation follows the affine map."""

    layers: tuple[tuple[str, LinearParams], ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("MlpSpec needs at least one layer")
        dim = self.layers[0][1].d_in
        for act, lin in self.layers:
            if act not in ACTIVATIONS:
                raise NumericsError(f"unknown activation {act!r}")
            if lin.d_in != dim:
                raise ShapeError(f"layer input dim {lin.d_in} breaks the chain at {dim}")
            dim = lin.d_out
            if act == "geglu":
                if dim % 2 != 0:
                    raise ShapeError("geglu layer needs an even output dimension")
                dim //= 2
        object.__setattr__(self, "_d_out", dim)

    @property
    def d_in(self) -> int:
        return self.layers[0][1].d_in

    @property
    def d_out(self) -> int:
        return self._d_out

    def params(self) -> list[Param]:
        out = []
        for _, lin in self.layers:
            out.extend((lin.w, lin.b))
        return out


# --- tape machinery ---------------------------------------------------------

_ACTIVE_TAPE: "GradientTape | None" = None


class Tensor:
    """A forward value plus (when taped) links back to its inputs."""

    __slots__ = ("value", "parents", "vjps", "param")

    def __init__(self, value: np.ndarray, parents=(), vjps=(), param: Param | None = None):
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.param = param

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on non-scalar of shape {self.value.shape}")
        return float(self.value.reshape(()))

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor{self.value.shape}"


class GradientTape:
    """Records every op of one training step; owns the backward sweep.

    Nodes are appended in creation order, which is a topological order by
    construction, so backward is a single reverse pass.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self._ids: set[int] = set()
        self._leaves: dict[int, Tensor] = {}

    def __enter__(self) -> "GradientTape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeError("a GradientTape is already active")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _append(self, node: Tensor):
        self.nodes.append(node)
        self._ids.add(id(node))


def _node(value: np.ndarray, parents=(), vjps=()) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is None:
        return Tensor(value)
    node = Tensor(value, tuple(parents), tuple(vjps))
    tape._append(node)
    return node


def as_value(x) -> np.ndarray:
    """The plain ndarray behind a Tensor, Param, or array-like."""
    if isinstance(x, (Tensor, Param)):
        return x.value
    return np.asarray(x, dtype=np.float64)


def constant(x) -> Tensor:
    """Wrap a raw array or scalar as a non-differentiable Tensor."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    return _node(arr)


def lift(x) -> Tensor:
    """Coerce Params, arrays, and scalars into Tensors on the active tape."""
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Param):
        tape = _ACTIVE_TAPE
        if tape is None:
            return Tensor(x.value)
        leaf = tape._leaves.get(id(x))
        if leaf is None:
            leaf = Tensor(x.value, (), (), param=x)
            tape._append(leaf)
            tape._leaves[id(x)] = leaf
        return leaf
    return constant(x)


def backward(tape: GradientTape, loss: Tensor) -> dict[Param, np.ndarray]:
    """Reverse sweep from ``loss``; returns gradients for non-frozen Params."""
    if id(loss) not in tape._ids:
        raise TapeError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise ShapeError("backward needs a scalar loss")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    out: dict[Param, np.ndarray] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.param is not None:
            if not node.param.frozen:
                acc = out.get(node.param)
                out[node.param] = g if acc is None else acc + g
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            pg = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return out


# --- elementwise and structural ops ----------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value + b.value,
        (a, b),
        (
            lambda g, s=a.shape: _unbroadcast(g, s),
            lambda g, s=b.shape: _unbroadcast(g, s),
        ),
    )


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value - b.value,
        (a, b),
        (
            lambda g, s=a.shape: _unbroadcast(g, s),
            lambda g, s=b.shape: -_unbroadcast(g, s),
        ),
    )


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value * b.value,
        (a, b),
        (
            lambda g, bv=b.value, s=a.shape: _unbroadcast(g * bv, s),
            lambda g, av=a.value, s=b.shape: _unbroadcast(g * av, s),
        ),
    )


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    return _node(
        a.value / b.value,
        (a, b),
        (
            lambda g, bv=b.value, s=a.shape: _unbroadcast(g / bv, s),
            lambda g, av=a.value, bv=b.value, s=b.shape: _unbroadcast(-g * av / (bv * bv), s),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    return _node(
        a.value @ b.value,
        (a, b),
        (
            lambda g, bv=b.value: g @ bv.T,
            lambda g, av=a.value: av.T @ g,
        ),
    )


def transpose(a) -> Tensor:
    a = lift(a)
    return _node(a.value.T.copy(), (a,), (lambda g: g.T,))


def concat_cols(parts) -> Tensor:
    parts = [lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat of nothing")
    d = parts[0].shape[0]
    offsets = [0]
    for p in parts:
        if p.shape[0] != d:
            raise ShapeError("column concat needs a shared row count")
        offsets.append(offsets[-1] + p.shape[1])
    vjps = tuple(
        (lambda g, j0=offsets[k], j1=offsets[k + 1]: g[:, j0:j1]) for k in range(len(parts))
    )
    return _node(np.concatenate([p.value for p in parts], axis=1), tuple(parts), vjps)


def concat_rows(parts) -> Tensor:
    parts = [lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat of nothing")
    n = parts[0].shape[1]
    offsets = [0]
    for p in parts:
        if p.shape[1] != n:
            raise ShapeError("row concat needs a shared column count")
        offsets.append(offsets[-1] + p.shape[0])
    vjps = tuple(
        (lambda g, i0=offsets[k], i1=offsets[k + 1]: g[i0:i1, :]) for k in range(len(parts))
    )
    return _node(np.concatenate([p.value for p in parts], axis=0), tuple(parts), vjps)


def slice_cols(a, j0: int, j1: int) -> Tensor:
    a = lift(a)

    def vjp(g, shape=a.shape, j0=j0, j1=j1):
        z = np.zeros(shape)
        z[:, j0:j1] = g
        return z

    return _node(a.value[:, j0:j1].copy(), (a,), (vjp,))


def slice_rows(a, i0: int, i1: int) -> Tensor:
    a = lift(a)

    def vjp(g, shape=a.shape, i0=i0, i1=i1):
        z = np.zeros(shape)
        z[i0:i1, :] = g
        return z

    return _node(a.value[i0:i1, :].copy(), (a,), (vjp,))


def reshape(a, rows: int, cols: int) -> Tensor:
    a = lift(a)
    if a.value.size != rows * cols:
        raise ShapeError(f"cannot reshape {a.shape} to ({rows}, {cols})")
    return _node(
        a.value.reshape(rows, cols).copy(),
        (a,),
        (lambda g, s=a.shape: g.reshape(s),),
    )


def relu(a) -> Tensor:
    a = lift(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), (lambda g, m=mask: g * m,))


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    a = lift(a)
    x = a.value
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def vjp(g, x=x, cdf=cdf):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return g * (cdf + x * pdf)

    return _node(x * cdf, (a,), (vjp,))


def geglu(a) -> Tensor:
    """Gated unit: split rows in half, gelu the top half, multiply by the bottom."""
    a = lift(a)
    if a.shape[0] % 2 != 0:
        raise ShapeError("geglu needs an even row count")
    h = a.shape[0] // 2
    return mul(gelu(slice_rows(a, 0, h)), slice_rows(a, h, 2 * h))


def exp(a) -> Tensor:
    a = lift(a)
    out = np.exp(a.value)
    return _node(out, (a,), (lambda g, o=out: g * o,))


def log(a) -> Tensor:
    a = lift(a)
    if np.any(a.value <= 0):
        raise NumericsError("log of non-positive value")
    return _node(np.log(a.value), (a,), (lambda g, v=a.value: g / v,))


def sqrt(a) -> Tensor:
    a = lift(a)
    if np.any(a.value < 0):
        raise NumericsError("sqrt of negative value")
    out = np.sqrt(a.value)
    return _node(out, (a,), (lambda g, o=out: g * 0.5 / o,))


def sigmoid(a) -> Tensor:
    a = lift(a)
    out = np.where(a.value >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.value))),
                   np.exp(-np.abs(a.value)) / (1.0 + np.exp(-np.abs(a.value))))

    def vjp(g, o=out):
        return g * o * (1.0 - o)

    return _node(out, (a,), (vjp,))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = lift(a)
    mask = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), (lambda g, m=mask: g * m,))


def softmax(a, axis: str = "rows") -> Tensor:
    """Normalize to a probability distribution along each row or each column.

    axis="rows": every row sums to 1 (the default matrix convention here);
    axis="cols": every column sums to 1.
    """
    a = lift(a)
    if a.value.size == 0:
        raise ShapeError("softmax of empty input")
    ax = {"rows": 1, "cols": 0}.get(axis)
    if ax is None:
        raise NumericsError(f"softmax axis must be 'rows' or 'cols', got {axis!r}")
    shifted = a.value - np.max(a.value, axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=ax, keepdims=True)

    def vjp(g, s=out, ax=ax):
        return s * (g - np.sum(g * s, axis=ax, keepdims=True))

    return _node(out, (a,), (vjp,))


def layer_norm(a, gamma, beta, epsilon: float) -> Tensor:
    """Per-column standardization with scalar learnable scale and shift.

    Each column is centered and divided by sqrt(population variance + eps),
    then scaled by gamma and shifted by beta.
    """
    a, gamma, beta = lift(a), lift(gamma), lift(beta)
    if gamma.value.size != 1 or beta.value.size != 1:
        raise ShapeError("layer_norm scale and shift are scalars")
    x = a.value
    d = x.shape[0]
    mu = x.mean(axis=0, keepdims=True)
    centered = x - mu
    sigma = np.sqrt((centered * centered).mean(axis=0, keepdims=True) + epsilon)
    xhat = centered / sigma
    out = gamma.value * xhat + beta.value

    def vjp_x(g, xhat=xhat, sigma=sigma, gv=gamma.value, d=d):
        gx = gv * g
        return (gx - gx.mean(axis=0, keepdims=True)
                - xhat * (gx * xhat).mean(axis=0, keepdims=True)) / sigma

    def vjp_gamma(g, xhat=xhat):
        return np.array([[np.sum(g * xhat)]])

    def vjp_beta(g):
        return np.array([[np.sum(g)]])

    return _node(out, (a, gamma, beta), (vjp_x, vjp_gamma, vjp_beta))


def max_cols(a) -> Tensor:
    """Row-wise max over columns -> (d, 1). Ties route gradient to the first max."""
    a = lift(a)
    idx = np.argmax(a.value, axis=1)

    def vjp(g, idx=idx, shape=a.shape):
        z = np.zeros(shape)
        z[np.arange(shape[0]), idx] = g[:, 0]
        return z

    return _node(a.value.max(axis=1, keepdims=True), (a,), (vjp,))


def mean_cols(a) -> Tensor:
    a = lift(a)
    n = a.shape[1]
    return _node(
        a.value.mean(axis=1, keepdims=True),
        (a,),
        (lambda g, n=n: np.repeat(g / n, n, axis=1),),
    )


def sum_all(a) -> Tensor:
    a = lift(a)
    return _node(
        np.array([[a.value.sum()]]),
        (a,),
        (lambda g, s=a.shape: np.full(s, g[0, 0]),),
    )


def mean_all(a) -> Tensor:
    a = lift(a)
    n = a.value.size
    return _node(
        np.array([[a.value.mean()]]),
        (a,),
        (lambda g, s=a.shape, n=n: np.full(s, g[0, 0] / n),),
    )


def linear(x, p: LinearParams) -> Tensor:
    """Affine map w @ x + b with the bias added to every column."""
    x = lift(x)
    if x.shape[0] != p.d_in:
        raise ShapeError(f"linear expects {p.d_in} rows, got {x.shape[0]}")
    return add(matmul(lift(p.w), x), lift(p.b))


def _apply_activation(x: Tensor, name: str) -> Tensor:
    if name == "identity":
        return x
    if name == "relu":
        return relu(x)
    if name == "gelu":
        return gelu(x)
    if name == "geglu":
        return geglu(x)
    if name == "softmax":
        return softmax(x, axis="cols")
    raise NumericsError(f"unknown activation {name!r}")


def mlp(x, spec: MlpSpec) -> Tensor:
    """Apply (activation o linear) for each layer in order, column-wise."""
    out = lift(x)
    for act, lin in spec.layers:
        out = _apply_activation(linear(out, lin), act)
    return out


def cosine(a, b) -> Tensor:
    """Cosine similarity of two column vectors; 0 by convention if either is zero."""
    a, b = lift(a), lift(b)
    na = float(np.linalg.norm(a.value))
    nb = float(np.linalg.norm(b.value))
    if na == 0.0 or nb == 0.0:
        return constant(0.0)
    num = sum_all(mul(a, b))
    den = mul(sqrt(sum_all(mul(a, a))), sqrt(sum_all(mul(b, b))))
    return div(num, den)
