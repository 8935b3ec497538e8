"""Matrix-level reverse-mode differentiation over a fixed operator set.

Every value is a 2-D float64 array wrapped in a :class:`Tensor`.  Operations
record their parents and a backward closure; :func:`backward` walks the tape
in reverse topological order and accumulates gradients.  :class:`Param` is a
named leaf whose gradient persists across a step until :meth:`Param.zero_grad`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.01


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(-1, 1)
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = any(p.requires_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    # Operator sugar; all routes go through the functions below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Param(Tensor):
    """A learnable leaf.  ``grad`` always has the shape of ``value``."""

    __slots__ = ("name",)

    def __init__(self, value, name: str = ""):
        super().__init__(value)
        self.name = name
        self.requires_grad = True
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _op(value, parents, backward_fn) -> Tensor:
    out = Tensor(value, parents)
    if out.requires_grad:
        out.backward_fn = backward_fn
    return out


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _op(a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _op(a.value - b.value, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return _op(a.value * b.value, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)

    def bw(g):
        return (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / b.value**2, b.shape),
        )

    return _op(a.value / b.value, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    return _op(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bw(g):
        return g @ b.value.T, a.value.T @ g

    return _op(a.value @ b.value, (a, b), bw)


def linear(x: Tensor, w: Tensor) -> Tensor:
    """``x @ w.T`` for weights stored as (out, in)."""
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {w.shape}")

    def bw(g):
        return g @ w.value, g.T @ x.value

    return _op(x.value @ w.value.T, (x, w), bw)


def spmm(s, b: Tensor) -> Tensor:
    """Product of a constant (sparse or dense) matrix with a tensor."""
    if s.shape[1] != b.shape[0]:
        raise ValueError(f"spmm shape mismatch: {s.shape} x {b.shape}")
    st = s.T
    if sp.issparse(s):
        st = st.tocsr()

    def bw(g):
        return (np.asarray(st @ g),)

    return _op(np.asarray(s @ b.value), (b,), bw)


def transpose(a: Tensor) -> Tensor:
    return _op(a.value.T, (a,), lambda g: (g.T,))


def hstack(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    widths = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, widths[i] : widths[i + 1]] for i in range(len(parts)))

    return _op(np.hstack([p.value for p in parts]), parts, bw)


def vstack(parts: Sequence[Tensor]) -> Tensor:
    parts = [constant(p) for p in parts]
    heights = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[heights[i] : heights[i + 1]] for i in range(len(parts)))

    return _op(np.vstack([p.value for p in parts]), parts, bw)


def rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return _op(a.value[idx], (a,), bw)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError("slope must lie in (0, 1)")
    # Subgradient at exactly 0 takes the positive branch.
    d = np.where(x.value >= 0.0, 1.0, slope)
    return _op(x.value * d, (x,), lambda g: (g * d,))


def sigmoid_np(x):
    """Overflow-free logistic function on arrays or scalars."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = sigmoid_np(x.value)
    return _op(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.value)
    return _op(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    return _op(np.log(x.value), (x,), lambda g: (g / x.value,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.value >= lo) & (x.value <= hi)
    return _op(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def square(x: Tensor) -> Tensor:
    return _op(x.value**2, (x,), lambda g: (2.0 * g * x.value,))


def sum_all(x: Tensor) -> Tensor:
    return _op(np.array([[x.value.sum()]]), (x,), lambda g: (np.full_like(x.value, g[0, 0]),))


def mean_all(x: Tensor) -> Tensor:
    n = x.value.size
    return _op(
        np.array([[x.value.mean()]]), (x,), lambda g: (np.full_like(x.value, g[0, 0] / n),)
    )


def sum_rows(x: Tensor) -> Tensor:
    """Sum along columns, one value per row: (n, m) -> (n, 1)."""
    return _op(x.value.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: surviving entries are scaled by 1/(1-rate)."""
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _op(x.value * keep, (x,), lambda g: (g * keep,))


def row_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale every row to unit L2 norm (zero rows stay zero)."""
    norms = np.sqrt((x.value**2).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, eps)
    u = x.value / safe

    def bw(g):
        # d(x/|x|) = (g - u <u, g>) / |x|
        return ((g - u * (g * u).sum(axis=1, keepdims=True)) / safe,)

    return _op(u, (x,), bw)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    return matmul(row_normalize(a), transpose(row_normalize(b)))


def pairwise_sqdist(h: Tensor) -> Tensor:
    """``D[i, j] = ||h_i - h_j||^2`` for all row pairs."""
    hv = h.value
    sq = (hv**2).sum(axis=1, keepdims=True)
    d = sq + sq.T - 2.0 * hv @ hv.T
    np.maximum(d, 0.0, out=d)

    def bw(g):
        gs = g + g.T
        return (2.0 * (gs.sum(axis=1, keepdims=True) * hv - gs @ hv),)

    return _op(d, (h,), bw)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64).ravel()
    n, c = logits.shape
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows")
    if n == 0:
        raise ValueError("softmax_cross_entropy on empty batch")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g[0, 0] * p / n,)

    return _op(np.array([[loss]]), (logits,), bw)


# ---------------------------------------------------------------------------
# Tape traversal
# ---------------------------------------------------------------------------


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(leaf) into every reachable Param's ``grad``."""
    if out.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Param):
            node.grad = node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


# ---------------------------------------------------------------------------
# Parameters, optimisation, verification
# ---------------------------------------------------------------------------


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int, name: str) -> Param:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Param(rng.uniform(-bound, bound, size=(fan_out, fan_in)), name=name)


class Adam:
    def __init__(self, params: Iterable[Param], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = _unique(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad**2
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _unique(params: Iterable[Param]) -> list[Param]:
    out, seen = [], set()
    for p in params:
        if id(p) not in seen:
            seen.add(id(p))
            out.append(p)
    return out


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Param],
    eps: float = 1e-6,
    floor: float = 1e-6,
) -> float:
    """Max entrywise relative error between analytic and central-difference gradients.

    ``f`` takes no arguments and must rebuild its graph from the current
    parameter values on every call.  The relative error of an entry is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = _unique(params)
    for p in params:
        p.zero_grad()
    out = f()
    if not np.isfinite(out.value).all():
        raise FloatingPointError("grad_check: non-finite objective")
    backward(out)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            fp = f().item()
            flat[k] = orig - eps
            fm = f().item()
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("grad_check: non-finite objective")
            num = (fp - fm) / (2.0 * eps)
            a = analytic.reshape(-1)[k]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "cacl-params"
CHECKPOINT_VERSION = 1


def params_to_dict(params: Iterable[Param]) -> dict:
    out = {}
    for p in _unique(params):
        if p.name in out:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        out[p.name] = {"shape": list(p.shape), "values": p.value.ravel().tolist()}
    return {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "params": out}


def load_params_dict(data: dict, params: Iterable[Param], strict: bool = True) -> None:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a parameter checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')}")
    stored = data["params"]
    for p in _unique(params):
        if p.name not in stored:
            if strict:
                raise KeyError(f"checkpoint lacks parameter {p.name!r}")
            continue
        rec = stored[p.name]
        if tuple(rec["shape"]) != p.shape:
            raise ValueError(f"{p.name}: checkpoint shape {rec['shape']} != {list(p.shape)}")
        p.value = np.asarray(rec["values"], dtype=np.float64).reshape(p.shape)
        p.zero_grad()
