"""Dense 2-D tensors with a recording tape and reverse-mode gradients.

Everything is double precision. A Tensor is always a (rows, cols) numpy
array; per-node quantities are column vectors of shape (n, 1) and scalars
are (1, 1). Operations record themselves on the innermost active Tape and
gradients are obtained by replaying the tape in exact reverse order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of operations; backward walks it in reverse."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def record(self, t: "Tensor"):
        self._nodes.append(t)
        t._tape = self

    def backward(self, loss: "Tensor"):
        """Accumulate gradients of `loss` into every reachable tensor.

        The tape is cleared afterwards; leaf gradients survive on the
        tensors themselves. Raises if `loss` is not a scalar recorded here.
        """
        if loss.data.shape != (1, 1):
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not recorded on this tape")
        loss.grad = np.ones((1, 1))
        for node in reversed(self._nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in self._nodes:
            node._backward = None
            node._tape = None
        self._nodes.clear()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got ndim={arr.ndim}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._backward = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def grad_or_zero(self) -> np.ndarray:
        """Gradient, with untouched-parameter semantics (zero)."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents, backward) -> Tensor:
    """Wrap an op result, recording it if gradients are being traced."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._backward = None
    out._tape = None
    tape = active_tape()
    if tape is not None and out.requires_grad:
        out._backward = backward
        tape.record(out)
    return out


def _accum(p: Tensor, g: np.ndarray):
    if not p.requires_grad:
        return
    if p.grad is None:
        p.grad = g.copy()
    else:
        p.grad = p.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise / broadcasting primitives


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _result(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        _accum(a, _unbroadcast(g * bd, ad.shape))
        _accum(b, _unbroadcast(g * ad, bd.shape))

    return _result(ad * bd, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        _accum(a, _unbroadcast(g / bd, ad.shape))
        _accum(b, _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _result(ad / bd, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _accum(a, g * c)

    return _result(a.data * c, (a,), backward)


def row_scale(u: Tensor, h: Tensor) -> Tensor:
    """Per-row scalar times row: u is (n, 1), h is (n, d)."""
    if u.data.shape != (h.data.shape[0], 1):
        raise ValueError("row_scale expects a (n, 1) scaling column")
    return mul(u, h)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        _accum(a, g * mask)

    return _result(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accum(a, g * s * (1.0 - s))

    return _result(s, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive value")

    def backward(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), backward)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)

    def backward(g):
        _accum(a, g * e)

    return _result(e, (a,), backward)


def clip_max(a: Tensor, cap: float) -> Tensor:
    mask = a.data < cap

    def backward(g):
        _accum(a, g * mask)

    return _result(np.minimum(a.data, cap), (a,), backward)


# ---------------------------------------------------------------------------
# reductions, shaping, linear algebra


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape

    def backward(g):
        _accum(a, np.full(shape, g[0, 0]))

    return _result(np.array([[a.data.sum()]]), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    shape = a.data.shape

    def backward(g):
        _accum(a, np.full(shape, g[0, 0] / n))

    return _result(np.array([[a.data.mean()]]), (a,), backward)


def row_norm(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Euclidean norm of each row, shape (n, 1). Zero rows get zero grad."""
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    safe = np.maximum(norms, eps)

    def backward(g):
        _accum(a, g * a.data / safe)

    return _result(norms, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return _result(ad @ bd, (a, b), backward)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0]:
        raise ValueError("concat_cols requires equal row counts")
    k = a.data.shape[1]

    def backward(g):
        _accum(a, g[:, :k])
        _accum(b, g[:, k:])

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def slice_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(shape)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return _result(a.data[idx], (a,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted-scaling dropout; identity when not training or rate == 0."""
    if not train or rate == 0.0:
        return a
    keep = rng.random(a.data.shape) >= rate
    factor = keep / (1.0 - rate)

    def backward(g):
        _accum(a, g * factor)

    return _result(a.data * factor, (a,), backward)


# ---------------------------------------------------------------------------
# sparse support


@dataclass
class SparseMatrix:
    """Static n x n sparsity structure in compressed-row layout.

    `values` are structural edge weights (not differentiated); differentiable
    per-edge values live in plain Tensors of shape (nnz, 1) and are combined
    with the structure through the edge ops below.
    """

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    shape: tuple[int, int]
    rows: np.ndarray = field(init=False)

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.intp)
        self.indices = np.asarray(self.indices, dtype=np.intp)
        self.values = np.asarray(self.values, dtype=np.float64)
        counts = np.diff(self.indptr)
        self.rows = np.repeat(np.arange(self.shape[0], dtype=np.intp), counts)

    @property
    def nnz(self) -> int:
        return len(self.indices)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = sp.csr_matrix(m)
        m.sort_indices()
        return cls(m.indptr.copy(), m.indices.copy(), m.data.astype(np.float64),
                   m.shape)

    def to_scipy(self, values: np.ndarray | None = None) -> sp.csr_matrix:
        data = self.values if values is None else np.asarray(values).ravel()
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


def spmm(a: SparseMatrix, x: Tensor) -> Tensor:
    """Sparse (constant) times dense: structural values only."""
    m = a.to_scipy()

    def backward(g):
        _accum(x, m.T @ g)

    return _result(np.asarray(m @ x.data), (x,), backward)


def edge_dot(k: Tensor, q: Tensor, rows: np.ndarray, cols: np.ndarray,
             denom: float = 1.0) -> Tensor:
    """Per-edge inner product k[row] . q[col] / denom, shape (nnz, 1)."""
    kd, qd = k.data, q.data
    out = (kd[rows] * qd[cols]).sum(axis=1, keepdims=True) / denom

    def backward(g):
        if k.requires_grad:
            gk = np.zeros_like(kd)
            np.add.at(gk, rows, g * qd[cols] / denom)
            _accum(k, gk)
        if q.requires_grad:
            gq = np.zeros_like(qd)
            np.add.at(gq, cols, g * kd[rows] / denom)
            _accum(q, gq)

    return _result(out, (k, q), backward)


def segment_softmax(scores: Tensor, support: SparseMatrix,
                    weights: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax of per-edge scores over the support's sparsity.

    Optional non-negative structural `weights` multiply the exponentials,
    giving weighted-softmax semantics (used for self-loop weighting).
    Every row of the support must be non-empty.
    """
    indptr = support.indptr
    if np.any(np.diff(indptr) == 0):
        raise ValueError("softmax over an empty row")
    s = scores.data.ravel()
    rows = support.rows
    rowmax = np.maximum.reduceat(s, indptr[:-1])
    e = np.exp(s - rowmax[rows])
    if weights is not None:
        e = e * np.asarray(weights).ravel()
    denom = np.add.reduceat(e, indptr[:-1])
    p = e / denom[rows]

    def backward(g):
        gv = g.ravel()
        dot = np.add.reduceat(p * gv, indptr[:-1])
        _accum(scores, (p * (gv - dot[rows])).reshape(-1, 1))

    return _result(p.reshape(-1, 1), (scores,), backward)


def edge_weighted_sum(vals: Tensor, h: Tensor, support: SparseMatrix) -> Tensor:
    """out[i] = sum_e vals[e] * h[col_e] over edges e in row i."""
    m = support.to_scipy(vals.data)

    def backward(g):
        if vals.requires_grad:
            gv = (g[support.rows] * h.data[support.indices]).sum(axis=1,
                                                                 keepdims=True)
            _accum(vals, gv)
        if h.requires_grad:
            _accum(h, m.T @ g)

    return _result(np.asarray(m @ h.data), (vals, h), backward)


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckReport:
    ok: bool
    max_rel_err: float
    worst: tuple[str, int] | None

    def __str__(self):
        status = "pass" if self.ok else "FAIL"
        where = "" if self.worst is None else f" at {self.worst[0]}[{self.worst[1]}]"
        return f"gradcheck {status}: max_rel_err={self.max_rel_err:.3e}{where}"


def finite_diff_check(f, params: dict[str, Tensor], h: float = 1e-5,
                      tol: float = 1e-4, max_coords: int | None = None,
                      rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backward() gradients of scalar f() against central differences."""
    with Tape() as tape:
        loss = f()
        tape.backward(loss)
    grads = {name: p.grad_or_zero().copy() for name, p in params.items()}
    for p in params.values():
        p.zero_grad()

    max_err, worst = 0.0, None
    for name, p in params.items():
        flat = p.data.ravel()
        n = flat.size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().data[0, 0]
            flat[i] = orig - h
            fm = f().data[0, 0]
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"non-finite value while probing {name}[{i}]")
            num = (fp - fm) / (2 * h)
            ana = grads[name].ravel()[i]
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-3)
            if err > max_err:
                max_err, worst = err, (name, int(i))
    return GradCheckReport(ok=max_err <= tol, max_rel_err=max_err, worst=worst)
