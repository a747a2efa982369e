"""Reverse-mode autodiff over 2-D float64 arrays.

The tape is define-by-run: a forward pass executed inside ``with Tape()``
records one node per primitive op, ``Tape.backward`` replays the records
in reverse and returns gradients for every leaf that had
``requires_grad`` set. The tape is rebuilt every forward pass and cleared
by backward, so memory stays bounded by a single pass.

Everything is float64 and strictly 2-D; scalars are (1, 1) arrays. The
only implicit broadcast allowed anywhere is a row vector over a matrix
(``add_rowvec``); all other shape mismatches raise ShapeError naming both
shapes. A tape is confined to one thread of execution; concurrent
searches must each build their own.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import DegenerateCoefficientError, ShapeError

__all__ = [
    "Tensor",
    "SparseMatrix",
    "Tape",
    "matmul",
    "spmm",
    "relu",
    "leaky_relu",
    "tanh",
    "exp",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "add_const",
    "add_rowvec",
    "scale_rows",
    "scale_by_scalar",
    "linear_combination",
    "concat_cols",
    "row_softmax",
    "row_sum",
    "row_dot",
    "ssum",
    "normalize_rows",
    "l2_normalize_vector",
    "gather_rows",
    "segment_sum",
    "segment_max",
    "dropout",
    "cross_entropy",
]

_COEFF_FLOOR = 1e-12
_ROW_NORM_FLOOR = 1e-6


def _as2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim} shape={arr.shape}")
    return arr


class Tensor:
    """A 2-D float64 value, optionally tracked by the active tape."""

    __slots__ = ("data", "requires_grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as2d(data)
        self.requires_grad = bool(requires_grad)
        self.node_id: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeError(f"item() needs a (1, 1) scalar, got {self.data.shape}")
        return float(self.data[0, 0])

    def __repr__(self) -> str:  # pragma: no cover
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class SparseMatrix:
    """Immutable CSR matrix. Participates in spmm as a constant operand.

    Offsets/indices are validated once at construction; scipy provides the
    multiply kernel.
    """

    __slots__ = ("rows", "cols", "row_offsets", "col_indices", "nonzero_values", "_csr", "_csr_t")

    def __init__(self, rows: int, cols: int, row_offsets, col_indices, nonzero_values):
        rows = int(rows)
        cols = int(cols)
        off = np.asarray(row_offsets, dtype=np.int64)
        idx = np.asarray(col_indices, dtype=np.int64)
        val = np.asarray(nonzero_values, dtype=np.float64)
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative sparse shape ({rows}, {cols})")
        if off.ndim != 1 or off.shape[0] != rows + 1:
            raise ShapeError(f"row_offsets must have length rows+1={rows + 1}, got {off.shape}")
        if idx.shape != val.shape or idx.ndim != 1:
            raise ShapeError(f"col_indices {idx.shape} and nonzero_values {val.shape} must be equal-length vectors")
        if off[0] != 0 or off[-1] != idx.shape[0]:
            raise ShapeError(f"row_offsets must start at 0 and end at nnz={idx.shape[0]}, got [{off[0]}, {off[-1]}]")
        if np.any(np.diff(off) < 0):
            raise ShapeError("row_offsets must be nondecreasing")
        if idx.size and (idx.min() < 0 or idx.max() >= cols):
            raise ShapeError(f"col index out of range [0, {cols}) : min={idx.min()} max={idx.max()}")
        self.rows = rows
        self.cols = cols
        self.row_offsets = off
        self.col_indices = idx
        self.nonzero_values = val
        self._csr = sp.csr_matrix((val, idx, off), shape=(rows, cols))
        self._csr_t = None

    @classmethod
    def from_coo(cls, rows: int, cols: int, r_idx, c_idx, values) -> "SparseMatrix":
        """Build from coordinate triplets; duplicate entries are summed."""
        m = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (np.asarray(r_idx), np.asarray(c_idx))),
            shape=(rows, cols),
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(rows, cols, m.indptr, m.indices, m.data)

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        c = sp.csr_matrix(m)
        c.sum_duplicates()
        c.sort_indices()
        return cls(c.shape[0], c.shape[1], c.indptr, c.indices, c.data)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    def to_dense(self) -> np.ndarray:
        return np.asarray(self._csr.todense(), dtype=np.float64)

    def transpose_csr(self):
        if self._csr_t is None:
            self._csr_t = self._csr.T.tocsr()
        return self._csr_t

    def __repr__(self) -> str:  # pragma: no cover
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


# One active tape per thread of execution; nesting is a programming error
# we choose to surface rather than support. Thread-local so concurrent
# sweep cells each record on their own tape.
_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = _TLS.stack = []
    return stack


def _active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


@dataclass
class _Record:
    out_id: int
    in_ids: tuple
    backward: Callable


class Tape:
    """Records a forward pass; backward() consumes and clears it."""

    def __init__(self):
        self._records: list[_Record] = []
        self._leaves: dict[int, Tensor] = {}
        self._next_id = 0

    def __enter__(self) -> "Tape":
        stack = _tape_stack()
        if stack:
            raise RuntimeError("tapes do not nest; close the active tape first")
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def _fresh_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def _node_id_for(self, t: Tensor) -> int:
        if t._tape is self and t.node_id is not None:
            return t.node_id
        # First appearance on this tape: register as a leaf.
        nid = self._fresh_id()
        t.node_id = nid
        t._tape = self
        self._leaves[nid] = t
        return nid

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradients of a (1, 1) loss for every requires_grad leaf.

        Each recorded node is visited exactly once; the tape is cleared
        afterward so leaves re-register on the next forward pass.
        """
        if loss.data.shape != (1, 1):
            raise ShapeError(f"backward needs a (1, 1) scalar loss, got {loss.data.shape}")
        if loss._tape is not self or loss.node_id is None:
            raise RuntimeError("loss tensor was not produced under this tape")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones((1, 1))}
        for rec in reversed(self._records):
            g = grads.pop(rec.out_id, None)
            if g is None:
                continue
            for nid, gin in zip(rec.in_ids, rec.backward(g)):
                if nid is None or gin is None:
                    continue
                acc = grads.get(nid)
                grads[nid] = gin if acc is None else acc + gin
        out: dict[Tensor, np.ndarray] = {}
        for nid, leaf in self._leaves.items():
            g = grads.get(nid)
            out[leaf] = np.zeros_like(leaf.data) if g is None else np.ascontiguousarray(g)
        self._clear()
        return out

    def _clear(self) -> None:
        for leaf in self._leaves.values():
            leaf.node_id = None
            leaf._tape = None
        self._records.clear()
        self._leaves.clear()


def _emit(value: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op result, recording it when a tape is active and any input
    requires gradient. ``backward(g)`` returns per-input gradients aligned
    with ``inputs`` (None for inputs that need none)."""
    out = Tensor(value)
    needs = any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    tape = _active_tape()
    if tape is not None and needs:
        in_ids = tuple(tape._node_id_for(t) if t.requires_grad else None for t in inputs)
        out.node_id = tape._fresh_id()
        out._tape = tape
        tape._records.append(_Record(out.node_id, in_ids, backward))
    return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape[1] == b.shape[0], f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (g @ bd.T if na else None, ad.T @ g if nb else None)

    return _emit(ad @ bd, (a, b), backward)


def spmm(s: SparseMatrix, d: Tensor) -> Tensor:
    """Sparse @ dense. The sparse operand is constant: gradient flows only
    to the dense side, through the transpose of the fixed structure."""
    _require(s.cols == d.shape[0], f"spmm inner dims differ: ({s.rows}, {s.cols}) @ {d.shape}")
    nd = d.requires_grad

    def backward(g):
        return (s.transpose_csr() @ g if nd else None,)

    return _emit(s._csr @ d.data, (d,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient 0 at 0

    def backward(g):
        return (g * mask,)

    return _emit(np.where(mask, a.data, 0.0), (a,), backward)


def leaky_relu(a: Tensor, slope: float) -> Tensor:
    mask = a.data > 0
    slope = float(slope)

    def backward(g):
        return (np.where(mask, g, slope * g),)

    return _emit(np.where(mask, a.data, slope * a.data), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    val = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - val * val),)

    return _emit(val, (a,), backward)


def exp(a: Tensor) -> Tensor:
    val = np.exp(a.data)

    def backward(g):
        return (g * val,)

    return _emit(val, (a,), backward)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    _require(a.shape == b.shape, f"{op} needs equal shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (g if na else None, g if nb else None)

    return _emit(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (g if na else None, -g if nb else None)

    return _emit(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (g * bd if na else None, g * ad if nb else None)

    return _emit(ad * bd, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    na, nb = a.requires_grad, b.requires_grad
    val = ad / bd

    def backward(g):
        return (g / bd if na else None, -g * val / bd if nb else None)

    return _emit(val, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (c * g,)

    return _emit(c * a.data, (a,), backward)


def add_const(a: Tensor, c) -> Tensor:
    """Add a constant array or float; gradient passes through unchanged."""
    carr = np.asarray(c, dtype=np.float64)

    def backward(g):
        return (g,)

    return _emit(a.data + carr, (a,), backward)


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """The one sanctioned broadcast: (n, m) + (1, m)."""
    _require(v.shape[0] == 1 and v.shape[1] == a.shape[1], f"add_rowvec needs (1, {a.shape[1]}), got {v.shape} over {a.shape}")
    na, nv = a.requires_grad, v.requires_grad

    def backward(g):
        return (g if na else None, g.sum(axis=0, keepdims=True) if nv else None)

    return _emit(a.data + v.data, (a, v), backward)


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of a by the scalar s[i, 0]."""
    _require(s.shape == (a.shape[0], 1), f"scale_rows needs ({a.shape[0]}, 1) scales, got {s.shape}")
    ad, sd = a.data, s.data
    na, ns = a.requires_grad, s.requires_grad

    def backward(g):
        ga = g * sd if na else None
        gs = (g * ad).sum(axis=1, keepdims=True) if ns else None
        return (ga, gs)

    return _emit(ad * sd, (a, s), backward)


def scale_by_scalar(a: Tensor, s: Tensor) -> Tensor:
    _require(s.shape == (1, 1), f"scale_by_scalar needs a (1, 1) scalar, got {s.shape}")
    ad = a.data
    c = float(s.data[0, 0])
    na, ns = a.requires_grad, s.requires_grad

    def backward(g):
        ga = c * g if na else None
        gs = np.array([[float(np.vdot(g, ad))]]) if ns else None
        return (ga, gs)

    return _emit(c * ad, (a, s), backward)


def linear_combination(parts: Sequence[Tensor], coeffs: Tensor) -> Tensor:
    """sum_k coeffs[0, k] * parts[k] with tracked coefficients."""
    k = len(parts)
    _require(k > 0, "linear_combination needs at least one part")
    _require(coeffs.shape == (1, k), f"coeffs must be (1, {k}), got {coeffs.shape}")
    shape = parts[0].shape
    for p in parts:
        _require(p.shape == shape, f"parts disagree on shape: {shape} vs {p.shape}")
    c = coeffs.data[0]
    datas = [p.data for p in parts]
    val = c[0] * datas[0]
    for i in range(1, k):
        val = val + c[i] * datas[i]
    needs = [p.requires_grad for p in parts]
    nc = coeffs.requires_grad

    def backward(g):
        outs = [c[i] * g if needs[i] else None for i in range(k)]
        if nc:
            gc = np.array([[float(np.vdot(g, datas[i])) for i in range(k)]])
        else:
            gc = None
        return tuple(outs) + (gc,)

    return _emit(val, tuple(parts) + (coeffs,), backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    _require(len(parts) > 0, "concat_cols needs at least one part")
    n = parts[0].shape[0]
    for p in parts:
        _require(p.shape[0] == n, f"concat_cols row counts differ: {n} vs {p.shape[0]}")
    widths = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])
    needs = [p.requires_grad for p in parts]

    def backward(g):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if needs[i] else None for i in range(len(widths))
        )

    return _emit(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


def row_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * val).sum(axis=1, keepdims=True)
        return (val * (g - inner),)

    return _emit(val, (a,), backward)


def row_sum(a: Tensor) -> Tensor:
    m = a.shape[1]

    def backward(g):
        return (np.repeat(g, m, axis=1),)

    return _emit(a.data.sum(axis=1, keepdims=True), (a,), backward)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "row_dot")
    ad, bd = a.data, b.data
    na, nb = a.requires_grad, b.requires_grad

    def backward(g):
        return (g * bd if na else None, g * ad if nb else None)

    return _emit((ad * bd).sum(axis=1, keepdims=True), (a, b), backward)


def ssum(a: Tensor) -> Tensor:
    shape = a.shape

    def backward(g):
        return (np.full(shape, float(g[0, 0])),)

    return _emit(np.array([[a.data.sum()]]), (a,), backward)


def normalize_rows(a: Tensor, eps: float = _ROW_NORM_FLOOR) -> Tensor:
    """Rows rescaled to unit L2 norm; rows with norm <= eps are treated
    linearly (divided by eps) so gradients stay bounded near zero rows."""
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    safe = np.maximum(norms, eps)
    val = a.data / safe
    live = norms > eps

    def backward(g):
        inner = (g * val).sum(axis=1, keepdims=True)
        g_live = (g - val * inner) / safe
        g_dead = g / eps
        return (np.where(live, g_live, g_dead),)

    return _emit(val, (a,), backward)


def l2_normalize_vector(v: Tensor) -> Tensor:
    """Whole-tensor L2 normalization, used for per-layer coefficient rows.

    A norm below 1e-12 means the coefficients collapsed; that is a search
    failure worth aborting on, not a quantity to clamp.
    """
    n = float(np.linalg.norm(v.data))
    if n < _COEFF_FLOOR:
        raise DegenerateCoefficientError(
            f"coefficient vector norm {n:.3e} below {_COEFF_FLOOR:.0e}; cannot normalize shape {v.shape}"
        )
    val = v.data / n

    def backward(g):
        inner = float(np.vdot(g, val))
        return ((g - val * inner) / n,)

    return _emit(val, (v,), backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    _require(idx.ndim == 1, f"gather_rows needs a 1-D index, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows index out of range [0, {a.shape[0]})")
    n, m = a.shape

    def backward(g):
        out = np.zeros((n, m))
        np.add.at(out, idx, g)
        return (out,)

    return _emit(a.data[idx], (a,), backward)


def segment_sum(a: Tensor, seg, n: int) -> Tensor:
    """Sum rows of a into n buckets by segment id; empty buckets are zero."""
    seg = np.asarray(seg, dtype=np.int64)
    _require(seg.shape == (a.shape[0],), f"segment ids must be ({a.shape[0]},), got {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= n):
        raise ShapeError(f"segment id out of range [0, {n})")
    val = np.zeros((n, a.shape[1]))
    np.add.at(val, seg, a.data)

    def backward(g):
        return (g[seg],)

    return _emit(val, (a,), backward)


def segment_max(a: Tensor, seg, n: int) -> Tensor:
    """Row-wise max per bucket; empty buckets yield zero rows. Ties split
    the gradient equally among the achieving rows."""
    seg = np.asarray(seg, dtype=np.int64)
    _require(seg.shape == (a.shape[0],), f"segment ids must be ({a.shape[0]},), got {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= n):
        raise ShapeError(f"segment id out of range [0, {n})")
    val = np.full((n, a.shape[1]), -np.inf)
    np.maximum.at(val, seg, a.data)
    empty = np.isinf(val).all(axis=1)
    val[empty] = 0.0
    hit = (a.data == val[seg]).astype(np.float64)
    counts = np.zeros((n, a.shape[1]))
    np.add.at(counts, seg, hit)

    def backward(g):
        share = np.divide(g, counts, out=np.zeros_like(g), where=counts > 0)
        return (hit * share[seg],)

    return _emit(val, (a,), backward)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; p=0 is the identity. Train-time only by design:
    evaluation code simply does not insert this op."""
    p = float(p)
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        def backward(g):
            return (g,)

        return _emit(a.data.copy(), (a,), backward)
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return _emit(a.data * keep, (a,), backward)


def cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean negative log-softmax likelihood over the masked rows.

    labels: int array of length n (all rows); mask: int indices of the
    rows that contribute. Fused so the softmax never materializes on the
    tape.
    """
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    n, c = logits.shape
    _require(labels.shape == (n,), f"labels must be ({n},), got {labels.shape}")
    if mask.ndim != 1 or mask.size == 0:
        raise ShapeError(f"mask must be a nonempty 1-D index array, got shape {mask.shape}")
    if mask.min() < 0 or mask.max() >= n:
        raise ShapeError(f"mask index out of range [0, {n})")
    y = labels[mask]
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError(f"label out of range [0, {c}) among masked rows")
    z = logits.data[mask]
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    sume = e.sum(axis=1, keepdims=True)
    lse = np.log(sume) + zmax
    m = mask.shape[0]
    loss = float((lse[:, 0] - z[np.arange(m), y]).mean())
    softmax = e / sume

    def backward(g):
        gm = softmax.copy()
        gm[np.arange(m), y] -= 1.0
        gm *= float(g[0, 0]) / m
        full = np.zeros((n, c))
        np.add.at(full, mask, gm)
        return (full,)

    return _emit(np.array([[loss]]), (logits,), backward)
