"""The candidate operator zoo and weight initialization schemes.

Each operator maps a node-feature matrix H (n, d) to (n, d) given fixed
propagation structure prepared once per graph. Parameters live in an
OperatorParams bundle of named Tensors so the same forward code serves
both frozen-weight search and full training; whether gradients flow is
decided solely by each Tensor's requires_grad flag.

Attention-style operators score directed pairs (i, j) where i is the node
being updated and j the message source; the pair lists include self loops
so every node attends to at least itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as tt
from .exceptions import ConfigError, ShapeError
from .graph import Graph, adjacency, cheb_scaled_laplacian, gcn_renormalize, mean_neighbor
from .tensor import SparseMatrix, Tensor

__all__ = [
    "OPERATOR_NAMES",
    "OperatorKind",
    "OperatorParams",
    "PropagationSet",
    "prepare_propagation",
    "orthogonal_init",
    "kaiming_normal_init",
    "kaiming_uniform_init",
    "init_weight",
    "init_operator_params",
    "apply_operator",
    "LEAKY_SLOPE",
]

# Canonical operator vocabulary; config strings must come from this set.
OPERATOR_NAMES = (
    "mlp",
    "gcn",
    "gat",
    "gat_linear",
    "gat_cos",
    "gin",
    "sage_mean",
    "sage_max",
    "cheb",
    "geniepath",
)

LEAKY_SLOPE = 0.2
DEFAULT_CHEB_ORDER = 2


@dataclass(frozen=True)
class OperatorKind:
    """An operator family plus its one structural knob."""

    tag: str
    cheb_order: int = DEFAULT_CHEB_ORDER

    def __post_init__(self):
        if self.tag not in OPERATOR_NAMES:
            raise ConfigError(f"unknown operator {self.tag!r}; choose from {OPERATOR_NAMES}")
        if self.tag == "cheb" and self.cheb_order < 1:
            raise ConfigError(f"cheb order must be >= 1, got {self.cheb_order}")


@dataclass
class OperatorParams:
    """Named parameter Tensors for one operator instance."""

    kind: OperatorKind
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def size(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def set_requires_grad(self, flag: bool) -> None:
        for t in self.tensors.values():
            t.requires_grad = flag

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}


@dataclass(frozen=True)
class PropagationSet:
    """Graph-derived constants shared by every operator instance."""

    num_nodes: int
    gcn: SparseMatrix           # renormalized adjacency
    adj: SparseMatrix           # symmetric binary adjacency, no self loops
    mean: SparseMatrix          # row-stochastic neighbor mean
    cheb: SparseMatrix          # scaled laplacian for the chebyshev basis
    att_self: np.ndarray        # per directed pair incl. self loops: updated node i
    att_nbr: np.ndarray         # per directed pair incl. self loops: source node j
    nbr_self: np.ndarray        # per directed pair excl. self loops: updated node i
    nbr_nbr: np.ndarray         # per directed pair excl. self loops: source node j


def prepare_propagation(graph: Graph) -> PropagationSet:
    n = graph.num_nodes
    src = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    dst = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    # directed pairs (i <- j); sorted by (i, j) for deterministic segments
    i_nos = src
    j_nos = dst
    order = np.lexsort((j_nos, i_nos))
    i_nos, j_nos = i_nos[order], j_nos[order]
    i_all = np.concatenate([i_nos, np.arange(n)])
    j_all = np.concatenate([j_nos, np.arange(n)])
    order = np.lexsort((j_all, i_all))
    i_all, j_all = i_all[order], j_all[order]
    return PropagationSet(
        num_nodes=n,
        gcn=gcn_renormalize(graph).matrix,
        adj=adjacency(graph),
        mean=mean_neighbor(graph).matrix,
        cheb=cheb_scaled_laplacian(graph).matrix,
        att_self=i_all,
        att_nbr=j_all,
        nbr_self=i_nos,
        nbr_nbr=j_nos,
    )


def orthogonal_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """QR-based orthogonal matrix with the R-diagonal sign fix so the
    distribution is Haar. Non-square shapes get orthonormal rows or
    columns, whichever direction is the short one; a 1x1 weight is +-1."""
    n = max(rows, cols)
    a = rng.standard_normal((n, min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows >= cols:
        return np.ascontiguousarray(q[:rows, :cols])
    return np.ascontiguousarray(q[:cols, :rows].T)


def kaiming_normal_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Normal with std sqrt(2 / fan_in); fan_in is the input dim (rows)."""
    return rng.standard_normal((rows, cols)) * np.sqrt(2.0 / rows)


def kaiming_uniform_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / rows)
    return rng.uniform(-bound, bound, size=(rows, cols))


_SCHEMES = {
    "orthogonal": orthogonal_init,
    "kaiming_normal": kaiming_normal_init,
    "kaiming_uniform": kaiming_uniform_init,
}


def init_weight(scheme: str, rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    if scheme not in _SCHEMES:
        raise ConfigError(f"unknown init scheme {scheme!r}; choose from {sorted(_SCHEMES)}")
    return _SCHEMES[scheme](rng, rows, cols)


def init_operator_params(
    kind: OperatorKind, hidden: int, scheme: str, rng: np.random.Generator
) -> OperatorParams:
    """Fresh parameters for one operator at a given hidden width.

    Square weights follow the chosen scheme; attention vectors are unit
    columns under the orthogonal scheme; the gin epsilon always starts at
    zero.
    """
    def w(rows=hidden, cols=hidden):
        return Tensor(init_weight(scheme, rng, rows, cols))

    t: dict[str, Tensor] = {}
    tag = kind.tag
    if tag == "mlp" or tag == "gcn" or tag == "gat_cos":
        t["w_op"] = w()
    elif tag == "gat":
        t["w_op"] = w()
        t["a_self"] = w(hidden, 1)
        t["a_nbr"] = w(hidden, 1)
    elif tag == "gat_linear":
        t["w_op"] = w()
        t["a_nbr"] = w(hidden, 1)
    elif tag == "gin":
        t["eps"] = Tensor(0.0)
        t["w1"] = w()
        t["w2"] = w()
    elif tag == "sage_mean" or tag == "sage_max":
        t["w_op"] = w(2 * hidden, hidden)
    elif tag == "cheb":
        for c in range(kind.cheb_order + 1):
            t[f"w{c}"] = w()
    elif tag == "geniepath":
        t["w_op"] = w()
        t["w_gate"] = w()
        t["a_self"] = w(hidden, 1)
        t["a_nbr"] = w(hidden, 1)
    else:  # pragma: no cover
        raise ConfigError(f"unhandled operator {tag!r}")
    return OperatorParams(kind, t)


def _edge_softmax(scores: Tensor, seg: np.ndarray, n: int) -> Tensor:
    """Softmax of (E, 1) scores within each segment (the updated node)."""
    # shift by the segment max for stability; the shift is a constant
    smax = np.full((n, 1), -np.inf)
    np.maximum.at(smax, seg, scores.data)
    smax[np.isinf(smax)] = 0.0
    e = tt.exp(tt.add_const(scores, -smax[seg]))
    denom = tt.segment_sum(e, seg, n)
    return tt.div(e, tt.gather_rows(denom, seg))


def _attention_aggregate(
    h: Tensor, scores: Tensor, prop: PropagationSet
) -> Tensor:
    att = _edge_softmax(scores, prop.att_self, prop.num_nodes)
    msgs = tt.scale_rows(tt.gather_rows(h, prop.att_nbr), att)
    return tt.segment_sum(msgs, prop.att_self, prop.num_nodes)


def _gat_scores(h: Tensor, p: OperatorParams, prop: PropagationSet) -> Tensor:
    s_self = tt.matmul(h, p.tensors["a_self"])
    s_nbr = tt.matmul(h, p.tensors["a_nbr"])
    raw = tt.add(
        tt.gather_rows(s_self, prop.att_self),
        tt.gather_rows(s_nbr, prop.att_nbr),
    )
    return tt.leaky_relu(raw, LEAKY_SLOPE)


def apply_operator(p: OperatorParams, prop: PropagationSet, h: Tensor) -> Tensor:
    """Dispatch one operator forward; output shape equals input shape."""
    tag = p.kind.tag
    t = p.tensors
    if tag == "mlp":
        return tt.matmul(h, t["w_op"])
    if tag == "gcn":
        return tt.matmul(tt.spmm(prop.gcn, h), t["w_op"])
    if tag == "gat":
        agg = _attention_aggregate(h, _gat_scores(h, p, prop), prop)
        return tt.matmul(agg, t["w_op"])
    if tag == "gat_linear":
        # score depends on the message source alone, no nonlinearity
        scores = tt.gather_rows(tt.matmul(h, t["a_nbr"]), prop.att_nbr)
        agg = _attention_aggregate(h, scores, prop)
        return tt.matmul(agg, t["w_op"])
    if tag == "gat_cos":
        u = tt.matmul(h, t["w_op"])
        un = tt.normalize_rows(u)
        scores = tt.row_dot(
            tt.gather_rows(un, prop.att_self), tt.gather_rows(un, prop.att_nbr)
        )
        att = _edge_softmax(scores, prop.att_self, prop.num_nodes)
        msgs = tt.scale_rows(tt.gather_rows(u, prop.att_nbr), att)
        return tt.segment_sum(msgs, prop.att_self, prop.num_nodes)
    if tag == "gin":
        neigh = tt.spmm(prop.adj, h)
        pre = tt.add(tt.add(h, tt.scale_by_scalar(h, t["eps"])), neigh)
        return tt.matmul(tt.relu(tt.matmul(pre, t["w1"])), t["w2"])
    if tag == "sage_mean":
        nb = tt.spmm(prop.mean, h)
        return tt.matmul(tt.concat_cols([h, nb]), t["w_op"])
    if tag == "sage_max":
        msgs = tt.gather_rows(h, prop.nbr_nbr)
        nb = tt.segment_max(msgs, prop.nbr_self, prop.num_nodes)
        return tt.matmul(tt.concat_cols([h, nb]), t["w_op"])
    if tag == "cheb":
        prev2 = h
        out = tt.matmul(h, t["w0"])
        if p.kind.cheb_order >= 1:
            prev1 = tt.spmm(prop.cheb, h)
            out = tt.add(out, tt.matmul(prev1, t["w1"]))
            for c in range(2, p.kind.cheb_order + 1):
                cur = tt.sub(tt.scale(tt.spmm(prop.cheb, prev1), 2.0), prev2)
                out = tt.add(out, tt.matmul(cur, t[f"w{c}"]))
                prev2, prev1 = prev1, cur
        return out
    if tag == "geniepath":
        agg = _attention_aggregate(h, _gat_scores(h, p, prop), prop)
        gate = tt.tanh(tt.matmul(h, t["w_gate"]))
        return tt.mul(gate, tt.matmul(agg, t["w_op"]))
    raise ConfigError(f"unhandled operator {tag!r}")  # pragma: no cover
