"""Numerical checks behind the frozen-weight argument.

Four small labs, each mapping one analytical claim to a finite
computation:

* output equivalence: for linear GNNs, a trained network's output is
  reproduced exactly by the untrained weights once the head is replaced
  by (prod W_init)^{-1} (prod W_trained) W_head; verified to solver
  precision on random instances.
* mutual coherence: how close to orthogonal the columns of a dictionary
  are; random high-dimensional dictionaries should sit near zero.
* spectrum: singular values of weight products; orthogonal inits give a
  flat spectrum where scaled-Gaussian inits do not.
* dictionary form: a linear polynomial-filter GNN flattens into a single
  dictionary-times-coefficients product; checked by explicit expansion.

plus a scalar probe that demonstrates the geometric tail convergence of
logistic cross entropy on separable data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import ConfigError, ShapeError, SingularProductError
from .graph import Graph, cheb_scaled_laplacian, gcn_renormalize, synth_graph
from .tensor import SparseMatrix

__all__ = [
    "LinearGnnInstance",
    "random_linear_instance",
    "weight_product",
    "linear_forward",
    "construct_tilde_head",
    "verify_output_equivalence",
    "CoherenceReport",
    "mutual_coherence",
    "SpectrumReport",
    "spectrum",
    "DictionaryFormReport",
    "dictionary_form_check",
    "ConvergenceReport",
    "ce_convergence_probe",
]

_RANK_FLOOR = 1e-8


@dataclass
class LinearGnnInstance:
    """A depth-L purely linear propagation network: A^L X W_1..W_L W_head."""

    adjacency: SparseMatrix
    features: np.ndarray
    depth: int
    weights: list
    head: np.ndarray
    labels: np.ndarray


def random_linear_instance(
    rng: np.random.Generator, n: int, d: int, depth: int, num_classes: int = 2
) -> LinearGnnInstance:
    """Random graph + Gaussian weights, resampled until the weight product
    is comfortably full rank."""
    g, _ = synth_graph(
        "sbm",
        {"nodes": n, "blocks": 2, "p_in": 0.3, "p_out": 0.1},
        seed=int(rng.integers(2**31)),
    )
    a = gcn_renormalize(g).matrix
    x = rng.standard_normal((n, d))
    for _ in range(50):
        weights = [rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(depth)]
        sv = np.linalg.svd(weight_product(weights), compute_uv=False)
        if sv[-1] > _RANK_FLOOR:
            break
    head = rng.standard_normal((d, num_classes))
    labels = rng.integers(0, num_classes, size=n)
    return LinearGnnInstance(a, x, depth, weights, head, labels)


def weight_product(weights: list) -> np.ndarray:
    if len(weights) == 1:
        return np.asarray(weights[0])
    return np.linalg.multi_dot(list(weights))


def linear_forward(inst: LinearGnnInstance, weights: list, head: np.ndarray) -> np.ndarray:
    h = inst.features
    for _ in range(inst.depth):
        h = inst.adjacency._csr @ h
    return h @ weight_product(weights) @ head


def construct_tilde_head(init_weights: list, trained_weights: list, trained_head: np.ndarray) -> np.ndarray:
    """(prod W_init)^{-1} (prod W_trained) W_head, via a solve rather than
    an explicit inverse. Refuses numerically singular init products."""
    p0 = weight_product(init_weights)
    sv = np.linalg.svd(p0, compute_uv=False)
    if sv[-1] < _RANK_FLOOR:
        raise SingularProductError(
            f"init weight product numerically singular: smallest singular value {sv[-1]:.3e}"
        )
    target = weight_product(trained_weights) @ trained_head
    return np.linalg.solve(p0, target)


def verify_output_equivalence(
    inst: LinearGnnInstance, init_weights: list, tol: float = 1e-6
) -> dict:
    """Trained output vs untrained-weights-plus-constructed-head output,
    as a relative Frobenius discrepancy."""
    if len(init_weights) != inst.depth:
        raise ShapeError(f"need {inst.depth} init weights, got {len(init_weights)}")
    tilde = construct_tilde_head(init_weights, inst.weights, inst.head)
    trained_out = linear_forward(inst, inst.weights, inst.head)
    swapped_out = linear_forward(inst, init_weights, tilde)
    denom = max(np.linalg.norm(trained_out), 1e-12)
    disc = float(np.linalg.norm(trained_out - swapped_out) / denom)
    return {
        "check": "output_equivalence",
        "discrepancy": disc,
        "tolerance": tol,
        "status": "pass" if disc <= tol else "fail",
    }


@dataclass
class CoherenceReport:
    n: int
    k: int
    phi: float
    histogram: list  # 10 equal bins of off-diagonal |cosine| over [0, 1]


def mutual_coherence(d: np.ndarray) -> CoherenceReport:
    """Largest |cosine| between distinct columns. Scale-free by
    construction; a zero column has no direction and is refused."""
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.shape[1] < 2:
        raise ShapeError(f"dictionary must be (n, k>=2), got {d.shape}")
    norms = np.linalg.norm(d, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ShapeError(f"dictionary column {int(zero[0])} is identically zero")
    u = d / norms
    gram = np.abs(u.T @ u)
    np.fill_diagonal(gram, 0.0)
    off = gram[np.triu_indices(d.shape[1], k=1)]
    hist, _ = np.histogram(np.clip(off, 0.0, 1.0), bins=10, range=(0.0, 1.0))
    return CoherenceReport(
        n=d.shape[0], k=d.shape[1], phi=float(gram.max()), histogram=[int(c) for c in hist]
    )


@dataclass
class SpectrumReport:
    label: str
    singular_values: np.ndarray  # descending
    condition_number: float


def spectrum(weights: list, label: str = "") -> SpectrumReport:
    sv = np.linalg.svd(weight_product(weights), compute_uv=False)
    smallest = sv[-1]
    cond = float("inf") if smallest == 0 else float(sv[0] / smallest)
    return SpectrumReport(label=label, singular_values=sv, condition_number=cond)


@dataclass
class DictionaryFormReport:
    status: str          # "pass" | "fail" | "skipped"
    residual: float
    num_atom_blocks: int
    note: str = ""


def _polynomial_basis(graph: Graph, kind: str, order: int) -> list:
    """Dense propagation polynomials T_0..T_order for the chosen filter."""
    n = graph.num_nodes
    if kind == "gcn":
        return [gcn_renormalize(graph).matrix.to_dense()]
    if kind == "cheb":
        lhat = cheb_scaled_laplacian(graph).matrix.to_dense()
        basis = [np.eye(n), lhat]
        for _ in range(2, order + 1):
            basis.append(2 * lhat @ basis[-1] - basis[-2])
        return basis[: order + 1]
    raise ConfigError(f"dictionary form supports 'gcn' or 'cheb', got {kind!r}")


def dictionary_form_check(
    graph: Graph,
    kind: str = "gcn",
    depth: int = 2,
    order: int = 2,
    seed: int = 0,
    with_activation: bool = False,
) -> DictionaryFormReport:
    """Expand a linear polynomial-filter stack into dictionary form
    D @ W and measure the reconstruction residual.

    For the gcn filter each layer applies one propagation, so the atoms
    are A^depth X; for cheb each layer sums order+1 polynomial terms and
    the atoms enumerate every term combination across layers. Any
    nonlinearity breaks the factorization, so that case reports skipped
    rather than pretending.
    """
    if with_activation:
        return DictionaryFormReport(
            status="skipped",
            residual=float("nan"),
            num_atom_blocks=0,
            note="nonlinear activations do not admit the flat factorization",
        )
    rng = np.random.default_rng(seed)
    d = graph.feature_dim
    basis = _polynomial_basis(graph, kind, order)
    terms = len(basis)
    # per layer, one weight per polynomial term
    layer_weights = [[rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(terms)] for _ in range(depth)]

    # forward through the layered stack
    h = graph.features
    for l in range(depth):
        h = sum(basis[c] @ h @ layer_weights[l][c] for c in range(terms))

    # flat dictionary: one atom block per term combination
    combos = [()]
    for _ in range(depth):
        combos = [c + (t,) for c in combos for t in range(terms)]
    atom_blocks = []
    coeff_blocks = []
    for combo in combos:
        prop = graph.features
        # layer 1 applies first, so its polynomial is innermost
        for t in combo:
            prop = basis[t] @ prop
        w = layer_weights[0][combo[0]]
        for l in range(1, depth):
            w = w @ layer_weights[l][combo[l]]
        atom_blocks.append(prop)
        coeff_blocks.append(w)
    dictionary = np.concatenate(atom_blocks, axis=1)
    coeffs = np.concatenate(coeff_blocks, axis=0)
    residual = float(np.linalg.norm(h - dictionary @ coeffs))
    return DictionaryFormReport(
        status="pass" if residual <= 1e-10 else "fail",
        residual=residual,
        num_atom_blocks=len(combos),
    )


@dataclass
class ConvergenceReport:
    losses: list
    decay_rate: float
    first_gradient: np.ndarray
    final_train_accuracy: float
    status: str


def ce_convergence_probe(
    steps: int = 200,
    lr: float = 0.1,
    seed: int = 0,
    x: Optional[np.ndarray] = None,
    y: Optional[np.ndarray] = None,
) -> ConvergenceReport:
    """Gradient descent on logistic cross entropy over separable blobs.

    Demonstrates (a) monotone loss decrease, (b) a geometric approach to
    the final iterate measured by a log-linear fit over the first half of
    the trajectory, (c) the first step moving along the class-mean
    difference. Labels are +-1.
    """
    if x is None:
        rng = np.random.default_rng(seed)
        m = 80
        pos = rng.standard_normal((m // 2, 2)) * 0.4 + np.array([2.0, 1.0])
        neg = rng.standard_normal((m // 2, 2)) * 0.4 + np.array([-2.0, -1.0])
        x = np.concatenate([pos, neg])
        y = np.concatenate([np.ones(m // 2), -np.ones(m // 2)])
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ConfigError("probe labels must be +-1")
    w = np.zeros(x.shape[1])
    losses = []
    iterates = []
    first_gradient = None
    for _ in range(steps):
        z = y * (x @ w)
        losses.append(float(np.mean(np.logaddexp(0.0, -z))))
        sig = 1.0 / (1.0 + np.exp(z))
        grad = -(x * (y * sig)[:, None]).mean(axis=0)
        if first_gradient is None:
            first_gradient = grad.copy()
        w = w - lr * grad
        iterates.append(w.copy())
    final = iterates[-1]
    dists = np.array([np.linalg.norm(it - final) for it in iterates[: steps // 2]])
    dists = np.maximum(dists, 1e-300)
    # least-squares slope of log distance over the early trajectory
    s = np.arange(dists.shape[0])
    slope = np.polyfit(s, np.log(dists), 1)[0]
    rate = float(np.exp(slope))
    acc = float((np.sign(x @ final) == y).mean())
    ok = all(losses[i + 1] < losses[i] for i in range(len(losses) - 1)) and 0.0 < rate < 1.0
    return ConvergenceReport(
        losses=losses,
        decay_rate=rate,
        first_gradient=first_gradient,
        final_train_accuracy=acc,
        status="pass" if ok else "fail",
    )
