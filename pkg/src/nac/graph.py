"""Graph data model, on-disk format, and propagation-matrix builders.

A dataset directory holds five files:

  graph.json    {"num_nodes": N, "feature_dim": F, "num_classes": C, "name": str}
  edges.csv     one undirected edge per line, "src,dst", 0-indexed, src < dst,
                no header, no duplicates, no self loops
  features.csv  N rows of F comma-separated decimals
  labels.csv    N lines, one integer label in [0, C)
  splits.json   {"train": [...], "val": [...], "test": [...]} disjoint node ids

Loaders validate everything and name the offending file (and line where
meaningful) in error messages. Writers emit exactly this format with
repr-round-trip floats so load(write(g)) is exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .exceptions import DatasetError, ShapeError
from .tensor import SparseMatrix

__all__ = [
    "Graph",
    "Split",
    "PropagationMatrix",
    "validate_graph",
    "validate_split",
    "load_graph",
    "write_graph",
    "row_normalize_features",
    "gcn_renormalize",
    "sym_laplacian",
    "cheb_scaled_laplacian",
    "mean_neighbor",
    "synth_graph",
]


@dataclass
class Graph:
    """An undirected attributed graph with one integer label per node.

    edges is an (E, 2) int64 array with src < dst per row, unique rows,
    no self loops; both directions are implied everywhere downstream.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "synthetic"

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        validate_graph(self)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def degrees(self) -> np.ndarray:
        """Undirected degree, self loops excluded (there are none)."""
        d = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(d, self.edges[:, 0], 1)
        np.add.at(d, self.edges[:, 1], 1)
        return d


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train = np.asarray(self.train, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)


@dataclass(frozen=True)
class PropagationMatrix:
    """A fixed sparse operator derived from the graph, tagged by kind."""

    kind: str
    matrix: SparseMatrix


def validate_graph(g: Graph) -> None:
    if g.num_nodes <= 0:
        raise ShapeError(f"graph needs at least one node, got {g.num_nodes}")
    if g.features.ndim != 2 or g.features.shape[0] != g.num_nodes:
        raise ShapeError(f"features must be ({g.num_nodes}, F), got {g.features.shape}")
    if g.labels.shape != (g.num_nodes,):
        raise ShapeError(f"labels must be ({g.num_nodes},), got {g.labels.shape}")
    if g.num_classes < 1:
        raise ShapeError(f"num_classes must be >= 1, got {g.num_classes}")
    if g.labels.size and (g.labels.min() < 0 or g.labels.max() >= g.num_classes):
        raise ShapeError(
            f"labels out of range [0, {g.num_classes}): min={g.labels.min()} max={g.labels.max()}"
        )
    e = g.edges
    if e.size:
        if e.min() < 0 or e.max() >= g.num_nodes:
            raise ShapeError(f"edge endpoint out of range [0, {g.num_nodes})")
        if np.any(e[:, 0] == e[:, 1]):
            raise ShapeError("self loops are not allowed in the edge list")
        if np.any(e[:, 0] >= e[:, 1]):
            raise ShapeError("edges must satisfy src < dst")
        packed = e[:, 0] * g.num_nodes + e[:, 1]
        if np.unique(packed).size != packed.size:
            raise ShapeError("duplicate edges in the edge list")


def validate_split(s: Split, num_nodes: int) -> None:
    parts = {"train": s.train, "val": s.val, "test": s.test}
    for name, idx in parts.items():
        if idx.ndim != 1:
            raise ShapeError(f"split '{name}' must be a flat index list")
        if idx.size == 0:
            raise ShapeError(f"split '{name}' is empty")
        if idx.min() < 0 or idx.max() >= num_nodes:
            raise ShapeError(f"split '{name}' index out of range [0, {num_nodes})")
        if np.unique(idx).size != idx.size:
            raise ShapeError(f"split '{name}' contains duplicate indices")
    all_idx = np.concatenate([s.train, s.val, s.test])
    if np.unique(all_idx).size != all_idx.size:
        raise ShapeError("train/val/test splits overlap")


def _fail(path: str, msg: str, line: Optional[int] = None) -> None:
    where = f"{path}:{line}" if line is not None else path
    raise DatasetError(f"{where}: {msg}")


DATASET_FILES = ("graph.json", "edges.csv", "features.csv", "labels.csv", "splits.json")


def load_graph(path: str) -> tuple[Graph, Split]:
    """Read a dataset directory; every contract violation names its file."""
    meta_p, edges_p, feats_p, labels_p, splits_p = (
        os.path.join(path, f) for f in DATASET_FILES
    )
    for p in (meta_p, edges_p, feats_p, labels_p, splits_p):
        if not os.path.isfile(p):
            raise DatasetError(f"{p}: missing required file")

    with open(meta_p) as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as e:
            _fail(meta_p, f"invalid JSON: {e}")
    for key in ("num_nodes", "feature_dim", "num_classes", "name"):
        if key not in meta:
            _fail(meta_p, f"missing key '{key}'")
    n = int(meta["num_nodes"])
    fdim = int(meta["feature_dim"])
    c = int(meta["num_classes"])
    name = str(meta["name"])

    edges = []
    with open(edges_p) as f:
        for ln, raw in enumerate(f, start=1):
            raw = raw.strip()
            if not raw:
                continue
            parts = raw.split(",")
            if len(parts) != 2:
                _fail(edges_p, f"expected 'src,dst', got {raw!r}", ln)
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError:
                _fail(edges_p, f"non-integer endpoint in {raw!r}", ln)
            if s == d:
                _fail(edges_p, f"self loop {s}", ln)
            if not (s < d):
                _fail(edges_p, f"edges must satisfy src < dst, got {s},{d}", ln)
            if s < 0 or d >= n:
                _fail(edges_p, f"endpoint out of range [0, {n}): {raw!r}", ln)
            edges.append((s, d))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    packed = edges[:, 0] * n + edges[:, 1] if edges.size else np.empty(0, dtype=np.int64)
    if np.unique(packed).size != packed.size:
        _fail(edges_p, "duplicate edges")

    try:
        feats = np.loadtxt(feats_p, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        _fail(feats_p, f"could not parse decimals: {e}")
    if feats.shape != (n, fdim):
        _fail(feats_p, f"expected shape ({n}, {fdim}), got {feats.shape}")

    labels = np.zeros(n, dtype=np.int64)
    with open(labels_p) as f:
        rows = [r.strip() for r in f if r.strip()]
    if len(rows) != n:
        _fail(labels_p, f"expected {n} labels, got {len(rows)}")
    for ln, raw in enumerate(rows, start=1):
        try:
            v = int(raw)
        except ValueError:
            _fail(labels_p, f"non-integer label {raw!r}", ln)
        if not (0 <= v < c):
            _fail(labels_p, f"label {v} out of range [0, {c})", ln)
        labels[ln - 1] = v

    with open(splits_p) as f:
        try:
            sp = json.load(f)
        except json.JSONDecodeError as e:
            _fail(splits_p, f"invalid JSON: {e}")
    for key in ("train", "val", "test"):
        if key not in sp:
            _fail(splits_p, f"missing key '{key}'")
    split = Split(np.asarray(sp["train"]), np.asarray(sp["val"]), np.asarray(sp["test"]))

    try:
        graph = Graph(n, edges, feats, labels, c, name)
    except ShapeError as e:
        raise DatasetError(f"{path}: {e}") from e
    try:
        validate_split(split, n)
    except ShapeError as e:
        raise DatasetError(f"{splits_p}: {e}") from e
    return graph, split


def write_graph(graph: Graph, split: Split, path: str) -> None:
    """Emit the dataset directory format. Floats use repr so reloading
    reproduces the arrays bit for bit."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "graph.json"), "w") as f:
        json.dump(
            {
                "num_nodes": graph.num_nodes,
                "feature_dim": graph.feature_dim,
                "num_classes": graph.num_classes,
                "name": graph.name,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    order = np.lexsort((graph.edges[:, 1], graph.edges[:, 0]))
    with open(os.path.join(path, "edges.csv"), "w") as f:
        for s, d in graph.edges[order]:
            f.write(f"{s},{d}\n")
    with open(os.path.join(path, "features.csv"), "w") as f:
        for row in graph.features:
            f.write(",".join(repr(float(v)) for v in row))
            f.write("\n")
    with open(os.path.join(path, "labels.csv"), "w") as f:
        for v in graph.labels:
            f.write(f"{v}\n")
    with open(os.path.join(path, "splits.json"), "w") as f:
        json.dump(
            {
                "train": [int(i) for i in split.train],
                "val": [int(i) for i in split.val],
                "test": [int(i) for i in split.test],
            },
            f,
            sort_keys=True,
        )
        f.write("\n")


def row_normalize_features(graph: Graph) -> Graph:
    """Rows rescaled to sum 1; all-zero rows stay zero."""
    sums = graph.features.sum(axis=1, keepdims=True)
    scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums != 0)
    return replace(graph, features=graph.features * scale)


def _adjacency_coo(graph: Graph) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric 0/1 adjacency as COO index arrays (both directions)."""
    src = np.concatenate([graph.edges[:, 0], graph.edges[:, 1]])
    dst = np.concatenate([graph.edges[:, 1], graph.edges[:, 0]])
    return src, dst


def adjacency(graph: Graph) -> SparseMatrix:
    n = graph.num_nodes
    if graph.num_edges == 0:
        return SparseMatrix.from_coo(n, n, [], [], [])
    r, c = _adjacency_coo(graph)
    return SparseMatrix.from_coo(n, n, r, c, np.ones(r.shape[0]))


def gcn_renormalize(graph: Graph) -> PropagationMatrix:
    """D~^{-1/2} (A + I) D~^{-1/2} with D~ the degree of A + I.

    Symmetric by construction; an isolated node reduces to the 1x1 case
    with value exactly 1.
    """
    n = graph.num_nodes
    r, c = _adjacency_coo(graph)
    r = np.concatenate([r, np.arange(n)])
    c = np.concatenate([c, np.arange(n)])
    deg = graph.degrees() + 1
    dinv = 1.0 / np.sqrt(deg.astype(np.float64))
    vals = dinv[r] * dinv[c]
    return PropagationMatrix("gcn_renormalized", SparseMatrix.from_coo(n, n, r, c, vals))


def sym_laplacian(graph: Graph) -> PropagationMatrix:
    """I - D^{-1/2} A D^{-1/2}; refuses graphs with isolated nodes because
    the normalization is undefined there."""
    deg = graph.degrees()
    if np.any(deg == 0):
        bad = int(np.flatnonzero(deg == 0)[0])
        raise ShapeError(f"sym_laplacian undefined for degree-0 node {bad}")
    return PropagationMatrix("sym_laplacian", _laplacian_matrix(graph, deg))


def _laplacian_matrix(graph: Graph, deg: np.ndarray) -> SparseMatrix:
    n = graph.num_nodes
    dinv = np.divide(
        1.0, np.sqrt(deg.astype(np.float64)), out=np.zeros(n), where=deg > 0
    )
    r, c = _adjacency_coo(graph)
    vals = -dinv[r] * dinv[c]
    r = np.concatenate([r, np.arange(n)])
    c = np.concatenate([c, np.arange(n)])
    vals = np.concatenate([vals, np.ones(n)])
    return SparseMatrix.from_coo(n, n, r, c, vals)


def cheb_scaled_laplacian(graph: Graph, lambda_max: float = 2.0) -> PropagationMatrix:
    """(2 / lambda_max) L - I with L the symmetric normalized Laplacian.

    Isolated nodes are tolerated here: their Laplacian row is the bare
    diagonal 1, giving a scaled diagonal of 2/lambda_max - 1 (zero at the
    default lambda_max = 2), which keeps the polynomial basis well defined
    on graphs that contain them.
    """
    if not lambda_max > 0:
        raise ShapeError(f"lambda_max must be positive, got {lambda_max}")
    lap = _laplacian_matrix(graph, graph.degrees())
    scaled = lap._csr * (2.0 / lambda_max)
    scaled.setdiag(scaled.diagonal() - 1.0)
    return PropagationMatrix("cheb_scaled_laplacian", SparseMatrix.from_scipy(scaled))


def mean_neighbor(graph: Graph) -> PropagationMatrix:
    """Row-stochastic neighbor averaging, self excluded; rows of isolated
    nodes are all zero."""
    n = graph.num_nodes
    deg = graph.degrees().astype(np.float64)
    dinv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    r, c = _adjacency_coo(graph)
    vals = dinv[r]
    return PropagationMatrix("mean_neighbor", SparseMatrix.from_coo(n, n, r, c, vals))


def _stratified_split(labels: np.ndarray, rng: np.random.Generator, params: dict) -> Split:
    n = labels.shape[0]
    if "train_per_class" in params:
        # planetoid-style counts: fixed train nodes per class, then sized
        # val/test pools drawn from the remainder
        tpc = int(params["train_per_class"])
        val_size = int(params.get("val_size", max(1, n // 5)))
        test_size = int(params.get("test_size", max(1, n // 5)))
        train = []
        for cls in np.unique(labels):
            members = np.flatnonzero(labels == cls)
            members = members[rng.permutation(members.shape[0])]
            train.extend(members[:tpc].tolist())
        train = np.sort(np.asarray(train, dtype=np.int64))
        rest = np.setdiff1d(np.arange(n), train)
        rest = rest[rng.permutation(rest.shape[0])]
        if val_size + test_size > rest.shape[0]:
            raise ShapeError(
                f"split sizes exceed available nodes: {val_size}+{test_size} > {rest.shape[0]}"
            )
        val = np.sort(rest[:val_size])
        test = np.sort(rest[val_size:val_size + test_size])
        return Split(train, val, test)
    train_frac = float(params.get("train_frac", 0.3))
    val_frac = float(params.get("val_frac", 0.3))
    train, val, test = [], [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.shape[0])]
        k = members.shape[0]
        a = max(1, int(round(train_frac * k)))
        b = max(1, int(round(val_frac * k)))
        train.extend(members[:a].tolist())
        val.extend(members[a:a + b].tolist())
        test.extend(members[a + b:].tolist())
    return Split(np.sort(train), np.sort(val), np.sort(test))


def _sbm(params: dict, rng: np.random.Generator) -> Graph:
    n = int(params.get("nodes", 60))
    blocks = int(params.get("blocks", 2))
    p_in = float(params.get("p_in", 0.2))
    p_out = float(params.get("p_out", 0.02))
    labels = np.arange(n, dtype=np.int64) % blocks
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    keep = rng.random(iu.shape[0]) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    mode = params.get("feature_mode", "propagated_onehot")
    if mode == "onehot":
        feats = np.eye(blocks)[labels]
        noise = float(params.get("noise", 0.0))
        if noise > 0:
            feats = feats + noise * rng.standard_normal(feats.shape)
    elif mode == "bow":
        # sparse binary bag-of-words whose word preferences depend on the
        # class, mimicking citation-abstract features
        fdim = int(params.get("feature_dim", 100))
        nnz = int(params.get("nnz_per_row", 10))
        fidelity = float(params.get("word_fidelity", 0.7))
        block_w = fdim // blocks
        feats = np.zeros((n, fdim))
        for i in range(n):
            own = rng.random(nnz) < fidelity
            lo = labels[i] * block_w
            words = np.where(
                own,
                lo + rng.integers(0, block_w, size=nnz),
                rng.integers(0, fdim, size=nnz),
            )
            feats[i, words] = 1.0
    elif mode == "embedded_onehot":
        # class one-hots plus isotropic noise, rotated into a wider
        # feature space by a fixed orthonormal embedding; keeps the class
        # geometry of onehot features at an arbitrary feature_dim
        fdim = int(params.get("feature_dim", 64))
        if fdim < blocks:
            raise ShapeError(f"feature_dim {fdim} smaller than blocks {blocks}")
        noise = float(params.get("noise", 1.0))
        base = np.eye(blocks)[labels] + noise * rng.standard_normal((n, blocks))
        q, _ = np.linalg.qr(rng.standard_normal((fdim, blocks)))
        feats = base @ q.T
    else:
        if mode != "propagated_onehot":
            raise ShapeError(f"unknown sbm feature_mode {mode!r}")
        onehot = np.eye(blocks)[labels]
        noise = float(params.get("noise", 0.3))
        feats = onehot + noise * rng.standard_normal((n, blocks))
    name = str(params.get("name", "sbm"))
    return Graph(n, edges, feats, labels, blocks, name)


def _grid(params: dict) -> Graph:
    rows = int(params.get("rows", 5))
    cols = int(params.get("cols", 5))
    n = rows * cols
    edges = []
    for i in range(rows):
        for j in range(cols):
            u = i * cols + j
            if j + 1 < cols:
                edges.append((u, u + 1))
            if i + 1 < rows:
                edges.append((u, u + cols))
    coords = np.array([[i / max(rows - 1, 1), j / max(cols - 1, 1)] for i in range(rows) for j in range(cols)])
    labels = np.array([(i + j) % 2 for i in range(rows) for j in range(cols)], dtype=np.int64)
    return Graph(n, np.asarray(edges), coords, labels, 2, str(params.get("name", "grid")))


def _star(params: dict) -> Graph:
    n = int(params.get("nodes", 5))
    if n < 2:
        raise ShapeError(f"star graph needs >= 2 nodes, got {n}")
    edges = np.array([(0, i) for i in range(1, n)], dtype=np.int64)
    deg = np.ones((n, 1))
    deg[0, 0] = n - 1
    feats = np.concatenate([deg / (n - 1), np.ones((n, 1))], axis=1)
    labels = np.ones(n, dtype=np.int64)
    labels[0] = 0
    return Graph(n, edges, feats, labels, 2, str(params.get("name", "star")))


def synth_graph(kind: str, params: Optional[dict] = None, seed: int = 0) -> tuple[Graph, Split]:
    """Deterministic synthetic fixtures: 'sbm', 'grid', or 'star'."""
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "sbm":
        graph = _sbm(params, rng)
    elif kind == "grid":
        graph = _grid(params)
    elif kind == "star":
        graph = _star(params)
    else:
        raise ShapeError(f"unknown synthetic graph kind {kind!r}")
    split = _stratified_split(graph.labels, rng, params)
    validate_split(split, graph.num_nodes)
    return graph, split
