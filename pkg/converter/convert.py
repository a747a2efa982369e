#!/usr/bin/env python3
"""Convert citation-benchmark distributions to the portable graph format.

Two source layouts are recognized:

* the pickled citation-benchmark layout (`ind.<name>.x/y/tx/ty/allx/ally/
  graph` plus `ind.<name>.test.index`), as distributed for cora, citeseer
  and pubmed;
* a generic edge-list directory (`edges.txt`, `labels.txt`, optional
  `features.txt`), kept as an untested-at-scale hook for other corpora.

Output is the five-file dataset directory (graph.json, edges.csv,
features.csv, labels.csv, splits.json). Everything written is a pure
function of the source bytes: no timestamps, stable ordering, decimals at
9 significant digits, so re-running a conversion is byte-identical and
`--verify` can hash-compare a fresh conversion against what is on disk.
"""

import argparse
import hashlib
import json
import pickle
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

PLANETOID_PARTS = ("x", "y", "tx", "ty", "allx", "ally", "graph")
DATASET_FILES = ("graph.json", "edges.csv", "features.csv", "labels.csv", "splits.json")
VAL_SIZE = 500  # public-split convention: the 500 nodes after the train block


class ConversionError(Exception):
    """Source layout or consistency problem; message names the culprit."""


@dataclass
class ConversionReport:
    dataset: str
    num_nodes: int
    num_edges: int
    feature_dim: int
    num_classes: int
    train_size: int
    val_size: int
    test_size: int
    checksums: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _dense(mat) -> np.ndarray:
    if hasattr(mat, "toarray"):
        return np.asarray(mat.toarray(), dtype=np.float64)
    return np.asarray(mat, dtype=np.float64)


def _load_pickle(path: Path):
    with open(path, "rb") as fh:
        # the original dumps are python2 pickles; latin1 keeps their
        # byte strings decodable and is harmless for newer pickles
        return pickle.load(fh, encoding="latin1")


def load_planetoid(src: Path, name: str) -> dict:
    """Parse the pickled citation layout into dense arrays.

    Test rows arrive shuffled: `test.index` gives each tx row its node id.
    Some distributions (citeseer) omit ids inside the test span for
    isolated papers; those rows are zero-filled and carry no label.
    """
    parts = {}
    for part in PLANETOID_PARTS:
        path = src / f"ind.{name}.{part}"
        if not path.is_file():
            raise ConversionError(f"missing source file: {path}")
        parts[part] = _load_pickle(path)
    index_path = src / f"ind.{name}.test.index"
    if not index_path.is_file():
        raise ConversionError(f"missing source file: {index_path}")
    test_reorder = np.array(
        [int(line) for line in index_path.read_text().split()], dtype=np.int64
    )
    if test_reorder.size == 0:
        raise ConversionError(f"empty test index: {index_path}")

    x, tx, allx = (_dense(parts[p]) for p in ("x", "tx", "allx"))
    y, ty, ally = (np.asarray(parts[p]) for p in ("y", "ty", "ally"))
    n_all = allx.shape[0]
    fdim = allx.shape[1]
    if x.shape[1] != fdim or tx.shape[1] != fdim:
        raise ConversionError(f"feature dims disagree across x/tx/allx in {src}")

    span_lo, span_hi = int(test_reorder.min()), int(test_reorder.max())
    if span_lo != n_all:
        raise ConversionError(
            f"test ids start at {span_lo}, expected {n_all} (rows of allx come first)"
        )
    span = span_hi - span_lo + 1
    tx_full = np.zeros((span, fdim))
    ty_full = np.zeros((span, ty.shape[1]), dtype=ty.dtype)
    sorted_ids = np.sort(test_reorder)
    tx_full[sorted_ids - span_lo] = tx
    ty_full[sorted_ids - span_lo] = ty

    features = np.vstack([allx, tx_full])
    onehot = np.vstack([ally, ty_full])
    # move each shuffled test row to the node id test.index assigns it
    features[test_reorder] = features[sorted_ids]
    onehot[test_reorder] = onehot[sorted_ids]

    labels = onehot.argmax(axis=1).astype(np.int64)
    num_nodes = n_all + span
    adjacency = parts["graph"]
    if len(adjacency) != num_nodes:
        raise ConversionError(
            f"graph dict has {len(adjacency)} nodes, features imply {num_nodes}"
        )

    n_train = y.shape[0]
    splits = {
        "train": list(range(n_train)),
        "val": list(range(n_train, min(n_train + VAL_SIZE, n_all))),
        "test": [int(i) for i in sorted_ids],
    }
    return {
        "features": features,
        "labels": labels,
        "num_classes": int(onehot.shape[1]),
        "edges": _normalize_edges(adjacency, num_nodes),
        "splits": splits,
    }


def load_generic(src: Path, name: str) -> dict:
    """Edge-list directory hook: whitespace pairs in edges.txt, one label
    per node line in labels.txt, optional numeric rows in features.txt
    (constant single feature otherwise). Split is a per-class 60/20/20
    partition in node order, so it is deterministic without a seed."""
    edges_path, labels_path = src / "edges.txt", src / "labels.txt"
    labels = np.array(
        [int(line) for line in labels_path.read_text().split()], dtype=np.int64
    )
    n = labels.shape[0]
    adjacency = {i: [] for i in range(n)}
    for lineno, line in enumerate(edges_path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            a, b = (int(tok) for tok in line.split())
        except ValueError as exc:
            raise ConversionError(f"{edges_path}:{lineno}: expected 'src dst', got {line!r}") from exc
        if not (0 <= a < n and 0 <= b < n):
            raise ConversionError(f"{edges_path}:{lineno}: node id out of range")
        adjacency[a].append(b)

    feats_path = src / "features.txt"
    if feats_path.is_file():
        rows = [
            [float(tok) for tok in line.replace(",", " ").split()]
            for line in feats_path.read_text().splitlines()
            if line.strip()
        ]
        features = np.asarray(rows, dtype=np.float64)
        if features.shape[0] != n:
            raise ConversionError(
                f"{feats_path}: {features.shape[0]} rows for {n} labeled nodes"
            )
    else:
        features = np.ones((n, 1))

    splits = {"train": [], "val": [], "test": []}
    for cls in np.unique(labels):
        ids = np.flatnonzero(labels == cls)
        n_train = max(1, int(round(len(ids) * 0.6)))
        n_val = max(1, int(round(len(ids) * 0.2)))
        if n_train + n_val >= len(ids):
            # rounding ate the test share; give train back first
            n_train = max(1, len(ids) - n_val - 1)
        splits["train"] += [int(i) for i in ids[:n_train]]
        splits["val"] += [int(i) for i in ids[n_train:n_train + n_val]]
        splits["test"] += [int(i) for i in ids[n_train + n_val:]]
    for key in splits:
        splits[key].sort()
    if not all(splits.values()):
        raise ConversionError("generic split left an empty part; dataset too small")

    return {
        "features": features,
        "labels": labels,
        "num_classes": int(labels.max()) + 1,
        "edges": _normalize_edges(adjacency, n),
        "splits": splits,
    }


def _normalize_edges(adjacency: dict, num_nodes: int) -> list:
    """Undirected canonical form: self-loops dropped, both directions
    collapsed to one (src, dst) pair with src < dst, ascending order."""
    edges = set()
    for a, neighbors in adjacency.items():
        a = int(a)
        for b in neighbors:
            b = int(b)
            if a == b:
                continue
            if not (0 <= a < num_nodes and 0 <= b < num_nodes):
                raise ConversionError(f"edge ({a}, {b}) out of range for {num_nodes} nodes")
            edges.add((a, b) if a < b else (b, a))
    return sorted(edges)


def _format_row(row: np.ndarray) -> str:
    return ",".join(f"{v:.9g}" for v in row)


def render_output(name: str, data: dict) -> dict:
    """The five dataset files as {filename: bytes}; pure and deterministic."""
    num_nodes, fdim = data["features"].shape
    meta = {
        "name": name,
        "num_nodes": num_nodes,
        "feature_dim": fdim,
        "num_classes": data["num_classes"],
    }
    files = {
        "graph.json": json.dumps(meta, indent=2, sort_keys=True) + "\n",
        "edges.csv": "".join(f"{a},{b}\n" for a, b in data["edges"]),
        "features.csv": "".join(_format_row(r) + "\n" for r in data["features"]),
        "labels.csv": "".join(f"{v}\n" for v in data["labels"]),
        "splits.json": json.dumps(data["splits"], sort_keys=True) + "\n",
    }
    return {fname: text.encode() for fname, text in files.items()}


def _checksums(files: dict) -> dict:
    return {fname: hashlib.sha256(payload).hexdigest() for fname, payload in sorted(files.items())}


def convert(src: Path, dataset: str, out: Path, verify: bool = False) -> ConversionReport:
    if (src / f"ind.{dataset}.x").is_file():
        data = load_planetoid(src, dataset)
    elif (src / "edges.txt").is_file() and (src / "labels.txt").is_file():
        data = load_generic(src, dataset)
    else:
        raise ConversionError(
            f"unknown source layout in {src}: expected ind.{dataset}.* "
            f"pickles or edges.txt + labels.txt"
        )

    files = render_output(dataset, data)
    if verify and all((out / fname).is_file() for fname in DATASET_FILES):
        for fname, payload in files.items():
            if (out / fname).read_bytes() != payload:
                raise ConversionError(f"checksum mismatch against existing {out / fname}")
    out.mkdir(parents=True, exist_ok=True)
    for fname, payload in files.items():
        (out / fname).write_bytes(payload)

    # the report promises its counts describe the emitted files, so count
    # from the rendered bytes rather than the in-memory arrays
    num_edges = files["edges.csv"].decode().count("\n")
    num_nodes = files["labels.csv"].decode().count("\n")
    splits = json.loads(files["splits.json"])
    report = ConversionReport(
        dataset=dataset,
        num_nodes=num_nodes,
        num_edges=num_edges,
        feature_dim=int(json.loads(files["graph.json"])["feature_dim"]),
        num_classes=int(json.loads(files["graph.json"])["num_classes"]),
        train_size=len(splits["train"]),
        val_size=len(splits["val"]),
        test_size=len(splits["test"]),
        checksums=_checksums(files),
    )
    (out / "report.json").write_text(report.to_json())
    return report


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="convert.py", description="Convert a citation dataset to the portable graph format."
    )
    parser.add_argument("--dataset", required=True, help="dataset name, e.g. cora")
    parser.add_argument("--src", required=True, type=Path, help="source directory")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument(
        "--verify", action="store_true",
        help="compare a fresh conversion against existing output before writing",
    )
    args = parser.parse_args(argv)
    try:
        report = convert(args.src, args.dataset, args.out, verify=args.verify)
    except ConversionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(report.to_json(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
