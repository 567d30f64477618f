"""Attributed graphs, the on-disk dataset format, and GCN adjacency normalization.

A dataset directory holds::

    meta.json       {"name", "num_nodes", "num_edges", "feature_dim",
                     "directed": false, "has_labels", "provenance": {...}}
    edges.csv       "u,v" per line, 0-indexed, u < v, sorted
    features.f32le  N x d_in float32, little-endian, row-major
    labels.csv      optional, "node_id,label" per line, sorted by node_id
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GraphValidationError(ValueError):
    """Raised when a graph or dataset directory violates the format."""


def canonical_edges(edges, num_nodes: int) -> np.ndarray:
    """Return edges as a sorted (E, 2) int64 array with u < v, no loops or duplicates."""
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
        bad = arr[(arr < 0).any(axis=1) | (arr >= num_nodes).any(axis=1)][0]
        raise GraphValidationError(
            f"edge endpoint out of range: ({bad[0]}, {bad[1]}) with num_nodes={num_nodes}"
        )
    arr = arr[arr[:, 0] != arr[:, 1]]
    arr = np.sort(arr, axis=1)
    if arr.size:
        arr = np.unique(arr, axis=0)
    return arr.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Undirected attributed graph G = (V, A, X) with optional anomaly labels.

    Construction canonicalizes the edge list (u < v, sorted, self-loops and
    duplicates dropped) and stores features as float32. Instances are treated
    as immutable; augmentation ops always build new graphs.
    """

    name: str
    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 1:
            raise GraphValidationError("graph must have at least one node")
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", canonical_edges(self.edges, n))

        x = np.asarray(self.features, dtype=np.float32)
        if x.ndim != 2 or x.shape[0] != n:
            raise GraphValidationError(
                f"features must be a {n} x d_in matrix, got shape {x.shape}"
            )
        if x.shape[1] < 1:
            raise GraphValidationError("feature_dim must be >= 1 (featureless graphs are rejected)")
        x = np.ascontiguousarray(x)
        x.setflags(write=False)
        object.__setattr__(self, "features", x)

        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (n,):
                raise GraphValidationError(f"labels must have length {n}, got shape {y.shape}")
            if not np.isin(y, (0, 1)).all():
                raise GraphValidationError("label values must be 0 or 1")
            y = y.astype(np.int8)
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)
        self.edges.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        n = self.num_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        a = sp.coo_matrix((data, (np.concatenate([u, v]), np.concatenate([v, u]))), shape=(n, n))
        return a.tocsr()

    def neighbors(self) -> list[np.ndarray]:
        a = self.adjacency()
        return [a.indices[a.indptr[i]:a.indptr[i + 1]] for i in range(self.num_nodes)]

    def replace(self, **changes) -> "AttributedGraph":
        fields = dict(
            name=self.name,
            num_nodes=self.num_nodes,
            edges=self.edges,
            features=self.features,
            labels=self.labels,
            provenance=dict(self.provenance),
        )
        fields.update(changes)
        return AttributedGraph(**fields)

    def induced_subgraph(self, keep: np.ndarray, name: str | None = None) -> "AttributedGraph":
        """Subgraph on `keep` (original ids), re-indexed densely in ascending id order."""
        keep = np.unique(np.asarray(keep, dtype=np.int64))
        remap = np.full(self.num_nodes, -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        e = remap[self.edges]
        e = e[(e >= 0).all(axis=1)]
        return AttributedGraph(
            name=name or self.name,
            num_nodes=len(keep),
            edges=e,
            features=self.features[keep],
            labels=None if self.labels is None else self.labels[keep],
            provenance=dict(self.provenance),
        )

    def __eq__(self, other):
        if not isinstance(other, AttributedGraph):
            return NotImplemented
        if (self.labels is None) != (other.labels is None):
            return False
        return (
            self.name == other.name
            and self.num_nodes == other.num_nodes
            and np.array_equal(self.edges, other.edges)
            and self.features.shape == other.features.shape
            and np.array_equal(self.features.view(np.uint32), other.features.view(np.uint32))
            and (self.labels is None or np.array_equal(self.labels, other.labels))
        )

    __hash__ = None


def normalized_adjacency(graph: AttributedGraph) -> sp.csr_matrix:
    """D^{-1/2} (A + I) D^{-1/2} as a symmetric CSR matrix."""
    n = graph.num_nodes
    a_hat = graph.adjacency() + sp.identity(n, format="csr")
    deg = np.asarray(a_hat.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    coo = a_hat.tocoo()
    vals = inv_sqrt[coo.row] * coo.data * inv_sqrt[coo.col]
    out = sp.csr_matrix((vals, (coo.row, coo.col)), shape=(n, n))
    out.sort_indices()
    return out


def save_dataset(graph: AttributedGraph, path) -> None:
    """Write `graph` to directory `path`; output bytes depend only on the graph."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": graph.name,
        "num_nodes": graph.num_nodes,
        "num_edges": graph.num_edges,
        "feature_dim": graph.feature_dim,
        "directed": False,
        "has_labels": graph.has_labels,
        "provenance": graph.provenance,
    }
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    lines = "".join(f"{u},{v}\n" for u, v in graph.edges.tolist())
    (path / "edges.csv").write_text(lines)
    (path / "features.f32le").write_bytes(graph.features.astype("<f4").tobytes(order="C"))
    labels_path = path / "labels.csv"
    if graph.has_labels:
        labels_path.write_text("".join(f"{i},{int(y)}\n" for i, y in enumerate(graph.labels)))
    elif labels_path.exists():
        os.remove(labels_path)


def _read_pairs(path: Path) -> list[tuple[int, int]]:
    pairs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise GraphValidationError(f"{path.name}:{lineno}: expected 'a,b', got {line!r}")
        try:
            pairs.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise GraphValidationError(f"{path.name}:{lineno}: {exc}") from None
    return pairs


def load_dataset(path) -> AttributedGraph:
    """Load and validate a dataset directory.

    Directed inputs (``"directed": true``) are symmetrized; the returned
    graph's provenance records ``"symmetrized": true`` in that case.
    """
    path = Path(path)
    for required in ("meta.json", "edges.csv", "features.f32le"):
        if not (path / required).is_file():
            raise FileNotFoundError(f"missing dataset file: {path / required}")
    meta = json.loads((path / "meta.json").read_text())
    n = int(meta["num_nodes"])
    d_in = int(meta["feature_dim"])

    edges = _read_pairs(path / "edges.csv")
    raw = (path / "features.f32le").read_bytes()
    if len(raw) != n * d_in * 4:
        raise GraphValidationError(
            f"features.f32le has {len(raw)} bytes, expected N*d_in*4 = {n * d_in * 4}"
        )
    features = np.frombuffer(raw, dtype="<f4").reshape(n, d_in) if d_in else np.zeros((n, 0))

    labels = None
    labels_path = path / "labels.csv"
    if meta.get("has_labels", labels_path.is_file()):
        if not labels_path.is_file():
            raise FileNotFoundError(f"missing dataset file: {labels_path}")
        labels = np.zeros(n, dtype=np.int64)
        seen = np.zeros(n, dtype=bool)
        for node, y in _read_pairs(labels_path):
            if not 0 <= node < n:
                raise GraphValidationError(f"label node id {node} out of range")
            if y not in (0, 1):
                raise GraphValidationError(f"label value {y} for node {node} not in {{0,1}}")
            labels[node] = y
            seen[node] = True
        if not seen.all():
            raise GraphValidationError("labels.csv does not cover every node")

    provenance = dict(meta.get("provenance") or {})
    if meta.get("directed", False):
        provenance["symmetrized"] = True
    graph = AttributedGraph(
        name=meta.get("name", path.name),
        num_nodes=n,
        edges=edges,
        features=features,
        labels=labels,
        provenance=provenance,
    )
    declared = meta.get("num_edges")
    if declared is not None and int(declared) != len(edges):
        raise GraphValidationError(
            f"meta.json declares {declared} edges but edges.csv has {len(edges)}"
        )
    return graph
