"""Graph augmentations and the candidate database built from them.

``ratio`` is the fraction of affected elements: nodes for feature masking
and node dropping, edges for edge perturbation (half removed, half added),
and the removed-node fraction for subgraph extraction.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graphstore import AttributedGraph, load_dataset, save_dataset

log = logging.getLogger(__name__)

OPS = ("feature_mask", "node_drop", "edge_perturb", "subgraph_extract")
DEFAULT_RATIOS = (0.2, 0.4, 0.6, 0.8)


class AugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentationSpec:
    op: str
    ratio: float
    seed: int = 0
    mask_mode: str = "zero"

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown augmentation {self.op!r}; expected one of {OPS}")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.mask_mode not in ("zero", "neighbor_avg"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")


def _floor(x: float) -> int:
    # guard against 0.29 * 100 == 28.999999999999996
    return int(math.floor(x + 1e-9))


def _ceil(x: float) -> int:
    return int(math.ceil(x - 1e-9))


def _rng(spec: AugmentationSpec):
    return np.random.default_rng([spec.seed, OPS.index(spec.op)])


def _tag(g: AttributedGraph, spec: AugmentationSpec) -> dict:
    prov = dict(g.provenance)
    prov["augmentation"] = {"op": spec.op, "ratio": spec.ratio, "seed": spec.seed}
    if spec.op == "feature_mask":
        prov["augmentation"]["mask_mode"] = spec.mask_mode
    return prov


def feature_mask(g: AttributedGraph, spec: AugmentationSpec) -> AttributedGraph:
    """Replace the feature rows of floor(ratio * N) random nodes.

    Rows become zeros (``mask_mode="zero"``) or the mean of the neighbors'
    original rows (``"neighbor_avg"``; isolated nodes get zeros).
    """
    count = _floor(spec.ratio * g.num_nodes)
    if count == 0:
        return g
    chosen = np.sort(_rng(spec).choice(g.num_nodes, size=count, replace=False))
    X = g.features.copy()
    if spec.mask_mode == "zero":
        X[chosen] = 0.0
    else:
        nbrs = g.neighbors()
        orig = g.features.astype(np.float64)
        for i in chosen:
            X[i] = orig[nbrs[i]].mean(axis=0) if len(nbrs[i]) else 0.0
    return g.replace(features=X, provenance=_tag(g, spec))


def node_drop(g: AttributedGraph, spec: AugmentationSpec) -> AttributedGraph:
    count = _floor(spec.ratio * g.num_nodes)
    if count == 0:
        return g
    if count >= g.num_nodes:
        raise AugmentationError("node_drop would remove every node")
    dropped = _rng(spec).choice(g.num_nodes, size=count, replace=False)
    keep = np.setdiff1d(np.arange(g.num_nodes), dropped)
    out = g.induced_subgraph(keep)
    return out.replace(provenance=_tag(g, spec))


def edge_perturb(g: AttributedGraph, spec: AugmentationSpec) -> AttributedGraph:
    """Remove floor(ratio * E / 2) random edges and add as many random non-edges."""
    if g.num_edges == 0:
        raise AugmentationError("edge_perturb needs at least one edge")
    count = _floor(spec.ratio * g.num_edges / 2)
    if count == 0:
        return g
    n = g.num_nodes
    non_edges = n * (n - 1) // 2 - g.num_edges
    if count > non_edges:
        raise AugmentationError(
            f"perturbation infeasible: need {count} new edges but only {non_edges} non-edges exist"
        )
    rng = _rng(spec)
    removed = rng.choice(g.num_edges, size=count, replace=False)
    kept = np.delete(g.edges, removed, axis=0)

    existing = set(map(tuple, g.edges.tolist()))
    added: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    attempts = 0
    while len(added) < count and attempts < 50 * count + 1000:
        attempts += 1
        u, v = (int(x) for x in rng.integers(0, n, size=2))
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in existing or pair in seen:
            continue
        seen.add(pair)
        added.append(pair)
    if len(added) < count:
        # dense graph: sample directly from the enumerated complement
        iu, ju = np.triu_indices(n, k=1)
        cand = [(int(a), int(b)) for a, b in zip(iu, ju) if (a, b) not in existing and (a, b) not in seen]
        extra = rng.choice(len(cand), size=count - len(added), replace=False)
        added.extend(cand[i] for i in sorted(extra))
    edges = np.vstack([kept, np.asarray(added, dtype=np.int64).reshape(-1, 2)])
    return g.replace(edges=edges, provenance=_tag(g, spec))


def subgraph_extract(g: AttributedGraph, spec: AugmentationSpec) -> AttributedGraph:
    """Keep ceil((1 - ratio) * N) nodes collected by seeded BFS.

    BFS starts at a random root and visits neighbors in a seeded random
    order; if the frontier empties, it restarts from a random unvisited node.
    """
    keep_count = _ceil((1.0 - spec.ratio) * g.num_nodes)
    if keep_count < 1:
        raise AugmentationError("subgraph_extract would keep no nodes")
    if keep_count >= g.num_nodes:
        return g
    rng = _rng(spec)
    nbrs = g.neighbors()
    visited = np.zeros(g.num_nodes, dtype=bool)
    kept: list[int] = []
    root = int(rng.integers(g.num_nodes))
    while len(kept) < keep_count:
        if visited[root]:
            root = int(rng.choice(np.flatnonzero(~visited)))
        queue = deque([root])
        visited[root] = True
        kept.append(root)
        while queue and len(kept) < keep_count:
            u = queue.popleft()
            for v in rng.permutation(nbrs[u]):
                if not visited[v]:
                    visited[v] = True
                    kept.append(int(v))
                    queue.append(int(v))
                    if len(kept) == keep_count:
                        break
    out = g.induced_subgraph(np.asarray(kept))
    return out.replace(provenance=_tag(g, spec))


AUGMENTATIONS = {
    "feature_mask": feature_mask,
    "node_drop": node_drop,
    "edge_perturb": edge_perturb,
    "subgraph_extract": subgraph_extract,
}


def augment(g: AttributedGraph, spec: AugmentationSpec) -> AttributedGraph:
    return AUGMENTATIONS[spec.op](g, spec)


# ---------------------------------------------------------------- database


@dataclass
class ManifestEntry:
    id: str
    path: str
    origin_name: str
    op: str
    ratio: float
    seed: int
    num_nodes: int
    num_edges: int
    has_labels: bool
    status: str = "ok"
    error: str | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        if d["error"] is None:
            del d["error"]
        return d


@dataclass
class CandidateManifest:
    entries: list[ManifestEntry]
    base_seed: int = 0
    embedding_dim: int | None = None
    root: Path | None = field(default=None, compare=False)

    def __len__(self):
        return len(self.entries)

    def ok_entries(self) -> list[ManifestEntry]:
        return [e for e in self.entries if e.status == "ok"]

    def load_graph(self, entry_id: str) -> AttributedGraph:
        entry = next(e for e in self.entries if e.id == entry_id)
        return load_dataset(Path(self.root) / entry.path)

    def load_graphs(self):
        for e in self.ok_entries():
            yield e.id, load_dataset(Path(self.root) / e.path)

    def save(self, out) -> None:
        out = Path(out)
        doc = {
            "base_seed": self.base_seed,
            "embedding_dim": self.embedding_dim,
            "entries": [e.to_json() for e in sorted(self.entries, key=lambda e: e.id)],
        }
        (out / "db.json").write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CandidateManifest":
        path = Path(path)
        db = path / "db.json" if path.is_dir() else path
        doc = json.loads(db.read_text())
        entries = [ManifestEntry(**e) for e in doc["entries"]]
        ids = [e.id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest entry ids are not unique")
        return cls(entries, doc.get("base_seed", 0), doc.get("embedding_dim"), db.parent)


def derive_seed(base_seed: int, origin: str, op: str, ratio: float) -> int:
    key = f"{base_seed}|{origin}|{op}|{ratio:.6f}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")


def entry_id(origin: str, op: str | None = None, ratio: float | None = None) -> str:
    if op is None:
        return f"{origin}__original"
    return f"{origin}__{op}__{ratio:.2f}"


def build_candidate_db(originals, out, ratios=DEFAULT_RATIOS, ops=OPS, base_seed: int = 0,
                       mask_mode: str = "zero") -> CandidateManifest:
    """Materialize every original plus one variant per (op, ratio) under `out`.

    Writes ``out/graphs/<id>/`` datasets and ``out/db.json``. A failing
    augmentation is recorded with ``status="skipped"`` instead of aborting.
    """
    originals = list(originals)
    if not originals:
        raise ValueError("build_candidate_db needs at least one original graph")
    names = [g.name for g in originals]
    if len(set(names)) != len(names):
        raise ValueError(f"original graph names must be unique: {names}")
    dims = {g.feature_dim for g in originals}
    if len(dims) > 1:
        raise ValueError(f"originals mix feature dims {sorted(dims)}; align features first")
    out = Path(out)
    (out / "graphs").mkdir(parents=True, exist_ok=True)

    entries = []

    def store(eid, g, origin, op, ratio, seed):
        rel = f"graphs/{eid}"
        save_dataset(g.replace(name=eid), out / rel)
        entries.append(ManifestEntry(eid, rel, origin, op, ratio, seed, g.num_nodes, g.num_edges, g.has_labels))

    for g in originals:
        store(entry_id(g.name), g, g.name, "original", 0, base_seed)
        for op in ops:
            for ratio in ratios:
                eid = entry_id(g.name, op, ratio)
                seed = derive_seed(base_seed, g.name, op, ratio)
                try:
                    aug = augment(g, AugmentationSpec(op, ratio, seed, mask_mode))
                except AugmentationError as exc:
                    log.warning("skipping %s: %s", eid, exc)
                    entries.append(ManifestEntry(eid, f"graphs/{eid}", g.name, op, ratio, seed, 0, 0,
                                                 g.has_labels, status="skipped", error=str(exc)))
                    continue
                store(eid, aug, g.name, op, ratio, seed)

    entries.sort(key=lambda e: e.id)
    manifest = CandidateManifest(entries, base_seed, dims.pop(), out)
    manifest.save(out)
    return manifest
