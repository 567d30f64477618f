"""Candidate scoring: representativity (center shift, sliced Wasserstein) and
diversity (binned Gaussian hyperspherical energy), combined into a score J
where lower is better.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphstore import AttributedGraph
from .spherical import SphericalCoords, radial_extent, spherical_coords


@dataclass
class EnergyConfig:
    t: float = 1.0
    num_bins: int = 8
    max_sample: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.t <= 0 or self.num_bins < 1 or self.max_sample < 2:
            raise ValueError("need t > 0, num_bins >= 1 and max_sample >= 2")


@dataclass
class SelectionConfig:
    eta: float = 0.5
    k: int = 1
    projections: int = 128
    labeled_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("budget k must be >= 1")


@dataclass
class CandidateScore:
    candidate_id: str
    s_sim_c: float
    s_sim_d: float
    s_div: float
    s_sim_c_hat: float = 0.0
    s_sim_d_hat: float = 0.0
    s_div_hat: float = 0.0
    J: float = 0.0
    labeled: bool = False
    fallback: bool = False
    subsets: dict = field(default_factory=dict)


# ---------------------------------------------------------------- criteria


def center_shift(Z_in, Z_out) -> float:
    """Distance between the target center and the center of the pooled embeddings."""
    Z_in = np.asarray(Z_in, dtype=np.float64)
    Z_out = np.asarray(Z_out, dtype=np.float64)
    if Z_in.shape[1] != Z_out.shape[1]:
        raise ValueError(f"embedding dims differ: {Z_in.shape[1]} vs {Z_out.shape[1]}")
    if len(Z_in) == 0 or len(Z_out) == 0:
        raise ValueError("both embedding sets must be nonempty")
    n_in, n_out = len(Z_in), len(Z_out)
    c_in = Z_in.mean(axis=0)
    c_mix = (Z_in.sum(axis=0) + Z_out.sum(axis=0)) / (n_in + n_out)
    return float(np.linalg.norm(c_in - c_mix))


def wasserstein_1d(x, y) -> float:
    """Exact W2 between two 1-D empirical distributions via quantile functions."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    y = np.sort(np.asarray(y, dtype=np.float64))
    n, m = len(x), len(y)
    if n == m:
        return float(np.sqrt(np.mean((x - y) ** 2)))
    cuts = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    lo = np.concatenate([[0.0], cuts[:-1]])
    mid = 0.5 * (lo + cuts)
    ix = np.minimum((mid * n).astype(np.int64), n - 1)
    iy = np.minimum((mid * m).astype(np.int64), m - 1)
    return float(np.sqrt(np.sum((cuts - lo) * (x[ix] - y[iy]) ** 2)))


def _points(rho) -> np.ndarray:
    if isinstance(rho, SphericalCoords):
        return rho.as_points()
    pts = np.asarray(rho, dtype=np.float64)
    return pts[:, None] if pts.ndim == 1 else pts


def sliced_wasserstein(P, Q, projections: int = 128, seed: int = 0) -> float:
    """Mean over seeded random unit directions of the 1-D W2 between projections."""
    P, Q = _points(P), _points(Q)
    if P.shape[1] != Q.shape[1]:
        raise ValueError("point sets must share a dimension")
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("point sets must be nonempty")
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal((projections, P.shape[1]))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    Pp, Qp = P @ theta.T, Q @ theta.T
    return float(np.mean([wasserstein_1d(Pp[:, j], Qp[:, j]) for j in range(projections)]))


def distributional_similarity(rho_in, rho_mix, projections: int = 128, seed: int = 0) -> float:
    return sliced_wasserstein(rho_in, rho_mix, projections, seed)


def _mean_pair_energy(Y: np.ndarray, t: float, chunk: int = 1024) -> float:
    """Mean of exp(-t |u - v|^2) over unordered distinct pairs of rows of Y."""
    n = len(Y)
    sq = np.sum(Y**2, axis=1)
    total = 0.0
    for s in range(0, n, chunk):
        blk = Y[s:s + chunk]
        d2 = sq[s:s + chunk, None] + sq[None, :] - 2.0 * blk @ Y.T
        np.maximum(d2, 0.0, out=d2)
        e = np.exp(-t * d2)
        # exact zero on the diagonal regardless of rounding in d2
        rows = np.arange(len(blk))
        e[rows, s + rows] = 0.0
        total += e.sum()
    return float(total / (n * (n - 1)))


def hyperspherical_energy(Z, c, cfg: EnergyConfig | None = None) -> float:
    """Radially binned mean Gaussian pair energy, population-weighted over bins.

    Nodes are split into ``num_bins`` equal-width shells over [r_min, r_max]
    about `c`; within each shell holding at least two nodes the mean pair
    energy of their positions is taken (on a seeded subsample when the shell
    exceeds ``max_sample``). If no shell holds two nodes the mean over all
    pairs is returned.
    """
    cfg = cfg or EnergyConfig()
    Z = np.asarray(Z, dtype=np.float64)
    if len(Z) < 2:
        raise ValueError("hyperspherical energy needs at least two nodes")
    coords = spherical_coords(Z, c)
    r_min, r_max = radial_extent([coords])
    if r_max > r_min and cfg.num_bins > 1:
        width = (r_max - r_min) / cfg.num_bins
        bins = np.minimum(((coords.radii - r_min) / width).astype(np.int64), cfg.num_bins - 1)
    else:
        bins = np.zeros(len(Z), dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    energies, weights = [], []
    for b in range(cfg.num_bins):
        members = np.flatnonzero(bins == b)
        if len(members) < 2:
            continue
        if len(members) > cfg.max_sample:
            members = np.sort(rng.choice(members, size=cfg.max_sample, replace=False))
        energies.append(_mean_pair_energy(Z[members], cfg.t))
        weights.append(np.count_nonzero(bins == b))
    if not energies:
        return _mean_pair_energy(Z, cfg.t)
    return float(np.average(energies, weights=weights))


# ---------------------------------------------------------------- combination


def z_normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return np.zeros_like(v)
    std = v.std()
    if std == 0 or not np.isfinite(std):
        return np.zeros_like(v)
    return (v - v.mean()) / std


def final_score(s_c_hat, s_d_hat, s_div_hat, eta: float) -> np.ndarray:
    """J = eta * (s_c + s_d) / 2 + (1 - eta) * s_div on normalized criteria."""
    s_c_hat, s_d_hat, s_div_hat = (np.asarray(a, dtype=np.float64) for a in (s_c_hat, s_d_hat, s_div_hat))
    return eta * (s_c_hat + s_d_hat) / 2.0 + (1.0 - eta) * s_div_hat


def select_topk(scores, k: int) -> list[str]:
    """Ids of the k smallest-J candidates; ties go to the smaller id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not scores:
        raise ValueError("cannot select from an empty candidate pool")
    ranked = sorted(scores, key=lambda s: (s.J, s.candidate_id))
    return [s.candidate_id for s in ranked[:k]]


# ---------------------------------------------------------------- pool scoring


def raw_criteria(Z_in, Z_out, cfg: SelectionConfig, energy_cfg: EnergyConfig) -> tuple[float, float, float]:
    """Un-normalized (center shift, Wasserstein, energy) for one embedded candidate."""
    c_in = Z_in.mean(axis=0)
    Z_mix = np.vstack([Z_in, Z_out])
    s_c = center_shift(Z_in, Z_out)
    rho_in = spherical_coords(Z_in, c_in)
    rho_mix = spherical_coords(Z_mix, c_in)
    s_d = distributional_similarity(rho_in, rho_mix, cfg.projections, cfg.seed)
    s_div = hyperspherical_energy(Z_mix, c_in, energy_cfg)
    return s_c, s_d, s_div


def _iter_candidates(candidates):
    if hasattr(candidates, "load_graphs"):
        yield from candidates.load_graphs()
    elif isinstance(candidates, dict):
        yield from candidates.items()
    else:
        yield from candidates


def _embed_checked(model, graph: AttributedGraph, d_in: int) -> np.ndarray:
    if graph.feature_dim != d_in:
        raise ValueError(
            f"candidate {graph.name!r} has feature dim {graph.feature_dim}, model expects {d_in}"
        )
    return model.embed(graph)


def _normalize_block(raw: np.ndarray, eta: float):
    hats = np.column_stack([z_normalize(raw[:, j]) for j in range(3)]) if len(raw) else raw
    J = final_score(hats[:, 0], hats[:, 1], hats[:, 2], eta) if len(raw) else np.zeros(0)
    return hats, J


def score_candidates(target: AttributedGraph, model, candidates, cfg: SelectionConfig | None = None,
                     energy_cfg: EnergyConfig | None = None) -> list[CandidateScore]:
    """Score every candidate against the target with the frozen base model.

    `candidates` is a CandidateManifest, a dict id -> graph, or an iterable
    of (id, graph) pairs. Returned scores keep the input order.
    """
    cfg = cfg or SelectionConfig()
    energy_cfg = energy_cfg or EnergyConfig()
    if cfg.labeled_mode:
        return score_candidates_labeled(target, model, candidates, cfg, energy_cfg)
    d_in = model.params()[0].shape[0]
    Z_in = _embed_checked(model, target, d_in)
    ids, raw = [], []
    for cid, graph in _iter_candidates(candidates):
        Z_out = _embed_checked(model, graph, d_in)
        ids.append(str(cid))
        raw.append(raw_criteria(Z_in, Z_out, cfg, energy_cfg))
    raw = np.asarray(raw, dtype=np.float64).reshape(-1, 3)
    hats, J = _normalize_block(raw, cfg.eta)
    return [
        CandidateScore(cid, *map(float, raw[i]), *map(float, hats[i]), float(J[i]))
        for i, cid in enumerate(ids)
    ]


def score_candidates_labeled(target: AttributedGraph, model, candidates, cfg: SelectionConfig | None = None,
                             energy_cfg: EnergyConfig | None = None) -> list[CandidateScore]:
    """Labeled variant: criteria are computed on each candidate's normal and
    abnormal node subsets separately, normalized per subset across the pool,
    and J is the mean of the available subset scores.

    Unlabeled candidates take part with their full node set in the normal
    block and are flagged with ``fallback=True``.
    """
    cfg = cfg or SelectionConfig()
    energy_cfg = energy_cfg or EnergyConfig()
    d_in = model.params()[0].shape[0]
    Z_in = _embed_checked(model, target, d_in)

    ids, fallback = [], []
    subsets = {"normal": {}, "abnormal": {}}
    for i, (cid, graph) in enumerate(_iter_candidates(candidates)):
        Z_out = _embed_checked(model, graph, d_in)
        ids.append(str(cid))
        if graph.labels is None:
            fallback.append(True)
            subsets["normal"][i] = raw_criteria(Z_in, Z_out, cfg, energy_cfg)
            continue
        fallback.append(False)
        for name, flag in (("normal", 0), ("abnormal", 1)):
            rows = np.flatnonzero(graph.labels == flag)
            if len(rows):
                subsets[name][i] = raw_criteria(Z_in, Z_out[rows], cfg, energy_cfg)

    per_subset = {}
    for name, entries in subsets.items():
        idx = sorted(entries)
        raw = np.asarray([entries[i] for i in idx], dtype=np.float64).reshape(-1, 3)
        hats, J = _normalize_block(raw, cfg.eta)
        per_subset[name] = {i: (raw[j], hats[j], J[j]) for j, i in enumerate(idx)}

    out = []
    for i, cid in enumerate(ids):
        parts = {name: per_subset[name][i] for name in ("normal", "abnormal") if i in per_subset[name]}
        J = float(np.mean([p[2] for p in parts.values()]))
        head = parts.get("normal") or parts["abnormal"]
        out.append(CandidateScore(
            cid, *map(float, head[0]), *map(float, head[1]), J,
            labeled=True, fallback=fallback[i],
            subsets={name: {"raw": [float(x) for x in p[0]], "hat": [float(x) for x in p[1]], "J": float(p[2])}
                     for name, p in parts.items()},
        ))
    return out


def write_scores(path, scores, selected, target: str, backbone: str, eta: float, k: int) -> None:
    """scores.json, candidates sorted by J ascending (ties by id)."""
    chosen = set(selected)
    rows = []
    for s in sorted(scores, key=lambda s: (s.J, s.candidate_id)):
        rows.append({
            "id": s.candidate_id,
            "s_sim_c": _num(s.s_sim_c),
            "s_sim_d": _num(s.s_sim_d),
            "s_div": _num(s.s_div),
            "s_sim_c_hat": _num(s.s_sim_c_hat),
            "s_sim_d_hat": _num(s.s_sim_d_hat),
            "s_div_hat": _num(s.s_div_hat),
            "J": _num(s.J),
            "selected": s.candidate_id in chosen,
        })
    doc = {"target": target, "backbone": backbone, "eta": eta, "k": k, "candidates": rows}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_scores(path) -> list[CandidateScore]:
    doc = json.loads(Path(path).read_text())
    return [
        CandidateScore(r["id"], r["s_sim_c"], r["s_sim_d"], r["s_div"],
                       r["s_sim_c_hat"], r["s_sim_d_hat"], r["s_div_hat"], r["J"])
        for r in doc["candidates"]
    ]


def _num(x: float) -> float:
    """Round to 12 significant digits so files are stable across platforms."""
    return float(f"{x:.12g}")

