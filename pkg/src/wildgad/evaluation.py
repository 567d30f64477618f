"""Ranking metrics and synthetic attributed graphs with planted anomalies."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .graphstore import AttributedGraph


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    return scores, labels.astype(bool)


def auc_roc(scores, labels) -> float:
    """Mann-Whitney AUC: P(positive outranks negative), ties count 1/2."""
    scores, pos = _check_binary(scores, labels)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc_roc needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_pr(scores, labels) -> float:
    """Average precision with tied scores treated as one block.

    Nodes are ranked by descending score; each group of tied scores adds
    (recall gained by the group) x (precision after the whole group).
    """
    scores, pos = _check_binary(scores, labels)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise ValueError("auc_pr needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], pos[order]
    tp = np.cumsum(y)
    # last index of each tie group in the descending order
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_end = tp[ends]
    precision = tp_end / (ends + 1)
    recall_gain = np.diff(np.r_[0, tp_end]) / n_pos
    return float(np.sum(recall_gain * precision))


@dataclass
class EvalReport:
    auc_roc: float
    auc_pr: float
    n_pos: int
    n_neg: int
    auc_roc_std: float = 0.0
    auc_pr_std: float = 0.0
    runs: int = 1


def evaluate(scores, labels) -> EvalReport:
    labels = np.asarray(labels)
    return EvalReport(auc_roc(scores, labels), auc_pr(scores, labels),
                      int((labels == 1).sum()), int((labels == 0).sum()))


def aggregate(reports: list[EvalReport]) -> EvalReport:
    roc = np.array([r.auc_roc for r in reports])
    pr = np.array([r.auc_pr for r in reports])
    return EvalReport(float(roc.mean()), float(pr.mean()), reports[0].n_pos, reports[0].n_neg,
                      float(roc.std()), float(pr.std()), len(reports))


def write_report(path, report: EvalReport, dataset: str, backbone: str, budget: int, labeled: bool) -> None:
    doc = {
        "dataset": dataset,
        "backbone": backbone,
        "budget": budget,
        "labeled": labeled,
        "runs": report.runs,
        "auc_roc_mean": float(f"{report.auc_roc:.12g}"),
        "auc_roc_std": float(f"{report.auc_roc_std:.12g}"),
        "auc_pr_mean": float(f"{report.auc_pr:.12g}"),
        "auc_pr_std": float(f"{report.auc_pr_std:.12g}"),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# ---------------------------------------------------------------- synthetic data


@dataclass
class SynthSpec:
    """Parameters of a homophilous graph with planted anomalies.

    Normal features live near a `latent_dim`-dimensional subspace around a
    nonzero offset: ``x = offset + (mu_cluster + latent_scale * s) B^T +
    noise * e``. Feature-shift anomalies move ``anomaly_shift`` along a unit
    direction orthogonal to that subspace.

    `generator_seed` fixes the offset, basis, cluster means and anomaly
    direction, so graphs sharing it come from the same generator; `seed`
    drives sampling.
    """

    n_normal: int = 950
    n_anomaly: int = 50
    feature_dim: int = 16
    latent_dim: int = 4
    n_clusters: int = 4
    cluster_spread: float = 1.0
    latent_scale: float = 1.0
    noise: float = 0.1
    anomaly_mode: str = "feature_shift"
    anomaly_shift: float = 6.0
    p_intra: float = 0.012
    p_inter: float = 0.0005
    rewire_fraction: float = 1.0
    seed: int = 0
    generator_seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.n_anomaly < 0 or self.n_normal < 0 or self.n_normal + self.n_anomaly < 1:
            raise ValueError("node counts must be non-negative with at least one node")
        if not (0 <= self.p_intra <= 1 and 0 <= self.p_inter <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.anomaly_mode not in ("feature_shift", "structural_rewire", "both"):
            raise ValueError(f"unknown anomaly_mode {self.anomaly_mode!r}")
        if not 1 <= self.latent_dim <= self.feature_dim:
            raise ValueError("latent_dim must lie in [1, feature_dim]")


@dataclass
class GeneratorParams:
    offset: np.ndarray
    basis: np.ndarray
    cluster_means: np.ndarray
    anomaly_direction: np.ndarray


def generator_params(spec: SynthSpec) -> GeneratorParams:
    rng = np.random.default_rng([spec.generator_seed, 7919])
    d, k = spec.feature_dim, spec.latent_dim
    offset = 1.0 + 0.5 * rng.standard_normal(d)
    basis, _ = np.linalg.qr(rng.standard_normal((d, k)))
    means = spec.cluster_spread * rng.standard_normal((spec.n_clusters, k))
    v = rng.standard_normal(d)
    if k < d:
        v -= basis @ (basis.T @ v)
    return GeneratorParams(offset, basis, means, v / np.linalg.norm(v))


def _sbm_edges(rng, cluster, p_intra, p_inter):
    n = len(cluster)
    iu, ju = np.triu_indices(n, k=1)
    same = cluster[iu] == cluster[ju]
    p = np.where(same, p_intra, p_inter)
    keep = rng.random(len(iu)) < p
    return np.column_stack([iu[keep], ju[keep]])


def make_synthetic(spec: SynthSpec, mean_offset=None, rewire_level: float = 0.0) -> AttributedGraph:
    """Sample a labeled graph; anomalies are the last `n_anomaly` nodes.

    `mean_offset` (a feature-space vector) and `rewire_level` (fraction of
    each normal node's edges redirected to random other clusters) distort the
    normal generator; they are used to build candidate pools.
    """
    rng = np.random.default_rng([spec.seed, 104729])
    gp = generator_params(spec)
    n = spec.n_normal + spec.n_anomaly
    cluster = rng.integers(0, spec.n_clusters, size=n)
    latent = gp.cluster_means[cluster] + spec.latent_scale * rng.standard_normal((n, spec.latent_dim))
    X = gp.offset + latent @ gp.basis.T + spec.noise * rng.standard_normal((n, spec.feature_dim))
    if mean_offset is not None:
        X[: spec.n_normal] += np.asarray(mean_offset, dtype=np.float64)
    labels = np.zeros(n, dtype=np.int64)
    labels[spec.n_normal:] = 1
    anomalies = np.arange(spec.n_normal, n)

    if spec.anomaly_mode in ("feature_shift", "both"):
        X[anomalies] += spec.anomaly_shift * gp.anomaly_direction

    edges = _sbm_edges(rng, cluster, spec.p_intra, spec.p_inter)

    def rewire(nodes, fraction):
        nonlocal edges
        if len(nodes) == 0 or fraction <= 0 or len(edges) == 0:
            return
        touched = np.isin(edges[:, 0], nodes) | np.isin(edges[:, 1], nodes)
        pick = touched & (rng.random(len(edges)) < fraction)
        moved = edges[pick]
        kept = edges[~pick]
        src = np.where(np.isin(moved[:, 0], nodes), moved[:, 0], moved[:, 1])
        dst = rng.integers(0, n, size=len(src))
        # redirect to a node from another cluster when possible
        for _ in range(8):
            bad = (cluster[dst] == cluster[src]) | (dst == src)
            if not bad.any():
                break
            dst[bad] = rng.integers(0, n, size=int(bad.sum()))
        edges = np.vstack([kept, np.column_stack([src, dst])])

    if spec.anomaly_mode in ("structural_rewire", "both"):
        rewire(anomalies, spec.rewire_fraction)
    if rewire_level > 0:
        rewire(np.arange(spec.n_normal), rewire_level)

    return AttributedGraph(
        name=spec.name,
        num_nodes=n,
        edges=edges,
        features=X,
        labels=labels,
        provenance={"generator": "synthetic", "seed": spec.seed, "generator_seed": spec.generator_seed},
    )


def make_candidate_pool(target_spec: SynthSpec, n_candidates: int, distortion=None, seed: int = 0,
                        shift_scale: float = None, rewire_scale: float = 0.0,
                        n_nodes: int | None = None, direction: str = "anomaly"):
    """Normal-only candidate graphs from the target's generator at graded distortion.

    `distortion` is a list of levels in [0, 1] (default: evenly spaced from 0
    to 1). Level l shifts every candidate's feature means by
    ``l * shift_scale`` along the anomaly direction (or a seeded random
    direction when ``direction="random"``) and rewires ``l * rewire_scale``
    of their edges across clusters. Returns ``(graphs, levels)``.
    """
    if n_candidates < 2:
        raise ValueError("a candidate pool needs at least two graphs")
    levels = np.linspace(0.0, 1.0, n_candidates) if distortion is None else np.asarray(distortion, dtype=np.float64)
    if len(levels) != n_candidates:
        raise ValueError("distortion schedule length must equal n_candidates")
    if shift_scale is None:
        shift_scale = target_spec.anomaly_shift
    if direction == "anomaly":
        shift_dir = generator_params(target_spec).anomaly_direction
    else:
        v = np.random.default_rng([seed, 31337]).standard_normal(target_spec.feature_dim)
        shift_dir = v / np.linalg.norm(v)

    size = n_nodes or target_spec.n_normal + target_spec.n_anomaly
    seeds = np.random.default_rng([seed, 2718]).choice(2**31 - 1, size=n_candidates, replace=False)
    graphs = []
    for i, (level, s) in enumerate(zip(levels, seeds)):
        spec = SynthSpec(**{**target_spec.__dict__, "n_normal": size, "n_anomaly": 0,
                            "seed": int(s), "name": f"cand{i:02d}"})
        g = make_synthetic(spec, mean_offset=level * shift_scale * shift_dir, rewire_level=level * rewire_scale)
        g = g.replace(provenance={**g.provenance, "distortion": float(level)})
        graphs.append(g)
    return graphs, levels
