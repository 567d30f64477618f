"""Continued training on selected external graphs with an EWC-style penalty.

The penalty ``(strength/2) sum_i F_ii (theta_i - theta*_i)^2`` anchors the
parameters to their target-trained values ``theta*`` with importances taken
from an empirical Fisher diagonal computed on the target graph.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detectors import DivergenceError, SvddState, _prepared
from .graphstore import AttributedGraph

log = logging.getLogger(__name__)


@dataclass
class ContinualConfig:
    ewc_strength: float = 1.0
    lr: float = 0.001
    epochs: int = 100
    seed: int = 0
    graph_schedule: list[str] | None = None
    include_target: bool = False
    fisher_batch_size: int = 64
    # added to every Fisher entry so parameters unused on the target are anchored too
    fisher_damping: float = 1e-6

    def __post_init__(self):
        if self.ewc_strength < 0 or self.fisher_damping < 0:
            raise ValueError("ewc_strength and fisher_damping must be >= 0")
        if self.lr <= 0 or self.epochs < 0:
            raise ValueError("lr > 0 and epochs >= 0 are required")


def fisher_diagonal(model, graph: AttributedGraph, batch_size: int = 64, seed: int = 0) -> list[np.ndarray]:
    """Mean over node batches of the squared gradient of the batch anomaly loss.

    Nodes are shuffled with `seed` and cut into batches of `batch_size`;
    weight decay is excluded from the batch losses.
    """
    n = graph.num_nodes
    order = np.random.default_rng(seed).permutation(n)
    prepared = _prepared(graph)
    fisher = [np.zeros_like(p) for p in model.params()]
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    for batch in batches:
        nodes = None if len(batch) == n else np.sort(batch)
        _, grads = model.loss_and_grads(graph, nodes=nodes, prepared=prepared, regularize=False)
        for f, g in zip(fisher, grads):
            f += g**2
    return [f / len(batches) for f in fisher]


def ewc_penalty(theta, theta_star, fisher, strength: float) -> float:
    total = 0.0
    for p, p0, f in zip(theta, theta_star, fisher, strict=True):
        if p.shape != p0.shape or p.shape != f.shape:
            raise ValueError(f"parameter shapes differ: {p.shape}, {p0.shape}, {f.shape}")
        total += float(np.sum(f * (p - p0) ** 2))
    return 0.5 * strength * total


def ewc_grad(theta, theta_star, fisher, strength: float) -> list[np.ndarray]:
    return [strength * f * (p - p0) for p, p0, f in zip(theta, theta_star, fisher, strict=True)]


def _prox_step(p, g, p0, f, lr, strength):
    """Gradient step on the task loss, exact proximal step on the penalty.

    Solves ``p' = p - lr * (g + strength * f * (p' - p0))``, which stays
    stable for arbitrarily large `strength`.
    """
    k = lr * strength * f
    return (p - lr * g + k * p0) / (1.0 + k)


def param_drift(theta, theta_star) -> float:
    return float(np.sqrt(sum(np.sum((p - p0) ** 2) for p, p0 in zip(theta, theta_star))))


@dataclass
class ContinualResult:
    state: object
    log: list[dict] = field(default_factory=list)


def continue_training(base, selected, cfg: ContinualConfig | None = None, fisher=None,
                      target: AttributedGraph | None = None) -> ContinualResult:
    """Continue training `base` (theta*) on the selected graphs.

    `selected` is a list of graphs or of (id, graph) pairs. Each epoch takes
    one full-batch step per graph, round-robin in schedule order. The SVDD
    center is never recomputed. With ``cfg.include_target`` the target graph
    joins the schedule (mixed variant). `fisher` defaults to the empirical
    Fisher of `base` on `target` (zeros when no target is given); either way
    ``cfg.fisher_damping`` is added before use.
    """
    cfg = cfg or ContinualConfig()
    pairs = [(g.name, g) if isinstance(g, AttributedGraph) else (str(g[0]), g[1]) for g in selected]
    if cfg.graph_schedule:
        lookup = dict(pairs)
        pairs = [(gid, lookup[gid]) for gid in cfg.graph_schedule]
    if cfg.include_target:
        if target is None:
            raise ValueError("include_target requires the target graph")
        pairs.append(("__target__", target))
    if not pairs:
        raise ValueError("continue_training needs at least one selected graph")

    theta_star = [p.copy() for p in base.params()]
    if fisher is None:
        fisher = (fisher_diagonal(base, target, cfg.fisher_batch_size, cfg.seed)
                  if target is not None else [np.zeros_like(p) for p in theta_star])
    fisher = [f + cfg.fisher_damping for f in fisher]
    prepared = {gid: _prepared(g) for gid, g in pairs}

    state = base.copy()
    rows = []
    for epoch in range(cfg.epochs):
        for gid, graph in pairs:
            theta = state.params()
            loss_ano, grads = state.loss_and_grads(graph, prepared=prepared[gid])
            penalty = ewc_penalty(theta, theta_star, fisher, cfg.ewc_strength)
            total = loss_ano + penalty
            if not np.isfinite(total):
                raise DivergenceError(f"non-finite loss at epoch {epoch} on {gid}", last_state=state)
            state = state.with_params([
                _prox_step(p, g, p0, f, cfg.lr, cfg.ewc_strength)
                for p, g, p0, f in zip(theta, grads, theta_star, fisher)
            ])
            if isinstance(state, SvddState):
                state.refresh_radius(graph, prepared[gid])
            rows.append({
                "epoch": epoch,
                "graph_id": gid,
                "loss_ano": loss_ano,
                "penalty": penalty,
                "total": total,
                "param_drift_l2": param_drift(state.params(), theta_star),
            })
        log.debug("continual epoch %d total %.6g", epoch, rows[-1]["total"])
    return ContinualResult(state, rows)


def write_train_log(path, rows) -> None:
    cols = ["epoch", "graph_id", "loss_ano", "penalty", "total", "param_drift_l2"]
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["epoch"], r["graph_id"]] + [f"{r[c]:.12g}" for c in cols[2:]])
