"""Shared builders and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools

import numpy as np

from wildgad.graphstore import AttributedGraph


def random_graph(seed, n=None, d_in=None, p=0.3, labels=False, name=None) -> AttributedGraph:
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(5, 21))
    d_in = d_in or int(rng.integers(1, 9))
    pairs = [(u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < p]
    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    X = rng.standard_normal((n, d_in))
    y = None
    if labels:
        y = (rng.random(n) < 0.3).astype(np.int8)
        y[0], y[-1] = 0, 1
    return AttributedGraph(name or f"g{seed}", n, edges, X, y)


def path_graph(n, d_in=1, features=None) -> AttributedGraph:
    edges = np.array([(i, i + 1) for i in range(n - 1)], dtype=np.int64).reshape(-1, 2)
    X = np.arange(n * d_in, dtype=np.float64).reshape(n, d_in) if features is None else features
    return AttributedGraph(f"path{n}", n, edges, X)


# ---------------------------------------------------------------- gradients


def finite_difference(loss_fn, params, eps=1e-4):
    """Central differences of ``loss_fn(params)`` for every entry of every array."""
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += eps
            minus[k][idx] -= eps
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * eps)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-7) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


# ---------------------------------------------------------------- distances


def exact_w2_sorted(x, y) -> float:
    """W2 between equal-size 1-D samples: the sorted coupling is optimal."""
    x, y = np.sort(np.asarray(x, float)), np.sort(np.asarray(y, float))
    assert len(x) == len(y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def exact_w2_replicated(x, y) -> float:
    """W2 for unequal sizes by replicating each sample to the common multiple."""
    n, m = len(x), len(y)
    lcm = np.lcm(n, m)
    return exact_w2_sorted(np.repeat(np.sort(x), lcm // n), np.repeat(np.sort(y), lcm // m))


def pairwise_energy(Y, t) -> float:
    """Mean exp(-t |u-v|^2) over distinct unordered pairs, by explicit loops."""
    Y = np.asarray(Y, float)
    vals = [np.exp(-t * np.sum((Y[i] - Y[j]) ** 2)) for i, j in itertools.combinations(range(len(Y)), 2)]
    return float(np.mean(vals))


def binned_energy_oracle(Z, c, t, num_bins) -> float:
    """Reference binned energy with every bin evaluated on all of its members."""
    Z = np.asarray(Z, float)
    r = np.linalg.norm(Z - c, axis=1)
    lo, hi = r.min(), r.max()
    if hi > lo and num_bins > 1:
        b = np.minimum(((r - lo) / ((hi - lo) / num_bins)).astype(int), num_bins - 1)
    else:
        b = np.zeros(len(Z), int)
    total, weight = 0.0, 0
    for k in range(num_bins):
        members = np.flatnonzero(b == k)
        if len(members) >= 2:
            total += len(members) * _vector_pair_energy(Z[members], t)
            weight += len(members)
    if weight == 0:
        return _vector_pair_energy(Z, t)
    return total / weight


def _vector_pair_energy(Y, t) -> float:
    d2 = np.sum((Y[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    iu = np.triu_indices(len(Y), 1)
    return float(np.mean(np.exp(-t * d2[iu])))


# ---------------------------------------------------------------- metrics


def pair_counting_auc(scores, labels) -> float:
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return float(wins / (len(pos) * len(neg)))


def threshold_sweep_ap(scores, labels) -> float:
    """Sum over distinct thresholds of (recall step) x (precision at threshold)."""
    s = np.asarray(scores, float)
    y = np.asarray(labels).astype(bool)
    n_pos = y.sum()
    ap, prev_recall = 0.0, 0.0
    for thr in sorted(set(s.tolist()), reverse=True):
        flagged = s >= thr
        tp = np.sum(flagged & y)
        recall = tp / n_pos
        precision = tp / flagged.sum()
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return float(ap)


def pearson(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    xc, yc = x - x.mean(), y - y.mean()
    return float(np.sum(xc * yc) / np.sqrt(np.sum(xc**2) * np.sum(yc**2)))


def smooth_at(state, graph, eps=1e-4, safety=10.0) -> bool:
    """True when no ReLU or SVDD hinge kink lies within reach of an eps-perturbation.

    Central differences are only an oracle where the loss is smooth over
    [theta - eps, theta + eps] in every coordinate.
    """
    from wildgad.detectors import _prepared

    adj, X = _prepared(graph)
    AX = adj @ X
    pre = AX @ state.weights.W1
    if np.abs(pre).min() <= safety * eps * np.abs(AX).max():
        return False
    radius = getattr(state, "radius", None)
    if radius is not None:
        d2 = np.sum((state.embed(graph) - state.center) ** 2, axis=1)
        if np.abs(d2 - radius**2).min() <= 1e-3 * max(1.0, d2.max()):
            return False
    return True


def smooth_cases(make_state, count, start=0):
    """First `count` (seed, graph, state) triples, N <= 20 and dims <= 8, that pass :func:`smooth_at`."""
    out, seed = [], start
    while len(out) < count:
        g = random_graph(seed)
        s = make_state(g, seed)
        if smooth_at(s, g):
            out.append((seed, g, s))
        seed += 1
    return out
