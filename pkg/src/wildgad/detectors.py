"""Detector backbones: soft-boundary one-class SVDD and a graph autoencoder.

Both states expose the same small surface used by selection and continual
training: ``embed``, ``loss_and_grads`` (optionally restricted to a node
subset), ``score``, and flat parameter access via ``params``/``with_params``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import gnn
from .graphstore import AttributedGraph, normalized_adjacency

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


def _prepared(graph: AttributedGraph):
    return normalized_adjacency(graph), graph.features.astype(np.float64)


# ---------------------------------------------------------------- one-class


@dataclass
class SvddConfig:
    beta: float = 0.5
    weight_decay: float = 1e-6
    lr: float = 0.001
    epochs: int = 100
    seed: int = 0
    hidden_dim: int = gnn.DEFAULT_HIDDEN_DIM
    embed_dim: int = 64

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.weight_decay < 0 or self.lr <= 0 or self.epochs < 0:
            raise ValueError("weight_decay >= 0, lr > 0 and epochs >= 0 are required")


def svdd_center(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[0] < 1:
        raise ValueError("need at least one embedding")
    return Z.mean(axis=0)


def svdd_loss(Z, c, r: float, beta: float, weight_decay: float = 0.0, weights: gnn.GcnWeights | None = None) -> float:
    """(1/(beta N)) sum max(|z_i - c|^2 - r^2, 0) + r^2 + (lambda/2) sum |W_l|^2."""
    Z = np.asarray(Z, dtype=np.float64)
    dist2 = np.sum((Z - c) ** 2, axis=1)
    slack = np.maximum(dist2 - r**2, 0.0)
    loss = slack.sum() / (beta * len(Z)) + r**2
    if weight_decay and weights is not None:
        loss += 0.5 * weight_decay * weights.sq_norm()
    return float(loss)


def svdd_loss_grad_z(Z, c, r: float, beta: float) -> np.ndarray:
    """Gradient of the hinge term of :func:`svdd_loss` wrt Z."""
    diff = np.asarray(Z, dtype=np.float64) - c
    active = np.sum(diff**2, axis=1) > r**2
    return (2.0 / (beta * len(diff))) * diff * active[:, None]


def svdd_update_radius(distances, beta: float) -> float:
    """(1 - beta)-quantile of the distances, lower interpolation."""
    distances = np.asarray(distances, dtype=np.float64)
    if distances.size < 1:
        raise ValueError("need at least one distance")
    return float(np.quantile(distances, 1.0 - beta, method="lower"))


@dataclass
class SvddState:
    weights: gnn.GcnWeights
    center: np.ndarray
    radius: float
    config: SvddConfig = field(default_factory=SvddConfig)

    backbone = "oc"

    def copy(self) -> "SvddState":
        return SvddState(self.weights.copy(), self.center.copy(), self.radius, self.config)

    def params(self) -> list[np.ndarray]:
        return [self.weights.W1, self.weights.W2]

    def with_params(self, params) -> "SvddState":
        W1, W2 = params
        return SvddState(gnn.GcnWeights(W1, W2), self.center, self.radius, self.config)

    def embed(self, graph: AttributedGraph) -> np.ndarray:
        return gnn.forward(*_prepared(graph), self.weights)

    def loss_and_grads(self, graph: AttributedGraph, nodes=None, prepared=None,
                       regularize: bool = True):
        """Anomaly loss and its weight gradients.

        With `nodes`, the hinge sum runs over those nodes only (normalized by
        their count); propagation still uses the whole graph.
        """
        adj, X = prepared or _prepared(graph)
        cache = gnn.forward_cache(adj, X, self.weights)
        Z = cache[0]
        cfg = self.config
        if nodes is None:
            loss = svdd_loss(Z, self.center, self.radius, cfg.beta)
            dZ = svdd_loss_grad_z(Z, self.center, self.radius, cfg.beta)
        else:
            nodes = np.asarray(nodes)
            loss = svdd_loss(Z[nodes], self.center, self.radius, cfg.beta)
            dZ = np.zeros_like(Z)
            dZ[nodes] = svdd_loss_grad_z(Z[nodes], self.center, self.radius, cfg.beta)
        dW1, dW2 = gnn.backward(adj, X, self.weights, dZ, cache=cache)
        if regularize and cfg.weight_decay:
            loss += 0.5 * cfg.weight_decay * self.weights.sq_norm()
            dW1 = dW1 + cfg.weight_decay * self.weights.W1
            dW2 = dW2 + cfg.weight_decay * self.weights.W2
        return loss, [dW1, dW2]

    def refresh_radius(self, graph: AttributedGraph, prepared=None) -> None:
        adj, X = prepared or _prepared(graph)
        Z = gnn.forward(adj, X, self.weights)
        self.radius = svdd_update_radius(np.linalg.norm(Z - self.center, axis=1), self.config.beta)

    def score(self, graph: AttributedGraph) -> np.ndarray:
        return svdd_score(self, graph)


def svdd_score(state: SvddState, graph: AttributedGraph) -> np.ndarray:
    """Squared distance of each node embedding to the center."""
    Z = state.embed(graph)
    return np.sum((Z - state.center) ** 2, axis=1)


def init_svdd(graph: AttributedGraph, config: SvddConfig) -> SvddState:
    adj, X = _prepared(graph)
    W = gnn.init_weights(graph.feature_dim, config.hidden_dim, config.embed_dim, config.seed)
    Z = gnn.forward(adj, X, W)
    c = svdd_center(Z)
    r = svdd_update_radius(np.linalg.norm(Z - c, axis=1), config.beta)
    return SvddState(W, c, r, config)


def gd_step(state, graph, lr: float, prepared=None):
    """One plain gradient-descent step; returns ``(new_state, loss)``."""
    loss, grads = state.loss_and_grads(graph, prepared=prepared)
    new = state.with_params([p - lr * g for p, g in zip(state.params(), grads)])
    return new, loss


def train_svdd(graph: AttributedGraph, config: SvddConfig | None = None) -> SvddState:
    """Full-batch training with the center frozen at its initial value.

    Each epoch takes one gradient step on the loss, then resets the radius
    to the (1 - beta)-quantile of the current distances.
    """
    config = config or SvddConfig()
    state = init_svdd(graph, config)
    prepared = _prepared(graph)
    for epoch in range(config.epochs):
        new, loss = gd_step(state, graph, config.lr, prepared)
        if not np.isfinite(loss) or not all(np.isfinite(p).all() for p in new.params()):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", last_state=state)
        new.refresh_radius(graph, prepared)
        state = new
        log.debug("svdd epoch %d loss %.6g r %.4g", epoch, loss, state.radius)
    return state


# ---------------------------------------------------------------- autoencoder


@dataclass
class GaeConfig:
    alpha: float = 0.5
    lr: float = 0.001
    epochs: int = 100
    seed: int = 0
    hidden_dim: int = gnn.DEFAULT_HIDDEN_DIM
    embed_dim: int = 64

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.lr <= 0 or self.epochs < 0:
            raise ValueError("lr > 0 and epochs >= 0 are required")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class GaeState:
    weights: gnn.GcnWeights
    decoder: np.ndarray
    config: GaeConfig = field(default_factory=GaeConfig)

    backbone = "gae"

    def copy(self) -> "GaeState":
        return GaeState(self.weights.copy(), self.decoder.copy(), self.config)

    def params(self) -> list[np.ndarray]:
        return [self.weights.W1, self.weights.W2, self.decoder]

    def with_params(self, params) -> "GaeState":
        W1, W2, dec = params
        return GaeState(gnn.GcnWeights(W1, W2), dec, self.config)

    def embed(self, graph: AttributedGraph) -> np.ndarray:
        return gnn.forward(*_prepared(graph), self.weights)

    def reconstruct(self, graph: AttributedGraph, prepared=None):
        adj, X = prepared or _prepared(graph)
        return gae_forward(self, adj, X)

    def loss_and_grads(self, graph: AttributedGraph, nodes=None, prepared=None,
                       regularize: bool = True):
        """Reconstruction loss (summed over `nodes` rows if given) and gradients."""
        adj, X = prepared or _prepared(graph)
        cache = gnn.forward_cache(adj, X, self.weights)
        Z = cache[0]
        A = graph.adjacency().toarray()
        alpha = self.config.alpha
        A_rec = _sigmoid(Z @ Z.T)
        AZ = adj @ Z
        X_rec = AZ @ self.decoder
        R_a = A_rec - A
        R_x = X_rec - X
        if nodes is not None:
            mask = np.zeros(len(Z))
            mask[np.asarray(nodes)] = 1.0
            R_a = R_a * mask[:, None]
            R_x = R_x * mask[:, None]
        loss = (1 - alpha) * np.sum(R_a**2) + alpha * np.sum(R_x**2)

        G_s = 2 * (1 - alpha) * R_a * A_rec * (1 - A_rec)
        G_x = 2 * alpha * R_x
        dZ = (G_s + G_s.T) @ Z + adj.T @ (G_x @ self.decoder.T)
        d_dec = AZ.T @ G_x
        dW1, dW2 = gnn.backward(adj, X, self.weights, dZ, cache=cache)
        return float(loss), [dW1, dW2, d_dec]

    def score(self, graph: AttributedGraph) -> np.ndarray:
        _, A_rec, X_rec = self.reconstruct(graph)
        A = graph.adjacency().toarray()
        return gae_score(A, A_rec, graph.features.astype(np.float64), X_rec, self.config.alpha)


def gae_forward(state: GaeState, adj, X):
    """Return ``(Z, A_rec, X_rec)``: sigmoid(Z Z^T) and one propagation + linear decode."""
    Z = gnn.forward(adj, X, state.weights)
    if state.decoder.shape[0] != Z.shape[1]:
        raise ValueError("decoder input dim does not match embedding dim")
    return Z, _sigmoid(Z @ Z.T), (adj @ Z) @ state.decoder


def gae_loss(A, A_rec, X, X_rec, alpha: float) -> float:
    A = np.asarray(A, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    return float((1 - alpha) * np.sum((A - A_rec) ** 2) + alpha * np.sum((X - X_rec) ** 2))


def gae_score(A, A_rec, X, X_rec, alpha: float) -> np.ndarray:
    """Per-node share of :func:`gae_loss`; sums to the loss."""
    A = np.asarray(A, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    return (1 - alpha) * np.sum((A - A_rec) ** 2, axis=1) + alpha * np.sum((X - X_rec) ** 2, axis=1)


def init_gae(graph: AttributedGraph, config: GaeConfig) -> GaeState:
    W = gnn.init_weights(graph.feature_dim, config.hidden_dim, config.embed_dim, config.seed)
    rng = np.random.default_rng([config.seed, 1])
    bound = np.sqrt(6.0 / (config.embed_dim + graph.feature_dim))
    dec = rng.uniform(-bound, bound, size=(config.embed_dim, graph.feature_dim))
    return GaeState(W, dec, config)


def train_gae(graph: AttributedGraph, config: GaeConfig | None = None) -> GaeState:
    config = config or GaeConfig()
    state = init_gae(graph, config)
    prepared = _prepared(graph)
    for epoch in range(config.epochs):
        new, loss = gd_step(state, graph, config.lr, prepared)
        if not np.isfinite(loss) or not all(np.isfinite(p).all() for p in new.params()):
            raise DivergenceError(f"non-finite loss at epoch {epoch}", last_state=state)
        state = new
        log.debug("gae epoch %d loss %.6g", epoch, loss)
    return state


def train_detector(graph: AttributedGraph, backbone: str, config=None):
    if backbone == "oc":
        return train_svdd(graph, config)
    if backbone == "gae":
        return train_gae(graph, config)
    raise ValueError(f"unknown backbone {backbone!r} (expected 'oc' or 'gae')")


# ---------------------------------------------------------------- checkpoints


def save_state(state, path) -> None:
    """Checkpoint a detector; backbone state goes into the ``extra`` block."""
    cfg = dict(state.config.__dict__)
    if isinstance(state, SvddState):
        extra = {"center": [float(x) for x in state.center], "radius": float(state.radius), "config": cfg}
        gnn.save_checkpoint(path, state.weights, "oc", extra)
    elif isinstance(state, GaeState):
        extra = {"decoder_shape": list(state.decoder.shape), "config": cfg}
        gnn.save_checkpoint(path, state.weights, "gae", extra, [state.decoder])
    else:
        raise TypeError(f"cannot checkpoint {type(state).__name__}")


def load_state(path):
    W, meta, rest = gnn.load_checkpoint(path)
    extra = meta["extra"]
    if meta["backbone"] == "oc":
        return SvddState(W, np.asarray(extra["center"]), float(extra["radius"]), SvddConfig(**extra["config"]))
    if meta["backbone"] == "gae":
        dec = rest[: int(np.prod(extra["decoder_shape"]))].reshape(extra["decoder_shape"]).copy()
        return GaeState(W, dec, GaeConfig(**extra["config"]))
    raise ValueError(f"unknown backbone {meta['backbone']!r}")
