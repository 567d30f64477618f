"""Two-layer GCN encoder ``Z = A relu(A X W1) W2`` with hand-written gradients.

No bias terms: together with a frozen hypersphere center this rules out the
constant-map solution of one-class training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_HIDDEN_DIM = 128


@dataclass
class GcnWeights:
    W1: np.ndarray
    W2: np.ndarray

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def copy(self) -> "GcnWeights":
        return GcnWeights(self.W1.copy(), self.W2.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.W2.ravel()])

    def sq_norm(self) -> float:
        return float(np.sum(self.W1**2) + np.sum(self.W2**2))


def init_weights(d_in: int, d_h: int = DEFAULT_HIDDEN_DIM, d: int = 64, seed: int = 0) -> GcnWeights:
    """Glorot-uniform initialization, deterministic in `seed`."""
    if min(d_in, d_h, d) < 1:
        raise ValueError("all layer dimensions must be >= 1")
    rng = np.random.default_rng(seed)

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return GcnWeights(glorot(d_in, d_h), glorot(d_h, d))


def _check(adj, X, W: GcnWeights):
    if X.shape[1] != W.W1.shape[0]:
        raise ValueError(f"feature dim {X.shape[1]} != W1 input dim {W.W1.shape[0]}")
    if adj.shape != (X.shape[0], X.shape[0]):
        raise ValueError(f"adjacency shape {adj.shape} does not match {X.shape[0]} nodes")


def forward_cache(adj, X, W: GcnWeights):
    """Forward pass returning ``(Z, AX, H)`` for reuse in :func:`backward`."""
    X = np.asarray(X, dtype=np.float64)
    _check(adj, X, W)
    AX = adj @ X
    H = np.maximum(AX @ W.W1, 0.0)
    Z = adj @ (H @ W.W2)
    return Z, AX, H


def forward(adj, X, W: GcnWeights) -> np.ndarray:
    return forward_cache(adj, X, W)[0]


def backward(adj, X, W: GcnWeights, dL_dZ, cache=None) -> tuple[np.ndarray, np.ndarray]:
    """Gradients ``(dW1, dW2)`` of a scalar loss given its gradient wrt Z.

    relu'(0) is taken as 0.
    """
    if cache is None:
        _, AX, H = forward_cache(adj, X, W)
    else:
        _, AX, H = cache
    dL_dZ = np.asarray(dL_dZ, dtype=np.float64)
    if dL_dZ.shape != (AX.shape[0], W.W2.shape[1]):
        raise ValueError(f"dL_dZ shape {dL_dZ.shape} does not match Z")
    G = adj.T @ dL_dZ
    dW2 = H.T @ G
    dH = (G @ W.W2.T) * (H > 0)
    dW1 = AX.T @ dH
    return dW1, dW2


def save_checkpoint(path, weights: GcnWeights, backbone: str, extra: dict | None = None,
                    extra_arrays: list[np.ndarray] | None = None) -> None:
    """Write checkpoint.json plus weights.f32le (W1, W2, then any extra arrays)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    d_in, d_h, d = weights.dims
    meta = {"d_in": d_in, "d_h": d_h, "d": d, "backbone": backbone, "extra": extra or {}}
    (path / "checkpoint.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    blobs = [weights.W1, weights.W2] + list(extra_arrays or [])
    raw = b"".join(np.ascontiguousarray(b, dtype="<f4").tobytes() for b in blobs)
    (path / "weights.f32le").write_bytes(raw)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(weights, meta, flat_remainder)``."""
    path = Path(path)
    meta = json.loads((path / "checkpoint.json").read_text())
    flat = np.frombuffer((path / "weights.f32le").read_bytes(), dtype="<f4").astype(np.float64)
    d_in, d_h, d = meta["d_in"], meta["d_h"], meta["d"]
    n1, n2 = d_in * d_h, d_h * d
    W = GcnWeights(flat[:n1].reshape(d_in, d_h).copy(), flat[n1:n1 + n2].reshape(d_h, d).copy())
    return W, meta, flat[n1 + n2:]
