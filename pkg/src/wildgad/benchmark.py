"""Synthetic benchmark presets shared by the demos, the CLI and the tests.

The target is a 1000-node graph with 5% feature-shift anomalies. Candidate
pools come from the same generator with graded distortion: normal features
drift toward the anomaly region and edges are rewired across clusters.
"""

from __future__ import annotations

import numpy as np

from .evaluation import SynthSpec, make_candidate_pool, make_synthetic

POOL_SHIFT_SCALE = 4.0
POOL_REWIRE_SCALE = 1.0
POOL_NODES = 500


def target_spec(seed: int = 0, generator_seed: int = 0, **overrides) -> SynthSpec:
    params = dict(n_normal=950, n_anomaly=50, anomaly_mode="feature_shift",
                  seed=seed, generator_seed=generator_seed, name=f"target_s{seed}")
    params.update(overrides)
    return SynthSpec(**params)


def make_target(seed: int = 0, generator_seed: int = 0, **overrides):
    return make_synthetic(target_spec(seed, generator_seed, **overrides))


def make_pool(spec: SynthSpec, n_candidates: int = 10, seed: int = 0, levels=None):
    """Graded candidate pool for `spec`; returns ``(graphs, levels)``."""
    if levels is None:
        levels = np.linspace(0.0, 1.0, n_candidates)
    return make_candidate_pool(spec, len(levels), levels, seed=seed, shift_scale=POOL_SHIFT_SCALE,
                               rewire_scale=POOL_REWIRE_SCALE, n_nodes=POOL_NODES)
