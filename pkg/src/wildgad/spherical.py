"""Radial distance / unit direction representation of embeddings about a center."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EPS = 1e-12


@dataclass(frozen=True)
class SphericalCoords:
    radii: np.ndarray
    directions: np.ndarray
    center: np.ndarray

    def __len__(self):
        return len(self.radii)

    def as_points(self) -> np.ndarray:
        """Rows ``[r_i, phi_i]`` in d + 1 dimensions."""
        return np.hstack([self.radii[:, None], self.directions])

    def subset(self, idx) -> "SphericalCoords":
        return SphericalCoords(self.radii[idx], self.directions[idx], self.center)


def spherical_coords(Z, c) -> SphericalCoords:
    Z = np.asarray(Z, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if Z.ndim != 2 or c.shape != (Z.shape[1],):
        raise ValueError(f"center of shape {c.shape} incompatible with embeddings {Z.shape}")
    diff = Z - c
    radii = np.sqrt(np.sum(diff**2, axis=1))
    directions = np.zeros_like(diff)
    ok = radii > EPS
    directions[ok] = diff[ok] / radii[ok, None]
    radii = np.where(ok, radii, 0.0)
    return SphericalCoords(radii, directions, c)


def radial_extent(coords_sets) -> tuple[float, float]:
    """(min, max) radius over every node of every coordinate set."""
    radii = [np.asarray(cs.radii) for cs in coords_sets if len(cs.radii)]
    if not radii:
        raise ValueError("radial_extent needs at least one node")
    all_r = np.concatenate(radii)
    return float(all_r.min()), float(all_r.max())
