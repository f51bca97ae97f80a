"""Basis directions, prolate tensor basis and the attenuation dictionary.

Directions are antipodally identified: ``v`` and ``-v`` describe the same
fiber orientation, and the stored representative is the one whose first
nonzero coordinate is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "GradientScheme",
    "TensorBasis",
    "build_basis",
    "build_dictionary",
    "canonicalize",
    "default_basis",
    "prolate_tensor",
    "save_basis_csv",
    "save_dictionary_csv",
    "tessellate_octahedron",
]


def canonicalize(vectors):
    """Normalize rows and flip them so the first nonzero component is positive."""
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        raise ValueError("zero-length direction")
    v = v / norms[:, None]
    out = v.copy()
    for row in out:
        nz = np.flatnonzero(np.abs(row) > 1e-12)
        if row[nz[0]] < 0:
            row *= -1.0
    return out


def tessellate_octahedron(order: int) -> np.ndarray:
    """Antipodally unique vertices of a subdivided octahedron on the unit sphere.

    Every face of the octahedron is split into ``order**2`` triangles. The
    full sphere carries ``4 * order**2 + 2`` vertices, which are the integer
    points ``(a, b, c)`` with ``|a| + |b| + |c| == order`` projected radially.
    Only the canonical half is returned, ``2 * order**2 + 1`` rows.

    Parameters
    ----------
    order : int
        Edge subdivision count, at least 1. Order 12 gives 289 directions.

    Returns
    -------
    ndarray, shape (2 * order**2 + 1, 3)
        Unit vectors sorted lexicographically by their canonical coordinates.
    """
    if isinstance(order, bool) or int(order) != order or order < 1:
        raise ValueError(f"tessellation order must be a positive integer, got {order!r}")
    n = int(order)
    pts = []
    for a in range(-n, n + 1):
        for b in range(-(n - abs(a)), n - abs(a) + 1):
            rest = n - abs(a) - abs(b)
            for c in {rest, -rest}:
                # canonical half: first nonzero coordinate positive
                first = next(x for x in (a, b, c) if x != 0)
                if first > 0:
                    pts.append((a, b, c))
    pts = np.array(sorted(pts), dtype=float)
    return pts / np.linalg.norm(pts, axis=1)[:, None]


def prolate_tensor(direction, lambda1: float, lambda2: float) -> np.ndarray:
    """``(lambda1 - lambda2) v v^T + lambda2 I`` for a unit vector ``v``."""
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    return (lambda1 - lambda2) * np.outer(v, v) + lambda2 * np.eye(3)


@dataclass(frozen=True, eq=False)
class GradientScheme:
    """Diffusion gradient table.

    ``bvecs`` are unit vectors (zero rows allowed for baselines) and
    ``bvals`` in s/mm^2. Measurements with ``b < b0_threshold`` are baselines.
    """

    bvals: np.ndarray
    bvecs: np.ndarray
    b0_threshold: float = 50.0

    def __post_init__(self):
        bvals = np.asarray(self.bvals, dtype=float).ravel()
        bvecs = np.asarray(self.bvecs, dtype=float).reshape(-1, 3)
        if bvals.shape[0] != bvecs.shape[0]:
            raise ValueError(
                f"{bvals.shape[0]} b-values but {bvecs.shape[0]} gradient vectors"
            )
        if np.any(~np.isfinite(bvals)) or np.any(~np.isfinite(bvecs)):
            raise ValueError("gradient table contains NaN or Inf")
        if np.any(bvals < 0):
            raise ValueError("b-values must be nonnegative")
        norms = np.linalg.norm(bvecs, axis=1)
        weighted = bvals >= self.b0_threshold
        if np.any(norms[weighted] == 0):
            raise ValueError("diffusion-weighted measurement with zero gradient vector")
        unit = bvecs.copy()
        unit[norms > 0] /= norms[norms > 0, None]
        bvals.setflags(write=False)
        unit.setflags(write=False)
        object.__setattr__(self, "bvals", bvals)
        object.__setattr__(self, "bvecs", unit)

    @classmethod
    def from_directions(cls, directions, bvalue: float, n_baselines: int = 1):
        """Baselines first, then one measurement per direction at ``bvalue``."""
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        bvals = np.concatenate([np.zeros(n_baselines), np.full(len(d), float(bvalue))])
        bvecs = np.vstack([np.zeros((n_baselines, 3)), d])
        return cls(bvals, bvecs)

    @property
    def baseline_mask(self) -> np.ndarray:
        return self.bvals < self.b0_threshold

    @property
    def n_baselines(self) -> int:
        return int(self.baseline_mask.sum())

    @property
    def weighted_bvals(self) -> np.ndarray:
        return self.bvals[~self.baseline_mask]

    @property
    def weighted_bvecs(self) -> np.ndarray:
        return self.bvecs[~self.baseline_mask]

    def __len__(self):
        return len(self.bvals)


@dataclass(frozen=True, eq=False)
class TensorBasis:
    """Fixed prolate tensors sharing eigenvalues ``(lambda1, lambda2, lambda2)``."""

    directions: np.ndarray
    lambda1: float
    lambda2: float
    tensors: np.ndarray = field(repr=False)
    cosines: np.ndarray = field(repr=False)  # |v_i . v_j|, unit diagonal

    def __len__(self):
        return len(self.directions)

    def abs_cosines(self, other=None) -> np.ndarray:
        """``|v_i . u_j|`` between basis directions and ``other`` (default: itself)."""
        other = self.directions if other is None else np.atleast_2d(other)
        return np.abs(self.directions @ np.asarray(other, dtype=float).T)

    def nearest(self, vectors) -> np.ndarray:
        """Index of the closest basis direction, up to sign, for each row."""
        return np.argmax(self.abs_cosines(vectors), axis=0)


def build_basis(directions, lambda1: float = 2.0e-3, lambda2: float = 0.5e-3) -> TensorBasis:
    """Prolate tensors ``(lambda1 - lambda2) v v^T + lambda2 I`` along each direction."""
    if not (np.isfinite(lambda1) and np.isfinite(lambda2)) or lambda2 <= 0:
        raise ValueError("basis eigenvalues must be finite and positive")
    if lambda1 < lambda2:
        raise ValueError(f"need lambda1 >= lambda2, got {lambda1} < {lambda2}")
    v = np.asarray(directions, dtype=float).reshape(-1, 3)
    v = v / np.linalg.norm(v, axis=1)[:, None]
    tensors = (lambda1 - lambda2) * np.einsum("ni,nj->nij", v, v) + lambda2 * np.eye(3)
    cosines = np.clip(np.abs(v @ v.T), 0.0, 1.0)
    np.fill_diagonal(cosines, 1.0)
    for arr in (v, tensors, cosines):
        arr.setflags(write=False)
    return TensorBasis(v, float(lambda1), float(lambda2), tensors, cosines)


def default_basis(order: int = 12, lambda1: float = 2.0e-3, lambda2: float = 0.5e-3):
    return build_basis(tessellate_octahedron(order), lambda1, lambda2)


def build_dictionary(basis: TensorBasis, scheme: GradientScheme) -> np.ndarray:
    """Attenuation matrix ``G[k, i] = exp(-b_k q_k^T D_i q_k)`` over weighted measurements.

    Baseline rows are excluded; they only serve to estimate ``S0``.
    """
    b = scheme.weighted_bvals
    q = scheme.weighted_bvecs
    if len(b) == 0:
        raise ValueError("gradient scheme has no diffusion-weighted measurements")
    quad = np.einsum("kj,njl,kl->kn", q, basis.tensors, q)
    G = np.exp(-b[:, None] * quad)
    G.setflags(write=False)
    return G


def _write_csv(path, rows):
    rows = np.atleast_2d(rows)
    Path(path).write_text(
        "\n".join(",".join(f"{x:.17g}" for x in row) for row in rows) + "\n"
    )


def save_basis_csv(path, basis: TensorBasis):
    """One ``x,y,z`` direction per line, 17 significant digits."""
    _write_csv(path, basis.directions)


def save_dictionary_csv(path, G):
    _write_csv(path, G)


def load_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
