"""Single-tensor fits, FA/MD, and the log-Euclidean voxel similarity."""

from __future__ import annotations

import numpy as np

from .geometry import GradientScheme

__all__ = [
    "EIGENVALUE_FLOOR",
    "SIGNAL_FLOOR",
    "InsufficientDataError",
    "NumericDomainError",
    "RankDeficientError",
    "design_matrix",
    "fa_md",
    "fit_tensor",
    "fit_tensors",
    "log_euclidean_distance",
    "spd_logm",
    "spd_repair",
    "tensor_to_six",
    "six_to_tensor",
    "voxel_similarity",
]

EIGENVALUE_FLOOR = 1e-6  # mm^2/s
SIGNAL_FLOOR = 1e-6

# upper-triangular storage order
_SIX = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class InsufficientDataError(ValueError):
    pass


class RankDeficientError(ValueError):
    pass


class NumericDomainError(ArithmeticError):
    pass


def design_matrix(scheme: GradientScheme) -> np.ndarray:
    """Rows ``b (qx^2, 2 qx qy, 2 qx qz, qy^2, 2 qy qz, qz^2)`` so that ``X d = -ln y``."""
    b = scheme.weighted_bvals
    q = scheme.weighted_bvecs
    cols = [q[:, i] * q[:, j] * (1.0 if i == j else 2.0) for i, j in _SIX]
    return b[:, None] * np.stack(cols, axis=1)


def six_to_tensor(six) -> np.ndarray:
    six = np.asarray(six, dtype=float)
    D = np.empty(six.shape[:-1] + (3, 3))
    for c, (i, j) in enumerate(_SIX):
        D[..., i, j] = six[..., c]
        D[..., j, i] = six[..., c]
    return D


def tensor_to_six(D) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return np.stack([D[..., i, j] for i, j in _SIX], axis=-1)


def spd_repair(D, floor: float = EIGENVALUE_FLOOR) -> np.ndarray:
    """Symmetrize and clamp eigenvalues from below."""
    D = np.asarray(D, dtype=float)
    D = 0.5 * (D + np.swapaxes(D, -1, -2))
    w, V = np.linalg.eigh(D)
    if np.all(w >= floor):
        return D
    w = np.maximum(w, floor)
    return np.einsum("...ij,...j,...kj->...ik", V, w, V)


def fit_tensors(y, scheme: GradientScheme) -> np.ndarray:
    """Log-linear least-squares tensor fit for a batch of normalized signals.

    Parameters
    ----------
    y : array_like, shape (..., K)
        Signals divided by ``S0`` over the weighted measurements of ``scheme``.
    scheme : GradientScheme

    Returns
    -------
    ndarray, shape (..., 3, 3)
        SPD-repaired tensors in mm^2/s.
    """
    X = design_matrix(scheme)
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != X.shape[0]:
        raise ValueError(f"expected {X.shape[0]} weighted signals, got {y.shape[-1]}")
    if X.shape[0] < 6:
        raise InsufficientDataError(
            f"tensor fit needs at least 6 weighted measurements, got {X.shape[0]}"
        )
    if np.linalg.matrix_rank(X) < 6:
        raise RankDeficientError("gradient directions do not determine a tensor")
    if not np.all(np.isfinite(y)):
        raise ValueError("signals contain NaN or Inf")
    logy = -np.log(np.clip(y, SIGNAL_FLOOR, 1.0))
    pinv = np.linalg.pinv(X)
    six = logy @ pinv.T
    return spd_repair(six_to_tensor(six))


def fit_tensor(y, scheme: GradientScheme) -> np.ndarray:
    return fit_tensors(np.asarray(y, dtype=float).ravel(), scheme)


def spd_logm(D) -> np.ndarray:
    """Matrix logarithm of SPD tensors through the eigendecomposition."""
    D = np.asarray(D, dtype=float)
    w, V = np.linalg.eigh(0.5 * (D + np.swapaxes(D, -1, -2)))
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise NumericDomainError("matrix logarithm needs a positive definite tensor")
    return np.einsum("...ij,...j,...kj->...ik", V, np.log(w), V)


def log_euclidean_distance(A, B) -> float:
    """``sqrt(trace((log A - log B)^2))``, the Frobenius norm of the log difference."""
    L = spd_logm(A) - spd_logm(B)
    return float(np.sqrt(np.sum(L * L)))


def voxel_similarity(A, B, mu: float = 3.0) -> float:
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    d = log_euclidean_distance(A, B)
    return float(np.exp(-mu * d * d))


def fa_md(D):
    """Fractional anisotropy and mean diffusivity from the eigenvalues."""
    lam = np.linalg.eigvalsh(np.asarray(D, dtype=float))
    md = lam.mean(axis=-1)
    num = np.sqrt(np.sum((lam - md[..., None]) ** 2, axis=-1))
    den = np.sqrt(np.sum(lam**2, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        fa = np.where(den > 0, np.sqrt(1.5) * num / np.where(den > 0, den, 1.0), 0.0)
    if np.ndim(fa) == 0:
        return float(fa), float(md)
    return fa, md
