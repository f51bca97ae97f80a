"""Nonnegative weighted-l1 least squares for one voxel.

The weighted problem ``min_{f >= 0} ||G f - y||^2 + beta ||C f||_1`` is
rewritten with ``g = C f`` and ``Gt = G C^-1`` as
``min_{g >= 0} ||Gt g - y||^2 + beta * sum(g)``, a smooth quadratic program
on the nonnegative orthant. ``f = g / C`` is recovered afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np

__all__ = [
    "SENTINEL_THRESHOLD",
    "SolverResult",
    "extract_fos",
    "fo_indices",
    "kkt_residual",
    "normalize",
    "solve_nnl1",
    "solve_weighted_l1",
]

log = logging.getLogger(__name__)

SENTINEL_THRESHOLD = 1e-12


@dataclass
class SolverResult:
    f: np.ndarray
    g: np.ndarray
    objective: float
    kkt: float
    iterations: int
    converged: bool


def _check_inputs(G, y, beta):
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if G.ndim != 2 or G.shape[0] != y.shape[0]:
        raise ValueError(f"dictionary shape {G.shape} does not match {y.shape[0]} signals")
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(y))):
        raise ValueError("dictionary or signal contains NaN or Inf")
    if not (np.isfinite(beta) and beta > 0):
        raise ValueError(f"beta must be positive, got {beta}")
    return G, y


def kkt_residual(gram, corr, g, beta) -> float:
    """Largest KKT violation of ``g^T H g - 2 b^T g + beta sum(g)`` over ``g >= 0``."""
    grad = 2.0 * (gram @ g - corr) + beta
    pos = g > 0
    viol = np.where(pos, np.abs(grad), np.maximum(-grad, 0.0))
    return float(viol.max()) if viol.size else 0.0


def _objective(gram, corr, yy, g, beta):
    return float(g @ (gram @ g) - 2.0 * corr @ g + yy + beta * g.sum())


@numba.njit(cache=True, nogil=True)
def _active_set_kernel(gram, corr, c, yy, beta, tol, max_iter, debug):
    """Lawson-Hanson style active set on the Gram form.

    ``gram`` and ``corr`` are unweighted; the weighted Gram matrix entries
    ``gram[i, j] / (c[i] c[j])`` are formed on demand. Each outer step frees
    the coordinate with the most negative gradient, then solves the
    stationarity system on the free set, backtracking onto the orthant
    boundary whenever a free coordinate would turn nonpositive.
    """
    n = corr.shape[0]
    g = np.zeros(n)
    free = np.zeros(n, dtype=np.bool_)
    blocked = np.zeros(n, dtype=np.bool_)
    grad = np.empty(n)
    rhs = corr / c - 0.5 * beta
    last = np.inf
    it = 0
    converged = False
    while it < max_iter:
        # gradient 2 (H g - b) + beta, H g accumulated over the free set
        best = -tol
        j = -1
        nz = np.flatnonzero(g)
        fz = g[nz] / c[nz]
        for i in range(n):
            acc = 0.0
            for a in range(nz.shape[0]):
                acc += gram[i, nz[a]] * fz[a]
            grad[i] = 2.0 * (acc - corr[i]) / c[i] + beta
            if not free[i] and not blocked[i] and grad[i] < best:
                best = grad[i]
                j = i
        if j < 0:
            converged = True
            break
        free[j] = True
        while it < max_iter:
            it += 1
            idx = np.flatnonzero(free)
            m = idx.shape[0]
            H = np.empty((m, m))
            r = np.empty(m)
            for a in range(m):
                r[a] = rhs[idx[a]]
                for b in range(m):
                    H[a, b] = gram[idx[a], idx[b]] / (c[idx[a]] * c[idx[b]])
            s = np.linalg.solve(H, r)
            ok = True
            for a in range(m):
                if not s[a] > 0.0:
                    ok = False
            if ok:
                for a in range(m):
                    g[idx[a]] = s[a]
                blocked[:] = False
                break
            step = np.inf
            kk = -1
            nneg = 0
            for a in range(m):
                if not s[a] > 0.0:
                    nneg += 1
                    ga = g[idx[a]]
                    ratio = ga / (ga - s[a])
                    if ratio < step:
                        step = ratio
                        kk = a
            if step <= 0.0 and idx[kk] == j and g[j] == 0.0 and nneg == 1:
                # entering coordinate cannot move: numerically degenerate
                free[j] = False
                blocked[j] = True
                break
            for a in range(m):
                q = idx[a]
                v = g[q] + step * (s[a] - g[q])
                if a == kk or v <= 0.0:
                    g[q] = 0.0
                    free[q] = False
                else:
                    g[q] = v
        if debug:
            cur = _objective_weighted(gram, corr, c, yy, g, beta)
            if cur > last + 1e-12 * max(1.0, abs(last)):
                raise AssertionError("active-set objective increased")
            last = cur
    return g, it, converged


@numba.njit(cache=True)
def _objective_weighted(gram, corr, c, yy, g, beta):
    n = g.shape[0]
    quad = 0.0
    lin = 0.0
    total = 0.0
    for i in range(n):
        if g[i] == 0.0:
            continue
        fi = g[i] / c[i]
        lin += corr[i] * fi
        total += g[i]
        for q in range(n):
            if g[q] != 0.0:
                quad += fi * gram[i, q] * (g[q] / c[q])
    return quad - 2.0 * lin + yy + beta * total


def _power_lipschitz(gram, iters=50):
    v = np.ones(gram.shape[0]) / np.sqrt(gram.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = gram @ v
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    # small safety margin over the power-iteration estimate
    return 2.0 * lam * 1.01


def _apg(gram, corr, yy, beta, tol, max_iter, debug):
    """Accelerated projected gradient with restart on objective increase."""
    L = _power_lipschitz(gram)
    n = len(corr)
    g = np.zeros(n)
    if L == 0:
        return g, 0, True
    z = g.copy()
    t = 1.0
    obj = _objective(gram, corr, yy, g, beta)
    for it in range(1, max_iter + 1):
        grad = 2.0 * (gram @ z - corr) + beta
        g_new = np.maximum(z - grad / L, 0.0)
        obj_new = _objective(gram, corr, yy, g_new, beta)
        if obj_new > obj:
            # restart from the last accepted point with a plain projected step
            z = g
            t = 1.0
            grad = 2.0 * (gram @ z - corr) + beta
            g_new = np.maximum(z - grad / L, 0.0)
            obj_new = _objective(gram, corr, yy, g_new, beta)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = g_new + ((t - 1.0) / t_new) * (g_new - g)
        if debug:
            assert obj_new <= obj + 1e-12 * max(1.0, abs(obj)), (obj_new, obj)
        g, t, obj = g_new, t_new, obj_new
        if kkt_residual(gram, corr, g, beta) <= tol:
            return g, it, True
    return g, max_iter, False


def _check_weights(C, n):
    c = np.ones(n) if C is None else np.asarray(C, dtype=float).ravel()
    if c.shape != (n,) or not np.all(np.isfinite(c)) or np.any(c <= 0):
        raise ValueError("weights must be finite, positive and one per basis column")
    return c


def _solve(G, y, c, beta, tol, max_iter, method, gram, debug):
    gram = G.T @ G if gram is None else gram
    corr = G.T @ y
    yy = float(y @ y)
    if method == "active-set":
        g, it, converged = _active_set_kernel(
            np.ascontiguousarray(gram, dtype=float), corr, c, yy, float(beta),
            float(tol), int(max_iter), bool(debug),
        )
    elif method == "apg":
        g, it, converged = _apg(gram / np.outer(c, c), corr / c, yy, beta, tol, max_iter, debug)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    f = g / c
    nz = np.flatnonzero(g)
    gf = gram[:, nz] @ f[nz]
    grad = 2.0 * (gf - corr) / c + beta
    kkt = float(np.where(g > 0, np.abs(grad), np.maximum(-grad, 0.0)).max())
    obj = float(f[nz] @ gf[nz] - 2.0 * corr @ f + yy + beta * g.sum())
    converged = bool(converged) and kkt <= tol
    if not converged:
        log.debug("solver stopped after %d iterations, KKT residual %.3g", it, kkt)
    return SolverResult(f, g, obj, kkt, int(it), converged)


def solve_nnl1(
    A, y, beta=0.5, tol=1e-6, max_iter=2000, method="active-set", gram=None, debug=False
) -> SolverResult:
    """Minimize ``||A g - y||^2 + beta * sum(g)`` subject to ``g >= 0``.

    ``gram`` may carry a precomputed ``A.T @ A``.
    """
    A, y = _check_inputs(A, y, beta)
    return _solve(A, y, np.ones(A.shape[1]), beta, tol, max_iter, method, gram, debug)


def solve_weighted_l1(
    G,
    y,
    C=None,
    beta=0.5,
    tol=1e-6,
    max_iter=2000,
    method="active-set",
    gram=None,
    debug=False,
) -> SolverResult:
    """Solve ``min_{f >= 0} ||G f - y||^2 + beta ||diag(C) f||_1``.

    Parameters
    ----------
    G : ndarray, shape (K, N)
        Attenuation dictionary.
    y : ndarray, shape (K,)
        Normalized signals.
    C : ndarray, shape (N,), optional
        Positive diagonal weights; ``None`` means all ones.
    beta : float
        Regularization strength, positive.
    tol : float
        Bound on the KKT residual of the substituted problem.
    max_iter : int
        Iteration cap. On exhaustion the last iterate is returned with
        ``converged=False``.
    method : {"active-set", "apg"}
    gram : ndarray, shape (N, N), optional
        Precomputed ``G.T @ G``, shared across voxels.
    debug : bool
        Assert that the objective never increases between iterates.

    Returns
    -------
    SolverResult
        ``f`` is the unnormalized mixture vector and ``g = C f`` the
        substituted variable. ``objective`` is the common value of both
        parametrizations; ``kkt`` refers to the substituted problem.
    """
    G, y = _check_inputs(G, y, beta)
    c = _check_weights(C, G.shape[1])
    return _solve(G, y, c, beta, tol, max_iter, method, gram, debug)


def normalize(f) -> np.ndarray:
    """Scale to unit sum; sums at or below 1e-12 give the all-zero sentinel."""
    f = np.asarray(f, dtype=float)
    s = f.sum()
    if s > SENTINEL_THRESHOLD:
        return f / s
    return np.zeros_like(f)


def fo_indices(f, f_th=0.1) -> np.ndarray:
    """Basis indices with fraction strictly above ``f_th``."""
    return np.flatnonzero(np.asarray(f) > f_th)


def extract_fos(f, basis, f_th=0.1) -> np.ndarray:
    """FO set ``{v_i : f_i > f_th}`` as an ``(n, 3)`` array."""
    return basis.directions[fo_indices(f, f_th)]
