"""Dense linear algebra and RNG primitives used by every other module.

Everything runs in float64. Random draws go through numpy's PCG64
Generator, so a seed pins the downstream pipeline bit for bit on a given
platform and numpy version.
"""

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, FactorizationFailed, NonSquare, NonSymmetric

# Jitter rungs tried in order, each scaled by mean(diag A).
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)

SYMMETRY_TOL = 1e-10


def seeded_rng(seed):
    """Deterministic PCG64-backed Generator for the given integer seed."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed, n):
    """n statistically independent child generators derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n)]


def standard_normal(rng, rows, cols):
    """rows x cols matrix of i.i.d. N(0, 1) draws from ``rng``."""
    if rows < 1 or cols < 1:
        raise DimensionMismatch(f"requested empty sample shape ({rows}, {cols})")
    return rng.standard_normal((rows, cols))


def cholesky(a, jitter_ladder=JITTER_LADDER):
    """Lower-triangular R with R @ R.T = a + jitter * I.

    The jitter is the smallest rung of ``jitter_ladder`` (scaled by the
    mean diagonal of ``a``) that lets the factorization succeed.

    Returns
    -------
    (R, jitter_used) : (ndarray, float)
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {a.shape}")
    if a.size and not np.all(np.isfinite(a)):
        raise FactorizationFailed("matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if a.size and float(np.max(np.abs(a - a.T))) > SYMMETRY_TOL * scale:
        raise NonSymmetric("matrix is not symmetric within tolerance")
    diag_scale = float(np.mean(np.diagonal(a))) if a.size else 0.0
    if diag_scale <= 0.0:
        diag_scale = 0.0
    for rung in jitter_ladder:
        jitter = rung * diag_scale
        target = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
        try:
            return np.linalg.cholesky(target), jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailed(
        f"Cholesky failed for all jitter rungs {tuple(jitter_ladder)}")


def _check_triangular(r, lower):
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise NonSquare(f"triangular factor must be square, got shape {r.shape}")
    diag = np.diagonal(r)
    if not np.all(diag > 0.0):
        raise ValueError("triangular factor must have a strictly positive diagonal")
    off = np.triu(r, 1) if lower else np.tril(r, -1)
    if np.any(off != 0.0):
        kind = "upper" if lower else "lower"
        raise ValueError(f"{kind} part of triangular factor must be zero")
    return r


def solve_lower(r, b):
    """Solve R x = b for lower-triangular R by forward substitution."""
    r = _check_triangular(r, lower=True)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != r.shape[0]:
        raise DimensionMismatch(
            f"rhs has leading dimension {b.shape[0]}, factor is {r.shape[0]}")
    return solve_triangular(r, b, lower=True, check_finite=False)


def solve_upper(rt, b):
    """Solve R.T x = b where ``rt`` is the transpose of a lower factor."""
    rt = _check_triangular(rt, lower=False)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != rt.shape[0]:
        raise DimensionMismatch(
            f"rhs has leading dimension {b.shape[0]}, factor is {rt.shape[0]}")
    return solve_triangular(rt, b, lower=False, check_finite=False)


def gram(phi):
    """phi.T @ phi for a tall-and-skinny feature matrix."""
    phi = np.asarray(phi, dtype=float)
    return phi.T @ phi
