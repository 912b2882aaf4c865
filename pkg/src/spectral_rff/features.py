"""Trigonometric feature maps and the kernels they induce.

Stationary map for an (n, D) input block X and an m-frequency bank:

    phi(X) = [cos(X W'), sin(X W')]                      (n, 2m)

with the induced kernel estimate K = (sigma_f^2 / m) phi phi'. The
nonstationary map sums two banks,

    phi(X) = [cos(X W1') + cos(X W2'), sin(X W1') + sin(X W2')]

and normalizes by 1/(4m); with W1 == W2 the cosine sum doubles every
entry and the extra factor of 4 cancels, recovering the stationary
kernel exactly. Closed-form kernels for the named spectral families are
provided as oracles for convergence and duality checks.
"""

import contextlib
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, kv

from .data import write_matrix_csv, write_pgm
from .errors import (DimensionMismatch, InvalidParams, ModeNormalizerMismatch,
                     UnsupportedSpec)
from .measures import GaussianSE, LaplacianCauchy, MaternT

STATIONARY = "stationary"
NONSTATIONARY = "nonstationary"

_dense_kernels_allowed = True


@contextlib.contextmanager
def forbid_dense_kernel():
    """Guard for tests: any n x n kernel construction inside raises."""
    global _dense_kernels_allowed
    _dense_kernels_allowed = False
    try:
        yield
    finally:
        _dense_kernels_allowed = True


def dense_kernel_gate():
    if not _dense_kernels_allowed:
        raise RuntimeError("dense kernel construction is forbidden in this context")


@dataclass(eq=False)
class FeatureMatrix:
    phi: np.ndarray  # (n, 2m)
    m: int
    mode: str


def _as_inputs(x, bank):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != bank.dim:
        raise DimensionMismatch(
            f"inputs have dimension {x.shape[1]}, bank has {bank.dim}")
    return x


def stationary_features(x, bank):
    if not bank.stationary:
        raise ValueError("stationary features need a stationary bank")
    x = _as_inputs(x, bank)
    p = x @ bank.omega1.T
    return FeatureMatrix(np.hstack([np.cos(p), np.sin(p)]), bank.m, STATIONARY)


def nonstationary_features(x, bank):
    x = _as_inputs(x, bank)
    p1 = x @ bank.omega1.T
    p2 = x @ bank.omega2.T
    return FeatureMatrix(np.hstack([np.cos(p1) + np.cos(p2),
                                    np.sin(p1) + np.sin(p2)]),
                         bank.m, NONSTATIONARY)


def features_for_mode(x, bank, mode):
    if mode == STATIONARY:
        return stationary_features(x, bank)
    if mode == NONSTATIONARY:
        return nonstationary_features(x, bank)
    raise ValueError(f"unknown feature mode {mode!r}")


def ridge_multiplier(m, mode):
    """Feature count entering the weight-space ridge: m or 4m."""
    if mode == STATIONARY:
        return float(m)
    if mode == NONSTATIONARY:
        return 4.0 * m
    raise ValueError(f"unknown feature mode {mode!r}")


@dataclass(frozen=True)
class KernelScale:
    """Signal variance plus the mode-dependent 1/m vs 1/(4m) normalizer."""

    sigma_f2: float
    mode: str

    def __post_init__(self):
        if not (np.isfinite(self.sigma_f2) and self.sigma_f2 > 0):
            raise InvalidParams("sigma_f2 must be finite and positive")
        if self.mode not in (STATIONARY, NONSTATIONARY):
            raise InvalidParams(f"unknown mode {self.mode!r}")

    def normalizer(self, m):
        return 1.0 / ridge_multiplier(m, self.mode)


def kernel_estimate(phi, scale):
    """n x n kernel induced by a feature block. Test/export scale only."""
    dense_kernel_gate()
    if scale.mode != phi.mode:
        raise ModeNormalizerMismatch(
            f"scale normalizer is for {scale.mode} features, phi is {phi.mode}")
    return (scale.sigma_f2 * scale.normalizer(phi.m)) * (phi.phi @ phi.phi.T)


def kernel_cross(phi_a, phi_b, scale):
    """Kernel block between two feature matrices built from one bank."""
    if phi_a.mode != phi_b.mode or phi_a.m != phi_b.m:
        raise ModeNormalizerMismatch("feature blocks disagree in mode or m")
    if scale.mode != phi_a.mode:
        raise ModeNormalizerMismatch(
            f"scale normalizer is for {scale.mode} features, phi is {phi_a.mode}")
    return (scale.sigma_f2 * scale.normalizer(phi_a.m)) * (phi_a.phi @ phi_b.phi.T)


def closed_form_kernel(spec, x1, x2):
    """Exact kernel dual to a named measure, evaluated at one pair."""
    return float(kernel_matrix(spec, np.atleast_2d(x1), np.atleast_2d(x2))[0, 0])


def kernel_matrix(spec, xa, xb):
    """Closed-form kernel matrix for SE, Laplacian or Matern duals."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    if xa.shape[1] != xb.shape[1]:
        raise DimensionMismatch("input blocks disagree in dimension")
    delta = xa[:, None, :] - xb[None, :, :]
    if isinstance(spec, GaussianSE):
        if spec.dim != xa.shape[1]:
            raise DimensionMismatch("spec dimension does not match inputs")
        z = delta / spec.lengthscales
        return np.exp(-0.5 * np.sum(z * z, axis=2))
    if isinstance(spec, LaplacianCauchy):
        if spec.dim != xa.shape[1]:
            raise DimensionMismatch("spec dimension does not match inputs")
        return np.exp(-np.sum(spec.scales * np.abs(delta), axis=2))
    if isinstance(spec, MaternT):
        lam, s = spec.smoothness, spec.scale
        r = np.sqrt(2.0 * lam) * np.sqrt(np.sum(delta * delta, axis=2)) / s
        out = np.ones_like(r)
        nz = r > 1e-12
        rnz = r[nz]
        log_c = (1.0 - lam) * np.log(2.0) - gammaln(lam)
        out[nz] = np.exp(log_c + lam * np.log(rnz)) * kv(lam, rnz)
        return out
    raise UnsupportedSpec(f"no closed-form kernel for {type(spec).__name__}")


def export_covariance(basepath, k):
    """Write a covariance matrix as <base>.csv and <base>.pgm."""
    write_matrix_csv(str(basepath) + ".csv", k)
    write_pgm(str(basepath) + ".pgm", k)
