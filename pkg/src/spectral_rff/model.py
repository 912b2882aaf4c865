"""Weight-space Gaussian process regression on trigonometric features.

For features phi (n x 2m) with prior weight variance s = sigma_f^2 / M
(M = m for the stationary map, 4m for the nonstationary one) the model

    y = phi w + eps,   w ~ N(0, s I),   eps ~ N(0, sigma_n^2 I)

has marginal covariance s phi phi' + sigma_n^2 I. All inference runs
through the 2m x 2m system

    A = phi' phi + r I,      r = M sigma_n^2 / sigma_f^2,

factored as A = R R' with R lower triangular. With alpha1 = R^-1 phi' y
and alpha2 = A^-1 phi' y the log marginal likelihood is

    L = -(|y|^2 - |alpha1|^2) / (2 sigma_n^2) - sum_i log R_ii
        + m log r - (n / 2) log(2 pi sigma_n^2)

and the posterior predictive at a feature row p is

    mean = p' alpha2,
    var  = sigma_n^2 (1 + |R^-1 p|^2),

which agree with dense conditioning on the induced kernel to rounding.
A dense O(n^3) path is kept alongside as the oracle for tests; nothing
in the fit/predict path ever materializes an n x n matrix.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import linalg
from .data import StandardizationStats
from .errors import DimensionMismatch, InvalidParams, SchemaMismatch
from .features import (NONSTATIONARY, STATIONARY, dense_kernel_gate,
                       features_for_mode, ridge_multiplier)
from .measures import bank_from_json_dict, bank_to_json_dict

MODEL_FORMAT_VERSION = 1

# Smallest noise variance the trainer may reach (standardized units) and
# the hard floor below which the dense oracle refuses to run.
SIGMA_N2_FLOOR = 1e-10
DIRECT_SIGMA_N2_MIN = 1e-12


@dataclass
class Hyperparams:
    log_sigma_f2: float
    log_sigma_n2: float

    @classmethod
    def from_variances(cls, sigma_f2, sigma_n2):
        if not (np.isfinite(sigma_f2) and sigma_f2 > 0):
            raise InvalidParams("sigma_f2 must be finite and positive")
        if not (np.isfinite(sigma_n2) and sigma_n2 > 0):
            raise InvalidParams("sigma_n2 must be finite and positive")
        return cls(float(np.log(sigma_f2)), float(np.log(sigma_n2)))

    @property
    def sigma_f2(self):
        return float(np.exp(self.log_sigma_f2))

    @property
    def sigma_n2(self):
        return float(np.exp(self.log_sigma_n2))


def ridge_term(m, mode, hyper):
    """r = M sigma_n^2 / sigma_f^2 with M = m or 4m by mode."""
    return ridge_multiplier(m, mode) * hyper.sigma_n2 / hyper.sigma_f2


@dataclass(eq=False)
class FitState:
    r: np.ndarray        # lower Cholesky factor of A, (2m, 2m)
    alpha1: np.ndarray   # R^-1 phi' y
    alpha2: np.ndarray   # A^-1 phi' y
    hyper: Hyperparams
    bank: object
    mode: str
    jitter: float = 0.0
    standardization: StandardizationStats = None
    input_columns: list = None


def reduced_core(phi, y, hyper):
    """Factor the reduced system and evaluate the log marginal likelihood.

    Returns a dict with r (Cholesky factor), alpha1, alpha2, ridge,
    jitter and lml; shared by the public entry points and the trainer.
    """
    y = np.asarray(y, dtype=float).ravel()
    mat = phi.phi
    n = mat.shape[0]
    if y.shape[0] != n:
        raise DimensionMismatch(f"{n} feature rows but {y.shape[0]} targets")
    m = phi.m
    ridge = ridge_term(m, phi.mode, hyper)
    a = linalg.gram(mat)
    a[np.diag_indices_from(a)] += ridge
    r, jitter = linalg.cholesky(a)
    b = mat.T @ y
    alpha1 = linalg.solve_lower(r, b)
    alpha2 = linalg.solve_upper(r.T, alpha1)
    sigma_n2 = hyper.sigma_n2
    yy = float(y @ y)
    a1a1 = float(alpha1 @ alpha1)
    lml = (-(yy - a1a1) / (2.0 * sigma_n2)
           - float(np.sum(np.log(np.diagonal(r))))
           + m * np.log(ridge)
           - 0.5 * n * np.log(2.0 * np.pi * sigma_n2))
    return {"r": r, "alpha1": alpha1, "alpha2": alpha2, "ridge": ridge,
            "jitter": jitter, "lml": float(lml), "yy": yy}


def fit_state(phi, y, hyper, bank, standardization=None, input_columns=None):
    """Solve the reduced system once and package everything needed to predict."""
    core = reduced_core(phi, y, hyper)
    return FitState(core["r"], core["alpha1"], core["alpha2"], hyper, bank,
                    phi.mode, core["jitter"], standardization, input_columns)


def log_marginal_likelihood_reduced(phi, y, hyper):
    """O(n m^2) log marginal likelihood through the 2m x 2m system."""
    return reduced_core(phi, y, hyper)["lml"]


def log_marginal_likelihood_direct(k, y, sigma_n2):
    """Dense O(n^3) oracle: log N(y; 0, K + sigma_n^2 I).

    Kept for tests and small exports; guarded against large n and
    degenerate noise.
    """
    dense_kernel_gate()
    k = np.asarray(k, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    if k.shape != (n, n):
        raise DimensionMismatch(f"kernel shape {k.shape} does not match n={n}")
    if n > 2000:
        raise InvalidParams("dense path is limited to n <= 2000")
    if not sigma_n2 >= DIRECT_SIGMA_N2_MIN:
        raise InvalidParams(f"sigma_n2 must be >= {DIRECT_SIGMA_N2_MIN}")
    cov = k + sigma_n2 * np.eye(n)
    root, _ = linalg.cholesky(cov, jitter_ladder=(0.0,))
    v = linalg.solve_lower(root, y)
    return float(-0.5 * (v @ v) - np.sum(np.log(np.diagonal(root)))
                 - 0.5 * n * np.log(2.0 * np.pi))


def dense_conditioning(k_train, k_cross, k_star_diag, y, sigma_n2):
    """Dense GP conditioning oracle for the predictive mean and variance.

    k_cross is (n, n_star); k_star_diag holds k(x*, x*). The returned
    variance includes the observation noise, matching predict().
    """
    dense_kernel_gate()
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    cov = np.asarray(k_train, dtype=float) + sigma_n2 * np.eye(n)
    root, _ = linalg.cholesky(cov, jitter_ladder=(0.0,))
    v = linalg.solve_lower(root, np.asarray(k_cross, dtype=float))
    mean = v.T @ linalg.solve_lower(root, y)
    var = sigma_n2 + np.asarray(k_star_diag, dtype=float) - np.sum(v * v, axis=0)
    return mean, var


def predict(state, x_star):
    """Posterior predictive mean and variance at new inputs.

    Runs in O(n_star m^2); the variance solves one triangular system per
    point (vectorized over points).
    """
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    if x_star.shape[1] != state.bank.dim:
        raise DimensionMismatch(
            f"inputs have dimension {x_star.shape[1]}, model has {state.bank.dim}")
    if x_star.shape[0] == 0:
        return np.empty(0), np.empty(0)
    phi = features_for_mode(x_star, state.bank, state.mode).phi
    mean = phi @ state.alpha2
    v = linalg.solve_lower(state.r, phi.T)
    var = state.hyper.sigma_n2 * (1.0 + np.sum(v * v, axis=0))
    return mean, var


def _encode_array(a):
    from .measures import _encode_array as enc
    return enc(a)


def _decode_array(obj):
    from .measures import _decode_array as dec
    return dec(obj)


def save_model(path, state):
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "mode": state.mode,
        "bank": bank_to_json_dict(state.bank),
        "hyperparams": {"log_sigma_f2": state.hyper.log_sigma_f2,
                        "log_sigma_n2": state.hyper.log_sigma_n2},
        "fit": {"r": _encode_array(state.r),
                "alpha1": _encode_array(state.alpha1),
                "alpha2": _encode_array(state.alpha2),
                "jitter": state.jitter},
        "standardization": None,
        "input_columns": list(state.input_columns) if state.input_columns else None,
    }
    if state.standardization is not None:
        st = state.standardization
        doc["standardization"] = {
            "input_mean": list(map(float, st.input_mean)),
            "input_std": list(map(float, st.input_std)),
            "output_mean": st.output_mean,
            "output_std": st.output_std,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise SchemaMismatch(f"unsupported model format version {version!r}")
    mode = doc["mode"]
    if mode not in (STATIONARY, NONSTATIONARY):
        raise SchemaMismatch(f"unknown mode {mode!r}")
    stats = None
    if doc.get("standardization"):
        st = doc["standardization"]
        stats = StandardizationStats(np.asarray(st["input_mean"], dtype=float),
                                     np.asarray(st["input_std"], dtype=float),
                                     float(st["output_mean"]),
                                     float(st["output_std"]))
    hyper = Hyperparams(float(doc["hyperparams"]["log_sigma_f2"]),
                        float(doc["hyperparams"]["log_sigma_n2"]))
    fit = doc["fit"]
    return FitState(_decode_array(fit["r"]),
                    _decode_array(fit["alpha1"]).ravel(),
                    _decode_array(fit["alpha2"]).ravel(),
                    hyper,
                    bank_from_json_dict(doc["bank"]),
                    mode,
                    float(fit.get("jitter", 0.0)),
                    stats,
                    doc.get("input_columns"))
