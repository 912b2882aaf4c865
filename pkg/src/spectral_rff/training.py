"""Marginal-likelihood training of frequencies and hyperparameters.

The objective is the reduced log marginal likelihood L from the model
module, maximized by ADAM (as descent on -L) over log sigma_f^2,
log sigma_n^2 and, depending on the mode, the frequency banks.

Gradients are analytic. Writing b = phi' y, A = phi' phi + r I and
G = A^-1, the derivative of L with respect to the feature matrix is

    phibar = (y - phi alpha2) alpha2' / sigma_n^2 - phi G

and chains through the trig maps to the frequencies; the two
log-variance derivatives are

    dL/du = r |alpha2|^2 / (2 sigma_n^2) + r tr(G) / 2 - m
    dL/dv = (|y|^2 - |alpha1|^2) / (2 sigma_n^2)
            - r |alpha2|^2 / (2 sigma_n^2) - r tr(G) / 2 + m - n / 2

with u = log sigma_f^2, v = log sigma_n^2 (r depends on u and v, which
is where the trace and |alpha2| terms come from). Every formula is
checked against central finite differences in the test suite.

Gaussian dropout multiplies each frequency entry by an independent
N(1, sigma_p^2) draw, fresh at every step; the noisy bank is used for
the forward value and the gradient, the clean bank receives the update,
and nothing noisy ever reaches validation scoring or the returned fit.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import linalg, model
from .data import Dataset
from .errors import DegenerateSplit, NonFiniteLoss
from .features import (NONSTATIONARY, STATIONARY, FeatureMatrix,
                       features_for_mode, ridge_multiplier)
from .measures import (FrequencyBank, GaussianSE, sample_nonstationary,
                       sample_stationary)

STATIONARY_FIXED = "stationary_fixed"
STATIONARY_LEARNED = "stationary_learned"
NONSTATIONARY_LEARNED = "nonstationary_learned"
MODES = (STATIONARY_FIXED, STATIONARY_LEARNED, NONSTATIONARY_LEARNED)

# exp() overflows double precision just above 709; beyond this the
# objective is treated as diverged.
_LOG_BOUND = 700.0


@dataclass
class TrainConfig:
    mode: str = NONSTATIONARY_LEARNED
    m: int = 100
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 500
    patience: int = 5
    eval_every: int = 10
    validation_fraction: float = 0.1
    dropout_sigma_p: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie in [0, 1)")
        if not self.adam_eps > 0:
            raise ValueError("adam_eps must be positive")
        if self.max_steps < 1 or self.patience < 1 or self.eval_every < 1:
            raise ValueError("max_steps, patience and eval_every must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.dropout_sigma_p < 0:
            raise ValueError("dropout_sigma_p must be nonnegative")

    @property
    def feature_mode(self):
        return NONSTATIONARY if self.mode == NONSTATIONARY_LEARNED else STATIONARY


@dataclass
class TrainTrace:
    train_neg_lml: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    val_history: list = field(default_factory=list)    # (step, val_neg_lml)
    jitter_events: list = field(default_factory=list)  # (step, jitter)
    stop_reason: str = None

    def to_csv(self, path):
        val_at = dict(self.val_history)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("step,train_neg_lml,val_neg_lml,wall_ms\n")
            for i, (tr, ms) in enumerate(zip(self.train_neg_lml, self.wall_ms), start=1):
                val = format(val_at[i], ".17g") if i in val_at else ""
                fh.write(f"{i},{format(tr, '.17g')},{val},{ms:.3f}\n")


class EarlyStopper:
    """Track a to-be-minimized score; stop after `patience` flat evals."""

    def __init__(self, patience):
        self.patience = patience
        self.best = math.inf
        self.bad_evals = 0

    def update(self, score):
        """Record one evaluation; returns True when it improved the best."""
        if score < self.best:
            self.best = score
            self.bad_evals = 0
            return True
        self.bad_evals += 1
        return False

    @property
    def should_stop(self):
        return self.bad_evals >= self.patience


def apply_gaussian_dropout(bank, sigma_p, rng):
    """Multiply every frequency entry by an independent N(1, sigma_p^2) draw.

    sigma_p = 0 returns the input bank unchanged (bitwise). A stationary
    bank stays stationary: its single frequency set gets a single draw.
    """
    if sigma_p == 0.0:
        return bank
    noise1 = 1.0 + sigma_p * rng.standard_normal(bank.omega1.shape)
    if bank.stationary:
        return FrequencyBank(bank.omega1 * noise1, stationary=True)
    noise2 = 1.0 + sigma_p * rng.standard_normal(bank.omega2.shape)
    return FrequencyBank(bank.omega1 * noise1, bank.omega2 * noise2,
                         stationary=False)


def median_heuristic_lengthscales(x, max_rows=1000):
    """Per-dimension median of pairwise absolute differences.

    Rows are subsampled with an even stride above ``max_rows`` so the
    estimate stays deterministic and O(max_rows^2).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] > max_rows:
        stride = int(np.ceil(x.shape[0] / max_rows))
        x = x[::stride]
    out = np.empty(x.shape[1])
    for d in range(x.shape[1]):
        col = x[:, d]
        dist = np.abs(col[:, None] - col[None, :])
        dist = dist[np.triu_indices_from(dist, k=1)]
        med = float(np.median(dist)) if dist.size else 0.0
        out[d] = med if med > 0 else 1.0
    return out


def lml_gradient(x, y, bank, hyper, mode):
    """Reduced log marginal likelihood and its analytic gradients.

    Returns (lml, grads, info). ``grads`` has log_sigma_f2 and
    log_sigma_n2 entries always, plus omega (stationary_learned) or
    omega1/omega2 (nonstationary_learned); stationary_fixed carries no
    frequency gradients at all. ``info`` reports the jitter used.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if mode not in MODES:
        raise ValueError(f"unknown training mode {mode!r}")
    m = bank.m
    if mode == NONSTATIONARY_LEARNED:
        p1 = x @ bank.omega1.T
        p2 = x @ bank.omega2.T
        c1, s1 = np.cos(p1), np.sin(p1)
        c2, s2 = np.cos(p2), np.sin(p2)
        phi_arr = np.hstack([c1 + c2, s1 + s2])
        fmode = NONSTATIONARY
    else:
        if not bank.stationary:
            raise ValueError("stationary modes need a stationary bank")
        p = x @ bank.omega1.T
        c, s = np.cos(p), np.sin(p)
        phi_arr = np.hstack([c, s])
        fmode = STATIONARY
    phi = FeatureMatrix(phi_arr, m, fmode)
    core = model.reduced_core(phi, y, hyper)
    r_chol, alpha1, alpha2 = core["r"], core["alpha1"], core["alpha2"]
    ridge, sigma_n2 = core["ridge"], hyper.sigma_n2
    n = y.shape[0]

    rinv = solve_triangular(r_chol, np.eye(2 * m), lower=True, check_finite=False)
    tr_g = float(np.sum(rinv * rinv))
    a1_sq = float(alpha1 @ alpha1)
    a2_sq = float(alpha2 @ alpha2)
    grads = {
        "log_sigma_f2": ridge * a2_sq / (2.0 * sigma_n2) + 0.5 * ridge * tr_g - m,
        "log_sigma_n2": ((core["yy"] - a1_sq) / (2.0 * sigma_n2)
                         - ridge * a2_sq / (2.0 * sigma_n2)
                         - 0.5 * ridge * tr_g + m - 0.5 * n),
    }
    if mode != STATIONARY_FIXED:
        w = linalg.solve_lower(r_chol, phi_arr.T)
        phi_g = linalg.solve_upper(r_chol.T, w).T
        resid = y - phi_arr @ alpha2
        phibar = np.outer(resid, alpha2) / sigma_n2 - phi_g
        cbar, sbar = phibar[:, :m], phibar[:, m:]
        if mode == STATIONARY_LEARNED:
            grads["omega"] = (sbar * c - cbar * s).T @ x
        else:
            grads["omega1"] = (sbar * c1 - cbar * s1).T @ x
            grads["omega2"] = (sbar * c2 - cbar * s2).T @ x
    return core["lml"], grads, {"jitter": core["jitter"]}


class _FixedBankObjective:
    """Hyperparameter-only objective for a frozen feature matrix.

    One eigendecomposition G = Q diag(lam) Q' of phi' phi makes each
    step O(m): with btilde = Q' phi' y and d = lam + r,

        |alpha1|^2 = sum btilde^2 / d     log|A| = sum log d
        |alpha2|^2 = sum btilde^2 / d^2   tr A^-1 = sum 1 / d.
    """

    def __init__(self, x, y, bank, fmode):
        phi = features_for_mode(x, bank, fmode).phi
        lam, q = np.linalg.eigh(linalg.gram(phi))
        self.lam = np.clip(lam, 0.0, None)
        self.btilde = q.T @ (phi.T @ y)
        self.yy = float(y @ y)
        self.n = y.shape[0]
        self.m = bank.m
        self.mult = ridge_multiplier(bank.m, fmode)

    def value_and_grads(self, hyper):
        sigma_n2 = hyper.sigma_n2
        ridge = self.mult * sigma_n2 / hyper.sigma_f2
        d = self.lam + ridge
        if np.any(d <= 0.0):
            return -math.inf, None
        b2 = self.btilde * self.btilde
        a1_sq = float(np.sum(b2 / d))
        a2_sq = float(np.sum(b2 / (d * d)))
        tr_g = float(np.sum(1.0 / d))
        lml = (-(self.yy - a1_sq) / (2.0 * sigma_n2)
               - 0.5 * float(np.sum(np.log(d)))
               + self.m * math.log(ridge)
               - 0.5 * self.n * math.log(2.0 * math.pi * sigma_n2))
        grads = {
            "log_sigma_f2": ridge * a2_sq / (2.0 * sigma_n2) + 0.5 * ridge * tr_g - self.m,
            "log_sigma_n2": ((self.yy - a1_sq) / (2.0 * sigma_n2)
                             - ridge * a2_sq / (2.0 * sigma_n2)
                             - 0.5 * ridge * tr_g + self.m - 0.5 * self.n),
        }
        return lml, grads

    def value(self, hyper):
        return self.value_and_grads(hyper)[0]


@dataclass
class AdamState:
    t: int
    m1: dict
    m2: dict


def adam_init(params):
    return AdamState(0,
                     {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()},
                     {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()})


def adam_step(params, loss_grads, state, config):
    """One bias-corrected ADAM descent step on the given loss gradients."""
    t = state.t + 1
    c1 = 1.0 - config.adam_beta1 ** t
    c2 = 1.0 - config.adam_beta2 ** t
    new_params, m1, m2 = {}, {}, {}
    for key, p in params.items():
        g = np.asarray(loss_grads[key], dtype=float)
        m1[key] = config.adam_beta1 * state.m1[key] + (1.0 - config.adam_beta1) * g
        m2[key] = config.adam_beta2 * state.m2[key] + (1.0 - config.adam_beta2) * (g * g)
        step = config.learning_rate * (m1[key] / c1) / (np.sqrt(m2[key] / c2) + config.adam_eps)
        new_params[key] = np.asarray(p, dtype=float) - step
    return new_params, AdamState(t, m1, m2)


def _initial_bank(spec_init, x, config, rng):
    d = x.shape[1]
    if isinstance(spec_init, FrequencyBank):
        bank = spec_init
        if config.mode == NONSTATIONARY_LEARNED and bank.stationary:
            return FrequencyBank(bank.omega1.copy(), bank.omega1.copy(),
                                 stationary=False)
        if config.mode != NONSTATIONARY_LEARNED and not bank.stationary:
            raise ValueError("stationary modes need a stationary initial bank")
        return bank.copy()
    spec = spec_init
    if spec is None:
        spec = GaussianSE(median_heuristic_lengthscales(x))
    if config.mode == NONSTATIONARY_LEARNED:
        return sample_nonstationary(spec, spec, config.m, d, rng)
    return sample_stationary(spec, config.m, d, rng)


def _bank_from_params(params, template, mode):
    if mode == STATIONARY_FIXED:
        return template
    if mode == STATIONARY_LEARNED:
        return FrequencyBank(np.array(params["omega"]), stationary=True)
    return FrequencyBank(np.array(params["omega1"]), np.array(params["omega2"]),
                         stationary=False)


def _check_hyper_params(params, trace):
    for key in ("log_sigma_f2", "log_sigma_n2"):
        v = float(params[key])
        if not math.isfinite(v) or abs(v) > _LOG_BOUND:
            raise NonFiniteLoss(f"{key} diverged to {v}", trace)
    # the ridge is exp(v - u) up to the feature count; its exponent must
    # stay representable too, or the factorization sees inf
    gap = float(params["log_sigma_n2"]) - float(params["log_sigma_f2"])
    if abs(gap) > _LOG_BOUND:
        raise NonFiniteLoss(f"noise-to-signal log ratio diverged to {gap}", trace)


def train(dataset, config, spec_init=None):
    """Fit frequencies and hyperparameters on a standardized dataset.

    A validation fraction of the rows is held out for early stopping on
    the validation negative log marginal likelihood, scored every
    ``eval_every`` steps with dropout disabled. The returned FitState is
    rebuilt from the best-scoring (not the last) parameters over all
    rows of ``dataset``; the trace records per-step objective values,
    wall time, validation history, jitter events and the stop reason.

    Deterministic given (dataset, config, spec_init).
    """
    if not isinstance(dataset, Dataset) or not dataset.standardized:
        raise ValueError("train expects a standardized Dataset")
    rng_split, rng_init, rng_noise = linalg.spawn_rngs(config.seed, 3)
    n = dataset.n
    n_val = max(1, int(round(config.validation_fraction * n)))
    if n - n_val < 2:
        raise DegenerateSplit(f"validation fraction {config.validation_fraction} "
                              f"leaves {n - n_val} training rows")
    perm = rng_split.permutation(n)
    val_rows, train_rows = perm[:n_val], perm[n_val:]
    x_tr, y_tr = dataset.x[train_rows], dataset.y[train_rows]
    x_val, y_val = dataset.x[val_rows], dataset.y[val_rows]

    bank0 = _initial_bank(spec_init, x_tr, config, rng_init)
    var_y = float(y_tr.var())
    if not var_y > 0:
        var_y = 1.0
    hyper = model.Hyperparams.from_variances(var_y, 0.1 * var_y)

    params = {"log_sigma_f2": hyper.log_sigma_f2,
              "log_sigma_n2": hyper.log_sigma_n2}
    if config.mode == STATIONARY_LEARNED:
        params["omega"] = bank0.omega1.copy()
    elif config.mode == NONSTATIONARY_LEARNED:
        params["omega1"] = bank0.omega1.copy()
        params["omega2"] = bank0.omega2.copy()
    adam_state = adam_init(params)

    fixed_fast = config.mode == STATIONARY_FIXED and config.dropout_sigma_p == 0.0
    if fixed_fast:
        train_obj = _FixedBankObjective(x_tr, y_tr, bank0, config.feature_mode)
        val_obj = _FixedBankObjective(x_val, y_val, bank0, config.feature_mode)

    trace = TrainTrace()
    stopper = EarlyStopper(config.patience)
    best_params = None
    log_floor = math.log(model.SIGMA_N2_FLOOR)
    trace.stop_reason = "max_steps"

    for step in range(1, config.max_steps + 1):
        t0 = time.perf_counter()
        _check_hyper_params(params, trace)
        hyper = model.Hyperparams(float(params["log_sigma_f2"]),
                                  float(params["log_sigma_n2"]))
        bank = _bank_from_params(params, bank0, config.mode)
        if fixed_fast:
            value, lml_grads = train_obj.value_and_grads(hyper)
            jitter = 0.0
        else:
            noisy = apply_gaussian_dropout(bank, config.dropout_sigma_p, rng_noise)
            value, lml_grads, info = lml_gradient(x_tr, y_tr, noisy, hyper, config.mode)
            jitter = info["jitter"]
        if not math.isfinite(value):
            trace.train_neg_lml.append(math.inf)
            trace.wall_ms.append((time.perf_counter() - t0) * 1e3)
            raise NonFiniteLoss(f"objective became non-finite at step {step}", trace)
        if any(not np.all(np.isfinite(g)) for g in lml_grads.values()):
            trace.train_neg_lml.append(-value)
            trace.wall_ms.append((time.perf_counter() - t0) * 1e3)
            raise NonFiniteLoss(f"gradient became non-finite at step {step}", trace)
        trace.train_neg_lml.append(-value)
        if jitter > 0.0:
            trace.jitter_events.append((step, jitter))

        loss_grads = {k: -np.asarray(g, dtype=float) for k, g in lml_grads.items()}
        params, adam_state = adam_step(params, loss_grads, adam_state, config)
        params["log_sigma_f2"] = float(params["log_sigma_f2"])
        params["log_sigma_n2"] = max(float(params["log_sigma_n2"]), log_floor)

        if step % config.eval_every == 0:
            try:
                _check_hyper_params(params, trace)
                hyper_now = model.Hyperparams(float(params["log_sigma_f2"]),
                                              float(params["log_sigma_n2"]))
                bank_now = _bank_from_params(params, bank0, config.mode)
                if fixed_fast:
                    val_lml = val_obj.value(hyper_now)
                else:
                    phi_val = features_for_mode(x_val, bank_now, config.feature_mode)
                    val_lml = model.log_marginal_likelihood_reduced(phi_val, y_val, hyper_now)
                if not math.isfinite(val_lml):
                    raise NonFiniteLoss(f"validation objective non-finite at step {step}", trace)
            except NonFiniteLoss:
                # keep the per-step lists the same length before escaping
                trace.wall_ms.append((time.perf_counter() - t0) * 1e3)
                raise
            trace.val_history.append((step, -val_lml))
            if stopper.update(-val_lml):
                best_params = {k: np.array(v) if isinstance(v, np.ndarray) else v
                               for k, v in params.items()}
            if stopper.should_stop:
                trace.stop_reason = "patience"
                trace.wall_ms.append((time.perf_counter() - t0) * 1e3)
                break
        trace.wall_ms.append((time.perf_counter() - t0) * 1e3)

    chosen = best_params if best_params is not None else params
    hyper_best = model.Hyperparams(float(chosen["log_sigma_f2"]),
                                   float(chosen["log_sigma_n2"]))
    bank_best = _bank_from_params(chosen, bank0, config.mode)
    phi_full = features_for_mode(dataset.x, bank_best, config.feature_mode)
    state = model.fit_state(phi_full, dataset.y, hyper_best, bank_best,
                            input_columns=list(dataset.input_columns))
    return state, trace
