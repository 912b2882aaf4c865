"""Gradient correctness, dropout semantics, optimizer loop behavior."""

import numpy as np
import pytest

from spectral_rff import data, features, model, training
from spectral_rff.data import Dataset
from spectral_rff.errors import DegenerateSplit, NonFiniteLoss
from spectral_rff.features import features_for_mode, kernel_matrix
from spectral_rff.linalg import seeded_rng
from spectral_rff.measures import (FrequencyBank, GaussianSE,
                                   sample_nonstationary, sample_stationary)
from spectral_rff.model import (Hyperparams, dense_conditioning,
                                log_marginal_likelihood_reduced, predict)
from spectral_rff.training import (MODES, NONSTATIONARY_LEARNED,
                                   STATIONARY_FIXED, STATIONARY_LEARNED,
                                   AdamState, EarlyStopper, TrainConfig,
                                   TrainTrace, _FixedBankObjective,
                                   _initial_bank, adam_init, adam_step,
                                   apply_gaussian_dropout, lml_gradient,
                                   median_heuristic_lengthscales, train)
from tests.conftest import random_instance


def sine_dataset(n=40, seed=0, standardized=True):
    rng = seeded_rng(seed)
    x = np.sort(rng.uniform(-2.0, 2.0, n)).reshape(-1, 1)
    y = np.sin(4.0 * x[:, 0]) + 0.1 * rng.standard_normal(n)
    ds = Dataset(x, y, ["x0"], "y")
    if standardized:
        ds, _ = data.standardize(ds)
    return ds


# --- dropout ----------------------------------------------------------------

def test_dropout_multipliers_have_unit_mean():
    sigma_p = 0.05
    bank = FrequencyBank(np.ones((100, 100)), stationary=True)
    noisy = apply_gaussian_dropout(bank, sigma_p, seeded_rng(100))
    mult = noisy.omega1
    assert abs(float(mult.mean()) - 1.0) <= 4.0 * sigma_p / 100.0
    assert float(mult.std()) == pytest.approx(sigma_p, rel=0.05)


def test_zero_dropout_returns_the_same_object():
    bank = sample_stationary(GaussianSE([1.0]), 5, 1, seeded_rng(1))
    assert apply_gaussian_dropout(bank, 0.0, seeded_rng(2)) is bank


def test_dropout_keeps_stationary_banks_tied():
    bank = sample_stationary(GaussianSE([1.0]), 5, 1, seeded_rng(1))
    noisy = apply_gaussian_dropout(bank, 0.2, seeded_rng(2))
    assert noisy.stationary
    assert noisy.omega2 is noisy.omega1
    assert np.any(noisy.omega1 != bank.omega1)


def test_dropout_draws_independent_noise_per_bank():
    bank = sample_nonstationary(GaussianSE([1.0]), GaussianSE([1.0]),
                                40, 1, seeded_rng(3))
    noisy = apply_gaussian_dropout(bank, 0.3, seeded_rng(4))
    mult1 = noisy.omega1 / bank.omega1
    mult2 = noisy.omega2 / bank.omega2
    assert np.any(np.abs(mult1 - mult2) > 1e-6)


# --- analytic gradients -----------------------------------------------------

def fd_lml(x, y, bank, hyper, fmode):
    phi = features_for_mode(x, bank, fmode)
    return log_marginal_likelihood_reduced(phi, y, hyper)


@pytest.mark.parametrize("mode,fmode", [
    (STATIONARY_LEARNED, features.STATIONARY),
    (NONSTATIONARY_LEARNED, features.NONSTATIONARY),
])
def test_gradients_match_central_differences(mode, fmode):
    rng = seeded_rng(77)
    h = 1e-5
    worst = 0.0
    for _ in range(6):
        x, y, bank, hyper = random_instance(rng, fmode, max_n=30, max_m=6)
        _, grads, _ = lml_gradient(x, y, bank, hyper, mode)

        for key in ("log_sigma_f2", "log_sigma_n2"):
            up = Hyperparams(hyper.log_sigma_f2, hyper.log_sigma_n2)
            dn = Hyperparams(hyper.log_sigma_f2, hyper.log_sigma_n2)
            setattr(up, key, getattr(hyper, key) + h)
            setattr(dn, key, getattr(hyper, key) - h)
            fd = (fd_lml(x, y, bank, up, fmode) - fd_lml(x, y, bank, dn, fmode)) / (2 * h)
            worst = max(worst, abs(grads[key] - fd) / max(1.0, abs(fd)))

        freq_keys = ["omega"] if mode == STATIONARY_LEARNED else ["omega1", "omega2"]
        for key in freq_keys:
            target = bank.omega1 if key in ("omega", "omega1") else bank.omega2
            for i in range(target.shape[0]):
                for j in range(target.shape[1]):
                    def perturbed(sign):
                        o1 = bank.omega1.copy()
                        o2 = None if bank.stationary else bank.omega2.copy()
                        ref = o1 if key in ("omega", "omega1") else o2
                        ref[i, j] += sign * h
                        if bank.stationary:
                            return FrequencyBank(o1, stationary=True)
                        return FrequencyBank(o1, o2, stationary=False)
                    fd = (fd_lml(x, y, perturbed(+1), hyper, fmode)
                          - fd_lml(x, y, perturbed(-1), hyper, fmode)) / (2 * h)
                    worst = max(worst, abs(grads[key][i, j] - fd) / max(1.0, abs(fd)))
    assert worst < 1e-6


def test_fixed_mode_reports_no_frequency_gradients():
    rng = seeded_rng(78)
    x, y, bank, hyper = random_instance(rng, features.STATIONARY)
    _, grads, _ = lml_gradient(x, y, bank, hyper, STATIONARY_FIXED)
    assert set(grads) == {"log_sigma_f2", "log_sigma_n2"}
    with pytest.raises(ValueError):
        lml_gradient(x, y, bank, hyper, "banded")


def test_duplicate_frequency_rows_get_equal_gradients():
    rng = seeded_rng(79)
    x, y, bank, hyper = random_instance(rng, features.STATIONARY, max_m=5)
    om = bank.omega1.copy()
    om[1] = om[0]
    dup = FrequencyBank(om, stationary=True)
    _, grads, _ = lml_gradient(x, y, dup, hyper, STATIONARY_LEARNED)
    np.testing.assert_allclose(grads["omega"][0], grads["omega"][1],
                               rtol=1e-9, atol=1e-12)


def test_fixed_bank_objective_agrees_with_general_path():
    rng = seeded_rng(80)
    x, y, bank, _ = random_instance(rng, features.STATIONARY)
    obj = _FixedBankObjective(x, y, bank, features.STATIONARY)
    for sf2, sn2 in ((1.0, 0.1), (3.0, 0.5), (0.2, 0.01)):
        hyper = Hyperparams.from_variances(sf2, sn2)
        fast_val, fast_grads = obj.value_and_grads(hyper)
        slow_val, slow_grads, _ = lml_gradient(x, y, bank, hyper, STATIONARY_FIXED)
        assert fast_val == pytest.approx(slow_val, rel=1e-9)
        for key in slow_grads:
            assert fast_grads[key] == pytest.approx(slow_grads[key], rel=1e-8)


# --- optimizer pieces -------------------------------------------------------

def test_adam_zero_gradient_leaves_params_untouched():
    params = {"a": np.array([1.0, -2.0]), "b": 3.0}
    cfg = TrainConfig(learning_rate=0.1)
    new, state = adam_step(params, {"a": np.zeros(2), "b": 0.0},
                           adam_init(params), cfg)
    np.testing.assert_array_equal(new["a"], params["a"])
    assert float(new["b"]) == 3.0
    assert state.t == 1


def test_adam_first_step_is_signed_learning_rate():
    params = {"a": np.array([0.0, 0.0])}
    cfg = TrainConfig(learning_rate=0.1)
    new, _ = adam_step(params, {"a": np.array([2.5, -7.0])},
                       adam_init(params), cfg)
    np.testing.assert_allclose(new["a"], [-0.1, 0.1], rtol=1e-6)


def test_early_stopper_counts_flat_evaluations():
    stopper = EarlyStopper(patience=2)
    assert stopper.update(5.0)
    assert not stopper.update(6.0)
    assert not stopper.should_stop
    assert not stopper.update(5.0)   # ties do not improve
    assert stopper.should_stop
    fresh = EarlyStopper(patience=2)
    fresh.update(5.0)
    fresh.update(6.0)
    assert fresh.update(4.0)         # improvement resets the counter
    assert fresh.bad_evals == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="other")
    with pytest.raises(ValueError):
        TrainConfig(m=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(adam_beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(validation_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(dropout_sigma_p=-0.1)
    assert TrainConfig(mode=STATIONARY_FIXED).feature_mode == features.STATIONARY
    assert TrainConfig(mode=NONSTATIONARY_LEARNED).feature_mode == features.NONSTATIONARY
    assert set(MODES) == {STATIONARY_FIXED, STATIONARY_LEARNED, NONSTATIONARY_LEARNED}


def test_median_heuristic_hand_values():
    x = np.array([[0.0], [1.0], [3.0]])
    assert median_heuristic_lengthscales(x)[0] == 2.0
    const = np.ones((4, 1))
    assert median_heuristic_lengthscales(const)[0] == 1.0
    big = np.arange(2000.0).reshape(-1, 1)
    np.testing.assert_array_equal(median_heuristic_lengthscales(big),
                                  median_heuristic_lengthscales(big[::2]))


def test_initial_bank_semantics():
    cfg_ns = TrainConfig(mode=NONSTATIONARY_LEARNED, m=4)
    cfg_st = TrainConfig(mode=STATIONARY_LEARNED, m=4)
    x = np.zeros((3, 2))
    st_bank = sample_stationary(GaussianSE([1.0, 1.0]), 4, 2, seeded_rng(5))
    pair = _initial_bank(st_bank, x, cfg_ns, seeded_rng(6))
    assert not pair.stationary
    np.testing.assert_array_equal(pair.omega1, pair.omega2)
    assert pair.omega1 is not pair.omega2
    np.testing.assert_array_equal(pair.omega1, st_bank.omega1)

    copied = _initial_bank(st_bank, x, cfg_st, seeded_rng(6))
    copied.omega1[0, 0] += 1.0
    assert st_bank.omega1[0, 0] != copied.omega1[0, 0]

    ns_bank = sample_nonstationary(GaussianSE([1.0, 1.0]), GaussianSE([1.0, 1.0]),
                                   4, 2, seeded_rng(7))
    with pytest.raises(ValueError):
        _initial_bank(ns_bank, x, cfg_st, seeded_rng(8))


def test_trace_csv_layout(tmp_path):
    trace = TrainTrace(train_neg_lml=[1.5, 1.25], wall_ms=[1.0, 2.3456],
                       val_history=[(2, 3.5)], stop_reason="max_steps")
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,train_neg_lml,val_neg_lml,wall_ms"
    assert lines[1] == "1,1.5,,1.000"
    assert lines[2] == "2,1.25,3.5,2.346"


# --- the training loop ------------------------------------------------------

def test_train_requires_standardized_dataset():
    with pytest.raises(ValueError):
        train(sine_dataset(standardized=False), TrainConfig(m=4, max_steps=2))


def test_train_rejects_degenerate_validation_split():
    ds, _ = data.standardize(Dataset(np.array([[0.0], [1.0]]),
                                     np.array([0.0, 1.0]), ["x0"], "y"))
    with pytest.raises(DegenerateSplit):
        train(ds, TrainConfig(m=2, max_steps=2, validation_fraction=0.5))


def test_train_is_deterministic_bitwise():
    ds = sine_dataset()
    cfg = TrainConfig(mode=NONSTATIONARY_LEARNED, m=8, learning_rate=0.05,
                      max_steps=30, eval_every=10, patience=10,
                      dropout_sigma_p=0.1, seed=5)
    state_a, trace_a = train(ds, cfg)
    state_b, trace_b = train(ds, cfg)
    np.testing.assert_array_equal(state_a.r, state_b.r)
    np.testing.assert_array_equal(state_a.alpha1, state_b.alpha1)
    np.testing.assert_array_equal(state_a.alpha2, state_b.alpha2)
    np.testing.assert_array_equal(state_a.bank.omega1, state_b.bank.omega1)
    assert state_a.hyper.log_sigma_f2 == state_b.hyper.log_sigma_f2
    assert trace_a.train_neg_lml == trace_b.train_neg_lml
    assert trace_a.val_history == trace_b.val_history


def test_trace_bookkeeping_and_stop_reasons():
    ds = sine_dataset()
    cfg = TrainConfig(mode=STATIONARY_LEARNED, m=8, learning_rate=0.05,
                      max_steps=17, eval_every=5, patience=50,
                      dropout_sigma_p=0.0, seed=3)
    _, trace = train(ds, cfg)
    assert trace.stop_reason == "max_steps"
    assert len(trace.train_neg_lml) == len(trace.wall_ms) == 17
    assert [s for s, _ in trace.val_history] == [5, 10, 15]

    cfg = TrainConfig(mode=STATIONARY_LEARNED, m=8, learning_rate=0.5,
                      max_steps=300, eval_every=5, patience=3,
                      dropout_sigma_p=0.0, seed=2)
    _, trace = train(ds, cfg)
    assert trace.stop_reason == "patience"
    assert len(trace.train_neg_lml) < 300
    assert len(trace.train_neg_lml) == len(trace.wall_ms)


def test_diverging_run_raises_with_consistent_trace():
    ds = sine_dataset()
    cfg = TrainConfig(mode=STATIONARY_LEARNED, m=8, learning_rate=300.0,
                      max_steps=50, eval_every=10, patience=50,
                      dropout_sigma_p=0.0, seed=1)
    with pytest.raises(NonFiniteLoss) as err:
        train(ds, cfg)
    trace = err.value.trace
    assert trace is not None
    assert len(trace.train_neg_lml) == len(trace.wall_ms)


def test_fit_state_is_rebuilt_from_the_clean_bank():
    ds = sine_dataset()
    bank = sample_stationary(GaussianSE([0.5]), 16, 1, seeded_rng(21))
    cfg = TrainConfig(mode=STATIONARY_FIXED, m=16, learning_rate=0.05,
                      max_steps=25, eval_every=10, patience=20,
                      dropout_sigma_p=0.4, seed=9)
    state, _ = train(ds, cfg, spec_init=bank)
    # dropout perturbed every step, yet the stored bank is the input bank
    np.testing.assert_array_equal(state.bank.omega1, bank.omega1)
    rebuilt = model.fit_state(
        features_for_mode(ds.x, state.bank, cfg.feature_mode),
        ds.y, state.hyper, state.bank)
    np.testing.assert_array_equal(rebuilt.alpha2, state.alpha2)
    np.testing.assert_array_equal(rebuilt.r, state.r)


def test_learned_state_reproducible_from_stored_pieces():
    ds = sine_dataset()
    cfg = TrainConfig(mode=NONSTATIONARY_LEARNED, m=6, learning_rate=0.05,
                      max_steps=20, eval_every=5, patience=20,
                      dropout_sigma_p=0.1, seed=13)
    state, _ = train(ds, cfg)
    rebuilt = model.fit_state(
        features_for_mode(ds.x, state.bank, cfg.feature_mode),
        ds.y, state.hyper, state.bank)
    np.testing.assert_array_equal(rebuilt.alpha1, state.alpha1)
    np.testing.assert_array_equal(rebuilt.alpha2, state.alpha2)


def test_training_improves_the_objective():
    ds = sine_dataset(n=60, seed=4)
    cfg = TrainConfig(mode=STATIONARY_LEARNED, m=12, learning_rate=0.05,
                      max_steps=120, eval_every=20, patience=50,
                      dropout_sigma_p=0.0, seed=6)
    _, trace = train(ds, cfg)
    assert trace.train_neg_lml[-1] < trace.train_neg_lml[0]


def test_learned_stationary_model_recovers_known_se_data():
    # squared-exponential ground truth with known hyperparameters; the
    # reduced model with a big fixed bank should land within 10% of the
    # exact dense GP's test error
    rng = seeded_rng(42)
    x = np.sort(rng.uniform(-3.0, 3.0, 200)).reshape(-1, 1)
    spec = GaussianSE([0.7])
    k = 1.5 * kernel_matrix(spec, x, x)
    root = np.linalg.cholesky(k + 1e-10 * np.eye(200))
    f = root @ rng.standard_normal(200)
    y = f + np.sqrt(0.01) * rng.standard_normal(200)
    full = Dataset(x, y, ["x0"], "y")
    tr_ds, te_ds = data.split(full, 0.7, 1)

    sds, stats = data.standardize(tr_ds)
    spec_std = GaussianSE([0.7 / float(stats.input_std[0])])
    cfg = TrainConfig(mode=STATIONARY_FIXED, m=1024, learning_rate=0.05,
                      max_steps=600, patience=30, eval_every=20,
                      dropout_sigma_p=0.0, seed=7)
    state, _ = train(sds, cfg, spec_init=spec_std)
    mean_s, _ = predict(state, data.standardize_inputs(te_ds.x, stats))
    mean, _ = data.destandardize_predictions(mean_s, np.zeros_like(mean_s), stats)
    mse_reduced = float(np.mean((mean - te_ds.y) ** 2))

    k_train = 1.5 * kernel_matrix(spec, tr_ds.x, tr_ds.x)
    k_cross = 1.5 * kernel_matrix(spec, tr_ds.x, te_ds.x)
    mean_o, _ = dense_conditioning(k_train, k_cross, 1.5 * np.ones(te_ds.n),
                                   tr_ds.y, 0.01)
    mse_dense = float(np.mean((mean_o - te_ds.y) ** 2))
    assert mse_reduced <= 1.10 * mse_dense
