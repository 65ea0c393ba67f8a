import numpy as np
import pytest

from sepgen.errors import (
    DegenerateArmError,
    RankDeficiencyError,
    SampleSizeError,
    SeparationError,
)
from sepgen.estimators import (
    aipw_pate,
    compute_weights,
    fit_sampling_model,
    ipw_pate,
    outcome_model_pate,
    sate_dim,
    treatment_probabilities,
)
from sepgen.simulate import gen_covariates, gen_outcomes, simulate_dataset

from helpers import make_dataset, reference_logistic_irls


def _sm5_draw(seed, n, m):
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return simulate_dataset(rng, n, m)


def test_sampling_model_empty_set_is_weighted_share():
    ds = make_dataset(
        x_exp=np.zeros((4, 1)) + [[1.0], [2.0], [3.0], [4.0]],
        t=[0, 1, 0, 1],
        y=[1.0, 2.0, 3.0, 4.0],
        x_pop=[[1.0], [2.0]],
        population_size_n=10,
    )
    model = fit_sampling_model(ds, ())
    # weights: 1 per experiment row, m/(N-n) = 2/6 per population row
    share = 4 / (4 + 2 * (2 / 6))
    np.testing.assert_allclose(model.fitted_probabilities, share, rtol=1e-10)


def test_sampling_model_balanced_covariate_slope_near_zero():
    rng = np.random.default_rng(12)
    n = m = 10_000
    x = rng.integers(0, 2, size=n + m).astype(float)
    ds = make_dataset(x[:n, None], (rng.random(n) < 0.5).astype(float), rng.normal(size=n), x[n:, None])
    model = fit_sampling_model(ds, ("Z0",))
    assert abs(model.coefficients[1]) < 0.05


def test_sampling_model_matches_reference_irls():
    for rep in range(50):
        rng = np.random.default_rng(np.random.SeedSequence(200, spawn_key=(rep,)))
        n, m = 300, 250
        x = rng.normal(size=(n + m, 3))
        big_n = n + m + int(rng.integers(0, 5000))
        ds = make_dataset(
            x[:n], (rng.random(n) < 0.5).astype(float), rng.normal(size=n), x[n:],
            population_size_n=big_n,
        )
        model = fit_sampling_model(ds, ("Z0", "Z1", "Z2"))
        weights = np.where(ds.s == 1, 1.0, m / (big_n - n))
        ref = reference_logistic_irls(x, ds.s.astype(float), weights)
        np.testing.assert_allclose(model.fitted_probabilities, ref, atol=1e-6)


def test_sampling_model_perfect_separation():
    n = 40
    x = np.concatenate([np.ones(n), np.zeros(n)])
    ds = make_dataset(x[:n, None], [0, 1] * (n // 2), np.ones(n), x[n:, None])
    with pytest.raises(SeparationError):
        fit_sampling_model(ds, ("Z0",))


def test_sampling_model_rejects_unmeasured_variable():
    rng = np.random.default_rng(0)
    ds = make_dataset(
        rng.normal(size=(30, 2)), [0, 1] * 15, rng.normal(size=30), rng.normal(size=(10, 2)),
        names=["a", "u"], measured={"u": False},
    )
    with pytest.raises(ValueError, match="u"):
        fit_sampling_model(ds, ("u",))


def test_compute_weights_constant_probability_gives_equal_weights():
    ds = make_dataset(np.zeros((6, 1)), [0, 1, 0, 1, 0, 1], np.arange(6.0), np.zeros((4, 1)))
    model = fit_sampling_model(ds, ())
    pi = compute_weights(model)
    assert np.allclose(pi, pi[0])


def test_compute_weights_hand_example():
    from dataclasses import replace
    from sepgen.estimators import SamplingModel

    probs = np.array([0.2, 0.4, 0.5, 0.8])
    model = SamplingModel(
        w_names=(),
        column_labels=(),
        coefficients=np.array([0.0]),
        fitted_probabilities=probs,
        case_weights=np.ones(4),
        sampling_indicator=np.array([1, 1, 0, 0], dtype=np.int8),
    )
    pr_s0 = (0.8 + 0.6 + 0.5 + 0.2) / 4
    expected = np.array([(1 / 0.2) * (0.8 / pr_s0), (1 / 0.4) * (0.6 / pr_s0)])
    np.testing.assert_allclose(compute_weights(model), expected, rtol=1e-12)
    capped = compute_weights(model, cap=2.0)
    assert capped.max() <= 2.0


def test_ipw_reduces_to_difference_in_means():
    ds = make_dataset(
        np.zeros((6, 1)), [1, 1, 1, 0, 0, 0], [3.0, 5.0, 4.0, 1.0, 2.0, 0.0], np.zeros((3, 1))
    )
    est = ipw_pate(ds, np.ones(6), 0.5)
    ref = sate_dim(ds)
    assert est.point == ref.point == 3.0


def test_ipw_hand_arithmetic_six_rows():
    pi = np.array([1.0, 2.0, 0.5, 1.5, 1.0, 2.5])
    p = np.array([0.5, 0.4, 0.6, 0.5, 0.4, 0.6])
    t = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    y = np.array([4.0, 1.0, 6.0, 2.0, 3.0, 0.5])
    ds = make_dataset(np.zeros((6, 1)), t, y, np.zeros((2, 1)))
    wt = pi * p * t
    wc = pi * (1 - p) * (1 - t)
    expected = (wt @ y) / wt.sum() - (wc @ y) / wc.sum()
    est = ipw_pate(ds, pi, p)
    assert est.point == pytest.approx(expected, rel=1e-14)


def test_ipw_hajek_scale_invariance_exact():
    rng = np.random.default_rng(21)
    n = 40
    ds = make_dataset(
        rng.normal(size=(n, 1)),
        (rng.random(n) < 0.5).astype(float),
        rng.normal(size=n),
        rng.normal(size=(5, 1)),
    )
    pi = rng.random(n) + 0.5
    base = ipw_pate(ds, pi, 0.5).point
    for c in (2.0, 0.5, 1024.0):  # powers of two scale floats exactly
        assert ipw_pate(ds, c * pi, 0.5).point == base
    assert ipw_pate(ds, 3.7 * pi, 0.5).point == pytest.approx(base, rel=1e-12)


def test_ipw_degenerate_arm():
    ds = make_dataset(np.zeros((4, 1)), [1, 1, 1, 1], np.ones(4), np.zeros((2, 1)))
    with pytest.raises(DegenerateArmError):
        ipw_pate(ds, np.ones(4), 0.5)
    with pytest.raises(ValueError):
        ipw_pate(ds, np.ones(4), 1.5)


def test_outcome_model_null_effect():
    rng = np.random.default_rng(31)
    n = 4000
    x = rng.normal(size=(n, 1))
    t = (rng.random(n) < 0.5).astype(float)
    y = 1.0 + 2.0 * x[:, 0] + rng.normal(size=n)
    ds = make_dataset(x, t, y, rng.normal(size=(500, 1)))
    est = outcome_model_pate(ds, ("Z0",))
    assert abs(est.point) < 0.12  # ~2.5 standard errors of this design


def test_outcome_model_recovers_linear_truth():
    estimates = []
    for rep in range(200):
        rng = np.random.default_rng(np.random.SeedSequence(400, spawn_key=(rep,)))
        n = 10_000
        x = rng.normal(size=(n, 1))
        t = (rng.random(n) < 0.5).astype(float)
        y = 2.0 + 3.0 * t + x[:, 0] + rng.normal(size=n)
        ds = make_dataset(x, t, y, rng.normal(size=(100, 1)))
        estimates.append(outcome_model_pate(ds, ("Z0",)).point)
    assert abs(np.mean(estimates) - 3.0) < 0.02


def test_outcome_model_on_heterogeneity_set():
    estimates = []
    for rep in range(500):
        rng = np.random.default_rng(np.random.SeedSequence(401, spawn_key=(rep,)))
        ds = simulate_dataset(rng, 2000, 10_000)
        estimates.append(outcome_model_pate(ds, ("X2", "X3")).point)
    assert abs(np.mean(estimates) - 5.0) < 0.15


def test_outcome_model_rank_deficiency_names_columns():
    rng = np.random.default_rng(7)
    n = 60
    x = rng.normal(size=(n, 1))
    dup = np.column_stack([x, x])
    ds = make_dataset(dup, [0, 1] * (n // 2), rng.normal(size=n), np.zeros((10, 2)),
                      names=["a", "b"])
    with pytest.raises(RankDeficiencyError) as err:
        outcome_model_pate(ds, ("a", "b"))
    assert "b" in err.value.columns


def test_outcome_model_arm_size_precondition():
    ds = make_dataset(np.zeros((4, 1)) + np.arange(4)[:, None], [1, 1, 1, 0],
                      [1.0, 2.0, 3.0, 4.0], np.zeros((2, 1)))
    with pytest.raises(SampleSizeError):
        outcome_model_pate(ds, ("Z0",))


def _zero_residual_dataset():
    # outcomes exactly linear in the covariate within each arm; small integers
    # keep the least-squares solve exact in floating point
    x = np.array([[0.0], [1.0], [2.0], [0.0], [1.0], [2.0]])
    t = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    y = np.where(t == 1, 3.0 + 4.0 * x[:, 0], 1.0 + 2.0 * x[:, 0])
    return make_dataset(x, t, y, np.array([[0.5], [1.5], [2.5]]))


def test_aipw_equals_outcome_model_on_zero_residuals():
    ds = _zero_residual_dataset()
    pi = np.array([1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    om = outcome_model_pate(ds, ("Z0",))
    ai = aipw_pate(ds, ("Z0",), pi, 0.5)
    assert ai.point == om.point


def test_aipw_equals_ipw_when_outcome_model_is_zero():
    # antisymmetric outcomes around zero within each arm make the per-arm
    # least squares exactly the zero function
    x = np.array([[-1.0], [1.0], [-1.0], [1.0], [-1.0], [1.0], [-1.0], [1.0]])
    t = np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    y = np.array([1.0, 1.0, -1.0, -1.0, 2.0, 2.0, -2.0, -2.0])
    ds = make_dataset(x, t, y, np.array([[0.0], [0.3]]))
    pi = np.array([1.0, 1.5, 2.0, 1.0, 1.25, 1.0, 2.0, 1.0])
    p = 0.5
    ai = aipw_pate(ds, ("Z0",), pi, p)
    ipw = ipw_pate(ds, pi, p)
    assert ai.point == ipw.point


@pytest.mark.parametrize("broken", ["outcome_model", "weights"])
def test_aipw_double_robustness(broken):
    estimates = []
    for rep in range(500):
        rng = np.random.default_rng(np.random.SeedSequence(402, spawn_key=(rep,)))
        ds = simulate_dataset(rng, 2000, 10_000)
        if broken == "outcome_model":
            w_model = ("X2", "X3", "X8")  # omits X6 from the true outcome equation
            pi = compute_weights(fit_sampling_model(ds, ("X4", "X5")))
        else:
            w_model = ("X2", "X3", "X6", "X8")
            pi = compute_weights(fit_sampling_model(ds, ()))  # intercept-only
        estimates.append(aipw_pate(ds, w_model, pi, 0.5).point)
    assert abs(np.mean(estimates) - 5.0) < 0.2


def test_sate_trivials_and_hand_example():
    ds = make_dataset(np.zeros((4, 1)), [1, 0, 1, 0], [1.0, 0.0, 1.0, 0.0], np.zeros((2, 1)))
    assert sate_dim(ds).point == 1.0
    ds2 = make_dataset(np.zeros((4, 1)), [1, 0, 1, 0], [2.0, 2.0, 2.0, 2.0], np.zeros((2, 1)))
    assert sate_dim(ds2).point == 0.0
    t = np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])
    y = np.array([4.0, 1.0, 6.0, 2.0, 3.0, 0.5])
    ds3 = make_dataset(np.zeros((6, 1)), t, y, np.zeros((2, 1)))
    assert sate_dim(ds3).point == pytest.approx((4 + 6 + 3) / 3 - (1 + 2 + 0.5) / 3, rel=1e-15)


def test_location_equivariance_of_all_estimators():
    rng = np.random.default_rng(55)
    ds = simulate_dataset(rng, 500, 800)
    pi = compute_weights(fit_sampling_model(ds, ("X4", "X5")))
    shift = 1000.0
    shifted = make_dataset(
        ds.x[ds.experiment_rows],
        ds.t[ds.experiment_rows],
        ds.y[ds.experiment_rows] + shift,
        ds.x[ds.population_rows],
        names=list(ds.covariate_names),
    )
    for fn in (
        lambda d: ipw_pate(d, pi, 0.5).point,
        lambda d: outcome_model_pate(d, ("X2", "X3")).point,
        lambda d: aipw_pate(d, ("X2", "X3"), pi, 0.5).point,
        lambda d: sate_dim(d).point,
    ):
        assert fn(shifted) == pytest.approx(fn(ds), abs=1e-8)


def test_treatment_probabilities_strata_and_validation():
    strata = ["a", "a", "a", "a", "b", "b", "b", "b"]
    t = [1, 1, 1, 0, 1, 0, 0, 0]
    ds = make_dataset(np.zeros((8, 1)), t, np.ones(8), np.zeros((2, 1)), strata=strata)
    p = treatment_probabilities(ds)
    np.testing.assert_allclose(p[:4], 0.75)
    np.testing.assert_allclose(p[4:], 0.25)
    np.testing.assert_allclose(treatment_probabilities(ds, constant=0.5), 0.5)
    with pytest.raises(ValueError):
        treatment_probabilities(ds, constant=1.0)
    bad = make_dataset(np.zeros((4, 1)), [1, 1, 0, 0], np.ones(4), np.zeros((2, 1)),
                       strata=["a", "a", "b", "b"])
    with pytest.raises(DegenerateArmError):
        treatment_probabilities(bad)
