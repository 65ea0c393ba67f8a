import numpy as np
import pytest

from sepgen.errors import DegenerateVariableError, PoolTooSmallError
from sepgen.simulate import (
    SimConfig,
    TARGET_CORRELATION,
    bias_table_csv,
    classify_set,
    gen_covariates,
    gen_outcomes,
    gen_potential_outcomes,
    gen_sampling,
    run_simulation,
    simulate_dataset,
    true_structure_graph,
    type_table_csv,
)

from helpers import ZeroNoise


def test_covariate_correlations_match_target():
    rng = np.random.default_rng(100)
    x = gen_covariates(rng, 100_000)
    corr = np.corrcoef(x, rowvar=False)
    assert abs(corr[0, 1] - (-0.70)) < 0.02
    for j in range(9):
        if j != 5:
            assert abs(corr[5, j]) < 0.02
    assert np.abs(corr - TARGET_CORRELATION).max() < 0.03
    # unit marginal variances by construction
    assert np.abs(x.std(axis=0, ddof=1) - 1.0).max() < 0.02


def test_outcome_equation_fixed_points():
    x = np.zeros((3, 9))
    y1 = gen_outcomes(ZeroNoise(), x, np.ones(3))
    np.testing.assert_array_equal(y1, 5.0)
    x = np.random.default_rng(0).standard_normal((5, 9))
    y0 = gen_outcomes(ZeroNoise(), x, np.zeros(5))
    np.testing.assert_allclose(y0, x[:, 5] - 3.0 * x[:, 7])
    with pytest.raises(ValueError):
        gen_outcomes(ZeroNoise(), x, np.full(5, 2.0))


def test_mean_effect_is_five():
    rng = np.random.default_rng(101)
    x = gen_covariates(rng, 1_000_000)
    y0, y1 = gen_potential_outcomes(rng, x)
    assert abs(np.mean(y1 - y0) - 5.0) < 0.02


def test_sampling_probability_profile():
    rng = np.random.default_rng(102)
    x = gen_covariates(rng, 1_000_000)
    chosen, prob = gen_sampling(rng, x, 1000)
    lo = 1.0 / (1.0 + np.exp(0.75))
    hi = 1.0 / (1.0 + np.exp(-0.75))
    assert ((prob > lo) & (prob < hi)).mean() > 0.99
    # selection leans on the +X5 side of the score
    assert x[chosen, 4].mean() > x[:, 4].mean() + 0.02


def test_sampling_degenerate_and_pool_errors():
    x = np.zeros((500, 9))
    x[:, 3] = x[:, 4] = np.linspace(-1, 1, 500)  # X4 == X5 makes the score constant
    with pytest.raises(DegenerateVariableError):
        gen_sampling(np.random.default_rng(0), x, 10)
    rng = np.random.default_rng(1)
    pool = gen_covariates(rng, 300)
    with pytest.raises(PoolTooSmallError):
        gen_sampling(rng, pool, 299)


def test_simulate_dataset_shape_and_clusters():
    ds = simulate_dataset(np.random.default_rng(5), 150, 80)
    assert ds.n_experiment == 150
    assert ds.m_population == 80
    labels = np.asarray(ds.cluster)[ds.experiment_rows]
    assert len(set(labels.tolist())) == 150  # singleton clusters


def test_classify_set_buckets():
    assert classify_set(("X1",)) == "min_sepset"
    assert classify_set(("X1", "X7")) == "min_sepset"
    assert classify_set(("X4", "X5")) == "similar_sampling"
    assert classify_set(("X4", "X5", "X7")) == "similar_sampling"
    assert classify_set(("X2", "X3")) == "similar_heterogeneity"
    assert classify_set(("X2", "X3", "X6", "X8")) == "similar_heterogeneity"
    assert classify_set(("X2", "X3", "X8")) == "similar_heterogeneity"
    assert classify_set(()) == "inappropriate"
    assert classify_set(("X2", "X8")) == "inappropriate"
    assert classify_set(("X9", "X2", "X3")) == "similar_heterogeneity"


def test_true_structure_graph_separations():
    g = true_structure_graph()
    from sepgen.mgm import is_separated

    assert is_separated(g, {"Y"}, {"X4", "X5"}, {"X1"})
    assert not is_separated(g, {"Y"}, {"X4", "X5"}, set())
    assert is_separated(g, {"Y"}, {"X4", "X5"}, {"X2", "X3", "X8"})


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n=50)
    with pytest.raises(ValueError):
        SimConfig(n=100, reps=0)
    with pytest.raises(ValueError):
        SimConfig(n=100, estimators=("nope",))


def test_run_simulation_smoke_and_tables():
    cfg = SimConfig(n=100, m=200, reps=2, seed=1, estimators=("ipw", "naive"),
                    constraint_x1_unmeasured=True)
    res = run_simulation(cfg)
    kinds = {row.set_kind for row in res.bias_rows}
    assert {"oracle_sampling", "oracle_heterogeneity", "oracle_min_sepset", "none"} <= kinds
    for set_kind in ("est_marginal", "est_marginal_constrained", "est_exact"):
        rows = [r for r in res.type_rows if r.set_kind == set_kind]
        assert abs(sum(r.frequency for r in rows) - 1.0) < 1e-12
        assert len(res.details[set_kind]) == 2
    bias_csv = bias_table_csv([res])
    type_csv = type_table_csv([res])
    assert bias_csv.startswith("n,estimator,set_kind,bias,se,rmse,reps_used")
    assert type_csv.count("est_marginal_constrained") == 5


def test_run_simulation_deterministic_across_threads():
    cfg = SimConfig(n=100, m=150, reps=6, seed=9, estimators=("ipw",))
    a = run_simulation(cfg, threads=1)
    b = run_simulation(cfg, threads=2)
    assert a.bias_rows == b.bias_rows
    assert a.type_rows == b.type_rows
    assert a.details == b.details


def test_oracle_only_mode_skips_set_estimation():
    cfg = SimConfig(n=100, m=150, reps=2, seed=3, estimate_sets=False)
    res = run_simulation(cfg)
    assert not any(r.set_kind.startswith("est_") for r in res.bias_rows)
    assert res.details == {}


def test_appropriate_sets_reduce_bias_more_than_inappropriate():
    # at small n the graph is often misestimated; replicates whose set fails
    # the separation check must carry visibly more bias than those that pass
    from sepgen.simulate import TRUE_PATE

    for n in (100, 200):
        cfg = SimConfig(n=n, m=10_000, reps=500, seed=77, estimators=("ipw",))
        res = run_simulation(cfg, threads=2)
        groups = {True: [], False: []}
        for record in res.details["est_marginal"]:
            if record.status == "infeasible" or record.estimate is None:
                continue
            appropriate = classify_set(record.selected) != "inappropriate"
            groups[appropriate].append(record.estimate - TRUE_PATE)
        assert len(groups[True]) >= 20 and len(groups[False]) >= 20
        assert abs(np.mean(groups[True])) < abs(np.mean(groups[False]))
