import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from rggclt.constants import gilbert_exact_moments_unit_square
from rggclt.errors import ArgumentError, CapacityError, NumericError
from rggclt.estimators import (
    CSV_FIELDS,
    MECKE_CATALOGUE,
    STREAM_TAGS,
    CheckResult,
    ExperimentSpec,
    bootstrap_se,
    compound_poisson_experiment,
    conditional_cost_estimator,
    fit_variance_scaling,
    jackknife_variance_se,
    kolmogorov_to_normal,
    mecke_check,
    poincare_check,
    ratio_spread,
    report_from_samples,
    run_experiment,
    summarize,
    wasserstein1_to_normal,
)
from rggclt.functionals import FunctionalSpec, add_one_cost_oracle
from rggclt.geometry import ConvexBody
from rggclt.sampling import MarkedPointConfig, RngStream, derive_stream_id, sample_poisson

SQUARE = ConvexBody.unit_cube(2)
DISC = ConvexBody.ball([0.0, 0.0], 1.0)


# -- experiment spec ----------------------------------------------------------------------

def gilbert_spec(**kw):
    base = dict(
        functional=FunctionalSpec.power("gilbert", 1.0, epsilon=0.3),
        body=SQUARE,
        t_grid=(20.0,),
        replicates=4,
        base_seed=3,
    )
    base.update(kw)
    return ExperimentSpec(**base)


@pytest.mark.parametrize("grid", [(), (5.0, 5.0), (10.0, 5.0), (-1.0, 2.0)])
def test_bad_grid(grid):
    with pytest.raises(ArgumentError):
        gilbert_spec(t_grid=grid)


@pytest.mark.parametrize("reps", [1, 0, 2.5])
def test_bad_replicates(reps):
    with pytest.raises(ArgumentError):
        gilbert_spec(replicates=reps)


def test_epsilon_rules():
    spec = gilbert_spec(epsilon_rule=("power", 1.0), t_grid=(4.0, 16.0))
    assert spec.epsilon(16.0) == pytest.approx(0.25)
    assert spec.functional_at(16.0).graph_params["epsilon"] == pytest.approx(0.25)
    assert gilbert_spec().epsilon(99.0) == 0.3
    with pytest.raises(ArgumentError):
        gilbert_spec(epsilon_rule=("log", 1.0))


def test_windows_by_family():
    body, lam = gilbert_spec(intensity=2.0).window(10.0)
    assert body == SQUARE and lam == 20.0
    onng = ExperimentSpec(FunctionalSpec.power("onng", 0.5), SQUARE, (3.0,), 2)
    body, lam = onng.window(3.0)
    assert body.volume == pytest.approx(9.0) and lam == 1.0


# -- run_experiment -------------------------------------------------------------------------

def test_two_replicates_variance_is_half_squared_difference():
    rep = run_experiment(gilbert_spec(replicates=2))
    a, b = rep.samples[0]
    assert rep.rows[0].var == pytest.approx(0.5 * (a - b) ** 2)


def test_same_seed_same_report():
    spec = gilbert_spec(t_grid=(10.0, 20.0), replicates=20)
    a, b = run_experiment(spec), run_experiment(spec)
    assert a.to_csv() == b.to_csv() and a.samples_csv() == b.samples_csv()
    other = run_experiment(gilbert_spec(t_grid=(10.0, 20.0), replicates=20, base_seed=4))
    assert other.samples_csv() != a.samples_csv()


def test_workers_do_not_change_results():
    spec = gilbert_spec(t_grid=(10.0, 20.0), replicates=12)
    assert run_experiment(spec, workers=1).samples_csv() == run_experiment(spec, workers=3).samples_csv()


def test_capacity_cap_propagates():
    with pytest.raises(CapacityError):
        run_experiment(gilbert_spec(t_grid=(200.0,)), max_points=10)


def test_gilbert_mean_matches_exact_mean():
    rep = run_experiment(gilbert_spec(replicates=2000))
    exact = gilbert_exact_moments_unit_square(1.0, 20.0, 0.3)["mean"]
    row = rep.rows[0]
    assert abs(row.mean - exact) <= 3 * row.mean_se
    assert row.n_mean == pytest.approx(20.0, abs=3 * math.sqrt(20.0 / 2000))


def test_report_serialization():
    rep = run_experiment(gilbert_spec(t_grid=(5.0, 10.0), replicates=4))
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(CSV_FIELDS) and len(lines) == 3
    assert rep.samples_csv().splitlines()[0] == "t,replicate,n_points,value"
    assert len(rep.samples_csv().splitlines()) == 9
    payload = json.loads(rep.to_json())
    assert payload["spec"]["t_grid"] == [5.0, 10.0]
    assert len(payload["rows"]) == 2


# -- distances to the normal law -------------------------------------------------------------

def test_kolmogorov_standard_normal():
    x = np.random.default_rng(1).standard_normal(1_000_000)
    assert kolmogorov_to_normal(x) <= 0.005


def test_wasserstein_standard_normal():
    x = np.random.default_rng(2).standard_normal(1_000_000)
    assert wasserstein1_to_normal(x) <= 0.01


def test_kolmogorov_two_point_hand_value():
    assert kolmogorov_to_normal([-1.0, 1.0]) == pytest.approx(ndtr(1.0) - 0.5, abs=1e-15)


@pytest.mark.parametrize("stat", [kolmogorov_to_normal, wasserstein1_to_normal])
def test_constant_samples_rejected(stat):
    with pytest.raises(NumericError):
        stat([2.0, 2.0, 2.0])


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=60, unique=True), st.floats(-100, 100))
def test_distance_invariances(xs, shift):
    x = np.array(xs)
    if x.std() < 1e-6:
        return
    assert wasserstein1_to_normal(-x) == pytest.approx(wasserstein1_to_normal(x), abs=1e-9)
    assert kolmogorov_to_normal(-x) == pytest.approx(kolmogorov_to_normal(x), abs=1e-9)
    assert wasserstein1_to_normal(x + shift) == pytest.approx(wasserstein1_to_normal(x), abs=1e-8)
    assert 0.0 <= kolmogorov_to_normal(x) <= 1.0


def test_kolmogorov_detects_skew():
    x = np.random.default_rng(3).exponential(size=20_000)
    assert kolmogorov_to_normal(x) > 0.05


# -- standard errors ----------------------------------------------------------------------------

def test_jackknife_matches_normal_theory():
    x = np.random.default_rng(4).standard_normal(20_000)
    # Var(s^2) = 2 sigma^4 / (n - 1) for normal data
    assert jackknife_variance_se(x) == pytest.approx(math.sqrt(2 / 19_999), rel=0.05)


def test_jackknife_two_samples():
    assert jackknife_variance_se([0.0, 2.0]) == pytest.approx(2.0 * math.sqrt(2.0))


def test_bootstrap_deterministic():
    x = np.random.default_rng(5).standard_normal(200)
    assert bootstrap_se(x, np.mean, 7) == bootstrap_se(x, np.mean, 7)
    assert bootstrap_se(x, np.mean, 7) == pytest.approx(1 / math.sqrt(200), rel=0.25)


def test_summarize_constant_values_gives_nan_distances():
    row = summarize(1.0, [3.0, 3.0, 3.0])
    assert math.isnan(row.dK) and row.var == 0.0


# -- scaling fits ---------------------------------------------------------------------------------

def test_fit_pure_power():
    t = np.array([10.0, 20.0, 40.0, 80.0])
    fit = fit_variance_scaling(t, 7 * t**3, d=1)
    assert fit["slope"] == pytest.approx(3.0, abs=1e-9)
    assert fit["intercept"] == pytest.approx(math.log(7.0), abs=1e-9)


def test_fit_log_corrected_ratio_constant():
    t = np.arange(10.0, 101.0, 10.0)
    fit = fit_variance_scaling(t, t**2 * np.log(t**2), d=2)
    r = np.array(fit["log_corrected_ratio"])
    assert np.max(np.abs(r - 1.0)) <= 1e-9
    assert ratio_spread(r) <= 1e-9


def test_fit_needs_three_points_and_positive_variance():
    with pytest.raises(ArgumentError):
        fit_variance_scaling([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(NumericError):
        fit_variance_scaling([1.0, 2.0, 3.0], [1.0, 0.0, 2.0])


def test_report_from_injected_samples():
    rng = np.random.default_rng(6)
    grid = [10.0, 20.0, 40.0]
    samples = [rng.standard_normal(400) * t**1.5 for t in grid]
    rep = report_from_samples(grid, samples)
    fit = fit_variance_scaling(rep.t_grid, rep.variances)
    assert fit["slope"] == pytest.approx(3.0, abs=0.3)


# -- compound Poisson ------------------------------------------------------------------------------

def test_compound_poisson_moments():
    rep = compound_poisson_experiment([50.0], 4000, seed=1)
    row = rep.rows[0]
    assert abs(row.mean) <= 3 * row.mean_se
    # Var = T E X^2 = T
    assert abs(row.var - 50.0) <= 3 * row.var_se


# -- Mecke ---------------------------------------------------------------------------------------------

def test_mecke_constant_function():
    res = mecke_check("one", DISC, 5.0, 1000, seed=1)
    assert res.rhs == pytest.approx(5.0 * math.pi)
    assert res.equal_within(3.0)


@pytest.mark.parametrize("h", MECKE_CATALOGUE)
def test_mecke_catalogue(h):
    res = mecke_check(h, DISC, 5.0, 1500, seed=11)
    assert abs(res.lhs - res.rhs) <= 3 * res.pooled_se


def test_mecke_zero_intensity():
    res = mecke_check("nn_distance_capped", DISC, 0.0, 10, seed=1)
    assert res.lhs == 0.0 and res.rhs == 0.0


def test_mecke_unknown_function():
    with pytest.raises(ArgumentError):
        mecke_check("h42", DISC, 1.0, 2, 0)


def test_check_result_arithmetic():
    r = CheckResult(1.0, 1.5, 0.3, 0.4)
    assert r.pooled_se == pytest.approx(0.5)
    assert r.margin == pytest.approx(0.5)
    assert r.equal_within(1.0) and not r.equal_within(0.9)
    assert CheckResult(2.0, 1.0, 0.3, 0.4).inequality_holds(3.0)
    assert not CheckResult(3.0, 1.0, 0.3, 0.4).inequality_holds(3.0)


# -- Poincaré ---------------------------------------------------------------------------------------------

def test_poincare_count_is_tight_at_p2():
    box = ConvexBody.box([0.0, 0.0], [3.0, 2.0])
    res = poincare_check("count", 2.0, box, 1.0, 4000, seed=2)
    assert res.rhs == pytest.approx(6.0)
    assert res.equal_within(3.0)


def test_poincare_onng():
    body = ConvexBody.box([0.0], [30.0])
    res = poincare_check(FunctionalSpec.power("onng", 0.3), 1.5, body, 1.0, 600, seed=3)
    assert res.inequality_holds(3.0)


def test_poincare_gilbert():
    body = ConvexBody.box([0.0, 0.0], [5.0, 5.0])
    res = poincare_check(FunctionalSpec.power("gilbert", 1.0, epsilon=1.0), 2.0, body, 1.0, 600, seed=4)
    assert res.inequality_holds(3.0)


@pytest.mark.parametrize("p", [0.5, 2.5])
def test_poincare_p_range(p):
    with pytest.raises(ArgumentError):
        poincare_check("count", p, SQUARE, 1.0, 2, 0)


# -- conditional add-one cost --------------------------------------------------------------------------

def test_conditional_last_mark_is_deterministic():
    spec = FunctionalSpec.power("onng", 0.5)
    cfg = sample_poisson(ConvexBody.box([0.0], [20.0]), 1.0, True, RngStream(9))
    probe = [10.0]
    a = conditional_cost_estimator(spec, cfg, probe, 1.0, 5, seed=1)
    b = conditional_cost_estimator(spec, cfg, probe, 1.0, 5, seed=2)
    assert a == b == pytest.approx(abs(add_one_cost_oracle(spec, cfg, probe, 1.0).first_order))


def test_conditional_single_inner_replicate_is_one_oracle_call():
    spec = FunctionalSpec.power("onng", 0.5)
    body = ConvexBody.box([0.0], [20.0])
    cfg = sample_poisson(body, 1.0, True, RngStream(9))
    s = 0.4
    est = conditional_cost_estimator(spec, cfg, [7.5], s, 1, seed=3)
    # rebuild the single resampled configuration by hand
    past = cfg.subset(cfg.marks < s)
    fut = sample_poisson(body, 1.0 - s, True, RngStream(3, derive_stream_id(STREAM_TAGS["conditional"], 0, 0)))
    full = MarkedPointConfig(
        np.vstack([past.positions, fut.positions]), body, np.concatenate([past.marks, s + (1 - s) * fut.marks])
    )
    assert est == pytest.approx(abs(add_one_cost_oracle(spec, full, [7.5], s).first_order), rel=1e-12)


def test_conditional_envelope():
    # C is fitted on s in {0.1, 1}; the held-out s = 0.01 must respect C (s^(-a/d) ∧ t^a)
    alpha, t = 0.5, 50.0
    spec = FunctionalSpec.power("onng", alpha)
    body = ConvexBody.box([0.0], [t])
    envelope = lambda s: min(s ** (-alpha), t**alpha)
    est = {}
    for s in (0.01, 0.1, 1.0):
        vals = []
        for k in range(30):
            cfg = sample_poisson(body, 1.0, True, RngStream(5, k))
            vals.append(conditional_cost_estimator(spec, cfg, [t / 2], s, 10, seed=k))
        est[s] = float(np.mean(vals))
    c = max(est[s] / envelope(s) for s in (0.1, 1.0))
    assert est[0.01] <= c * envelope(0.01)


def test_conditional_argument_checks():
    spec = FunctionalSpec.power("onng", 0.5)
    cfg = sample_poisson(SQUARE, 5.0, True, RngStream(1))
    with pytest.raises(ArgumentError):
        conditional_cost_estimator(spec, cfg, [0.5, 0.5], 0.0, 2, 0)
    with pytest.raises(ArgumentError):
        conditional_cost_estimator(FunctionalSpec.power("rst", 1.0), cfg, [0.5, 0.5], 0.5, 2, 0)
