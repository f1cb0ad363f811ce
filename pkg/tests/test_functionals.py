import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rggclt.errors import ArgumentError, DegenerateInputError, NumericError
from rggclt.functionals import (
    FunctionalSpec,
    add_one_cost,
    add_one_cost_fast,
    add_one_cost_oracle,
    evaluate,
    functional_value,
    gilbert_first_cost_closed_form,
    gilbert_second_cost_closed_form,
    onng_L_term,
    onng_L_term_from_oracle,
    onng_radius,
    onng_radius_brute,
    probe_sweep,
    second_add_one_cost,
    write_sweep_csv,
)
from rggclt.geometry import ConvexBody, cone_cover
from rggclt.graphs import build_graph
from rggclt.sampling import MarkedPointConfig, RngStream, add_point, sample_poisson

SQUARE = ConvexBody.box([0.0, 0.0], [1.0, 1.0])
LINE = ConvexBody.box([-10.0], [10.0])


def marked(points, marks, body=None):
    pos = np.asarray(points, dtype=float)
    if pos.ndim == 1:
        pos = pos[:, None]
    return MarkedPointConfig(pos, body or (LINE if pos.shape[1] == 1 else SQUARE), np.asarray(marks, dtype=float))


def random_config(n, seed, marked=True, body=SQUARE):
    return sample_poisson(body, n / body.volume, marked, RngStream(seed))


SPECS = {
    "onng": FunctionalSpec.power("onng", 0.5),
    "gilbert": FunctionalSpec.power("gilbert", 1.0, epsilon=0.15),
    "knn": FunctionalSpec.phi_weight("knn", "inv_power", 0.5, k=3),
    "rst": FunctionalSpec.power("rst", 1.0),
}


# -- specs and evaluation -----------------------------------------------------------

def test_spec_validation():
    with pytest.raises(ArgumentError):
        FunctionalSpec.power("gilbert", 1.0)
    with pytest.raises(ArgumentError):
        FunctionalSpec.power("knn", 1.0)
    with pytest.raises(ArgumentError):
        FunctionalSpec.phi_weight("rst", "log")
    with pytest.raises(ArgumentError):
        FunctionalSpec.power("voronoi", 1.0)


def test_weights_zero_length_is_absent():
    spec = FunctionalSpec.phi_weight("rst", "inv_power", 2.0)
    assert list(spec.weights([0.0, 2.0])) == [0.0, 0.25]
    assert FunctionalSpec.phi_weight("rst", "exp").weight_of(1.0) == pytest.approx(math.exp(-1))


def test_nonfinite_weight_is_numeric_error():
    spec = FunctionalSpec.power("rst", 1.0)
    with pytest.raises(NumericError):
        spec.weights([float("inf")])


def test_empty_graph_evaluates_to_zero():
    empty = MarkedPointConfig(np.zeros((0, 2)), SQUARE, np.zeros(0))
    for spec in (SPECS["onng"], SPECS["gilbert"], SPECS["rst"]):
        assert functional_value(spec, empty) == 0.0


def test_gilbert_two_points():
    spec = FunctionalSpec.power("gilbert", 2.0, epsilon=1.0)
    cfg = MarkedPointConfig(np.array([[0.1, 0.1], [0.1, 0.6]]), SQUARE)
    assert functional_value(spec, cfg) == pytest.approx(0.25, abs=1e-15)


def test_family_mismatch():
    cfg = random_config(20, 1)
    with pytest.raises(ArgumentError):
        evaluate(SPECS["onng"], build_graph("rst", cfg))


def test_onng_length_by_direct_recomputation():
    cfg = random_config(100, 2)
    total = 0.0
    for v in range(cfg.n):
        earlier = cfg.marks < cfg.marks[v]
        if earlier.any():
            total += np.min(np.linalg.norm(cfg.positions[earlier] - cfg.positions[v], axis=1))
    assert functional_value(FunctionalSpec.power("onng", 1.0), cfg) == pytest.approx(total, rel=1e-12)


# -- first-order add-one cost ---------------------------------------------------------

def test_onng_empty_config_cost_zero():
    empty = MarkedPointConfig(np.zeros((0, 2)), SQUARE, np.zeros(0))
    assert add_one_cost_oracle(SPECS["onng"], empty, [0.5, 0.5], 0.3).first_order == 0.0


def test_gilbert_three_point_hand_case():
    cfg = MarkedPointConfig(np.array([[0.0], [0.5], [2.0]]), LINE)
    spec = FunctionalSpec.power("gilbert", 2.0, epsilon=1.0)
    # neighbours of 0.2 within 1 are 0 and 0.5: 0.2^2 + 0.3^2
    res = add_one_cost_oracle(spec, cfg, [0.2])
    assert res.first_order == pytest.approx(0.04 + 0.09, abs=1e-15)
    assert gilbert_first_cost_closed_form(cfg, [0.2], 1.0, 2.0) == pytest.approx(0.13, abs=1e-15)


def test_onng_far_late_probe_only_own_edge():
    cfg = random_config(60, 3)
    res = add_one_cost_fast(SPECS["onng"], cfg, SPECS["onng"].build(cfg), [0.5, 0.5], 1.0)
    assert res.rewired_contributions == ()
    assert res.first_order == res.own_edge_term


def test_probe_mark_required():
    with pytest.raises(ArgumentError):
        add_one_cost_oracle(SPECS["onng"], random_config(10, 1), [0.5, 0.5])


def test_probe_on_existing_point_is_degenerate():
    cfg = random_config(30, 4)
    with pytest.raises(DegenerateInputError):
        add_one_cost_oracle(SPECS["onng"], cfg, cfg.positions[0], 0.123456)


@pytest.mark.parametrize("family", ["onng", "gilbert", "knn", "rst"])
def test_fast_equals_oracle(family):
    spec = SPECS[family]
    rng = np.random.default_rng(17)
    for rep in range(30):
        cfg = random_config(200, 1000 + rep, marked=(family == "onng"))
        graph = spec.build(cfg)
        x = rng.uniform(0, 1, 2)
        m = float(rng.uniform()) if family == "onng" else None
        fast = add_one_cost_fast(spec, cfg, graph, x, m)
        oracle = add_one_cost_oracle(spec, cfg, x, m)
        assert fast.first_order == pytest.approx(oracle.first_order, rel=1e-10, abs=1e-12)
        assert fast.used_oracle == (family == "knn")
        assert add_one_cost(spec, cfg, x, m, graph) == fast.first_order


@pytest.mark.parametrize("phi,a", [("inv_power", 0.5), ("inv_power", 2.0), ("exp", 1.0)])
@pytest.mark.parametrize("family", ["knn", "rst"])
def test_costs_nonnegative_for_decreasing_weights(family, phi, a):
    spec = FunctionalSpec.phi_weight(family, phi, a, **({"k": 2} if family == "knn" else {}))
    rng = np.random.default_rng(3)
    for rep in range(20):
        cfg = random_config(80, 2000 + rep, marked=False)
        x = rng.uniform(0, 1, 2)
        assert add_one_cost_oracle(spec, cfg, x).first_order >= 0


def test_rst_length_cost_can_be_negative():
    # with increasing weights the shortcut through x can outweigh its own edge
    cfg = MarkedPointConfig(np.array([[1.0, 0.5], [1.0, -0.55]]), ConvexBody.box([-2, -2], [2, 2]))
    res = add_one_cost_oracle(SPECS["rst"], cfg, [0.95, 0.0])
    assert len(res.rewired_contributions) == 2 and res.first_order < 0


# -- second-order add-one cost --------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4), st.floats(0.05, 0.6), st.floats(0.2, 2.0))
def test_gilbert_second_cost_closed_form(coords, eps, alpha):
    cfg = random_config(40, 5, marked=False)
    spec = FunctionalSpec.power("gilbert", alpha, epsilon=eps)
    x, y = np.array(coords[:2]), np.array(coords[2:])
    if np.allclose(x, y) or np.min(np.linalg.norm(cfg.positions - x, axis=1)) == 0:
        return
    d2 = second_add_one_cost(spec, cfg, x, y)
    assert d2 == gilbert_second_cost_closed_form(x, y, eps, alpha)


@pytest.mark.parametrize("family", ["onng", "gilbert", "knn", "rst"])
def test_second_cost_symmetric(family):
    spec = SPECS[family]
    rng = np.random.default_rng(23)
    for rep in range(25):
        cfg = random_config(60, 3000 + rep, marked=(family == "onng"))
        x, y = rng.uniform(0, 1, (2, 2))
        mx, my = (rng.uniform(size=2) if family == "onng" else (None, None))
        a = second_add_one_cost(spec, cfg, x, y, mx, my)
        b = second_add_one_cost(spec, cfg, y, x, my, mx)
        assert a == pytest.approx(b, abs=1e-10)


def test_second_cost_fast_equals_oracle():
    spec = SPECS["rst"]
    cfg = random_config(80, 6, marked=False)
    x, y = [0.31, 0.72], [0.35, 0.69]
    assert second_add_one_cost(spec, cfg, x, y) == pytest.approx(second_add_one_cost(spec, cfg, x, y, oracle=True), abs=1e-12)


def test_second_cost_vanishes_across_dense_cluster():
    # an early-marked grid shields two late probes at opposite ends of a long strip
    body = ConvexBody.box([0.0, 0.0], [10.0, 1.0])
    gx, gy = np.meshgrid(np.linspace(0.05, 9.95, 100), np.linspace(0.05, 0.95, 10))
    rng = np.random.default_rng(0)
    pos = np.column_stack([gx.ravel(), gy.ravel()]) + rng.uniform(-1e-3, 1e-3, (1000, 2))
    cfg = MarkedPointConfig(pos, body, rng.uniform(0, 0.1, 1000))
    spec = FunctionalSpec.power("onng", 0.5)
    x, y = [0.5, 0.52], [9.5, 0.47]
    r = onng_radius(cfg, x, 0.1)
    assert np.linalg.norm(np.subtract(x, y)) > 3 * r
    assert second_add_one_cost(spec, cfg, x, y, 0.8, 0.9, oracle=True) == 0.0


# -- cone radius and L term ------------------------------------------------------------

def test_radius_without_early_points_is_diameter():
    cfg = random_config(30, 7)
    assert onng_radius(cfg, [0.5, 0.5], 0.0) == pytest.approx(SQUARE.diameter)
    assert onng_radius_brute(cfg, [0.5, 0.5], 0.0) == pytest.approx(SQUARE.diameter)


@pytest.mark.parametrize("d", [1, 2])
def test_radius_with_one_point_per_cone(d):
    r = 0.3
    body = ConvexBody.box([-2.0] * d, [2.0] * d)
    axes = cone_cover(d).axes
    cfg = MarkedPointConfig(r * axes, body, np.zeros(len(axes)) + np.arange(len(axes)) * 1e-9)
    assert onng_radius(cfg, np.zeros(d), 0.5) == pytest.approx(r, abs=1e-12)
    assert onng_radius_brute(cfg, np.zeros(d), 0.5) == pytest.approx(r, abs=1e-12)


def test_radius_indexed_equals_brute():
    rng = np.random.default_rng(8)
    for rep in range(100):
        cfg = random_config(rng.integers(5, 150), 4000 + rep)
        x = rng.uniform(0, 1, 2)
        theta = float(rng.uniform())
        r = onng_radius(cfg, x, theta)
        assert r == onng_radius_brute(cfg, x, theta)
        assert 0 < r <= SQUARE.diameter


def test_L_term_no_later_points():
    cfg = marked([[0.2, 0.2], [0.8, 0.8]], [0.1, 0.2])
    assert onng_L_term(SPECS["onng"], cfg, [0.5, 0.5], 0.9) == 0.0


def test_L_term_hand_case():
    cfg = marked([0.0, 4.0], [0.1, 0.9])
    spec = FunctionalSpec.power("onng", 1.5)
    # the mark-.9 point moves from the anchor (length 4) to x=3
    assert onng_L_term(spec, cfg, [3.0], 0.5) == pytest.approx(4.0**1.5)


def test_L_term_matches_oracle_extraction():
    rng = np.random.default_rng(9)
    for rep in range(100):
        cfg = random_config(60, 5000 + rep)
        spec = FunctionalSpec.power("onng", float(rng.choice([0.3, 0.5, 1.0])))
        x, s = rng.uniform(0, 1, 2), float(rng.uniform())
        assert onng_L_term(spec, cfg, x, s) == pytest.approx(onng_L_term_from_oracle(spec, cfg, x, s), rel=1e-12)


def test_cost_bounded_by_radius_and_L():
    rng = np.random.default_rng(10)
    for rep in range(100):
        alpha = float(rng.choice([0.3, 0.5]))
        spec = FunctionalSpec.power("onng", alpha)
        cfg = random_config(100, 6000 + rep)
        x, s = rng.uniform(0, 1, 2), float(rng.uniform())
        cost = add_one_cost(spec, cfg, x, s)
        assert abs(cost) <= onng_radius(cfg, x, s) ** alpha + onng_L_term(spec, cfg, x, s) + 1e-12


def test_L_term_wrong_family():
    with pytest.raises(ArgumentError):
        onng_L_term(SPECS["rst"], random_config(5, 1, marked=False), [0.5, 0.5], 0.5)


# -- probe sweeps ------------------------------------------------------------------------

def test_probe_sweep_csv():
    cfg = random_config(50, 11)
    rows = probe_sweep(SPECS["onng"], cfg, [[0.2, 0.3], [0.7, 0.1]], [0.4, 0.6], partner=[0.5, 0.5], partner_mark=0.5)
    buf = io.StringIO()
    write_sweep_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "probe_x0,probe_x1,mark,D1,D2,R_theta,L_term"
    assert len(lines) == 3
    assert rows[0].d1 == add_one_cost(SPECS["onng"], cfg, [0.2, 0.3], 0.4)
