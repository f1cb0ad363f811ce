import json

import pytest

from rggclt.errors import ArgumentError
from rggclt.verify import FAULTS, SUITES, SuiteResult, oracle_cases, run_suites

SMALL = {"oracle": 8, "dbyl": 60, "product": 8, "nonneg": 10, "mecke": 300, "poincare": 300}


@pytest.fixture(scope="module")
def clean_run():
    return {r.name: r for r in run_suites(seed=0, sizes=SMALL)}


@pytest.mark.parametrize("name", SUITES)
def test_small_suites_pass(clean_run, name):
    res = clean_run[name]
    assert isinstance(res, SuiteResult)
    assert res.checks, name
    assert res.passed, [c.label for c in res.checks if not c.passed]


def test_suite_report_is_json_serializable(clean_run):
    for res in clean_run.values():
        payload = json.loads(json.dumps(res.to_dict()))
        assert payload["suite"] == res.name
        assert len(payload["checks"]) == len(res.checks)


@pytest.mark.parametrize("name", ["oracle", "product"])
def test_injected_fault_is_caught_by_exact_suites(name):
    (res,) = run_suites([name], seed=0, fault="edge_weight", sizes=SMALL)
    assert not res.passed


@pytest.mark.parametrize("name", ["dbyl", "nonneg", "mecke", "poincare"])
def test_injected_fault_leaves_inequality_suites_alone(clean_run, name):
    # inequalities with slack cannot see a relative perturbation of 1e-6
    (res,) = run_suites([name], seed=0, fault="edge_weight", sizes=SMALL)
    assert res.passed == clean_run[name].passed


def test_subset_selection():
    results = run_suites(["nonneg", "product"], seed=1, sizes=SMALL)
    assert [r.name for r in results] == ["nonneg", "product"]


def test_unknown_suite_and_fault():
    with pytest.raises(ArgumentError):
        run_suites(["everything"])
    with pytest.raises(ArgumentError):
        run_suites(["nonneg"], fault="cosmic_ray")
    assert FAULTS == ("edge_weight",)


def test_oracle_cases_cover_every_family():
    assert set(oracle_cases(2)) == {"onng", "gilbert", "knn", "rst"}
    for spec, body, _ in oracle_cases(2).values():
        assert body.volume == pytest.approx(200.0)
