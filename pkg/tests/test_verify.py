import pytest

from gsjflow.verify import SUITES, run_suites

from .conftest import make_model


def test_all_suites_green_on_default_model():
    results = run_suites("all")
    expected = sum(len(checks) for checks in SUITES.values())
    assert len(results) == expected
    assert all(r.ok for r in results), [
        (r.suite, r.name, r.detail) for r in results if not r.ok]


def test_single_suite_selection():
    results = run_suites("tensor")
    assert {r.suite for r in results} == {"tensor"}


def test_unknown_suite_rejected():
    with pytest.raises(ValueError):
        run_suites("bogus")


def test_failure_reported_not_raised():
    hot = make_model(seed=140, channels=4, blocks=1, seq_len=8,
                     weight_scale=900.0)
    results = run_suites("flow", model=hot)
    assert any(not r.ok for r in results)
    assert all(r.detail for r in results if not r.ok)
