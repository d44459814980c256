import pytest

from plspoly.model import generate, spectral
from plspoly.verify import (
    FAMILIES,
    SUITES,
    evaluate_problem,
    fixture_checks,
    run_verification,
    verification_spec,
)


def test_fixture_checks_pass():
    assert all(c.passed for c in fixture_checks())


def test_family_sizes():
    for i in range(60):
        family, spec = verification_spec(7, i)
        assert family == FAMILIES[i % len(FAMILIES)]
        s = spectral(generate(spec))
        assert spec.n <= 20 and spec.p <= 20 and s.r <= 10


def test_family_is_deterministic():
    assert verification_spec(3, 5) == verification_spec(3, 5)
    assert verification_spec(3, 5) != verification_spec(4, 5)


@pytest.mark.parametrize("index", range(12))
def test_each_family_passes(index):
    _, spec = verification_spec(99, index)
    tagged, _ = evaluate_problem(spectral(generate(spec)), SUITES, spec=spec)
    bad = [(suite, c) for suite, c in tagged if not c.passed]
    assert not bad, bad


def test_fault_is_detected():
    report = run_verification(n_problems=3, seed=5, inject_fault=True)
    assert not report.passed
    names = {f.check.name for f in report.failures}
    assert "orthogonality" in names
    assert all(f.index == 0 for f in report.failures)


def test_suite_selection_and_order():
    report = run_verification(n_problems=4, seed=1, suites=("shrinkage", "fixture"))
    assert {f.suite for f in report.findings} == {"shrinkage", "fixture"}
    rows = report.summary()
    assert [r["suite"] for r in rows] == sorted((r["suite"] for r in rows), key=SUITES.index)
    again = run_verification(n_problems=4, seed=1, suites=("shrinkage", "fixture"), workers=1)
    assert again.summary() == rows


@pytest.mark.parametrize("seed, index", [(1, 46), (3, 4), (20240607, 74)])
def test_regressions(seed, index):
    """Repeated eigenvalues with n = r, and Ritz values converged to an eigenvalue."""
    _, spec = verification_spec(seed, index)
    tagged, _ = evaluate_problem(spectral(generate(spec)), SUITES, spec=spec)
    assert not [(suite, c) for suite, c in tagged if not c.passed]


def test_summary_separates_soft_checks():
    report = run_verification(n_problems=12, seed=2, suites=("mse", "filter-theorems"))
    rows = {r["identity"]: r for r in report.summary()}
    assert rows["gram_signal"]["hard"] and rows["gram_signal"]["soft_worst_deviation"] is not None
    assert not rows["distance_to_one"]["hard"]
