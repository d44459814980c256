import math

import mpmath as mp
import numpy as np
import pytest
from numpy.testing import assert_allclose

from plspoly.errors import CapabilityError
from plspoly.model import RegressionProblem, SyntheticSpec, fixture_spec, generate, spectral
from plspoly.pls_core import fit_ls, fit_pls
from plspoly.residual_poly import residual_family
from plspoly.diagnostics import (
    check_filter_theorems,
    check_global_shrinkage,
    check_gram,
    check_mse,
    check_risk,
    closed_form_factors_r_minus_1,
    distance_to_one_bound,
    empirical_risk_bound,
    empirical_risk_closed_form,
    expected_rate_bound,
    filter_factors,
    gram_determinant_terms,
    mse_decompositions,
    rate_bound,
    risk_reports,
    ritz_consistency,
    truncation_caveat,
)

from conftest import exact_residual_values, random_spectral


def failed(checks):
    return [c for c in checks if not c.passed]


class TestFixture:
    def test_filter_factors(self, fixture_data):
        ffs = filter_factors(residual_family(fixture_data), fixture_data)
        assert_allclose(ffs[1].factors, [1.2, 0.6], rtol=1e-14)
        assert_allclose(ffs[1].truncated, [1.0, 0.6], rtol=1e-14)
        assert_allclose(ffs[2].factors, [1.0, 1.0], rtol=1e-14)

    def test_closed_form_and_constant(self, fixture_data):
        f, c = closed_form_factors_r_minus_1(fixture_data)
        assert_allclose(f, [1.2, 0.6], rtol=1e-14)
        assert_allclose(c, 0.4, rtol=1e-14)

    def test_distance_to_one_bound_is_tight(self, fixture_data):
        b = distance_to_one_bound(fixture_data, 1)
        assert_allclose(b, [0.2, 0.8], rtol=1e-14)

    def test_risk_report(self, fixture_data):
        path = fit_pls(fixture_data, 2)
        rep = risk_reports(fixture_data, path)[1]
        assert_allclose(rep.empirical_risk_direct, 0.2, rtol=1e-14)
        assert_allclose(rep.empirical_risk_formula, 0.2, rtol=1e-14)
        assert_allclose(rep.pcr_risk, 1.0, rtol=1e-14)
        assert_allclose(rep.upper_bound, 0.25, rtol=1e-14)
        assert_allclose(rep.rate_bound, 0.25, rtol=1e-14)
        assert_allclose(rep.delta, 0.5, rtol=1e-14)
        assert_allclose(rep.fit_gap_ls, 0.2, rtol=1e-14)
        assert not failed(check_risk(fixture_data, risk_reports(fixture_data, path)))

    def test_noiseless_mse(self):
        s = spectral(generate(fixture_spec(noise_sd=0.0)))
        path = fit_pls(s, 2)
        rep = mse_decompositions(s, path, residual_family(s))[1]
        for value in (rep.mse_direct, rep.mse_identity, rep.mse_alt, rep.mse_filter):
            assert_allclose(value, 0.2, rtol=1e-13)
        assert_allclose(rep.noise_like, 0.0, atol=1e-15)
        assert_allclose(rep.mse_truncated, 0.16, rtol=1e-13)


class TestFilterTheorems:
    @pytest.mark.parametrize("seed", range(6))
    def test_no_violations(self, seed):
        s = random_spectral(seed, rank=6, n=9, p=8, rate=0.8)
        ffs = filter_factors(residual_family(s), s)
        assert not failed(check_filter_theorems(ffs, s))
        for ff in ffs[1:]:
            assert ritz_consistency(ff, s.lambdas) < 1e-10

    def test_factor_expands_at_odd_steps(self, geometric_data):
        ffs = filter_factors(residual_family(geometric_data), geometric_data)
        for ff in ffs[1 : geometric_data.r]:
            assert (ff.factors[0] > 1.0) == (ff.k % 2 == 1)
            assert 0.0 < ff.factors[-1] < 1.0

    def test_per_eigenvalue_cluster_bound_fails(self):
        # lambda_2 sits within 5% of lambda_3, yet f_2 at k = 2 exceeds 1 + 0.05^2:
        # a Ritz value falls between them. The spectrum-wide bound 1 + 9^2 holds.
        lam = np.array([10.0, 1.05, 1.0])
        s = spectral(RegressionProblem(np.diag(np.sqrt(lam)), np.ones(3)))
        f = 1.0 - exact_residual_values(lam, np.ones(3), 2)
        assert f[1] > 1.0 + 0.05**2 + 0.01
        ffs = filter_factors(residual_family(s), s)
        assert_allclose(ffs[2].factors, f, rtol=1e-10)
        assert not failed(check_filter_theorems(ffs, s))

    def test_closed_form_needs_simple_spectrum(self):
        s = spectral(RegressionProblem(np.diag([2.0, 2.0, 1.0]), np.ones(3)))
        with pytest.raises(CapabilityError):
            closed_form_factors_r_minus_1(s)

    def test_budget_zero_skips_weights(self, geometric_data):
        ffs = filter_factors(residual_family(geometric_data), geometric_data)
        checks = check_filter_theorems(ffs, geometric_data, weights_available=False)
        dist = [c for c in checks if c.name == "distance_to_one"]
        assert dist and all(not c.evaluated for c in dist)


class TestShrinkage:
    @pytest.mark.parametrize("seed", range(6))
    def test_chain(self, seed):
        s = random_spectral(seed, rank=6, n=9, p=8)
        path = fit_pls(s, s.r)
        rep = check_global_shrinkage(path, fit_ls(s))
        assert not failed(rep.checks)
        assert np.all(np.diff(rep.norms_sq) >= -1e-12 * rep.ls_norm_sq)


class TestRisk:
    @pytest.mark.parametrize("seed", range(6))
    def test_checks_pass(self, seed):
        s = random_spectral(seed, rank=6, n=9, p=8, noise_sd=0.5)
        path = fit_pls(s, s.r)
        assert not failed(check_risk(s, risk_reports(s, path)))

    def test_closed_form_matches_direct(self, geometric_data):
        s = geometric_data
        path = fit_pls(s, s.r)
        for k in range(s.r + 1):
            assert_allclose(empirical_risk_closed_form(s, k), path.residual_sq_by_k[k],
                            rtol=1e-10, atol=1e-12 * s.response_sq)

    def test_bounds_order(self, geometric_data):
        s = geometric_data
        for k in range(s.r):
            assert empirical_risk_bound(s, k) <= rate_bound(s, k) * (1 + 1e-12)

    def test_expected_rate_needs_truth(self, fixture_data):
        assert expected_rate_bound(fixture_data, 1) is None
        s = spectral(generate(fixture_spec(noise_sd=1.0)))
        # [(1/2)^2 (lambda_2 beta~_2^2 + sigma^2) + 0] / 2 = 0.25 * 2 / 2
        assert_allclose(expected_rate_bound(s, 1), 0.25, rtol=1e-13)

    def test_budget_zero_skips_formula(self, geometric_data):
        path = fit_pls(geometric_data, 3)
        reps = risk_reports(geometric_data, path, budget=0)
        assert all(r.empirical_risk_formula is None for r in reps)
        checks = check_risk(geometric_data, reps)
        assert any(not c.evaluated for c in checks if c.name == "risk_closed_form")


def gram_oracle(s, k, dps=50):
    """Signal and noise terms from the monomial Krylov space in high precision."""
    r = s.r
    with mp.workdps(dps):
        lam = [mp.mpf(float(v)) for v in s.lambdas]
        ph = [mp.mpf(float(v)) for v in s.p_hat[:r]]
        cols = mp.matrix(r, k)
        for i in range(r):
            for a in range(k):
                cols[i, a] = lam[i] ** (a + 1) * ph[i]
        q, _ = mp.qr(cols)
        q = q[:, :k]
        p = mp.matrix([mp.mpf(float(v)) for v in s.p_signal[:r]])
        e = mp.matrix([mp.mpf(float(v)) for v in s.eps_tilde[:r]])
        res_p = p - q * (q.T * p)
        proj_e = q * (q.T * e)
        return float(mp.fsum(v**2 for v in res_p)), float(mp.fsum(v**2 for v in proj_e))


class TestMse:
    @pytest.mark.parametrize("seed", range(5))
    def test_identities(self, seed):
        s = random_spectral(seed, rank=6, n=9, p=8, noise_sd=0.3)
        path = fit_pls(s, s.r)
        reps = mse_decompositions(s, path, residual_family(s))
        assert not failed(check_mse(s, reps))

    def test_requires_truth(self, fixture_data):
        path = fit_pls(fixture_data, 2)
        with pytest.raises(CapabilityError):
            mse_decompositions(fixture_data, path, residual_family(fixture_data))

    @pytest.mark.parametrize("seed", range(4))
    def test_gram_against_high_precision(self, seed):
        s = random_spectral(seed, rank=6, n=9, p=8, noise_sd=0.3, rate=0.6)
        polys = residual_family(s)
        for k in range(1, s.r):
            t = gram_determinant_terms(s, k, polys[k])
            sig, noise = gram_oracle(s, k)
            assert abs(t.signal_det - sig) <= 1e-8 * s.response_sq
            assert abs(t.noise_det - noise) <= 1e-8 * s.response_sq

    def test_gram_sums_to_mse(self, geometric_data):
        s = geometric_data
        path = fit_pls(s, s.r)
        polys = residual_family(s)
        reps = mse_decompositions(s, path, polys)
        terms = [gram_determinant_terms(s, k, polys[k]) for k in range(1, s.r + 1)]
        assert not failed(check_gram(s, terms, {r.k: r.mse_direct for r in reps}))

    @pytest.mark.parametrize("rate", [0.3, 0.4, 0.5])
    def test_gram_steep_spectrum(self, rate):
        # Pivot loss far beyond double precision; the extended-precision
        # determinant ratio must still match the projector.
        spec = SyntheticSpec(n=14, p=12, rank=10, geometric_rate=rate, noise_sd=0.1, seed=3)
        s = spectral(generate(spec))
        polys = residual_family(s)
        for k in (6, 7, 8):
            t = gram_determinant_terms(s, k, polys[k])
            sig, noise = gram_oracle(s, k, dps=80)
            assert t.pivot_loss > 1e3
            assert abs(t.signal_det - sig) <= 1e-12 * s.response_sq
            assert abs(t.noise_det - noise) <= 1e-12 * s.response_sq

    def test_gram_is_thread_safe(self):
        from concurrent.futures import ThreadPoolExecutor

        specs = [SyntheticSpec(n=14, p=12, rank=10, geometric_rate=0.4, noise_sd=0.1, seed=i)
                 for i in range(8)]
        data = [spectral(generate(spec)) for spec in specs]

        def job(s):
            return [gram_determinant_terms(s, k).signal_det for k in range(5, 9)]

        serial = [job(s) for s in data]
        with ThreadPoolExecutor(max_workers=8) as pool:
            threaded = list(pool.map(job, data))
        assert threaded == serial

    def test_pivot_warning_on_tight_clusters(self):
        spec = SyntheticSpec(n=12, p=12, rank=10, geometric_rate=0.4, noise_sd=0.1, seed=2)
        s = spectral(generate(spec))
        t = gram_determinant_terms(s, 9)
        assert t.pivot_loss > 1e6 and "pivot loss" in t.warning

    def test_truncation_caveat_detects_witness(self):
        from plspoly.verify import verification_spec

        _, spec = verification_spec(20240607, 6)
        s = spectral(generate(spec))
        path = fit_pls(s, s.r)
        assert truncation_caveat(mse_decompositions(s, path, residual_family(s))) == 5
