import mpmath as mp
import numpy as np
import pytest

from plspoly.model import SyntheticSpec, fixture_problem, generate, spectral


@pytest.fixture
def fixture_data():
    """``X = diag(sqrt 2, 1)``, ``Y = (1, 1)``: lambda = (2, 1), p_hat = (1, 1)."""
    return spectral(fixture_problem())


def random_spectral(seed, n=9, p=7, rank=5, rate=0.7, noise_sd=0.1, **kw):
    spec = SyntheticSpec(n=n, p=p, rank=rank, geometric_rate=rate, scale=3.0,
                         noise_sd=noise_sd, seed=seed, **kw)
    return spectral(generate(spec))


@pytest.fixture
def geometric_data():
    return random_spectral(11)


@pytest.fixture
def csv_pair(tmp_path):
    x = tmp_path / "X.csv"
    y = tmp_path / "Y.csv"
    x.write_text(f"{float(np.sqrt(2.0))!r},0\n0,1\n")
    y.write_text("1\n1\n")
    return x, y


def exact_residual_values(lam, ph, k, dps=60):
    """Oracle: minimize sum (1 + sum_m c_m lam^m)^2 ph^2 in high precision.

    The normal equations of the monomial coefficients are solved with mpmath;
    this shares no code with either route under test.
    """
    with mp.workdps(dps):
        lam_m = [mp.mpf(float(v)) for v in lam]
        w = [mp.mpf(float(v)) ** 2 for v in ph]
        a = mp.matrix(k, k)
        b = mp.matrix(k, 1)
        for i in range(k):
            for j in range(k):
                a[i, j] = mp.fsum(wi * li ** (i + j + 2) for wi, li in zip(w, lam_m))
            b[i] = -mp.fsum(wi * li ** (i + 1) for wi, li in zip(w, lam_m))
        c = mp.lu_solve(a, b)
        vals = [1 + mp.fsum(c[m] * li ** (m + 1) for m in range(k)) for li in lam_m]
        return np.array([float(v) for v in vals])
