import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from plspoly.errors import InputError
from plspoly.linalg import (
    LogSum,
    determinant,
    log_determinant,
    log_vandermonde_sq,
    log_vandermonde_sq_rows,
    solve_spd,
    svd,
    vandermonde_sq,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(max_side=6):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda sh: arrays(np.float64, sh, elements=finite))


def cofactor_det(m):
    """Laplace expansion along the first row."""
    n = len(m)
    if n == 1:
        return m[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        total += (-1) ** j * m[0][j] * cofactor_det(minor)
    return total


class TestSvd:
    @given(matrices())
    @settings(max_examples=60, deadline=None)
    def test_reconstruction_and_orthogonality(self, a):
        dec = svd(a + 1e-3 * np.eye(*a.shape))
        scale = max(1.0, np.abs(a).max())
        assert_allclose(dec.reconstruct(), a + 1e-3 * np.eye(*a.shape), atol=1e-12 * scale * 10)
        n, p = a.shape
        assert_allclose(dec.left_vectors.T @ dec.left_vectors, np.eye(n), atol=1e-12)
        assert_allclose(dec.right_vectors.T @ dec.right_vectors, np.eye(p), atol=1e-12)
        assert np.all(np.diff(dec.singular_values) <= 0)

    def test_rank_threshold(self):
        a = np.outer([1.0, 2.0, 3.0], [1.0, -1.0])
        assert svd(a).rank == 1
        assert svd(np.zeros((3, 2))).rank == 0

    def test_sign_convention_deterministic(self):
        a = np.array([[3.0, 1.0], [1.0, 2.0], [0.0, 1.0]])
        d1, d2 = svd(a), svd(-(-a))
        assert_allclose(d1.left_vectors, d2.left_vectors)
        assert_allclose(d1.right_vectors, d2.right_vectors)

    @pytest.mark.parametrize("bad", [[[np.nan, 1.0]], [1.0, 2.0], [[]]])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(InputError):
            svd(bad)


class TestVandermonde:
    def test_matches_explicit_product(self):
        x = [3.0, -1.0, 0.5, 2.0]
        want = 1.0
        for a, b in itertools.combinations(x, 2):
            want *= (a - b) ** 2
        assert_allclose(vandermonde_sq(x), want, rtol=1e-13)

    def test_repeated_values_give_minus_inf(self):
        assert log_vandermonde_sq([1.0, 2.0, 1.0]) == -math.inf

    def test_single_value_is_one(self):
        assert vandermonde_sq([4.2]) == 1.0

    def test_rows_match_scalar(self):
        lam = np.array([5.0, 3.0, 2.5, 0.1])
        idx = np.array(list(itertools.combinations(range(4), 3)))
        rows = log_vandermonde_sq_rows(lam, idx)
        assert_allclose(rows, [log_vandermonde_sq(lam[i]) for i in idx], rtol=1e-14)

    def test_no_overflow_for_wide_spread(self):
        x = 10.0 ** np.arange(0, 200, 20)
        assert math.isfinite(log_vandermonde_sq(x))


class TestDeterminant:
    @given(st.integers(1, 5).flatmap(lambda n: arrays(np.float64, (n, n), elements=finite)))
    @settings(max_examples=80, deadline=None)
    def test_matches_cofactor_expansion(self, a):
        want = cofactor_det(a.tolist())
        scale = max(1.0, np.abs(a).max()) ** a.shape[0]
        assert abs(determinant(a) - want) <= 1e-10 * scale

    def test_sign_and_log(self):
        sign, logabs = log_determinant(np.diag([-2.0, 3.0]))
        assert sign == -1.0
        assert_allclose(logabs, math.log(6.0))

    def test_singular(self):
        assert determinant(np.ones((3, 3))) == 0.0

    def test_non_square(self):
        with pytest.raises(InputError):
            determinant(np.ones((2, 3)))


class TestSolveSpd:
    def test_matches_explicit_inverse(self):
        g = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]])
        b = np.array([1.0, -2.0, 0.5])
        assert_allclose(solve_spd(g, b), np.linalg.inv(g) @ b, rtol=1e-13)

    def test_singular_gives_least_norm(self):
        g = np.array([[1.0, 1.0], [1.0, 1.0]])
        b = np.array([2.0, 2.0])
        assert_allclose(solve_spd(g, b), [1.0, 1.0], rtol=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(InputError):
            solve_spd(np.array([[1.0, 2.0], [0.0, 1.0]]), [1.0, 1.0])


class TestLogSum:
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
    def test_matches_direct_sum(self, logs):
        want = math.fsum(math.exp(v) for v in logs)
        assert_allclose(LogSum.from_logs(logs).value, want, rtol=1e-12)

    def test_empty_is_zero(self):
        assert LogSum.from_logs([]).value == 0.0
        assert (LogSum() + LogSum(0.0)).value == 1.0


def test_svd_invariants_on_seeded_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n, p = rng.integers(1, 21, size=2)
        a = rng.standard_normal((n, p)) * 10.0 ** rng.uniform(-3, 3)
        dec = svd(a)
        scale = dec.singular_values[0]
        assert np.abs(dec.reconstruct() - a).max() <= 1e-13 * scale * max(n, p)
        assert np.abs(dec.left_vectors.T @ dec.left_vectors - np.eye(n)).max() <= 1e-13
        assert np.abs(dec.right_vectors.T @ dec.right_vectors - np.eye(p)).max() <= 1e-13
        assert np.all(np.diff(dec.singular_values) <= 0) and dec.rank == min(n, p)


def test_diagonal_fixture_svd():
    dec = svd(np.diag([np.sqrt(2.0), 1.0]))
    assert_allclose(dec.singular_values, [np.sqrt(2.0), 1.0], rtol=1e-15)
    assert_allclose(np.abs(dec.left_vectors), np.eye(2), atol=1e-15)
    assert dec.rank == 2
