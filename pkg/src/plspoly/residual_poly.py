"""Residual polynomials of PLS.

The residual polynomial ``Q_k`` (degree ``k``, ``Q_k(0) = 1``) satisfies
``Y - X beta_k = Q_k(X X^T) Y``. The family ``Q_0, Q_1, ...`` is orthogonal
for the discrete measure with atoms at the eigenvalues ``lambda_i`` and
masses ``lambda_i * p_hat_i^2``. Two independent routes are provided:

* :func:`residuals_by_recurrence` runs the Stieltjes procedure on that
  measure and normalizes the orthogonal polynomials at zero;
* :func:`residuals_by_formula` enumerates index tuples and mixes the
  polynomials ``prod_l (1 - x / lambda_{j_l})`` with weights proportional to
  ``prod p_hat^2 lambda^2 * Vandermonde^2``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.special import comb, logsumexp

from .checks import Check, rel_dev
from .errors import CapabilityError, InputError
from .linalg import log_vandermonde_sq_rows
from .model import DUPLICATE_EIGENVALUE_REL, SpectralData
from .pls_core import BREAKDOWN_REL, PlsPath, TruncatedPathWarning

DEFAULT_ENUM_BUDGET = 2_000_000


@dataclass(frozen=True)
class DiscreteMeasure:
    support: np.ndarray
    masses: np.ndarray
    zero_mass: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def degenerate(self) -> bool:
        return bool(self.total_mass == 0.0)

    @property
    def effective_size(self) -> int:
        """Number of distinct support points with positive mass."""
        lam = self.support[~self.zero_mass]
        if lam.size == 0:
            return 0
        tol = DUPLICATE_EIGENVALUE_REL * self.support[0]
        return 1 + int(np.sum(np.abs(np.diff(lam)) > tol))

    def moment(self, i: int) -> float:
        return float(np.sum(self.support**i * self.masses))


def measure_of(s: SpectralData) -> DiscreteMeasure:
    """The measure ``sum_j lambda_j p_hat_j^2 delta_{lambda_j}``."""
    ph = s.p_hat_eff
    return DiscreteMeasure(s.lambdas.copy(), s.lambdas * ph**2, s.zero_mass.copy())


# ---------------------------------------------------------------------------
# Polynomial objects


@dataclass(frozen=True)
class ResidualPolynomial:
    """``Q_k`` carried as values on the spectrum plus a way to evaluate it.

    Recurrence-route polynomials carry the Jacobi data (``alphas``,
    ``betas``: diagonal and off-diagonal of the order-``k`` Jacobi matrix of
    the measure) and their ``roots``, the Ritz values. Formula-route
    polynomials carry their :class:`WeightTable` instead.
    """

    degree: int
    support: np.ndarray
    values: np.ndarray
    alphas: Optional[np.ndarray] = None
    betas: Optional[np.ndarray] = None
    roots: Optional[np.ndarray] = None
    weights: Optional["WeightTable"] = None

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.degree == 0:
            return np.ones_like(x)
        if self.alphas is not None:
            return _eval_monic_ratio(self.alphas, self.betas, x)
        if self.weights is not None:
            return self.weights.evaluate(x)
        raise CapabilityError("polynomial carries no evaluation data")


def _eval_monic_ratio(alphas: np.ndarray, betas: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``pi_k(x) / pi_k(0)`` for the monic family with the given Jacobi data."""
    pts = np.concatenate([[0.0], x])
    prev = np.zeros_like(pts)
    cur = np.ones_like(pts)
    for j, a in enumerate(alphas):
        b2 = betas[j - 1] ** 2 if j > 0 else 0.0
        nxt = (pts - a) * cur - b2 * prev
        scale = max(np.max(np.abs(nxt)), np.max(np.abs(cur)))
        prev, cur = cur / scale, nxt / scale
    return cur[1:] / cur[0]


def constant_polynomial(support: np.ndarray) -> ResidualPolynomial:
    return ResidualPolynomial(0, support.copy(), np.ones_like(support),
                              alphas=np.zeros(0), betas=np.zeros(0), roots=np.zeros(0))


@dataclass(frozen=True)
class StieltjesRun:
    """Output of the discretized Stieltjes procedure.

    ``vectors[j][i] = sqrt(w_i) * p_j(x_i)`` on the positive-mass atoms,
    where ``p_j`` are the orthonormal polynomials of the measure; ``alphas``
    and ``betas`` are the diagonal and off-diagonal of its Jacobi matrix.
    """

    alphas: np.ndarray
    betas: np.ndarray
    vectors: list
    atoms: np.ndarray
    total_mass: float

    @property
    def breakdown(self) -> bool:
        return len(self.vectors) == self.alphas.size and self.betas.size < self.alphas.size

    def orthonormal_at_zero(self, k: int) -> float:
        """``p_k(0)`` by forward recurrence (stable outside the support)."""
        prev, cur = 0.0, 1.0 / math.sqrt(self.total_mass)
        for j in range(k):
            b_prev = self.betas[j - 1] if j > 0 else 0.0
            prev, cur = cur, (-self.alphas[j] * cur - b_prev * prev) / self.betas[j]
        return cur


def stieltjes(m: DiscreteMeasure, n_terms: int) -> StieltjesRun:
    """Discretized Stieltjes procedure on the positive-mass atoms of ``m``.

    Carried out on normalized value vectors (equivalently Lanczos on
    ``diag(support)``) with full reorthogonalization. Stops after
    ``n_terms`` diagonal coefficients or when the distinct support is
    exhausted, whichever comes first.
    """
    keep = m.masses > 0
    x = m.support[keep]
    w = m.masses[keep]
    if x.size == 0 or n_terms < 1:
        return StieltjesRun(np.zeros(0), np.zeros(0), [], keep, 0.0)
    basis = [np.sqrt(w / w.sum())]
    alphas: list[float] = []
    betas: list[float] = []
    for j in range(n_terms):
        qj = basis[-1]
        v = x * qj
        alphas.append(float(qj @ v))
        if j + 1 == n_terms:
            break
        before = np.linalg.norm(v)
        for _ in range(2):
            for b in basis:
                v = v - (b @ v) * b
        nrm = np.linalg.norm(v)
        if nrm <= BREAKDOWN_REL * before:
            break
        betas.append(float(nrm))
        basis.append(v / nrm)
    return StieltjesRun(np.array(alphas), np.array(betas), basis, keep, float(w.sum()))


def residuals_by_recurrence(
    m: DiscreteMeasure, k_max: int, warn: bool = True
) -> list[ResidualPolynomial]:
    """``Q_1 .. Q_K`` from the Stieltjes recurrence, ``K = min(k_max, distinct support)``.

    Values on positive-mass atoms are read off the orthonormal vectors:
    ``Q_k(x_i) = q_k[i] / (sqrt(w_i) p_k(0))``. This avoids the cancellation
    that evaluating the zero-normalized recurrence (or the Ritz product)
    suffers on wide spectra. Zero-mass atoms fall back to the recurrence.
    The terminal polynomial of a finished family vanishes on the support.

    A shorter list than requested means the family terminated; a
    :class:`TruncatedPathWarning` is emitted in that case.
    """
    if k_max < 0:
        raise InputError("k_max must be non-negative")
    run = stieltjes(m, k_max + 1)
    n_polys = min(k_max, run.alphas.size)
    keep = run.atoms
    sqrt_w = np.sqrt(m.masses[keep])
    out = []
    for k in range(1, n_polys + 1):
        a, b = run.alphas[:k], run.betas[: k - 1]
        roots = eigvalsh_tridiagonal(a, b) if k > 1 else a.copy()
        values = np.empty(m.support.size)
        if k < len(run.vectors):
            values[keep] = run.vectors[k] / (sqrt_w * run.orthonormal_at_zero(k))
        else:
            values[keep] = 0.0
        if not keep.all():
            values[~keep] = _eval_monic_ratio(a, b, m.support[~keep])
        out.append(
            ResidualPolynomial(k, m.support.copy(), values,
                               alphas=a.copy(), betas=b.copy(), roots=np.sort(roots))
        )
    if warn and len(out) < k_max:
        warnings.warn(
            f"orthogonal family terminates at degree {len(out)} < {k_max}",
            TruncatedPathWarning,
            stacklevel=2,
        )
    return out


def residual_family(s: SpectralData, k_max: Optional[int] = None) -> list[ResidualPolynomial]:
    """``[Q_0, Q_1, ..., Q_K]`` by recurrence, without truncation warnings."""
    k_max = s.r if k_max is None else k_max
    polys = residuals_by_recurrence(measure_of(s), k_max, warn=False)
    return [constant_polynomial(s.lambdas)] + polys


# ---------------------------------------------------------------------------
# Combinatorial route


@dataclass(frozen=True)
class WeightTable:
    """Probabilities over decreasing index tuples ``j_1 > ... > j_k``.

    ``tuples`` holds 1-based eigenvalue indices in lexicographically
    descending order. ``normalizer_log`` is ``log Z_k``.
    """

    k: int
    tuples: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray
    normalizer_log: float
    support: np.ndarray

    def evaluate(self, x) -> np.ndarray:
        """``sum_t w_t prod_l (1 - x / lambda_{j_l})`` with compensated sums."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        live = self.weights > 0
        w = self.weights[live]
        lam = self.support[self.tuples[live] - 1]
        out = np.empty(x.size)
        for i, xi in enumerate(x):
            prod = np.prod(1.0 - xi / lam, axis=1)
            out[i] = math.fsum((w * prod).tolist())
        return out

    def rows(self) -> list[tuple[str, float]]:
        return [(" ".join(str(int(j)) for j in t), float(w))
                for t, w in zip(self.tuples, self.weights)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["tuple", "weight"])
        for t, w in self.rows():
            writer.writerow([t, format(w, ".17g")])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "log_normalizer": self.normalizer_log,
            "tuples": [[int(j) for j in t] for t in self.tuples],
            "weights": [float(w) for w in self.weights],
        }


def decreasing_tuples(r: int, k: int) -> np.ndarray:
    """All ``r >= j_1 > ... > j_k >= 1`` (1-based), lexicographically descending."""
    if k == 0:
        return np.zeros((1, 0), dtype=int)
    return np.array(list(combinations(range(r, 0, -1), k)), dtype=int).reshape(-1, k)


def check_budget(r: int, k: int, budget: int) -> None:
    count = int(comb(r, k, exact=True))
    if count > budget:
        raise CapabilityError(
            f"enumerating C({r}, {k}) = {count} tuples exceeds the budget of {budget}; "
            "use the recurrence route"
        )


def tuple_log_terms(
    lambdas: np.ndarray, sq: np.ndarray, tuples: np.ndarray, lambda_power: int = 2
) -> np.ndarray:
    """``log(prod sq_j * prod lambda_j^power * V(lambda_j)^2)`` per tuple row."""
    idx = tuples - 1
    with np.errstate(divide="ignore"):
        log_sq = np.log(sq)
        out = log_sq[idx].sum(axis=1)
        if lambda_power:
            out = out + lambda_power * np.log(lambdas)[idx].sum(axis=1)
    return out + log_vandermonde_sq_rows(lambdas, idx)


def weight_table(
    lambdas: np.ndarray, sq: np.ndarray, k: int, budget: int = DEFAULT_ENUM_BUDGET
) -> WeightTable:
    """Normalized tuple weights for masses ``sq`` (``p_hat^2`` or a surrogate)."""
    lambdas = np.asarray(lambdas, dtype=float)
    sq = np.asarray(sq, dtype=float)
    r = lambdas.size
    if not 0 <= k <= r:
        raise InputError(f"need 0 <= k <= r = {r}, got {k}")
    check_budget(r, k, budget)
    tuples = decreasing_tuples(r, k)
    logw = tuple_log_terms(lambdas, sq, tuples)
    if np.all(logw == -np.inf):
        raise CapabilityError(f"all tuple weights vanish at k = {k}: beyond the Krylov dimension")
    log_z = float(logsumexp(logw))
    weights = np.exp(logw - log_z)
    return WeightTable(k, tuples, weights, logw - log_z, log_z, lambdas.copy())


def residuals_by_formula(
    s: SpectralData, k: int, budget: int = DEFAULT_ENUM_BUDGET
) -> tuple[ResidualPolynomial, WeightTable]:
    """``Q_k`` by explicit tuple enumeration.

    Raises
    ------
    CapabilityError
        If ``C(r, k)`` exceeds ``budget`` or ``k`` exceeds the effective
        Krylov dimension.
    """
    if k > s.effective_dimension:
        raise CapabilityError(
            f"k = {k} exceeds the effective Krylov dimension {s.effective_dimension}"
        )
    table = weight_table(s.lambdas, s.p_hat_eff**2, k, budget)
    values = table.evaluate(s.lambdas) if k > 0 else np.ones(s.r)
    poly = ResidualPolynomial(k, s.lambdas.copy(), values, weights=table)
    return poly, table


def weight_expectation_approx(
    lambdas: Sequence[float], p_signal: Sequence[float], sigma: float, k: int,
    budget: int = DEFAULT_ENUM_BUDGET,
) -> WeightTable:
    """First-order approximation of ``E[w]`` under fixed design.

    Each ``p_hat_j^2`` in the weight ratio is replaced by its expectation
    ``p_j^2 + sigma^2``.
    """
    lam = np.asarray(lambdas, dtype=float)
    p = np.asarray(p_signal, dtype=float)[: lam.size]
    return weight_table(lam, p**2 + sigma**2, k, budget)


# ---------------------------------------------------------------------------
# Structural identities


def item4_bound(lambdas: np.ndarray, k: int) -> np.ndarray:
    """``max over k-tuples of prod_l |1 - lambda_i / lambda_{j_l}|`` for every i.

    All factors are non-negative, so the maximizing tuple takes the ``k``
    largest factors; no enumeration is needed.
    """
    f = np.abs(1.0 - lambdas[:, None] / lambdas[None, :])
    top = -np.sort(-f, axis=1)[:, :k]
    return np.prod(top, axis=1)


def cluster_epsilon(lambdas: np.ndarray) -> float:
    """Smallest ``eps`` with every eigenvalue in ``[lambda_r, lambda_r (1 + eps)]``."""
    return float(lambdas[0] / lambdas[-1] - 1.0)


def verify_poly_identities(
    s: SpectralData,
    path: PlsPath,
    polys: list[ResidualPolynomial],
    tol: float = 1e-8,
) -> list[Check]:
    """Structural properties of the residual family, one :class:`Check` per item and k.

    ``polys`` is ``[Q_0, ..., Q_K]`` as returned by :func:`residual_family`.
    """
    lam = s.lambdas
    ph2 = s.p_hat_eff**2
    scale = float(ph2.sum())
    lam_hi, lam_lo = lam[0], lam[-1]
    eff = ~s.zero_mass
    eff_support = lam[eff]
    eps_bar = cluster_epsilon(lam)
    checks: list[Check] = []

    for poly in polys[1:]:
        k = poly.degree
        q = poly.values
        roots = poly.roots
        if roots is not None:
            outside = max(0.0, lam_lo - roots.min(), roots.max() - lam_hi) / lam_hi
            checks.append(Check("roots_real_in_range", outside + (roots.size != k), 1e-9, k))
            if k < s.effective_dimension:
                checks.append(Check("roots_per_gap", _max_roots_per_gap(roots, lam) - 1.0, 0.0, k))
        lhs = math.fsum(q**2 * ph2)
        rhs = math.fsum(q * ph2)
        checks.append(Check("item2_quadratic", abs(lhs - rhs) / scale, tol, k))
        # (I - P_j)(I - P_k) = I - P_k for nested projectors, so the cross
        # moment reduces to the higher-degree polynomial.
        dev3 = 0.0
        for qj in polys[: k + 1]:
            a = math.fsum(qj.values * q * ph2)
            dev3 = max(dev3, abs(a - rhs) / scale)
        checks.append(Check("item3_cross", dev3, tol, k))
        bound = item4_bound(lam, k)
        checks.append(Check("item4_bound", float(np.max(np.abs(q) - bound)), 1e-9, k))
        checks.append(
            Check("item4_cluster", float(np.max(np.abs(q)) - eps_bar**k), 1e-9, k,
                  detail=f"eps_bar={eps_bar:.6g}")
        )
        if k <= path.k_max:
            risk_poly = math.fsum(q * ph2) + s.tail_sq
            checks.append(
                Check("residual_identity",
                      rel_dev(risk_poly, path.residual_sq_by_k[k], s.response_sq), 1e-7, k)
            )

    for lo, hi in zip(polys[1:-1], polys[2:]):
        if lo.roots is not None and hi.roots is not None:
            checks.append(Check("root_interlacing", _interlace_violation(lo.roots, hi.roots, lam_hi),
                                0.0, hi.degree))

    big_k = s.effective_dimension
    terminal = polys[-1]
    dev = float(abs(terminal.degree - big_k))
    if terminal.degree == big_k and big_k > 0:
        dev += float(np.max(np.abs(terminal.values[eff])))
    checks.append(Check("item5_termination", dev, tol, terminal.degree,
                        detail=f"distinct={big_k}, r={s.r}"))
    return checks


def _max_roots_per_gap(roots: np.ndarray, support: np.ndarray, rel_slack: float = 1e-12) -> float:
    """``1 +`` the number of roots that cannot get a gap of their own.

    Gap ``i`` is ``(pts[i-1], pts[i]]``. A converged Ritz value may round to
    the wrong side of its eigenvalue, so a root within ``rel_slack * max
    support`` of an atom may take either adjacent gap; roots are assigned
    greedily in ascending order.
    """
    pts = np.sort(np.unique(support))
    if roots.size == 0:
        return 1.0
    slack = rel_slack * pts[-1]
    last = -1
    unplaced = 0
    for x in np.sort(roots):
        i = int(np.searchsorted(pts, x, side="left"))
        lowest = i - 1 if i > 0 and x - pts[i - 1] <= slack else i
        highest = i + 1 if i < pts.size and pts[i] - x <= slack else i
        choice = max(lowest, last + 1)
        if choice > highest:
            unplaced += 1
            continue
        last = choice
    return 1.0 + unplaced


def _interlace_violation(inner: np.ndarray, outer: np.ndarray, scale: float) -> float:
    a, b = np.sort(inner), np.sort(outer)
    slack = 1e-12 * scale
    bad = 0
    for j in range(a.size):
        if not (b[j] - slack <= a[j] <= b[j + 1] + slack):
            bad += 1
    return float(bad)


def q_gram_matrix(s: SpectralData, polys: list[ResidualPolynomial]) -> np.ndarray:
    """``G[a, b] = sum_i lambda_i p_hat_i^2 Q_a(lambda_i) Q_b(lambda_i)``."""
    masses = s.lambdas * s.p_hat_eff**2
    vals = np.array([p.values for p in polys])
    return (vals * masses) @ vals.T
