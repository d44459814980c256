"""Quantities derived from the residual polynomials.

Filter factors and their shrink/expand theorems, the global shrinkage
chain, closed forms and bounds for the empirical risk, and per-realization
MSE decompositions including the Gram-determinant lemmas. Every function
returns plain records or :class:`~plspoly.checks.Check` lists; thresholds
live with the checks, not with the computations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import mpmath
import numpy as np
from numpy.polynomial import chebyshev
from scipy.linalg import lu
from scipy.special import logsumexp

from .checks import Check, rel_dev, skipped
from .errors import CapabilityError, InputError
from .linalg import log_determinant, log_vandermonde_sq
from .model import SpectralData
from .pls_core import PlsPath, fit_ls, krylov_basis
from .residual_poly import (
    DEFAULT_ENUM_BUDGET,
    ResidualPolynomial,
    check_budget,
    cluster_epsilon,
    decreasing_tuples,
    residual_family,
    tuple_log_terms,
    weight_table,
)

DEAD_ZONE = 1e-9
IDENTITY_TOL = 1e-7
PIVOT_LOSS_LIMIT = 1e6
EXTENDED_PRECISION_LOSS = 1e3
GRAM_MAX_ORDER = 13


# ---------------------------------------------------------------------------
# Filter factors


@dataclass(frozen=True)
class FilterFactors:
    """``f_i = 1 - Q_k(lambda_i)`` for one step ``k``.

    Attributes
    ----------
    factors : ndarray, shape (r,)
    truncated : ndarray, shape (r,)
        ``factors`` clipped to ``[-1, 1]``.
    ritz_values : ndarray, shape (k,)
        Roots of ``Q_k``, ascending; empty for formula-route polynomials.
    """

    k: int
    factors: np.ndarray
    truncated: np.ndarray
    ritz_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def residual_values(self) -> np.ndarray:
        return 1.0 - self.factors


def filter_factors(polys: list[ResidualPolynomial], s: SpectralData) -> list[FilterFactors]:
    out = []
    for poly in polys:
        if poly.values.size != s.r:
            raise InputError(f"polynomial of degree {poly.degree} is not evaluated on the spectrum")
        f = 1.0 - poly.values
        roots = np.zeros(0) if poly.roots is None else np.sort(poly.roots)
        out.append(FilterFactors(poly.degree, f, np.clip(f, -1.0, 1.0), roots))
    return out


def closed_form_factors_r_minus_1(s: SpectralData) -> tuple[np.ndarray, float]:
    """``f^(r-1)`` from its explicit closed form, and the constant ``C``.

    ``f_i = 1 - C / (p_hat_i^2 lambda_i prod_{j != i} (lambda_j - lambda_i))``
    with ``C = prod_j (p_hat_j^2 lambda_j) V(lambda)^2 / Z_{r-1}``.
    Requires ``r`` distinct eigenvalues, all with non-zero ``p_hat``.
    """
    r = s.r
    if r < 2 or s.effective_dimension < r:
        raise CapabilityError("closed form needs r >= 2 distinct eigenvalues with non-zero p_hat")
    lam = s.lambdas
    ph2 = s.p_hat_eff**2
    log_z = weight_table(lam, ph2, r - 1).normalizer_log
    log_c = float(np.sum(np.log(ph2 * lam))) + log_vandermonde_sq(lam) - log_z
    f = np.empty(r)
    for i in range(r):
        diffs = np.delete(lam, i) - lam[i]
        sign = float(np.prod(np.sign(diffs)))
        log_den = math.log(ph2[i] * lam[i]) + float(np.sum(np.log(np.abs(diffs))))
        f[i] = 1.0 - sign * math.exp(log_c - log_den)
    return f, math.exp(log_c)


def distance_to_one_bound(s: SpectralData, k: int, budget: int = DEFAULT_ENUM_BUDGET) -> np.ndarray:
    """Per-eigenvalue bound on ``|1 - f_i|`` with the exponent ``n`` as printed.

    ``((lambda_1 - lambda_r) / lambda_r)^n / (1 + p_hat_i^2 lambda_i^2 S_{k-1,i} / S_{k,i})``
    where ``S_{m,i}`` sums the weight numerators over ``m``-tuples avoiding ``i``.
    """
    lam = s.lambdas
    ph2 = s.p_hat_eff**2
    r = s.r
    if 0 < k < r:
        check_budget(r - 1, k, budget)
    with np.errstate(over="ignore"):
        lead = ((lam[0] - lam[-1]) / lam[-1]) ** s.n
    out = np.empty(r)
    for i in range(r):
        others = np.delete(np.arange(r), i)
        log_s = []
        for m in (k - 1, k):
            if m > others.size:
                log_s.append(-math.inf)
                continue
            combos = list(combinations(others, m))
            tuples = np.array(combos, dtype=int).reshape(len(combos), m) + 1
            terms = tuple_log_terms(lam, ph2, tuples)
            log_s.append(float(logsumexp(terms)) if np.any(terms > -np.inf) else -math.inf)
        with np.errstate(divide="ignore"):
            log_lead = math.log(ph2[i] * lam[i] ** 2) if ph2[i] > 0 else -math.inf
        log_ratio = log_lead + log_s[0] - log_s[1] if log_s[1] > -math.inf else math.inf
        ratio = math.exp(min(log_ratio, 700.0)) if log_ratio < math.inf else math.inf
        out[i] = lead / (1.0 + ratio)
    return out


def check_filter_theorems(
    ffs: list[FilterFactors],
    s: SpectralData,
    weights_available: bool = True,
    budget: int = DEFAULT_ENUM_BUDGET,
    tol: float = 1e-8,
) -> list[Check]:
    """Shrink/expand theorems for the PLS filter factors.

    Parity of ``f_1`` and ``f_r in (0, 1)`` are asserted for ``k`` below the
    effective Krylov dimension ``K``; sign alternation between roots and the
    ``1 + eps^k`` bound for every ``k``; the ``f^(r-1)`` closed form when the
    spectrum is simple and fully excited. The distance-to-one bound is
    informational (``hard=False``).
    """
    big_k = s.effective_dimension
    lam = s.lambdas
    eps_bar = cluster_epsilon(lam)
    checks: list[Check] = []
    for ff in ffs:
        k = ff.k
        if k == 0:
            continue
        f = ff.factors
        if k < big_k:
            want_above = k % 2 == 1
            gap = f[0] - 1.0
            viol = max(0.0, -gap) if want_above else max(0.0, gap)
            checks.append(Check("parity_f1", viol, DEAD_ZONE, k, detail=f"f_1={f[0]:.17g}"))
            viol_r = max(0.0, -f[-1], f[-1] - 1.0)
            checks.append(Check("f_r_in_unit", viol_r, DEAD_ZONE, k, detail=f"f_r={f[-1]:.17g}"))
        if ff.ritz_values.size == k:
            viol = _alternation_violation(ff, lam, require_occupied=k < big_k)
            checks.append(Check("interval_alternation", viol, DEAD_ZONE, k))
        bound = 1.0 + eps_bar**k
        checks.append(
            Check("eps_k_bound", float(max(0.0, np.max(f) - bound) / bound), DEAD_ZONE, k,
                  detail=f"eps_bar={eps_bar:.6g}")
        )
        if k == s.r - 1:
            try:
                closed, c = closed_form_factors_r_minus_1(s)
            except CapabilityError as exc:
                checks.append(skipped("closed_form_r_minus_1", str(exc), k))
            else:
                dev = float(np.max(np.abs(closed - f) / np.maximum(1.0, np.abs(1.0 - f))))
                checks.append(Check("closed_form_r_minus_1", dev, tol, k, detail=f"C={c:.17g}"))
        if weights_available and k <= big_k:
            try:
                b = distance_to_one_bound(s, k, budget)
            except CapabilityError as exc:
                checks.append(skipped("distance_to_one", str(exc), k))
            else:
                with np.errstate(invalid="ignore"):
                    viol = float(np.max(np.maximum(0.0, np.abs(1.0 - f) - b)))
                checks.append(Check("distance_to_one", viol, DEAD_ZONE, k, hard=False))
        elif not weights_available:
            checks.append(skipped("distance_to_one", "weight tables not evaluated", k))
    return checks


def _alternation_violation(ff: FilterFactors, lam: np.ndarray, require_occupied: bool) -> float:
    # With m roots below lambda_i the sign of Q_k(lambda_i) is (-1)^m: the
    # interval of smallest eigenvalues shrinks, the next expands, and so on.
    # Below the Krylov dimension all k + 1 intervals hold an eigenvalue; one
    # that coincides with a root (to DEAD_ZONE) may count for either side.
    roots = ff.ritz_values
    q = 1.0 - ff.factors
    below = np.searchsorted(roots, lam, side="left")
    sign = np.where(below % 2 == 0, 1.0, -1.0)
    viol = float(np.max(np.maximum(0.0, -sign * q)))
    if require_occupied:
        lo = np.searchsorted(roots, lam * (1.0 - DEAD_ZONE), side="left")
        hi = np.searchsorted(roots, lam * (1.0 + DEAD_ZONE), side="right")
        occupied = set()
        for a, b in zip(lo, hi):
            occupied.update(range(int(a), int(b) + 1))
        if len(occupied) < ff.k + 1:
            viol += 1.0
    return viol


def ritz_consistency(ff: FilterFactors, lam: np.ndarray) -> float:
    """Gap between ``prod_j (1 - lambda_i / theta_j)`` and ``Q_k(lambda_i)``.

    Scaled by ``prod_j (1 + lambda_i / theta_j)``, the rounding sensitivity
    of the product form, which is large when a Ritz value nearly coincides
    with an eigenvalue far from the others.
    """
    if ff.ritz_values.size != ff.k:
        return math.nan
    ratio = lam[:, None] / ff.ritz_values[None, :]
    prod = np.prod(1.0 - ratio, axis=1)
    sensitivity = np.prod(1.0 + ratio, axis=1)
    q = 1.0 - ff.factors
    return float(np.max(np.abs(prod - q) / sensitivity))


# ---------------------------------------------------------------------------
# Global shrinkage


@dataclass(frozen=True)
class ShrinkageReport:
    norms_sq: np.ndarray
    ls_norm_sq: float
    checks: list


def check_global_shrinkage(path: PlsPath, ls: np.ndarray) -> ShrinkageReport:
    """``||beta_{k-1}||^2 <= ||beta_k||^2 <= ||beta_LS||^2`` with tolerance ``1e-9 ||beta_LS||^2``."""
    norms = np.array([float(b @ b) for b in path.beta_by_k])
    ls_sq = float(ls @ ls)
    tol = 1e-9 * ls_sq
    checks = []
    for k in range(1, norms.size):
        checks.append(Check("shrinkage_chain", max(0.0, norms[k - 1] - norms[k]), tol, k))
        checks.append(Check("shrinkage_below_ls", max(0.0, norms[k] - ls_sq), tol, k))
    return ShrinkageReport(norms, ls_sq, checks)


# ---------------------------------------------------------------------------
# Empirical risk


def empirical_risk_closed_form(s: SpectralData, k: int, budget: int = DEFAULT_ENUM_BUDGET) -> float:
    """``sum_{I_{k+1}} prod p_hat^2 V^2 / Z_k`` plus the ``i > r`` tail.

    Raises
    ------
    CapabilityError
        Enumeration budget exceeded, or ``Z_k = 0`` (``k`` beyond the
        effective Krylov dimension).
    """
    r = s.r
    if not 0 <= k <= r:
        raise InputError(f"need 0 <= k <= r = {r}, got {k}")
    ph2 = s.p_hat_eff**2
    log_z = weight_table(s.lambdas, ph2, k, budget).normalizer_log
    if k + 1 > r:
        return s.tail_sq
    check_budget(r, k + 1, budget)
    terms = tuple_log_terms(s.lambdas, ph2, decreasing_tuples(r, k + 1), lambda_power=0)
    if np.all(terms == -np.inf):
        return s.tail_sq
    return math.exp(float(logsumexp(terms)) - log_z) + s.tail_sq


def empirical_risk_bound(s: SpectralData, k: int) -> float:
    """``sum_{i>k} prod_{l<=k} (1 - lambda_i / lambda_l)^2 p_hat_i^2`` plus the tail."""
    if not 0 <= k < s.r:
        raise InputError(f"bound needs 0 <= k < r = {s.r}, got {k}")
    lam = s.lambdas
    ph2 = s.p_hat[: s.r] ** 2
    prod = np.prod((1.0 - lam[k:, None] / lam[None, :k]) ** 2, axis=1)
    return math.fsum((prod * ph2[k:]).tolist()) + s.tail_sq


def rate_bound(s: SpectralData, k: int) -> float:
    """Per-realization envelope ``(1 - lambda_r/lambda_1)^(2k) sum_{k<i<=r} p_hat_i^2`` plus tail."""
    lam = s.lambdas
    ph2 = s.p_hat[: s.r] ** 2
    return float((1.0 - lam[-1] / lam[0]) ** (2 * k) * ph2[k:].sum()) + s.tail_sq


def expected_rate_bound(s: SpectralData, k: int) -> Optional[float]:
    """Bound on ``E ||Y - X beta_k||^2 / n`` for a fixed design with known truth.

    ``[(1 - lambda_r/lambda_1)^(2k) (sum_{i>k} lambda_i beta~_i^2 + (r-k) sigma^2)
    + (n - r) sigma^2] / n``; ``None`` when truth or ``sigma`` is unknown.
    """
    sigma = s.problem.noise_sd
    if s.beta_tilde is None or sigma is None:
        return None
    lam = s.lambdas
    r, n = s.r, s.n
    signal = float(np.sum(lam[k:] * s.beta_tilde[k:r] ** 2))
    head = (1.0 - lam[-1] / lam[0]) ** (2 * k) * (signal + (r - k) * sigma**2)
    return (head + (n - r) * sigma**2) / n


@dataclass(frozen=True)
class RiskReport:
    """Empirical-risk quantities at step ``k``.

    ``empirical_risk_formula`` is ``None`` when the enumeration was skipped;
    ``upper_bound`` and ``rate_bound`` are ``None`` at ``k = r``.
    ``fit_gap_pcr`` is ``sum_{k<i<=r} p_hat_i^2 = ||X beta_LS - X beta_PCR^k||^2``.
    """

    k: int
    empirical_risk_direct: float
    empirical_risk_formula: Optional[float]
    pcr_risk: float
    upper_bound: Optional[float]
    rate_bound: Optional[float]
    fit_gap_ls: float
    fit_gap_pcr: float
    delta: Optional[float] = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def risk_reports(
    s: SpectralData, path: PlsPath, budget: int = DEFAULT_ENUM_BUDGET
) -> list[RiskReport]:
    """One :class:`RiskReport` per computed step ``k = 0 .. K``."""
    ph2 = s.p_hat[: s.r] ** 2
    fitted_ls = s.problem.design @ fit_ls(s)
    out = []
    for k in range(path.k_max + 1):
        try:
            formula = empirical_risk_closed_form(s, k, budget)
        except CapabilityError:
            formula = None
        below_r = k < s.r
        gap = fitted_ls - path.fitted_by_k[k]
        out.append(
            RiskReport(
                k=k,
                empirical_risk_direct=path.residual_sq_by_k[k],
                empirical_risk_formula=formula,
                pcr_risk=float(ph2[k:].sum()) + s.tail_sq,
                upper_bound=empirical_risk_bound(s, k) if below_r else None,
                rate_bound=rate_bound(s, k) if below_r else None,
                fit_gap_ls=float(gap @ gap),
                fit_gap_pcr=float(ph2[k:].sum()),
                delta=float(1.0 - s.lambdas[-1] / s.lambdas[k - 1]) if 0 < k < s.r else None,
            )
        )
    return out


def check_risk(s: SpectralData, reports: list[RiskReport], tol: float = IDENTITY_TOL) -> list[Check]:
    scale = s.response_sq
    ineq = DEAD_ZONE * scale
    ph2 = s.p_hat[: s.r] ** 2
    checks = []
    for rep in reports:
        k = rep.k
        direct = rep.empirical_risk_direct
        if rep.empirical_risk_formula is None:
            checks.append(skipped("risk_closed_form", "enumeration budget", k))
        else:
            checks.append(
                Check("risk_closed_form", rel_dev(direct, rep.empirical_risk_formula, scale), tol, k)
            )
        checks.append(Check("risk_le_pcr", max(0.0, direct - rep.pcr_risk), ineq, k))
        checks.append(Check("fit_gap_ls", max(0.0, rep.fit_gap_ls - rep.fit_gap_pcr), ineq, k))
        if rep.upper_bound is not None:
            checks.append(Check("risk_le_bound", max(0.0, direct - rep.upper_bound), ineq, k))
            checks.append(Check("risk_le_rate", max(0.0, direct - rep.rate_bound), ineq, k))
        if rep.delta is not None:
            head = rep.upper_bound - s.tail_sq
            allowed = rep.delta * float(ph2[k:].sum())
            checks.append(Check("bound_delta_remark", max(0.0, head - allowed), ineq, k))
    return checks


# ---------------------------------------------------------------------------
# MSE


@dataclass(frozen=True)
class MseReport:
    """Per-realization ``||X beta* - X beta_k||^2`` by several routes.

    ``bias_like = sum Q p^2`` and ``noise_like = sum (1 - Q) eps~^2`` are the
    two terms of ``mse_identity``; they are not a bias/variance split.
    """

    k: int
    mse_direct: float
    mse_identity: float
    mse_alt: float
    mse_filter: float
    bias_like: float
    noise_like: float
    mse_truncated: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _require_synthetic(s: SpectralData) -> None:
    if not s.synthetic:
        raise CapabilityError("MSE quantities need the true coefficients and the noise realization")


def mse_decompositions(
    s: SpectralData, path: PlsPath, polys: list[ResidualPolynomial]
) -> list[MseReport]:
    """MSE identities for ``k = 0 .. min(K, len(polys) - 1)``.

    Raises
    ------
    CapabilityError
        The problem carries no truth/noise.
    """
    _require_synthetic(s)
    r = s.r
    p = s.p_signal[:r]
    e = s.eps_tilde[:r]
    ph = s.p_hat[:r]
    signal_fit = s.problem.design @ s.problem.truth
    out = []
    for k in range(min(path.k_max, len(polys) - 1) + 1):
        q = polys[k].values
        f = 1.0 - q
        diff = signal_fit - path.fitted_by_k[k]
        bias_like = math.fsum((q * p**2).tolist())
        noise_like = math.fsum(((1.0 - q) * e**2).tolist())
        alt = math.fsum((q * ph * p).tolist()) + math.fsum((e**2).tolist()) - math.fsum((q * ph * e).tolist())
        filt = math.fsum(((1.0 - f) * p**2).tolist()) + math.fsum((f * e**2).tolist())
        trunc = np.clip(f, -1.0, 1.0)
        out.append(
            MseReport(
                k=k,
                mse_direct=float(diff @ diff),
                mse_identity=bias_like + noise_like,
                mse_alt=alt,
                mse_filter=filt,
                bias_like=bias_like,
                noise_like=noise_like,
                mse_truncated=float(np.sum((p - trunc * ph) ** 2)),
            )
        )
    return out


def check_mse(s: SpectralData, reports: list[MseReport], tol: float = IDENTITY_TOL) -> list[Check]:
    scale = s.response_sq
    checks = []
    for rep in reports:
        for name, value in (("mse_identity", rep.mse_identity), ("mse_alt", rep.mse_alt),
                            ("mse_filter_form", rep.mse_filter)):
            checks.append(Check(name, rel_dev(rep.mse_direct, value, scale), tol, rep.k))
    return checks


@dataclass(frozen=True)
class GramTerms:
    """Signal and noise parts of the MSE by two routes.

    ``*_det`` come from the ratio of Gram determinants, ``*_direct`` from an
    explicit orthogonal projector onto ``span{XX^T Y, ..., (XX^T)^k Y}``.
    ``pivot_loss`` is the ratio of largest to smallest LU pivot of the
    equilibrated Krylov Gram matrix; ``warning`` is set above ``1e6``.
    """

    k: int
    signal_det: float
    noise_det: float
    signal_direct: float
    noise_direct: float
    pivot_loss: float
    warning: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def krylov_gram_blocks(s: SpectralData, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The mixed matrix and the Krylov Gram matrix of the MSE lemmas.

    The Krylov space ``span{lambda^a p_hat, a = 1..k}`` is spanned in the
    basis ``lambda T_{a-1}(t(lambda)) p_hat`` with Chebyshev ``T`` on the
    spectral interval; the determinant ratio does not depend on the basis
    and this one is far better conditioned than the monomials. Rows and
    columns are then equilibrated by the Gram diagonal.

    Returns ``(m, g)`` with ``m[0, 0] = sum eps~ p``, ``m[0, b] = sum g_b eps~``,
    ``m[a, 0] = sum g_a p`` and ``m[a, b] = g[a, b] = sum g_a g_b``.
    """
    r = s.r
    lam = s.lambdas
    hi, lo = lam[0], lam[-1]
    t = (2.0 * lam - (hi + lo)) / (hi - lo) if hi > lo else np.zeros(r)
    basis = chebyshev.chebvander(t, k - 1).T * (lam / hi) * s.p_hat[:r]
    g = basis @ basis.T
    d = 1.0 / np.sqrt(np.diag(g))
    g = d[:, None] * g * d[None, :]
    gb = d[:, None] * basis
    p = s.p_signal[:r]
    e = s.eps_tilde[:r]
    m = np.empty((k + 1, k + 1))
    m[0, 0] = e @ p
    m[0, 1:] = gb @ e
    m[1:, 0] = gb @ p
    m[1:, 1:] = g
    return m, g


def _determinant_ratio_extended(s: SpectralData, k: int, digits: int) -> float:
    """``det(M) / det(G)`` of :func:`krylov_gram_blocks` in ``digits``-digit arithmetic.

    The float inputs (eigenvalues and projections) are exact in the wider
    format, so the ratio is accurate to about ``digits - log10(pivot loss)``.
    A private context keeps the working precision local to this call, which
    matters under the threaded verification driver.
    """
    ctx = mpmath.MPContext()
    ctx.dps = digits
    mpf = ctx.mpf
    r = s.r
    lam = [mpf(float(v)) for v in s.lambdas]
    ph = [mpf(float(v)) for v in s.p_hat[:r]]
    p = [mpf(float(v)) for v in s.p_signal[:r]]
    e = [mpf(float(v)) for v in s.eps_tilde[:r]]
    hi, lo = lam[0], lam[-1]
    rows = []
    for i in range(r):
        t = (2 * lam[i] - (hi + lo)) / (hi - lo) if hi > lo else mpf(0)
        cheb = [mpf(1), t]
        while len(cheb) < k:
            cheb.append(2 * t * cheb[-1] - cheb[-2])
        rows.append([c * lam[i] / hi * ph[i] for c in cheb[:k]])
    basis = ctx.matrix(rows).T
    g = basis * basis.T
    m = ctx.matrix(k + 1, k + 1)
    m[0, 0] = ctx.fsum(a * b for a, b in zip(e, p))
    for a in range(k):
        m[0, a + 1] = ctx.fsum(basis[a, i] * e[i] for i in range(r))
        m[a + 1, 0] = ctx.fsum(basis[a, i] * p[i] for i in range(r))
        for b in range(k):
            m[a + 1, b + 1] = g[a, b]
    det_g = ctx.det(g)
    if det_g == 0:
        raise CapabilityError(f"Krylov Gram matrix is singular at k = {k}")
    return float(ctx.det(m) / det_g)


def gram_determinant_terms(
    s: SpectralData, k: int, poly: Optional[ResidualPolynomial] = None
) -> GramTerms:
    """``||X beta* - Pi_k X beta*||^2`` and ``||Pi_k eps||^2`` by determinant ratios.

    ``signal = sum Q p_hat p - det(M)/det(G)`` and
    ``noise = sum eps~^2 - sum Q p_hat eps~ + det(M^T)/det(G)``, checked against
    an explicit projector built from the orthonormal Krylov basis. When the
    Gram pivots lose more than three digits the determinant ratio is
    evaluated in extended precision.
    """
    _require_synthetic(s)
    if not 1 <= k <= GRAM_MAX_ORDER - 1:
        raise InputError(f"Gram determinant terms need 1 <= k <= {GRAM_MAX_ORDER - 1}, got {k}")
    if k > s.effective_dimension:
        raise CapabilityError(f"k = {k} exceeds the effective Krylov dimension")
    if poly is None:
        poly = residual_family(s, k)[k]
    r = s.r
    p = s.p_signal[:r]
    e = s.eps_tilde[:r]
    ph = s.p_hat[:r]
    q = poly.values

    m, g = krylov_gram_blocks(s, k)
    piv = np.abs(np.diag(lu(g, check_finite=False)[2]))
    loss = float(piv.max() / piv.min()) if piv.min() > 0 else math.inf
    warning = f"pivot loss {loss:.3g} exceeds {PIVOT_LOSS_LIMIT:.0e}" if loss > PIVOT_LOSS_LIMIT else ""
    if loss > EXTENDED_PRECISION_LOSS:
        # Every digit lost to pivoting is bought back with working precision.
        digits = 34 + (int(math.log10(loss)) if math.isfinite(loss) else 300)
        ratio = _determinant_ratio_extended(s, k, digits)
    else:
        sign_m, log_m = log_determinant(m)
        sign_g, log_g = log_determinant(g)
        ratio = 0.0 if sign_m == 0.0 else sign_m * sign_g * math.exp(log_m - log_g)
    signal_det = math.fsum((q * ph * p).tolist()) - ratio
    noise_det = math.fsum((e**2).tolist()) - math.fsum((q * ph * e).tolist()) + ratio

    kb = krylov_basis(s, k)
    images, _ = np.linalg.qr(s.sqrt_lambdas[:, None] * kb.vectors)
    res_p = p - images @ (images.T @ p)
    proj_e = images @ (images.T @ e)
    return GramTerms(k, signal_det, noise_det, float(res_p @ res_p), float(proj_e @ proj_e),
                     loss, warning)


def check_gram(s: SpectralData, terms: list[GramTerms], mse: dict[int, float],
               tol: float = IDENTITY_TOL, hard_up_to: int = 8) -> list[Check]:
    """Determinant routes vs projector, and ``signal + noise = MSE``.

    Steps above ``hard_up_to`` are reported but do not fail.
    """
    scale = s.response_sq
    checks = []
    for t in terms:
        hard = t.k <= hard_up_to
        checks.append(Check("gram_signal", rel_dev(t.signal_det, t.signal_direct, scale), tol,
                            t.k, hard=hard, detail=t.warning))
        checks.append(Check("gram_noise", rel_dev(t.noise_det, t.noise_direct, scale), tol,
                            t.k, hard=hard, detail=t.warning))
        if t.k in mse:
            checks.append(Check("gram_sum_mse", rel_dev(t.signal_det + t.noise_det, mse[t.k], scale),
                                tol, t.k, hard=hard))
    return checks


def truncation_caveat(reports: list[MseReport]) -> Optional[int]:
    """First ``k`` whose clipped-factor estimator has a larger MSE than PLS, if any."""
    for rep in reports:
        if rep.mse_truncated > rep.mse_direct * (1.0 + 1e-12) + 1e-15:
            return rep.k
    return None
