"""Regression problems, synthetic generation, and spectral projections.

The fixed-design model is ``Y = X beta* + eps``. Everything downstream
consumes the projections of ``Y``, ``X beta*`` and ``eps`` onto the left
singular vectors of ``X`` (see :class:`SpectralData`).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InputError
from .linalg import DEFAULT_RANK_THRESHOLD, SvdResult, as_matrix, svd

ZERO_PROJECTION_REL = 1e-12
DUPLICATE_EIGENVALUE_REL = 1e-10


@dataclass(frozen=True)
class RegressionProblem:
    """Design, response, and (for synthetic problems) the ground truth."""

    design: np.ndarray
    response: np.ndarray
    truth: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    noise_sd: Optional[float] = None
    centered: bool = False

    def __post_init__(self):
        x = as_matrix(self.design)
        y = np.asarray(self.response, dtype=float).ravel()
        if y.size != x.shape[0]:
            raise InputError(
                f"response has {y.size} rows but design has {x.shape[0]}"
            )
        if not np.all(np.isfinite(y)):
            raise InputError("response contains non-finite values")
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)
        if self.truth is not None:
            t = np.asarray(self.truth, dtype=float).ravel()
            if t.size != x.shape[1]:
                raise InputError(f"truth has length {t.size}, expected {x.shape[1]}")
            object.__setattr__(self, "truth", t)
        if self.noise is not None:
            e = np.asarray(self.noise, dtype=float).ravel()
            if e.size != x.shape[0]:
                raise InputError(f"noise has length {e.size}, expected {x.shape[0]}")
            object.__setattr__(self, "noise", e)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]

    @property
    def synthetic(self) -> bool:
        return self.truth is not None and self.noise is not None

    @classmethod
    def from_truth(cls, design, truth, noise, noise_sd=None) -> "RegressionProblem":
        """Build ``Y = X beta* + eps`` so the decomposition holds exactly."""
        x = as_matrix(design)
        t = np.asarray(truth, dtype=float).ravel()
        e = np.asarray(noise, dtype=float).ravel()
        return cls(x, x @ t + e, truth=t, noise=e, noise_sd=noise_sd)

    def centered_copy(self) -> "RegressionProblem":
        """Subtract column means from the design and the mean from the response."""
        x = self.design - self.design.mean(axis=0)
        y = self.response - self.response.mean()
        return RegressionProblem(x, y, centered=True)


# ---------------------------------------------------------------------------
# CSV ingestion


def _parse_numeric_rows(path: Path) -> list[list[float]]:
    try:
        with open(path, newline="") as fh:
            raw = [row for row in csv.reader(fh)]
    except FileNotFoundError:
        raise InputError(f"file not found: {path}") from None
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    raw = [row for row in raw if any(cell.strip() for cell in row)]
    if not raw:
        raise InputError(f"{path}: no data rows")

    def is_number(cell: str) -> bool:
        try:
            float(cell)
        except ValueError:
            return False
        return True

    start = 0
    if not all(is_number(c.strip()) for c in raw[0]):
        start = 1  # header row
    rows: list[list[float]] = []
    width = None
    for lineno, row in enumerate(raw[start:], start=start + 1):
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise InputError(
                f"{path}: row {lineno} has {len(row)} columns, expected {width}"
            )
        values = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell.strip())
            except ValueError:
                raise InputError(
                    f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col}"
                ) from None
            if not math.isfinite(v):
                raise InputError(
                    f"{path}: non-finite cell {cell!r} at row {lineno}, column {col}"
                )
            values.append(v)
        rows.append(values)
    if not rows:
        raise InputError(f"{path}: no data rows after header")
    return rows


def load_csv(design_path, response_path, center: bool = False) -> RegressionProblem:
    """Read a design matrix and a single-column response from CSV files."""
    design_path, response_path = Path(design_path), Path(response_path)
    x = np.array(_parse_numeric_rows(design_path))
    y_rows = _parse_numeric_rows(response_path)
    if len(y_rows[0]) != 1:
        raise InputError(
            f"{response_path}: response must have a single column, found {len(y_rows[0])}"
        )
    y = np.array([r[0] for r in y_rows])
    if y.size != x.shape[0]:
        raise InputError(
            f"dimension mismatch: {response_path} has {y.size} rows "
            f"but {design_path} has {x.shape[0]}"
        )
    problem = RegressionProblem(x, y)
    return problem.centered_copy() if center else problem


# ---------------------------------------------------------------------------
# Synthetic problems

BETA_MODES = ("dense", "sparse", "aligned")
NOISE_DISTRIBUTIONS = ("gaussian", "uniform", "rademacher")
FACTOR_MODES = ("haar", "identity")


@dataclass(frozen=True)
class SyntheticSpec:
    """Configuration of a synthetic fixed-design experiment.

    ``spectrum`` lists the non-zero eigenvalues of ``X^T X``; alternatively
    ``geometric_rate`` generates ``r`` eigenvalues ``scale * rate**i`` and
    ``clusters`` (list of ``[center, width, count]``) draws eigenvalues
    uniformly in ``[center, center * (1 + width)]``.
    """

    n: int
    p: int
    spectrum: Optional[tuple] = None
    rank: Optional[int] = None
    geometric_rate: Optional[float] = None
    clusters: Optional[tuple] = None
    scale: float = 1.0
    beta_mode: str = "dense"
    n_aligned: Optional[int] = None
    sparsity: int = 2
    noise_sd: float = 0.0
    noise_dist: str = "gaussian"
    factors: str = "haar"
    seed: int = 0
    replications: int = 1

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise InputError("n and p must be positive")
        if self.beta_mode not in BETA_MODES:
            raise InputError(f"beta_mode must be one of {BETA_MODES}")
        if self.noise_dist not in NOISE_DISTRIBUTIONS:
            raise InputError(f"noise_dist must be one of {NOISE_DISTRIBUTIONS}")
        if self.factors not in FACTOR_MODES:
            raise InputError(f"factors must be one of {FACTOR_MODES}")
        if self.noise_sd < 0:
            raise InputError("noise_sd must be non-negative")
        if self.replications < 1:
            raise InputError("replications must be at least 1")
        if self.spectrum is not None:
            object.__setattr__(self, "spectrum", tuple(float(v) for v in self.spectrum))
        if self.clusters is not None:
            object.__setattr__(
                self, "clusters", tuple(tuple(c) for c in self.clusters)
            )
        lam = self.eigenvalues()
        if lam.size > min(self.n, self.p):
            raise InputError(
                f"spectrum of length {lam.size} exceeds min(n, p) = {min(self.n, self.p)}"
            )
        if lam.size == 0 or np.any(lam <= 0) or not np.all(np.isfinite(lam)):
            raise InputError("spectrum values must be finite and strictly positive")

    def eigenvalues(self) -> np.ndarray:
        if self.spectrum is not None:
            lam = np.array(self.spectrum, dtype=float)
        elif self.clusters is not None:
            rng = np.random.default_rng([self.seed, 2])
            parts = []
            for center, width, count in self.clusters:
                parts.append(center * (1.0 + width * rng.uniform(size=int(count))))
            lam = np.concatenate(parts)
        else:
            r = self.rank if self.rank is not None else min(self.n, self.p)
            rate = 0.7 if self.geometric_rate is None else self.geometric_rate
            lam = self.scale * rate ** np.arange(r)
        return np.sort(lam)[::-1]

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown synthetic spec keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InputError(f"invalid synthetic spec: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except FileNotFoundError:
            raise InputError(f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise InputError(f"{path}: expected a JSON object")
        return cls.from_dict(d)


def _haar(rng: np.random.Generator, dim: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _draw_noise(rng: np.random.Generator, n: int, sd: float, dist: str) -> np.ndarray:
    if sd == 0.0:
        return np.zeros(n)
    if dist == "gaussian":
        return sd * rng.standard_normal(n)
    if dist == "uniform":
        return sd * math.sqrt(3.0) * rng.uniform(-1.0, 1.0, size=n)
    return sd * rng.choice([-1.0, 1.0], size=n)


def design_and_truth(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """The fixed part of a synthetic problem: ``X`` and ``beta*``."""
    rng = np.random.default_rng([spec.seed, 0])
    lam = spec.eigenvalues()
    r = lam.size
    if spec.factors == "haar":
        u = _haar(rng, spec.n)
        v = _haar(rng, spec.p)
    else:
        u, v = np.eye(spec.n), np.eye(spec.p)
    d = np.zeros((spec.n, spec.p))
    d[np.arange(r), np.arange(r)] = np.sqrt(lam)
    x = u @ d @ v.T

    if spec.beta_mode == "dense":
        beta = rng.standard_normal(spec.p)
    elif spec.beta_mode == "sparse":
        beta = np.zeros(spec.p)
        idx = rng.choice(spec.p, size=min(spec.sparsity, spec.p), replace=False)
        beta[idx] = rng.standard_normal(idx.size)
    else:
        m = r if spec.n_aligned is None else min(spec.n_aligned, r)
        coords = np.zeros(spec.p)
        coords[:m] = 1.0 / np.sqrt(lam[:m])  # signal projections p_i = 1
        beta = v @ coords
    return x, beta


def generate(spec: SyntheticSpec, replication: int = 0) -> RegressionProblem:
    """Draw one replication of the synthetic problem described by ``spec``.

    Design and truth depend only on ``spec.seed``; the noise stream is seeded
    with ``spec.seed + replication`` so replications share the fixed design.
    """
    x, beta = design_and_truth(spec)
    noise_rng = np.random.default_rng([spec.seed + replication, 1])
    eps = _draw_noise(noise_rng, spec.n, spec.noise_sd, spec.noise_dist)
    return RegressionProblem.from_truth(x, beta, eps, noise_sd=spec.noise_sd)


# ---------------------------------------------------------------------------
# Spectral projections


@dataclass(frozen=True)
class SpectralData:
    """SVD-derived quantities every formula consumes.

    Attributes
    ----------
    lambdas : ndarray, shape (r,)
        Non-zero eigenvalues of ``X^T X``, descending.
    p_hat : ndarray, shape (n,)
        ``Y^T u_i``.
    p_signal, eps_tilde : ndarray, shape (n,), optional
        ``(X beta*)^T u_i`` and ``eps^T u_i``; present for synthetic problems.
    beta_tilde : ndarray, shape (p,), optional
        ``beta*^T v_i``.
    zero_mass : ndarray of bool, shape (r,)
        ``|p_hat_i|`` below ``1e-12 * ||Y||``; such atoms carry no mass.
    """

    svd: SvdResult
    lambdas: np.ndarray
    p_hat: np.ndarray
    problem: RegressionProblem
    p_signal: Optional[np.ndarray] = None
    eps_tilde: Optional[np.ndarray] = None
    beta_tilde: Optional[np.ndarray] = None
    zero_mass: np.ndarray = field(default=None)

    @property
    def r(self) -> int:
        return self.lambdas.size

    @property
    def n(self) -> int:
        return self.p_hat.size

    @property
    def sqrt_lambdas(self) -> np.ndarray:
        return self.svd.singular_values[: self.r]

    @property
    def tail_sq(self) -> float:
        """``sum_{i>r} p_hat_i^2``, zero when ``r = n``."""
        return float(np.sum(self.p_hat[self.r :] ** 2))

    @property
    def response_sq(self) -> float:
        return float(self.problem.response @ self.problem.response)

    @property
    def p_hat_eff(self) -> np.ndarray:
        """``p_hat[:r]`` with flagged zero-mass entries set to exactly 0."""
        out = self.p_hat[: self.r].copy()
        out[self.zero_mass] = 0.0
        return out

    @property
    def duplicate_eigenvalues(self) -> bool:
        lam = self.lambdas
        if lam.size < 2:
            return False
        return bool(np.any(np.abs(np.diff(lam)) <= DUPLICATE_EIGENVALUE_REL * lam[0]))

    @property
    def effective_dimension(self) -> int:
        """Number of distinct eigenvalues carrying non-zero ``p_hat``."""
        lam = self.lambdas[~self.zero_mass]
        if lam.size == 0:
            return 0
        distinct = 1
        last = lam[0]
        for v in lam[1:]:
            if abs(last - v) > DUPLICATE_EIGENVALUE_REL * self.lambdas[0]:
                distinct += 1
                last = v
        return distinct

    @property
    def synthetic(self) -> bool:
        return self.p_signal is not None and self.eps_tilde is not None

    def with_p_hat(self, p_hat, eps_tilde=None) -> "SpectralData":
        """Same design, different response projections (Monte Carlo reuse)."""
        p_hat = np.asarray(p_hat, dtype=float)
        y = self.svd.left_vectors @ p_hat
        problem = RegressionProblem(
            self.problem.design,
            y,
            truth=self.problem.truth,
            noise=None if eps_tilde is None else self.svd.left_vectors @ eps_tilde,
            noise_sd=self.problem.noise_sd,
        )
        return SpectralData(
            self.svd,
            self.lambdas,
            p_hat,
            problem,
            p_signal=self.p_signal,
            eps_tilde=eps_tilde,
            beta_tilde=self.beta_tilde,
            zero_mass=_zero_mass(p_hat, self.lambdas.size, float(np.linalg.norm(y))),
        )


def _zero_mass(p_hat: np.ndarray, r: int, y_norm: float) -> np.ndarray:
    return np.abs(p_hat[:r]) <= ZERO_PROJECTION_REL * y_norm


def spectral(
    problem: RegressionProblem, rel_threshold: float = DEFAULT_RANK_THRESHOLD
) -> SpectralData:
    """Compute eigenvalues and projections for ``problem``."""
    dec = svd(problem.design, rel_threshold)
    r = dec.rank
    lam = dec.singular_values[:r] ** 2
    u, v = dec.left_vectors, dec.right_vectors
    p_hat = u.T @ problem.response
    p_signal = eps_tilde = beta_tilde = None
    if problem.truth is not None:
        beta_tilde = v.T @ problem.truth
        p_signal = u.T @ (problem.design @ problem.truth)
    if problem.noise is not None:
        eps_tilde = u.T @ problem.noise
    y_norm = float(np.linalg.norm(problem.response))
    return SpectralData(
        dec,
        lam,
        p_hat,
        problem,
        p_signal=p_signal,
        eps_tilde=eps_tilde,
        beta_tilde=beta_tilde,
        zero_mass=_zero_mass(p_hat, r, y_norm),
    )


def fixture_problem() -> RegressionProblem:
    """The 2x2 running example ``X = diag(sqrt 2, 1)``, ``Y = (1, 1)``."""
    return RegressionProblem(np.diag([math.sqrt(2.0), 1.0]), np.array([1.0, 1.0]))


def fixture_spec(noise_sd: float = 1.0, seed: int = 0, replications: int = 1) -> SyntheticSpec:
    """Synthetic spec reproducing the fixture design with signal ``p = (1, 1)``."""
    return SyntheticSpec(
        n=2,
        p=2,
        spectrum=(2.0, 1.0),
        beta_mode="aligned",
        factors="identity",
        noise_sd=noise_sd,
        seed=seed,
        replications=replications,
    )

