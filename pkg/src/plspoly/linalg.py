"""Dense linear-algebra kernels.

Matrices are plain 2-D ``float64`` numpy arrays. The heavy lifting (SVD,
LU, symmetric eigendecomposition) is delegated to LAPACK through numpy;
this module adds the contracts the rest of the package relies on: a fixed
sign convention for singular vectors, an explicit numerical rank, least-norm
solves, and log-domain accumulation of non-negative products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import logsumexp

from .errors import InputError, NumericError

DEFAULT_RANK_THRESHOLD = 1e-12


def as_matrix(m) -> np.ndarray:
    """Validate and convert ``m`` to a finite 2-D float array."""
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InputError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError("matrix contains non-finite entries")
    return a


@dataclass(frozen=True)
class SvdResult:
    """Full SVD ``m = U diag(s) V^T`` with a numerical rank.

    Attributes
    ----------
    left_vectors : ndarray, shape (n, n)
    right_vectors : ndarray, shape (p, p)
    singular_values : ndarray, shape (min(n, p),)
        Non-increasing.
    rank : int
        Number of singular values above ``rel_threshold * singular_values[0]``.
    """

    left_vectors: np.ndarray
    right_vectors: np.ndarray
    singular_values: np.ndarray
    rank: int
    rel_threshold: float = DEFAULT_RANK_THRESHOLD

    def reconstruct(self) -> np.ndarray:
        n, p = self.left_vectors.shape[0], self.right_vectors.shape[0]
        d = np.zeros((n, p))
        m = self.singular_values.size
        d[:m, :m] = np.diag(self.singular_values)
        return self.left_vectors @ d @ self.right_vectors.T


def _fix_signs(u: np.ndarray, v: np.ndarray, m: int) -> None:
    # Largest-magnitude entry of each u_i positive; v_i follows u_i for the
    # paired columns, unpaired columns of either factor are fixed on their own.
    for i in range(u.shape[1]):
        j = int(np.argmax(np.abs(u[:, i])))
        if u[j, i] < 0:
            u[:, i] *= -1.0
            if i < m:
                v[:, i] *= -1.0
    for i in range(m, v.shape[1]):
        j = int(np.argmax(np.abs(v[:, i])))
        if v[j, i] < 0:
            v[:, i] *= -1.0


def svd(m, rel_threshold: float = DEFAULT_RANK_THRESHOLD) -> SvdResult:
    """Full singular value decomposition with sign convention and rank.

    Raises
    ------
    InputError
        Non-finite input or a threshold outside (0, 1).
    NumericError
        LAPACK did not converge.
    """
    if not 0.0 < rel_threshold < 1.0:
        raise InputError(f"rel_threshold must lie in (0, 1), got {rel_threshold}")
    a = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    v = vt.T.copy()
    u = u.copy()
    _fix_signs(u, v, s.size)
    rank = 0 if s.size == 0 or s[0] == 0.0 else int(np.sum(s > rel_threshold * s[0]))
    return SvdResult(u, v, s, rank, rel_threshold)


def log_vandermonde_sq(values) -> float:
    """``log prod_{a<b} (values_a - values_b)^2``; ``-inf`` on repeated values."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise InputError("vandermonde_sq needs at least one value")
    total = 0.0
    for a in range(x.size):
        for b in range(a + 1, x.size):
            diff = abs(x[a] - x[b])
            if diff == 0.0:
                return -math.inf
            total += 2.0 * math.log(diff)
    return total


def vandermonde_sq(values) -> float:
    """Squared Vandermonde determinant of ``values``, evaluated in log domain."""
    return math.exp(log_vandermonde_sq(values))


def log_vandermonde_sq_rows(values: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Row-wise :func:`log_vandermonde_sq` of ``values[index[t]]``.

    ``index`` is an integer array of shape (T, k); the result has shape (T,).
    """
    x = np.asarray(values, dtype=float)[index]
    out = np.zeros(index.shape[0])
    k = index.shape[1]
    with np.errstate(divide="ignore"):
        for a in range(k):
            for b in range(a + 1, k):
                out += 2.0 * np.log(np.abs(x[:, a] - x[:, b]))
    return out


class LogSum:
    """Running sum of non-negative terms held as a log magnitude.

    >>> s = LogSum.from_logs([0.0, 0.0])
    >>> round(s.value, 12)
    2.0
    """

    __slots__ = ("log_magnitude",)

    def __init__(self, log_magnitude: float = -math.inf):
        self.log_magnitude = float(log_magnitude)

    @classmethod
    def from_logs(cls, log_terms: Iterable[float]) -> "LogSum":
        arr = np.fromiter(log_terms, dtype=float)
        if arr.size == 0 or np.all(arr == -math.inf):
            return cls()
        return cls(float(logsumexp(arr)))

    def add_log(self, log_term: float) -> "LogSum":
        return LogSum(float(np.logaddexp(self.log_magnitude, log_term)))

    def __add__(self, other: "LogSum") -> "LogSum":
        return self.add_log(other.log_magnitude)

    @property
    def value(self) -> float:
        return math.exp(self.log_magnitude)

    def __repr__(self) -> str:
        return f"LogSum(log_magnitude={self.log_magnitude!r})"


def log_determinant(m) -> tuple[float, float]:
    """Sign and log-magnitude of ``det(m)`` via LU with partial pivoting."""
    a = as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise InputError(f"determinant needs a square matrix, got shape {a.shape}")
    sign, logabs = np.linalg.slogdet(a)
    return float(sign), float(logabs)


def determinant(m) -> float:
    """Determinant of a square matrix by pivoted elimination."""
    sign, logabs = log_determinant(m)
    if sign == 0.0:
        return 0.0
    return sign * math.exp(logabs)


def solve_spd(g, b, cutoff: float = 1e-12) -> np.ndarray:
    """Least-norm solution of ``g x = b`` for symmetric positive semi-definite ``g``.

    Eigen-directions with eigenvalue below ``cutoff * max eigenvalue`` are
    dropped, which gives the Moore-Penrose solution on singular systems.
    """
    a = as_matrix(g)
    rhs = np.asarray(b, dtype=float).ravel()
    if a.shape[0] != a.shape[1] or rhs.size != a.shape[0]:
        raise InputError(f"incompatible shapes {a.shape} and {rhs.shape}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > 1e-8 * max(scale, np.finfo(float).tiny):
        raise InputError("matrix is not symmetric")
    w, q = np.linalg.eigh(0.5 * (a + a.T))
    top = w.max(initial=0.0)
    keep = w > cutoff * top if top > 0 else np.zeros_like(w, dtype=bool)
    coef = (q[:, keep].T @ rhs) / w[keep]
    return q[:, keep] @ coef
