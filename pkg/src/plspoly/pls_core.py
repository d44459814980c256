"""PLS, PCR and least-squares estimators.

PLS at step ``k`` is the least-squares fit over the Krylov space
``K^k(X^T X, X^T Y)``. All work happens in the coordinates of the right
singular vectors, where ``X^T X`` is ``diag(lambda)`` and ``X^T Y`` is
``sqrt(lambda) * p_hat``; results are mapped back through ``V`` at the end.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .linalg import solve_spd
from .model import SpectralData

BREAKDOWN_REL = 1e-10


class TruncatedPathWarning(UserWarning):
    """The requested number of steps exceeds the Krylov dimension."""


@dataclass(frozen=True)
class KrylovBasis:
    """Orthonormal basis of ``K^k(X^T X, X^T Y)`` in right-singular coordinates.

    ``vectors[:, j]`` spans the increment from ``K^j`` to ``K^{j+1}``;
    ``moments[i] = sum_j lambda_j^(i+1) p_hat_j^2`` are the measure moments.
    """

    vectors: np.ndarray
    moments: np.ndarray

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]


def krylov_basis(s: SpectralData, k_max: int) -> KrylovBasis:
    """Grow an orthonormal Krylov basis with modified Gram-Schmidt.

    Each new direction is ``diag(lambda)`` applied to the previous basis
    vector, orthogonalized twice against the current basis. Growth stops when
    orthogonalization removes all but ``1e-10`` of a direction's norm.
    """
    lam = s.lambdas
    ph = s.p_hat_eff
    moments = np.array([np.sum(lam ** (i + 1) * ph**2) for i in range(2 * max(k_max, 1))])
    g = s.sqrt_lambdas * ph
    basis: list[np.ndarray] = []
    norm_g = np.linalg.norm(g)
    if norm_g == 0.0 or k_max < 1:
        return KrylovBasis(np.zeros((s.r, 0)), moments)
    basis.append(g / norm_g)
    while len(basis) < min(k_max, s.r):
        w = lam * basis[-1]
        before = np.linalg.norm(w)
        for _ in range(2):
            for q in basis:
                w = w - (q @ w) * q
        after = np.linalg.norm(w)
        if after <= BREAKDOWN_REL * before:
            break
        basis.append(w / after)
    return KrylovBasis(np.column_stack(basis), moments)


@dataclass(frozen=True)
class PlsPath:
    """PLS estimators for ``k = 0 .. k_max``.

    ``beta_tilde_by_k`` holds coefficients in right-singular coordinates
    (first ``r`` entries), ``beta_by_k`` the same vectors in the original
    coordinates. ``truncated`` records that fewer steps than requested exist;
    :meth:`beta` then returns the terminal estimator for larger ``k``.
    """

    beta_by_k: list
    beta_tilde_by_k: list
    fitted_by_k: list
    residual_sq_by_k: list
    k_max: int
    requested: int
    truncated: bool

    def beta(self, k: int) -> np.ndarray:
        return self.beta_by_k[min(k, self.k_max)]

    def coef_norm_sq(self) -> np.ndarray:
        return np.array([float(b @ b) for b in self.beta_tilde_by_k])

    def fitted_norm_sq(self) -> np.ndarray:
        return np.array([float(f @ f) for f in self.fitted_by_k])


def _to_original(s: SpectralData, coords: np.ndarray) -> np.ndarray:
    return s.svd.right_vectors[:, : s.r] @ coords


def fit_pls(s: SpectralData, k_max: int, warn: bool = True) -> PlsPath:
    """PLS path by least squares over nested Krylov spaces.

    ``k_max`` beyond the effective Krylov dimension is not an error: the
    path stops early, ``truncated`` is set and (unless ``warn`` is false) a
    :class:`TruncatedPathWarning` is emitted.
    """
    if k_max < 0:
        raise InputError("k_max must be non-negative")
    kb = krylov_basis(s, k_max)
    d = s.sqrt_lambdas
    ph = s.p_hat[: s.r]
    u_r = s.svd.left_vectors[:, : s.r]
    tail = s.tail_sq

    zero = np.zeros(s.r)
    betas_t = [zero]
    residuals = [float(ph @ ph) + tail]
    for k in range(1, kb.dimension + 1):
        q = kb.vectors[:, :k]
        a = d[:, None] * q
        c = solve_spd(a.T @ a, a.T @ ph)
        bt = q @ c
        betas_t.append(bt)
        res = ph - d * bt
        residuals.append(float(res @ res) + tail)

    truncated = kb.dimension < k_max
    if truncated and warn:
        warnings.warn(
            f"requested {k_max} PLS steps but the Krylov dimension is {kb.dimension}",
            TruncatedPathWarning,
            stacklevel=2,
        )
    return PlsPath(
        beta_by_k=[_to_original(s, b) for b in betas_t],
        beta_tilde_by_k=betas_t,
        fitted_by_k=[u_r @ (d * b) for b in betas_t],
        residual_sq_by_k=residuals,
        k_max=kb.dimension,
        requested=k_max,
        truncated=truncated,
    )


def pcr_coordinates(s: SpectralData, k: int) -> np.ndarray:
    if not 0 <= k <= s.r:
        raise InputError(f"PCR needs 0 <= k <= r = {s.r}, got {k}")
    out = np.zeros(s.r)
    out[:k] = s.p_hat[:k] / s.sqrt_lambdas[:k]
    return out


def fit_pcr(s: SpectralData, k: int) -> np.ndarray:
    """Principal components regression on the top ``k`` eigen-directions."""
    return _to_original(s, pcr_coordinates(s, k))


def fit_ls(s: SpectralData) -> np.ndarray:
    """Minimum-length least squares via the Moore-Penrose pseudo-inverse.

    Computed from the design matrix directly (``numpy.linalg.pinv``) rather
    than from the stored SVD, so it can serve as an independent check on the
    spectral expansions.
    """
    if s.r < 1:
        raise InputError("least squares needs rank >= 1")
    x = s.problem.design
    pinv = np.linalg.pinv(x, rcond=s.svd.rel_threshold)
    return pinv @ s.problem.response
