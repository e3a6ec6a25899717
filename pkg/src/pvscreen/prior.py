"""Hierarchical prior: matrix-normal latent effects, spike-and-slab exposure slopes,
Beta prior on the inclusion probability and log-Cholesky within-drug covariance.

The latent effect matrix ``gamma`` has one row per drug and one column per
random-effect term. ``vec`` stacks the rows, so that

    vec(gamma) ~ N(0, Sigma_D kron Sigma_gamma),

i.e. rows are correlated through ``Sigma_D`` and columns through
``Sigma_gamma``. Nothing here forms the Kronecker product.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betaln

LOG_2PI = np.log(2.0 * np.pi)


def n_log_chol(q: int) -> int:
    return q * (q + 1) // 2


def _q_from_len(k: int) -> int:
    q = int(round((np.sqrt(8 * k + 1) - 1) / 2))
    if n_log_chol(q) != k:
        raise ValueError(f"length {k} is not a triangular number q(q+1)/2")
    return q


@lru_cache(maxsize=None)
def _tril(q: int):
    rows, cols = np.tril_indices(q)
    return rows, cols, np.flatnonzero(rows == cols)


def log_chol_to_chol(log_chol) -> np.ndarray:
    """Lower Cholesky factor from ``(log L00, L10, log L11, L20, L21, log L22, ...)``."""
    v = np.array(log_chol, dtype=float)
    q = _q_from_len(v.size)
    rows, cols, diag = _tril(q)
    v[diag] = np.exp(v[diag])
    L = np.zeros((q, q))
    L[rows, cols] = v
    return L


def log_chol_to_cov(log_chol) -> np.ndarray:
    L = log_chol_to_chol(log_chol)
    return L @ L.T


def chol_to_log_chol(L) -> np.ndarray:
    L = np.array(L, dtype=float)
    d = np.arange(L.shape[0])
    L[d, d] = np.log(L[d, d])
    return L[np.tril_indices(L.shape[0])]


def cov_to_log_chol(cov) -> np.ndarray:
    return chol_to_log_chol(np.linalg.cholesky(cov))


def log_prior_gamma(gamma, sigma_d_chol, sigma_g_chol) -> float:
    """Log density of ``vec(gamma)`` under ``N(0, Sigma_D kron Sigma_gamma)``.

    Uses ``tr(Sg^-1 G' Sd^-1 G) = ||Ld^-1 G Lg^-T||_F^2``; cost O(N^2 q + N q^2).
    """
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    n, q = gamma.shape
    if sigma_d_chol.shape != (n, n) or sigma_g_chol.shape != (q, q):
        raise ValueError(
            f"dimension mismatch: gamma {gamma.shape}, Sigma_D factor {sigma_d_chol.shape}, "
            f"Sigma_gamma factor {sigma_g_chol.shape}"
        )
    a = solve_triangular(sigma_d_chol, gamma, lower=True)
    a = solve_triangular(sigma_g_chol, a.T, lower=True)
    logdet_d = 2.0 * np.sum(np.log(np.diag(sigma_d_chol)))
    logdet_g = 2.0 * np.sum(np.log(np.diag(sigma_g_chol)))
    return float(-0.5 * (n * q * LOG_2PI + q * logdet_d + n * logdet_g + np.sum(a * a)))


def grad_log_prior_gamma(gamma, sigma_d_chol, sigma_g_chol) -> np.ndarray:
    """Gradient ``-Sd^-1 G Sg^-1`` of :func:`log_prior_gamma` with respect to ``gamma``."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    a = solve_triangular(sigma_d_chol, gamma, lower=True)
    a = solve_triangular(sigma_d_chol.T, a, lower=False)
    b = solve_triangular(sigma_g_chol, a.T, lower=True)
    b = solve_triangular(sigma_g_chol.T, b, lower=False)
    return -b.T


def sample_gamma_prior(rng: np.random.Generator, sigma_d_chol, sigma_g_chol) -> np.ndarray:
    """Matrix-normal draw ``L_D Z L_gamma'``."""
    z = rng.standard_normal((sigma_d_chol.shape[0], sigma_g_chol.shape[0]))
    return sigma_d_chol @ z @ sigma_g_chol.T


def log_prior_hyper(log_chol, pi: float, a: float = 1.0, b: float = 1.0,
                    hyper_sd: float = 1.0) -> float:
    """Beta(a, b) on ``pi`` plus independent N(0, hyper_sd^2) on each log-Cholesky element."""
    if not 0.0 < pi < 1.0:
        raise ValueError(f"pi must lie in (0, 1), got {pi}")
    lp = (a - 1.0) * np.log(pi) + (b - 1.0) * np.log1p(-pi) - betaln(a, b)
    return float(lp) + log_prior_log_chol(log_chol, hyper_sd)


def log_prior_log_chol(log_chol, hyper_sd: float = 1.0) -> float:
    v = np.asarray(log_chol, dtype=float)
    return float(-0.5 * v.size * (LOG_2PI + 2.0 * np.log(hyper_sd)) - 0.5 * np.sum(v * v) / hyper_sd**2)


@dataclass
class LatentEffects:
    """Latent effects with the spike applied to the exposure column.

    ``gamma`` is ``N x q`` over the random-effect columns; ``exposure`` is the
    column of ``gamma`` that carries the spike.
    """

    gamma: np.ndarray
    delta: np.ndarray
    pi: float
    exposure: int = -1

    def theta(self) -> np.ndarray:
        th = np.array(self.gamma, dtype=float)
        th[:, self.exposure] *= self.delta
        return th


class KroneckerPrior:
    """Cached factorizations of a fixed ``Sigma_D``.

    Holds the Cholesky factor, the precision matrix and a colouring of the
    drugs into classes whose rows are conditionally independent under the
    prior (no nonzero precision entry within a class), so that each class
    can be updated as one block.
    """

    def __init__(self, sigma_d, tol: float = 1e-12):
        sigma_d = np.asarray(sigma_d, dtype=float)
        self.n = sigma_d.shape[0]
        self.is_identity = bool(np.array_equal(sigma_d, np.eye(self.n)))
        if self.is_identity:
            self.chol = np.eye(self.n)
            self.precision = np.eye(self.n)
            self.logdet = 0.0
        else:
            self.chol = np.linalg.cholesky(sigma_d)
            inv_chol = solve_triangular(self.chol, np.eye(self.n), lower=True)
            prec = inv_chol.T @ inv_chol
            self.precision = 0.5 * (prec + prec.T)
            self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.chol))))
        for arr in (self.chol, self.precision):
            arr.setflags(write=False)
        self.prec_diag = np.diag(self.precision).copy()
        scale = np.sqrt(np.outer(self.prec_diag, self.prec_diag))
        self.adjacency = (np.abs(self.precision) > tol * scale) & ~np.eye(self.n, dtype=bool)
        self.colors = _greedy_colors(self.adjacency)

    def quad(self, gamma) -> np.ndarray:
        """``gamma' Sigma_D^-1 gamma`` (a q x q matrix)."""
        if self.is_identity:
            return gamma.T @ gamma
        return gamma.T @ (self.precision @ gamma)

    def conditional_mean(self, gamma, rows) -> np.ndarray:
        """Prior mean of ``gamma[rows]`` given every other row."""
        if self.is_identity:
            return np.zeros((len(rows), gamma.shape[1]))
        p = self.precision[rows]
        d = self.prec_diag[rows]
        return -(p @ gamma - d[:, None] * gamma[rows]) / d[:, None]


def _greedy_colors(adjacency) -> list[np.ndarray]:
    n = adjacency.shape[0]
    color = np.full(n, -1)
    order = np.argsort(-adjacency.sum(axis=1), kind="stable")
    for i in order:
        used = set(color[adjacency[i]].tolist())
        c = 0
        while c in used:
            c += 1
        color[i] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)] if n else []
