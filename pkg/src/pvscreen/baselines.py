"""Simplified empirical-Bayes comparator with Bonferroni and Benjamini-Hochberg selection.

Each drug gets its own covariate-adjusted logistic fit; the exposure
log-odds ratios are then shrunk toward a common centre under a normal
prior whose variance is estimated by the method of moments. This stands in for a
full mixed-effects marginal-likelihood fit and is meant to reproduce the
qualitative behaviour of that comparator, not its exact numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .data import EXPOSURE, Dataset


@dataclass(frozen=True)
class EbFit:
    estimate: np.ndarray     # raw adjusted log-OR per drug (NaN if not estimable)
    se: np.ndarray
    shrunk: np.ndarray
    shrunk_se: np.ndarray
    shrinkage: np.ndarray    # tau^2 / (tau^2 + se^2)
    z: np.ndarray
    pvalue: np.ndarray
    tau2: float
    degenerate: bool = False
    center: float = 0.0      # common exposure effect the drugs are shrunk around


def _logistic_fit(X, y, m, n_iter=100, tol=1e-10):
    """Binomial logistic MLE by Newton-Raphson; returns (coef, covariance)."""
    rate = y.sum() / m.sum()
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(rate / (1 - rate))
    for _ in range(n_iter):
        p = expit(X @ beta)
        info = X.T @ (X * (m * p * (1 - p))[:, None])
        step = np.linalg.solve(info, X.T @ (y - m * p))
        beta += step
        if np.max(np.abs(step)) < tol:
            break
    p = expit(X @ beta)
    info = X.T @ (X * (m * p * (1 - p))[:, None])
    return beta, np.linalg.inv(info)


def _estimable_columns(X) -> list[int]:
    """Columns kept for a per-drug fit: drop all-zero columns, then any that break full rank."""
    cols = [c for c in range(X.shape[1]) if c in (0, EXPOSURE) or np.any(X[:, c] != 0)]
    for c in [c for c in cols if c not in (0, EXPOSURE)][::-1]:
        if np.linalg.matrix_rank(X[:, cols]) == len(cols):
            break
        cols.remove(c)
    return cols


def drug_log_or(dataset: Dataset, i: int, correction: float = 0.5) -> tuple[float, float]:
    """Covariate-adjusted exposure log-OR and its standard error for drug ``i``.

    Strata with zero events (or all events) get ``correction`` added to both
    the event and non-event counts. Returns NaNs if the drug has no events
    or lacks one of the windows.
    """
    sel = dataset.drug == i
    X = dataset.X[sel]
    y = dataset.y[sel].astype(float)
    m = dataset.m[sel].astype(float)
    keep = m > 0
    X, y, m = X[keep], y[keep], m[keep]
    if y.sum() == 0 or not (np.any(X[:, EXPOSURE] == 1) and np.any(X[:, EXPOSURE] == 0)):
        return float("nan"), float("nan")
    edge = (y == 0) | (y == m)
    y[edge] += correction
    m[edge] += 2 * correction
    cols = _estimable_columns(X)
    if np.linalg.matrix_rank(X[:, cols]) < len(cols):
        return float("nan"), float("nan")
    try:
        coef, cov = _logistic_fit(X[:, cols], y, m)
    except np.linalg.LinAlgError:
        return float("nan"), float("nan")
    k = cols.index(EXPOSURE)
    return float(coef[k]), float(np.sqrt(cov[k, k]))


def eb_fit(dataset: Dataset, correction: float = 0.5, center="median") -> EbFit:
    """Per-drug log-ORs, moment-estimated prior variance and shrunken z-scores.

    Drug effects are modelled as ``est_i = c + theta_i + e_i`` with
    ``theta_i ~ N(0, tau2)`` and ``e_i ~ N(0, se_i^2)``. The common effect
    ``c`` is the median of the estimates by default, which a minority of
    one-signed signals barely moves; ``center="pooled"`` uses the
    precision-weighted mean (alternating with the ``tau2`` update) and a
    number fixes it. ``tau2 = max(0, mean((est - c)^2) - mean(se^2))``. The shrunken
    estimates and z-scores refer to ``theta_i``. Drugs without an estimable
    contrast get p = 1.
    """
    n = dataset.n_drugs
    est, se = np.full(n, np.nan), np.full(n, np.nan)
    for i in range(n):
        est[i], se[i] = drug_log_or(dataset, i, correction)
    ok = np.isfinite(est) & np.isfinite(se)
    if not ok.any():
        nan = np.full(n, np.nan)
        return EbFit(est, se, nan, nan, np.zeros(n), np.zeros(n), np.ones(n), 0.0, degenerate=True)
    e, v = est[ok], se[ok] ** 2
    if center == "median":
        c = float(np.median(e))
    elif center == "pooled":
        c, tau2 = float(np.sum(e / v) / np.sum(1 / v)), 0.0
        for _ in range(100):
            tau2_new = max(0.0, float(np.mean((e - c) ** 2) - np.mean(v)))
            w = 1.0 / (tau2_new + v)
            c_new = float(np.sum(w * e) / np.sum(w))
            done = abs(c_new - c) < 1e-12 and abs(tau2_new - tau2) < 1e-12
            c, tau2 = c_new, tau2_new
            if done:
                break
    else:
        c = float(center)
    tau2 = max(0.0, float(np.mean((e - c) ** 2) - np.mean(v)))
    dev = np.where(ok, est - c, 0.0)
    B = np.where(ok, tau2 / (tau2 + np.where(ok, se, 1.0) ** 2), 0.0)
    shrunk = B * dev
    shrunk_se = np.where(ok, np.sqrt(B) * np.where(ok, se, 0.0), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(shrunk_se > 0, shrunk / shrunk_se, 0.0)
    p = np.where(ok, 2.0 * norm.sf(np.abs(z)), 1.0)
    return EbFit(est, se, shrunk, shrunk_se, B, z, p, tau2, center=c)


def bonferroni_select(pvals, alpha: float) -> np.ndarray:
    p = np.asarray(pvals, dtype=float)
    return np.flatnonzero(p <= alpha / max(p.size, 1))


def bh_select(pvals, alpha: float) -> np.ndarray:
    """Benjamini-Hochberg step-up selection."""
    p = np.asarray(pvals, dtype=float)
    n = p.size
    if n == 0:
        return np.array([], dtype=int)
    order = np.argsort(p, kind="stable")
    below = np.flatnonzero(p[order] <= alpha * np.arange(1, n + 1) / n)
    if below.size == 0:
        return np.array([], dtype=int)
    return np.sort(order[: below[-1] + 1])
