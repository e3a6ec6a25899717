"""Bayesian FDR control by thresholding posterior inclusion probabilities."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

EMPTY_THRESHOLD = 1.0 + 1e-9
# Expected FDR within TIE_TOL of the bound counts as meeting it, and FNR values
# within TIE_TOL are tied, so exact ties are not decided by summation order.
TIE_TOL = 1e-12


class Direction(str, enum.Enum):
    INCREASED = "increased"
    DECREASED = "decreased"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class SelectionResult:
    threshold: float
    selected: tuple[int, ...]
    expected_fdr: float
    expected_fnr: float
    alpha_r: float
    feasible: bool = True
    direction: dict = field(default_factory=dict)

    @property
    def n_selected(self) -> int:
        return len(self.selected)


def expected_fdr(pips, t: float) -> float:
    pips = np.asarray(pips, dtype=float)
    sel = pips >= t
    return float(np.sum(1.0 - pips[sel]) / max(int(sel.sum()), 1))


def expected_fnr(pips, t: float) -> float:
    pips = np.asarray(pips, dtype=float)
    sel = pips >= t
    return float(np.sum(pips[~sel]) / max(pips.size - int(sel.sum()), 1))


def threshold_curve(pips) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Candidate thresholds with their selection size, expected FDR and FNR.

    Candidates are the distinct PIP values in ascending order followed by
    ``EMPTY_THRESHOLD``.
    """
    pips = np.asarray(pips, dtype=float)
    n = pips.size
    cand = np.append(np.unique(pips), EMPTY_THRESHOLD)
    desc = np.sort(pips)[::-1]
    cum_miss = np.concatenate([[0.0], np.cumsum(1.0 - desc)])
    cum_pip = np.concatenate([[0.0], np.cumsum(desc)])
    # number selected at threshold t = #{pip >= t}
    r = n - np.searchsorted(np.sort(pips), cand, side="left")
    fdr = cum_miss[r] / np.maximum(r, 1)
    fnr = (cum_pip[n] - cum_pip[r]) / np.maximum(n - r, 1)
    return cand, r, fdr, fnr


def optimal_threshold(pips, alpha_r: float) -> SelectionResult:
    """Minimise expected FNR subject to expected FDR <= ``alpha_r``.

    Only nonempty selections count as feasible; ties (to ``TIE_TOL``) go to
    the smaller threshold. With no feasible nonempty selection the result is
    empty and ``feasible`` is False.
    """
    if not 0.0 < alpha_r <= 1.0:
        raise ValueError("alpha_r must lie in (0, 1]")
    pips = np.asarray(pips, dtype=float)
    cand, r, fdr, fnr = threshold_curve(pips)
    ok = (r > 0) & (fdr <= alpha_r + TIE_TOL)
    if not ok.any():
        return SelectionResult(EMPTY_THRESHOLD, (), 0.0, float(pips.mean()) if pips.size else 0.0,
                               alpha_r, feasible=False)
    idx = np.flatnonzero(ok)
    best = idx[np.flatnonzero(fnr[idx] <= fnr[idx].min() + TIE_TOL)[0]]  # smallest tied threshold
    t = float(cand[best])
    selected = tuple(int(i) for i in np.flatnonzero(pips >= t))
    return SelectionResult(t, selected, float(fdr[best]), float(fnr[best]), alpha_r)


def classify_direction(summary) -> Direction:
    """Increased if the posterior mean adjusted OR exceeds 1, decreased if below."""
    or_mean = getattr(summary, "or_mean", summary)
    if or_mean > 1.0:
        return Direction.INCREASED
    if or_mean < 1.0:
        return Direction.DECREASED
    return Direction.INDETERMINATE


def select(pips, alpha_r: float, summaries=None) -> SelectionResult:
    """``optimal_threshold`` plus direction labels for the selected drugs."""
    res = optimal_threshold(pips, alpha_r)
    if summaries is None:
        return res
    direction = {i: classify_direction(summaries[i]) for i in res.selected}
    return SelectionResult(res.threshold, res.selected, res.expected_fdr, res.expected_fnr,
                           res.alpha_r, res.feasible, direction)


def default_alpha_r(n_drugs: int, target: float = 0.05) -> float:
    """0.02 for screens of 500 or more drugs, otherwise the target FDR itself."""
    return 0.02 if n_drugs >= 500 else target
