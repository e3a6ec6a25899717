"""Synthetic screening data and the replicate benchmark harness.

Data follow the generative model

    logit p_ij = b1 + b2 Z1 + b3 Z2 + b4 Z1 Z2 + b5 x + theta_i1 + theta_ix x

with ``Z1`` adult, ``Z2`` female and ``x`` the post-exposure window. Each drug
gets all 8 binary strata. ``theta_i1 ~ N(0, random_intercept_sd^2)`` and
``theta_ix`` comes from the effect layout (zero for the remaining drugs).

Seeds: replicate ``r`` of a run with seed ``s`` draws its data from
``SeedSequence(s, spawn_key=(1, r))``; the sampler for method ``k`` on that
replicate uses seed ``SeedSequence(s, spawn_key=(2, r, k)).generate_state(1)[0]``.
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.special import expit
from scipy.stats import median_abs_deviation

from .baselines import bh_select, bonferroni_select, eb_fit
from .coprescription import nearest_pd
from .data import Dataset
from .sampler import WORKERS_ENV, SamplerConfig, compute_pip, max_workers, run_chains
from .selection import default_alpha_r, optimal_threshold

log = logging.getLogger(__name__)

SIM_BETA = (-9.36, 1.10, -0.212, -0.823, 0.078)
METHODS = ("eb_bonferroni", "eb_bh", "spike_slab", "spike_slab_copres")
REPLICATE_STREAM = 1
METHOD_STREAM = 2

# (age_adult, sex_female) for the four demographic strata
_DEMOGRAPHIC = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class MDistribution:
    """Stratum sizes ``m_ij``.

    ``lognormal``: ``round(exp(N(mu, sigma^2)))``, floored at 1. With
    ``paired`` the pre and post windows of a demographic stratum share one
    draw (each person contributes both windows). ``fixed`` reads an
    ``(n_drugs, 8)`` array, column order ``(age, sex, time)`` with time
    fastest, from ``values`` or from a whitespace/comma separated ``path``.
    """

    kind: str = "lognormal"
    mu: float = 9.0
    sigma: float = 1.5
    paired: bool = False
    values: tuple | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("lognormal", "fixed"):
            raise ValueError(f"unknown m distribution {self.kind!r}")
        if self.kind == "lognormal" and not self.sigma >= 0:
            raise ValueError("sigma must be nonnegative")
        if self.kind == "fixed" and self.values is None and self.path is None:
            raise ValueError("fixed m distribution needs values or a path")

    def draw(self, rng: np.random.Generator, n_drugs: int) -> np.ndarray:
        """``(n_drugs, 8)`` integer array of stratum sizes."""
        if self.kind == "fixed":
            m = np.asarray(self.values if self.values is not None else _read_m(self.path))
            if m.shape != (n_drugs, 8):
                raise ValueError(f"fixed m has shape {m.shape}, expected {(n_drugs, 8)}")
            if np.any(m < 0) or np.any(m != np.round(m)):
                raise ValueError("fixed m must be nonnegative integers")
            return m.astype(np.int64)
        if self.paired:
            z = rng.standard_normal((n_drugs, 4))
            z = np.repeat(z, 2, axis=1)
        else:
            z = rng.standard_normal((n_drugs, 8))
        return np.maximum(1, np.round(np.exp(self.mu + self.sigma * z))).astype(np.int64)


def _read_m(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = [line.replace(",", " ").split() for line in fh if line.strip()]
    return np.array([[float(v) for v in r] for r in rows])


# Calibrated so that the per-drug standard error of the exposure log-OR is
# about 0.1 (interquartile range 0.08-0.13); see the README section on
# stratum sizes.
DESK_M = MDistribution(mu=12.5, sigma=1.0, paired=True)


@dataclass(frozen=True)
class ScenarioSpec:
    n_drugs: int
    effect_layout: tuple[tuple[int, float], ...]
    beta: tuple[float, ...] = SIM_BETA
    random_intercept_sd: float = 0.3
    m_distribution: MDistribution = field(default_factory=MDistribution)
    sigma_d_spec: tuple = ("identity",)
    n_replicates: int = 50
    seed: int = 0
    tau: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.n_drugs < 1:
            raise ValueError("n_drugs must be positive")
        if len(self.beta) != 5:
            raise ValueError("beta must have 5 entries")
        counts = [int(c) for c, _ in self.effect_layout]
        if any(c < 0 for c in counts) or sum(counts) > self.n_drugs:
            raise ValueError("effect layout counts must be nonnegative and sum to at most n_drugs")
        if any(v == 0 for c, v in self.effect_layout if c):
            raise ValueError("layout effects must be nonzero; nulls are implicit")
        if self.random_intercept_sd < 0 or self.tau < 0:
            raise ValueError("standard deviations must be nonnegative")
        kind = self.sigma_d_spec[0]
        if kind == "block":
            _, k, lo, hi = self.sigma_d_spec
            if not (0 < k <= self.n_drugs and -1 < lo <= hi < 1):
                raise ValueError(f"invalid block spec {self.sigma_d_spec}")
        elif kind != "identity":
            raise ValueError(f"unknown sigma_d_spec {kind!r}")
        if self.n_replicates < 1:
            raise ValueError("n_replicates must be positive")

    @property
    def n_signals(self) -> int:
        return sum(int(c) for c, _ in self.effect_layout)

    def theta_x(self) -> np.ndarray:
        """Layout effects in drug order, zero for the nulls."""
        return np.concatenate(
            [np.full(int(c), float(v)) for c, v in self.effect_layout]
            + [np.zeros(self.n_drugs - self.n_signals)]
        )


def scenario1_spec(n_drugs: int = 922, **kw) -> ScenarioSpec:
    """Scenario 1: 90 signals among 922 drugs, identity Sigma_D.

    Any other ``n_drugs`` shrinks the layout proportionally (300 gives
    3/7/10/10 signals, i.e. 30 in total).
    """
    layout = ((10, -1.00), (20, -0.75), (30, -0.50), (30, 0.50))
    if n_drugs != 922:
        f = n_drugs / 922
        counts = np.floor(np.array([c for c, _ in layout]) * f + 0.5).astype(int)
        layout = tuple((int(c), v) for c, (_, v) in zip(counts, layout))
    kw.setdefault("name", "scenario1" if n_drugs == 922 else f"scenario1_{n_drugs}")
    return ScenarioSpec(n_drugs=n_drugs, effect_layout=layout, sigma_d_spec=("identity",), **kw)


def scenario2_spec(**kw) -> ScenarioSpec:
    """Scenario 2: 20 signals among 100 drugs, correlated block over the first 30."""
    kw.setdefault("name", "scenario2")
    return ScenarioSpec(n_drugs=100, effect_layout=((3, -0.75), (17, -0.50)),
                        sigma_d_spec=("block", 30, 0.25, 0.40), **kw)


def scenario_sigma_d(rng: np.random.Generator, spec: ScenarioSpec) -> np.ndarray:
    """Sigma_D for one replicate: identity, or a random block repaired to PD."""
    n = spec.n_drugs
    s = np.eye(n)
    if spec.sigma_d_spec[0] == "block":
        _, k, lo, hi = spec.sigma_d_spec
        u = rng.uniform(lo, hi, size=(k, k))
        b = np.triu(u, 1)
        b = b + b.T + np.eye(k)
        s[:k, :k] = b
        s = nearest_pd(s)
    return s


def generate_dataset(rng: np.random.Generator, spec: ScenarioSpec, sigma_d=None,
                     return_theta: bool = False):
    """Simulate one dataset; returns ``(dataset, truth)``.

    ``truth[i]`` is 1 when drug ``i`` has a nonzero layout effect. With
    ``tau > 0`` the signal effects get a perturbation from
    ``N(0, tau^2 Sigma_D)`` restricted to the signal coordinates
    (``sigma_d`` defaults to a fresh draw for the spec). With
    ``return_theta`` the true exposure effects are returned as a third item.
    """
    n = spec.n_drugs
    theta_x = spec.theta_x()
    truth = (theta_x != 0).astype(np.int8)
    if spec.tau > 0:
        if sigma_d is None:
            sigma_d = scenario_sigma_d(rng, spec)
        sig = np.flatnonzero(truth)
        sub = np.asarray(sigma_d)[np.ix_(sig, sig)]
        theta_x[sig] += spec.tau * np.linalg.cholesky(sub) @ rng.standard_normal(sig.size)
    theta_1 = spec.random_intercept_sd * rng.standard_normal(n)
    m = spec.m_distribution.draw(rng, n)

    age = np.tile(np.repeat([a for a, _ in _DEMOGRAPHIC], 2), n)
    sex = np.tile(np.repeat([s for _, s in _DEMOGRAPHIC], 2), n)
    time = np.tile([0, 1], 4 * n)
    drug = np.repeat(np.arange(n), 8)
    b = spec.beta
    eta = (b[0] + b[1] * age + b[2] * sex + b[3] * age * sex + b[4] * time
           + theta_1[drug] + theta_x[drug] * time)
    mm = m.reshape(-1)
    y = rng.binomial(mm, expit(eta))
    ds = Dataset.from_arrays(drug, age, sex, time, mm, y,
                             drug_names=[f"drug{i:04d}" for i in range(n)], n_drugs=n)
    if return_theta:
        return ds, truth, theta_x
    return ds, truth


def expected_events(spec: ScenarioSpec) -> float:
    """Mean total event count per replicate, by Monte Carlo-free approximation.

    Uses the mean of the m distribution and ignores the random intercepts'
    convexity; meant only as a sanity band for simulated totals.
    """
    md = spec.m_distribution
    if md.kind == "fixed":
        m_mean = np.asarray(md.draw(None, spec.n_drugs), dtype=float).reshape(spec.n_drugs, 8)
    else:
        m_mean = np.full((spec.n_drugs, 8), np.exp(md.mu + 0.5 * md.sigma**2))
    b, th = spec.beta, spec.theta_x()
    total = 0.0
    for k, (a, s) in enumerate(_DEMOGRAPHIC):
        for t in (0, 1):
            eta = b[0] + b[1] * a + b[2] * s + b[3] * a * s + b[4] * t + th * t
            total += float(np.sum(m_mean[:, 2 * k + t] * expit(eta)))
    return total


# ---------------------------------------------------------------- benchmark

def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(REPLICATE_STREAM, rep)))


def method_seed(seed: int, rep: int, k: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(METHOD_STREAM, rep, k)).generate_state(1)[0])


def simulate_replicate(spec: ScenarioSpec, rep: int):
    """``(dataset, truth, sigma_d)`` for replicate ``rep``."""
    rng = replicate_rng(spec.seed, rep)
    sigma_d = scenario_sigma_d(rng, spec)
    ds, truth = generate_dataset(rng, spec, sigma_d)
    return ds, truth, sigma_d


def confusion(selected, truth) -> dict:
    """n_selected, power = TP / #signals and fdr = FP / max(n_selected, 1)."""
    truth = np.asarray(truth).astype(bool)
    sel = np.zeros(truth.size, dtype=bool)
    sel[np.asarray(list(selected), dtype=int)] = True
    tp = int(np.sum(sel & truth))
    n_sel = int(sel.sum())
    return {
        "n_selected": n_sel,
        "power": tp / truth.sum() if truth.any() else float("nan"),
        "fdr": (n_sel - tp) / max(n_sel, 1),
    }


def _bayes_scores(ds, sigma_d, config):
    draws = run_chains(config, ds, sigma_d)
    return compute_pip(draws)


def _method_scores(name, ds, sigma_d, config):
    """Scores each selection rule needs: p-values for EB, PIPs for the Bayesian arms."""
    if name in ("eb_bonferroni", "eb_bh"):
        return eb_fit(ds).pvalue
    if name == "spike_slab":
        return _bayes_scores(ds, None, config)
    if name == "spike_slab_copres":
        return _bayes_scores(ds, sigma_d, config)
    raise ValueError(f"unknown method {name!r}")


def _select(name, scores, alpha, alpha_r):
    if name == "eb_bonferroni":
        return bonferroni_select(scores, alpha)
    if name == "eb_bh":
        return bh_select(scores, alpha)
    return optimal_threshold(scores, alpha_r).selected


def _run_replicate(args):
    spec, rep, methods, alphas, alpha_rs, config = args
    ds, truth, sigma_d = simulate_replicate(spec, rep)
    rows = []
    eb_scores = None
    for k, name in enumerate(methods):
        failed, err = False, ""
        try:
            if callable(name):
                label = getattr(name, "__name__", f"method{k}")
                per_alpha = [name(ds, truth, a) for a in alphas]
            else:
                label = name
                if name.startswith("eb_"):
                    if eb_scores is None:
                        eb_scores = _method_scores(name, ds, sigma_d, config)
                    scores = eb_scores
                else:
                    cfg = replace(config, seed=method_seed(spec.seed, rep, k))
                    scores = _method_scores(name, ds, sigma_d, cfg)
                per_alpha = [_select(name, scores, a, ar) for a, ar in zip(alphas, alpha_rs)]
        except Exception as exc:  # recorded, not raised
            label = name if isinstance(name, str) else getattr(name, "__name__", f"method{k}")
            failed, err = True, f"{type(exc).__name__}: {exc}"
            per_alpha = [None] * len(alphas)
        for a, sel in zip(alphas, per_alpha):
            row = {"method": label, "alpha": a, "replicate": rep}
            if failed:
                row.update(n_selected=np.nan, power=np.nan, fdr=np.nan, failed=True, error=err)
            else:
                row.update(confusion(sel, truth), failed=False, error="")
            rows.append(row)
    return rows


def _limit_workers():
    os.environ[WORKERS_ENV] = "1"


def run_benchmark(spec: ScenarioSpec, methods=METHODS, alpha=0.05, alpha_r=None,
                  sampler_config: SamplerConfig | None = None,
                  n_replicates: int | None = None) -> pd.DataFrame:
    """Per-replicate metrics for each method, in a long table.

    ``alpha`` may be a sequence; the fits are shared and only the selection
    rule is re-applied. ``alpha_r`` (the Bayesian FDR bound, one per alpha)
    defaults to :func:`default_alpha_r`. ``methods`` may include callables
    ``f(dataset, truth, alpha) -> selected indices``. A method that raises
    on a replicate gets a row with ``failed=True`` and NaN metrics.
    """
    alphas = [float(a) for a in np.atleast_1d(alpha)]
    if alpha_r is None:
        alpha_rs = [default_alpha_r(spec.n_drugs, a) for a in alphas]
    else:
        alpha_rs = [float(a) for a in np.atleast_1d(alpha_r)]
        if len(alpha_rs) == 1:
            alpha_rs *= len(alphas)
    if len(alpha_rs) != len(alphas):
        raise ValueError("alpha_r must match alpha in length")
    for m in methods:
        if not callable(m) and m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    config = sampler_config or SamplerConfig()
    n_rep = spec.n_replicates if n_replicates is None else n_replicates
    jobs = [(spec, r, tuple(methods), alphas, alpha_rs, config) for r in range(n_rep)]
    workers = min(max_workers(), n_rep)
    if workers > 1 and not any(callable(m) for m in methods):
        with ProcessPoolExecutor(max_workers=workers, initializer=_limit_workers) as pool:
            chunks = list(pool.map(_run_replicate, jobs))
    else:
        chunks = [_run_replicate(j) for j in jobs]
    table = pd.DataFrame([row for chunk in chunks for row in chunk])
    n_fail = int(table["failed"].sum())
    if n_fail:
        warnings.warn(f"{n_fail} method runs failed; they are excluded from the medians", stacklevel=2)
    return table


def summarize_benchmark(table: pd.DataFrame) -> pd.DataFrame:
    """Median and (unscaled) median absolute deviation per method and alpha.

    ``n_failed`` counts the replicates excluded because the method failed.
    """
    out = []
    for (alpha, method), g in table.groupby(["alpha", "method"], sort=False):
        ok = g[~g["failed"].astype(bool)]
        row = {"alpha": alpha, "method": method, "n_replicates": len(ok), "n_failed": len(g) - len(ok)}
        for col in ("n_selected", "power", "fdr"):
            v = ok[col].to_numpy(dtype=float)
            row[f"{col}_median"] = float(np.median(v)) if v.size else float("nan")
            row[f"{col}_mad"] = float(median_abs_deviation(v)) if v.size else float("nan")
        out.append(row)
    # one block per alpha, methods in the order they were run
    return pd.DataFrame(out).sort_values("alpha", kind="stable").reset_index(drop=True)


def format_table(summary: pd.DataFrame, digits: int = 2) -> str:
    """Markdown table with ``median (MAD)`` cells, one block per alpha."""
    lines = []
    for alpha, g in summary.groupby("alpha", sort=False):
        lines.append(f"Targeted FDR <= {alpha:g}")
        lines.append("")
        lines.append("| Method | # selected | Power | FDR |")
        lines.append("|---|---|---|---|")
        for _, r in g.iterrows():
            cells = [f"{r[f'{c}_median']:.{digits}f} ({r[f'{c}_mad']:.{digits}f})"
                     for c in ("n_selected", "power", "fdr")]
            lines.append(f"| {r['method']} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)
