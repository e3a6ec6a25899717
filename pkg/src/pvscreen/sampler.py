"""MCMC for the spike-and-slab hierarchical binomial model.

Model, for stratum ``j`` of drug ``i`` with design vector ``x_ij``::

    Y_ij ~ Binomial(m_ij, p_ij),   logit p_ij = x_ij' beta + x_ij' theta_i

``theta_i`` is zero outside the random-effect columns; on them it equals the
latent ``gamma_i`` except for the exposure entry, which is
``delta_i * gamma_{i,x}``. ``vec(gamma) ~ N(0, Sigma_D kron Sigma_gamma)``,
``delta_i ~ Bernoulli(pi)``, ``pi ~ Beta(a, b)``, ``Sigma_gamma`` has
independent normal priors on its log-Cholesky elements and ``beta`` has
independent N(0, beta_prior_sd^2) priors.

Each iteration runs, in order:

* ``beta``: Metropolis-Hastings with a proposal shaped by the Fisher
  information, followed by a move that shifts the fixed intercept against
  all random intercepts (the likelihood is invariant under it, so it only
  has to beat the prior ratio). Without that move the intercepts mix very
  slowly when the data are strong. A second move shifts the fixed exposure
  effect against the included exposure effects; the excluded drugs'
  likelihood enters its ratio.
* ``gamma``: drugs in a connected component of ``Sigma_D``'s precision graph
  with 2 to ``MAX_JOINT`` members get one joint preconditioned MALA step
  per random-effect column.
  The rest are updated one colour class at a time; rows in a class are
  conditionally independent, so each class takes one vectorised
  coordinate-wise Metropolis step per column. Exposure entries with
  ``delta_i = 0`` do not touch the likelihood and are drawn exactly from
  their conditional prior.
* ``delta``: exact Gibbs draws; the indicators are conditionally independent
  given everything else.
* ``pi``: conjugate Beta draw.
* ``sigma_gamma``: random-walk Metropolis on the log-Cholesky vector.

Proposal scales adapt by Robbins-Monro during warmup only. Binomial
coefficients are left out of the log likelihood.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.sparse.csgraph import connected_components
from scipy.special import expit

from .coprescription import DrugCovariance
from .data import DESIGN_COLUMNS, EXPOSURE, Dataset
from .prior import (
    LOG_2PI,
    KroneckerPrior,
    LatentEffects,
    log_chol_to_chol,
    log_prior_hyper,
    log_prior_log_chol,
    n_log_chol,
)

ETA_CLAMP = 35.0
MAX_JOINT = 400  # largest precision-graph component updated as one block
JOINT_TARGET = 0.574
UPDATES = ("beta", "gamma", "delta", "pi", "sigma_gamma")
WORKERS_ENV = "PVSCREEN_MAX_WORKERS"

# Named substreams derived from the run seed: chain c uses spawn key (CHAIN_STREAM, c).
CHAIN_STREAM = 0


class SamplerError(FloatingPointError):
    """Non-finite log posterior; the chain state is corrupt."""


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_warmup: int = 2000
    n_keep: int = 2000
    seed: int = 0
    proposal_kind: str = "random_walk"
    target_accept: float | None = None
    thin: int = 1
    update_order: tuple[str, ...] = UPDATES
    re_columns: tuple[int, ...] = (0, EXPOSURE)
    pi_prior: tuple[float, float] = (1.0, 1.0)
    hyper_sd: float = 1.0
    beta_prior_sd: float = 10.0
    sigma_gamma_steps: int = 5
    init_beta: tuple[float, ...] | None = None
    init_log_chol: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.proposal_kind not in ("random_walk", "mala"):
            raise ValueError(f"unknown proposal_kind {self.proposal_kind!r}")
        if EXPOSURE not in self.re_columns:
            raise ValueError("the exposure column must be a random-effect column")
        if list(self.re_columns) != sorted(set(self.re_columns)):
            raise ValueError("re_columns must be sorted and unique")
        bad = [u for u in self.update_order if u not in UPDATES]
        if bad:
            raise ValueError(f"unknown updates {bad}")
        if self.n_chains < 1 or self.n_keep < 1 or self.n_warmup < 0 or self.thin < 1:
            raise ValueError("invalid iteration counts")
        if self.init_log_chol is not None and len(self.init_log_chol) != n_log_chol(len(self.re_columns)):
            raise ValueError("init_log_chol has the wrong length")

    @property
    def accept_target(self) -> float:
        if self.target_accept is not None:
            return self.target_accept
        return 0.574 if self.proposal_kind == "mala" else 0.234


@dataclass
class ModelState:
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    pi: float
    log_chol: np.ndarray

    def copy(self) -> ModelState:
        return ModelState(self.beta.copy(), self.gamma.copy(), self.delta.copy(),
                          float(self.pi), self.log_chol.copy())


@dataclass
class PosteriorDraws:
    """Kept draws of one chain."""

    chain: int
    beta: np.ndarray           # (n_keep, p+2)
    delta: np.ndarray          # (n_keep, N) int8
    theta_x: np.ndarray        # (n_keep, N), exactly 0 where delta is 0
    pi: np.ndarray             # (n_keep,)
    sigma_gamma: np.ndarray    # (n_keep, q, q)
    log_post: np.ndarray       # (n_keep,)
    thin: int = 1
    accept: dict = field(default_factory=dict)
    clamp_count: int = 0
    warmup_accept: dict = field(default_factory=dict)

    @property
    def n_keep(self) -> int:
        return self.delta.shape[0]


# ---------------------------------------------------------------- likelihood

def _log1pexp(eta):
    return np.logaddexp(0.0, eta)


def _record_ll(y, m, eta):
    return y * eta - m * _log1pexp(eta)


def log_likelihood(dataset: Dataset, beta, effects: LatentEffects,
                   re_columns=(0, EXPOSURE)) -> float:
    """Binomial log likelihood without the binomial coefficients.

    ``effects.gamma`` holds the random-effect columns listed in
    ``re_columns``; ``effects.exposure`` indexes the exposure column of it.
    """
    theta = np.zeros((dataset.n_drugs, len(DESIGN_COLUMNS)))
    theta[:, list(re_columns)] = effects.theta()
    eta = dataset.X @ np.asarray(beta, dtype=float) + np.sum(dataset.X * theta[dataset.drug], axis=1)
    return float(np.sum(_record_ll(dataset.y, dataset.m, eta)))


def grad_log_likelihood(dataset: Dataset, beta, effects: LatentEffects,
                        re_columns=(0, EXPOSURE)) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`log_likelihood` with respect to ``beta`` and ``gamma``."""
    re = list(re_columns)
    theta = np.zeros((dataset.n_drugs, len(DESIGN_COLUMNS)))
    theta[:, re] = effects.theta()
    X = dataset.X
    eta = X @ np.asarray(beta, dtype=float) + np.sum(X * theta[dataset.drug], axis=1)
    r = dataset.y - dataset.m * expit(eta)
    g_beta = X.T @ r
    g_gamma = np.stack(
        [np.bincount(dataset.drug, r * X[:, c], minlength=dataset.n_drugs) for c in re], axis=1
    )
    g_gamma[:, effects.exposure] *= effects.delta
    return g_beta, g_gamma


# ---------------------------------------------------------------- model

class _Model:
    """Read-only arrays shared by every chain on one dataset."""

    def __init__(self, dataset: Dataset, sigma_d, cfg: SamplerConfig):
        self.dataset = dataset
        self.cfg = cfg
        self.X = np.asarray(dataset.X)
        self.y = np.asarray(dataset.y)
        self.m = np.asarray(dataset.m)
        self.drug = np.asarray(dataset.drug)
        self.N = dataset.n_drugs
        self.p = self.X.shape[1]
        self.re = np.array(cfg.re_columns)
        self.q = len(self.re)
        self.ex = int(np.flatnonzero(self.re == EXPOSURE)[0])
        self.icpt = int(np.flatnonzero(self.re == 0)[0]) if 0 in cfg.re_columns else None
        self.Xre = self.X[:, self.re]
        if sigma_d is None:
            sigma_d = np.eye(self.N)
        elif isinstance(sigma_d, DrugCovariance):
            sigma_d = sigma_d.matrix
        sigma_d = np.asarray(sigma_d, dtype=float)
        if sigma_d.shape != (self.N, self.N):
            raise ValueError(f"Sigma_D has shape {sigma_d.shape}, expected {(self.N, self.N)}")
        self.kron = KroneckerPrior(sigma_d)
        # Connected components of the precision graph with 2..MAX_JOINT drugs
        # are updated jointly; everything else coordinate-wise by colour class.
        n_comp, label = connected_components(self.kron.adjacency, directed=False)
        sizes = np.bincount(label, minlength=n_comp)
        joint = (sizes[label] > 1) & (sizes[label] <= MAX_JOINT)
        self.blocks = []
        for rows in self.kron.colors:
            rows = rows[~joint[rows]]
            if rows.size:
                self.blocks.append(self._index(rows))
        self.joint = []
        for c in np.flatnonzero((sizes > 1) & (sizes <= MAX_JOINT)):
            rows = np.flatnonzero(label == c)
            prec = np.array(self.kron.precision[np.ix_(rows, rows)])
            self.joint.append(self._index(rows) + (prec,))
        self.a_pi, self.b_pi = cfg.pi_prior

    def _index(self, rows):
        pos = np.full(self.N, -1)
        pos[rows] = np.arange(len(rows))
        rec = np.flatnonzero(pos[self.drug] >= 0)
        return rows, rec, pos[self.drug[rec]]

    def drug_sum(self, values, loc=None, n=None):
        if loc is None:
            return np.bincount(self.drug, values, minlength=self.N)
        return np.bincount(loc, values, minlength=n)


def _pooled_fit(model: _Model, n_iter: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Pooled logistic MLE of ``beta`` (Newton); returns estimate and information."""
    X, y, m = model.X, model.y, model.m
    rate = (y.sum() + 0.5) / (m.sum() + 1.0)
    beta = np.zeros(model.p)
    beta[0] = np.log(rate / (1 - rate))
    ridge = 1.0 / model.cfg.beta_prior_sd**2
    for _ in range(n_iter):
        mu = m * expit(X @ beta)
        info = X.T @ (X * (mu * (1 - mu / np.maximum(m, 1)))[:, None]) + ridge * np.eye(model.p)
        step = np.linalg.solve(info, X.T @ (y - mu) - ridge * beta)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-10:
            break
    return beta, info


# ---------------------------------------------------------------- chain

class _Chain:
    def __init__(self, model: _Model, rng: np.random.Generator, state: ModelState | None = None):
        self.model = model
        self.cfg = model.cfg
        self.rng = rng
        cfg, N, q = model.cfg, model.N, model.q
        beta_hat, info = _pooled_fit(model)
        self.beta_chol = np.linalg.cholesky(np.linalg.inv(info))
        if state is None:
            if cfg.init_beta is not None:
                beta = np.array(cfg.init_beta, dtype=float)
            else:
                beta = beta_hat + 0.5 * self.beta_chol @ rng.standard_normal(model.p)
            if cfg.init_log_chol is not None:
                log_chol = np.array(cfg.init_log_chol, dtype=float)
            else:
                log_chol = np.zeros(n_log_chol(q))
                diag = np.cumsum(np.arange(1, q + 1)) - 1
                log_chol[diag] = np.log(0.5) + 0.1 * rng.standard_normal(q)
            state = ModelState(
                beta=beta,
                gamma=0.1 * rng.standard_normal((N, q)),
                delta=(rng.random(N) < 0.5).astype(np.int8),
                pi=float(rng.uniform(0.2, 0.8)),
                log_chol=log_chol,
            )
        self.state = state
        self.target = cfg.accept_target
        self.set_sigma_gamma(state.log_chol)
        self.clamp_count = 0
        self.refresh_eta()
        # Initial per-entry scales from the curvature of each drug's likelihood.
        w = model.m * expit(self.eta) * (1 - expit(self.eta))
        curv = np.stack([model.drug_sum(w * model.Xre[:, k] ** 2) for k in range(q)], axis=1)
        self.log_s_gamma = np.log(1.0 / np.sqrt(curv + 1.0))
        self.log_s_beta = np.log(2.38 / np.sqrt(model.p))
        self.log_s_shift = np.log(0.1)
        self.log_s_xshift = np.log(0.05)
        self.shift_exposure_on = True
        self.log_s_sigma = np.log(0.1)
        self.log_s_joint = np.zeros((len(model.joint), q))
        self.acc = {k: [0.0, 0] for k in ("beta", "shift", "shift_x", "gamma", "gamma_joint", "sigma_gamma")}

    # -- cached quantities

    def set_sigma_gamma(self, log_chol):
        self.L_g = log_chol_to_chol(log_chol)
        L_inv = solve_triangular(self.L_g, np.eye(self.model.q), lower=True)
        self.omega = L_inv.T @ L_inv  # Sigma_gamma^-1

    def theta_re(self):
        s = self.state
        th = s.gamma.copy()
        th[:, self.model.ex] *= s.delta
        return th

    def refresh_eta(self):
        m = self.model
        self.eta = m.X @ self.state.beta + np.sum(m.Xre * self.theta_re()[m.drug], axis=1)

    def ll_terms(self, eta, rec=None):
        big = np.abs(eta) > ETA_CLAMP
        if big.any():
            self.clamp_count += int(big.sum())
            eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
        m = self.model
        if rec is None:
            return _record_ll(m.y, m.m, eta)
        return _record_ll(m.y[rec], m.m[rec], eta)

    def _adapt(self, log_s, acc_prob, t):
        return log_s + (t + 1.0) ** -0.6 * (acc_prob - self.target)

    def _tally(self, key, accepted):
        a = self.acc[key]
        a[0] += float(np.sum(accepted))
        a[1] += int(np.size(accepted))

    # -- beta

    def beta_log_prior(self, beta):
        return -0.5 * np.sum(beta**2) / self.cfg.beta_prior_sd**2

    def update_beta(self, t, adapt):
        m, s = self.model, self.state
        ll = float(np.sum(self.ll_terms(self.eta)))
        if not np.isfinite(ll):
            raise SamplerError(f"iteration {t}: non-finite log likelihood at current state")
        scale = np.exp(self.log_s_beta)
        z = self.rng.standard_normal(m.p)
        if self.cfg.proposal_kind == "mala":
            M = self.beta_chol @ self.beta_chol.T
            g = m.X.T @ (m.y - m.m * expit(self.eta)) - s.beta / self.cfg.beta_prior_sd**2
            mean_fwd = s.beta + 0.5 * scale**2 * M @ g
            prop = mean_fwd + scale * self.beta_chol @ z
            eta_p = self.eta + m.X @ (prop - s.beta)
            g_p = m.X.T @ (m.y - m.m * expit(eta_p)) - prop / self.cfg.beta_prior_sd**2
            mean_rev = prop + 0.5 * scale**2 * M @ g_p
            r_fwd = solve_triangular(self.beta_chol, prop - mean_fwd, lower=True)
            r_rev = solve_triangular(self.beta_chol, s.beta - mean_rev, lower=True)
            log_q = -0.5 * (np.sum(r_rev**2) - np.sum(r_fwd**2)) / scale**2
        else:
            prop = s.beta + scale * self.beta_chol @ z
            eta_p = self.eta + m.X @ (prop - s.beta)
            log_q = 0.0
        ll_p = float(np.sum(self.ll_terms(eta_p)))
        log_a = ll_p - ll + self.beta_log_prior(prop) - self.beta_log_prior(s.beta) + log_q
        self.last_log_a = log_a
        ok = np.log(self.rng.random()) < log_a
        if ok:
            s.beta = prop
            self.eta = eta_p
        self._tally("beta", ok)
        if adapt:
            self.log_s_beta = self._adapt(self.log_s_beta, min(1.0, np.exp(min(log_a, 0.0))), t)
        if m.icpt is not None:
            self.shift_intercepts(t, adapt)
        if self.shift_exposure_on:
            self.shift_exposure(t, adapt)

    def gamma_log_prior(self, gamma):
        """Log prior of gamma up to terms constant in gamma."""
        Q = self.model.kron.quad(gamma)
        return -0.5 * float(np.sum(self.omega * Q))

    def shift_intercepts(self, t, adapt):
        m, s = self.model, self.state
        c = np.exp(self.log_s_shift) * self.rng.standard_normal()
        g_new = s.gamma.copy()
        g_new[:, m.icpt] -= c
        b_new = s.beta.copy()
        b_new[0] += c
        log_a = (self.gamma_log_prior(g_new) - self.gamma_log_prior(s.gamma)
                 + self.beta_log_prior(b_new) - self.beta_log_prior(s.beta))
        ok = np.log(self.rng.random()) < log_a
        if ok:
            s.gamma, s.beta = g_new, b_new
        self._tally("shift", ok)
        if adapt:
            self.log_s_shift = self._adapt(self.log_s_shift, min(1.0, np.exp(min(log_a, 0.0))), t)

    def shift_exposure(self, t, adapt):
        """Move ``beta_x`` by ``c`` and every included exposure effect by ``-c``.

        Included drugs keep their linear predictor; excluded drugs see the
        change in ``beta_x``, so the likelihood enters the ratio for them only.
        """
        m, s = self.model, self.state
        c = np.exp(self.log_s_xshift) * self.rng.standard_normal()
        g_new = s.gamma.copy()
        g_new[:, m.ex] -= c * s.delta
        b_new = s.beta.copy()
        b_new[EXPOSURE] += c
        off = np.flatnonzero(s.delta[m.drug] == 0)
        eta_off = self.eta[off]
        eta_new = eta_off + c * m.X[off, EXPOSURE]
        d_ll = float(np.sum(self.ll_terms(eta_new, off)) - np.sum(self.ll_terms(eta_off, off)))
        log_a = (d_ll + self.gamma_log_prior(g_new) - self.gamma_log_prior(s.gamma)
                 + self.beta_log_prior(b_new) - self.beta_log_prior(s.beta))
        ok = np.log(self.rng.random()) < log_a
        if ok:
            s.gamma, s.beta = g_new, b_new
            self.eta[off] = eta_new
        self._tally("shift_x", ok)
        if adapt:
            self.log_s_xshift = self._adapt(self.log_s_xshift, min(1.0, np.exp(min(log_a, 0.0))), t)

    # -- gamma

    def update_gamma(self, t, adapt, blocks=None):
        for rows, rec, loc in (self.model.blocks if blocks is None else blocks):
            for k in range(self.model.q):
                self._update_gamma_column(rows, rec, loc, k, t, adapt)
        if blocks is None:
            for c, (rows, rec, loc, prec) in enumerate(self.model.joint):
                for k in range(self.model.q):
                    self._update_gamma_joint(c, rows, rec, loc, prec, k, t, adapt)

    def _joint_terms(self, g, rows, rec, loc, prec, b, k, eta):
        """Log target, gradient and metric for column ``k`` of one component."""
        m, s = self.model, self.state
        n = len(rows)
        x = m.Xre[rec, k]
        if k == m.ex:
            x = x * s.delta[rows][loc]
        p = expit(eta)
        lp = m.drug_sum(self.ll_terms(eta, rec), loc, n).sum()
        wkk = self.omega[k, k]
        pg = prec @ g
        lp -= 0.5 * wkk * g @ pg + g @ b
        grad = m.drug_sum((m.y[rec] - m.m[rec] * p) * x, loc, n) - wkk * pg - b
        H = wkk * prec
        H[np.diag_indices(n)] += m.drug_sum(m.m[rec] * p * (1 - p) * x * x, loc, n)
        return lp, grad, (np.linalg.cholesky(H), True), x

    def _update_gamma_joint(self, c, rows, rec, loc, prec, k, t, adapt):
        """Preconditioned Langevin step on a whole column of a correlated component.

        The metric is the prior precision plus the likelihood curvature at the
        current point, so the proposal is close to the conditional posterior
        and its scale hardly depends on the component size.
        """
        m, s = self.model, self.state
        others = [l for l in range(m.q) if l != k]
        if others:
            b = prec @ (s.gamma[np.ix_(rows, others)] @ self.omega[others, k])
        else:
            b = np.zeros(len(rows))
        g = s.gamma[rows, k].copy()
        eta = self.eta[rec]
        lp, grad, chol, x = self._joint_terms(g, rows, rec, loc, prec, b, k, eta)
        eps = np.exp(self.log_s_joint[c, k])
        z = self.rng.standard_normal(len(rows))
        mean = g + 0.5 * eps**2 * cho_solve(chol, grad, check_finite=False)
        g_new = mean + eps * solve_triangular(chol[0], z, lower=True, trans="T", check_finite=False)
        eta_new = eta + x * (g_new - g)[loc]
        lp_new, grad_new, chol_new, _ = self._joint_terms(g_new, rows, rec, loc, prec, b, k, eta_new)
        mean_rev = g_new + 0.5 * eps**2 * cho_solve(chol_new, grad_new, check_finite=False)

        def log_q(to, mu, ch):
            r = ch[0].T @ (to - mu)
            return -0.5 * r @ r / eps**2 + np.sum(np.log(np.diag(ch[0])))

        log_a = lp_new - lp + log_q(g, mean_rev, chol_new) - log_q(g_new, mean, chol)
        ok = np.log(self.rng.random()) < log_a
        if ok:
            s.gamma[rows, k] = g_new
            self.eta[rec] = eta_new
        self._tally("gamma_joint", ok)
        if adapt:
            acc = min(1.0, np.exp(min(log_a, 0.0))) if np.isfinite(log_a) else 0.0
            self.log_s_joint[c, k] += (t + 1.0) ** -0.6 * (acc - JOINT_TARGET)

    def _cond_prior(self, rows):
        """Conditional prior mean of the rows and the row precision scale P_ii."""
        kron = self.model.kron
        return kron.conditional_mean(self.state.gamma, rows), kron.prec_diag[rows]

    def _update_gamma_column(self, rows, rec, loc, k, t, adapt):
        m, s = self.model, self.state
        n = len(rows)
        mu, pdiag = self._cond_prior(rows)
        g = s.gamma[rows]
        if k == m.ex:
            on = s.delta[rows] == 1
            off = ~on
            if off.any():
                # Exact draw from the conditional prior of this entry.
                w = self.omega[k]
                dev = g[off] - mu[off]
                cmean = mu[off, k] - (dev @ w - dev[:, k] * w[k]) / w[k]
                csd = 1.0 / np.sqrt(pdiag[off] * w[k])
                s.gamma[rows[off], k] = cmean + csd * self.rng.standard_normal(int(off.sum()))
                g = s.gamma[rows]
        else:
            on = np.ones(n, dtype=bool)
        if not on.any():
            return
        scale = np.exp(self.log_s_gamma[rows, k])
        z = self.rng.standard_normal(n)
        x_rec = m.Xre[rec, k]
        eta = self.eta[rec]
        ll = m.drug_sum(self.ll_terms(eta, rec), loc, n)
        dev = g - mu
        wk = self.omega[:, k]
        if self.cfg.proposal_kind == "mala":
            r = m.y[rec] - m.m[rec] * expit(eta)
            grad = m.drug_sum(r * x_rec, loc, n) - pdiag * (dev @ wk)
            step = 0.5 * scale**2 * grad + scale * z
        else:
            step = scale * z
        step = np.where(on, step, 0.0)
        eta_p = eta + x_rec * step[loc]
        ll_p = m.drug_sum(self.ll_terms(eta_p, rec), loc, n)
        # Change in -0.5 * P_ii * dev' Omega dev when dev_k moves by step.
        dlp = -0.5 * pdiag * (2.0 * step * (dev @ wk) + step**2 * self.omega[k, k])
        log_a = ll_p - ll + dlp
        if self.cfg.proposal_kind == "mala":
            r_p = m.y[rec] - m.m[rec] * expit(eta_p)
            dev_p = dev.copy()
            dev_p[:, k] += step
            grad_p = m.drug_sum(r_p * x_rec, loc, n) - pdiag * (dev_p @ wk)
            back = -step - 0.5 * scale**2 * grad_p
            fwd = step - 0.5 * scale**2 * grad
            log_a += -0.5 * (back**2 - fwd**2) / scale**2
        log_a = np.where(on, log_a, -np.inf)
        ok = np.log(self.rng.random(n)) < log_a
        if ok.any():
            s.gamma[rows[ok], k] += step[ok]
            upd = ok[loc]
            self.eta[rec[upd]] = eta_p[upd]
        self._tally("gamma", ok[on])
        if adapt:
            p_acc = np.exp(np.minimum(log_a[on], 0.0))
            idx = rows[on]
            self.log_s_gamma[idx, k] = self._adapt(self.log_s_gamma[idx, k], p_acc, t)

    # -- delta, pi, sigma_gamma

    def update_delta(self, rows=None):
        m, s = self.model, self.state
        ex = m.ex
        x = m.Xre[:, ex]
        contrib = x * (s.delta * s.gamma[:, ex])[m.drug]
        base = self.eta - contrib
        on = base + x * s.gamma[m.drug, ex]
        d_ll = m.drug_sum(self.ll_terms(on)) - m.drug_sum(self.ll_terms(base))
        logit = np.log(s.pi) - np.log1p(-s.pi) + d_ll
        rows = np.arange(m.N) if rows is None else np.asarray(rows)
        u = self.rng.random(len(rows))
        s.delta[rows] = (u < expit(logit[rows])).astype(np.int8)
        self.eta = base + x * (s.delta * s.gamma[:, ex])[m.drug]

    def update_pi(self):
        s = self.state
        s.pi = update_pi(self.rng, s.delta, self.model.a_pi, self.model.b_pi)

    def sigma_target(self, v, Q):
        L = log_chol_to_chol(v)
        L_inv = np.linalg.inv(L)
        N = self.model.N
        tr = float(np.sum((L_inv.T @ L_inv) * Q))
        hyper = log_prior_log_chol(v, self.cfg.hyper_sd)
        return -N * float(np.sum(np.log(np.diag(L)))) - 0.5 * tr + hyper

    def update_sigma_gamma(self, t, adapt):
        s = self.state
        Q = self.model.kron.quad(s.gamma)
        cur = self.sigma_target(s.log_chol, Q)
        for _ in range(self.cfg.sigma_gamma_steps):
            scale = np.exp(self.log_s_sigma)
            prop = s.log_chol + scale * self.rng.standard_normal(s.log_chol.size)
            new = self.sigma_target(prop, Q)
            log_a = new - cur
            if not np.isfinite(cur):
                raise SamplerError(f"iteration {t}: non-finite Sigma_gamma target")
            ok = np.log(self.rng.random()) < log_a
            if ok:
                s.log_chol, cur = prop, new
            self._tally("sigma_gamma", ok)
            if adapt:
                self.log_s_sigma = self._adapt(self.log_s_sigma, min(1.0, np.exp(min(log_a, 0.0))), t)
        self.set_sigma_gamma(s.log_chol)

    # -- bookkeeping

    def log_posterior(self) -> float:
        m, s = self.model, self.state
        ll = float(np.sum(self.ll_terms(self.eta)))
        N, q = m.N, m.q
        logdet_g = 2.0 * float(np.sum(np.log(np.diag(self.L_g))))
        lp_gamma = (-0.5 * (N * q * LOG_2PI + q * m.kron.logdet + N * logdet_g)
                    + self.gamma_log_prior(s.gamma))
        k = int(s.delta.sum())
        lp_delta = k * np.log(s.pi) + (N - k) * np.log1p(-s.pi)
        lp_hyper = log_prior_hyper(s.log_chol, s.pi, m.a_pi, m.b_pi, self.cfg.hyper_sd)
        beta_norm = -0.5 * m.p * (LOG_2PI + 2 * np.log(self.cfg.beta_prior_sd))
        return ll + lp_gamma + lp_delta + lp_hyper + self.beta_log_prior(s.beta) + beta_norm

    def refresh_beta_shape(self):
        m = self.model
        mu = m.m * expit(self.eta)
        w = mu * (1 - expit(self.eta))
        info = m.X.T @ (m.X * w[:, None]) + np.eye(m.p) / self.cfg.beta_prior_sd**2
        self.beta_chol = np.linalg.cholesky(np.linalg.inv(info))

    def sweep(self, t, adapt):
        for u in self.cfg.update_order:
            if u == "beta":
                self.update_beta(t, adapt)
            elif u == "gamma":
                self.update_gamma(t, adapt)
            elif u == "delta":
                self.update_delta()
            elif u == "pi":
                self.update_pi()
            elif u == "sigma_gamma":
                self.update_sigma_gamma(t, adapt)

    def rates(self):
        """Acceptance rate per move; moves that never ran are left out."""
        return {k: a / n for k, (a, n) in self.acc.items() if n}

    def run(self, chain_id: int) -> PosteriorDraws:
        cfg, m = self.cfg, self.model
        n_keep, N, q = cfg.n_keep, m.N, m.q
        out = PosteriorDraws(
            chain=chain_id,
            beta=np.empty((n_keep, m.p)),
            delta=np.empty((n_keep, N), dtype=np.int8),
            theta_x=np.empty((n_keep, N)),
            pi=np.empty(n_keep),
            sigma_gamma=np.empty((n_keep, q, q)),
            log_post=np.empty(n_keep),
            thin=cfg.thin,
        )
        for t in range(cfg.n_warmup):
            if "beta" in cfg.update_order and t % 200 == 0 and t > 0:
                self.refresh_beta_shape()
            self.refresh_eta()
            self.sweep(t, adapt=True)
        out.warmup_accept = self.rates()
        self.acc = {k: [0.0, 0] for k in self.acc}
        for i in range(n_keep):
            for _ in range(cfg.thin):
                self.refresh_eta()
                self.sweep(cfg.n_warmup, adapt=False)
            s = self.state
            lp = self.log_posterior()
            if not np.isfinite(lp):
                raise SamplerError(f"iteration {cfg.n_warmup + i * cfg.thin}: non-finite log posterior")
            out.beta[i] = s.beta
            out.delta[i] = s.delta
            out.theta_x[i] = s.delta * s.gamma[:, m.ex]
            out.pi[i] = s.pi
            out.sigma_gamma[i] = self.L_g @ self.L_g.T
            out.log_post[i] = lp
        out.accept = self.rates()
        out.clamp_count = self.clamp_count
        return out


# ---------------------------------------------------------------- public kernels

def update_pi(rng: np.random.Generator, delta, a: float = 1.0, b: float = 1.0) -> float:
    """Conjugate draw from Beta(a + sum(delta), b + N - sum(delta))."""
    delta = np.asarray(delta)
    k = int(delta.sum())
    return float(rng.beta(a + k, b + delta.size - k))


def make_chain(dataset: Dataset, sigma_d=None, config: SamplerConfig | None = None,
               state: ModelState | None = None, seed=None) -> _Chain:
    """A single chain positioned at ``state`` (or a random start); used by the kernels below."""
    config = config or SamplerConfig()
    model = _Model(dataset, sigma_d, config)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return _Chain(model, rng, state.copy() if state is not None else None)


def update_delta(rng, i: int, state: ModelState, dataset: Dataset, sigma_d=None,
                 config: SamplerConfig | None = None) -> int:
    """Gibbs draw of ``delta_i`` given everything else; returns the new value."""
    ch = make_chain(dataset, sigma_d, config, state)
    ch.rng = rng
    ch.update_delta(rows=[i])
    state.delta[i] = ch.state.delta[i]
    return int(state.delta[i])


def delta_log_odds(i: int, state: ModelState, dataset: Dataset, config: SamplerConfig | None = None) -> float:
    """Log odds of ``delta_i = 1`` under its full conditional."""
    config = config or SamplerConfig()
    re = list(config.re_columns)
    ex = re.index(EXPOSURE)
    eff_on = LatentEffects(state.gamma, np.ones_like(state.delta), state.pi, ex)
    eff_off = LatentEffects(state.gamma, np.zeros_like(state.delta), state.pi, ex)
    sub = dataset.drug == i
    theta_on = eff_on.theta()
    theta_off = eff_off.theta()
    X = dataset.X[sub]
    full_on = np.zeros((dataset.n_drugs, len(DESIGN_COLUMNS)))
    full_off = np.zeros_like(full_on)
    full_on[:, re] = theta_on
    full_off[:, re] = theta_off
    eta_on = X @ state.beta + X @ full_on[i]
    eta_off = X @ state.beta + X @ full_off[i]
    y, m = dataset.y[sub], dataset.m[sub]
    d_ll = np.sum(_record_ll(y, m, eta_on)) - np.sum(_record_ll(y, m, eta_off))
    return float(np.log(state.pi) - np.log1p(-state.pi) + d_ll)


def update_beta(rng, state: ModelState, dataset: Dataset, step: float, sigma_d=None,
                config: SamplerConfig | None = None) -> tuple[np.ndarray, float]:
    """One Metropolis-Hastings update of ``beta``; returns (new beta, acceptance probability).

    ``step`` scales the Fisher-shaped proposal. The intercept shift move is
    not part of this kernel.
    """
    ch = make_chain(dataset, sigma_d, config, state)
    ch.rng = rng
    ch.log_s_beta = np.log(step) if step > 0 else -np.inf
    icpt, ch.model.icpt = ch.model.icpt, None
    ch.shift_exposure_on = False
    try:
        ch.update_beta(0, adapt=False)
    finally:
        ch.model.icpt = icpt
    state.beta = ch.state.beta
    return state.beta, float(min(1.0, np.exp(min(ch.last_log_a, 0.0))))


def update_gamma_row(rng, i: int, state: ModelState, dataset: Dataset, sigma_d=None,
                     step: float | None = None, config: SamplerConfig | None = None) -> np.ndarray:
    """Coordinate-wise Metropolis update of row ``i`` of ``gamma`` given all other rows."""
    ch = make_chain(dataset, sigma_d, config, state)
    ch.rng = rng
    if step is not None:
        ch.log_s_gamma[:] = np.log(step) if step > 0 else -np.inf
    rows = np.array([i])
    rec = np.flatnonzero(ch.model.drug == i)
    block = (rows, rec, np.zeros(len(rec), dtype=np.intp))
    ch.update_gamma(0, adapt=False, blocks=[block])
    state.gamma[i] = ch.state.gamma[i]
    return state.gamma[i]


def update_sigma_gamma(rng, state: ModelState, dataset: Dataset, sigma_d=None,
                       step: float = 0.1, config: SamplerConfig | None = None) -> np.ndarray:
    """Random-walk Metropolis on the log-Cholesky vector of ``Sigma_gamma``."""
    ch = make_chain(dataset, sigma_d, config, state)
    ch.rng = rng
    ch.log_s_sigma = np.log(step)
    ch.update_sigma_gamma(0, adapt=False)
    state.log_chol = ch.state.log_chol
    return state.log_chol


# ---------------------------------------------------------------- orchestration

def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(CHAIN_STREAM, chain))


def max_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_one(args):
    dataset, sigma_d, config, chain = args
    model = _Model(dataset, sigma_d, config)
    rng = np.random.default_rng(chain_seed(config.seed, chain))
    return _Chain(model, rng).run(chain)


def run_chains(config: SamplerConfig, dataset: Dataset, sigma_d=None) -> list[PosteriorDraws]:
    """Run ``config.n_chains`` independent chains; deterministic given the seed.

    Chains run in worker processes when more than one worker is allowed
    (see ``PVSCREEN_MAX_WORKERS``); the output does not depend on the
    number of workers.
    """
    if config.n_keep < 100:
        import warnings
        warnings.warn("n_keep < 100: posterior summaries will be noisy", stacklevel=2)
    jobs = [(dataset, sigma_d, config, c) for c in range(config.n_chains)]
    workers = min(max_workers(), config.n_chains)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


# ---------------------------------------------------------------- summaries

@dataclass(frozen=True)
class PosteriorSummary:
    drug: int
    label: str
    pip: float
    or_mean: float
    or_low: float
    or_high: float
    or_mean_included: float
    or_low_included: float
    or_high_included: float


def _pool(draws, name):
    if isinstance(draws, PosteriorDraws):
        draws = [draws]
    if not draws or sum(d.n_keep for d in draws) == 0:
        raise ValueError("no posterior draws")
    return np.concatenate([getattr(d, name) for d in draws], axis=0)


def compute_pip(draws) -> np.ndarray:
    """Posterior inclusion probabilities: mean of delta over kept draws of all chains."""
    return _pool(draws, "delta").mean(axis=0)


def summarize(draws, labels=None) -> list[PosteriorSummary]:
    """Per-drug PIP and adjusted odds-ratio summaries.

    The primary OR summary is marginal over inclusion (excluded draws give
    OR 1); the ``_included`` fields condition on ``delta = 1`` and are NaN
    for drugs that were never included.
    """
    delta = _pool(draws, "delta")
    odds = np.exp(_pool(draws, "theta_x"))
    n = delta.shape[1]
    labels = labels or [f"drug{i}" for i in range(n)]
    pip = delta.mean(axis=0)
    lo, hi = np.quantile(odds, [0.025, 0.975], axis=0)
    out = []
    for i in range(n):
        inc = odds[delta[:, i] == 1, i]
        if inc.size:
            c_mean = float(inc.mean())
            c_lo, c_hi = (float(v) for v in np.quantile(inc, [0.025, 0.975]))
        else:
            c_mean = c_lo = c_hi = float("nan")
        out.append(PosteriorSummary(i, labels[i], float(pip[i]), float(odds[:, i].mean()),
                                    float(lo[i]), float(hi[i]), c_mean, c_lo, c_hi))
    return out


def with_config(config: SamplerConfig, **changes) -> SamplerConfig:
    return replace(config, **changes)
