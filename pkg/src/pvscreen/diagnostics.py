"""Split R-hat and effective sample size."""

from __future__ import annotations

import numpy as np

RHAT_FLAG = 1.05


def _split(chains: np.ndarray) -> np.ndarray:
    chains = np.asarray(chains, dtype=float)
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, chains.shape[1] - n:]], axis=0)


def split_rhat(chains) -> tuple[float, bool]:
    """Split R-hat of an ``(n_chains, n_draws)`` array.

    Returns ``(rhat, zero_variance)``; constant draws report ``(1.0, True)``.
    """
    x = _split(chains)
    n = x.shape[1]
    W = x.var(axis=1, ddof=1).mean()
    if W <= 0 or not np.isfinite(W):
        return 1.0, True
    B = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W)), False


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(axis=-1, keepdims=True), size)
    return np.fft.irfft(f * np.conj(f), size)[..., :n] / n


def ess(chains) -> float:
    """Multi-chain effective sample size with Geyer's initial monotone sequence."""
    x = _split(chains)
    m, n = x.shape
    acov = _autocov(x)
    W = acov[:, 0].mean() * n / (n - 1)
    if W <= 0:
        return float(m * n)
    B = n * x.mean(axis=1).var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * W + B / n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    total, prev = 0.0, np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    tau = -1.0 + 2.0 * total
    return float(m * n / max(tau, 1.0 / np.log10(m * n + 10)))


def diagnostics(draws) -> dict:
    """R-hat and ESS for beta, pi, log posterior and each drug's exposure effect and indicator.

    Parameters with R-hat above 1.05 are listed under ``"flagged"``.
    """
    if len(draws) < 2:
        raise ValueError("diagnostics need at least two chains")
    params: dict[str, np.ndarray] = {}
    beta = np.stack([d.beta for d in draws])
    for k in range(beta.shape[2]):
        params[f"beta[{k}]"] = beta[:, :, k]
    params["pi"] = np.stack([d.pi for d in draws])
    params["log_post"] = np.stack([d.log_post for d in draws])
    theta = np.stack([d.theta_x for d in draws])
    delta = np.stack([d.delta for d in draws]).astype(float)
    for i in range(theta.shape[2]):
        params[f"theta_x[{i}]"] = theta[:, :, i]
        params[f"delta[{i}]"] = delta[:, :, i]
    out = {}
    for name, x in params.items():
        rhat, zero = split_rhat(x)
        out[name] = {"rhat": rhat, "ess": ess(x) if not zero else float(x.size), "zero_variance": zero}
    flagged = sorted(k for k, v in out.items() if v["rhat"] > RHAT_FLAG)
    return {
        "parameters": out,
        "flagged": flagged,
        "max_rhat": max(v["rhat"] for v in out.values()),
        "eta_clamp_count": int(sum(d.clamp_count for d in draws)),
        "accept": [d.accept for d in draws],
    }
