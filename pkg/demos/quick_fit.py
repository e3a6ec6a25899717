"""Fit a small synthetic screen with and without a co-prescription prior.

Thirty drugs; the first ten are co-prescribed with each other and six of them
lower the event rate. Prints PIPs and the Bayesian FDR selection for both
priors, then the empirical-Bayes BH selection for comparison.

    python demos/quick_fit.py
"""

import numpy as np

from pvscreen.baselines import bh_select, eb_fit
from pvscreen.sampler import SamplerConfig, compute_pip, run_chains
from pvscreen.selection import optimal_threshold
from pvscreen.simulate import DESK_M, ScenarioSpec, generate_dataset, scenario_sigma_d

spec = ScenarioSpec(
    n_drugs=30,
    effect_layout=((2, -0.75), (4, -0.5)),
    sigma_d_spec=("block", 10, 0.25, 0.40),
    m_distribution=DESK_M,
    seed=1,
)
rng = np.random.default_rng(spec.seed)
sigma_d = scenario_sigma_d(rng, spec)
ds, truth = generate_dataset(rng, spec, sigma_d)
print(f"{ds.n_drugs} drugs, {int(truth.sum())} true signals: {np.flatnonzero(truth).tolist()}")

config = SamplerConfig(n_chains=2, n_warmup=1000, n_keep=1000, seed=7)
for name, sd in (("identity", None), ("co-prescription", sigma_d)):
    pips = compute_pip(run_chains(config, ds, sd))
    res = optimal_threshold(pips, alpha_r=0.05)
    print(f"\n{name} prior")
    print("  PIPs  ", np.array2string(pips, precision=2, max_line_width=80))
    print(f"  threshold {res.threshold:.3f}, expected FDR {res.expected_fdr:.3f}")
    print(f"  selected {sorted(int(i) for i in res.selected)}")

pvals = eb_fit(ds).pvalue
print(f"\nempirical-Bayes BH at 0.05: {sorted(int(i) for i in bh_select(pvals, 0.05))}")
