"""A short Scenario 2 benchmark: 100 drugs, 20 signals, 30 co-prescribed.

Runs a handful of replicates at two target FDR levels and prints the
median (MAD) table. The full acceptance run uses 20 replicates; expect
about 100 s per replicate on one core.

    python demos/scenario2_benchmark.py [n_replicates]
"""

import sys

from pvscreen.simulate import DESK_M, format_table, run_benchmark, scenario2_spec, summarize_benchmark

n_rep = int(sys.argv[1]) if len(sys.argv) > 1 else 3
spec = scenario2_spec(m_distribution=DESK_M, seed=0)
table = run_benchmark(spec, alpha=[0.05, 0.15], n_replicates=n_rep)
print(format_table(summarize_benchmark(table)))
