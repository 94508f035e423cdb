"""
When does the sampler beat rejection?
=====================================

The cost model predicts the total number of implausibility evaluations
each approach needs to hand back N uniform draws from a target of
relative volume V: rejection needs N / V, the ladder sampler pays for
its build once and then a thinned chain.  The curves cross around a
volume of 1e-3; below that the sampler wins, and by 1e-6 it is faster
by orders of magnitude.
"""

import numpy as np

from idemc.efficiency import (
    CostParams,
    cost_table,
    expected_chromosomes,
    expected_evals_rejection,
    expected_evals_sampler,
)

# -------------------------------------------------------------------
# 1. A single working point: 10,000 draws from a 2e-7 target.
# -------------------------------------------------------------------
params = CostParams(n_samples=10_000, thin=15, target_volume=2e-7, p=0.3,
                    s=2000, s_final=5000, n_mutations=10,
                    p_mutation_build=0.85, p_mutation_sample=0.97)
n_hat = expected_chromosomes(params.target_volume, params.p)
print(f"predicted ladder size: {n_hat} levels")
print(f"sampler cost:   {expected_evals_sampler(params):12,.0f} evaluations")
print(f"rejection cost: "
      f"{expected_evals_rejection(params.n_samples, params.target_volume):12,.0f}")

# -------------------------------------------------------------------
# 2. Sweep the target volume and find the break-even point.
# -------------------------------------------------------------------
base = CostParams(n_samples=10_000, thin=10, target_volume=0.5, p=0.4,
                  s=2000, s_final=5000, n_mutations=10,
                  p_mutation_build=0.9, p_mutation_sample=0.9)
table = cost_table(np.logspace(-8, -1, 200), base)
cheaper = table["evals_sampler"] < table["evals_rejection"]
flip = np.nonzero(cheaper[:-1] & ~cheaper[1:])[0][-1]
break_even = np.sqrt(table["target_volume"][flip]
                     * table["target_volume"][flip + 1])
print(f"\nbreak-even volume: {break_even:.2e} "
      "(sampler cheaper below this)")

for v in (1e-3, 1e-6, 1e-9):
    i = np.argmin(np.abs(table["target_volume"] - v))
    ratio = table["evals_rejection"][i] / table["evals_sampler"][i]
    print(f"  V = {v:.0e}: sampler is {ratio:10,.1f}x cheaper")

# -------------------------------------------------------------------
# 3. Plot both curves.
# -------------------------------------------------------------------
try:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    plt = None

if plt is not None:
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    ax.loglog(table["target_volume"], table["evals_rejection"],
              "k-", label="rejection")
    ax.loglog(table["target_volume"], table["evals_sampler"],
              "C1-", label="ladder sampler")
    ax.axvline(break_even, ls=":", color="gray")
    ax.annotate(f"break-even {break_even:.1e}",
                (break_even, 1e7), rotation=90, va="bottom", ha="right",
                fontsize=8)
    ax.set_xlabel("relative target volume")
    ax.set_ylabel("expected evaluations for 10,000 draws")
    ax.legend()
    fig.tight_layout()
    fig.savefig("efficiency_curves.png", dpi=120)
    print("\nwrote efficiency_curves.png")
