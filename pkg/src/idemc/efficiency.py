"""Evaluation-cost model: sampler versus plain rejection.

Everything here is closed-form accounting, not measurement.  The
sampler's cost adds three phases: the staged build (one short stage per
intermediate ladder size), the final build stage at full depth, and the
sampling run itself.  Each iteration's expected cost mixes a mutation
sweep (``M`` evaluations per constrained chromosome plus one uniform
redraw) with a crossover block (about one evaluation per chromosome
plus one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

__all__ = [
    "CostParams",
    "expected_chromosomes",
    "expected_evals_rejection",
    "expected_evals_sampler",
    "cost_table",
]


@dataclass(frozen=True)
class CostParams:
    """Inputs of the cost model.

    Attributes
    ----------
    n_samples : int
        Retained draws wanted (N).
    thin : int
        Iterations per retained draw (T).
    target_volume : float
        Target/box volume ratio, in (0, 1).
    p : float
        Ladder keep fraction, used to predict the chromosome count.
    s : int
        Iterations per intermediate build stage.
    s_final : int
        Iterations of the final build stage.
    n_mutations : int
        Mutation steps per chromosome per sweep (M).
    p_mutation_build : float
        Mutation-sweep probability during the build phases.
    p_mutation_sample : float
        Mutation-sweep probability during sampling.
    n_chromosomes : int, optional
        Override for the predicted total chromosome count.
    """

    n_samples: int
    thin: int
    target_volume: float
    p: float = 0.4
    s: int = 2000
    s_final: int = 5000
    n_mutations: int = 10
    p_mutation_build: float = 0.85
    p_mutation_sample: float = 0.97
    n_chromosomes: int | None = None

    def __post_init__(self):
        if self.n_samples < 1 or self.thin < 1:
            raise ContractError("n_samples and thin must be >= 1")
        if not 0.0 < self.target_volume < 1.0:
            raise ContractError("target_volume must lie in (0, 1)")
        if not 0.0 < self.p < 1.0:
            raise ContractError("p must lie in (0, 1)")
        if self.s < 1 or self.s_final < 1 or self.n_mutations < 1:
            raise ContractError("s, s_final and n_mutations must be >= 1")
        for v in (self.p_mutation_build, self.p_mutation_sample):
            if not 0.0 <= v <= 1.0:
                raise ContractError("mutation probabilities must lie in [0, 1]")
        if self.n_chromosomes is not None and self.n_chromosomes < 2:
            raise ContractError("n_chromosomes must be >= 2")


def expected_chromosomes(target_volume, p):
    """Predicted total chromosome count for a target of the given
    relative volume: ``1 + ceil(log V / log p)``, each rung shrinking
    the kept fraction by about ``p``."""
    if not 0.0 < target_volume < 1.0:
        raise ContractError("target_volume must lie in (0, 1)")
    if not 0.0 < p < 1.0:
        raise ContractError("p must lie in (0, 1)")
    ratio = math.log(target_volume) / math.log(p)
    # nudge before ceil so V = p**k does not round up an extra rung
    return 1 + math.ceil(ratio - 1e-9)


def expected_evals_rejection(n_samples, target_volume):
    """Expected evaluations for rejection sampling: N / V."""
    if n_samples < 1:
        raise ContractError("n_samples must be >= 1")
    if not 0.0 < target_volume < 1.0:
        raise ContractError("target_volume must lie in (0, 1)")
    return n_samples / target_volume


def _iteration_cost(k, n_mutations, p_mutation):
    """Expected evaluations of one iteration at k total chromosomes."""
    return (
        p_mutation * ((k - 1) * n_mutations + 1)
        + (1.0 - p_mutation) * (k + 1)
    )


def expected_evals_sampler(params):
    """Expected total evaluations of a full build-and-sample run.

    Sums ``s`` uniform draws plus one ``s``-iteration stage per
    intermediate ladder size, ``s_final`` iterations at full depth, and
    ``n_samples * thin`` sampling iterations.

    Parameters
    ----------
    params : CostParams

    Returns
    -------
    float
    """
    n_hat = params.n_chromosomes
    if n_hat is None:
        n_hat = expected_chromosomes(params.target_volume, params.p)
    M, pb, ps = params.n_mutations, params.p_mutation_build, params.p_mutation_sample
    build_stages = sum(_iteration_cost(k, M, pb) for k in range(2, n_hat))
    build = params.s * (1.0 + build_stages)
    final = params.s_final * _iteration_cost(n_hat, M, pb)
    sampling = params.n_samples * params.thin * _iteration_cost(n_hat, M, ps)
    return build + final + sampling


def cost_table(volumes, params):
    """Tabulate both cost models over a grid of target volumes.

    Parameters
    ----------
    volumes : array_like
        Relative volumes, each in (0, 1).
    params : CostParams
        Template; its ``target_volume`` and ``n_chromosomes`` are
        replaced per row.

    Returns
    -------
    dict of ndarray
        Columns ``target_volume``, ``n_chromosomes``,
        ``evals_rejection``, ``evals_sampler``.
    """
    from dataclasses import replace

    vols = np.asarray(volumes, dtype=float).ravel()
    n_chrom = np.empty(vols.size, dtype=int)
    rej = np.empty(vols.size)
    samp = np.empty(vols.size)
    for i, v in enumerate(vols):
        n_chrom[i] = expected_chromosomes(v, params.p)
        rej[i] = expected_evals_rejection(params.n_samples, v)
        samp[i] = expected_evals_sampler(
            replace(params, target_volume=v, n_chromosomes=None)
        )
    return {
        "target_volume": vols.copy(),
        "n_chromosomes": n_chrom,
        "evals_rejection": rej,
        "evals_sampler": samp,
    }
