"""Uniform sampling from small implausibility-bounded regions.

The target is the set of points in a box whose implausibility values
all pass their cutoffs.  A ladder of progressively tighter cutoffs is
built automatically, a population Markov chain with one chromosome per
ladder level mixes across it, and the deepest chromosome yields uniform
draws from the target together with a volume estimate.

Typical use::

    import numpy as np
    from idemc import (builtin_problem, LadderConfig, MoveConfig,
                       build_ladder, run_sampler, estimate_volume)

    ev = builtin_problem("plane2d")
    rng = np.random.default_rng(7)
    built = build_ladder(ev, LadderConfig(p=0.3, s=500, s_final=500),
                         MoveConfig(), rng)
    out = run_sampler(built.state, built.ladder.rows, built.kernels, ev,
                      MoveConfig(), rng, n_samples=1000)
    print(estimate_volume(built.ladder), out.samples.points.shape)
"""

from .clustering import (ClusterModel, bic_score, fit_cluster_model, kmeans,
                         thin_for_clustering)
from .config import RunConfig, load_config, parse_config_text, resolve_config
from .efficiency import (CostParams, cost_table, expected_chromosomes,
                         expected_evals_rejection, expected_evals_sampler)
from .emc import (LevelTrace, MoveConfig, MoveTallies, PopulationState,
                  SamplerResult, crossover_pair_weights, crossover_step,
                  exchange_sweep, idemc_iteration, mutation_sweep,
                  run_iterations, run_sampler)
from .errors import (ConfigError, ContractError, DomainError, EmptyTargetError,
                     IdemcError, InfeasibleError, InvariantError,
                     TransportError)
from .ladder import (BuildResult, Ladder, LadderConfig, VolumeEstimate,
                     build_ladder, choose_next_level, estimate_volume)
from .membership import (AnalyticEvaluator, Evaluator, ExternalEvaluator,
                         MembershipSpec, SampleSet, builtin_problem,
                         ellipsoid_components, in_box, is_member,
                         plane_components)
from .oracle import (ChiSquareReport, KSReport, chi_square_uniform,
                     ellipsoid_sample, ks_statistic, ks_two_sample,
                     rejection_sample)
from .proposals import (KernelPack, ProposalKernel, make_kernel,
                        mutation_accept_prob)

__version__ = "0.1.0"
