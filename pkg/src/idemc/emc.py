"""Population moves and the main sampling loop.

The population holds one chromosome per ladder level, level 0 being the
unconstrained one, and the invariant is that chromosome i always
satisfies its level's cutoff row.  Three moves preserve uniformity on
each level: clustered random-walk mutation, real crossover between two
levels, and exchange of adjacent levels.  One iteration is either a
mutation sweep or a block of crossover steps, followed by an exchange
sweep.

Mutation rounds are carried out for all constrained levels at once with
:class:`~idemc.proposals.KernelPack`, which keeps per-iteration cost at
a few vectorized numpy calls even for deep ladders.  Levels with
truncated kernels fall back to a per-level path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InvariantError
from .membership import SampleSet, in_box, is_member
from .proposals import KernelPack, mutation_accept_prob

__all__ = [
    "MoveConfig",
    "PopulationState",
    "MoveTallies",
    "mutation_sweep",
    "crossover_step",
    "exchange_sweep",
    "idemc_iteration",
    "run_iterations",
    "run_sampler",
    "SamplerResult",
    "LevelTrace",
    "crossover_pair_weights",
]

_CROSSOVER_KINDS = ("one-point", "k-point", "uniform")


@dataclass(frozen=True)
class MoveConfig:
    """Tuning knobs for the move mix.

    Attributes
    ----------
    n_mutations : int
        Metropolis-Hastings steps per chromosome in one mutation sweep.
    p_mutation : float
        Probability that an iteration is a mutation sweep rather than a
        crossover block.
    crossover_kind : {"one-point", "k-point", "uniform"}
    crossover_k : int
        Number of cut points for the k-point kind.
    activity_order : tuple of int, optional
        Coordinate permutation used when cutting chromosomes; defaults
        to natural order.
    """

    n_mutations: int = 10
    p_mutation: float = 0.9
    crossover_kind: str = "one-point"
    crossover_k: int = 1
    activity_order: tuple | None = None

    def __post_init__(self):
        if self.n_mutations < 1:
            raise ContractError("n_mutations must be >= 1")
        if not 0.0 <= self.p_mutation <= 1.0:
            raise ContractError("p_mutation must lie in [0, 1]")
        if self.crossover_kind not in _CROSSOVER_KINDS:
            raise ContractError(f"unknown crossover kind {self.crossover_kind!r}")
        if self.crossover_kind == "k-point" and self.crossover_k < 1:
            raise ContractError("crossover_k must be >= 1")
        if self.activity_order is not None:
            order = tuple(int(i) for i in self.activity_order)
            if sorted(order) != list(range(len(order))):
                raise ContractError("activity_order must be a permutation of 0..d-1")
            object.__setattr__(self, "activity_order", order)


@dataclass
class PopulationState:
    """Current chromosomes with cached implausibilities.

    Attributes
    ----------
    points : ndarray, shape (n_levels, d)
    imps : ndarray, shape (n_levels, n_waves)
    """

    points: np.ndarray
    imps: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.imps = np.atleast_2d(np.asarray(self.imps, dtype=float))
        if self.points.shape[0] != self.imps.shape[0]:
            raise ContractError("points and imps must have one row per level")

    @property
    def n_levels(self):
        return self.points.shape[0]

    def copy(self):
        return PopulationState(self.points.copy(), self.imps.copy())

    def check_invariant(self, ladder_rows):
        """Abort if any chromosome has left its level.

        Raises
        ------
        InvariantError
            With the offending level, point, and cached values attached.
        """
        ok = (self.imps <= np.asarray(ladder_rows, dtype=float)).all(axis=1)
        if not ok.all():
            lvl = int(np.flatnonzero(~ok)[0])
            raise InvariantError(
                f"chromosome {lvl} violates its level cutoffs",
                diagnostics={
                    "level": lvl,
                    "point": self.points[lvl].tolist(),
                    "imps": self.imps[lvl].tolist(),
                    "cutoffs": np.asarray(ladder_rows)[lvl].tolist(),
                },
            )


@dataclass
class MoveTallies:
    """Proposed/accepted counts per level (and per adjacent pair for
    exchange), kept separately so acceptance rates can be reported."""

    mutation_proposed: np.ndarray
    mutation_accepted: np.ndarray
    crossover_proposed: np.ndarray
    crossover_accepted: np.ndarray
    exchange_proposed: np.ndarray
    exchange_accepted: np.ndarray

    @classmethod
    def zeros(cls, n_levels):
        z = lambda k: np.zeros(k, dtype=float)
        return cls(z(n_levels), z(n_levels), z(n_levels), z(n_levels),
                   z(max(n_levels - 1, 0)), z(max(n_levels - 1, 0)))

    def merge(self, other):
        for name in self.__dataclass_fields__:
            getattr(self, name).__iadd__(getattr(other, name))
        return self

    def rates(self):
        """Acceptance rates per move family, zeros where nothing was
        proposed."""
        def rate(a, p):
            out = np.zeros_like(a)
            np.divide(a, p, out=out, where=p > 0)
            return out

        return {
            "mutation": rate(self.mutation_accepted, self.mutation_proposed),
            "crossover": rate(self.crossover_accepted, self.crossover_proposed),
            "exchange": rate(self.exchange_accepted, self.exchange_proposed),
        }


# ---------------------------------------------------------------------------
# mutation
# ---------------------------------------------------------------------------

def mutation_sweep(state, ladder_rows, kernels, evaluator, config, rng,
                   tallies=None, pack=None):
    """One mutation sweep: redraw chromosome 0 uniformly, then apply
    ``config.n_mutations`` Metropolis-Hastings rounds to every
    constrained chromosome.

    Out-of-box proposals are rejected without costing an evaluation;
    in-box proposals cost one each.  With plain Gaussian kernels all
    levels advance together through ``pack`` (built here when not
    supplied); truncated kernels take the per-level path.
    """
    rows = np.asarray(ladder_rows, dtype=float)
    n = state.n_levels
    if len(kernels) != n - 1:
        raise ContractError(f"expected {n - 1} kernels, got {len(kernels)}")
    bounds = evaluator.spec.bounds
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = bounds.shape[0]
    if tallies is None:
        tallies = MoveTallies.zeros(n)

    # level 0: fresh uniform draw, one evaluation, always accepted
    x0 = lo + rng.random(d) * (hi - lo)
    state.points[0] = x0
    state.imps[0] = evaluator.evaluate(x0)
    tallies.mutation_proposed[0] += 1
    tallies.mutation_accepted[0] += 1

    if n == 1:
        return tallies
    if pack is None and all(k.kind == "normal" for k in kernels):
        pack = KernelPack(kernels)
    if pack is not None:
        _mutation_rounds_packed(state, rows, pack, evaluator, config, rng, tallies)
    else:
        _mutation_rounds_slow(state, rows, kernels, evaluator, config, rng, tallies)
    return tallies


def _mutation_rounds_packed(state, rows, pack, evaluator, config, rng, tallies):
    bounds = evaluator.spec.bounds
    L = state.n_levels - 1
    d = pack.dim
    X = state.points[1:]
    imps = state.imps[1:]
    cuts = rows[1:]
    comps = pack.assign(X)
    for _ in range(config.n_mutations):
        # fixed draw order per round keeps runs reproducible
        pick_local = rng.random(L) < pack.omega
        z = rng.standard_normal((L, d))
        u = rng.random(L)
        chol = np.where(pick_local[:, None, None], pack.local_chol(comps), pack.wchol)
        Y = X + np.einsum("lij,lj->li", chol, z)
        inbox = in_box(Y, bounds)
        new_imps = np.empty_like(imps)
        member = np.zeros(L, dtype=bool)
        if inbox.any():
            new_imps[inbox] = evaluator.evaluate_batch(Y[inbox])
            member[inbox] = (new_imps[inbox] <= cuts[inbox]).all(axis=1)
        accept = np.zeros(L, dtype=bool)
        if member.any():
            c_y = pack.assign(Y)
            log_fwd = pack.log_density(X, Y, comps)
            log_rev = pack.log_density(Y, X, c_y)
            with np.errstate(divide="ignore"):
                accept = member & (np.log(u) < log_rev - log_fwd)
            X[accept] = Y[accept]
            imps[accept] = new_imps[accept]
            comps[accept] = c_y[accept]
        tallies.mutation_proposed[1:] += 1
        tallies.mutation_accepted[1:] += accept


def _mutation_rounds_slow(state, rows, kernels, evaluator, config, rng, tallies):
    bounds = evaluator.spec.bounds
    for _ in range(config.n_mutations):
        for i in range(1, state.n_levels):
            kern = kernels[i - 1]
            x = state.points[i]
            y = kern.propose(x, rng)
            tallies.mutation_proposed[i] += 1
            if not in_box(y, bounds):
                continue
            imp_y = evaluator.evaluate(y)
            if not is_member(imp_y, rows[i]):
                continue
            if rng.random() < mutation_accept_prob(kern, x, y):
                state.points[i] = y
                state.imps[i] = imp_y
                tallies.mutation_accepted[i] += 1


# ---------------------------------------------------------------------------
# crossover
# ---------------------------------------------------------------------------

def crossover_pair_weights(n_constrained):
    """Selection weights over constrained levels 1..n_constrained.

    The first parent favors deep levels (weight i), the second shallow
    ones (weight n_constrained + 1 - i); both are fixed, so crossover
    acceptance reduces to a membership check on the children.

    Returns
    -------
    first, second : ndarray, shape (n_constrained,)
        Normalized selection probabilities.
    """
    i = np.arange(1, n_constrained + 1, dtype=float)
    return i / i.sum(), (n_constrained + 1 - i) / i.sum()


def _pick_parents(n_constrained, rng):
    w_first, w_second = crossover_pair_weights(n_constrained)
    i = int(rng.choice(n_constrained, p=w_first)) + 1
    j = i
    while j == i:
        j = int(rng.choice(n_constrained, p=w_second)) + 1
    return i, j


def _crossover_mask(d, config, rng):
    """Boolean mask of coordinates the first child takes from the first
    parent, honoring the activity ordering."""
    order = np.asarray(
        config.activity_order if config.activity_order is not None else np.arange(d),
        dtype=int,
    )
    mask = np.zeros(d, dtype=bool)
    if config.crossover_kind == "one-point":
        c = int(rng.integers(1, d + 1))
        mask[order[:c]] = True
    elif config.crossover_kind == "k-point":
        k = min(config.crossover_k, d - 1)
        cuts = np.sort(rng.choice(np.arange(1, d), size=k, replace=False))
        take = True
        left = 0
        for cut in list(cuts) + [d]:
            if take:
                mask[order[left:cut]] = True
            take = not take
            left = cut
    else:
        mask[order[rng.random(d) < 0.5]] = True
    return mask


def crossover_step(state, ladder_rows, evaluator, config, rng, tallies=None):
    """One crossover step between two constrained chromosomes.

    Both children replace their parents only when each child satisfies
    its own level; the pair-selection probabilities do not depend on the
    current state, so no density ratio appears.  A child identical to a
    parent reuses the parent's cached implausibility and costs nothing.
    """
    rows = np.asarray(ladder_rows, dtype=float)
    n = state.n_levels
    if tallies is None:
        tallies = MoveTallies.zeros(n)
    if n - 1 < 2:
        return tallies
    i, j = _pick_parents(n - 1, rng)
    mask = _crossover_mask(state.points.shape[1], config, rng)
    xi, xj = state.points[i], state.points[j]
    child_i = np.where(mask, xi, xj)
    child_j = np.where(mask, xj, xi)
    tallies.crossover_proposed[[i, j]] += 1

    imp_ci = _child_imp(child_i, (xi, state.imps[i]), (xj, state.imps[j]))
    imp_cj = _child_imp(child_j, (xi, state.imps[i]), (xj, state.imps[j]))
    fresh = [c for c, imp in ((child_i, imp_ci), (child_j, imp_cj)) if imp is None]
    if fresh:
        evals = evaluator.evaluate_batch(np.array(fresh))
        it = iter(evals)
        if imp_ci is None:
            imp_ci = next(it)
        if imp_cj is None:
            imp_cj = next(it)

    if is_member(imp_ci, rows[i]) and is_member(imp_cj, rows[j]):
        state.points[i], state.imps[i] = child_i, imp_ci
        state.points[j], state.imps[j] = child_j, imp_cj
        tallies.crossover_accepted[[i, j]] += 1
    return tallies


def _child_imp(child, *parents):
    for px, pimp in parents:
        if np.array_equal(child, px):
            return pimp.copy()
    return None


# ---------------------------------------------------------------------------
# exchange
# ---------------------------------------------------------------------------

def exchange_sweep(state, ladder_rows, rng, tallies=None):
    """``n_levels`` attempted swaps of adjacent levels.

    Each attempt picks a level uniformly and its neighbor one step up or
    down (reflecting at the ends).  The swap is valid exactly when the
    shallower chromosome already satisfies the deeper level, so no
    evaluations are spent here; cached implausibilities travel with
    their points.
    """
    rows = np.asarray(ladder_rows, dtype=float)
    n = state.n_levels
    if tallies is None:
        tallies = MoveTallies.zeros(n)
    if n < 2:
        return tallies
    for _ in range(n):
        i = int(rng.integers(n))
        if i == 0:
            j = 1
        elif i == n - 1:
            j = n - 2
        else:
            j = i + 1 if rng.random() < 0.5 else i - 1
        lo, hi_ = min(i, j), max(i, j)
        tallies.exchange_proposed[lo] += 1
        if is_member(state.imps[lo], rows[hi_]):
            state.points[[lo, hi_]] = state.points[[hi_, lo]]
            state.imps[[lo, hi_]] = state.imps[[hi_, lo]]
            tallies.exchange_accepted[lo] += 1
    return tallies


# ---------------------------------------------------------------------------
# iteration and driver
# ---------------------------------------------------------------------------

def idemc_iteration(state, ladder_rows, kernels, evaluator, config, rng,
                    tallies=None, pack=None):
    """One full iteration: a mutation sweep with probability
    ``config.p_mutation``, otherwise ``ceil(n_levels / 2)`` crossover
    steps; always followed by an exchange sweep."""
    n = state.n_levels
    if tallies is None:
        tallies = MoveTallies.zeros(n)
    if rng.random() < config.p_mutation:
        mutation_sweep(state, ladder_rows, kernels, evaluator, config, rng,
                       tallies=tallies, pack=pack)
    else:
        for _ in range(math.ceil(n / 2)):
            crossover_step(state, ladder_rows, evaluator, config, rng,
                           tallies=tallies)
    exchange_sweep(state, ladder_rows, rng, tallies=tallies)
    return tallies


def run_iterations(state, ladder_rows, kernels, evaluator, config, rng, n_iters,
                   visit=None, tallies=None, check_every=1,
                   debug_check_every=0):
    """Advance the population ``n_iters`` iterations in place.

    Parameters
    ----------
    visit : callable, optional
        Called as ``visit(it, state)`` after each iteration (0-based).
    check_every : int
        Cadence of the cached-membership invariant check.
    debug_check_every : int
        When positive, re-evaluate one chromosome at this cadence and
        compare with its cache; costs nothing from the move budget but
        catches stale-cache bugs.

    Returns
    -------
    MoveTallies
    """
    rows = np.asarray(ladder_rows, dtype=float)
    n = state.n_levels
    if tallies is None:
        tallies = MoveTallies.zeros(n)
    pack = None
    if n > 1 and kernels and all(k.kind == "normal" for k in kernels):
        pack = KernelPack(kernels)
    for it in range(n_iters):
        idemc_iteration(state, rows, kernels, evaluator, config, rng,
                        tallies=tallies, pack=pack)
        if check_every and it % check_every == 0:
            state.check_invariant(rows)
        if debug_check_every and it % debug_check_every == 0:
            _debug_cache_check(state, evaluator, it)
        if visit is not None:
            visit(it, state)
    return tallies


def _debug_cache_check(state, evaluator, it):
    lvl = it % state.n_levels
    fresh = np.asarray(
        evaluator._compute(state.points[lvl][None, :]), dtype=float
    ).reshape(-1)
    if not np.allclose(fresh, state.imps[lvl], rtol=1e-10, atol=1e-12):
        raise InvariantError(
            f"cached implausibility of chromosome {lvl} is stale",
            diagnostics={
                "level": lvl,
                "point": state.points[lvl].tolist(),
                "cached": state.imps[lvl].tolist(),
                "fresh": fresh.tolist(),
            },
        )


@dataclass
class LevelTrace:
    """Snapshots of one chromosome along the run."""

    level: int
    iters: np.ndarray
    points: np.ndarray
    imps: np.ndarray


@dataclass
class SamplerResult:
    """Output of :func:`run_sampler`.

    Attributes
    ----------
    samples : SampleSet
        Retained states of the deepest level, one every ``thin``
        iterations.
    traces : list of LevelTrace
        Deepest level at the retained cadence, the rest every
        ``trace_every`` iterations.
    tallies : MoveTallies
    n_iterations : int
    """

    samples: SampleSet
    traces: list
    tallies: MoveTallies
    n_iterations: int


def run_sampler(state, ladder_rows, kernels, evaluator, config, rng,
                n_samples, thin=10, trace_every=10, debug_check_every=0):
    """Sample the deepest level: run ``n_samples * thin`` iterations and
    retain the deepest chromosome every ``thin``-th one.

    The population is advanced in place; pass a copy to keep the
    starting state.

    Returns
    -------
    SamplerResult
    """
    if n_samples < 1 or thin < 1:
        raise ContractError("n_samples and thin must be >= 1")
    rows = np.asarray(ladder_rows, dtype=float)
    n = state.n_levels
    target = n - 1
    kept_pts, kept_imps, kept_it = [], [], []
    trace_acc = [([], [], []) for _ in range(n)]

    def visit(it, st):
        step = it + 1
        if step % thin == 0:
            kept_pts.append(st.points[target].copy())
            kept_imps.append(st.imps[target].copy())
            kept_it.append(step)
        for lvl in range(n):
            keep = step % thin == 0 if lvl == target else step % trace_every == 0
            if keep:
                its, pts, imps = trace_acc[lvl]
                its.append(step)
                pts.append(st.points[lvl].copy())
                imps.append(st.imps[lvl].copy())

    tallies = run_iterations(
        state, rows, kernels, evaluator, config, rng, n_samples * thin,
        visit=visit, debug_check_every=debug_check_every,
    )
    traces = [
        LevelTrace(lvl, np.array(its, dtype=int), np.array(pts), np.array(imps))
        for lvl, (its, pts, imps) in enumerate(trace_acc)
    ]
    samples = SampleSet(np.array(kept_pts), np.array(kept_imps))
    return SamplerResult(samples, traces, tallies, n_samples * thin)
