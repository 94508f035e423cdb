"""Ladder construction and volume estimation.

A ladder is a matrix of cutoff rows, one per level: row 0 is fully
unbounded, each later row tightens exactly one wave's cutoff, and the
last row holds the final cutoffs.  Construction alternates short
sampling stages with quantile-based rung selection: the next rung keeps
roughly a fraction ``p`` of the deepest chromosome's recent states, so
each realized ratio both drives the schedule and becomes one factor of
the volume estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, EmptyTargetError
from .emc import MoveTallies, PopulationState, run_iterations
from .membership import is_member
from .proposals import make_kernel

__all__ = [
    "Ladder",
    "LadderConfig",
    "BuildResult",
    "VolumeEstimate",
    "choose_next_level",
    "build_ladder",
    "estimate_volume",
]


def choose_next_level(values, p, final_cutoff):
    """Next rung from a level's implausibility values: the
    ``ceil(p * len(values))``-th smallest, clamped below at
    ``final_cutoff``.

    Parameters
    ----------
    values : ndarray, shape (s,)
        Finite implausibilities of the current deepest level's states.
    p : float
        Fraction to keep, in (0, 1).
    final_cutoff : float
        The target cutoff; the return value never goes below it, and
        equality signals the terminal rung.

    Returns
    -------
    float
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ContractError("need at least one value to choose a level")
    if not np.all(np.isfinite(v)):
        raise ContractError("implausibility values must be finite")
    if not 0.0 < p < 1.0:
        raise ContractError("p must lie in (0, 1)")
    k = math.ceil(p * v.size)
    q = float(np.partition(v, k - 1)[k - 1])
    return q if q > final_cutoff else float(final_cutoff)


@dataclass
class Ladder:
    """Cutoff rows for every level plus the realized keep ratios.

    Attributes
    ----------
    rows : ndarray, shape (n_levels, n_waves)
        ``rows[0]`` is all ``inf``; ``rows[-1]`` holds the final
        cutoffs; each column is non-increasing, and a later wave's
        column stays at ``inf`` until all earlier waves have reached
        their final cutoffs.
    realized : ndarray, shape (n_levels - 1,)
        Fraction of the parent level's states that satisfied each new
        row when it was chosen.
    p : float
        Nominal per-rung fraction the construction aimed for.
    """

    rows: np.ndarray
    realized: np.ndarray
    p: float

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        self.realized = np.atleast_1d(np.asarray(self.realized, dtype=float))
        self.validate()

    def validate(self):
        rows, realized = self.rows, self.realized
        n, m = rows.shape
        if n < 2:
            raise ContractError("a ladder needs at least one rung below the top")
        if not np.all(np.isinf(rows[0])):
            raise ContractError("row 0 must be unbounded in every wave")
        if not np.all(np.isfinite(rows[-1])):
            raise ContractError("the last row must be finite in every wave")
        if not np.all(rows[:-1] >= rows[1:]):
            raise ContractError("every column must be non-increasing")
        changed = rows[:-1] != rows[1:]
        if np.any(changed.sum(axis=1) > 1):
            raise ContractError("each rung may tighten only one wave")
        final = rows[-1]
        for j in range(1, m):
            gated = np.isfinite(rows[:, j])
            if np.any(gated & ~(rows[:, :j] <= final[:j]).all(axis=1)):
                raise ContractError(
                    f"wave {j} tightened before earlier waves reached their cutoffs"
                )
        if realized.shape != (n - 1,):
            raise ContractError("need one realized ratio per rung")
        if not np.all((realized > 0.0) & (realized <= 1.0)):
            raise ContractError("realized ratios must lie in (0, 1]")
        if not 0.0 < self.p < 1.0:
            raise ContractError("p must lie in (0, 1)")

    @property
    def n_levels(self):
        return self.rows.shape[0]

    @property
    def n_waves(self):
        return self.rows.shape[1]

    @property
    def final_cutoffs(self):
        return self.rows[-1].copy()

    def to_dict(self):
        rows = [[None if np.isinf(v) else float(v) for v in r] for r in self.rows]
        return {
            "rows": rows,
            "realized": [float(r) for r in self.realized],
            "p": float(self.p),
        }

    @classmethod
    def from_dict(cls, d):
        rows = np.array(
            [[np.inf if v is None else float(v) for v in r] for r in d["rows"]]
        )
        return cls(rows, np.array(d["realized"], dtype=float), float(d["p"]))


@dataclass(frozen=True)
class VolumeEstimate:
    """Target volume as a fraction of the box.

    Attributes
    ----------
    realized : float
        Product of the realized rung ratios.
    nominal : float
        ``p ** (n_levels - 1)``, the schedule the construction aimed
        for; a useful order-of-magnitude cross-check.
    """

    realized: float
    nominal: float


def estimate_volume(ladder):
    """Volume estimate of the deepest level relative to the box."""
    realized = float(np.prod(ladder.realized))
    nominal = float(ladder.p ** (ladder.n_levels - 1))
    return VolumeEstimate(realized, nominal)


@dataclass(frozen=True)
class LadderConfig:
    """Controls for ladder construction.

    Attributes
    ----------
    p : float
        Fraction of the deepest level's states each new rung keeps.
    s : int
        Uniform draws in stage 0 and iterations per intermediate stage.
    s_final : int
        Iterations of the final stage, run once the full ladder exists.
    max_levels : int
        Rung cap; exceeding it raises :class:`EmptyTargetError`.
    cluster_cap, max_k, ridge
        Clustering controls passed to the kernel fits.
    omega, scale, kind
        Proposal-kernel settings (see
        :class:`~idemc.proposals.ProposalKernel`).
    """

    p: float = 0.4
    s: int = 2000
    s_final: int = 5000
    max_levels: int = 200
    cluster_cap: int = 2000
    max_k: int = 10
    ridge: float = 1e-8
    omega: float = 0.9
    scale: float = 1.0
    kind: str = "normal"

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ContractError("p must lie in (0, 1)")
        if self.s < 10:
            raise ContractError("s must be >= 10")
        if self.s_final < 1:
            raise ContractError("s_final must be >= 1")
        if self.max_levels < 1:
            raise ContractError("max_levels must be >= 1")


@dataclass
class BuildResult:
    """Everything a sampling run needs, straight out of construction.

    Attributes
    ----------
    ladder : Ladder
    state : PopulationState
        Population at the end of the final stage.
    kernels : list of ProposalKernel
        One per constrained level, fit on that level's accumulated
        samples after the final stage.
    tallies : MoveTallies
        Move statistics accumulated over all build stages.
    n_iterations : int
        Sampler iterations spent across stages (uniform draws not
        included).
    history : list of dict
        One record per rung: level index, wave, cutoff, realized ratio.
    """

    ladder: Ladder
    state: PopulationState
    kernels: list
    tallies: MoveTallies
    n_iterations: int
    history: list = field(default_factory=list)


class _Archive:
    """Per-level store of (point, implausibility) rows with stride
    decimation to bound memory.  Keeping the implausibilities means a
    new level's archive can be seeded by filtering, without spending
    evaluations."""

    def __init__(self, cap, points=None, imps=None):
        self.cap = max(int(cap), 1)
        self._blocks = []
        if points is not None:
            self._blocks.append(
                (np.atleast_2d(points).copy(), np.atleast_2d(imps).copy())
            )

    def append(self, points, imps):
        pts, iv = np.atleast_2d(points), np.atleast_2d(imps)
        if pts.size:
            self._blocks.append((pts.copy(), iv.copy()))
        n = sum(b[0].shape[0] for b in self._blocks)
        if n > 2 * self.cap:
            pts = np.concatenate([b[0] for b in self._blocks], axis=0)
            iv = np.concatenate([b[1] for b in self._blocks], axis=0)
            self._blocks = [(pts[::2].copy(), iv[::2].copy())]

    def points(self):
        if not self._blocks:
            return np.empty((0, 0))
        return np.concatenate([b[0] for b in self._blocks], axis=0)

    def imps(self):
        if not self._blocks:
            return np.empty((0, 0))
        return np.concatenate([b[1] for b in self._blocks], axis=0)

    def filtered(self, row):
        """New archive holding only the rows that satisfy ``row``."""
        pts, iv = self.points(), self.imps()
        if pts.shape[0] == 0:
            return _Archive(self.cap)
        keep = is_member(iv, row)
        return _Archive(self.cap, pts[keep], iv[keep])


def _merge_tallies(total, part):
    """Sum tallies whose arrays may differ in length (the population
    grows between stages); shorter arrays pad with zeros."""
    if total is None:
        return part
    out = MoveTallies.zeros(max(len(total.mutation_proposed),
                                len(part.mutation_proposed)))
    for name in MoveTallies.__dataclass_fields__:
        a, b, dst = getattr(total, name), getattr(part, name), getattr(out, name)
        dst[: len(a)] += a
        dst[: len(b)] += b
    return out


def build_ladder(evaluator, config, move_config, rng):
    """Construct the ladder, kernels, and a seeded population.

    Stage 0 draws ``config.s`` uniform points; every later stage runs
    ``config.s`` iterations of the full move mix before the next rung is
    chosen from the deepest chromosome's states.  When one wave's
    quantile would pass its final cutoff the rung clamps there and the
    next wave starts tightening; once all waves are clamped a final
    stage of ``config.s_final`` iterations refines the kernels.

    Parameters
    ----------
    evaluator : Evaluator
    config : LadderConfig
    move_config : MoveConfig
        The burn-in move mix (its ``p_mutation`` applies here only).
    rng : numpy.random.Generator

    Returns
    -------
    BuildResult

    Raises
    ------
    EmptyTargetError
        If more than ``config.max_levels`` rungs accumulate, which
        suggests the target region is empty or vanishingly small.
    """
    spec = evaluator.spec
    bounds, finals = spec.bounds, spec.cutoffs
    d, m = spec.dim, spec.n_waves
    lo, hi = bounds[:, 0], bounds[:, 1]

    uniforms = lo + rng.random((config.s, d)) * (hi - lo)
    uni_imps = evaluator.evaluate_batch(uniforms)

    rows = [np.full(m, np.inf)]
    realized = []
    history = []
    archives = [_Archive(config.cluster_cap, uniforms, uni_imps)]
    parent_pts, parent_imps = uniforms, uni_imps
    state = PopulationState(uniforms[-1][None, :], uni_imps[-1][None, :])
    tallies = None
    n_iters = 0
    active_wave = 0

    def fit_all():
        return [
            make_kernel(
                archives[i].points(), rng,
                omega=config.omega, scale=config.scale, kind=config.kind,
                bounds=bounds if config.kind == "truncated" else None,
                max_k=config.max_k, ridge=config.ridge, cap=config.cluster_cap,
            )
            for i in range(1, len(rows))
        ]

    while True:
        if len(rows) - 1 >= config.max_levels:
            raise EmptyTargetError(
                f"no terminal rung after {config.max_levels} levels; "
                "the target region may be empty",
                levels=[r.tolist() for r in rows],
            )
        vals = parent_imps[:, active_wave]
        new_row = rows[-1].copy()
        new_row[active_wave] = choose_next_level(vals, config.p, finals[active_wave])
        pass_mask = is_member(parent_imps, new_row)
        realized.append(float(pass_mask.mean()))
        rows.append(new_row)
        history.append({
            "level": len(rows) - 1,
            "wave": active_wave,
            "cutoff": float(new_row[active_wave]),
            "realized": realized[-1],
        })
        seed = int(np.flatnonzero(pass_mask)[-1])
        state = PopulationState(
            np.vstack([state.points, parent_pts[seed][None, :]]),
            np.vstack([state.imps, parent_imps[seed][None, :]]),
        )
        archives.append(archives[-1].filtered(new_row))
        if new_row[active_wave] <= finals[active_wave]:
            active_wave += 1
            if active_wave == m:
                break
        kernels = fit_all()
        parent_pts, parent_imps, stage_tallies = _run_stage(
            state, rows, kernels, evaluator, move_config, rng,
            config.s, archives,
        )
        tallies = _merge_tallies(tallies, stage_tallies)
        n_iters += config.s

    kernels = fit_all()
    _, _, stage_tallies = _run_stage(
        state, rows, kernels, evaluator, move_config, rng,
        config.s_final, archives,
    )
    tallies = _merge_tallies(tallies, stage_tallies)
    n_iters += config.s_final
    kernels = fit_all()

    ladder = Ladder(np.array(rows), np.array(realized), config.p)
    state.check_invariant(ladder.rows)
    return BuildResult(ladder, state, kernels, tallies, n_iters, history)


def _run_stage(state, rows, kernels, evaluator, move_config, rng, n_iters,
               archives):
    """Run one stage, archiving every level and returning the deepest
    level's full trajectory."""
    rows_arr = np.array(rows)
    n = state.n_levels
    top_pts = np.empty((n_iters, state.points.shape[1]))
    top_imps = np.empty((n_iters, state.imps.shape[1]))
    pts_blocks = [[] for _ in range(n)]
    imp_blocks = [[] for _ in range(n)]

    def visit(it, st):
        top_pts[it] = st.points[-1]
        top_imps[it] = st.imps[-1]
        for lvl in range(1, n):
            pts_blocks[lvl].append(st.points[lvl].copy())
            imp_blocks[lvl].append(st.imps[lvl].copy())

    tallies = run_iterations(
        state, rows_arr, kernels, evaluator, move_config, rng, n_iters,
        visit=visit,
    )
    for lvl in range(1, n):
        if pts_blocks[lvl]:
            archives[lvl].append(np.array(pts_blocks[lvl]), np.array(imp_blocks[lvl]))
    return top_pts, top_imps, tallies
