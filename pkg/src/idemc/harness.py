"""Run orchestration and file formats.

Ties the pieces into four commands: ``run`` (build or load a ladder,
then sample), ``ladder`` (build and save only), ``eff`` (tabulate the
cost model), and ``oracle`` (reference samples by an independent
route).  All outputs land in one directory: CSVs carry 17 significant
digits so they round-trip exactly, and ``report.json`` echoes every
resolved configuration value next to what was measured.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from .config import RunConfig
from .emc import MoveConfig, PopulationState, run_sampler
from .errors import ConfigError, ContractError
from .efficiency import (CostParams, cost_table, expected_chromosomes,
                         expected_evals_rejection, expected_evals_sampler)
from .ladder import BuildResult, Ladder, LadderConfig, build_ladder, estimate_volume
from .membership import (ExternalEvaluator, builtin_problem,
                         ellipsoid_components, plane_components)
from .oracle import ellipsoid_sample, rejection_sample
from .proposals import ProposalKernel

__all__ = [
    "make_evaluator",
    "make_move_config",
    "make_ladder_config",
    "save_ladder_file",
    "load_ladder_file",
    "command_run",
    "command_ladder",
    "command_eff",
    "command_oracle",
]

LADDER_FORMAT = "idemc-ladder"
LADDER_VERSION = 1


# ---------------------------------------------------------------------------
# object construction from configuration
# ---------------------------------------------------------------------------

def make_evaluator(cfg):
    """Build the configured evaluator (closing it is the caller's job
    for external problems)."""
    name = cfg.problem_name
    if name == "external":
        cutoffs = cfg.problem_cutoffs
        if cutoffs is None:
            cutoffs = (cfg.problem_cutoff,)
        return ExternalEvaluator(
            cfg.problem_command, np.array(cfg.problem_bounds), np.array(cutoffs)
        )
    kwargs = {}
    if name == "plane2d_twowave":
        if cfg.problem_cutoffs is not None:
            kwargs["cutoffs"] = cfg.problem_cutoffs
        elif cfg.problem_cutoff is not None:
            raise ConfigError(
                "plane2d_twowave takes problem.cutoffs (one per wave)"
            )
    else:
        if cfg.problem_cutoffs is not None:
            raise ConfigError(f"{name} takes problem.cutoff, not problem.cutoffs")
        if cfg.problem_cutoff is not None:
            kwargs["cutoff"] = cfg.problem_cutoff
    if name == "ellipsoid10d" and cfg.problem_gamma is not None:
        kwargs["gamma"] = cfg.problem_gamma
    return builtin_problem(name, **kwargs)


def make_move_config(cfg, phase):
    """Move mix for ``phase`` in {"build", "sample"}."""
    p_m = (cfg.moves_p_mutation_build if phase == "build"
           else cfg.moves_p_mutation_sample)
    kind, k = cfg.moves_crossover
    return MoveConfig(
        n_mutations=cfg.moves_n_mutations,
        p_mutation=p_m,
        crossover_kind=kind,
        crossover_k=k,
        activity_order=cfg.moves_activity_order,
    )


def make_ladder_config(cfg):
    return LadderConfig(
        p=cfg.ladder_p,
        s=cfg.ladder_s,
        s_final=cfg.ladder_s_final,
        max_levels=cfg.ladder_max_levels,
        cluster_cap=cfg.ladder_cluster_cap,
        max_k=cfg.ladder_max_k,
        ridge=cfg.ladder_ridge,
        omega=cfg.moves_omega,
        scale=cfg.moves_scale,
        kind=cfg.moves_kind,
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _fmt(v):
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _sample_header(dim, n_waves):
    return [f"x{i + 1}" for i in range(dim)] + [
        f"imp{j + 1}" for j in range(n_waves)
    ]


def write_samples_csv(path, points, imps):
    """Sample CSV: x1..xd then one implausibility column per wave."""
    points = np.atleast_2d(points)
    imps = np.atleast_2d(imps)
    header = _sample_header(points.shape[1], imps.shape[1])
    _write_csv(path, header, np.hstack([points, imps]))


def write_trace_csv(path, trace):
    """Level trace CSV: iteration number, then the sample columns."""
    header = ["iter"] + _sample_header(trace.points.shape[1], trace.imps.shape[1])
    rows = np.hstack([trace.iters[:, None], trace.points, trace.imps])
    _write_csv(path, header, rows)


def write_cost_csv(path, table):
    header = ["target_volume", "n_chromosomes", "evals_rejection", "evals_sampler"]
    rows = np.column_stack([table[h] for h in header])
    _write_csv(path, header, rows)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _problem_info(evaluator):
    spec = evaluator.spec
    return {
        "name": spec.name,
        "dim": spec.dim,
        "n_waves": spec.n_waves,
        "bounds": spec.bounds.tolist(),
        "cutoffs": spec.cutoffs.tolist(),
    }


def save_ladder_file(path, ladder, kernels, state, evaluator, build_info=None,
                     config_echo=None):
    """Write a ladder file: rows, realized ratios, kernels, the final
    population, and the problem identity for load-time validation."""
    payload = {
        "format": LADDER_FORMAT,
        "version": LADDER_VERSION,
        "problem": _problem_info(evaluator),
        "ladder": ladder.to_dict(),
        "kernels": [k.to_dict() for k in kernels],
        "state": {
            "points": state.points.tolist(),
            "imps": state.imps.tolist(),
        },
        "build": build_info or {},
        "config": config_echo or {},
    }
    _write_json(path, payload)


def load_ladder_file(path, evaluator):
    """Load a ladder file and check it against the configured problem.

    The stored population's implausibilities are re-evaluated once so a
    ladder cannot silently resume against a different model.

    Returns
    -------
    (Ladder, list of ProposalKernel, PopulationState, dict)
        The dict is the stored build metadata.

    Raises
    ------
    ConfigError
        On format or problem mismatch.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read ladder file {path}: {exc}") from None
    if payload.get("format") != LADDER_FORMAT:
        raise ConfigError(f"{path} is not a ladder file")
    if payload.get("version") != LADDER_VERSION:
        raise ConfigError(f"unsupported ladder file version {payload.get('version')}")
    stored = payload["problem"]
    spec = evaluator.spec
    same = (
        stored["name"] == spec.name
        and stored["dim"] == spec.dim
        and np.allclose(stored["bounds"], spec.bounds)
        and np.allclose(stored["cutoffs"], spec.cutoffs)
    )
    if not same:
        raise ConfigError(
            f"ladder file {path} was built for problem "
            f"{stored['name']!r}, which does not match the configuration"
        )
    ladder = Ladder.from_dict(payload["ladder"])
    kernels = [ProposalKernel.from_dict(k) for k in payload["kernels"]]
    if len(kernels) != ladder.n_levels - 1:
        raise ConfigError("ladder file kernel count does not match its levels")
    state = PopulationState(
        np.array(payload["state"]["points"], dtype=float),
        np.array(payload["state"]["imps"], dtype=float),
    )
    if state.n_levels != ladder.n_levels:
        raise ConfigError("ladder file population does not match its levels")
    fresh = evaluator.evaluate_batch(state.points)
    if not np.allclose(fresh, state.imps, rtol=1e-6, atol=1e-9):
        raise ConfigError(
            "stored population does not re-evaluate to its cached "
            "implausibilities; wrong model?"
        )
    state.check_invariant(ladder.rows)
    return ladder, kernels, state, payload.get("build", {})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _volume_report(ladder, evaluator):
    vol = estimate_volume(ladder)
    box = evaluator.spec.box_volume
    return {
        "realized_fraction": vol.realized,
        "nominal_fraction": vol.nominal,
        "realized_absolute": vol.realized * box,
        "box_volume": box,
    }


def _rates_report(tallies):
    return {name: arr.tolist() for name, arr in tallies.rates().items()}


def _base_report(command, cfg, evaluator, t0):
    return {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "problem": _problem_info(evaluator),
        "wall_seconds": round(time.perf_counter() - t0, 3),
        "evaluations": evaluator.eval_count,
    }


def command_ladder(cfg, out_dir):
    """Build the ladder and save it; no sampling run."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    with make_evaluator(cfg) as evaluator:
        build_rng, _ = np.random.default_rng(cfg.seed).spawn(2)
        built = build_ladder(
            evaluator, make_ladder_config(cfg), make_move_config(cfg, "build"),
            build_rng,
        )
        ladder_path = os.path.join(out_dir, "ladder.json")
        save_ladder_file(
            ladder_path, built.ladder, built.kernels, built.state, evaluator,
            build_info={
                "n_iterations": built.n_iterations,
                "history": built.history,
            },
            config_echo=cfg.echo(),
        )
        report = _base_report("ladder", cfg, evaluator, t0)
        report.update({
            "ladder": built.ladder.to_dict(),
            "volume": _volume_report(built.ladder, evaluator),
            "build": {
                "n_iterations": built.n_iterations,
                "n_levels": built.ladder.n_levels,
                "acceptance": _rates_report(built.tallies),
            },
            "outputs": {"ladder": "ladder.json"},
        })
    _write_json(os.path.join(out_dir, "report.json"), report)
    return report


def command_run(cfg, out_dir, ladder_path=None):
    """Full pipeline: build (or load) the ladder, sample, write
    samples, per-level traces, and the report."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    with make_evaluator(cfg) as evaluator:
        build_rng, sample_rng = np.random.default_rng(cfg.seed).spawn(2)
        built = None
        if ladder_path is None:
            built = build_ladder(
                evaluator, make_ladder_config(cfg),
                make_move_config(cfg, "build"), build_rng,
            )
            ladder, kernels, state = built.ladder, built.kernels, built.state
            save_ladder_file(
                os.path.join(out_dir, "ladder.json"),
                ladder, kernels, state, evaluator,
                build_info={
                    "n_iterations": built.n_iterations,
                    "history": built.history,
                },
                config_echo=cfg.echo(),
            )
        else:
            ladder, kernels, state, _ = load_ladder_file(ladder_path, evaluator)

        result = run_sampler(
            state, ladder.rows, kernels, evaluator,
            make_move_config(cfg, "sample"), sample_rng,
            cfg.output_n_samples, thin=cfg.output_thin,
            trace_every=cfg.output_trace_every,
        )

        write_samples_csv(
            os.path.join(out_dir, "samples.csv"),
            result.samples.points, result.samples.imps,
        )
        level_dir = os.path.join(out_dir, "levels")
        os.makedirs(level_dir, exist_ok=True)
        level_files = {}
        for trace in result.traces:
            fname = f"level_{trace.level:02d}.csv"
            write_trace_csv(os.path.join(level_dir, fname), trace)
            level_files[trace.level] = os.path.join("levels", fname)

        report = _base_report("run", cfg, evaluator, t0)
        report.update({
            "ladder": ladder.to_dict(),
            "volume": _volume_report(ladder, evaluator),
            "sampling": {
                "n_samples": cfg.output_n_samples,
                "thin": cfg.output_thin,
                "n_iterations": result.n_iterations,
                "acceptance": _rates_report(result.tallies),
            },
            "outputs": {
                "samples": "samples.csv",
                "levels": level_files,
                **({"ladder": "ladder.json"} if built is not None else {}),
            },
        })
        if built is not None:
            report["build"] = {
                "n_iterations": built.n_iterations,
                "n_levels": built.ladder.n_levels,
                "acceptance": _rates_report(built.tallies),
            }
        else:
            report["ladder_file"] = str(ladder_path)
    _write_json(os.path.join(out_dir, "report.json"), report)
    return report


def command_eff(cfg, out_dir):
    """Tabulate the cost model over a volume grid (or one volume)."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    if cfg.eff_grid is None and cfg.eff_target_volume is None:
        raise ConfigError("eff needs eff.target_volume or eff.grid")
    params = CostParams(
        n_samples=cfg.eff_n_samples,
        thin=cfg.eff_thin,
        target_volume=cfg.eff_target_volume or 0.5,
        p=cfg.eff_p,
        s=cfg.eff_s,
        s_final=cfg.eff_s_final,
        n_mutations=cfg.eff_n_mutations,
        p_mutation_build=cfg.eff_p_mutation_build,
        p_mutation_sample=cfg.eff_p_mutation_sample,
        n_chromosomes=cfg.eff_n_chromosomes,
    )
    if cfg.eff_grid is not None:
        lo, hi, count = cfg.eff_grid
        vols = np.geomspace(lo, hi, count)
    else:
        vols = np.array([cfg.eff_target_volume])
    table = cost_table(vols, params)
    write_cost_csv(os.path.join(out_dir, "cost_table.csv"), table)

    report = {
        "command": "eff",
        "config": cfg.echo(),
        "wall_seconds": round(time.perf_counter() - t0, 3),
        "outputs": {"cost_table": "cost_table.csv"},
    }
    if cfg.eff_target_volume is not None:
        v = cfg.eff_target_volume
        report["point"] = {
            "target_volume": v,
            "n_chromosomes": (cfg.eff_n_chromosomes
                              if cfg.eff_n_chromosomes is not None
                              else expected_chromosomes(v, cfg.eff_p)),
            "evals_rejection": expected_evals_rejection(cfg.eff_n_samples, v),
            "evals_sampler": expected_evals_sampler(params),
        }
    cheaper = table["evals_rejection"] > table["evals_sampler"]
    flip = np.flatnonzero(cheaper[:-1] != cheaper[1:])
    if flip.size:
        i = int(flip[0])
        report["break_even_volume"] = float(
            np.sqrt(table["target_volume"][i] * table["target_volume"][i + 1])
        )
    _write_json(os.path.join(out_dir, "report.json"), report)
    return report


_ELLIPSOID_ORACLE_PROBLEMS = ("plane2d", "ellipsoid10d")


def command_oracle(cfg, out_dir):
    """Reference samples for the configured problem by an independent
    route (plain rejection, or direct ellipsoid-union geometry)."""
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    with make_evaluator(cfg) as evaluator:
        rng = np.random.default_rng(cfg.seed)
        if cfg.oracle_kind == "rejection":
            ss = rejection_sample(
                evaluator, cfg.oracle_n, rng, max_attempts=cfg.oracle_max_attempts
            )
            points, imps = ss.points, ss.imps
        else:
            if cfg.problem_name not in _ELLIPSOID_ORACLE_PROBLEMS:
                raise ConfigError(
                    "oracle.kind = ellipsoid supports only "
                    + ", ".join(_ELLIPSOID_ORACLE_PROBLEMS)
                )
            if cfg.problem_name == "plane2d":
                means, covs = plane_components()
            elif cfg.problem_gamma is not None:
                means, covs = ellipsoid_components(cfg.problem_gamma)
            else:
                means, covs = ellipsoid_components()
            radius = float(evaluator.spec.cutoffs[0])
            points = ellipsoid_sample(
                means, covs, radius, cfg.oracle_n, rng,
                bounds=evaluator.spec.bounds,
            )
            imps = evaluator.evaluate_batch(points)
        write_samples_csv(os.path.join(out_dir, "oracle_samples.csv"), points, imps)
        report = _base_report("oracle", cfg, evaluator, t0)
        report.update({
            "oracle": {"kind": cfg.oracle_kind, "n": int(points.shape[0])},
            "outputs": {"samples": "oracle_samples.csv"},
        })
    _write_json(os.path.join(out_dir, "report.json"), report)
    return report
