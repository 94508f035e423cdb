"""Run configuration: a flat text format of dotted keys.

One ``section.key = value`` per line; ``#`` starts a comment.  Every
key is known to the schema below, every value is validated on load,
and every default survives into the run report, so a report always
shows the exact configuration that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .errors import ConfigError

__all__ = ["RunConfig", "parse_config_text", "load_config", "resolve_config"]


def _parse_int(s):
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"expected an integer, got {s!r}") from None


def _parse_float(s):
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"expected a number, got {s!r}") from None


def _parse_bool(s):
    low = s.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    raise ConfigError(f"expected true or false, got {s!r}")


def _parse_str(s):
    return s.strip()


def _parse_floats(s):
    try:
        return tuple(float(tok) for tok in s.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {s!r}") from None


def _parse_bounds(s):
    out = []
    for tok in s.split(","):
        parts = tok.split(":")
        if len(parts) != 2:
            raise ConfigError(f"expected lo:hi pairs, got {s!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError(f"expected lo:hi pairs, got {s!r}") from None
        if not lo < hi:
            raise ConfigError(f"bounds need lo < hi, got {tok!r}")
        out.append((lo, hi))
    return tuple(out)


def _parse_order(s):
    try:
        order = tuple(int(tok) for tok in s.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated coordinates, got {s!r}") from None
    if sorted(order) != list(range(1, len(order) + 1)):
        raise ConfigError(
            f"expected a permutation of 1..{len(order)}, got {s!r}"
        )
    return tuple(i - 1 for i in order)


def _parse_crossover(s):
    s = s.strip()
    if s in ("one-point", "uniform"):
        return (s, 1)
    if s.startswith("k-point:"):
        k = _parse_int(s.split(":", 1)[1])
        if k < 1:
            raise ConfigError("k-point crossover needs k >= 1")
        return ("k-point", k)
    raise ConfigError(
        f"expected one-point, uniform or k-point:<k>, got {s!r}"
    )


def _parse_grid(s):
    parts = s.split(":")
    if len(parts) != 3:
        raise ConfigError(f"expected lo:hi:count, got {s!r}")
    lo, hi = _parse_float(parts[0]), _parse_float(parts[1])
    count = _parse_int(parts[2])
    if not (0.0 < lo < hi < 1.0) or count < 2:
        raise ConfigError(f"grid needs 0 < lo < hi < 1 and count >= 2, got {s!r}")
    return (lo, hi, count)


def _positive(name):
    def check(v):
        if v <= 0:
            raise ConfigError(f"{name} must be positive")
    return check


def _at_least(name, n):
    def check(v):
        if v < n:
            raise ConfigError(f"{name} must be >= {n}")
    return check


def _in_open_unit(name):
    def check(v):
        if not 0.0 < v < 1.0:
            raise ConfigError(f"{name} must lie in (0, 1)")
    return check


def _in_unit(name):
    def check(v):
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name} must lie in [0, 1]")
    return check


def _choice(name, options):
    def check(v):
        if v not in options:
            raise ConfigError(f"{name} must be one of {', '.join(options)}")
    return check


# key -> (parser, default, validator or None); None default means "unset"
_SCHEMA = {
    "problem.name": (_parse_str, None, None),
    "problem.cutoff": (_parse_float, None, _positive("problem.cutoff")),
    "problem.cutoffs": (_parse_floats, None, None),
    "problem.gamma": (_parse_float, None, _positive("problem.gamma")),
    "problem.command": (_parse_str, None, None),
    "problem.bounds": (_parse_bounds, None, None),
    "seed": (_parse_int, 0, _at_least("seed", 0)),
    "threads": (_parse_int, 1, _at_least("threads", 1)),
    "ladder.p": (_parse_float, 0.4, _in_open_unit("ladder.p")),
    "ladder.s": (_parse_int, 2000, _at_least("ladder.s", 10)),
    "ladder.s_final": (_parse_int, 5000, _at_least("ladder.s_final", 1)),
    "ladder.max_levels": (_parse_int, 200, _at_least("ladder.max_levels", 1)),
    "ladder.cluster_cap": (_parse_int, 2000, _at_least("ladder.cluster_cap", 10)),
    "ladder.max_k": (_parse_int, 10, _at_least("ladder.max_k", 1)),
    "ladder.ridge": (_parse_float, 1e-8, _positive("ladder.ridge")),
    "moves.n_mutations": (_parse_int, 10, _at_least("moves.n_mutations", 1)),
    "moves.p_mutation_build": (_parse_float, 0.9, _in_unit("moves.p_mutation_build")),
    "moves.p_mutation_sample": (_parse_float, 0.9, _in_unit("moves.p_mutation_sample")),
    "moves.omega": (_parse_float, 0.9, None),
    "moves.scale": (_parse_float, 1.0, _positive("moves.scale")),
    "moves.kind": (_parse_str, "normal", _choice("moves.kind", ("normal", "truncated"))),
    "moves.crossover": (_parse_crossover, ("one-point", 1), None),
    "moves.activity_order": (_parse_order, None, None),
    "output.n_samples": (_parse_int, 5000, _at_least("output.n_samples", 1)),
    "output.thin": (_parse_int, 10, _at_least("output.thin", 1)),
    "output.trace_every": (_parse_int, 10, _at_least("output.trace_every", 1)),
    "output.dir": (_parse_str, "out", None),
    "eff.n_samples": (_parse_int, 10000, _at_least("eff.n_samples", 1)),
    "eff.thin": (_parse_int, 10, _at_least("eff.thin", 1)),
    "eff.target_volume": (_parse_float, None, _in_open_unit("eff.target_volume")),
    "eff.p": (_parse_float, 0.4, _in_open_unit("eff.p")),
    "eff.s": (_parse_int, 2000, _at_least("eff.s", 1)),
    "eff.s_final": (_parse_int, 5000, _at_least("eff.s_final", 1)),
    "eff.n_mutations": (_parse_int, 10, _at_least("eff.n_mutations", 1)),
    "eff.p_mutation_build": (_parse_float, 0.85, _in_unit("eff.p_mutation_build")),
    "eff.p_mutation_sample": (_parse_float, 0.97, _in_unit("eff.p_mutation_sample")),
    "eff.n_chromosomes": (_parse_int, None, _at_least("eff.n_chromosomes", 2)),
    "eff.grid": (_parse_grid, None, None),
    "oracle.kind": (_parse_str, "rejection",
                    _choice("oracle.kind", ("rejection", "ellipsoid"))),
    "oracle.n": (_parse_int, 10000, _at_least("oracle.n", 1)),
    "oracle.max_attempts": (_parse_int, 10_000_000,
                            _at_least("oracle.max_attempts", 1)),
}

_KNOWN_PROBLEMS = ("plane2d", "plane2d_twowave", "fourmode3d", "ellipsoid10d",
                   "external")


def _field_name(key):
    return key.replace(".", "_")


@dataclass
class RunConfig:
    """Fully resolved configuration; one attribute per schema key, with
    dots replaced by underscores."""

    problem_name: str = None
    problem_cutoff: float = None
    problem_cutoffs: tuple = None
    problem_gamma: float = None
    problem_command: str = None
    problem_bounds: tuple = None
    seed: int = 0
    threads: int = 1
    ladder_p: float = 0.4
    ladder_s: int = 2000
    ladder_s_final: int = 5000
    ladder_max_levels: int = 200
    ladder_cluster_cap: int = 2000
    ladder_max_k: int = 10
    ladder_ridge: float = 1e-8
    moves_n_mutations: int = 10
    moves_p_mutation_build: float = 0.9
    moves_p_mutation_sample: float = 0.9
    moves_omega: float = 0.9
    moves_scale: float = 1.0
    moves_kind: str = "normal"
    moves_crossover: tuple = ("one-point", 1)
    moves_activity_order: tuple = None
    output_n_samples: int = 5000
    output_thin: int = 10
    output_trace_every: int = 10
    output_dir: str = "out"
    eff_n_samples: int = 10000
    eff_thin: int = 10
    eff_target_volume: float = None
    eff_p: float = 0.4
    eff_s: int = 2000
    eff_s_final: int = 5000
    eff_n_mutations: int = 10
    eff_p_mutation_build: float = 0.85
    eff_p_mutation_sample: float = 0.97
    eff_n_chromosomes: int = None
    eff_grid: tuple = None
    oracle_kind: str = "rejection"
    oracle_n: int = 10000
    oracle_max_attempts: int = 10_000_000

    def echo(self):
        """Every key with its resolved value (defaults included), for
        the run report."""
        out = {}
        for key in _SCHEMA:
            v = getattr(self, _field_name(key))
            if isinstance(v, tuple):
                v = list(v)
            out[key] = v
        return out


def parse_config_text(text):
    """Parse the flat key = value format into a raw string dict.

    Raises
    ------
    ConfigError
        On malformed lines, unknown keys, or duplicate keys; messages
        carry the line number.
    """
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = body.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if value == "":
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        raw[key] = value
    return raw


def resolve_config(raw):
    """Validate a raw string dict and fill defaults.

    Parameters
    ----------
    raw : dict
        As produced by :func:`parse_config_text`.

    Returns
    -------
    RunConfig
    """
    cfg = RunConfig()
    for key, value in raw.items():
        parser, _, check = _SCHEMA[key]
        try:
            parsed = parser(value)
            if check is not None:
                check(parsed)
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        setattr(cfg, _field_name(key), parsed)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg):
    if cfg.problem_name is None:
        raise ConfigError("problem.name is required")
    if cfg.problem_name not in _KNOWN_PROBLEMS:
        raise ConfigError(
            f"problem.name must be one of {', '.join(_KNOWN_PROBLEMS)}"
        )
    if cfg.problem_name == "external":
        if cfg.problem_command is None:
            raise ConfigError("problem.command is required for external problems")
        if cfg.problem_bounds is None:
            raise ConfigError("problem.bounds is required for external problems")
        if cfg.problem_cutoffs is None and cfg.problem_cutoff is None:
            raise ConfigError(
                "problem.cutoffs (or problem.cutoff) is required for external problems"
            )
    else:
        for key in ("problem_command", "problem_bounds"):
            if getattr(cfg, key) is not None:
                raise ConfigError(
                    f"{key.replace('_', '.', 1)} only applies to external problems"
                )
    if cfg.problem_gamma is not None and cfg.problem_name != "ellipsoid10d":
        raise ConfigError("problem.gamma only applies to ellipsoid10d")
    if cfg.problem_cutoffs is not None and cfg.problem_cutoff is not None:
        raise ConfigError("give problem.cutoff or problem.cutoffs, not both")
    if cfg.problem_cutoffs is not None and any(c <= 0 for c in cfg.problem_cutoffs):
        raise ConfigError("problem.cutoffs must be positive")
    if not 0.0 < cfg.moves_omega <= 1.0:
        raise ConfigError("moves.omega must lie in (0, 1]")
    if cfg.moves_crossover[0] == "k-point" and cfg.moves_crossover[1] < 1:
        raise ConfigError("k-point crossover needs k >= 1")


def load_config(path):
    """Read and resolve a configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return resolve_config(parse_config_text(text))
