"""Commands, file formats, ladder persistence, and the CLI."""

import json
import sys

import numpy as np
import pytest

from idemc.cli import main as cli_main
from idemc.config import _SCHEMA, resolve_config
from idemc.emc import LevelTrace
from idemc.errors import ConfigError
from idemc.harness import (
    command_eff,
    command_ladder,
    command_oracle,
    command_run,
    load_ladder_file,
    make_evaluator,
    make_move_config,
    save_ladder_file,
    write_samples_csv,
    write_trace_csv,
)
from idemc.ladder import LadderConfig, build_ladder
from idemc.membership import builtin_problem


def cfg_from(text):
    raw = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    return resolve_config(raw)


SMALL_RUN = """
problem.name = plane2d
seed = 5
ladder.p = 0.3
ladder.s = 150
ladder.s_final = 150
ladder.cluster_cap = 400
output.n_samples = 60
output.thin = 2
output.trace_every = 30
"""


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return header, data


# ---------------------------------------------------------------------------
# configured object construction
# ---------------------------------------------------------------------------


def test_make_evaluator_builtin():
    ev = make_evaluator(cfg_from("problem.name = plane2d"))
    assert ev.spec.name == "plane2d"
    ev = make_evaluator(cfg_from("problem.name = plane2d\nproblem.cutoff = 2.5"))
    assert ev.spec.cutoffs.tolist() == [2.5]
    ev = make_evaluator(
        cfg_from("problem.name = plane2d_twowave\nproblem.cutoffs = 3,2")
    )
    assert ev.spec.cutoffs.tolist() == [3.0, 2.0]
    ev = make_evaluator(
        cfg_from("problem.name = ellipsoid10d\nproblem.gamma = 0.3")
    )
    assert ev.spec.dim == 10


def test_make_evaluator_cutoff_arity():
    with pytest.raises(ConfigError):
        make_evaluator(
            cfg_from("problem.name = plane2d_twowave\nproblem.cutoff = 3")
        )
    with pytest.raises(ConfigError):
        make_evaluator(
            cfg_from("problem.name = plane2d\nproblem.cutoffs = 3,3")
        )


def test_make_move_config_phases():
    cfg = cfg_from(
        "problem.name = plane2d\nmoves.p_mutation_build = 0.8\n"
        "moves.p_mutation_sample = 0.95\nmoves.crossover = k-point:2"
    )
    build = make_move_config(cfg, "build")
    sample = make_move_config(cfg, "sample")
    assert build.p_mutation == 0.8
    assert sample.p_mutation == 0.95
    assert build.crossover_kind == "k-point" and build.crossover_k == 2


# ---------------------------------------------------------------------------
# csv formats
# ---------------------------------------------------------------------------


def test_samples_csv_round_trip(tmp_path):
    pts = np.array([[0.1234567890123456789, -3.0], [1e-17, 2.5]])
    imps = np.array([[0.5], [2.75]])
    path = tmp_path / "samples.csv"
    write_samples_csv(path, pts, imps)
    header, data = read_csv(path)
    assert header == ["x1", "x2", "imp1"]
    # 17 significant digits survive a float64 round trip exactly
    assert np.array_equal(data[:, :2], pts)
    assert np.array_equal(data[:, 2:], imps)


def test_trace_csv_round_trip(tmp_path):
    trace = LevelTrace(
        level=1,
        iters=np.array([10, 20]),
        points=np.array([[0.5, 1.5], [0.25, -0.125]]),
        imps=np.array([[1.0, 2.0], [0.5, 0.25]]),
    )
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    header, data = read_csv(path)
    assert header == ["iter", "x1", "x2", "imp1", "imp2"]
    assert np.array_equal(data[:, 0], [10.0, 20.0])
    assert np.array_equal(data[:, 1:3], trace.points)


# ---------------------------------------------------------------------------
# ladder files
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def plane_build():
    ev = builtin_problem("plane2d")
    cfg = LadderConfig(p=0.3, s=150, s_final=150, cluster_cap=400)
    from idemc.emc import MoveConfig
    return ev, build_ladder(ev, cfg, MoveConfig(p_mutation=0.9),
                            np.random.default_rng(5))


def test_ladder_file_round_trip(tmp_path, plane_build):
    ev, built = plane_build
    path = tmp_path / "ladder.json"
    save_ladder_file(path, built.ladder, built.kernels, built.state, ev,
                     build_info={"n_iterations": built.n_iterations})
    ladder, kernels, state, meta = load_ladder_file(path, ev)
    assert np.array_equal(ladder.rows, built.ladder.rows)
    assert np.array_equal(ladder.realized, built.ladder.realized)
    assert np.array_equal(state.points, built.state.points)
    assert meta["n_iterations"] == built.n_iterations
    assert len(kernels) == len(built.kernels)
    x = built.state.points[-1]
    y = x + 0.01
    for a, b in zip(kernels, built.kernels):
        assert a.log_density(x, y) == b.log_density(x, y)


def test_ladder_file_rejects_other_problem(tmp_path, plane_build):
    ev, built = plane_build
    path = tmp_path / "ladder.json"
    save_ladder_file(path, built.ladder, built.kernels, built.state, ev)
    other = builtin_problem("fourmode3d")
    with pytest.raises(ConfigError, match="does not match"):
        load_ladder_file(path, other)
    # same name but a different cutoff is a different problem too
    tighter = builtin_problem("plane2d", cutoff=2.0)
    with pytest.raises(ConfigError, match="does not match"):
        load_ladder_file(path, tighter)


def test_ladder_file_rejects_tampering(tmp_path, plane_build):
    ev, built = plane_build
    path = tmp_path / "ladder.json"
    save_ladder_file(path, built.ladder, built.kernels, built.state, ev)
    payload = json.loads(path.read_text())

    bad = dict(payload, format="something-else")
    p1 = tmp_path / "bad_format.json"
    p1.write_text(json.dumps(bad))
    with pytest.raises(ConfigError, match="not a ladder file"):
        load_ladder_file(p1, ev)

    bad = dict(payload, version=99)
    p2 = tmp_path / "bad_version.json"
    p2.write_text(json.dumps(bad))
    with pytest.raises(ConfigError, match="version"):
        load_ladder_file(p2, ev)

    bad = json.loads(path.read_text())
    bad["state"]["imps"][-1][0] = 0.001  # stale cache
    p3 = tmp_path / "bad_imps.json"
    p3.write_text(json.dumps(bad))
    with pytest.raises(ConfigError, match="wrong model"):
        load_ladder_file(p3, ev)

    bad = json.loads(path.read_text())
    bad["kernels"] = bad["kernels"][:-1]
    p4 = tmp_path / "bad_kernels.json"
    p4.write_text(json.dumps(bad))
    with pytest.raises(ConfigError, match="kernel count"):
        load_ladder_file(p4, ev)

    with pytest.raises(ConfigError, match="cannot read"):
        load_ladder_file(tmp_path / "missing.json", ev)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def test_command_run_outputs(tmp_path):
    cfg = cfg_from(SMALL_RUN)
    out = tmp_path / "run"
    report = command_run(cfg, out)
    assert set(report["config"]) == set(_SCHEMA)
    assert report["evaluations"] > 0
    assert (out / "samples.csv").is_file()
    assert (out / "ladder.json").is_file()
    assert (out / "report.json").is_file()
    header, data = read_csv(out / "samples.csv")
    assert header == ["x1", "x2", "imp1"]
    assert data.shape == (60, 3)
    assert np.all(data[:, 2] <= 3.0)
    n_levels = len(report["ladder"]["rows"])
    for lvl in range(n_levels):
        assert (out / "levels" / f"level_{lvl:02d}.csv").is_file()
    # the target level trace is the retained samples
    _, target = read_csv(out / "levels" / f"level_{n_levels - 1:02d}.csv")
    assert np.array_equal(target[:, 1:], data)


def test_command_run_resume_bit_identical(tmp_path):
    cfg = cfg_from(SMALL_RUN)
    inline = tmp_path / "inline"
    command_run(cfg, inline)
    built = tmp_path / "built"
    command_ladder(cfg, built)
    resumed = tmp_path / "resumed"
    command_run(cfg, resumed, ladder_path=built / "ladder.json")
    a = (inline / "samples.csv").read_bytes()
    b = (resumed / "samples.csv").read_bytes()
    assert a == b
    # a different seed must change the draw
    cfg2 = cfg_from(SMALL_RUN.replace("seed = 5", "seed = 6"))
    other = tmp_path / "other"
    command_run(cfg2, other)
    assert (other / "samples.csv").read_bytes() != a


def test_command_eff_grid_and_point(tmp_path):
    cfg = cfg_from(
        "problem.name = plane2d\neff.grid = 1e-8:1e-1:15\neff.p = 0.4"
    )
    out = tmp_path / "eff"
    report = command_eff(cfg, out)
    header, data = read_csv(out / "cost_table.csv")
    assert header == ["target_volume", "n_chromosomes",
                      "evals_rejection", "evals_sampler"]
    assert data.shape == (15, 4)
    assert 5e-4 < report["break_even_volume"] < 5e-3

    point_cfg = cfg_from("problem.name = plane2d\neff.target_volume = 1e-6")
    rep2 = command_eff(point_cfg, tmp_path / "eff2")
    assert rep2["point"]["n_chromosomes"] == 17
    assert rep2["point"]["evals_rejection"] == pytest.approx(1e10)

    with pytest.raises(ConfigError, match="eff.target_volume or eff.grid"):
        command_eff(cfg_from("problem.name = plane2d"), tmp_path / "eff3")


def test_command_oracle_kinds(tmp_path):
    base = "problem.name = plane2d\nseed = 2\noracle.n = 300\n"
    rej = command_oracle(cfg_from(base), tmp_path / "rej")
    assert rej["oracle"] == {"kind": "rejection", "n": 300}
    header, data = read_csv(tmp_path / "rej" / "oracle_samples.csv")
    assert data.shape == (300, 3)
    assert np.all(data[:, 2] <= 3.0)

    ell = command_oracle(cfg_from(base + "oracle.kind = ellipsoid"),
                         tmp_path / "ell")
    assert ell["oracle"]["kind"] == "ellipsoid"
    _, edata = read_csv(tmp_path / "ell" / "oracle_samples.csv")
    assert np.all(edata[:, 2] <= 3.0 + 1e-9)

    with pytest.raises(ConfigError, match="ellipsoid"):
        command_oracle(
            cfg_from("problem.name = fourmode3d\noracle.kind = ellipsoid"),
            tmp_path / "bad",
        )


# ---------------------------------------------------------------------------
# external evaluator through the full pipeline
# ---------------------------------------------------------------------------

RING_CHILD = r"""
import sys
print("IDEMC 1 2 1")
sys.stdout.flush()
for line in sys.stdin:
    x, y = (float(t) for t in line.split())
    r = (x * x + y * y) ** 0.5
    print(abs(r - 2.0))
    sys.stdout.flush()
"""


def test_command_run_external(tmp_path):
    child = tmp_path / "ring.py"
    child.write_text(RING_CHILD)
    cfg = cfg_from(f"""
problem.name = external
problem.command = {sys.executable} {child}
problem.bounds = -4:4,-4:4
problem.cutoff = 0.5
seed = 3
ladder.s = 120
ladder.s_final = 120
ladder.cluster_cap = 300
output.n_samples = 40
output.thin = 2
""")
    out = tmp_path / "ring_out"
    report = command_run(cfg, out)
    header, data = read_csv(out / "samples.csv")
    # every retained point sits in the ring |r - 2| <= 0.5
    r = np.hypot(data[:, 0], data[:, 1])
    assert np.all(np.abs(r - 2.0) <= 0.5 + 1e-12)
    assert np.allclose(data[:, 2], np.abs(r - 2.0))
    assert report["problem"]["name"].startswith("external")


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_RUN)
    out = tmp_path / "cli_out"
    assert cli_main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    said = json.loads(capsys.readouterr().out)
    assert said["ok"] is True
    assert (out / "samples.csv").is_file()
    report = json.loads((out / "report.json").read_text())
    assert report["command"] == "run"
    assert report["config"]["seed"] == 5


def test_cli_seed_override_changes_output(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_RUN)
    a, b, c = (tmp_path / n for n in ("a", "b", "c"))
    assert cli_main(["run", "--config", str(cfg), "--out", str(a)]) == 0
    assert cli_main(["run", "--config", str(cfg), "--out", str(b),
                     "--seed", "5"]) == 0
    assert cli_main(["run", "--config", str(cfg), "--out", str(c),
                     "--seed", "99"]) == 0
    capsys.readouterr()
    assert (a / "samples.csv").read_bytes() == (b / "samples.csv").read_bytes()
    assert (a / "samples.csv").read_bytes() != (c / "samples.csv").read_bytes()


def test_cli_config_error_exit_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "problem.name = plane9d\n")
    out = tmp_path / "bad_out"
    assert cli_main(["run", "--config", str(cfg), "--out", str(out)]) == 1
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "ConfigError"
    assert err["exit_code"] == 1
    assert "plane9d" not in err["message"] or "must be one of" in err["message"]
    assert "error:" in capsys.readouterr().err


def test_cli_infeasible_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, (
        "problem.name = fourmode3d\noracle.n = 50\n"
        "oracle.max_attempts = 20000\n"
    ))
    out = tmp_path / "inf_out"
    assert cli_main(["oracle", "--config", str(cfg), "--out", str(out)]) == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "InfeasibleError"
    assert err["exit_code"] == 2
    assert err["volume_bound"] == pytest.approx(3.0 / 20000)
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_empty_target_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, (
        "problem.name = plane2d\nproblem.cutoff = 0.0001\n"
        "ladder.s = 40\nladder.s_final = 40\nladder.max_levels = 3\n"
        "ladder.cluster_cap = 200\nladder.p = 0.5\n"
    ))
    out = tmp_path / "empty_out"
    code = cli_main(["ladder", "--config", str(cfg), "--out", str(out)])
    assert code == 2
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "EmptyTargetError"
    assert len(err["levels"]) == 4
    capsys.readouterr()


def test_cli_eff_and_oracle_ok(tmp_path, capsys):
    cfg = write_cfg(tmp_path, (
        "problem.name = plane2d\neff.target_volume = 1e-7\noracle.n = 100\n"
    ))
    assert cli_main(["eff", "--config", str(cfg),
                     "--out", str(tmp_path / "eff")]) == 0
    assert cli_main(["oracle", "--config", str(cfg),
                     "--out", str(tmp_path / "orc")]) == 0
    capsys.readouterr()
    assert (tmp_path / "eff" / "cost_table.csv").is_file()
    assert (tmp_path / "orc" / "oracle_samples.csv").is_file()
