from dataclasses import replace

import numpy as np
import pytest

from skintherm.driver import (EXIT_NONCONVERGED, EXIT_OK, Problem, checkpoint, global_picard, initial_state, main,
                              picard_map, restore, run_staggered, spacetime_l2, step_coupled)
from skintherm.io import RunConfig, read_csv
from skintherm.params import ProductionSpec


def _cfg(T=0.3, **params):
    cfg = RunConfig()
    return cfg.replace(params=cfg.params.replace(T_final=T, **params)).validate()


@pytest.fixture(scope="module")
def default_problem():
    return Problem(_cfg())


def test_decoupled_second_subiteration_changes_nothing():
    prob = Problem(_cfg(G_spec=ProductionSpec(temperature_coupling=False)))
    s, _ = step_coupled(prob, initial_state(prob), prob.cfg.dt)
    assert s.subiter_residuals == [0.0]


def test_subiteration_residual_decreases(default_problem):
    cfg = default_problem.cfg
    prob = Problem(cfg.replace(solver=replace(cfg.solver, n_subiter=3)))
    s = initial_state(prob)
    for _ in range(2):
        s, _ = step_coupled(prob, s, cfg.dt)
    r = s.subiter_residuals
    assert len(r) == 2 and r[1] < r[0]


def test_restart_matches_uninterrupted_run(default_problem):
    prob = default_problem
    full = run_staggered(prob.cfg, prob, keep_states=True)
    half = run_staggered(prob.cfg, prob, keep_states=True, until_step=3)
    resumed = run_staggered(prob.cfg, prob, state=restore(checkpoint(half.states[-1])), keep_states=True)
    for a, b in zip(full.states[3:], resumed.states):
        assert a.t == b.t
        assert np.array_equal(a.theta_s, b.theta_s) and np.array_equal(a.theta_f, b.theta_f)
        assert np.array_equal(a.w, b.w) and np.array_equal(a.c, b.c)


def test_history_window_is_bounded(default_problem):
    prob = default_problem
    res = run_staggered(prob.cfg, prob, keep_states=True)
    last = res.states[-1]
    assert last.history.times[0] <= last.t + prob.cfg.dt - prob.params.gamma
    assert len(last.history.times) <= int(round(prob.params.gamma / prob.cfg.dt)) + 2


def test_invariants_hold_every_step(default_problem):
    res = run_staggered(default_problem.cfg, default_problem)
    assert res.failures == []
    assert min(res.report["J_min"]) >= default_problem.base.eta
    rng = np.asarray(res.report["theta_range"])
    assert rng.shape == (len(res.rows), 2) and np.all(np.isfinite(rng))


def test_picard_consistent_with_staggered(default_problem):
    prob = default_problem
    res = run_staggered(prob.cfg, prob, keep_states=True)
    traj = [s.theta_s for s in res.states]
    new, _ = picard_map(prob, traj)
    sub = max(r[0] for r in res.report["subiter_residuals"])
    assert spacetime_l2(prob, new, traj) <= sub


def test_picard_reports_nonconvergence(default_problem):
    out = global_picard(default_problem, max_iter=1)
    assert not out.converged and out.iterations == 1


def test_cli_run_and_picard(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[model]\nT_final = 0.3\n[discretization]\ndt = 0.1\n[run]\nwrite_vtk = true\ncheckpoint_every = 1\n")
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "a")]) == EXIT_OK
    d = read_csv(tmp_path / "a" / "diagnostics.csv")
    assert np.allclose(d["t"], [0.0, 0.1, 0.2, 0.3])
    assert (tmp_path / "a" / "report.json").exists()
    assert len(list((tmp_path / "a" / "vtk").glob("*.vtk"))) == 8
    assert len(list((tmp_path / "a").glob("checkpoint_*.bin"))) == 3
    assert main(["picard", "-c", str(cfg), "-o", str(tmp_path / "b")]) == EXIT_OK
    assert main(["picard", "-c", str(cfg), "-o", str(tmp_path / "c"), "--picard-max-iter", "1"]) == EXIT_NONCONVERGED


def test_cli_rejects_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[model]\nR2 = 0.6\n")
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "x")]) == 1
    assert "R_2 < 1/2" in capsys.readouterr().err


def test_picard_residuals_eventually_decrease(default_problem):
    out = global_picard(default_problem, tol=1e-10, max_iter=8)
    res = np.asarray(out.residuals)
    assert len(res) >= 3
    assert np.all(np.diff(res[1:]) < 0), res


def test_cli_verify_table(tmp_path, capsys):
    import json
    assert main(["verify", "--json", str(tmp_path / "v.json")]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].split("\t") == ["status", "group", "check", "value"]
    assert all(line.split("\t")[0] == "ok" for line in lines[1:])
    rows = json.loads((tmp_path / "v.json").read_text())
    assert len(rows) == len(lines) - 1 and any(r["group"] == "coef" for r in rows)
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nR2 = 0.6\n")
    assert main(["verify", "-c", str(bad)]) == 2
    out = capsys.readouterr().out
    assert any(line.startswith("FAIL\t(A6)\tR_2 + 3 delta") for line in out.splitlines())
