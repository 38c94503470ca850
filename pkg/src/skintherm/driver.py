"""Coupled time loop, global Picard iteration and the command-line interface.

One coupled step advances chemistry, geometry, flow and temperature from
``t_n`` to ``t_{n+1}``. The averaged temperature at ``t_{n+1}`` needs
``theta_s(t_{n+1})``; the first sub-iteration lags it and later ones reuse the
latest transport result.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chemistry import AveragedHistory, ChemistryState, RadiusField, RadiusSample, spatial_average
from .deformation import ConstantRadius, Deformation
from .fem import gauss_legendre
from .geometry import build_reference_mesh, p2_space
from .io import (CheckpointError, ConfigError, RunConfig, append_csv, config_to_dict, pack_arrays, parse_config,
                 save_checkpoint, unpack_arrays, write_snapshot)
from .stokes import StokesSolution, assemble_stokes, flow_rates, solve_stokes
from .transport import advance, assemble_step, energy_norm, interface_flux

EXIT_OK, EXIT_INVARIANT, EXIT_NONCONVERGED = 0, 2, 3


class InvariantError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass
class CoupledState:
    """Everything needed to continue a run from time ``t``."""

    t: float
    step: int
    c: np.ndarray
    cx: np.ndarray
    cxx: np.ndarray
    T: float
    history: AveragedHistory
    radius: RadiusSample
    w: np.ndarray
    q: np.ndarray
    theta_f: np.ndarray
    theta_s: np.ndarray
    subiter_residuals: list = field(default_factory=list)

    def chemistry(self, params, x_grid) -> ChemistryState:
        st = ChemistryState(params, x_grid)
        st.c, st.cx, st.cxx = self.c.copy(), self.cx.copy(), self.cxx.copy()
        return st


def checkpoint(state: CoupledState) -> bytes:
    """Serialize a state, including the averaged-temperature history window."""
    h = state.history
    arrays = {"c": state.c, "cx": state.cx, "cxx": state.cxx, "w": state.w, "q": state.q,
              "theta_f": state.theta_f, "theta_s": state.theta_s,
              "hist_t": np.array(h.times, dtype=float), "hist_T1": np.array(h.T1, dtype=float),
              **{f"R_{k}": getattr(state.radius, k) for k in ("R", "R_t", "R_x", "R_xt", "R_xx")}}
    meta = {"t": state.t.hex(), "step": state.step, "T": float(state.T).hex(), "plateau": float(h.plateau).hex(),
            "gamma": float(h.gamma).hex(), "power": h.power,
            "subiter_residuals": [float(r).hex() for r in state.subiter_residuals]}
    return pack_arrays(arrays, meta)


def restore(blob: bytes) -> CoupledState:
    """Inverse of :func:`checkpoint`; bit-exact."""
    a, m = unpack_arrays(blob)
    hist = AveragedHistory(float.fromhex(m["plateau"]), float.fromhex(m["gamma"]), m["power"],
                           a["hist_t"].tolist(), a["hist_T1"].tolist())
    radius = RadiusSample(**{k: a[f"R_{k}"] for k in ("R", "R_t", "R_x", "R_xt", "R_xx")})
    return CoupledState(t=float.fromhex(m["t"]), step=m["step"], c=a["c"], cx=a["cx"], cxx=a["cxx"],
                        T=float.fromhex(m["T"]), history=hist, radius=radius, w=a["w"], q=a["q"],
                        theta_f=a["theta_f"], theta_s=a["theta_s"],
                        subiter_residuals=[float.fromhex(r) for r in m["subiter_residuals"]])


# ---------------------------------------------------------------------------
# problem setup
# ---------------------------------------------------------------------------

class Problem:
    """Mesh, spaces and the parameter-dependent pieces shared by all steps."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.params = cfg.params
        self.mesh = build_reference_mesh(self.params, cfg.resolution)
        self.space = p2_space(self.mesh.fluid)
        self.x_grid = np.linspace(0.0, self.params.L, cfg.n_chem)
        self.base = Deformation.from_params(self.params, ConstantRadius(self.params.R0))
        # P1 mass matrix of the reference solid for L2(Omega_s) norms
        so = self.mesh.solid
        _, det, _ = so.geometry()
        loc = np.abs(det)[:, None, None] / 120.0 * (np.ones((4, 4)) + np.eye(4))
        from .fem import assemble_matrix
        self.solid_mass = assemble_matrix(loc, so.cells, shape=(so.n_vertices, so.n_vertices))

    def solid_l2(self, v) -> float:
        return float(np.sqrt(max(v @ (self.solid_mass @ v), 0.0)))

    def radius_field(self, samples: dict) -> RadiusField:
        rf = RadiusField(self.x_grid, self.params.R1, self.params.R2)
        for t, s in samples.items():
            rf.set(t, s)
        return rf

    def deformation(self, samples: dict) -> Deformation:
        return self.base.with_radius(self.radius_field(samples))

    def stokes(self, t, deformation) -> StokesSolution:
        sys_ = assemble_stokes(t, self.mesh.fluid, deformation, self.params, space=self.space)
        return solve_stokes(sys_, tol=self.cfg.solver.stokes_tol, backend=self.cfg.solver.backend)

    def transport(self, t0, t1, theta_f, theta_s, sol, d0, d1):
        sys_ = assemble_step(t0, t1, theta_f, theta_s, sol, d0, d1, self.mesh, self.params)
        return advance(sys_, tol=self.cfg.solver.transport_tol, backend=self.cfg.solver.backend)


def initial_state(prob: Problem) -> CoupledState:
    p = prob.params
    fl, so = prob.mesh.fluid, prob.mesh.solid
    theta_f = np.full(fl.n_vertices, float(p.theta_f0))
    theta_s = np.full(so.n_vertices, float(p.theta_s0))
    T1_0 = spatial_average(theta_s, so)
    hist = AveragedHistory(T1_0, p.gamma, p.kernel_spec.power)
    hist.append(0.0, T1_0)
    T0 = hist.convolve(0.0)
    chem = ChemistryState(p, prob.x_grid)
    sample = chem.radius(T0)
    D = prob.deformation({0.0: sample})
    sol = prob.stokes(0.0, D)
    return CoupledState(t=0.0, step=0, c=chem.c, cx=chem.cx, cxx=chem.cxx, T=T0, history=hist, radius=sample,
                        w=sol.w, q=sol.q, theta_f=theta_f, theta_s=theta_s)


def _prune(hist: AveragedHistory, t: float, dt: float) -> AveragedHistory:
    """Keep the entries that the next convolution window can touch."""
    keep_from = t + dt - hist.gamma
    times, vals = hist.times, hist.T1
    i = 0
    while i + 1 < len(times) and times[i + 1] <= keep_from:
        i += 1
    return AveragedHistory(hist.plateau, hist.gamma, hist.power, times[i:], vals[i:])


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvariantError("non-finite values in the solution")


# ---------------------------------------------------------------------------
# staggered stepping
# ---------------------------------------------------------------------------

def step_coupled(prob: Problem, state: CoupledState, dt: float, n_subiter: int | None = None):
    """Advance one step; returns ``(new_state, diagnostics)``."""
    n_subiter = prob.cfg.solver.n_subiter if n_subiter is None else n_subiter
    t0, t1 = state.t, state.t + dt
    chem0 = state.chemistry(prob.params, prob.x_grid)
    T1_guess = state.history.T1[-1]
    residuals = []
    prev = None
    for _ in range(n_subiter):
        hist = state.history.copy()
        hist.append(t1, T1_guess)
        T_new = hist.convolve(t1)
        chem = chem0.advance(dt, state.T, T_new)
        sample = chem.radius(T_new)
        D = prob.deformation({t0: state.radius, t1: sample})
        sol = prob.stokes(t1, D)
        tf, ts, tres = prob.transport(t0, t1, state.theta_f, state.theta_s, sol, D, D)
        _check_finite(tf, ts, sol.w, sol.q, chem.c)
        if prev is not None:
            residuals.append(prob.solid_l2(ts - prev))
        prev = ts
        T1_guess = spatial_average(ts, prob.mesh.solid)
    hist = state.history.copy()
    hist.append(t1, T1_guess)
    new = CoupledState(t=t1, step=state.step + 1, c=chem.c, cx=chem.cx, cxx=chem.cxx, T=T_new,
                       history=_prune(hist, t1, dt), radius=sample, w=sol.w, q=sol.q, theta_f=tf, theta_s=ts,
                       subiter_residuals=residuals)
    return new, {"deformation": D, "stokes": sol, "transport_residual": tres}


def diagnostics(prob: Problem, state: CoupledState, D: Deformation) -> dict:
    """CSV row plus invariant measurements at the state time."""
    p, mesh, t = prob.params, prob.mesh, state.t
    sol = StokesSolution(w=state.w, q=state.q, residual=0.0, space=prob.space, t=t)
    Q_in, Q_out = flow_rates(sol, D, p.L)
    R = state.radius.R
    xg, wg = gauss_legendre(32, 0.0, p.L)
    R_q = D.radius.evaluate(t, xg).R
    vol_radius = float(np.pi * np.sum(wg * R_q**2))
    vol_exact = D.fluid_volume_exact(t, p.L)
    probe = np.vstack([mesh.vertices, _cell_centroids(mesh)])
    J_min = float(D.eval(t, probe, check=False).J.min())
    return {
        "t": t, "T1": state.history.T1[-1], "T": state.T,
        "R_min": float(R.min()), "R_mean": float(np.mean(R)), "R_max": float(R.max()),
        "Q_in": Q_in, "Q_out": Q_out,
        "interface_flux": interface_flux(state.theta_f, state.theta_s, mesh, D, t, p.alpha),
        "energy": energy_norm(state.theta_f, state.theta_s, mesh, D, t),
        "volume_exact": vol_exact, "volume_radius": vol_radius, "J_min": J_min,
    }


def _cell_centroids(mesh) -> np.ndarray:
    """Cell centroids: together with the vertices they sample ``J`` on the mesh."""
    return mesh.vertices[mesh.cells].mean(axis=1)


def check_invariants(prob: Problem, row: dict, volume_tol: float = 1e-8) -> list[str]:
    eta = prob.base.eta
    out = []
    if row["J_min"] < eta:
        out.append(f"t={row['t']:.6g}: J_min={row['J_min']:.6g} below eta={eta:.6g}")
    dv = abs(row["volume_exact"] - row["volume_radius"])
    if dv > volume_tol * row["volume_radius"]:
        out.append(f"t={row['t']:.6g}: volume identity defect {dv:.3e}")
    return out


def _theta_range(state: CoupledState) -> list[float]:
    both = np.concatenate([state.theta_f, state.theta_s])
    return [float(both.min()), float(both.max())]


@dataclass
class RunResult:
    rows: list
    states: list
    failures: list
    report: dict
    converged: bool = True


def run_staggered(cfg: RunConfig, prob: Problem | None = None, state: CoupledState | None = None,
                  keep_states: bool = False, until_step: int | None = None, callback=None) -> RunResult:
    """March from ``state`` (default: initial data) to ``T_final`` or ``until_step``."""
    prob = prob or Problem(cfg)
    state = state or initial_state(prob)
    n_end = cfg.n_steps if until_step is None else until_step
    D = prob.deformation({state.t: state.radius})
    rows = [diagnostics(prob, state, D)] if state.step == 0 else []
    failures = [] if not rows else check_invariants(prob, rows[0])
    states = [state] if keep_states else []
    sub_res = []
    # no discrete maximum principle holds, so the temperature range is monitored, not enforced
    theta_range = [] if not rows else [_theta_range(state)]
    while state.step < n_end:
        state, info = step_coupled(prob, state, cfg.dt)
        row = diagnostics(prob, state, info["deformation"])
        row["stokes_residual"] = info["stokes"].residual
        row["transport_residual"] = info["transport_residual"]
        rows.append(row)
        failures += check_invariants(prob, row)
        sub_res.append(state.subiter_residuals)
        theta_range.append(_theta_range(state))
        if keep_states:
            states.append(state)
        if callback is not None:
            callback(state, info, row)
    report = {"mode": "staggered", "n_steps": len(rows) - (1 if rows and rows[0]["t"] == 0.0 else 0),
              "subiter_residuals": sub_res, "J_min": [r["J_min"] for r in rows], "eta": prob.base.eta,
              "volume_defect": [abs(r["volume_exact"] - r["volume_radius"]) for r in rows],
              "theta_range": theta_range, "invariant_failures": failures}
    return RunResult(rows=rows, states=states, failures=failures, report=report)


def run_fixed_domain(cfg: RunConfig, prob: Problem | None = None) -> list[dict]:
    """Stokes plus transport on the undeformed reference domain, without chemistry.

    This is the reference solution for the frozen-geometry consistency check.
    """
    prob = prob or Problem(cfg)
    p = prob.params
    D = prob.base
    tf = np.full(prob.mesh.fluid.n_vertices, float(p.theta_f0))
    ts = np.full(prob.mesh.solid.n_vertices, float(p.theta_s0))
    sol = prob.stokes(0.0, D)
    out = [{"t": 0.0, "w": sol.w, "q": sol.q, "theta_f": tf, "theta_s": ts}]
    t = 0.0
    for _ in range(cfg.n_steps):
        t0, t = t, t + cfg.dt
        sol = prob.stokes(t, D)
        tf, ts, _ = prob.transport(t0, t, tf, ts, sol, D, D)
        out.append({"t": t, "w": sol.w, "q": sol.q, "theta_f": tf, "theta_s": ts})
    return out


# ---------------------------------------------------------------------------
# global Picard iteration
# ---------------------------------------------------------------------------

@dataclass
class PicardResult:
    theta_s: list
    residuals: list
    iterations: int
    converged: bool
    trajectory: list


def picard_map(prob: Problem, theta_s_guess: list, keep_trajectory: bool = False):
    """One application of the solution operator to a space-time tissue temperature."""
    cfg, p = prob.cfg, prob.params
    dt, n = cfg.dt, cfg.n_steps
    so = prob.mesh.solid
    # averaged history and chemistry over the whole interval
    T1 = [spatial_average(th, so) for th in theta_s_guess]
    hist = AveragedHistory(T1[0], p.gamma, p.kernel_spec.power)
    for k in range(n + 1):
        hist.append(k * dt, T1[k])
    T = [hist.convolve(k * dt) for k in range(n + 1)]
    chem = ChemistryState(p, prob.x_grid)
    samples = [chem.radius(T[0])]
    for k in range(1, n + 1):
        chem = chem.advance(dt, T[k - 1], T[k])
        samples.append(chem.radius(T[k]))
    # flow and temperature along the fixed geometry
    fl = prob.mesh.fluid
    tf = np.full(fl.n_vertices, float(p.theta_f0))
    ts = np.asarray(theta_s_guess[0], dtype=float).copy()
    out = [ts]
    traj = []
    for k in range(1, n + 1):
        t0, t1 = (k - 1) * dt, k * dt
        D = prob.deformation({t0: samples[k - 1], t1: samples[k]})
        sol = prob.stokes(t1, D)
        tf, ts, _ = prob.transport(t0, t1, tf, ts, sol, D, D)
        _check_finite(tf, ts)
        out.append(ts)
        if keep_trajectory:
            traj.append({"t": t1, "theta_f": tf, "theta_s": ts, "w": sol.w, "q": sol.q, "R": samples[k].R})
    return out, traj


def spacetime_l2(prob: Problem, a: list, b: list) -> float:
    """``||a - b||`` in ``L2(0, T; L2(Omega_s))`` with the trapezoidal rule in time."""
    dt = prob.cfg.dt
    sq = np.array([prob.solid_l2(x - y) ** 2 for x, y in zip(a, b)])
    w = np.full(len(sq), dt)
    w[0] = w[-1] = 0.5 * dt
    return float(np.sqrt(np.sum(w * sq)))


def constant_guess(prob: Problem, value: float | None = None) -> list:
    """Space-time guess equal to the initial datum at ``t = 0`` and ``value`` afterwards."""
    p = prob.params
    so = prob.mesh.solid
    init = np.full(so.n_vertices, float(p.theta_s0))
    later = init if value is None else np.full(so.n_vertices, float(value))
    return [init] + [later.copy() for _ in range(prob.cfg.n_steps)]


def global_picard(prob: Problem, guess: list | None = None, tol: float | None = None,
                  max_iter: int | None = None, keep_trajectory: bool = False) -> PicardResult:
    """Iterate ``theta_s <- F(theta_s)`` until successive iterates agree to ``tol``.

    Convergence is reported, not assumed; on failure the last iterate is
    returned with ``converged=False``.
    """
    tol = prob.cfg.solver.picard_tol if tol is None else tol
    max_iter = prob.cfg.solver.picard_max_iter if max_iter is None else max_iter
    cur = guess if guess is not None else constant_guess(prob)
    residuals = []
    traj = []
    for k in range(1, max_iter + 1):
        new, traj = picard_map(prob, cur, keep_trajectory)
        residuals.append(spacetime_l2(prob, new, cur))
        cur = new
        if residuals[-1] < tol:
            return PicardResult(cur, residuals, k, True, traj)
    return PicardResult(cur, residuals, max_iter, False, traj)


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------

def configure_determinism(deterministic: bool) -> None:
    if deterministic:
        os.environ.setdefault("MKL_CBWR", "COMPATIBLE")
        os.environ.setdefault("MKL_NUM_THREADS", "1")
        os.environ.setdefault("OMP_NUM_THREADS", "1")


def run(cfg: RunConfig, output_dir=None) -> tuple[int, dict]:
    """Execute a configured run and write CSV, VTK, checkpoints and a JSON report."""
    configure_determinism(cfg.deterministic)
    out = Path(output_dir or cfg.output.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "diagnostics.csv"
    if csv_path.exists():
        csv_path.unlink()
    t_start = time.perf_counter()
    prob = Problem(cfg)
    code = EXIT_OK
    report = {"config": config_to_dict(cfg)}

    if cfg.mode == "staggered":
        def on_step(state, info, row):
            append_csv(csv_path, row)
            if cfg.output.write_vtk and state.step % cfg.output.vtk_every == 0:
                write_snapshot(state, prob.mesh, prob.space, info["deformation"], prob.params, out / "vtk", state.step)
            if cfg.output.checkpoint_every and state.step % cfg.output.checkpoint_every == 0:
                save_checkpoint(out / f"checkpoint_{state.step:05d}.bin", checkpoint(state))

        state0 = initial_state(prob)
        D0 = prob.deformation({0.0: state0.radius})
        row0 = diagnostics(prob, state0, D0)
        append_csv(csv_path, row0)
        if cfg.output.write_vtk:
            write_snapshot(state0, prob.mesh, prob.space, D0, prob.params, out / "vtk", 0)
        res = run_staggered(cfg, prob, state0, callback=on_step)
        res.failures = check_invariants(prob, row0) + res.failures
        report.update(res.report)
        report["invariant_failures"] = res.failures
        if res.failures:
            code = EXIT_INVARIANT
    else:
        pic = global_picard(prob, keep_trajectory=True)
        report.update({"mode": "picard", "residuals": pic.residuals, "iterations": pic.iterations,
                       "converged": pic.converged})
        rows = []
        for rec in pic.trajectory:
            rows.append({"t": rec["t"], "theta_s_mean": spatial_average(rec["theta_s"], prob.mesh.solid),
                         "R_min": float(rec["R"].min()), "R_max": float(rec["R"].max())})
        report["trajectory"] = rows
        if not pic.converged:
            code = EXIT_NONCONVERGED
    report["elapsed_s"] = time.perf_counter() - t_start
    report["exit_code"] = code
    (out / "report.json").write_text(json.dumps(report, indent=2, default=_jsonable))
    return code, report


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _load_config(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config else RunConfig().validate()
    changes = {}
    if getattr(args, "resolution", None):
        from .geometry import Resolution
        na, nr, nang, no = (int(v) for v in args.resolution.split(","))
        changes["resolution"] = Resolution(n_axial=na, n_radial=nr, n_angular=nang, n_outer=no,
                                           core_fraction=cfg.resolution.core_fraction)
    if getattr(args, "dt", None):
        changes["dt"] = args.dt
    if getattr(args, "deterministic", False):
        changes["deterministic"] = True
    solver = {}
    for key in ("stokes_tol", "transport_tol", "picard_tol", "picard_max_iter", "n_subiter"):
        val = getattr(args, key, None)
        if val is not None:
            solver[key] = val
    if solver:
        from dataclasses import replace
        changes["solver"] = replace(cfg.solver, **solver)
    if getattr(args, "mode", None):
        changes["mode"] = args.mode
    return cfg.replace(**changes).validate() if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="skintherm", description="Coupled skin-thermoregulation simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="TOML configuration file")
        p.add_argument("-o", "--output", help="output directory (overrides the config)")
        p.add_argument("--resolution", help="n_axial,n_radial,n_angular,n_outer")
        p.add_argument("--dt", type=float, help="time step")
        p.add_argument("--deterministic", action="store_true", help="force reproducible solver kernels")
        p.add_argument("--stokes-tol", dest="stokes_tol", type=float)
        p.add_argument("--transport-tol", dest="transport_tol", type=float)
        p.add_argument("--picard-tol", dest="picard_tol", type=float)
        p.add_argument("--picard-max-iter", dest="picard_max_iter", type=int)
        p.add_argument("--n-subiter", dest="n_subiter", type=int)

    common(sub.add_parser("run", help="run the coupled simulation"))
    common(sub.add_parser("picard", help="run the global Picard iteration"))
    v = sub.add_parser("verify", help="parameter and coefficient checks")
    v.add_argument("-c", "--config", help="TOML configuration file")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--json", help="write the table to this file")
    m = sub.add_parser("mms", help="manufactured-solution convergence studies")
    m.add_argument("which", nargs="?", default="all", choices=["all", "stokes", "transport"])
    m.add_argument("--json", help="write the reports to this file")
    return ap


def _cmd_verify(args) -> int:
    """Print one tab-separated row per check: status, group, check, measured value."""
    from .params import validate
    from .verify import jacobian_fd_error, piola_sweep, points_in_band, transport_identity_defect
    from .deformation import AnalyticRadius, build_rho_table

    # parameters are checked here, not rejected at load time
    cfg = parse_config(args.config, validate=False) if args.config else RunConfig()
    p = cfg.params
    rows = [{"group": c.assumption, "check": c.name, "passed": bool(c.passed),
             "value": None if c.measured is None else float(c.measured)} for c in validate(p).checks]
    if all(r["passed"] for r in rows):
        table = build_rho_table(p)
        rng = np.random.default_rng(args.seed)
        D = Deformation.from_params(p, AnalyticRadius(p.R0, 0.1, L=p.L, tamp=0.5, omega=3.0))
        pts = points_in_band(rng, 100, p.R1 - 3 * p.delta, p.R2 + 3 * p.delta, p.L)
        sweep = piola_sweep(D, 0.3, pts)
        f_err = jacobian_fd_error(D, 0.3, pts)
        gcl = transport_identity_defect(D, 0.3, pts)
        rows += [
            {"group": "coef", "check": "min d_r rho on the table grid > 0", "passed": bool(table.rho_r.min() > 0),
             "value": float(table.rho_r.min())},
            {"group": "coef", "check": "F vs finite differences <= 1e-6", "passed": f_err <= 1e-6, "value": f_err},
            {"group": "coef", "check": f"Piola defect FD order {sweep.target} +- {sweep.tol}",
             "passed": bool(sweep.passed), "value": float(sweep.order)},
            {"group": "coef", "check": "d_t J - div(A v_b) <= 1e-6", "passed": gcl <= 1e-6, "value": gcl},
        ]
    print("status\tgroup\tcheck\tvalue")
    for r in rows:
        val = "" if r["value"] is None else f"{r['value']:.6g}"
        print(f"{'ok' if r['passed'] else 'FAIL'}\t{r['group']}\t{r['check']}\t{val}")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2))
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_INVARIANT


def _cmd_mms(args) -> int:
    from .deformation import AnalyticRadius
    from .params import ModelParams
    from .verify import energy_decay_study, energy_monotone, stokes_mms_study, transport_space_study, transport_time_study

    p = ModelParams()
    reports = []
    if args.which in ("all", "stokes"):
        for name, rad in (("static", ConstantRadius(p.R0)), ("deformed", AnalyticRadius(p.R0, 0.1, L=0.5))):
            D = Deformation.from_params(p.replace(L=0.5), rad)
            reports += list(stokes_mms_study(p, D, name=f"stokes {name}"))
    if args.which in ("all", "transport"):
        reports.append(transport_space_study(p, levels=(2, 4, 8), L=0.5))
        reports.append(transport_time_study(p))
    ok = True
    for r in reports:
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:28s} order {r.order:6.3f} (target {r.target} +- {r.tol})")
        ok &= r.passed
    if args.which in ("all", "transport"):
        e = energy_decay_study(p)
        mono = energy_monotone(e)
        print(f"{'ok  ' if mono else 'FAIL'} energy decay over {len(e) - 1} steps")
        ok &= mono
    if args.json:
        Path(args.json).write_text(json.dumps([r.as_dict() for r in reports], indent=2))
    return EXIT_OK if ok else EXIT_INVARIANT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "mms":
            return _cmd_mms(args)
        cfg = _load_config(args)
        if args.command == "picard":
            cfg = cfg.replace(mode="picard")
        code, report = run(cfg, args.output)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InvariantError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    if report.get("invariant_failures"):
        for f in report["invariant_failures"]:
            print(f"invariant failure: {f}", file=sys.stderr)
    if args.command == "picard" or cfg.mode == "picard":
        print(f"picard: {report['iterations']} iterations, converged={report['converged']}, "
              f"residuals={', '.join(f'{r:.3e}' for r in report['residuals'])}")
    else:
        print(f"run: {report['n_steps']} steps, output in {args.output or cfg.output.output_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
