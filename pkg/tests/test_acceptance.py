"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line, printed in the "acceptance criteria"
section of the pytest terminal summary, and asserts the same condition.
"""
import filecmp
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import record
from skintherm.chemistry import AveragedHistory, integrate_ode
from skintherm.deformation import AnalyticRadius, ConstantRadius, Deformation, build_rho_table, profile_from_params
from skintherm.driver import (Problem, constant_guess, global_picard, run, run_fixed_domain, run_staggered,
                              spacetime_l2)
from skintherm.io import RunConfig
from skintherm.params import KernelSpec, ModelParams, ProductionSpec, RadiusMapSpec, StressSpec, validate
from skintherm.verify import (energy_decay_study, energy_monotone, fd_partial, fit_order, piola_divergence,
                              stokes_mms_study, transport_space_study, transport_time_study)


# ---------------------------------------------------------------------------
# 1. assumption suite
# ---------------------------------------------------------------------------

def _random_valid(rng) -> ModelParams:
    d = rng.uniform(0.01, 0.04)
    R1 = rng.uniform(3 * d + 0.01, 0.2)
    R2 = rng.uniform(R1 + 0.05, 0.5 - 3 * d - 0.01)
    R0 = rng.uniform(R1, R2)
    T = rng.uniform(0.5, 2.0)
    Q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    K = Q @ np.diag(rng.uniform(0.01, 0.1, 3)) @ Q.T
    return ModelParams(R1=R1, R2=R2, R0=R0, delta=d, L=rng.uniform(0.5, 2), T_final=T, mu=rng.uniform(0.5, 2),
                       k_deg=rng.uniform(0.1, 3), alpha=rng.uniform(0.1, 5), Kf=K, Ks=0.5 * (K + K.T),
                       kernel_spec=KernelSpec(gamma=rng.uniform(0.05, 0.9) * T),
                       G_spec=ProductionSpec(g0=rng.uniform(0, 2), s=rng.uniform(0.2, 2)),
                       H_spec=RadiusMapSpec(c_star=rng.uniform(0, 1), w=rng.uniform(0.2, 2)),
                       fb_spec=StressSpec(P_in=rng.uniform(0, 30)), fin=rng.uniform(0, 2))


# mutation -> assumption it violates (the label is known by construction)
_MUTATIONS = {
    "outer radius": (lambda p, r: p.replace(R2=0.5 - 3 * p.delta + r.uniform(0.001, 0.1)), "(A6)"),
    "inner radius": (lambda p, r: p.replace(delta=p.R1 / 3 + r.uniform(0.001, 0.01)), "(A6)"),
    "R0 above R2": (lambda p, r: p.replace(R0=p.R2 + r.uniform(0.001, 0.05)), "(A6)"),
    "kernel too wide": (lambda p, r: p.replace(kernel_spec=KernelSpec(gamma=p.T_final * r.uniform(1.0, 2.0))), "(A7)"),
    "indefinite Kf": (lambda p, r: p.replace(Kf=np.diag([0.02, -r.uniform(0.01, 1), 0.02])), "(A8)"),
    "nonsymmetric Ks": (lambda p, r: p.replace(Ks=np.array([[0.02, 0.01, 0], [0, 0.02, 0], [0, 0, 0.02]])), "(A8)"),
    "negative viscosity": (lambda p, r: p.replace(mu=-r.uniform(0.1, 1)), "(A8)"),
    "zero transfer": (lambda p, r: p.replace(alpha=0.0), "(A8)"),
    "radius outside band": (lambda p, r: p.replace(H_spec=RadiusMapSpec(constant=p.R2 + r.uniform(0.001, 0.05))), "(A3)"),
    "nonfinite production": (lambda p, r: p.replace(G_spec=ProductionSpec(g0=float("inf"))), "(A2)"),
    "nonfinite initial data": (lambda p, r: p.replace(c0=float("nan")), "(A4)"),
    "nonfinite inflow": (lambda p, r: p.replace(fin=float("inf")), "(A5)"),
}


def test_criterion_1_assumption_suite():
    rng = np.random.default_rng(2024)
    cases = []
    names = sorted(_MUTATIONS)
    for i in range(50):
        p = _random_valid(rng)
        if i % 2:
            name = names[int(rng.integers(len(names)))]
            fn, assumption = _MUTATIONS[name]
            cases.append((fn(p, rng), False, assumption, name))
        else:
            cases.append((p, True, None, "valid"))
    t0 = time.perf_counter()
    reports = [validate(p) for p, *_ in cases]
    elapsed = time.perf_counter() - t0
    wrong = []
    for rep, (_, valid, assumption, name) in zip(reports, cases):
        if rep.ok != valid or (not valid and assumption not in {c.assumption for c in rep.failures}):
            wrong.append(name)
    ok = not wrong and elapsed < 1.0
    record(1, "parameter validation", ok, f"{50 - len(wrong)}/50 classified correctly in {elapsed:.3f} s")
    assert ok, (wrong, elapsed)


# ---------------------------------------------------------------------------
# 2. radial profile suite
# ---------------------------------------------------------------------------

def test_criterion_2_rho_kernel():
    p = ModelParams()
    t0 = time.perf_counter()
    tab = build_rho_table(p, n_R=50, n_r=200)
    prof = profile_from_params(p)
    fix = float(np.abs(prof.rho(tab.R, p.R0) - tab.R).max())
    RR, rr = np.meshgrid(tab.R, tab.r, indexing="ij")
    outside = (rr <= p.R1 - 3 * p.delta) | (rr >= p.R2 + 3 * p.delta)
    ident = float(np.abs(tab.rho - rr)[outside].max())
    min_dr = float(tab.rho_r.min())
    # full grid against piecewise Gauss convolution, random subset against adaptive quadrature
    quad_err = float(np.abs(prof.rho_gauss(RR, rr) - tab.rho).max())
    pick = np.random.default_rng(3).choice(RR.size, 200, replace=False)
    quad_err = max(quad_err, max(abs(prof.rho_quadrature(RR.flat[i], rr.flat[i]) - tab.rho.flat[i]) for i in pick))
    elapsed = time.perf_counter() - t0
    ok = fix <= 1e-8 and ident <= 1e-10 and min_dr > 0 and quad_err <= 1e-8 and elapsed < 30
    record(2, "rho kernel", ok, f"|rho(R,R0)-R|={fix:.1e}, identity defect {ident:.1e}, min d_r rho={min_dr:.4f}, "
                                f"oracle {quad_err:.1e}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. coefficient suite
# ---------------------------------------------------------------------------

def test_criterion_3_coefficients():
    p = ModelParams()
    rng = np.random.default_rng(7)
    D = Deformation.from_params(p, AnalyticRadius(p.R0, 0.1, L=p.L, tamp=0.5, omega=2 * np.pi))
    t0 = time.perf_counter()
    n = 100
    ts = rng.uniform(0, p.T_final, n)
    inner, outer = p.R1 - 2 * p.delta, p.R2 + 2 * p.delta
    r = np.concatenate([rng.uniform(inner + 0.005, outer - 0.005, n // 2), rng.uniform(0.0, inner - 0.03, n // 4),
                        rng.uniform(outer + 0.03, 0.5, n // 4)])
    th = rng.uniform(0, 2 * np.pi, n)
    x = np.column_stack([rng.uniform(0.05, 0.95, n), r * np.cos(th), r * np.sin(th)])
    x[:, 1:] = np.clip(x[:, 1:], -0.49, 0.49)
    steps = (5e-4, 2.5e-4, 1.25e-4, 6.25e-5)
    F_err, J_min, div_by_step = 0.0, np.inf, np.zeros(len(steps))
    for t, xi in zip(ts, x):
        xi = xi[None, :]
        d = D.eval(t, xi)
        F_fd = np.stack([fd_partial(lambda y: D.eval_S(t, y), xi, j, 2.5e-4) for j in range(3)], axis=-1)
        F_err = max(F_err, float(np.abs(F_fd - d.F).max() / np.abs(d.F).max()))
        J_min = min(J_min, float(d.J.min()))
        for k, h in enumerate(steps):
            div_by_step[k] = max(div_by_step[k], float(np.abs(piola_divergence(D, t, xi, h)).max()))
    order = fit_order(div_by_step, steps)
    eta = D.eta
    # closed-form vs generic interface factor on the wall
    x1 = rng.uniform(0, p.L, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    wall = np.column_stack([x1, p.R0 * np.cos(phi), p.R0 * np.sin(phi)])
    fac_err = max(abs(float(D.interface_factor(t, np.array([a]))[0] - D.interface_factor_generic(t, w[None])[0]))
                  for t, a, w in zip(ts, x1, wall))
    elapsed = time.perf_counter() - t0
    ok = F_err <= 1e-6 and abs(order - 4) <= 0.5 and J_min >= eta and fac_err <= 1e-8 and elapsed < 60
    record(3, "coefficients", ok, f"F vs FD {F_err:.1e}, Piola FD order {order:.2f}, J_min={J_min:.4f} >= "
                                  f"eta={eta:.4f}, interface factor {fac_err:.1e}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 4. ODE suite
# ---------------------------------------------------------------------------

def _history(values, times, gamma=0.2):
    h = AveragedHistory(values[0], gamma)
    for t, v in zip(times, values):
        h.append(t, v)
    return h


def test_criterion_4_ode():
    t0 = time.perf_counter()
    x = np.linspace(0, 1, 33)
    t_grid = np.linspace(0, 2, 81)
    zero = _history(np.zeros(81), t_grid)
    p0 = ModelParams(G_spec=ProductionSpec(g0=0.0), c0=0.9, k_deg=1.3)
    decay = float(np.abs(integrate_ode(zero, p0, t_grid, x).c - 0.9 * np.exp(-1.3 * t_grid)[:, None]).max())

    pg = ModelParams(G_spec=ProductionSpec(g0=0.8, temperature_coupling=False), k_deg=1.3)
    g_over_k = 0.4 / 1.3
    long_t = np.linspace(0, 40, 401)
    steady = float(np.abs(integrate_ode(_history(np.zeros(401), long_t), pg, long_t, x).c[-1] - g_over_k).max())
    steady_start = float(np.abs(integrate_ode(zero, pg.replace(c0=g_over_k), t_grid, x).c - g_over_k).max())

    p = ModelParams(G_spec=ProductionSpec(g0=1.0, s=0.3, axial_amp=0.3))
    base = 0.5 + 0.3 * np.sin(3 * t_grid)
    cut = 40
    pert = base.copy()
    pert[cut + 1:] += 0.7 * np.cos(5 * t_grid[cut + 1:])
    ca = integrate_ode(_history(base, t_grid), p, t_grid, x)
    cb = integrate_ode(_history(pert, t_grid), p, t_grid, x)
    causal = np.array_equal(ca.c[:cut + 1], cb.c[:cut + 1]) and np.array_equal(ca.T[:cut + 1], cb.T[:cut + 1])
    changed = not np.array_equal(ca.c[cut + 2:], cb.c[cut + 2:])
    elapsed = time.perf_counter() - t0
    ok = decay <= 1e-12 and steady <= 1e-10 and steady_start <= 1e-10 and causal and changed and elapsed < 10
    record(4, "concentration ODE", ok, f"decay error {decay:.1e}, steady state error {max(steady, steady_start):.1e}, "
                                       f"causality {'bit-exact' if causal else 'VIOLATED'}, {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 5. Stokes manufactured solutions
# ---------------------------------------------------------------------------

def test_criterion_5_stokes_mms():
    p = ModelParams()
    t0 = time.perf_counter()
    reports = []
    for name, rad in (("static", ConstantRadius(p.R0)), ("deformed", AnalyticRadius(p.R0, 0.1, L=0.5))):
        D = Deformation.from_params(p.replace(L=0.5), rad)
        reports += stokes_mms_study(p, D, levels=(4, 6, 8), name=name)
    elapsed = time.perf_counter() - t0
    res = max(max(r.extra["residuals"]) for r in reports)
    ok = all(r.passed for r in reports) and res <= 1e-10 and elapsed < 300
    record(5, "Stokes MMS", ok, ", ".join(f"{r.name} {r.order:.2f}" for r in reports)
           + f", max residual {res:.1e}, {elapsed:.0f} s")
    assert ok, [r.as_dict() for r in reports]


# ---------------------------------------------------------------------------
# 6. transport manufactured solutions and energy decay
# ---------------------------------------------------------------------------

def test_criterion_6_transport_mms():
    p = ModelParams()
    t0 = time.perf_counter()
    space = transport_space_study(p, levels=(2, 4, 8), L=0.5)
    tim = transport_time_study(p)
    energies = energy_decay_study(p, n_steps=100)
    mono = energy_monotone(energies, 1e-12)
    elapsed = time.perf_counter() - t0
    ok = space.passed and tim.passed and mono and elapsed < 300
    record(6, "transport MMS", ok, f"space order {space.order:.2f}, time order {tim.order:.2f}, energy "
                                   f"{'monotone' if mono else 'NOT monotone'} over 100 steps, {elapsed:.0f} s")
    assert ok, (space.as_dict(), tim.as_dict())


# ---------------------------------------------------------------------------
# 7. coupled consistency
# ---------------------------------------------------------------------------

def test_criterion_7_coupled_consistency():
    t0 = time.perf_counter()
    base = RunConfig().validate()
    frozen = base.replace(params=base.params.replace(H_spec=RadiusMapSpec(constant=base.params.R0))).validate()
    prob = Problem(frozen)
    coupled = run_staggered(frozen, prob, keep_states=True)
    fixed = run_fixed_domain(frozen, prob)
    diff = max(float(np.abs(f[k] - getattr(s, k)).max())
               for f, s in zip(fixed, coupled.states) for k in ("w", "q", "theta_f", "theta_s"))
    moving = run_staggered(base)
    vol = max(d / r["volume_radius"] for d, r in zip(moving.report["volume_defect"], moving.rows))
    elapsed = time.perf_counter() - t0
    ok = diff <= 1e-8 and vol <= 1e-8 and not moving.failures and elapsed < 300
    record(7, "coupled consistency", ok, f"frozen-radius vs fixed-domain {diff:.1e}, volume identity "
                                         f"{vol:.1e} (max over {len(moving.rows)} steps), {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------------------
# 8. Picard uniqueness
# ---------------------------------------------------------------------------

def test_criterion_8_picard():
    t0 = time.perf_counter()
    cfg = RunConfig().validate()
    prob = Problem(cfg)
    a = global_picard(prob, constant_guess(prob, 0.0), tol=1e-6)
    b = global_picard(prob, constant_guess(prob, 1.0), tol=1e-6)
    gap = spacetime_l2(prob, a.theta_s, b.theta_s)
    dec = cfg.replace(params=cfg.params.replace(G_spec=ProductionSpec(temperature_coupling=False))).validate()
    c = global_picard(Problem(dec), tol=1e-6)
    elapsed = time.perf_counter() - t0
    ok = a.converged and b.converged and gap <= 1e-5 and c.converged and c.iterations == 2 and elapsed < 900
    record(8, "Picard fixed point", ok, f"iterations {a.iterations}/{b.iterations}, trajectories differ by {gap:.1e}, "
                                        f"decoupled case {c.iterations} iterations, {elapsed:.0f} s")
    assert ok, (a.residuals, b.residuals, c.residuals)


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    cfg = RunConfig().validate()
    cfg = cfg.replace(params=cfg.params.replace(T_final=0.5), deterministic=True).validate()
    run(cfg, tmp_path / "a")
    run(cfg, tmp_path / "b")
    same = filecmp.cmp(tmp_path / "a" / "diagnostics.csv", tmp_path / "b" / "diagnostics.csv", shallow=False)
    record(9, "determinism", same, "CSV outputs " + ("bit-identical" if same else "DIFFER"))
    assert same
