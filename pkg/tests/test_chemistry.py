import numpy as np
import pytest
from scipy.integrate import solve_ivp

from skintherm.chemistry import (AveragedHistory, ChemistryState, HistoryGap, RadiusField, integrate_ode,
                                 spatial_average)
from skintherm.params import ModelParams, ProductionSpec


def _history(fn, gamma=0.2, T=1.0, n=200):
    h = AveragedHistory(fn(0.0), gamma)
    for t in np.linspace(0, T, n + 1):
        h.append(t, fn(t))
    return h


def test_constant_history_is_reproduced():
    h = _history(lambda t: 0.7)
    for t in (0.0, 0.05, 0.2, 0.63):
        assert abs(h.convolve(t) - 0.7) < 1e-14


def test_linear_history_lags_by_half_window():
    # symmetric kernel on (0, gamma): int K(u) (a + b (t - u)) du = a + b (t - gamma/2)
    h = _history(lambda t: 0.3 + 2.0 * t)
    h.plateau = 0.3
    for t in (0.25, 0.5, 0.9):
        assert abs(h.convolve(t) - (0.3 + 2.0 * (t - 0.1))) < 1e-13


def test_history_gap_raises():
    h = _history(lambda t: 1.0, T=0.5)
    with pytest.raises(HistoryGap):
        h.convolve(0.6)


def test_history_times_increase():
    h = AveragedHistory(0.0, 0.2)
    h.append(0.1, 1.0)
    with pytest.raises(ValueError):
        h.append(0.1, 1.0)


def test_decay_without_production():
    p = ModelParams(G_spec=ProductionSpec(g0=0.0), c0=0.8, k_deg=1.7)
    t = np.linspace(0, 1, 21)
    f = integrate_ode(_history(lambda s: 0.0), p, t, np.linspace(0, 1, 5))
    assert np.abs(f.c - 0.8 * np.exp(-1.7 * t)[:, None]).max() < 1e-14


def test_constant_production_closed_form():
    p = ModelParams(G_spec=ProductionSpec(g0=0.6, temperature_coupling=False), c0=0.1, k_deg=1.3)
    g = 0.3
    t = np.linspace(0, 1, 11)
    f = integrate_ode(_history(lambda s: 0.0), p, t, np.linspace(0, 1, 5))
    exact = g / 1.3 + (0.1 - g / 1.3) * np.exp(-1.3 * t)
    assert np.abs(f.c - exact[:, None]).max() < 1e-14


def test_time_varying_production_second_order():
    p = ModelParams(G_spec=ProductionSpec(g0=1.0, s=0.3, axial_amp=0.2))
    h = _history(lambda t: 0.5 + 0.4 * np.sin(6 * t), n=4000)
    x = np.linspace(0, 1, 5)
    ref = solve_ivp(lambda t, c: -p.k_deg * c + p.eval_G(x, h.convolve(t)), (0, 1), np.zeros(5),
                    rtol=1e-12, atol=1e-14, t_eval=[1.0]).y[:, -1]
    errs = []
    for n in (10, 20, 40):
        f = integrate_ode(h, p, np.linspace(0, 1, n + 1), x)
        errs.append(np.abs(f.c[-1] - ref).max())
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8), errs


def test_x_derivatives_follow_production():
    p = ModelParams(G_spec=ProductionSpec(g0=1.0, axial_amp=0.3))
    x = np.linspace(0, 1, 41)
    st = ChemistryState(p, x)
    for _ in range(5):
        st = st.advance(0.1, 0.4, 0.6)
    cx_fd = np.gradient(st.c, x, edge_order=2)
    assert np.abs(st.cx - cx_fd).max() < 5e-3 * np.abs(st.cx).max()


def test_radius_field_interpolates_samples():
    p = ModelParams(G_spec=ProductionSpec(g0=1.0, axial_amp=0.3))
    x = np.linspace(0, 1, 17)
    st = ChemistryState(p, x, c0=0.3)
    st = st.advance(0.1, 0.5, 0.5)
    sample = st.radius(0.5)
    rf = RadiusField(x, p.R1, p.R2)
    rf.set(0.1, sample)
    v = rf.evaluate(0.1, x)
    assert np.array_equal(v.R, sample.R) or np.abs(v.R - sample.R).max() < 1e-15
    assert np.abs(v.R_x - sample.R_x).max() < 1e-14
    with pytest.raises(KeyError):
        rf.evaluate(0.2, x)


def test_spatial_average_of_linear_field():
    from skintherm.geometry import Resolution, build_reference_mesh
    mesh = build_reference_mesh(ModelParams(), Resolution())
    so = mesh.solid
    # x1 is symmetric about 1/2 over the solid, so its mean is exactly 1/2
    assert abs(spatial_average(so.vertices[:, 0], so) - 0.5) < 1e-13


def test_plateau_at_time_zero():
    h = _history(lambda t: 0.4 + t)
    h.plateau = 0.25
    assert h.convolve(0.0) == 0.25


def test_time_derivative_matches_finite_differences():
    p = ModelParams(G_spec=ProductionSpec(g0=1.0, s=0.3, axial_amp=0.2), c0=0.2)
    h = _history(lambda t: 0.5 + 0.4 * np.sin(6 * t), T=0.4, n=400)
    dt = 1e-4
    t = np.arange(0, 0.3 + dt / 2, dt)
    f = integrate_ode(h, p, t, np.linspace(0, 1, 5))
    ct_fd = (f.c[2:] - f.c[:-2]) / (2 * dt)
    rel = np.abs(ct_fd - f.c_t[1:-1]).max() / np.abs(f.c_t).max()
    assert rel <= 1e-6, rel


def test_radius_chain_rule_matches_finite_differences():
    p = ModelParams(G_spec=ProductionSpec(g0=1.0, axial_amp=0.3))
    hx = 1e-4
    x0 = np.array([0.13, 0.41, 0.77])
    x = np.concatenate([x0 - hx, x0, x0 + hx])
    st = ChemistryState(p, x, c0=0.3)
    for _ in range(4):
        st = st.advance(0.1, 0.4, 0.6)
    R = p.eval_H(st.c)
    R_fd = (R[6:] - R[:3]) / (2 * hx)
    R_x = st.radius(0.6).R_x[3:6]
    assert np.abs(R_fd - R_x).max() <= 1e-6 * np.abs(R_x).max()


def test_radius_map_midpoint_and_saturation():
    p = ModelParams()
    c_star = p.H_spec.c_star
    assert abs(p.eval_H(c_star) - 0.5 * (p.R1 + p.R2)) < 1e-15
    assert abs(p.eval_H(1e6) - p.R2) < 1e-15
    # c held at c* with matching production gives R_t = 0
    x = np.linspace(0, 1, 5)
    st = ChemistryState(ModelParams(G_spec=ProductionSpec(g0=2 * c_star * p.k_deg, temperature_coupling=False)),
                        x, c0=c_star)
    sample = st.radius(0.0)
    assert np.abs(sample.R - 0.5 * (p.R1 + p.R2)).max() < 1e-15
    assert np.abs(sample.R_t).max() < 1e-15


def test_concentration_bounded_for_random_histories():
    rng = np.random.default_rng(11)
    p = ModelParams(G_spec=ProductionSpec(g0=1.5, s=0.4, axial_amp=0.3), c0=0.2)
    bound = abs(p.c0) + p.C_G / p.k_deg
    for _ in range(5):
        vals = rng.uniform(-3, 3, 101)
        h = _history(lambda t: float(np.interp(t, np.linspace(0, 2, 101), vals)), T=2.0, n=400)
        f = integrate_ode(h, p, np.linspace(0, 2, 81), np.linspace(0, 1, 9))
        assert np.abs(f.c).max() <= bound


def test_averaging_lipschitz_in_history():
    # |T(a) - T(b)|(t) <= ||K||_2 ||a - b||_{L2(t - gamma, t)} by Cauchy-Schwarz
    from scipy.integrate import quad

    rng = np.random.default_rng(5)
    grid = np.linspace(0, 1, 201)
    a_vals, b_vals = rng.normal(size=201), rng.normal(size=201)
    ha = _history(lambda t: float(np.interp(t, grid, a_vals)), n=200)
    hb = _history(lambda t: float(np.interp(t, grid, b_vals)), n=200)
    hb.plateau = ha.plateau
    K2 = np.sqrt(quad(lambda u: float(ha.kernel(u)) ** 2, 0, ha.gamma)[0])
    for t in (0.3, 0.55, 0.9):
        s = np.linspace(t - ha.gamma, t, 4001)
        diff2 = (ha.T1_at(s) - hb.T1_at(s)) ** 2
        l2 = np.sqrt(np.sum(0.5 * (diff2[1:] + diff2[:-1]) * np.diff(s)))
        assert abs(ha.convolve(t) - hb.convolve(t)) <= K2 * l2 * (1 + 1e-6)
