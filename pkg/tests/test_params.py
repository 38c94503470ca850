import numpy as np
import pytest
from scipy.integrate import quad

from skintherm.params import (InvalidParameters, KernelSpec, ModelParams, RadiusMapSpec, check_params,
                              param_names, validate)


def test_defaults_are_admissible():
    rep = validate(ModelParams())
    assert rep.ok, [c.name for c in rep.failures]


def test_outer_radius_limit_cites_assumption():
    with pytest.raises(InvalidParameters) as exc:
        check_params(ModelParams(R2=0.6))
    assert "R_2 < 1/2" in str(exc.value)
    assert "(A6)" in str(exc.value)


def test_kernel_width_must_be_below_final_time():
    rep = validate(ModelParams(kernel_spec=KernelSpec(gamma=2.0)))
    assert not rep.ok
    assert any(c.assumption == "(A7)" for c in rep.failures)


def test_radius_map_outside_band_rejected():
    rep = validate(ModelParams(H_spec=RadiusMapSpec(constant=0.4)))
    assert any(c.assumption == "(A3)" for c in rep.failures)


def test_conductivity_must_be_spd():
    rep = validate(ModelParams(Kf=np.diag([1.0, -1.0, 1.0])))
    assert any(c.assumption == "(A8)" for c in rep.failures)


def test_kernel_has_unit_mass():
    p = ModelParams()
    mass, _ = quad(lambda s: float(p.kernel(s)), 0.0, p.gamma, epsabs=1e-14)
    assert abs(mass - 1.0) < 1e-12


def test_G_derivatives_match_finite_differences():
    p = ModelParams().replace(G_spec=ModelParams().G_spec.__class__(axial_amp=0.3))
    x, y, h = np.array([0.2, 0.7]), np.array([0.1, 0.9]), 1e-5
    fd_x = (p.eval_G(x + h, y) - p.eval_G(x - h, y)) / (2 * h)
    fd_y = (p.eval_G(x, y + h) - p.eval_G(x, y - h)) / (2 * h)
    assert np.allclose(p.eval_G_x1(x, y, 1), fd_x, atol=1e-8)
    assert np.allclose(p.eval_G_y(x, y), fd_y, atol=1e-8)


def test_H_derivative_matches_finite_differences():
    p = ModelParams()
    y, h = np.linspace(-2, 3, 7), 1e-5
    assert np.allclose(p.eval_H_deriv(y, 1), (p.eval_H(y + h) - p.eval_H(y - h)) / (2 * h), atol=1e-9)


def test_param_names_cover_fields():
    names = param_names()
    for key in ("R0", "R1", "R2", "delta", "alpha", "Kf", "Ks", "kernel_spec"):
        assert key in names


def test_production_limits_and_midpoint():
    from skintherm.params import ProductionSpec
    g = ProductionSpec(g0=1.7, y_star=0.4, s=0.3)
    p = ModelParams(G_spec=g)
    x = np.array([0.3])
    assert abs(p.eval_G(x, 1e6)[0] - g.g0) < 1e-14
    assert abs(p.eval_G(x, g.y_star)[0] - 0.5 * g.g0) < 1e-14
    assert abs(p.eval_G(x, g.y_star + g.s)[0] - 0.5 * (1 + np.tanh(1.0)) * g.g0) < 1e-14


def test_radius_map_limits():
    p = ModelParams()
    assert abs(p.eval_H(-1e6) - p.R1) < 1e-15
    assert abs(p.eval_H(1e6) - p.R2) < 1e-15
    assert abs(p.eval_H(p.H_spec.c_star) - 0.5 * (p.R1 + p.R2)) < 1e-15


def test_H_derivative_relative_error_at_random_points(rng):
    p = ModelParams()
    y, h = rng.uniform(-1.5, 2.5, 10), 1e-5
    fd = (p.eval_H(y + h) - p.eval_H(y - h)) / (2 * h)
    assert np.all(np.abs(fd - p.eval_H_deriv(y)) <= 1e-6 * np.abs(p.eval_H_deriv(y)))


def test_geometry_examples():
    assert validate(ModelParams(R1=0.15, R2=0.35, delta=0.04)).ok
    rep = validate(ModelParams(R1=0.10, R2=0.45, R0=0.25, delta=0.04))
    assert any(c.assumption == "(A6)" and "R_2 + 3" in c.name for c in rep.failures), rep.failures
    rep = validate(ModelParams(Kf=np.diag([1.0, 1.0, -0.1])))
    assert any(c.assumption == "(A8)" for c in rep.failures)
