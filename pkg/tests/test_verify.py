import numpy as np
import pytest

from skintherm.verify import (StokesTarget, fd_divergence, fd_partial, fd_row_divergence, fit_order, make_report,
                              smooth_target, affine_target)


def test_fit_order_recovers_power_law():
    h = np.array([0.1, 0.05, 0.025])
    assert abs(fit_order(3.0 * h**2, h) - 2.0) < 1e-12


def test_fit_order_needs_three_points():
    with pytest.raises(ValueError):
        fit_order([1.0, 0.5], [0.1, 0.05])


def test_report_tolerance_band():
    h = [0.1, 0.05, 0.025]
    assert make_report("x", h, [h_**1.75 for h_ in h], 2.0, 0.3).passed
    assert not make_report("x", h, [h_**1.6 for h_ in h], 2.0, 0.3).passed


def test_fourth_order_differences_exact_for_quartics(rng):
    x = rng.uniform(-1, 1, (10, 3))
    f = lambda y: y[..., 0] ** 4 + y[..., 1] ** 3 * y[..., 2]
    d0 = fd_partial(f, x, 0, 0.1)
    assert np.allclose(d0, 4 * x[:, 0] ** 3, atol=1e-12)


def test_divergence_of_linear_fields(rng):
    x = rng.uniform(-1, 1, (5, 3))
    M = rng.normal(size=(3, 3))
    assert np.allclose(fd_divergence(lambda y: y @ M.T, x), np.trace(M), atol=1e-12)
    P = lambda y: np.einsum("nk,ik,l->nil", y, M, np.array([1.0, 0.0, 0.0]))
    # row i of P is (M y)_i e_1, so (div P)_i = M_i1
    assert np.allclose(fd_row_divergence(P, x), M[:, 0], atol=1e-12)


def test_target_gradients_are_analytic(rng):
    x = rng.uniform(-0.4, 0.4, (20, 3))
    h = 1e-6
    G = StokesTarget.grad_w(x)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (StokesTarget.w(x + e) - StokesTarget.w(x - e)) / (2 * h)
        assert np.allclose(G[:, :, j], fd, atol=1e-8)
    for tg in (smooth_target(), affine_target()):
        for th, gr in ((tg.theta_f, tg.grad_f), (tg.theta_s, tg.grad_s)):
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                assert np.allclose(gr(0.3, x)[:, j], (th(0.3, x + e) - th(0.3, x - e)) / (2 * h), atol=1e-8)
            dt = (th(0.3 + h, x) - th(0.3 - h, x)) / (2 * h)
            assert np.allclose(dt, (tg.dt_f if th is tg.theta_f else tg.dt_s)(0.3, x), atol=1e-8)


def test_solid_targets_vanish_on_dirichlet_face(rng):
    x = rng.uniform(-0.5, 0.5, (10, 3))
    x[:, 2] = 0.5
    for tg in (smooth_target(), affine_target()):
        assert np.abs(tg.theta_s(0.7, x)).max() < 1e-15


def test_fit_order_examples(rng):
    assert abs(fit_order([1, 0.25, 0.0625], [1, 0.5, 0.25]) - 2.0) < 1e-12
    assert abs(fit_order([1, 0.5, 0.25], [1, 0.5, 0.25]) - 1.0) < 1e-12
    h = np.array([0.2, 0.1, 0.05, 0.025])
    for _ in range(20):
        noisy = 0.7 * h**2 * np.exp(rng.normal(0, 0.05, h.size))
        assert 1.7 <= fit_order(noisy, h) <= 2.3


def test_piola_defect_exact_zero_off_band(rng):
    from skintherm.deformation import AnalyticRadius, ConstantRadius, Deformation
    from skintherm.params import ModelParams
    from skintherm.verify import piola_divergence, points_in_band
    p = ModelParams()
    x = rng.uniform(-0.45, 0.45, (20, 3))
    ident = Deformation.from_params(p, ConstantRadius(p.R0))
    assert np.abs(piola_divergence(ident, 0.2, x, 1e-3)).max() == 0.0
    moving = Deformation.from_params(p, AnalyticRadius(p.R0, 0.1, L=p.L))
    inner = points_in_band(rng, 20, 0.0, p.R1 - 3 * p.delta - 0.01, p.L)
    assert np.abs(piola_divergence(moving, 0.2, inner, 1e-3)).max() == 0.0
