"""Verification harness: finite-difference oracles, manufactured solutions, order fits.

Manufactured sources are obtained by applying the strong transformed operators
to analytic target fields, with the outer divergence taken by fourth-order
central differences. The targets' own gradients are analytic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .deformation import AnalyticRadius, ConstantRadius, Deformation, DeformationError, build_rho_table
from .fem import map_points, p1_basis, physical_grads, tet_rule
from .geometry import Resolution, build_reference_mesh, p2_space
from .stokes import assemble_stokes, solve_stokes, velocity_at
from .transport import TransportSources, advance, assemble_step

FD_STEP = 1e-3


# ---------------------------------------------------------------------------
# finite differences and order fits
# ---------------------------------------------------------------------------

def fd_partial(fn, x, k: int, h: float):
    """Fourth-order central difference of ``fn`` along coordinate ``k``."""
    e = np.zeros(x.shape[-1])
    e[k] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def fd_divergence(flux, x, h: float = FD_STEP):
    """``sum_k d flux_k / d x_k`` for a vector field ``flux(x) -> (n, 3)``."""
    return sum(fd_partial(lambda y, k=k: flux(y)[..., k], x, k, h) for k in range(3))


def fd_row_divergence(P, x, h: float = FD_STEP):
    """``(div P)_i = sum_l d P_il / d x_l`` for a matrix field ``P(x) -> (n, 3, 3)``."""
    return sum(fd_partial(lambda y, l=l: P(y)[..., :, l], x, l, h) for l in range(3))


@dataclass
class ConvergenceReport:
    name: str
    scales: list
    errors: list
    order: float
    target: float
    tol: float
    fit_residual: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(abs(self.order - self.target) <= self.tol)

    def as_dict(self) -> dict:
        return {"name": self.name, "scales": list(map(float, self.scales)), "errors": list(map(float, self.errors)),
                "order": self.order, "target": self.target, "tol": self.tol, "passed": self.passed,
                "fit_residual": self.fit_residual, **self.extra}


def fit_order(errors, scales) -> float:
    """Least-squares slope of ``log(error)`` against ``log(scale)``."""
    return _fit(errors, scales)[0]


def _fit(errors, scales):
    e = np.asarray(errors, dtype=float)
    s = np.asarray(scales, dtype=float)
    if len(e) < 3:
        raise ValueError("an order fit needs at least three points")
    if np.any(e <= 0) or np.any(s <= 0):
        raise ValueError("errors and scales must be positive")
    X = np.column_stack([np.log(s), np.ones_like(s)])
    coef, res, *_ = np.linalg.lstsq(X, np.log(e), rcond=None)
    resid = float(np.sqrt(res[0] / len(e))) if res.size else 0.0
    return float(coef[0]), resid


def make_report(name, scales, errors, target, tol, **extra) -> ConvergenceReport:
    order, resid = _fit(errors, scales)
    return ConvergenceReport(name, list(scales), list(errors), order, target, tol, resid, extra)


# ---------------------------------------------------------------------------
# coefficient checks
# ---------------------------------------------------------------------------

def random_points(rng, n, L=1.0):
    x = rng.uniform(-0.5, 0.5, (n, 3))
    x[:, 0] = rng.uniform(0.05 * L, 0.95 * L, n)
    return x


def points_in_band(rng, n, lo, hi, L=1.0):
    """Random points with ``lo < |xbar| < hi``."""
    r = rng.uniform(lo, hi, n)
    th = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([rng.uniform(0.05 * L, 0.95 * L, n), r * np.cos(th), r * np.sin(th)])


def piola_divergence(deformation: Deformation, t: float, x: np.ndarray, h: float) -> np.ndarray:
    """FD divergence of the columns of ``A``: ``sum_l d A_lk / d x_l``; shape ``(n, 3)``."""
    def AT(y):
        return np.swapaxes(deformation.eval(t, y, check=False).A, -1, -2)
    return fd_row_divergence(AT, x, h)


def piola_sweep(deformation: Deformation, t: float, points: np.ndarray,
                steps=(5e-4, 2.5e-4, 1.25e-4, 6.25e-5)) -> ConvergenceReport:
    """Decay of the FD Piola defect ``max |div A|`` as the FD step shrinks (order 4 expected)."""
    errs = [float(np.abs(piola_divergence(deformation, t, points, h)).max()) for h in steps]
    return make_report("piola |div A|", steps, errs, 4.0, 0.5)


def transport_identity_defect(deformation: Deformation, t: float, points: np.ndarray,
                              h: float = 2.5e-4, ht: float = 1e-4) -> float:
    """``max |div(A v_b) - d_t J|`` with both sides from finite differences."""
    def Avb(y):
        d = deformation.eval(t, y, check=False)
        return np.einsum("nij,nj->ni", d.A, d.vb)
    lhs = fd_divergence(Avb, points, h)
    rhs = (-deformation.eval(t + 2 * ht, points, check=False).J + 8 * deformation.eval(t + ht, points, check=False).J
           - 8 * deformation.eval(t - ht, points, check=False).J + deformation.eval(t - 2 * ht, points, check=False).J) / (12 * ht)
    return float(np.abs(lhs - rhs).max())


def jacobian_fd_error(deformation: Deformation, t: float, points: np.ndarray, h: float = 2.5e-4) -> float:
    """Max relative difference between analytic ``F`` and fourth-order differences of ``S``."""
    F = deformation.eval(t, points).F
    Ffd = np.stack([fd_partial(lambda y: deformation.eval_S(t, y), points, j, h) for j in range(3)], axis=-1)
    return float(np.abs(F - Ffd).max() / np.abs(F).max())


# ---------------------------------------------------------------------------
# Stokes manufactured solution
# ---------------------------------------------------------------------------

class StokesTarget:
    """Smooth target ``(w*, q*)``; nonzero on the wall, so the wall data is imposed."""

    @staticmethod
    def w(x):
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        return np.stack([
            (1 + 0.5 * np.sin(np.pi * x1)) * np.cos(2 * x2) * np.cos(2 * x3),
            0.3 * np.cos(np.pi * x1) * np.sin(3 * x2) * x3,
            0.2 * np.sin(2 * x1) * (x2**2 - x3),
        ], axis=-1)

    @staticmethod
    def grad_w(x):
        """``D w*``, ``[i, j] = d w_i / d x_j``."""
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        s, c = np.sin(np.pi * x1), np.cos(np.pi * x1)
        D = np.empty(x.shape[:-1] + (3, 3))
        a = 1 + 0.5 * s
        D[..., 0, 0] = 0.5 * np.pi * c * np.cos(2 * x2) * np.cos(2 * x3)
        D[..., 0, 1] = -2 * a * np.sin(2 * x2) * np.cos(2 * x3)
        D[..., 0, 2] = -2 * a * np.cos(2 * x2) * np.sin(2 * x3)
        D[..., 1, 0] = -0.3 * np.pi * s * np.sin(3 * x2) * x3
        D[..., 1, 1] = 0.9 * c * np.cos(3 * x2) * x3
        D[..., 1, 2] = 0.3 * c * np.sin(3 * x2)
        D[..., 2, 0] = 0.4 * np.cos(2 * x1) * (x2**2 - x3)
        D[..., 2, 1] = 0.4 * np.sin(2 * x1) * x2
        D[..., 2, 2] = -0.2 * np.sin(2 * x1)
        return D

    @staticmethod
    def q(x):
        return np.cos(np.pi * x[..., 0]) + 0.5 * x[..., 1] * x[..., 2]


def stokes_mms_data(deformation: Deformation, t: float, mu: float, target=StokesTarget, h: float = FD_STEP):
    """Body force, end traction, mass source and wall data reproducing ``target``."""
    def P(y):
        d = deformation.eval(t, y, check=False)
        E = target.grad_w(y) @ d.Finv
        sig = mu * (E + np.swapaxes(E, -1, -2)) - target.q(y)[..., None, None] * np.eye(3)
        return sig @ np.swapaxes(d.A, -1, -2)

    def body(y):
        return -fd_row_divergence(P, y, h)

    def traction(y, n):
        return np.einsum("nij,nj->ni", P(y), n)

    def div_source(y):
        d = deformation.eval(t, y, check=False)
        return -np.einsum("nij,nji->n", target.grad_w(y), d.A)

    return body, traction, div_source, target.w


def stokes_errors(sol, target=StokesTarget, quad_degree: int = 5):
    """H1-seminorm velocity error and L2 pressure error."""
    fluid = sol.space.mesh
    qp, qw = tet_rule(quad_degree)
    N1, _ = p1_basis(qp)
    _, det, _ = fluid.geometry()
    X = map_points(fluid.vertices, fluid.cells, qp)
    idx = np.arange(len(fluid.cells))
    _, Dw = velocity_at(sol.space, sol.w, idx, qp, grad=True)
    wd = qw[None, :] * np.abs(det)[:, None]
    eh1 = np.sqrt(np.sum(wd * np.sum((Dw - target.grad_w(X)) ** 2, axis=(-1, -2))))
    qh = np.einsum("qa,ca->cq", N1, sol.q[fluid.cells])
    el2 = np.sqrt(np.sum(wd * (qh - target.q(X)) ** 2))
    return float(eh1), float(el2)


def mms_resolution(m: int, L: float = 0.5) -> Resolution:
    """Uniformly refined family: ``m`` cells per core-square side."""
    return Resolution(n_axial=max(2, int(round(2 * m * L))), n_radial=max(1, m // 2), n_angular=4 * m, n_outer=1)


def stokes_mms_study(params, deformation: Deformation, levels=(4, 6, 8), t: float = 0.0, L: float = 0.5,
                     name: str = "stokes"):
    """Run the Stokes MMS on a refinement family; returns velocity and pressure reports."""
    p = params.replace(L=L)
    hs, ev, ep, res = [], [], [], []
    for m in levels:
        mesh = build_reference_mesh(p, mms_resolution(m, L))
        body, traction, div_source, wall = stokes_mms_data(deformation, t, p.mu)
        sys_ = assemble_stokes(t, mesh.fluid, deformation, p, body=body, traction=traction,
                               div_source=div_source, dirichlet=wall, include_fb=False, include_vb=False)
        sol = solve_stokes(sys_)
        e1, e2 = stokes_errors(sol)
        hs.append(1.0 / m)
        ev.append(e1)
        ep.append(e2)
        res.append(sol.residual)
    vel = make_report(f"{name} velocity H1", hs, ev, 2.0, 0.3, residuals=res)
    pre = make_report(f"{name} pressure L2", hs, ep, 2.0, 0.3, residuals=res)
    return vel, pre


# ---------------------------------------------------------------------------
# transport manufactured solutions
# ---------------------------------------------------------------------------

@dataclass
class TransportTarget:
    """Targets ``theta_f*(t, x)``, ``theta_s*(t, x)`` with analytic gradients and time derivatives.

    Each callable takes ``(t, x)``; ``theta_s*`` must vanish on ``x3 = 1/2``.
    """

    theta_f: object
    grad_f: object
    dt_f: object
    theta_s: object
    grad_s: object
    dt_s: object
    velocity: object


def smooth_target(tau=lambda t: 1 + t, dtau=lambda t: np.ones_like(np.asarray(t, dtype=float)), R0=0.25):
    """Non-polynomial spatial profiles scaled by ``tau(t)`` (for space-order studies)."""
    def F(x):
        return np.cos(np.pi * x[..., 0]) + x[..., 1] ** 2 + 0.5 * np.sin(2 * x[..., 2])

    def gF(x):
        return np.stack([-np.pi * np.sin(np.pi * x[..., 0]), 2 * x[..., 1], np.cos(2 * x[..., 2])], axis=-1)

    def S(x):
        return (0.5 - x[..., 2]) * (1 + 0.5 * np.sin(np.pi * x[..., 0]) * np.cos(2 * x[..., 1]))

    def gS(x):
        b = 1 + 0.5 * np.sin(np.pi * x[..., 0]) * np.cos(2 * x[..., 1])
        a = 0.5 - x[..., 2]
        return np.stack([a * 0.5 * np.pi * np.cos(np.pi * x[..., 0]) * np.cos(2 * x[..., 1]),
                         -a * np.sin(np.pi * x[..., 0]) * np.sin(2 * x[..., 1]), -b], axis=-1)

    return TransportTarget(
        theta_f=lambda t, x: tau(t) * F(x), grad_f=lambda t, x: tau(t) * gF(x), dt_f=lambda t, x: dtau(t) * F(x),
        theta_s=lambda t, x: tau(t) * S(x), grad_s=lambda t, x: tau(t) * gS(x), dt_s=lambda t, x: dtau(t) * S(x),
        velocity=lambda t, x: swirl_velocity(x, R0))


def affine_target(R0=0.25):
    """Affine-in-space targets with nonlinear time dependence (exact in P1; time-order studies)."""
    cf = np.array([0.5, -0.3, 0.2])
    a = lambda t: 1 + np.sin(2 * t)
    da = lambda t: 2 * np.cos(2 * t)
    b = lambda t: np.cos(3 * t)
    db = lambda t: -3 * np.sin(3 * t)
    ones = lambda x: np.ones(x.shape[:-1])
    return TransportTarget(
        theta_f=lambda t, x: a(t) * (1 + x @ cf), grad_f=lambda t, x: a(t) * cf * ones(x)[..., None],
        dt_f=lambda t, x: da(t) * (1 + x @ cf),
        theta_s=lambda t, x: b(t) * (0.5 - x[..., 2]),
        grad_s=lambda t, x: b(t) * np.array([0.0, 0.0, -1.0]) * ones(x)[..., None],
        dt_s=lambda t, x: db(t) * (0.5 - x[..., 2]),
        velocity=lambda t, x: swirl_velocity(x, R0))


def swirl_velocity(x, R0=0.25):
    """Smooth axial flow with a weak swirl; used as prescribed convection in the transport checks."""
    r2 = (x[..., 1] ** 2 + x[..., 2] ** 2) / R0**2
    return np.stack([0.6 * (1 - r2) * (1 + 0.2 * np.sin(np.pi * x[..., 0])), 0.1 * x[..., 2], -0.1 * x[..., 1]], axis=-1)


def transport_mms_sources(target: TransportTarget, deformation: Deformation, params, t: float,
                          h: float = FD_STEP) -> TransportSources:
    Kf, Ks, alpha, fin = params.Kf, params.Ks, params.alpha, params.fin

    def flux_f(y):
        d = deformation.eval(t, y, K=Kf, check=False)
        return (np.einsum("nij,nj->ni", d.KF, target.grad_f(t, y))
                - target.theta_f(t, y)[:, None] * np.einsum("nij,nj->ni", d.A, target.velocity(t, y)))

    def flux_s(y):
        d = deformation.eval(t, y, K=Ks, check=False)
        return np.einsum("nij,nj->ni", d.KF, target.grad_s(t, y))

    def vol(theta, dtheta, flux):
        def fn(y):
            d = deformation.eval(t, y, check=False)
            return d.dJdt * theta(t, y) + d.J * dtheta(t, y) - fd_divergence(flux, y, h)
        return fn

    def jump_term(y):
        return alpha * (target.theta_f(t, y) - target.theta_s(t, y)) * deformation.interface_factor(t, y[:, 0])

    def gamma_f(y, n):
        J = deformation.eval(t, y, check=False).J
        wn = np.einsum("ni,ni->n", target.velocity(t, y), n)
        return (np.einsum("ni,ni->n", flux_f(y), n) + target.theta_f(t, y) * np.maximum(wn, 0) * J
                + fin * np.minimum(wn, 0) * J)

    return TransportSources(
        fluid=vol(target.theta_f, target.dt_f, flux_f),
        solid=vol(target.theta_s, target.dt_s, flux_s),
        gamma_f=gamma_f,
        sigma_f=lambda y, n: np.einsum("ni,ni->n", flux_f(y), n) + jump_term(y),
        sigma_s=lambda y, n: np.einsum("ni,ni->n", flux_s(y), n) - jump_term(y),
        gamma_n=lambda y, n: np.einsum("ni,ni->n", flux_s(y), n),
        dirichlet=lambda y: target.theta_s(t, y),
    )


def transport_l2_error(mesh, theta_f, theta_s, target: TransportTarget, t: float, quad_degree: int = 5) -> float:
    qp, qw = tet_rule(quad_degree)
    N, _ = p1_basis(qp)
    total = 0.0
    for sub, th, ex in ((mesh.fluid, theta_f, target.theta_f), (mesh.solid, theta_s, target.theta_s)):
        _, det, _ = sub.geometry()
        X = map_points(sub.vertices, sub.cells, qp)
        vh = np.einsum("qa,ca->cq", N, th[sub.cells])
        total += float(np.sum(qw[None, :] * np.abs(det)[:, None] * (vh - ex(t, X)) ** 2))
    return float(np.sqrt(total))


def run_transport_mms(mesh, params, deformation: Deformation, target: TransportTarget, t_final: float,
                      n_steps: int):
    """March the manufactured transport problem; returns the final L2 error and max residual."""
    fl, so = mesh.fluid, mesh.solid
    tf = target.theta_f(0.0, fl.vertices)
    ts = target.theta_s(0.0, so.vertices)
    dt = t_final / n_steps
    res_max = 0.0
    for n in range(n_steps):
        t0, t1 = n * dt, (n + 1) * dt
        src = transport_mms_sources(target, deformation, params, t1)
        sys_ = assemble_step(t0, t1, tf, ts, target.velocity, deformation, deformation, mesh, params, sources=src)
        tf, ts, res = advance(sys_)
        res_max = max(res_max, res)
    return transport_l2_error(mesh, tf, ts, target, t_final), res_max


def transport_space_study(params, levels=(2, 4, 8), t_final: float = 0.1, n_steps: int = 2, L: float = 1.0,
                          radius=None) -> ConvergenceReport:
    """Space order on a statically deformed domain; time stepping is exact for ``tau(t) = 1 + t``."""
    p = params.replace(L=L)
    radius = radius or AnalyticRadius(p.R0, 0.1, L=L)
    D = Deformation.from_params(p, radius)
    target = smooth_target(R0=p.R0)
    hs, errs, res = [], [], []
    for m in levels:
        mesh = build_reference_mesh(p, Resolution(n_axial=2 * m, n_radial=m, n_angular=4 * m, n_outer=m))
        e, r = run_transport_mms(mesh, p, D, target, t_final, n_steps)
        hs.append(1.0 / m)
        errs.append(e)
        res.append(r)
    return make_report("transport space L2", hs, errs, 2.0, 0.3, residuals=res)


def transport_time_study(params, steps=(4, 8, 16, 32), t_final: float = 0.5, m: int = 2,
                         radius=None) -> ConvergenceReport:
    """Time order on a moving domain with targets that are exact in the P1 space."""
    p = params
    radius = radius or AnalyticRadius(p.R0, 0.1, L=p.L, tamp=0.5, omega=3.0)
    D = Deformation.from_params(p, radius)
    target = affine_target(R0=p.R0)
    mesh = build_reference_mesh(p, Resolution(n_axial=2 * m, n_radial=m, n_angular=4 * m, n_outer=m))
    errs, res = [], []
    for n in steps:
        e, r = run_transport_mms(mesh, p, D, target, t_final, n)
        errs.append(e)
        res.append(r)
    dts = [t_final / n for n in steps]
    return make_report("transport time L2", dts, errs, 1.0, 0.2, residuals=res)


def energy_decay_study(params, n_steps: int = 100, dt: float = 0.01, m: int = 2, radius=None):
    """Energies ``int J theta^2`` of an unforced, static pure-diffusion run.

    The discrete scheme is dissipative in this setting, so the sequence must be
    nonincreasing. Returns the array of energies (initial value first).
    """
    from .transport import energy_norm

    p = params
    D = Deformation.from_params(p, radius or AnalyticRadius(p.R0, 0.1, L=p.L))
    mesh = build_reference_mesh(p, Resolution(n_axial=2 * m, n_radial=m, n_angular=4 * m, n_outer=m))
    tg = smooth_target(R0=p.R0)
    tf = tg.theta_f(0.0, mesh.fluid.vertices)
    ts = tg.theta_s(0.0, mesh.solid.vertices)
    energies = [energy_norm(tf, ts, mesh, D, 0.0)]
    for n in range(n_steps):
        sys_ = assemble_step(n * dt, (n + 1) * dt, tf, ts, None, D, D, mesh, p)
        tf, ts, _ = advance(sys_)
        energies.append(energy_norm(tf, ts, mesh, D, (n + 1) * dt))
    return np.array(energies)


def energy_monotone(energies, rtol: float = 1e-12) -> bool:
    e = np.asarray(energies)
    return bool(np.all(np.diff(e) <= rtol * e[:-1]))
