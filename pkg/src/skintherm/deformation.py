"""Radial wall deformation and the pulled-back coefficients.

The deformation moves each cross-section radially,
``S(t, x) = (x1, rho(R(t, x1), |xbar|) xbar / |xbar|)``, with ``rho`` the
mollification of a piecewise linear profile. Because that profile is affine in
``R`` we have ``rho(R, r) = r + (R - R0) * phi(r)`` exactly, where ``phi`` is the
standard mollifier convolved with a trapezoid. All ``r``-derivatives of ``phi``
are sums of shifted copies of the mollifier CDF, its first moment, the
mollifier itself and its derivative; the two integrated quantities are
tabulated once and evaluated with quintic Hermite interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.interpolate import BPoly

from .fem import gauss_legendre

FLUID, SOLID = 0, 1


class DeformationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# standard mollifier on (-1, 1)
# ---------------------------------------------------------------------------

def _bump(xi):
    xi = np.asarray(xi, dtype=float)
    out = np.zeros_like(xi)
    m = np.abs(xi) < 1
    out[m] = np.exp(-1.0 / (1.0 - xi[m] ** 2))
    return out


def _bump_deriv(xi):
    xi = np.asarray(xi, dtype=float)
    out = np.zeros_like(xi)
    m = np.abs(xi) < 1
    q = 1.0 - xi[m] ** 2
    out[m] = np.exp(-1.0 / q) * (-2.0 * xi[m] / q**2)
    return out


class Mollifier:
    """Unit-mass bump ``omega`` with tabulated CDF and first-moment integral."""

    def __init__(self, n_intervals: int = 4000, n_gauss: int = 12):
        nodes = np.linspace(-1.0, 1.0, n_intervals + 1)
        cdf = np.zeros_like(nodes)
        mom = np.zeros_like(nodes)
        for i in range(n_intervals):
            s, w = gauss_legendre(n_gauss, nodes[i], nodes[i + 1])
            b = _bump(s)
            cdf[i + 1] = cdf[i] + np.sum(w * b)
            mom[i + 1] = mom[i] + np.sum(w * s * b)
        self.norm = cdf[-1]
        self.nodes = nodes
        cdf /= self.norm
        mom /= self.norm
        om = self.omega(nodes)
        dom = self.omega_deriv(nodes)
        self._cdf = BPoly.from_derivatives(nodes, np.stack([cdf, om, dom], axis=1))
        self._mom = BPoly.from_derivatives(nodes, np.stack([mom, nodes * om, om + nodes * dom], axis=1))
        self.first_moment_total = float(mom[-1])

    def omega(self, xi):
        return _bump(xi) / self.norm

    def omega_deriv(self, xi):
        return _bump_deriv(xi) / self.norm

    def cdf(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = (xi >= 1).astype(float)
        m = np.abs(xi) < 1
        out[m] = self._cdf(xi[m])
        return out

    def ramp(self, xi):
        """``int_{-inf}^{xi} cdf`` -- the mollified ``max(xi, 0)``."""
        xi = np.asarray(xi, dtype=float)
        out = np.where(xi >= 1, xi, 0.0)
        m = np.abs(xi) < 1
        c = xi[m]
        out[m] = c * self._cdf(c) - self._mom(c)
        return out


@lru_cache(maxsize=1)
def standard_mollifier() -> Mollifier:
    return Mollifier()


# ---------------------------------------------------------------------------
# radial profile
# ---------------------------------------------------------------------------

class RhoProfile:
    """The mollified radial profile ``rho(R, r) = r + (R - R0) phi(r)``."""

    def __init__(self, R0: float, R1: float, R2: float, delta: float):
        self.R0, self.R1, self.R2, self.delta = R0, R1, R2, delta
        self.mol = standard_mollifier()
        s1 = 1.0 / (R0 - R1 + delta)
        s3 = -1.0 / (R2 - R0 + delta)
        # kinks of the trapezoid d(rho_bar)/dR and the slope jumps there
        self.breaks = np.array([R1 - 2 * delta, R0 - delta, R0 + delta, R2 + 2 * delta])
        self.jumps = np.array([s1, -s1, s3, -s3])
        self.z_inner = R1 - 3 * delta
        self.z_outer = R2 + 3 * delta

    # unmollified profile, used by the quadrature oracle
    def rho_bar(self, R, s):
        R0, R1, R2, d = self.R0, self.R1, self.R2, self.delta
        s = np.asarray(s, dtype=float)
        R = np.asarray(R, dtype=float)
        b2 = (R - R1 + d) / (R0 - R1 + d) * (s - (R1 - 2 * d)) + R1 - 2 * d
        b3 = (s - R0) + R
        b4 = (R2 - R + d) / (R2 - R0 + d) * (s - (R2 + 2 * d)) + R2 + 2 * d
        return np.select(
            [s <= R1 - 2 * d, s <= R0 - d, s <= R0 + d, s <= R2 + 2 * d],
            [s, b2, b3, b4], default=s)

    def _terms(self, r):
        r = np.asarray(r, dtype=float)
        return (r[..., None] - self.breaks) / self.delta

    def phi(self, r, order: int = 0):
        """``d^order phi / dr^order`` for order 0..3."""
        xi = self._terms(r)
        d, c = self.delta, self.jumps
        m = self.mol
        if order == 0:
            return d * (m.ramp(xi) @ c)
        if order == 1:
            return m.cdf(xi) @ c
        if order == 2:
            return (m.omega(xi) @ c) / d
        if order == 3:
            return (m.omega_deriv(xi) @ c) / d**2
        raise ValueError("order must be 0..3")

    def rho(self, R, r):
        return np.asarray(r, dtype=float) + (np.asarray(R) - self.R0) * self.phi(r)

    def rho_r(self, R, r):
        return 1.0 + (np.asarray(R) - self.R0) * self.phi(r, 1)

    def rho_R(self, R, r):
        return self.phi(r) + 0.0 * np.asarray(R)

    def rho_rr(self, R, r):
        return (np.asarray(R) - self.R0) * self.phi(r, 2)

    def rho_Rr(self, R, r):
        return self.phi(r, 1) + 0.0 * np.asarray(R)

    def rho_RR(self, R, r):
        return np.zeros(np.broadcast(np.asarray(R), np.asarray(r)).shape)

    def rho_quadrature(self, R: float, r: float) -> float:
        """Direct convolution of the unmollified profile (independent oracle)."""
        d = self.delta
        pts = [b for b in [self.R1 - 2 * d, self.R0 - d, self.R0 + d, self.R2 + 2 * d] if r - d < b < r + d]

        def f(s):
            return float(self.rho_bar(R, s)) * float(self.mol.omega((r - s) / d)) / d

        val, _ = integrate.quad(f, r - d, r + d, points=pts or None, epsabs=1e-14, epsrel=1e-13, limit=200)
        return val

    def rho_gauss(self, R, r, n: int = 128) -> np.ndarray:
        """Vectorized direct convolution: Gauss-Legendre on each smooth piece of the integrand.

        Uses the analytic mollifier, not the interpolation tables, so it is an
        independent check of :meth:`rho` on whole grids.
        """
        R, r = np.broadcast_arrays(np.asarray(R, dtype=float), np.asarray(r, dtype=float))
        shape = R.shape
        R, r = R.ravel(), r.ravel()
        d = self.delta
        kinks = np.array([self.R1 - 2 * d, self.R0 - d, self.R0 + d, self.R2 + 2 * d])
        lo, hi = r - d, r + d
        cuts = np.sort(np.column_stack([lo, np.clip(kinks[None, :], lo[:, None], hi[:, None]), hi]), axis=1)
        xg, wg = gauss_legendre(n, -1.0, 1.0)
        a, b = cuts[:, :-1, None], cuts[:, 1:, None]
        s = 0.5 * (b - a) * xg + 0.5 * (a + b)
        w = 0.5 * (b - a) * wg
        f = self.rho_bar(R[:, None, None], s) * self.mol.omega((r[:, None, None] - s) / d) / d
        return np.sum(w * f, axis=(1, 2)).reshape(shape)

    def c_rho(self, n: int = 2001) -> float:
        r = np.linspace(0.0, 0.5, n)
        lo = self.rho_r(self.R1, r).min()
        hi = self.rho_r(self.R2, r).min()
        return float(min(lo, hi))


@dataclass
class RhoTable:
    R: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    rho_R: np.ndarray
    rho_r: np.ndarray
    rho_RR: np.ndarray
    rho_Rr: np.ndarray
    rho_rr: np.ndarray
    interpolation: str
    quadrature_tol: float
    c_rho: float
    fixed_point_error: float
    identity_error: float


def profile_from_params(params) -> RhoProfile:
    return RhoProfile(params.R0, params.R1, params.R2, params.delta)


def build_rho_table(profile, n_R: int = 50, n_r: int = 200, tol: float = 1e-8) -> RhoTable:
    """Tabulate ``rho`` and its derivatives on ``[R1, R2] x [0, 1/2]``; verify the profile axioms.

    ``profile`` may be a :class:`RhoProfile` or anything carrying ``R0, R1, R2, delta``.
    """
    if not isinstance(profile, RhoProfile):
        profile = profile_from_params(profile)
    R = np.linspace(profile.R1, profile.R2, n_R)
    r = np.linspace(0.0, 0.5, n_r)
    RR, rr = np.meshgrid(R, r, indexing="ij")
    tab = RhoTable(
        R=R, r=r,
        rho=profile.rho(RR, rr), rho_R=profile.rho_R(RR, rr), rho_r=profile.rho_r(RR, rr),
        rho_RR=profile.rho_RR(RR, rr), rho_Rr=profile.rho_Rr(RR, rr), rho_rr=profile.rho_rr(RR, rr),
        interpolation="quintic Hermite in the mollifier variable (exact in R)",
        quadrature_tol=1e-14,
        c_rho=0.0, fixed_point_error=0.0, identity_error=0.0,
    )
    tab.fixed_point_error = float(np.abs(profile.rho(R, profile.R0) - R).max())
    outside = (rr <= profile.z_inner) | (rr >= profile.z_outer)
    tab.identity_error = float(max(np.abs(tab.rho - rr)[outside].max(), np.abs(tab.rho_r - 1)[outside].max()))
    tab.c_rho = float(tab.rho_r.min())
    if tab.fixed_point_error > tol or tab.identity_error > tol or tab.c_rho <= 0:
        raise DeformationError(
            f"radial profile violates its axioms: |rho(R,R0)-R|={tab.fixed_point_error:.3g}, "
            f"identity defect {tab.identity_error:.3g}, min d_r rho {tab.c_rho:.3g}")
    return tab


# ---------------------------------------------------------------------------
# radius sources
# ---------------------------------------------------------------------------

@dataclass
class RadiusValues:
    R: np.ndarray
    R_t: np.ndarray
    R_x: np.ndarray
    R_xt: np.ndarray
    R_xx: np.ndarray


class ConstantRadius:
    def __init__(self, value: float):
        self.value = value

    def evaluate(self, t, x1):
        x1 = np.asarray(x1, dtype=float)
        z = np.zeros_like(x1)
        return RadiusValues(self.value + z, z, z, z, z)


class AnalyticRadius:
    """``R(t, x1) = base * (1 + amp * sin(2 pi freq x1 / L + phase) * time_factor(t))``.

    ``time_factor(t) = 1 + tamp * sin(omega t)``. Everything is smooth, so this
    is the radius used by finite-difference and manufactured-solution checks.
    """

    def __init__(self, base, amp=0.1, freq=1.0, L=1.0, phase=0.0, tamp=0.0, omega=0.0):
        self.base, self.amp, self.freq, self.L = base, amp, freq, L
        self.phase, self.tamp, self.omega = phase, tamp, omega

    def evaluate(self, t, x1):
        x1 = np.asarray(x1, dtype=float)
        k = 2 * np.pi * self.freq / self.L
        s, c = np.sin(k * x1 + self.phase), np.cos(k * x1 + self.phase)
        tf = 1 + self.tamp * np.sin(self.omega * t)
        tf_t = self.tamp * self.omega * np.cos(self.omega * t)
        b, a = self.base, self.amp
        return RadiusValues(
            R=b * (1 + a * s * tf),
            R_t=b * a * s * tf_t + 0 * x1,
            R_x=b * a * k * c * tf,
            R_xt=b * a * k * c * tf_t + 0 * x1,
            R_xx=-b * a * k * k * s * tf,
        )


# ---------------------------------------------------------------------------
# pointwise coefficients
# ---------------------------------------------------------------------------

@dataclass
class DeformationEval:
    """Coefficient bundle at a set of points; leading axis indexes points.

    ``F`` is the Jacobian ``DS`` (``F[i, j] = dS_i/dx_j``) and ``dvb`` the
    Jacobian of the domain velocity, ``dvb[i, j] = d(v_b)_i / dx_j``.
    """

    S: np.ndarray
    F: np.ndarray
    J: np.ndarray
    Finv: np.ndarray
    A: np.ndarray
    vb: np.ndarray
    dvb: np.ndarray
    dJdt: np.ndarray
    KF: np.ndarray | None = None

    @property
    def min_J(self) -> float:
        return float(self.J.min()) if self.J.size else np.inf


class Deformation:
    """Evaluates the deformation and derived coefficients for a radius source.

    ``radius`` is any object with ``evaluate(t, x1) -> RadiusValues``.
    """

    def __init__(self, profile: RhoProfile, radius, eta: float | None = None, Kf=None, Ks=None):
        self.profile = profile
        self.radius = radius
        if eta is None:
            eta = profile.c_rho() * (profile.R1 - 3 * profile.delta) / (profile.R2 + 3 * profile.delta)
        self.eta = eta
        self.Kf = None if Kf is None else np.asarray(Kf, dtype=float)
        self.Ks = None if Ks is None else np.asarray(Ks, dtype=float)

    @classmethod
    def from_params(cls, params, radius=None) -> "Deformation":
        if radius is None:
            radius = ConstantRadius(params.R0)
        return cls(profile_from_params(params), radius, Kf=params.Kf, Ks=params.Ks)

    def with_radius(self, radius) -> "Deformation":
        return Deformation(self.profile, radius, self.eta, self.Kf, self.Ks)

    def eval_coeffs(self, t, x, side: int = FLUID, check: bool = True) -> DeformationEval:
        """Coefficients with ``K^F`` built from the conductivity of ``side``."""
        K = self.Kf if side == FLUID else self.Ks
        return self.eval(t, x, K=K, check=check)

    def _radial(self, t, x):
        x = np.asarray(x, dtype=float)
        xb = x[..., 1:]
        r = np.linalg.norm(xb, axis=-1)
        safe = np.where(r > 1e-12, r, 1.0)
        e = xb / safe[..., None]
        rv = self.radius.evaluate(t, x[..., 0])
        return x, r, safe, e, rv

    def eval_S(self, t, x):
        x, r, safe, _, rv = self._radial(t, x)
        rho = self.profile.rho(rv.R, r)
        # scaling xbar by rho/r keeps S = x bit-exact wherever the profile is the identity
        ratio = np.where(r > 1e-12, rho / safe, 1.0)
        S = x.copy()
        S[..., 1:] = ratio[..., None] * x[..., 1:]
        return S

    def eval(self, t, x, K: np.ndarray | None = None, check: bool = True) -> DeformationEval:
        x, r, safe, e, rv = self._radial(t, x)
        prof = self.profile
        phi = prof.phi(r)
        phi1 = prof.phi(r, 1)
        phi2 = prof.phi(r, 2)
        dR = rv.R - prof.R0
        rho = r + dR * phi
        rho_r = 1.0 + dR * phi1
        # rho/r with its smooth limit d_r rho(R, 0) = 1 on the axis
        ratio = np.where(r > 1e-12, rho / safe, rho_r)
        n = x.shape[:-1]
        eye2 = np.eye(2)
        P = e[..., :, None] * e[..., None, :]
        B = rho_r[..., None, None] * P + ratio[..., None, None] * (eye2 - P)
        F = np.zeros(n + (3, 3))
        F[..., 0, 0] = 1.0
        F[..., 1:, 0] = (phi * rv.R_x)[..., None] * e
        F[..., 1:, 1:] = B
        J = rho_r * ratio
        if check and J.size and J.min() < 0.5 * self.eta:
            raise DeformationError(f"Jacobian {J.min():.3g} below eta/2 = {0.5 * self.eta:.3g}")
        Binv = (1.0 / rho_r)[..., None, None] * P + (1.0 / ratio)[..., None, None] * (eye2 - P)
        Finv = np.zeros_like(F)
        Finv[..., 0, 0] = 1.0
        Finv[..., 1:, 0] = -np.einsum("...ij,...j->...i", Binv, F[..., 1:, 0])
        Finv[..., 1:, 1:] = Binv
        A = J[..., None, None] * Finv

        vb = np.zeros(n + (3,))
        vb[..., 1:] = (phi * rv.R_t)[..., None] * e
        dvb = np.zeros(n + (3, 3))
        dvb[..., 1:, 0] = (phi * rv.R_xt)[..., None] * e
        phi_over_r = np.where(r > 1e-12, phi / safe, phi1)
        dvb[..., 1:, 1:] = rv.R_t[..., None, None] * (phi1[..., None, None] * P + phi_over_r[..., None, None] * (eye2 - P))
        # J = rho_r * rho / r  ->  dJ/dt = R_t (phi1 * rho / r + rho_r * phi / r)
        dJdt = rv.R_t * (phi1 * ratio + rho_r * phi_over_r)

        S = x.copy()
        S[..., 1:] = ratio[..., None] * x[..., 1:]
        KF = None
        if K is not None:
            KF = J[..., None, None] * np.einsum("...ij,jk,...lk->...il", Finv, K, Finv)
        return DeformationEval(S=S, F=F, J=J, Finv=Finv, A=A, vb=vb, dvb=dvb, dJdt=dJdt, KF=KF)

    def interface_factor(self, t, x1):
        """Surface-measure factor on the wall, ``(R/R0) sqrt(R_x^2 + 1)``."""
        rv = self.radius.evaluate(t, np.asarray(x1, dtype=float))
        return rv.R / self.profile.R0 * np.sqrt(rv.R_x**2 + 1.0)

    def interface_factor_generic(self, t, x):
        """``J |F^{-T} n|`` on the wall from the full coefficient bundle."""
        x = np.asarray(x, dtype=float)
        d = self.eval(t, x)
        r = np.linalg.norm(x[..., 1:], axis=-1)
        nrm = np.zeros_like(x)
        nrm[..., 1:] = x[..., 1:] / r[..., None]
        FinvT_n = np.einsum("...ji,...j->...i", d.Finv, nrm)
        return d.J * np.linalg.norm(FinvT_n, axis=-1)

    def fluid_volume_exact(self, t, L: float, n_axial: int = 64, n_radial: int = 64, n_theta: int = 16) -> float:
        """``int_{Omega_f} J dx`` on the exact cylinder by tensor Gauss quadrature."""
        R0 = self.profile.R0
        xq, wq = gauss_legendre(n_axial, 0.0, L)
        # split the radial range at the profile kinks so each piece is smooth
        edges = np.unique(np.clip(np.concatenate([[0.0, R0], self.profile.breaks - self.profile.delta,
                                                  self.profile.breaks + self.profile.delta]), 0.0, R0))
        rq, wr = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a > 1e-14:
                p, w = gauss_legendre(n_radial, a, b)
                rq.append(p)
                wr.append(w)
        rq, wr = np.concatenate(rq), np.concatenate(wr)
        th = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
        X1, RR, TH = np.meshgrid(xq, rq, th, indexing="ij")
        pts = np.stack([X1, RR * np.cos(TH), RR * np.sin(TH)], axis=-1)
        J = self.eval(t, pts.reshape(-1, 3), check=False).J.reshape(X1.shape)
        W = wq[:, None, None] * (wr * rq)[None, :, None] * (2 * np.pi / n_theta)
        return float(np.sum(W * J))


def dump_probe_csv(path, deformation: Deformation, t: float, points: np.ndarray) -> None:
    """Write ``x, S, J, tr A, |v_b|`` along a probe line (one row per point)."""
    d = deformation.eval(t, points, check=False)
    cols = np.column_stack([points, d.S, d.J, np.trace(d.A, axis1=1, axis2=2), np.linalg.norm(d.vb, axis=1)])
    header = "x1,x2,x3,S1,S2,S3,J,trA,vb_norm"
    np.savetxt(path, cols, delimiter=",", header=header, comments="", fmt="%.17g")


def dump_rho_table_csv(path, table: RhoTable) -> None:
    RR, rr = np.meshgrid(table.R, table.r, indexing="ij")
    cols = np.column_stack([a.ravel() for a in (RR, rr, table.rho, table.rho_R, table.rho_r,
                                                   table.rho_RR, table.rho_Rr, table.rho_rr)])
    np.savetxt(path, cols, delimiter=",", header="R,r,rho,rho_R,rho_r,rho_RR,rho_Rr,rho_rr",
               comments="", fmt="%.17g")
