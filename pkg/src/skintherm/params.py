"""Model constants, coupling function families and their admissibility checks.

All quantities are nondimensional. The function families are deliberately
small: a saturating production rate ``G``, a logistic radius map ``H``, a
polynomial bump averaging kernel, an affine normal-stress field and a constant
inflow temperature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np


class InvalidParameters(ValueError):
    """Raised when a parameter set violates a model assumption."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        lines = [f"{c.assumption} {c.name}: {c.detail or f'measured {c.measured!r}'}" for c in report.failures]
        super().__init__("invalid model parameters:\n  " + "\n  ".join(lines))


# ---------------------------------------------------------------------------
# function families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProductionSpec:
    """``G(x1, y) = g0 * (1 + axial_amp*cos(2 pi x1 / L)) * (1 + tanh((y - y_star)/s)) / 2``.

    With ``temperature_coupling=False`` the tanh factor is frozen at ``y_star``,
    giving a production rate that ignores temperature (decoupled model).
    """

    g0: float = 0.5
    y_star: float = 0.5
    s: float = 1.0
    axial_amp: float = 0.0
    temperature_coupling: bool = True


@dataclass(frozen=True)
class RadiusMapSpec:
    """Logistic ``H(y) = R1 + (R2 - R1) / (1 + exp(-(y - c_star)/w))``.

    ``constant`` replaces the map by a fixed radius (used to freeze the geometry).
    """

    c_star: float = 0.5
    w: float = 1.0
    constant: float | None = None


@dataclass(frozen=True)
class KernelSpec:
    """Averaging kernel ``C t^p (gamma - t)^p`` on ``(0, gamma)`` with unit mass."""

    gamma: float = 0.2
    power: int = 2


@dataclass(frozen=True)
class StressSpec:
    """Affine normal-stress data ``f_b(x) = P_in + (P_out - P_in) x1 / L``."""

    P_in: float = 20.0
    P_out: float = 0.0


def _spd(default):
    return field(default_factory=lambda: np.array(default, dtype=float))


@dataclass(frozen=True)
class ModelParams:
    """Model data in nondimensional units.

    The defaults are order-one values chosen for numerical testing; they are
    not physiological magnitudes.
    """

    R1: float = 0.15
    R2: float = 0.35
    R0: float = 0.25
    delta: float = 0.04
    L: float = 1.0
    T_final: float = 1.0
    mu: float = 1.0
    k_deg: float = 1.0
    alpha: float = 1.0
    Kf: np.ndarray = _spd(0.02 * np.eye(3))
    Ks: np.ndarray = _spd(0.02 * np.eye(3))
    kernel_spec: KernelSpec = field(default_factory=KernelSpec)
    G_spec: ProductionSpec = field(default_factory=ProductionSpec)
    H_spec: RadiusMapSpec = field(default_factory=RadiusMapSpec)
    fb_spec: StressSpec = field(default_factory=StressSpec)
    fin: float = 1.0
    c0: float = 0.0
    theta_f0: float = 0.0
    theta_s0: float = 0.0

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    # -- coupling functions -------------------------------------------------

    @property
    def gamma(self) -> float:
        return self.kernel_spec.gamma

    def _axial(self, x1, order=0):
        a, w = self.G_spec.axial_amp, 2 * np.pi / self.L
        x1 = np.asarray(x1, dtype=float)
        if order == 0:
            return 1.0 + a * np.cos(w * x1)
        # d^k/dx^k cos(w x) = w^k cos(w x + k pi/2)
        return a * w**order * np.cos(w * x1 + order * np.pi / 2)

    def _sigmoid(self, y, order=0):
        g = self.G_spec
        if not g.temperature_coupling:
            y = np.full_like(np.asarray(y, dtype=float), g.y_star)
            return 0.5 * np.ones_like(y) if order == 0 else np.zeros_like(y)
        th = np.tanh((np.asarray(y, dtype=float) - g.y_star) / g.s)
        if order == 0:
            return 0.5 * (1 + th)
        sech2 = 1 - th**2
        if order == 1:
            return 0.5 * sech2 / g.s
        raise ValueError("order > 1 not provided for the temperature factor")

    def eval_G(self, x1, y):
        """Production rate; ``x1`` must lie in ``[0, L]``."""
        x1 = np.asarray(x1, dtype=float)
        if np.any(x1 < -1e-12) or np.any(x1 > self.L + 1e-12):
            raise ValueError("x1 outside [0, L]")
        return self.G_spec.g0 * self._axial(x1) * self._sigmoid(y)

    def eval_G_x1(self, x1, y, order=1):
        """``d^order G / d x1^order``."""
        return self.G_spec.g0 * self._axial(x1, order) * self._sigmoid(y)

    def eval_G_y(self, x1, y):
        return self.G_spec.g0 * self._axial(x1) * self._sigmoid(y, 1)

    @property
    def C_G(self) -> float:
        """Bound on G and its derivatives up to order three."""
        g = self.G_spec
        w = 2 * math.pi / self.L
        ax = [1 + abs(g.axial_amp)] + [abs(g.axial_amp) * w**k for k in (1, 2, 3)]
        # max |d^k/du^k (1 + tanh u)/2| for k = 0..3
        yk = [1.0, 0.5, 2 / (3 * math.sqrt(3)), 1.0] if g.temperature_coupling else [1.0, 0, 0, 0]
        ys = [yk[k] / g.s**k for k in range(4)]
        return g.g0 * max(ax[i] * ys[j] for i in range(4) for j in range(4) if i + j <= 3)

    def eval_H(self, y):
        y = np.asarray(y, dtype=float)
        h = self.H_spec
        if h.constant is not None:
            return np.full_like(y, h.constant)
        sig = 0.5 * (1 + np.tanh(0.5 * (y - h.c_star) / h.w))
        return self.R1 + (self.R2 - self.R1) * sig

    def eval_H_deriv(self, y, order=1):
        y = np.asarray(y, dtype=float)
        h = self.H_spec
        if h.constant is not None:
            return np.zeros_like(y)
        sig = 0.5 * (1 + np.tanh(0.5 * (y - h.c_star) / h.w))
        d1 = sig * (1 - sig)
        if order == 1:
            return (self.R2 - self.R1) * d1 / h.w
        if order == 2:
            return (self.R2 - self.R1) * d1 * (1 - 2 * sig) / h.w**2
        raise ValueError("order must be 1 or 2")

    @property
    def C_H(self) -> float:
        h = self.H_spec
        if h.constant is not None:
            return 0.0
        span = self.R2 - self.R1
        return span * max(0.25 / h.w, 1 / (6 * math.sqrt(3)) / h.w**2, 0.125 / h.w**3)

    def kernel(self, s):
        """Averaging kernel evaluated at lag ``s``; zero outside ``(0, gamma)``."""
        g, p = self.kernel_spec.gamma, self.kernel_spec.power
        s = np.asarray(s, dtype=float)
        norm = 1.0 / (g ** (2 * p + 1) * math.factorial(p) ** 2 / math.factorial(2 * p + 1))
        inside = (s > 0) & (s < g)
        return np.where(inside, norm * np.clip(s, 0, g) ** p * np.clip(g - s, 0, g) ** p, 0.0)

    def kernel_first_moment(self) -> float:
        return 0.5 * self.kernel_spec.gamma

    def f_b(self, x):
        x = np.asarray(x, dtype=float)
        fb = self.fb_spec
        return fb.P_in + (fb.P_out - fb.P_in) * x[..., 0] / self.L

    def grad_f_b(self, x):
        x = np.asarray(x, dtype=float)
        g = np.zeros(x.shape)
        g[..., 0] = (self.fb_spec.P_out - self.fb_spec.P_in) / self.L
        return g

    def eta_bound_factor(self) -> float:
        return (self.R1 - 3 * self.delta) / (self.R2 + 3 * self.delta)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    assumption: str
    passed: bool
    measured: float | None = None
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __bool__(self) -> bool:
        return self.ok

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "assumption": c.assumption, "passed": c.passed,
                 "measured": c.measured, "detail": c.detail}
                for c in self.checks
            ],
        }


def _finite(*vals) -> bool:
    return all(np.all(np.isfinite(np.asarray(v, dtype=float))) for v in vals)


def _spd_check(name, M) -> Check:
    M = np.asarray(M, dtype=float)
    if M.shape != (3, 3) or not _finite(M):
        return Check(f"{name} symmetric positive definite", "(A8)", False, None, "not a finite 3x3 matrix")
    sym = float(np.max(np.abs(M - M.T)))
    lam = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    ok = sym <= 1e-12 * max(1.0, np.abs(M).max()) and lam > 0
    return Check(f"{name} symmetric positive definite", "(A8)", ok, lam,
                 f"min eigenvalue {lam:.3g}, asymmetry {sym:.3g}")


def validate(params: ModelParams, rho_check: bool = True) -> ValidationReport:
    """Check every model assumption; never raises."""
    p = params
    checks: list[Check] = []

    def add(name, assumption, ok, measured=None, detail=""):
        checks.append(Check(name, assumption, bool(ok), None if measured is None else float(measured), detail))

    geom_finite = _finite(p.R1, p.R2, p.R0, p.delta, p.L)
    add("0 < R_1 < R_2 < 1/2", "(A6)", geom_finite and 0 < p.R1 < p.R2 < 0.5, p.R2,
        f"R1={p.R1}, R2={p.R2}")
    add("R_0 in [R_1, R_2]", "(A6)", geom_finite and p.R1 <= p.R0 <= p.R2, p.R0, f"R0={p.R0}")
    add("delta > 0", "(A6)", geom_finite and p.delta > 0, p.delta)
    add("R_2 + 3 delta < 1/2", "(A6)", geom_finite and p.R2 + 3 * p.delta < 0.5,
        p.R2 + 3 * p.delta, f"R2+3delta={p.R2 + 3 * p.delta:.6g}")
    add("R_1 - 3 delta > 0", "(A6)", geom_finite and p.R1 - 3 * p.delta > 0,
        p.R1 - 3 * p.delta, f"R1-3delta={p.R1 - 3 * p.delta:.6g}")
    add("L > 0", "(A6)", geom_finite and p.L > 0, p.L)

    for name, val in [("k > 0", p.k_deg), ("mu > 0", p.mu), ("alpha > 0", p.alpha), ("T > 0", p.T_final)]:
        add(name, "(A8)", _finite(val) and val > 0, val)
    checks.append(_spd_check("K_f", p.Kf))
    checks.append(_spd_check("K_s", p.Ks))

    # (A7) kernel
    ks = p.kernel_spec
    kernel_ok = _finite(ks.gamma) and ks.gamma > 0 and int(ks.power) == ks.power and ks.power >= 1
    add("gamma > 0 and K_gamma continuous", "(A7)", kernel_ok, ks.gamma)
    add("gamma < T", "(A7)", _finite(ks.gamma, p.T_final) and ks.gamma < p.T_final, ks.gamma,
        f"gamma={ks.gamma}, T={p.T_final}")
    if kernel_ok:
        from .fem import gauss_legendre

        s, w = gauss_legendre(12, 0.0, ks.gamma)
        mass = float(np.sum(w * p.kernel(s)))
        probe = np.linspace(-ks.gamma, 2 * ks.gamma, 301)
        kv = p.kernel(probe)
        outside = np.abs(kv[(probe <= 0) | (probe >= ks.gamma)]).max()
        add("int K_gamma = 1", "(A7)", abs(mass - 1) < 1e-12, mass)
        add("K_gamma >= 0, supp in [0, gamma)", "(A7)", kv.min() >= 0 and outside == 0, kv.min())

    # (A2) production rate
    g = p.G_spec
    g_ok = _finite(g.g0, g.y_star, g.s, g.axial_amp) and g.s > 0
    add("G in C^3 with bounded derivatives", "(A2)", g_ok, p.C_G if g_ok else None)

    # (A3) radius map
    h = p.H_spec
    if h.constant is not None:
        add("R_1 <= H <= R_2", "(A3)", _finite(h.constant) and p.R1 <= h.constant <= p.R2, h.constant)
    else:
        h_ok = _finite(h.c_star, h.w) and h.w > 0
        add("H in C^3 with bounded derivatives", "(A3)", h_ok, p.C_H if h_ok else None)
        if h_ok and geom_finite:
            ys = h.c_star + h.w * np.linspace(-40, 40, 401)
            hv = p.eval_H(ys)
            # the logistic map lies in [R1, R2] exactly; allow for rounding at saturation
            slack = 1e-12 * max(1.0, abs(p.R2))
            add("R_1 <= H <= R_2", "(A3)", hv.min() >= p.R1 - slack and hv.max() <= p.R2 + slack, hv.min())

    add("initial data finite", "(A4)", _finite(p.c0, p.theta_f0, p.theta_s0))
    add("f_b in H^1, f_in in L^2", "(A5)", _finite(p.fb_spec.P_in, p.fb_spec.P_out, p.fin))

    # (A1) radial profile -- only meaningful for admissible geometry
    geometry_ok = all(c.passed for c in checks if c.assumption == "(A6)")
    if rho_check and geometry_ok:
        from .deformation import RhoProfile

        prof = RhoProfile(p.R0, p.R1, p.R2, p.delta)
        R = np.linspace(p.R1, p.R2, 11)[:, None]
        r = np.linspace(0.0, 0.5, 201)[None, :]
        rho = prof.rho(R, r)
        err_fix = float(np.abs(prof.rho(R[:, 0], p.R0) - R[:, 0]).max())
        outside = (r <= p.R1 - 3 * p.delta) | (r >= p.R2 + 3 * p.delta)
        err_id = float(np.abs(np.where(outside, rho - r, 0.0)).max())
        c_rho = float(prof.rho_r(R, r).min())
        add("rho(R, R_0) = R", "(A1.1)", err_fix < 1e-8, err_fix)
        add("rho(R, r) = r off (R_1-3delta, R_2+3delta)", "(A1.2)", err_id < 1e-10, err_id)
        add("d_r rho >= c_rho > 0", "(A1.4)", c_rho > 0, c_rho)
    elif rho_check:
        add("radial profile admissible", "(A1)", False, None, "skipped: geometry violates (A6)")

    return ValidationReport(checks)


def check_params(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged or raise :class:`InvalidParameters`."""
    report = validate(params)
    if not report.ok:
        raise InvalidParameters(report)
    return params


def param_names() -> list[str]:
    return [f.name for f in fields(ModelParams)]
