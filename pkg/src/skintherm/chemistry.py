"""Temperature averaging, the NO concentration ODE and the resulting wall radius.

The tissue temperature enters the chemistry only through the scalar history
``T(t) = (K_gamma * T1)(t)``, where ``T1`` is the spatial mean of the solid
temperature. The ODE ``c_t = -k c + G(x1, T(t))`` is integrated exactly for a
production rate that is linear between time nodes, so constant production
reaches ``g / k`` to rounding error and the scheme is unconditionally stable.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import BPoly

from .fem import gauss_legendre


class HistoryGap(RuntimeError):
    pass


def spatial_average(theta_s: np.ndarray, mesh) -> float:
    """Mean of a P1 field over a tetrahedral submesh (no Jacobian weight)."""
    _, det, _ = mesh.geometry()
    vol = np.abs(det) / 6.0
    # P1 mean over a tet is the vertex mean
    cell_mean = theta_s[mesh.cells].mean(axis=1)
    return float(np.sum(vol * cell_mean) / np.sum(vol))


@dataclass
class AveragedHistory:
    """Append-only record of ``T1`` at time nodes, with ``T1 = plateau`` for ``t <= 0``."""

    plateau: float
    gamma: float
    power: int = 2
    times: list = field(default_factory=list)
    T1: list = field(default_factory=list)

    def __post_init__(self):
        p = self.power
        from math import factorial

        self._norm = factorial(2 * p + 1) / (self.gamma ** (2 * p + 1) * factorial(p) ** 2)
        self._n_gauss = p + 2

    def append(self, t: float, value: float) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError("history times must increase")
        self.times.append(float(t))
        self.T1.append(float(value))

    def truncate(self, t: float) -> None:
        """Drop entries after ``t`` (used when a step is recomputed)."""
        while self.times and self.times[-1] > t:
            self.times.pop()
            self.T1.pop()

    def copy(self) -> "AveragedHistory":
        return AveragedHistory(self.plateau, self.gamma, self.power, list(self.times), list(self.T1))

    def kernel(self, u):
        u = np.asarray(u, dtype=float)
        inside = (u > 0) & (u < self.gamma)
        return np.where(inside, self._norm * np.clip(u, 0, None) ** self.power
                        * np.clip(self.gamma - u, 0, None) ** self.power, 0.0)

    def T1_at(self, s):
        s = np.asarray(s, dtype=float)
        last = self.times[-1] if self.times else 0.0
        if s.size and np.max(s) > last + 1e-13:
            raise HistoryGap(f"T1 requested at {np.max(s):.6g} beyond the last stored time")
        if not self.times:
            return np.full_like(s, self.plateau)
        lo = max(bisect.bisect_left(self.times, float(np.min(s))) - 1, 0)
        hi = bisect.bisect_right(self.times, float(np.max(s))) + 1
        vals = np.interp(s, self.times[lo:hi], self.T1[lo:hi])
        return np.where(s <= 0.0, self.plateau, vals)

    def convolve(self, t: float) -> float:
        """``int K_gamma(t - s) T1(s) ds`` using exact composite Gauss rules."""
        if t <= 0.0:
            # the whole kernel support sees the initial plateau
            return float(self.plateau)
        lo = t - self.gamma
        i0 = bisect.bisect_right(self.times, lo)
        i1 = bisect.bisect_left(self.times, t)
        nodes = [lo, t] + self.times[i0:i1]
        if lo < 0.0 < t:
            nodes.append(0.0)
        nodes = np.unique(nodes)
        xg, wg = _reference_gauss(self._n_gauss + 1)
        a, b = nodes[:-1, None], nodes[1:, None]
        s = 0.5 * (b - a) * xg + 0.5 * (a + b)
        w = 0.5 * (b - a) * wg
        return float(np.sum(w * self.kernel(t - s) * self.T1_at(s)))


@lru_cache(maxsize=None)
def _reference_gauss(n):
    return gauss_legendre(n, -1.0, 1.0)


@dataclass
class RadiusSample:
    R: np.ndarray
    R_t: np.ndarray
    R_x: np.ndarray
    R_xt: np.ndarray
    R_xx: np.ndarray


class ChemistryState:
    """``c`` and its first two ``x1``-derivatives on the axial grid at one time."""

    def __init__(self, params, x_grid: np.ndarray, c0=None):
        self.params = params
        self.x = np.asarray(x_grid, dtype=float)
        c0 = params.c0 if c0 is None else c0
        self.c = np.broadcast_to(np.asarray(c0, dtype=float), self.x.shape).copy()
        self.cx = np.zeros_like(self.x)
        self.cxx = np.zeros_like(self.x)

    def copy(self) -> "ChemistryState":
        out = ChemistryState.__new__(ChemistryState)
        out.params, out.x = self.params, self.x
        out.c, out.cx, out.cxx = self.c.copy(), self.cx.copy(), self.cxx.copy()
        return out

    def production(self, T: float):
        p = self.params
        return p.eval_G(self.x, T), p.eval_G_x1(self.x, T, 1), p.eval_G_x1(self.x, T, 2)

    def advance(self, h: float, T_old: float, T_new: float) -> "ChemistryState":
        """Exact step for ``c_t = -k c + G`` with ``G`` linear in time on the step."""
        k = self.params.k_deg
        E = np.exp(-k * h)
        if k * h > 1e-8:
            w1 = (k * h - (1.0 - E)) / (k * k * h)
            w0 = (1.0 - E) / k - w1
        else:
            w0 = w1 = 0.5 * h
        g0 = self.production(T_old)
        g1 = self.production(T_new)
        out = self.copy()
        out.c = E * self.c + w0 * g0[0] + w1 * g1[0]
        out.cx = E * self.cx + w0 * g0[1] + w1 * g1[1]
        out.cxx = E * self.cxx + w0 * g0[2] + w1 * g1[2]
        return out

    def radius(self, T: float) -> RadiusSample:
        """``R = H(c)`` with time and ``x1`` derivatives by the chain rule."""
        p = self.params
        G = self.production(T)
        ct = -p.k_deg * self.c + G[0]
        cxt = -p.k_deg * self.cx + G[1]
        H1 = p.eval_H_deriv(self.c, 1)
        H2 = p.eval_H_deriv(self.c, 2)
        R = p.eval_H(self.c)
        if np.any(R < p.R1 - 1e-12) or np.any(R > p.R2 + 1e-12):
            raise RuntimeError("radius left [R1, R2]")
        return RadiusSample(R=R, R_t=H1 * ct, R_x=H1 * self.cx,
                            R_xt=H2 * self.cx * ct + H1 * cxt,
                            R_xx=H2 * self.cx**2 + H1 * self.cxx)


@dataclass
class ConcentrationField:
    t: np.ndarray
    x: np.ndarray
    c: np.ndarray
    c_t: np.ndarray
    c_x: np.ndarray
    c_xt: np.ndarray
    T: np.ndarray


def integrate_ode(history: AveragedHistory, params, t_grid, x_grid, c0=None) -> ConcentrationField:
    """Solve the concentration ODE on ``t_grid x x_grid`` driven by ``history``."""
    t_grid = np.asarray(t_grid, dtype=float)
    st = ChemistryState(params, x_grid, c0)
    T = np.array([history.convolve(t) for t in t_grid])
    cs, cts, cxs, cxts = [], [], [], []
    for n, t in enumerate(t_grid):
        if n > 0:
            st = st.advance(t - t_grid[n - 1], T[n - 1], T[n])
        G = st.production(T[n])
        cs.append(st.c)
        cts.append(-params.k_deg * st.c + G[0])
        cxs.append(st.cx)
        cxts.append(-params.k_deg * st.cx + G[1])
    return ConcentrationField(t=t_grid, x=st.x, c=np.array(cs), c_t=np.array(cts),
                              c_x=np.array(cxs), c_xt=np.array(cxts), T=T)


class RadiusField:
    """Radius at discrete times, interpolated in ``x1`` by Hermite polynomials.

    ``R`` uses the quintic Hermite interpolant of ``(R, R_x, R_xx)`` and ``R_t``
    the cubic one of ``(R_t, R_xt)``; the returned ``x1``-derivatives are those
    of the interpolants, so ``F = DS`` holds exactly for the interpolated radius.
    """

    def __init__(self, x_grid, R1: float | None = None, R2: float | None = None):
        self.x = np.asarray(x_grid, dtype=float)
        self.bounds = (R1, R2)
        self._levels: dict[float, tuple] = {}

    def set(self, t: float, sample: RadiusSample) -> None:
        R1, R2 = self.bounds
        if R1 is not None and (np.any(sample.R < R1 - 1e-12) or np.any(sample.R > R2 + 1e-12)):
            raise RuntimeError("radius outside [R1, R2]")
        pR = BPoly.from_derivatives(self.x, np.stack([sample.R, sample.R_x, sample.R_xx], axis=1))
        pT = BPoly.from_derivatives(self.x, np.stack([sample.R_t, sample.R_xt], axis=1))
        self._levels[float(t)] = (pR, pR.derivative(), pR.derivative(2), pT, pT.derivative())

    def times(self):
        return sorted(self._levels)

    def evaluate(self, t, x1):
        from .deformation import RadiusValues

        key = self._lookup(t)
        pR, pRx, pRxx, pT, pTx = self._levels[key]
        x1 = np.clip(np.asarray(x1, dtype=float), self.x[0], self.x[-1])
        return RadiusValues(R=pR(x1), R_t=pT(x1), R_x=pRx(x1), R_xt=pTx(x1), R_xx=pRxx(x1))

    def _lookup(self, t):
        t = float(t)
        if t in self._levels:
            return t
        for k in self._levels:
            if abs(k - t) <= 1e-12 * max(1.0, abs(t)):
                return k
        raise KeyError(f"radius not available at t={t}")
