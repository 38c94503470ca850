"""Quasi-stationary Stokes flow on the fixed reference fluid domain.

Unknowns are the relative velocity ``w = v - v_b`` (continuous P2, zero on the
wall) and the reduced pressure ``q = p - f_b`` (continuous P1). With
``g_a = F^{-T} grad N_a`` the forms are

    a(w, phi) = int 2 mu J e_F(w) : e_F(phi),   e_F(w) = sym(Dw F^{-1})
    b(phi, q) = -int q A^T : D phi

and the right-hand sides are ``-int (A^T grad f_b) . phi - a(v_b, phi)`` and
``int tr(Dv_b A) psi``. Velocity unknowns are ordered component-major.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fem import (assemble_matrix, assemble_vector, chunks, map_points, map_tri_points, p1_basis, p2_basis,
                  physical_grads, ref_coords_in_tet, tet_rule, tri_p2_basis, tri_rule, triangle_geometry)
from .geometry import GAMMA_F, SIGMA, P2Space, p2_space
from .linsolve import SparseLU, solve_refined

CHUNK = 2048


class StokesSolveError(RuntimeError):
    pass


@dataclass
class StokesSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    space: P2Space
    n_velocity: int
    n_pressure: int
    fixed: np.ndarray
    fixed_values: np.ndarray
    t: float

    @property
    def velocity_block(self) -> sp.csr_matrix:
        n = self.n_velocity
        return self.matrix[:n, :n]

    @property
    def divergence_block(self) -> sp.csr_matrix:
        n = self.n_velocity
        return self.matrix[n:, :n]

    def symmetry_defect(self) -> float:
        A = self.velocity_block
        d = abs(A - A.T)
        return float(d.max() / abs(A).max()) if d.nnz else 0.0


@dataclass
class StokesSolution:
    w: np.ndarray  # (n_nodes, 3) P2 nodal values
    q: np.ndarray  # (n_vertices,) P1 nodal values
    residual: float
    space: P2Space
    t: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w.T.ravel(), self.q])


def _velocity_rows(cell_dofs, n_nodes):
    # (nc, 10, 3) -> component-major global indices, flattened as (a, i)
    return (cell_dofs[:, :, None] + n_nodes * np.arange(3)).reshape(len(cell_dofs), 30)


def assemble_stokes(t: float, fluid, deformation, params, space: P2Space | None = None, quad_degree: int = 4,
                    body=None, div_source=None, traction=None, dirichlet=None,
                    include_fb: bool = True, include_vb: bool = True) -> StokesSystem:
    """Assemble the transformed Stokes saddle-point system at time ``t``.

    Parameters
    ----------
    fluid : SubMesh
        Fluid submesh (``mesh.fluid``).
    body, div_source : callable, optional
        Extra volume data ``body(x) -> (n, 3)`` added to the momentum right-hand
        side and ``div_source(x) -> (n,)`` added to the mass right-hand side.
    traction : callable, optional
        ``traction(x, n) -> (n, 3)`` integrated over the fluid end faces.
    dirichlet : callable, optional
        Prescribed ``w`` on the wall nodes; zero if omitted.
    """
    V = space or p2_space(fluid)
    nV, nv = V.n_dofs, fluid.n_vertices
    n_vel = 3 * nV
    mu = params.mu
    qp, qw = tet_rule(quad_degree)
    N2, dN2 = p2_basis(qp)
    N1, _ = p1_basis(qp)
    _, det, inv = fluid.geometry()
    rows_v = _velocity_rows(V.cell_dofs, nV)

    mats, rows_a, rows_b, mats_b = [], [], [], []
    f = np.zeros(n_vel)
    g = np.zeros(nv)
    for sl in chunks(len(fluid.cells), CHUNK):
        cells = fluid.cells[sl]
        X = map_points(fluid.vertices, cells, qp)
        nc, nq = X.shape[:2]
        d = deformation.eval(t, X.reshape(-1, 3))
        Finv = d.Finv.reshape(nc, nq, 3, 3)
        J = d.J.reshape(nc, nq)
        wd = qw[None, :] * np.abs(det[sl])[:, None]
        G = physical_grads(inv[sl], dN2)
        g_a = np.einsum("cqlk,cqal->cqak", Finv, G)
        muJ = mu * J * wd
        GG = np.einsum("cqak,cqbk,cq->cab", g_a, g_a, muJ)
        loc = np.einsum("cqaj,cqbi,cq->caibj", g_a, g_a, muJ)
        for i in range(3):
            loc[:, :, i, :, i] += GG
        mats.append(loc.reshape(nc, 30, 30))
        rows_a.append(rows_v[sl])
        mats_b.append(-np.einsum("qp,cqai,cq->cpai", N1, g_a, J * wd).reshape(nc, 4, 30))
        rows_b.append(cells)

        floc = np.zeros((nc, 10, 3))
        gloc = np.zeros((nc, 4))
        Xf = X.reshape(-1, 3)
        if include_fb:
            gradfb = params.grad_f_b(Xf).reshape(nc, nq, 3)
            hb = J[..., None] * np.einsum("cqlk,cql->cqk", Finv, gradfb)
            floc -= np.einsum("qa,cqi,cq->cai", N2, hb, wd)
        if include_vb:
            dvb = d.dvb.reshape(nc, nq, 3, 3)
            E = dvb @ Finv
            E = 0.5 * (E + np.swapaxes(E, -1, -2))
            floc -= 2 * mu * np.einsum("cqij,cqaj,cq->cai", E, g_a, J * wd)
            A = d.A.reshape(nc, nq, 3, 3)
            trDA = np.einsum("cqij,cqji->cq", dvb, A)
            gloc += np.einsum("qp,cq,cq->cp", N1, trDA, wd)
        if body is not None:
            floc += np.einsum("qa,cqi,cq->cai", N2, body(Xf).reshape(nc, nq, 3), wd)
        if div_source is not None:
            gloc += np.einsum("qp,cq,cq->cp", N1, div_source(Xf).reshape(nc, nq), wd)
        f += assemble_vector(floc.reshape(nc, 30), rows_v[sl], n_vel)
        g += assemble_vector(gloc, cells, nv)

    if traction is not None:
        f += _traction_vector(fluid, V, traction)

    Avv = assemble_matrix(np.concatenate(mats), np.concatenate(rows_a), shape=(n_vel, n_vel))
    Bm = assemble_matrix(np.concatenate(mats_b), np.concatenate(rows_b), np.concatenate(rows_a), shape=(nv, n_vel))
    K = sp.bmat([[Avv, Bm.T], [Bm, None]], format="csr")
    rhs = np.concatenate([f, g])

    wall_nodes = V.boundary_dofs(SIGMA)
    fixed = (wall_nodes[None, :] + nV * np.arange(3)[:, None]).ravel()
    if dirichlet is None:
        vals = np.zeros(len(fixed))
    else:
        vals = np.asarray(dirichlet(V.nodes[wall_nodes]), dtype=float).T.ravel()
    return StokesSystem(matrix=K, rhs=rhs, space=V, n_velocity=n_vel, n_pressure=nv,
                        fixed=fixed, fixed_values=vals, t=t)


def _traction_vector(fluid, V: P2Space, traction) -> np.ndarray:
    nV = V.n_dofs
    tris, normals, _ = fluid.facets_with(GAMMA_F)
    out = np.zeros(3 * nV)
    if len(tris) == 0:
        return out
    qp, qw = tri_rule(5)
    N = tri_p2_basis(qp)
    area2, _ = triangle_geometry(fluid.vertices, tris)
    X = map_tri_points(fluid.vertices, tris, qp)
    nf, nq = X.shape[:2]
    nrm = np.repeat(normals[:, None, :], nq, axis=1)
    tv = np.asarray(traction(X.reshape(-1, 3), nrm.reshape(-1, 3))).reshape(nf, nq, 3)
    loc = np.einsum("qa,fqi,q,f->fai", N, tv, qw, area2)
    dofs = V.facet_dofs(tris)
    rows = (dofs[:, :, None] + nV * np.arange(3)).reshape(nf, 18)
    out += assemble_vector(loc.reshape(nf, 18), rows, 3 * nV)
    return out


def solve_stokes(system: StokesSystem, tol: float = 1e-10, backend: str = "auto") -> StokesSolution:
    """Direct solve of the reduced saddle-point system; raises if the residual exceeds ``tol``."""
    K, b = system.matrix, system.rhs
    n = K.shape[0]
    free = np.ones(n, dtype=bool)
    free[system.fixed] = False
    x = np.zeros(n)
    x[system.fixed] = system.fixed_values
    rhs = b[free] - K[free][:, ~free] @ system.fixed_values
    Kff = K[free][:, free]
    try:
        xf, res = solve_refined(Kff, rhs, tol, backend)
    except RuntimeError as exc:
        raise StokesSolveError(f"factorization failed ({exc}); check the element pair with infsup_estimate")
    if not np.isfinite(res) or res > tol:
        raise StokesSolveError(f"relative residual {res:.3e} above {tol:.1e}")
    x[free] = xf
    nV = system.space.n_dofs
    w = x[: 3 * nV].reshape(3, nV).T.copy()
    q = x[3 * nV:].copy()
    return StokesSolution(w=w, q=q, residual=float(res), space=system.space, t=system.t)


# ---------------------------------------------------------------------------
# post-processing
# ---------------------------------------------------------------------------

def velocity_at(space: P2Space, w: np.ndarray, cells: np.ndarray, ref_pts: np.ndarray, grad: bool = False):
    """Values ``(nc, nq, 3)`` (and gradients ``(nc, nq, 3, 3)``, ``[i, j] = d w_i / d x_j``).

    ``ref_pts`` is either ``(nq, 3)`` shared by all cells or ``(nc, nq, 3)``.
    """
    dofs = space.cell_dofs[cells]
    N, dN = p2_basis(ref_pts)
    wl = w[dofs]  # (nc, 10, 3)
    if N.ndim == 2:
        val = np.einsum("qa,cai->cqi", N, wl)
    else:
        val = np.einsum("cqa,cai->cqi", N, wl)
    if not grad:
        return val
    _, _, inv = space.mesh.geometry()
    if dN.ndim == 3:
        G = physical_grads(inv[cells], dN)
    else:
        G = np.einsum("cji,cqaj->cqai", inv[cells], dN)
    return val, np.einsum("cai,cqaj->cqij", wl, G)


def flow_rates(sol: StokesSolution, deformation, L: float) -> tuple[float, float]:
    """``int J w.n`` over the inlet (``x1 = 0``) and outlet (``x1 = L``) faces."""
    fluid = sol.space.mesh
    tris, normals, owners = fluid.facets_with(GAMMA_F)
    qp, qw = tri_rule(4)
    area2, _ = triangle_geometry(fluid.vertices, tris)
    X = map_tri_points(fluid.vertices, tris, qp)
    _, _, inv = fluid.geometry()
    ref = ref_coords_in_tet(fluid.vertices, fluid.cells[owners], inv[owners], X)
    wq = velocity_at(sol.space, sol.w, owners, ref)
    J = deformation.eval(sol.t, X.reshape(-1, 3)).J.reshape(X.shape[:2])
    flux = np.einsum("fqi,fi,fq,q,f->f", wq, normals, J, qw, area2)
    inlet = X[:, 0, 0] < 0.5 * L
    return float(flux[inlet].sum()), float(flux[~inlet].sum())


def reconstruct_physical(sol: StokesSolution, deformation, params):
    """Deformed node positions, physical velocity at P2 nodes and pressure at vertices."""
    V = sol.space
    d = deformation.eval(sol.t, V.nodes)
    v = sol.w + d.vb
    verts = V.mesh.vertices
    p = sol.q + params.f_b(verts)
    return deformation.eval_S(sol.t, V.nodes), v, p


def mass_residual(system: StokesSystem, sol: StokesSolution) -> float:
    """Max nodal residual of the discrete mass balance ``B w - g``."""
    r = system.divergence_block @ sol.w.T.ravel() - system.rhs[system.n_velocity:]
    return float(np.abs(r).max())


def infsup_estimate(fluid, deformation, t: float, params=None, quad_degree: int = 4) -> float:
    """Discrete inf-sup constant of the divergence form (dense, coarse meshes only).

    Smallest ``sqrt(lambda)`` of ``B A^{-1} B^T x = lambda M x`` with ``A`` the
    vector H1-seminorm matrix on the wall-constrained space and ``M`` the
    pressure mass matrix.
    """
    V = p2_space(fluid)
    nV, nv = V.n_dofs, fluid.n_vertices
    qp, qw = tet_rule(quad_degree)
    N1, _ = p1_basis(qp)
    _, dN2 = p2_basis(qp)
    _, det, inv = fluid.geometry()
    X = map_points(fluid.vertices, fluid.cells, qp)
    nc, nq = X.shape[:2]
    d = deformation.eval(t, X.reshape(-1, 3))
    Finv = d.Finv.reshape(nc, nq, 3, 3)
    J = d.J.reshape(nc, nq)
    wd = qw[None, :] * np.abs(det)[:, None]
    G = physical_grads(inv, dN2)
    lap = np.einsum("cqak,cqbk,cq->cab", G, G, wd)
    loc = np.zeros((nc, 10, 3, 10, 3))
    for i in range(3):
        loc[:, :, i, :, i] = lap
    rows = _velocity_rows(V.cell_dofs, nV)
    A = assemble_matrix(loc.reshape(nc, 30, 30), rows, shape=(3 * nV, 3 * nV))
    g_a = np.einsum("cqlk,cqal->cqak", Finv, G)
    B = assemble_matrix(-np.einsum("qp,cqai,cq->cpai", N1, g_a, J * wd).reshape(nc, 4, 30),
                        fluid.cells, rows, shape=(nv, 3 * nV))
    M = assemble_matrix(np.einsum("qa,qb,cq->cab", N1, N1, wd), fluid.cells, shape=(nv, nv))
    wall = V.boundary_dofs(SIGMA)
    free = np.ones(3 * nV, dtype=bool)
    free[(wall[None, :] + nV * np.arange(3)[:, None]).ravel()] = False
    Af = A[free][:, free].tocsc()
    Bf = B[:, free]
    lu = SparseLU(Af)
    Y = lu.solve(Bf.T.toarray())
    lu.free()
    S = Bf @ Y
    S = 0.5 * (S + S.T)
    lam = sla.eigh(S, M.toarray(), eigvals_only=True)
    return float(np.sqrt(max(lam.min(), 0.0)))
