"""Implicit Euler step for the fluid/solid temperature system on the reference domain.

Unknowns are continuous P1 fields ``theta_f`` on the fluid mesh and ``theta_s``
on the solid mesh, stacked as ``[theta_f, theta_s]``; the wall carries both
copies. At the new time level the matrix collects

* the ``J``-weighted mass divided by the step,
* ``int K^F grad theta . grad phi`` on both sides,
* the convection ``-int theta_f (A w) . grad phi_f``,
* the outflow term ``int theta_f (w.n)^+ phi_f J`` on the fluid ends,
* the wall coupling ``alpha int (theta_f - theta_s)(phi_f - phi_s) factor``,

and the right-hand side is ``M_J^n theta^n / dt - int f_in (w.n)^- phi_f J``
with ``x^- = min(x, 0)``. ``theta_s = 0`` is imposed on ``Gamma_D``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fem import (assemble_matrix, assemble_vector, chunks, map_points, map_tri_points, p1_basis,
                  physical_grads, ref_coords_in_tet, tet_rule, tri_p1_basis, tri_rule, triangle_geometry)
from .geometry import GAMMA_D, GAMMA_F, GAMMA_N, SIGMA
from .linsolve import solve_refined
from .stokes import StokesSolution, velocity_at

CHUNK = 4096


class TransportError(RuntimeError):
    pass


@dataclass
class TransportSources:
    """Optional extra data, used by manufactured-solution tests.

    Volume callables take points ``(n, 3)``; boundary callables take points and
    outward unit normals of the respective subdomain.
    """

    fluid: object = None
    solid: object = None
    gamma_f: object = None
    sigma_f: object = None
    sigma_s: object = None
    gamma_n: object = None
    dirichlet: object = None


@dataclass
class TransportSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_fluid: int
    n_solid: int
    fixed: np.ndarray
    fixed_values: np.ndarray
    t: float


def _velocity_cells(velocity, t, cells_idx, ref_pts, X):
    """Velocity at points of the given fluid cells; ``X`` are the physical points."""
    if velocity is None:
        return np.zeros(X.shape)
    if isinstance(velocity, StokesSolution):
        return velocity_at(velocity.space, velocity.w, cells_idx, ref_pts)
    return np.asarray(velocity(t, X.reshape(-1, 3))).reshape(X.shape)


def _volume_blocks(sub, t, deformation, K, qp, qw, velocity=None, want_mass_only=False):
    """Local ``J`` mass, stiffness and (fluid) convection matrices for a submesh."""
    N, dN = p1_basis(qp)
    _, det, inv = sub.geometry()
    mass, stiff = [], []
    for sl in chunks(len(sub.cells), CHUNK):
        X = map_points(sub.vertices, sub.cells[sl], qp)
        nc, nq = X.shape[:2]
        d = deformation.eval(t, X.reshape(-1, 3), K=None if want_mass_only else K)
        J = d.J.reshape(nc, nq)
        wd = qw[None, :] * np.abs(det[sl])[:, None]
        m = np.einsum("qa,qb,cq->cab", N, N, J * wd)
        mass.append(m)
        if want_mass_only:
            continue
        G = physical_grads(inv[sl], dN)  # (nc, nq, 4, 3), constant in q
        KF = d.KF.reshape(nc, nq, 3, 3)
        s = np.einsum("cqak,cqkl,cqbl,cq->cab", G, KF, G, wd)
        if velocity is not None:
            idx = np.arange(sl.start, sl.stop)
            wq = _velocity_cells(velocity, t, idx, qp, X)
            Aw = np.einsum("cqij,cqj->cqi", d.A.reshape(nc, nq, 3, 3), wq)
            s -= np.einsum("qb,cqi,cqai,cq->cab", N, Aw, G, wd)
        stiff.append(s)
    mass = np.concatenate(mass)
    return mass, (None if want_mass_only else np.concatenate(stiff))


def _facet_points(sub, tris, qp):
    area2, _ = triangle_geometry(sub.vertices, tris)
    X = map_tri_points(sub.vertices, tris, qp)
    return area2, X


def _source_volume(sub, fn, qp, qw, n):
    if fn is None:
        return np.zeros(n)
    N, _ = p1_basis(qp)
    _, det, _ = sub.geometry()
    out = np.zeros(n)
    for sl in chunks(len(sub.cells), CHUNK):
        X = map_points(sub.vertices, sub.cells[sl], qp)
        nc, nq = X.shape[:2]
        val = np.asarray(fn(X.reshape(-1, 3))).reshape(nc, nq)
        loc = np.einsum("qa,cq,q,c->ca", N, val, qw, np.abs(det[sl]))
        out += assemble_vector(loc, sub.cells[sl], n)
    return out


def _source_facets(sub, tag, fn, n):
    if fn is None:
        return np.zeros(n)
    tris, normals, _ = sub.facets_with(tag)
    if len(tris) == 0:
        return np.zeros(n)
    qp, qw = tri_rule(5)
    N = tri_p1_basis(qp)
    area2, X = _facet_points(sub, tris, qp)
    nf, nq = X.shape[:2]
    nrm = np.repeat(normals[:, None, :], nq, axis=1).reshape(-1, 3)
    val = np.asarray(fn(X.reshape(-1, 3), nrm)).reshape(nf, nq)
    return assemble_vector(np.einsum("qa,fq,q,f->fa", N, val, qw, area2), tris, n)


def sigma_mass(mesh, deformation, t, alpha: float):
    """Wall block ``alpha int N_a N_b factor`` in fluid-local and solid-local numbering."""
    fl, so = mesh.fluid, mesh.solid
    tris_f, _, _ = fl.facets_with(SIGMA)
    tris_s, _, _ = so.facets_with(SIGMA)
    qp, qw = tri_rule(4)
    N = tri_p1_basis(qp)
    area2, X = _facet_points(fl, tris_f, qp)
    fac = deformation.interface_factor(t, X[..., 0])
    loc = alpha * np.einsum("qa,qb,fq,q,f->fab", N, N, fac, qw, area2)
    Mff = assemble_matrix(loc, tris_f, shape=(fl.n_vertices, fl.n_vertices))
    Mss = assemble_matrix(loc, tris_s, shape=(so.n_vertices, so.n_vertices))
    Mfs = assemble_matrix(loc, tris_f, tris_s, shape=(fl.n_vertices, so.n_vertices))
    return Mff, Mss, Mfs


def _gamma_f_terms(mesh, t, deformation, velocity, fin: float):
    """Outflow matrix ``int (w.n)^+ N_a N_b J`` and inflow vector ``-int f_in (w.n)^- N_a J``."""
    fl = mesh.fluid
    n = fl.n_vertices
    tris, normals, owners = fl.facets_with(GAMMA_F)
    if velocity is None or len(tris) == 0:
        return sp.csr_matrix((n, n)), np.zeros(n)
    qp, qw = tri_rule(4)
    N = tri_p1_basis(qp)
    area2, X = _facet_points(fl, tris, qp)
    nf, nq = X.shape[:2]
    if isinstance(velocity, StokesSolution):
        _, _, inv = fl.geometry()
        ref = ref_coords_in_tet(fl.vertices, fl.cells[owners], inv[owners], X)
        wq = velocity_at(velocity.space, velocity.w, owners, ref)
    else:
        wq = np.asarray(velocity(t, X.reshape(-1, 3))).reshape(nf, nq, 3)
    J = deformation.eval(t, X.reshape(-1, 3)).J.reshape(nf, nq)
    wn = np.einsum("fqi,fi->fq", wq, normals)
    wplus, wminus = np.maximum(wn, 0.0), np.minimum(wn, 0.0)
    loc = np.einsum("qa,qb,fq,q,f->fab", N, N, wplus * J, qw, area2)
    vec = -fin * np.einsum("qa,fq,q,f->fa", N, wminus * J, qw, area2)
    return assemble_matrix(loc, tris, shape=(n, n)), assemble_vector(vec, tris, n)


def assemble_step(t_old: float, t_new: float, theta_f_old, theta_s_old, velocity, def_old, def_new,
                  mesh, params, sources: TransportSources | None = None, quad_degree: int = 4) -> TransportSystem:
    """Assemble the implicit Euler system for ``theta`` at ``t_new``.

    ``velocity`` is the relative velocity at ``t_new``: a :class:`StokesSolution`,
    a callable ``velocity(t, x) -> (n, 3)`` or ``None`` for no flow.
    """
    dt = t_new - t_old
    if not dt > 0:
        raise TransportError("time step must be positive")
    fl, so = mesh.fluid, mesh.solid
    nf, ns = fl.n_vertices, so.n_vertices
    qp, qw = tet_rule(quad_degree)
    src = sources or TransportSources()

    mf_new, kf = _volume_blocks(fl, t_new, def_new, params.Kf, qp, qw, velocity=velocity)
    ms_new, ks = _volume_blocks(so, t_new, def_new, params.Ks, qp, qw)
    mf_old, _ = _volume_blocks(fl, t_old, def_old, None, qp, qw, want_mass_only=True)
    ms_old, _ = _volume_blocks(so, t_old, def_old, None, qp, qw, want_mass_only=True)

    Af = assemble_matrix(mf_new / dt + kf, fl.cells, shape=(nf, nf))
    As = assemble_matrix(ms_new / dt + ks, so.cells, shape=(ns, ns))
    Mf_old = assemble_matrix(mf_old / dt, fl.cells, shape=(nf, nf))
    Ms_old = assemble_matrix(ms_old / dt, so.cells, shape=(ns, ns))

    out_mat, in_vec = _gamma_f_terms(mesh, t_new, def_new, velocity, params.fin)
    Mff, Mss, Mfs = sigma_mass(mesh, def_new, t_new, params.alpha)
    K = sp.bmat([[Af + out_mat + Mff, -Mfs], [-Mfs.T, As + Mss]], format="csr")

    rhs_f = Mf_old @ np.asarray(theta_f_old, dtype=float) + in_vec
    rhs_s = Ms_old @ np.asarray(theta_s_old, dtype=float)
    rhs_f += _source_volume(fl, src.fluid, qp, qw, nf)
    rhs_s += _source_volume(so, src.solid, qp, qw, ns)
    rhs_f += _source_facets(fl, GAMMA_F, src.gamma_f, nf)
    rhs_f += _source_facets(fl, SIGMA, src.sigma_f, nf)
    rhs_s += _source_facets(so, SIGMA, src.sigma_s, ns)
    rhs_s += _source_facets(so, GAMMA_N, src.gamma_n, ns)

    dir_nodes = so.boundary_vertices(GAMMA_D)
    vals = np.zeros(len(dir_nodes)) if src.dirichlet is None else np.asarray(src.dirichlet(so.vertices[dir_nodes]))
    return TransportSystem(matrix=K, rhs=np.concatenate([rhs_f, rhs_s]), n_fluid=nf, n_solid=ns,
                           fixed=nf + dir_nodes, fixed_values=vals, t=t_new)


def advance(system: TransportSystem, tol: float = 1e-10, backend: str = "auto"):
    """Solve the step system; returns ``(theta_f, theta_s, residual)``."""
    K, b = system.matrix, system.rhs
    n = K.shape[0]
    free = np.ones(n, dtype=bool)
    free[system.fixed] = False
    x = np.zeros(n)
    x[system.fixed] = system.fixed_values
    rhs = b[free] - K[free][:, ~free] @ system.fixed_values
    xf, res = solve_refined(K[free][:, free], rhs, tol, backend)
    if not np.isfinite(res) or res > tol:
        raise TransportError(f"relative residual {res:.3e} above {tol:.1e}")
    x[free] = xf
    return x[: system.n_fluid], x[system.n_fluid:], res


def energy_norm(theta_f, theta_s, mesh, deformation, t: float) -> float:
    """``int_f J theta_f^2 + int_s J theta_s^2``."""
    qp, qw = tet_rule(4)
    total = 0.0
    for sub, th in ((mesh.fluid, theta_f), (mesh.solid, theta_s)):
        m, _ = _volume_blocks(sub, t, deformation, None, qp, qw, want_mass_only=True)
        tl = np.asarray(th)[sub.cells]
        total += float(np.einsum("ca,cab,cb->", tl, m, tl))
    return total


def interface_flux(theta_f, theta_s, mesh, deformation, t: float, alpha: float) -> float:
    """``int_Sigma alpha (theta_f - theta_s) factor``: heat passed from blood to tissue."""
    fl, so = mesh.fluid, mesh.solid
    tris_f, _, _ = fl.facets_with(SIGMA)
    tris_s, _, _ = so.facets_with(SIGMA)
    qp, qw = tri_rule(4)
    N = tri_p1_basis(qp)
    area2, X = _facet_points(fl, tris_f, qp)
    jump = np.einsum("qa,fa->fq", N, np.asarray(theta_f)[tris_f] - np.asarray(theta_s)[tris_s])
    fac = deformation.interface_factor(t, X[..., 0])
    return float(alpha * np.einsum("fq,fq,q,f->", jump, fac, qw, area2))


def outlet_flux(theta_f, velocity, mesh, deformation, t: float) -> float:
    """Advective heat flux ``int theta_f (w.n) J`` through the outlet end ``x1 = L``."""
    fl = mesh.fluid
    tris, normals, owners = fl.facets_with(GAMMA_F)
    if velocity is None or len(tris) == 0:
        return 0.0
    qp, qw = tri_rule(4)
    N = tri_p1_basis(qp)
    area2, X = _facet_points(fl, tris, qp)
    out = X[:, 0, 0] > 0.5 * mesh.L
    if isinstance(velocity, StokesSolution):
        _, _, inv = fl.geometry()
        ref = ref_coords_in_tet(fl.vertices, fl.cells[owners], inv[owners], X)
        wq = velocity_at(velocity.space, velocity.w, owners, ref)
    else:
        wq = np.asarray(velocity(t, X.reshape(-1, 3))).reshape(X.shape)
    J = deformation.eval(t, X.reshape(-1, 3)).J.reshape(X.shape[:2])
    th = np.einsum("qa,fa->fq", N, np.asarray(theta_f)[tris])
    wn = np.einsum("fqi,fi->fq", wq, normals)
    return float(np.einsum("fq,fq,fq,q,f->f", th, wn, J, qw, area2)[out].sum())
