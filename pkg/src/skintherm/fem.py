"""Low-level finite element machinery on affine tetrahedra.

Quadrature rules, P1/P2 Lagrange bases on the unit tetrahedron, element
geometry and vectorized sparse assembly. Everything here is independent of the
physics; the physics modules only combine these arrays.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre

# local edge -> local vertex pairs of a tetrahedron (P2 edge-node ordering)
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
# local edge -> local vertex pairs of a triangle (P2 facet ordering)
TRI_EDGES = np.array([[0, 1], [0, 2], [1, 2]])

# degree-5 symmetric rule with 14 points (weights sum to 1/6)
_A1, _W1 = 0.0927352503108912, 0.01224884051939366
_A2, _W2 = 0.3108859192633006, 0.01878132095300264
_B3, _W3 = 0.4544962958743504, 0.007091003462846911


def _orbit_4(a):
    b = 1.0 - 3.0 * a
    return np.array([[a, a, a], [b, a, a], [a, b, a], [a, a, b]])


def _orbit_6(a):
    b = 0.5 - a
    return np.array([[a, a, b], [a, b, a], [b, a, a], [a, b, b], [b, a, b], [b, b, a]])


def stroud_tet_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Conical product (collapsed Gauss-Jacobi) rule on the unit tetrahedron.

    Exact for polynomials of total degree ``degree``; uses ``n**3`` points with
    ``n = ceil((degree + 1) / 2)``.
    """
    n = max(1, (degree + 2) // 2)
    x0, w0 = roots_jacobi(n, 2.0, 0.0)
    x1, w1 = roots_jacobi(n, 1.0, 0.0)
    x2, w2 = roots_legendre(n)
    # map [-1, 1] -> [0, 1]
    a, wa = (x0 + 1) / 2, w0 / 8
    b, wb = (x1 + 1) / 2, w1 / 4
    c, wc = (x2 + 1) / 2, w2 / 2
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    WA, WB, WC = np.meshgrid(wa, wb, wc, indexing="ij")
    xi = A
    eta = (1 - A) * B
    zeta = (1 - A) * (1 - B) * C
    pts = np.stack([xi.ravel(), eta.ravel(), zeta.ravel()], axis=1)
    return pts, (WA * WB * WC).ravel()


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the unit tetrahedron exact up to ``degree``."""
    if degree <= 1:
        return np.array([[0.25, 0.25, 0.25]]), np.array([1.0 / 6.0])
    if degree <= 5:
        pts = np.vstack([_orbit_4(_A1), _orbit_4(_A2), _orbit_6(_B3)])
        w = np.concatenate([np.full(4, _W1), np.full(4, _W2), np.full(6, _W3)])
        return pts, w
    return stroud_tet_rule(degree)


@lru_cache(maxsize=None)
def tri_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the unit triangle (weights sum to 1/2)."""
    n = max(1, (degree + 2) // 2)
    x0, w0 = roots_jacobi(n, 1.0, 0.0)
    x1, w1 = roots_legendre(n)
    a, wa = (x0 + 1) / 2, w0 / 4
    b, wb = (x1 + 1) / 2, w1 / 2
    A, B = np.meshgrid(a, b, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    pts = np.stack([A.ravel(), ((1 - A) * B).ravel()], axis=1)
    return pts, (WA * WB).ravel()


def gauss_legendre(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


# ---------------------------------------------------------------------------
# Lagrange bases on the unit tetrahedron, reference coordinates (xi, eta, zeta)
# ---------------------------------------------------------------------------

_DL = np.array([[-1.0, -1.0, -1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def barycentric(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return np.concatenate([1.0 - pts.sum(axis=-1, keepdims=True), pts], axis=-1)


def p1_basis(pts):
    """Values ``(..., 4)`` and reference gradients ``(..., 4, 3)``."""
    L = barycentric(pts)
    grad = np.broadcast_to(_DL, L.shape + (3,))
    return L, grad


def p2_basis(pts):
    """Values ``(..., 10)`` and reference gradients ``(..., 10, 3)``.

    Nodes 0-3 are the vertices, 4-9 the edge midpoints in ``TET_EDGES`` order.
    """
    L = barycentric(pts)
    vals = np.empty(L.shape[:-1] + (10,))
    grads = np.empty(L.shape[:-1] + (10, 3))
    for a in range(4):
        vals[..., a] = L[..., a] * (2 * L[..., a] - 1)
        grads[..., a, :] = (4 * L[..., a] - 1)[..., None] * _DL[a]
    for e, (i, j) in enumerate(TET_EDGES):
        vals[..., 4 + e] = 4 * L[..., i] * L[..., j]
        grads[..., 4 + e, :] = 4 * (L[..., j][..., None] * _DL[i] + L[..., i][..., None] * _DL[j])
    return vals, grads


def tri_p1_basis(pts):
    pts = np.asarray(pts, dtype=float)
    return np.stack([1 - pts[..., 0] - pts[..., 1], pts[..., 0], pts[..., 1]], axis=-1)


def tri_p2_basis(pts):
    """P2 values on the unit triangle; vertices then ``TRI_EDGES`` midpoints."""
    L = tri_p1_basis(pts)
    out = [L[..., a] * (2 * L[..., a] - 1) for a in range(3)]
    out += [4 * L[..., i] * L[..., j] for i, j in TRI_EDGES]
    return np.stack(out, axis=-1)


# ---------------------------------------------------------------------------
# element geometry
# ---------------------------------------------------------------------------

def tet_geometry(coords: np.ndarray, cells: np.ndarray):
    """Jacobian matrices, determinants and inverses of affine tetrahedra.

    Returns ``(jac, det, inv)`` with ``jac[:, :, k] = x_{k+1} - x_0``.
    """
    x = coords[cells]
    jac = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]], axis=2)
    det = np.linalg.det(jac)
    inv = np.linalg.inv(jac)
    return jac, det, inv


def map_points(coords, cells, ref_pts):
    """Physical coordinates ``(ncell, nq, 3)`` of reference points."""
    x = coords[cells]
    L = barycentric(ref_pts)
    return np.einsum("qa,cai->cqi", L, x)


def physical_grads(inv: np.ndarray, ref_grads: np.ndarray) -> np.ndarray:
    """``grad_x N = inv^T grad_ref N`` for every cell; shape ``(ncell, nq, nb, 3)``."""
    return np.einsum("cji,qaj->cqai", inv, ref_grads)


def triangle_geometry(coords: np.ndarray, tris: np.ndarray):
    """Areas-times-two and unit normals (right-hand orientation) of triangles."""
    x = coords[tris]
    cr = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    nrm = np.linalg.norm(cr, axis=1)
    return nrm, cr / nrm[:, None]


def map_tri_points(coords, tris, ref_pts):
    x = coords[tris]
    L = tri_p1_basis(ref_pts)
    return np.einsum("qa,fai->fqi", L, x)


def ref_coords_in_tet(coords, cells, inv, pts):
    """Reference coordinates of physical points ``pts[c, q]`` inside cell ``c``."""
    x0 = coords[cells[:, 0]]
    return np.einsum("cij,cqj->cqi", inv, pts - x0[:, None, :])


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble_matrix(local, rows, cols=None, shape=None) -> sp.csr_matrix:
    """Scatter local element matrices ``(ncell, nr, nc)`` into a CSR matrix."""
    if cols is None:
        cols = rows
    nr, nc = local.shape[1], local.shape[2]
    I = np.broadcast_to(rows[:, :, None], (rows.shape[0], nr, nc))
    J = np.broadcast_to(cols[:, None, :], (cols.shape[0], nr, nc))
    m = sp.coo_matrix((local.ravel(), (I.ravel(), J.ravel())), shape=shape)
    return m.tocsr()


def assemble_vector(local, rows, n: int) -> np.ndarray:
    return np.bincount(rows.ravel(), weights=local.ravel(), minlength=n)


def chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))
