"""Reference mesh of the box ``(0, L) x (-1/2, 1/2)^2`` around a cylinder of radius R0.

The cross-section is an O-grid: a square core, a fluid shell that blends the
core boundary into the circle ``|xbar| = R0`` and a solid shell that blends the
circle into the outer square. Quads are split into triangles and extruded
along ``x1``; each prism becomes three tetrahedra using the global vertex
order, which makes neighbouring splits conforming.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import TET_EDGES, TET_FACES, TRI_EDGES, tet_geometry

FLUID, SOLID = 0, 1
SIGMA, GAMMA_F, GAMMA_D, GAMMA_N = 1, 2, 3, 4
TAG_NAMES = {SIGMA: "Sigma", GAMMA_F: "Gamma_f", GAMMA_D: "Gamma_D", GAMMA_N: "Gamma_N"}


class MeshError(RuntimeError):
    pass


@dataclass(frozen=True)
class Resolution:
    n_axial: int = 4
    n_radial: int = 2
    n_angular: int = 8
    n_outer: int = 2
    core_fraction: float = 0.5
    min_dihedral_deg: float = 2.0

    def check(self):
        if self.n_angular % 4 or self.n_angular < 8:
            raise MeshError("n_angular must be a multiple of 4 and at least 8")
        for name in ("n_axial", "n_radial", "n_outer"):
            if getattr(self, name) < 1:
                raise MeshError(f"{name} must be positive")
        if self.n_axial < 2:
            raise MeshError("n_axial must be at least 2")
        if not 0.1 <= self.core_fraction <= 0.8:
            raise MeshError("core_fraction must lie in [0.1, 0.8]")

    def refined(self, factor: int = 2) -> "Resolution":
        return Resolution(self.n_axial * factor, self.n_radial * factor, self.n_angular * factor,
                          self.n_outer * factor, self.core_fraction, self.min_dihedral_deg)


@dataclass
class SubMesh:
    """Tetrahedral mesh of one subdomain with local vertex numbering.

    ``facet_normals`` point out of the subdomain. ``facet_cells`` index the
    local cell that owns each facet.
    """

    vertices: np.ndarray
    cells: np.ndarray
    global_ids: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    facet_cells: np.ndarray
    facet_normals: np.ndarray
    _geom: tuple | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def geometry(self):
        if self._geom is None:
            self._geom = tet_geometry(self.vertices, self.cells)
        return self._geom

    def facets_with(self, tag: int):
        m = self.facet_tags == tag
        return self.facets[m], self.facet_normals[m], self.facet_cells[m]

    def boundary_vertices(self, tag: int) -> np.ndarray:
        return np.unique(self.facets[self.facet_tags == tag])

    def volume(self) -> float:
        return float(np.sum(np.abs(self.geometry()[1])) / 6.0)


@dataclass
class ReferenceMesh:
    vertices: np.ndarray
    cells: np.ndarray
    cell_tags: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    resolution: Resolution
    L: float
    R0: float
    fluid: SubMesh
    solid: SubMesh
    # interface vertices: global id, fluid-local id, solid-local id
    sigma_global: np.ndarray
    sigma_fluid: np.ndarray
    sigma_solid: np.ndarray

    def facet_area(self, tag: int) -> float:
        tri = self.vertices[self.facets[self.facet_tags == tag]]
        return float(0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1).sum())

    def volume(self) -> float:
        _, det, _ = tet_geometry(self.vertices, self.cells)
        return float(np.abs(det).sum() / 6.0)

    def min_dihedral_deg(self) -> float:
        return float(np.degrees(min_dihedral_angles(self.vertices, self.cells).min()))


# ---------------------------------------------------------------------------
# cross-section
# ---------------------------------------------------------------------------

_ROT = [np.array([[1, 0], [0, 1]]), np.array([[0, -1], [1, 0]]),
        np.array([[-1, 0], [0, -1]]), np.array([[0, 1], [-1, 0]])]


def _cross_section(R0: float, res: Resolution):
    """2-D points, quads (counter-clockwise) and quad tags of the O-grid."""
    m = res.n_angular // 4
    a = res.core_fraction * R0
    t = -1.0 + 2.0 * np.arange(m + 1) / m
    pts, quads, tags = [], [], []
    index: dict[tuple, int] = {}

    def pid(p):
        key = (round(p[0], 12) + 0.0, round(p[1], 12) + 0.0)
        if key not in index:
            index[key] = len(pts)
            pts.append(key)
        return index[key]

    # core square
    g = a * t
    core = [[pid((g[i], g[j])) for j in range(m + 1)] for i in range(m + 1)]
    for i in range(m):
        for j in range(m):
            quads.append([core[i][j], core[i + 1][j], core[i + 1][j + 1], core[i][j + 1]])
            tags.append(FLUID)

    # four shell sides obtained by exact quarter-turn rotations of the x2 > 0 side
    ang = 0.25 * np.pi * t
    sq_in = np.stack([np.full(m + 1, a), a * t], axis=1)
    circ = np.stack([R0 * np.cos(ang), R0 * np.sin(ang)], axis=1)
    sq_out = np.stack([np.full(m + 1, 0.5), 0.5 * t], axis=1)
    for rot in _ROT:
        rings = []
        for k in range(res.n_radial + 1):
            s = k / res.n_radial
            rings.append((1 - s) * sq_in + s * circ)
        for k in range(1, res.n_outer + 1):
            s = k / res.n_outer
            rings.append((1 - s) * circ + s * sq_out)
        ids = [[pid(rot @ p) for p in ring] for ring in rings]
        for k in range(len(rings) - 1):
            tag = FLUID if k < res.n_radial else SOLID
            for j in range(m):
                quads.append([ids[k][j], ids[k + 1][j], ids[k + 1][j + 1], ids[k][j + 1]])
                tags.append(tag)
    return np.array(pts), np.array(quads), np.array(tags)


def _triangulate(quads, tags):
    # split along the diagonal through the smallest index for reproducibility
    tris, ttags = [], []
    for q, tag in zip(quads, tags):
        k = int(np.argmin(q))
        q = np.roll(q, -k)
        tris += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
        ttags += [tag, tag]
    return np.array(tris), np.array(ttags)


def _extrude(pts2, tris, ttags, L, n_axial):
    n2 = len(pts2)
    x1 = np.linspace(0.0, L, n_axial + 1)
    verts = np.concatenate([np.column_stack([np.full(n2, z), pts2]) for z in x1])
    s = np.sort(tris, axis=1)
    a, b, c = s[:, 0], s[:, 1], s[:, 2]
    cells, ctags = [], []
    for layer in range(n_axial):
        lo, hi = layer * n2, (layer + 1) * n2
        cells += [np.stack([a + lo, b + lo, c + lo, c + hi], 1),
                  np.stack([a + lo, b + lo, b + hi, c + hi], 1),
                  np.stack([a + lo, a + hi, b + hi, c + hi], 1)]
        ctags += [ttags] * 3
    cells = np.concatenate(cells)
    ctags = np.concatenate(ctags)
    # positive orientation
    _, det, _ = tet_geometry(verts, cells)
    neg = det < 0
    cells[neg, 2], cells[neg, 3] = cells[neg, 3].copy(), cells[neg, 2].copy()
    return verts, cells, ctags


def min_dihedral_angles(verts, cells) -> np.ndarray:
    """Smallest interior dihedral angle (radians) of every tetrahedron."""
    x = verts[cells]
    normals = []
    for f in TET_FACES:
        p = x[:, f]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        normals.append(n)
    best = np.full(len(cells), np.pi)
    # faces opposite vertices i and j meet along the edge not containing i, j
    for i in range(4):
        for j in range(i + 1, 4):
            ni = normals[i] * _face_sign(x, i)
            nj = normals[j] * _face_sign(x, j)
            ang = np.pi - np.arccos(np.clip(np.sum(ni * nj, axis=1), -1, 1))
            best = np.minimum(best, ang)
    return best


def _face_sign(x, i):
    # orient the face opposite vertex i outward
    f = TET_FACES[i]
    p = x[:, f]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    return np.sign(np.sum(n * (p[:, 0] - x[:, i]), axis=1))[:, None]


def _faces(cells):
    f = cells[:, TET_FACES].reshape(-1, 3)
    owner = np.repeat(np.arange(len(cells)), 4)
    key = np.sort(f, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return f, owner, inv.ravel(), counts


def _outward(verts, tris, owner_cells):
    p = verts[tris]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    cen = verts[owner_cells].mean(axis=1)
    sgn = np.sign(np.sum(n * (p.mean(axis=1) - cen), axis=1))
    return n * sgn[:, None]


def _submesh(verts, cells, side_mask, facets, ftags, fcells, fnormals) -> SubMesh:
    sub_cells = cells[side_mask]
    gids = np.unique(sub_cells)
    local = np.full(len(verts), -1)
    local[gids] = np.arange(len(gids))
    cell_local = np.full(len(cells), -1)
    cell_local[np.flatnonzero(side_mask)] = np.arange(side_mask.sum())
    return SubMesh(vertices=verts[gids], cells=local[sub_cells], global_ids=gids,
                   facets=local[facets], facet_tags=ftags, facet_cells=cell_local[fcells],
                   facet_normals=fnormals)


def build_reference_mesh(params, resolution: Resolution | None = None) -> ReferenceMesh:
    """Build the tagged reference mesh for ``params.R0`` and ``params.L``."""
    res = resolution or Resolution()
    res.check()
    R0, L = params.R0, params.L
    if not 0 < R0 < 0.5:
        raise MeshError("R0 must lie in (0, 1/2)")
    pts2, quads, qtags = _cross_section(R0, res)
    tris, ttags = _triangulate(quads, qtags)
    verts, cells, ctags = _extrude(pts2, tris, ttags, L, res.n_axial)
    _, det, _ = tet_geometry(verts, cells)
    if np.any(det <= 1e-14):
        raise MeshError("mesh contains cells with non-positive volume")

    f, owner, inv, counts = _faces(cells)
    # boundary faces of the box: seen once
    bnd = counts[inv] == 1
    btri, bown = f[bnd], owner[bnd]
    bx = verts[btri].mean(axis=1)
    tol = 1e-12
    btag = np.full(len(btri), GAMMA_N)
    ends = (np.abs(bx[:, 0]) < tol) | (np.abs(bx[:, 0] - L) < tol)
    btag[ends & (ctags[bown] == FLUID)] = GAMMA_F
    btag[np.abs(bx[:, 2] - 0.5) < tol] = GAMMA_D
    # interface: internal faces whose two cells differ in tag
    inner = counts[inv] == 2
    idx = np.flatnonzero(inner)
    idx = idx[np.argsort(inv[idx], kind="stable")]
    c0, c1 = owner[idx[0::2]], owner[idx[1::2]]
    mixed = ctags[c0] != ctags[c1]
    fl_cell = np.where(ctags[c0[mixed]] == FLUID, c0[mixed], c1[mixed])
    so_cell = np.where(ctags[c0[mixed]] == FLUID, c1[mixed], c0[mixed])
    stri = f[idx[0::2]][mixed]

    facets = np.concatenate([stri, btri])
    ftags = np.concatenate([np.full(len(stri), SIGMA), btag])

    fluid_mask = ctags == FLUID
    # fluid facets: Sigma plus the fluid ends
    fb = ctags[bown] == FLUID
    fl_tris = np.concatenate([stri, btri[fb]])
    fl_tags = np.concatenate([np.full(len(stri), SIGMA), btag[fb]])
    fl_own = np.concatenate([fl_cell, bown[fb]])
    fluid = _submesh(verts, cells, fluid_mask, fl_tris, fl_tags, fl_own,
                     _outward(verts, fl_tris, cells[fl_own]))
    sb = ~fb
    so_tris = np.concatenate([stri, btri[sb]])
    so_tags = np.concatenate([np.full(len(stri), SIGMA), btag[sb]])
    so_own = np.concatenate([so_cell, bown[sb]])
    solid = _submesh(verts, cells, ~fluid_mask, so_tris, so_tags, so_own,
                     _outward(verts, so_tris, cells[so_own]))
    if np.any(fl_tags == GAMMA_D) or np.any(fl_tags == GAMMA_N):
        raise MeshError("fluid touches the outer wall")

    sig = np.unique(stri)
    fl_local = np.searchsorted(fluid.global_ids, sig)
    so_local = np.searchsorted(solid.global_ids, sig)
    if not (np.array_equal(fluid.global_ids[fl_local], sig) and np.array_equal(solid.global_ids[so_local], sig)):
        raise MeshError("unmatched interface vertex")

    mesh = ReferenceMesh(vertices=verts, cells=cells, cell_tags=ctags, facets=facets, facet_tags=ftags,
                         resolution=res, L=L, R0=R0, fluid=fluid, solid=solid,
                         sigma_global=sig, sigma_fluid=fl_local, sigma_solid=so_local)
    q = mesh.min_dihedral_deg()
    if q < res.min_dihedral_deg:
        raise MeshError(f"minimum dihedral angle {q:.2f} deg below floor {res.min_dihedral_deg}")
    return mesh


def interface_pairs(mesh: ReferenceMesh):
    """``(fluid_dof, solid_dof, coordinate)`` for each vertex on the wall."""
    return [(int(a), int(b), mesh.vertices[g].copy())
            for g, a, b in zip(mesh.sigma_global, mesh.sigma_fluid, mesh.sigma_solid)]


# ---------------------------------------------------------------------------
# quadratic Lagrange space on a submesh
# ---------------------------------------------------------------------------

@dataclass
class P2Space:
    """Scalar P2 numbering: vertices first, then edge midpoints."""

    mesh: SubMesh
    edges: np.ndarray
    cell_dofs: np.ndarray
    nodes: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.nodes)

    def facet_dofs(self, facets: np.ndarray) -> np.ndarray:
        """P2 dofs ``(nf, 6)`` of triangles: vertices then ``TRI_EDGES`` midpoints."""
        nv = self.mesh.n_vertices
        out = [facets[:, 0], facets[:, 1], facets[:, 2]]
        for i, j in TRI_EDGES:
            out.append(nv + self._edge_id(facets[:, i], facets[:, j]))
        return np.stack(out, axis=1)

    def _edge_id(self, a, b):
        nv = self.mesh.n_vertices
        key = np.minimum(a, b) * nv + np.maximum(a, b)
        ekey = self.edges[:, 0] * nv + self.edges[:, 1]
        pos = np.searchsorted(ekey, key)
        if np.any(pos >= len(ekey)) or np.any(ekey[np.minimum(pos, len(ekey) - 1)] != key):
            raise MeshError("facet edge not found in the edge list")
        return pos

    def boundary_dofs(self, tag: int) -> np.ndarray:
        f, _, _ = self.mesh.facets_with(tag)
        if len(f) == 0:
            return np.zeros(0, dtype=int)
        return np.unique(self.facet_dofs(f))


def p2_space(mesh: SubMesh) -> P2Space:
    nv = mesh.n_vertices
    e = np.sort(mesh.cells[:, TET_EDGES].reshape(-1, 2), axis=1)
    key = e[:, 0] * nv + e[:, 1]
    ukey, inv = np.unique(key, return_inverse=True)
    edges = np.stack([ukey // nv, ukey % nv], axis=1)
    cell_dofs = np.concatenate([mesh.cells, nv + inv.reshape(-1, 6)], axis=1)
    nodes = np.concatenate([mesh.vertices, 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])])
    return P2Space(mesh=mesh, edges=edges, cell_dofs=cell_dofs, nodes=nodes)


def export_vtk(mesh: ReferenceMesh, path, point_data: dict | None = None) -> None:
    """Legacy ASCII VTK of the full mesh with subdomain tags."""
    from .io import write_vtk

    write_vtk(path, mesh.vertices, mesh.cells, point_data=point_data or {},
              cell_data={"subdomain": mesh.cell_tags})
