"""Dense layer potentials and volume potentials for complex wavenumbers.

Operators on a surface Gamma with outward normal nu, all built from the
Helmholtz kernel G_z(x, y) = exp(i z |x-y|) / (4 pi |x-y|), which is entire
in z (this is what permits evaluation in the lower half-plane):

    S_z  phi(x) = int_Gamma G_z(x, y) phi(y) dsigma(y),          x on Gamma
    K*_z phi(x) = d/dnu_x int_Gamma G_z(x, y) phi(y) dsigma(y),  x on Gamma
    K_z  phi(x) = int_Gamma d/dnu_y G_z(x, y) phi(y) dsigma(y),  x on Gamma
    SL_z phi(x) = int_Gamma G_z(x, y) phi(y) dsigma(y),          x off Gamma
    N_z  f(x)   = int_Omega G_z(x, y) f(y) dy

Discretization: P0 panels, centroid collocation.  Regular interactions use
the per-panel rule carried by the mesh; close panel pairs switch to a
subdivided rule graded by the target-to-panel distance; the weakly singular
self terms of S use a three-subtriangle Duffy (polar) rule about the
centroid.  On flat panels nu(x).(x - y) vanishes identically over the self
panel, so the Duffy rule gives exact zero K/K* self entries.

Two structural choices keep the discrete operators consistent with the
identities the solver leans on:

* S is symmetrized in kernel-value form (entry (i,j) is a_j times the
  average kernel value; the averaged kernel values form an exactly
  symmetric matrix, matching the symmetric kernel);
* K is the operator assembled by direct quadrature and K* is its exact
  area-weighted adjoint K* = A^-1 K^T A.  Each K row integrates the
  d/dnu_y kernel over the whole closed surface, so the Gauss solid-angle
  identity forces K 1 = -1/2 at quadrature accuracy, which pins the
  equilibrium eigenvalue of (1/2 I + K*_0) at ~1e-8 instead of the O(h)
  drift of a plain collocation K*.  The high-contrast resonance condition
  divides that eigenvalue error by eps^2, so this is what makes resonance
  locations meaningful at desk-scale refinement.
"""

from __future__ import annotations

import math
import struct
import uuid
import weakref
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree

from .errors import NearSingularEvaluationError, UsageError
from .geometry import (
    SurfaceMesh,
    TRIANGLE_RULE_BARY,
    TRIANGLE_RULE_WEIGHTS,
    VolumeQuadrature,
)

FOUR_PI = 4.0 * np.pi

# (distance/diameter threshold, subdivision depth) tiers for close panel
# interactions; pairs farther than the first threshold keep the mesh rule.
# Operator entries are held near quadrature precision; off-surface potential
# evaluation tolerates ~1e-5 relative and uses the cheaper table.
NEAR_TIERS = ((3.0, 1), (1.5, 2), (0.8, 3), (0.4, 4), (0.2, 5), (0.09, 6))
POINT_TIERS = ((1.3, 2), (0.6, 3), (0.25, 4), (0.1, 5), (0.04, 6))
# Radial x angular orders of the self-panel polar rule.  The radial integrand
# is constant for the static kernel and near-polynomial otherwise; the
# angular one has complex poles that force the higher order.
DUFFY_ORDER = (6, 16)

_ROW_CHUNK_ENTRIES = 4_000_000


# ---------------------------------------------------------------------------
# Data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundaryOperator:
    """Dense operator on the panel degrees of freedom of one mesh."""

    matrix: np.ndarray
    kernel_kind: str          # 'S' | 'K' | 'Kstar'
    z: complex
    mesh_id: str

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, density: "Density") -> "Density":
        if density.mesh_id != self.mesh_id:
            raise UsageError("density and operator live on different meshes")
        out_space = "surface_trace" if self.kernel_kind == "S" else density.trace_space
        return Density(self.matrix @ density.coefficients, self.mesh_id, out_space)


@dataclass(frozen=True)
class Density:
    """Complex panel coefficients of a P0 surface function."""

    coefficients: np.ndarray
    mesh_id: str
    trace_space: str = "surface_density"   # H^{-1/2} role; 'surface_trace' = H^{1/2}

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=complex)
        if not np.all(np.isfinite(coeffs)):
            raise UsageError("density has non-finite coefficients")
        object.__setattr__(self, "coefficients", coeffs)


@dataclass(frozen=True)
class VolumeField:
    """Complex values on the nodes of one volume quadrature."""

    values: np.ndarray
    quadrature_id: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=complex)
        if not np.all(np.isfinite(vals)):
            raise UsageError("volume field has non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class VolumeOperator:
    """Dense Newtonian operator on the nodes of one volume quadrature."""

    matrix: np.ndarray
    z: complex
    quadrature_id: str


# ---------------------------------------------------------------------------
# Kernels: callables of (r, ndot) where ndot = nu(x).(x - y)
# ---------------------------------------------------------------------------

def helmholtz_kernel(z):
    def kern(r, ndot):
        return np.exp((1j * z) * r) / (FOUR_PI * r)
    return kern


def helmholtz_normal_kernel(z):
    """nu(x).grad_x G_z = nu(x).(x-y) (izr - 1) e^{izr} / (4 pi r^3).

    With ndot = nu(y).(x-y) and a sign flip this is the d/dnu_y kernel.
    """
    def kern(r, ndot):
        return ndot * ((1j * z) * r - 1.0) * np.exp((1j * z) * r) / (FOUR_PI * r**3)
    return kern


def helmholtz_normal_source_kernel(z):
    """d/dnu_y G_z = -nu(y).(x-y) (izr - 1) e^{izr} / (4 pi r^3)."""
    base = helmholtz_normal_kernel(z)
    def kern(r, ndot):
        return -base(r, ndot)
    return kern


def series_kernel_s(j: int):
    """j-th Taylor coefficient kernel of G_z in z: i^j r^(j-1) / (4 pi j!)."""
    c = (1j) ** j / (FOUR_PI * math.factorial(j))
    def kern(r, ndot):
        return c * r ** (j - 1)
    return kern


def series_kernel_k(j: int):
    """j-th Taylor coefficient kernel of d/dnu_y G_z: -i^j (j-1) r^(j-3) nu(y).(x-y) / (4 pi j!)."""
    c = -((1j) ** j) * (j - 1) / (FOUR_PI * math.factorial(j))
    def kern(r, ndot):
        return c * r ** (j - 3) * ndot
    return kern


# ---------------------------------------------------------------------------
# Refined rules and per-mesh geometry tables
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _refined_rule_bary(depth: int):
    """Mesh rule mapped onto the 4**depth uniform subtriangles of a triangle.

    Returns barycentric nodes (R, 3) and weights (R,) summing to 1.
    """
    tris = np.eye(3)[None, :, :]
    for _ in range(depth):
        c0, c1, c2 = tris[:, 0], tris[:, 1], tris[:, 2]
        m01, m12, m20 = 0.5 * (c0 + c1), 0.5 * (c1 + c2), 0.5 * (c2 + c0)
        tris = np.concatenate(
            [
                np.stack([c0, m01, m20], axis=1),
                np.stack([c1, m12, m01], axis=1),
                np.stack([c2, m20, m12], axis=1),
                np.stack([m01, m12, m20], axis=1),
            ]
        )
    nodes = np.einsum("qb,tbc->tqc", TRIANGLE_RULE_BARY, tris).reshape(-1, 3)
    weights = np.tile(TRIANGLE_RULE_WEIGHTS / 4.0**depth, tris.shape[0])
    return nodes, weights


def _tier_depth(ratio: np.ndarray, tiers=NEAR_TIERS) -> np.ndarray:
    """Subdivision depth per target/panel distance ratio (0 = mesh rule)."""
    depth = np.zeros(ratio.shape, dtype=np.int64)
    for threshold, d in tiers:
        depth[ratio < threshold] = d
    return depth


def _point_triangle_distance(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Exact distance from points[i] to the (paired) triangle triangles[i].

    Closest point is either the in-plane projection (when its barycentric
    coordinates are nonnegative) or a point on one of the edges.
    """
    a, b, c = triangles[:, 0], triangles[:, 1], triangles[:, 2]
    ab, ac, ap = b - a, c - a, points - a

    d00 = np.einsum("ij,ij->i", ab, ab)
    d01 = np.einsum("ij,ij->i", ab, ac)
    d11 = np.einsum("ij,ij->i", ac, ac)
    d20 = np.einsum("ij,ij->i", ap, ab)
    d21 = np.einsum("ij,ij->i", ap, ac)
    denom = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom

    proj = a + v[:, None] * ab + w[:, None] * ac
    d_plane = np.linalg.norm(points - proj, axis=1)

    def seg_dist(p, s0, s1):
        d = s1 - s0
        t = np.einsum("ij,ij->i", p - s0, d) / np.einsum("ij,ij->i", d, d)
        t = np.clip(t, 0.0, 1.0)
        return np.linalg.norm(p - (s0 + t[:, None] * d), axis=1)

    d_edges = np.minimum(
        seg_dist(points, a, b),
        np.minimum(seg_dist(points, b, c), seg_dist(points, c, a)),
    )
    inside = (v >= 0.0) & (w >= 0.0) & (v + w <= 1.0)
    return np.where(inside, d_plane, d_edges)


# Meshes up to this panel count cache the full distance/projection arrays,
# making repeated assemblies (resonance searches, frequency sweeps) cheap.
_GEOMETRY_CACHE_LIMIT = 2000


class _MeshTables:
    """Cached assembly geometry for one mesh (flat rule, near pairs, Duffy)."""

    def __init__(self, mesh: SurfaceMesh):
        self.mesh = mesh
        self.src_points = mesh.quad_points.reshape(-1, 3)
        self.src_weights = mesh.quad_weights.reshape(-1)
        self.n_quad = mesh.quad_points.shape[1]
        self.diameters = mesh.panel_diameters
        self.tree = cKDTree(mesh.panel_centroids)
        self._near_groups = None
        self._duffy = None
        self._far_geo = {}
        self._near_geo = {}
        self._self_geo = {}
        self._refined_full = {}

    @property
    def cacheable(self) -> bool:
        return self.mesh.n_panels <= _GEOMETRY_CACHE_LIMIT

    def far_geometry(self, ndot_side):
        """(r, ndot) between all centroids and all rule nodes; cached."""
        if ndot_side not in self._far_geo:
            mesh = self.mesh
            d = mesh.panel_centroids[:, None, :] - self.src_points[None, :, :]
            if "none" in self._far_geo:
                r = self._far_geo["none"][0]
            else:
                r = np.sqrt(np.einsum("iqx,iqx->iq", d, d))
                self._far_geo["none"] = (r, None)
            if ndot_side == "target":
                ndot = np.einsum("ix,iqx->iq", mesh.panel_normals, d)
            elif ndot_side == "source":
                src_nrm = np.repeat(mesh.panel_normals, self.n_quad, axis=0)
                ndot = np.einsum("qx,iqx->iq", src_nrm, d)
            else:
                return self._far_geo["none"]
            self._far_geo[ndot_side] = (r, ndot)
        return self._far_geo[ndot_side]

    def near_geometry(self, ndot_side):
        """Per near group: (ti, tj, r, ndot, weights); cached."""
        key = ndot_side
        if key not in self._near_geo:
            mesh = self.mesh
            blocks = []
            for depth, ti, tj in self.near_groups():
                nodes, weights = self.refined_nodes(depth, tj)
                d = mesh.panel_centroids[ti][:, None, :] - nodes
                r = np.sqrt(np.einsum("prx,prx->pr", d, d))
                if ndot_side == "none":
                    ndot = None
                else:
                    side = ti if ndot_side == "target" else tj
                    ndot = np.einsum("px,prx->pr", mesh.panel_normals[side], d)
                blocks.append((ti, tj, r, ndot, weights))
            self._near_geo[key] = blocks
        return self._near_geo[key]

    def self_geometry(self):
        if not self._self_geo:
            nodes, weights = self.duffy()
            mesh = self.mesh
            d = mesh.panel_centroids[:, None, :] - nodes
            r = np.sqrt(np.einsum("prx,prx->pr", d, d))
            ndot = np.einsum("px,prx->pr", mesh.panel_normals, d)
            self._self_geo["geo"] = (r, ndot, weights)
        return self._self_geo["geo"]

    # -- near panel pairs, grouped by subdivision depth --------------------
    def near_groups(self):
        if self._near_groups is None:
            mesh = self.mesh
            radius = NEAR_TIERS[0][0] * float(self.diameters.max()) + float(self.diameters.max())
            pairs = self.tree.query_pairs(r=radius, output_type="ndarray")
            if pairs.size == 0:
                self._near_groups = []
                return self._near_groups
            ti = np.concatenate([pairs[:, 0], pairs[:, 1]])
            tj = np.concatenate([pairs[:, 1], pairs[:, 0]])
            tri = mesh.vertices[mesh.panels[tj]]
            dist = _point_triangle_distance(mesh.panel_centroids[ti], tri)
            depth = _tier_depth(dist / self.diameters[tj])
            groups = []
            for d in np.unique(depth):
                if d == 0:
                    continue
                sel = depth == d
                groups.append((int(d), ti[sel], tj[sel]))
            self._near_groups = groups
        return self._near_groups

    def refined_nodes(self, depth: int, panel_idx: np.ndarray):
        """Physical subdivided rule on the given panels: (n, R, 3), (n, R).

        Shallow depths are cached for the whole mesh and gathered by index;
        deep rules (rare pairs) are built on the fly.
        """
        if depth <= 3 and self.cacheable:
            if depth not in self._refined_full:
                bary, w = _refined_rule_bary(depth)
                tri = self.mesh.vertices[self.mesh.panels]
                self._refined_full[depth] = (
                    np.einsum("rb,nbx->nrx", bary, tri),
                    w[None, :] * self.mesh.panel_areas[:, None],
                )
            nodes, weights = self._refined_full[depth]
            return nodes[panel_idx], weights[panel_idx]
        bary, w = _refined_rule_bary(depth)
        tri = self.mesh.vertices[self.mesh.panels[panel_idx]]
        nodes = np.einsum("rb,nbx->nrx", bary, tri)
        weights = w[None, :] * self.mesh.panel_areas[panel_idx, None]
        return nodes, weights

    # -- Duffy self rule ----------------------------------------------------
    def duffy(self):
        """Polar rule about the centroid on every panel: (P, D, 3), (P, D)."""
        if self._duffy is None:
            nu_rad, nv_ang = DUFFY_ORDER
            u, wu = np.polynomial.legendre.leggauss(nu_rad)
            u, wu = 0.5 * (u + 1.0), 0.5 * wu
            v, wv = np.polynomial.legendre.leggauss(nv_ang)
            v, wv = 0.5 * (v + 1.0), 0.5 * wv
            uu, vv = np.meshgrid(u, v, indexing="ij")
            ww = np.outer(wu, wv)
            mesh = self.mesh
            tri = mesh.vertices[mesh.panels]
            c = mesh.panel_centroids
            nodes, weights = [], []
            for k in range(3):
                va = tri[:, k]
                vb = tri[:, (k + 1) % 3]
                e0 = va - c
                e1 = vb - va
                # y = c + u e0 + u v e1, block Jacobian u |e0 x e1|
                pts = (
                    c[:, None, None, :]
                    + uu[None, :, :, None] * e0[:, None, None, :]
                    + (uu * vv)[None, :, :, None] * e1[:, None, None, :]
                )
                jac = np.linalg.norm(np.cross(e0, e1), axis=1)
                wts = (ww * uu)[None, :, :] * jac[:, None, None]
                nodes.append(pts.reshape(len(tri), -1, 3))
                weights.append(wts.reshape(len(tri), -1))
            self._duffy = (np.concatenate(nodes, axis=1), np.concatenate(weights, axis=1))
        return self._duffy


_TABLES: "weakref.WeakKeyDictionary[SurfaceMesh, _MeshTables]" = weakref.WeakKeyDictionary()


def mesh_tables(mesh: SurfaceMesh) -> _MeshTables:
    tables = _TABLES.get(mesh)
    if tables is None:
        tables = _MeshTables(mesh)
        _TABLES[mesh] = tables
    return tables


# ---------------------------------------------------------------------------
# Assembly engine
# ---------------------------------------------------------------------------

def _row_chunks(n_rows: int, n_cols: int):
    step = max(1, _ROW_CHUNK_ENTRIES // max(1, n_cols))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


def _assemble_boundary(mesh: SurfaceMesh, kern, symmetrize: bool = False,
                       ndot_side: str = "target") -> np.ndarray:
    """Collocation assembly; ndot passed to the kernel uses the target panel
    normal ('target'), the source panel normal ('source'), or None."""
    tb = mesh_tables(mesh)
    n = mesh.n_panels
    cen = mesh.panel_centroids
    nrm = mesh.panel_normals
    out = np.empty((n, n), dtype=complex)

    if tb.cacheable:
        r, ndot = tb.far_geometry(ndot_side)
        vals = kern(r, ndot) * tb.src_weights[None, :]
        out[:] = vals.reshape(n, n, tb.n_quad).sum(axis=2)
        for ti, tj, r, ndot, weights in tb.near_geometry(ndot_side):
            out[ti, tj] = (kern(r, ndot) * weights).sum(axis=1)
    else:
        src, w = tb.src_points, tb.src_weights
        src_nrm = np.repeat(nrm, tb.n_quad, axis=0)
        for rows in _row_chunks(n, src.shape[0]):
            d = cen[rows, None, :] - src[None, :, :]
            r = np.sqrt(np.einsum("iqx,iqx->iq", d, d))
            if ndot_side == "target":
                ndot = np.einsum("ix,iqx->iq", nrm[rows], d)
            elif ndot_side == "source":
                ndot = np.einsum("qx,iqx->iq", src_nrm, d)
            else:
                ndot = None
            vals = kern(r, ndot) * w[None, :]
            out[rows] = vals.reshape(vals.shape[0], n, tb.n_quad).sum(axis=2)
        for depth, ti, tj in tb.near_groups():
            nodes, weights = tb.refined_nodes(depth, tj)
            d = cen[ti][:, None, :] - nodes
            r = np.sqrt(np.einsum("prx,prx->pr", d, d))
            if ndot_side == "none":
                ndot = None
            else:
                ndot = np.einsum("px,prx->pr", nrm[ti if ndot_side == "target" else tj], d)
            out[ti, tj] = (kern(r, ndot) * weights).sum(axis=1)

    r, ndot, self_weights = tb.self_geometry()
    idx = np.arange(n)
    out[idx, idx] = (kern(r, ndot) * self_weights).sum(axis=1)

    if symmetrize:
        # Kernel symmetry holds per unit source area: entry (i, j) is the
        # panel-j integral, i.e. (avg kernel value) * a_j.  Average the
        # kernel values, not the raw entries, then restore column areas.
        a = mesh.panel_areas
        kv = out / a[None, :]
        kv += kv.T
        out = 0.5 * kv * a[None, :]
    return out


def assemble_S(mesh: SurfaceMesh, z: complex) -> BoundaryOperator:
    """Single-layer boundary operator S_z (complex-symmetric dense matrix)."""
    matrix = _assemble_boundary(mesh, helmholtz_kernel(z), symmetrize=True, ndot_side="none")
    return BoundaryOperator(matrix, "S", complex(z), mesh.mesh_id)


def assemble_K(mesh: SurfaceMesh, z: complex) -> BoundaryOperator:
    """Neumann-Poincare operator K_z (d/dnu_y under the integral).

    Each row integrates the kernel over the whole closed surface, so the
    Gauss solid-angle identity gives K_0 1 = -1/2 at quadrature accuracy.
    """
    matrix = _assemble_boundary(mesh, helmholtz_normal_source_kernel(z), ndot_side="source")
    return BoundaryOperator(matrix, "K", complex(z), mesh.mesh_id)


def assemble_Kstar(mesh: SurfaceMesh, z: complex) -> BoundaryOperator:
    """Neumann-Poincare operator K*_z, the area-weighted adjoint of K_z.

    Entrywise K* = A^-1 K^T A with A = diag(panel areas): the discrete
    realization of the duality <K* phi, psi> = <phi, K psi>.  This choice
    transfers K's exact row identity to the spectrum of K*, keeping the
    simple eigenvalue of (1/2 I + K*_0) at 0 up to quadrature error.
    """
    k = assemble_K(mesh, z)
    a = mesh.panel_areas
    matrix = (k.matrix * a[:, None]).T / a[:, None]
    return BoundaryOperator(np.ascontiguousarray(matrix), "Kstar", complex(z), mesh.mesh_id)


# ---------------------------------------------------------------------------
# Off-surface potentials
# ---------------------------------------------------------------------------

def _near_point_groups(mesh: SurfaceMesh, points: np.ndarray, tiers=POINT_TIERS):
    """(depth, point idx, panel idx) groups for points close to panels."""
    tb = mesh_tables(mesh)
    dmax = float(tb.diameters.max())
    radius = (tiers[0][0] + 1.1) * dmax
    neighbor_lists = tb.tree.query_ball_point(points, r=radius)
    lengths = np.fromiter((len(lst) for lst in neighbor_lists), count=len(points),
                          dtype=np.int64)
    if lengths.sum() == 0:
        return []
    pi = np.repeat(np.arange(len(points), dtype=np.int64), lengths)
    pj = np.concatenate([np.asarray(lst, dtype=np.int64)
                         for lst in neighbor_lists if lst])
    tri = mesh.vertices[mesh.panels[pj]]
    dist = _point_triangle_distance(points[pi], tri)
    depth = _tier_depth(dist / tb.diameters[pj], tiers)
    groups = []
    for d in np.unique(depth):
        if d == 0:
            continue
        sel = depth == d
        groups.append((int(d), pi[sel], pj[sel]))
    return groups


def _potential_apply(mesh: SurfaceMesh, kern, coefficients: np.ndarray,
                     points: np.ndarray) -> np.ndarray:
    """Sum_j coeff_j * int_{panel j} kern(|x - y|) dsigma(y) at each point.

    Radial kernels only (ndot is not available off-surface).  Close
    point-panel pairs are re-integrated on the graded subdivided rules.
    """
    tb = mesh_tables(mesh)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    m = points.shape[0]
    n = mesh.n_panels
    out = np.zeros(m, dtype=complex)

    src, w = tb.src_points, tb.src_weights
    cw = np.repeat(coefficients, tb.n_quad) * w
    for rows in _row_chunks(m, src.shape[0]):
        d = points[rows, None, :] - src[None, :, :]
        r = np.sqrt(np.einsum("iqx,iqx->iq", d, d))
        out[rows] = kern(r, None) @ cw

    groups = _near_point_groups(mesh, points)
    if groups:
        # remove the coarse contribution of near panels, then add refined one
        for depth, pi, pj in groups:
            block = mesh.quad_points[pj]                       # (p, K, 3)
            d = points[pi][:, None, :] - block
            r = np.sqrt(np.einsum("prx,prx->pr", d, d))
            coarse = (kern(r, None) * mesh.quad_weights[pj]).sum(axis=1)
            nodes, weights = tb.refined_nodes(depth, pj)
            d = points[pi][:, None, :] - nodes
            r = np.sqrt(np.einsum("prx,prx->pr", d, d))
            fine = (kern(r, None) * weights).sum(axis=1)
            np.add.at(out, pi, coefficients[pj] * (fine - coarse))
    return out


def _distance_to_surface(mesh: SurfaceMesh, points: np.ndarray) -> np.ndarray:
    """Exact distance from each point to the panel surface."""
    tb = mesh_tables(mesh)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    d_cen, j_cen = tb.tree.query(points, k=1)
    radius = np.maximum(d_cen + tb.diameters.max(), 1.5 * tb.diameters.max())
    dist = np.full(points.shape[0], np.inf)
    lists = tb.tree.query_ball_point(points, r=radius)
    for i, lst in enumerate(lists):
        cand = np.asarray(lst if lst else [j_cen[i]], dtype=np.int64)
        tri = mesh.vertices[mesh.panels[cand]]
        pts = np.broadcast_to(points[i], (len(cand), 3))
        dist[i] = _point_triangle_distance(pts, tri).min()
    return dist


def eval_SL(mesh: SurfaceMesh, density: Density, z: complex, points) -> np.ndarray:
    """Single-layer potential SL_z at points off the surface.

    Raises NearSingularEvaluationError when a point is closer to the surface
    than the smallest panel diameter; refine the mesh or move the point.
    """
    if density.mesh_id != mesh.mesh_id:
        raise UsageError("density was built on a different mesh")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    dist = _distance_to_surface(mesh, points)
    if np.any(dist <= mesh.h_min):
        offender = int(np.argmin(dist))
        raise NearSingularEvaluationError(
            f"evaluation point {points[offender]} is {dist[offender]:.3e} from the "
            f"surface (< h_min = {mesh.h_min:.3e})"
        )
    return _potential_apply(mesh, helmholtz_kernel(z), density.coefficients, points)


def eval_SL_unchecked(mesh: SurfaceMesh, density: Density, z: complex, points) -> np.ndarray:
    """SL_z without the distance guard; accuracy degrades inside ~0.1 panel sizes."""
    if density.mesh_id != mesh.mesh_id:
        raise UsageError("density was built on a different mesh")
    return _potential_apply(mesh, helmholtz_kernel(z), density.coefficients,
                            np.asarray(points, dtype=float).reshape(-1, 3))


# ---------------------------------------------------------------------------
# Newtonian (volume) operator
# ---------------------------------------------------------------------------

def _newtonian_diag(weights: np.ndarray, z: complex) -> np.ndarray:
    """Self-cell correction: analytic kernel integral over the volume-equivalent ball."""
    r0 = (3.0 * weights / FOUR_PI) ** (1.0 / 3.0)
    if z == 0:
        return 0.5 * r0**2 + 0j
    izr = 1j * z * r0
    return (np.exp(izr) * (1.0 - izr) - 1.0) / z**2


def assemble_N(quadrature: VolumeQuadrature, z: complex) -> VolumeOperator:
    """Dense Newtonian operator on the quadrature nodes.

    Memory is O(M^2); for large node counts use apply_N instead.
    """
    y = quadrature.nodes
    w = quadrature.weights
    m = y.shape[0]
    kern = helmholtz_kernel(z)
    out = np.empty((m, m), dtype=complex)
    for rows in _row_chunks(m, m):
        d = y[rows, None, :] - y[None, :, :]
        r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
        lo = rows.start
        for i in range(r.shape[0]):
            r[i, lo + i] = 1.0       # masked below
        out[rows] = kern(r, None) * w[None, :]
    idx = np.arange(m)
    out[idx, idx] = _newtonian_diag(w, z)
    return VolumeOperator(out, complex(z), quadrature.quadrature_id)


def apply_N(quadrature: VolumeQuadrature, field: VolumeField, z: complex) -> np.ndarray:
    """Matrix-free N_z applied to a field on the quadrature's own nodes."""
    if field.quadrature_id != quadrature.quadrature_id:
        raise UsageError("field was sampled on a different volume quadrature")
    y, w = quadrature.nodes, quadrature.weights
    m = y.shape[0]
    kern = helmholtz_kernel(z)
    vw = field.values * w
    out = np.empty(m, dtype=complex)
    for rows in _row_chunks(m, m):
        d = y[rows, None, :] - y[None, :, :]
        r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
        lo = rows.start
        for i in range(r.shape[0]):
            r[i, lo + i] = 1.0
        block = kern(r, None)
        for i in range(r.shape[0]):
            block[i, lo + i] = 0.0
        out[rows] = block @ vw
    return out + _newtonian_diag(w, z) * field.values


def eval_N(quadrature: VolumeQuadrature, field: VolumeField, z: complex, points) -> np.ndarray:
    """Newtonian potential at points off the node set."""
    if field.quadrature_id != quadrature.quadrature_id:
        raise UsageError("field was sampled on a different volume quadrature")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    kern = helmholtz_kernel(z)
    vw = field.values * quadrature.weights
    out = np.empty(points.shape[0], dtype=complex)
    for rows in _row_chunks(points.shape[0], quadrature.n_nodes):
        d = points[rows, None, :] - quadrature.nodes[None, :, :]
        r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
        out[rows] = kern(r, None) @ vw
    return out


def normal_derivative_of_N(mesh: SurfaceMesh, quadrature: VolumeQuadrature,
                           field: VolumeField, z: complex) -> Density:
    """d/dnu N_z[field] at the panel collocation points.

    All quadrature nodes are strictly interior, so the differentiated kernel
    is smooth at the surface and a direct sum applies.
    """
    if quadrature.mesh_id != mesh.mesh_id:
        raise UsageError("volume quadrature was built on a different mesh")
    if field.quadrature_id != quadrature.quadrature_id:
        raise UsageError("field was sampled on a different volume quadrature")
    kern = helmholtz_normal_kernel(z)
    vw = field.values * quadrature.weights
    cen, nrm = mesh.panel_centroids, mesh.panel_normals
    out = np.empty(mesh.n_panels, dtype=complex)
    for rows in _row_chunks(mesh.n_panels, quadrature.n_nodes):
        d = cen[rows, None, :] - quadrature.nodes[None, :, :]
        r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
        ndot = np.einsum("ix,ijx->ij", nrm[rows], d)
        out[rows] = (kern(r, ndot)) @ vw
    return Density(out, mesh.mesh_id, "surface_density")


# ---------------------------------------------------------------------------
# Small-z series terms
# ---------------------------------------------------------------------------

def operator_series_term(kind: str, j: int, mesh: SurfaceMesh = None,
                         quadrature: VolumeQuadrature = None, points=None):
    """Discrete j-th Taylor coefficient (j >= 1) of an operator family in z.

    kind 'S', 'K', 'Kstar' need `mesh`; 'N' needs `quadrature`; 'SL' needs
    `mesh` and `points`.  The truncated series order-0 term plus
    sum_{j<=J} z^j T_j converges to the assembled operator at fixed small z.
    """
    if j < 1:
        raise UsageError(f"series order must be >= 1, got {j}")
    if kind == "S":
        matrix = _assemble_boundary(mesh, series_kernel_s(j), symmetrize=True, ndot_side="none")
        return BoundaryOperator(matrix, "S", complex("nan"), mesh.mesh_id)
    if kind == "K":
        matrix = _assemble_boundary(mesh, series_kernel_k(j), ndot_side="source")
        return BoundaryOperator(matrix, "K", complex("nan"), mesh.mesh_id)
    if kind == "Kstar":
        k = operator_series_term("K", j, mesh=mesh)
        a = mesh.panel_areas
        matrix = np.ascontiguousarray((k.matrix * a[:, None]).T / a[:, None])
        return BoundaryOperator(matrix, "Kstar", complex("nan"), mesh.mesh_id)
    if kind == "N":
        y, w = quadrature.nodes, quadrature.weights
        m = y.shape[0]
        kern = series_kernel_s(j)
        d = y[:, None, :] - y[None, :, :]
        r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
        idx = np.arange(m)
        r[idx, idx] = 1.0
        out = kern(r, None) * w[None, :]
        r0 = (3.0 * w / FOUR_PI) ** (1.0 / 3.0)
        out[idx, idx] = (1j) ** j * r0 ** (j + 2) / (math.factorial(j) * (j + 2))
        return VolumeOperator(out, complex("nan"), quadrature.quadrature_id)
    if kind == "SL":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        kern = series_kernel_s(j)
        cols = np.eye(mesh.n_panels)
        # dense (M, P): evaluate per panel through the potential engine
        out = np.empty((pts.shape[0], mesh.n_panels), dtype=complex)
        for p in range(mesh.n_panels):
            out[:, p] = _potential_apply(mesh, kern, cols[p].astype(complex), pts)
        return out
    raise UsageError(f"unknown series kind {kind!r}")


# ---------------------------------------------------------------------------
# Binary dump/load
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<8sQdd")


def dump_operator(op: BoundaryOperator, path) -> None:
    """Flat binary layout: 8-byte kind tag, uint64 N, z as two float64 (all LE),
    then row-major complex128 entries."""
    kind = op.kernel_kind.encode("ascii").ljust(8, b"\0")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(kind, op.matrix.shape[0], op.z.real, op.z.imag))
        fh.write(np.ascontiguousarray(op.matrix, dtype="<c16").tobytes())


def load_operator(path, mesh: SurfaceMesh = None) -> BoundaryOperator:
    with open(path, "rb") as fh:
        kind_raw, n, zre, zim = _HEADER.unpack(fh.read(_HEADER.size))
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != n * n:
        raise UsageError(f"{path}: expected {n * n} entries, found {data.size}")
    kind = kind_raw.rstrip(b"\0").decode("ascii")
    mesh_id = mesh.mesh_id if mesh is not None else "unbound"
    if mesh is not None and mesh.n_panels != n:
        raise UsageError(f"{path}: operator size {n} does not match mesh ({mesh.n_panels})")
    return BoundaryOperator(data.reshape(n, n).copy(), kind, complex(zre, zim), mesh_id)
