"""Triangulated surfaces and star-shaped volume quadratures.

The reference domain is a bounded connected body with a closed C2 boundary,
discretized into flat triangular panels with one collocation point per panel
(the centroid) and a fixed-order interior quadrature per panel for smooth
kernel integration.  Volume integration over the body reuses the surface
quadrature through a cone (star-shaped) rule about a chosen center:

    int_Omega f dy = int_Gamma nu(x).(x - y0) int_0^1 f(y0 + t (x - y0)) t^2 dt dsigma(x)

which is exact for the polyhedron spanned by the panels when the radial rule
integrates t^2 exactly.  Meshes are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

# Six-point symmetric triangle rule of polynomial degree 4 (Strang-Fix).
# Barycentric coordinates; weights sum to 1 and are scaled by panel area
# when the rule is mapped to a physical panel.
_TRI6_A = 0.445948490915965
_TRI6_B = 0.091576213509771
_TRI6_WA = 0.223381589678011
_TRI6_WB = 0.109951743655322
TRIANGLE_RULE_BARY = np.array(
    [
        [1.0 - 2.0 * _TRI6_A, _TRI6_A, _TRI6_A],
        [_TRI6_A, 1.0 - 2.0 * _TRI6_A, _TRI6_A],
        [_TRI6_A, _TRI6_A, 1.0 - 2.0 * _TRI6_A],
        [1.0 - 2.0 * _TRI6_B, _TRI6_B, _TRI6_B],
        [_TRI6_B, 1.0 - 2.0 * _TRI6_B, _TRI6_B],
        [_TRI6_B, _TRI6_B, 1.0 - 2.0 * _TRI6_B],
    ]
)
TRIANGLE_RULE_WEIGHTS = np.array(
    [_TRI6_WA, _TRI6_WA, _TRI6_WA, _TRI6_WB, _TRI6_WB, _TRI6_WB]
)

MAX_REFINEMENT = 7


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Closed triangulated surface with panel quadrature.

    Attributes
    ----------
    vertices : (V, 3) float array
    panels : (P, 3) int array
        Vertex index triples, oriented so panel normals point outward.
    panel_centroids : (P, 3) float array
        Collocation points.
    panel_normals : (P, 3) float array
        Unit outward normals.
    panel_areas : (P,) float array
    quad_points : (P, K, 3) float array
        Interior quadrature nodes per panel.
    quad_weights : (P, K) float array
        Quadrature weights, summing to the panel area.
    mesh_id : str
        Identity token; operators and densities check it on application.
    """

    vertices: np.ndarray
    panels: np.ndarray
    panel_centroids: np.ndarray
    panel_normals: np.ndarray
    panel_areas: np.ndarray
    quad_points: np.ndarray
    quad_weights: np.ndarray
    mesh_id: str

    @property
    def n_panels(self) -> int:
        return self.panels.shape[0]

    @property
    def area(self) -> float:
        return float(self.panel_areas.sum())

    @property
    def volume(self) -> float:
        """Enclosed volume via the divergence identity 3|Omega| = int nu.x.

        Exact for the polyhedron spanned by the flat panels.
        """
        return float(
            np.einsum(
                "i,i->", self.panel_areas,
                np.einsum("ij,ij->i", self.panel_normals, self.panel_centroids),
            )
            / 3.0
        )

    @property
    def barycenter(self) -> np.ndarray:
        return self.panel_centroids.mean(axis=0)

    @property
    def panel_diameters(self) -> np.ndarray:
        tri = self.vertices[self.panels]
        e = np.stack(
            [
                tri[:, 1] - tri[:, 0],
                tri[:, 2] - tri[:, 1],
                tri[:, 0] - tri[:, 2],
            ],
            axis=1,
        )
        return np.linalg.norm(e, axis=2).max(axis=1)

    @property
    def h_min(self) -> float:
        """Smallest panel diameter."""
        return float(self.panel_diameters.min())

    @property
    def h_max(self) -> float:
        return float(self.panel_diameters.max())


def _mesh_from_arrays(vertices: np.ndarray, panels: np.ndarray) -> SurfaceMesh:
    """Build a mesh, orienting panels outward with respect to the barycenter.

    Suitable for bodies that are star-shaped about their barycenter, which
    covers every construction in this module.
    """
    vertices = np.asarray(vertices, dtype=float)
    panels = np.asarray(panels, dtype=np.int64)
    tri = vertices[panels]
    centroids = tri.mean(axis=1)
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    if np.any(areas <= 0.0):
        raise ConfigurationError("mesh contains degenerate (zero-area) panels")
    normals = cross / (2.0 * areas[:, None])

    barycenter = centroids.mean(axis=0)
    flip = np.einsum("ij,ij->i", normals, centroids - barycenter) < 0.0
    if np.any(flip):
        panels = panels.copy()
        panels[flip] = panels[flip][:, [0, 2, 1]]
        normals = normals.copy()
        normals[flip] *= -1.0

    quad_points = np.einsum("qb,pbx->pqx", TRIANGLE_RULE_BARY, vertices[panels])
    quad_weights = TRIANGLE_RULE_WEIGHTS[None, :] * areas[:, None]

    return SurfaceMesh(
        vertices=_freeze(vertices),
        panels=_freeze(panels),
        panel_centroids=_freeze(centroids),
        panel_normals=_freeze(normals),
        panel_areas=_freeze(areas),
        quad_points=_freeze(quad_points),
        quad_weights=_freeze(quad_weights),
        mesh_id=uuid.uuid4().hex,
    )


# ---------------------------------------------------------------------------
# Icosphere and ellipsoid construction
# ---------------------------------------------------------------------------

def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts / np.linalg.norm(verts[0]), faces


def _subdivide(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One 4-to-1 midpoint subdivision pass (vectorized over faces)."""
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    unique_edges, inverse = np.unique(edges, axis=0, return_inverse=True)
    midpoints = 0.5 * (vertices[unique_edges[:, 0]] + vertices[unique_edges[:, 1]])
    mid_index = len(vertices) + inverse.reshape(3, -1).T  # (F, 3): m01, m12, m20

    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    m01, m12, m20 = mid_index[:, 0], mid_index[:, 1], mid_index[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([v0, m01, m20], axis=1),
            np.stack([v1, m12, m01], axis=1),
            np.stack([v2, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return np.vstack([vertices, midpoints]), new_faces


def make_sphere(center, radius: float, refinement: int) -> SurfaceMesh:
    """Icosahedral sphere mesh with 20 * 4**refinement panels.

    Vertices of the subdivided icosahedron are projected radially and then
    inflated by the volume-matching factor (V_sphere / V_polyhedron)^(1/3)
    (0.3% at refinement 3, vanishing under refinement).  An inscribed
    polyhedron under-resolves the enclosed volume at O(h^2), which feeds
    straight into the monopole scattering amplitude and the Minnaert
    frequency; matching the volume removes that bias while keeping flat
    panels.
    """
    if radius <= 0.0:
        raise ConfigurationError(f"sphere radius must be positive, got {radius}")
    if not (0 <= refinement <= MAX_REFINEMENT):
        raise ConfigurationError(
            f"refinement must be in 0..{MAX_REFINEMENT}, got {refinement}"
        )
    center = np.asarray(center, dtype=float)
    verts, faces = _icosahedron()
    for _ in range(int(refinement)):
        verts, faces = _subdivide(verts, faces)
        verts /= np.linalg.norm(verts, axis=1)[:, None]
    verts = verts / np.linalg.norm(verts, axis=1)[:, None]

    tri = verts[faces]
    poly_volume = float(np.einsum("fi,fi->", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))) / 6.0
    verts *= (4.0 * np.pi / (3.0 * poly_volume)) ** (1.0 / 3.0)

    return _mesh_from_arrays(center[None, :] + radius * verts, faces)


def make_ellipsoid(center, semi_axes, refinement: int) -> SurfaceMesh:
    """Ellipsoid mesh: a unit icosphere stretched by diag(a, b, c).

    Normals and areas are recomputed from the stretched vertices; stretched
    sphere normals would not be normal to the ellipsoid.
    """
    a, b, c = (float(s) for s in semi_axes)
    if min(a, b, c) <= 0.0:
        raise ConfigurationError(f"semi-axes must be positive, got {semi_axes}")
    unit = make_sphere(np.zeros(3), 1.0, refinement)
    verts = unit.vertices * np.array([a, b, c])[None, :]
    center = np.asarray(center, dtype=float)
    return _mesh_from_arrays(center[None, :] + verts, unit.panels)


# ---------------------------------------------------------------------------
# Volume quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VolumeQuadrature:
    """Interior quadrature for the body enclosed by a mesh.

    Nodes lie strictly inside the body (open Gauss-Legendre radial nodes),
    grouped as (surface node) x (radial node) in row-major order.
    """

    nodes: np.ndarray        # (M, 3)
    weights: np.ndarray      # (M,)
    total_volume: float
    center: np.ndarray
    radial_order: int
    mesh_id: str
    quadrature_id: str

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def make_volume_quadrature(mesh: SurfaceMesh, center, radial_order: int) -> VolumeQuadrature:
    """Cone rule over a body star-shaped about `center`.

    For each surface quadrature node x with weight w the rule places
    `radial_order` Gauss-Legendre nodes t_k on (0, 1) at y0 + t_k (x - y0)
    with weights w * (nu(x).(x - y0)) * t_k^2 * v_k, so the node weights sum
    to the (polyhedral) volume.
    """
    if radial_order < 1:
        raise ConfigurationError(f"radial_order must be >= 1, got {radial_order}")
    center = np.asarray(center, dtype=float)

    x = mesh.quad_points.reshape(-1, 3)
    w = mesh.quad_weights.reshape(-1)
    nu = np.repeat(mesh.panel_normals, mesh.quad_points.shape[1], axis=0)
    radial = np.einsum("ij,ij->i", nu, x - center[None, :])
    if np.any(radial <= 0.0):
        raise ConfigurationError(
            "center is not a star center of the mesh (nu.(x - y0) <= 0 somewhere)"
        )

    t, v = np.polynomial.legendre.leggauss(int(radial_order))
    t = 0.5 * (t + 1.0)
    v = 0.5 * v

    nodes = center[None, None, :] + t[None, :, None] * (x - center[None, :])[:, None, :]
    weights = (w * radial)[:, None] * (v * t**2)[None, :]

    return VolumeQuadrature(
        nodes=_freeze(nodes.reshape(-1, 3)),
        weights=_freeze(weights.reshape(-1)),
        total_volume=float(weights.sum()),
        center=_freeze(center),
        radial_order=int(radial_order),
        mesh_id=mesh.mesh_id,
        quadrature_id=uuid.uuid4().hex,
    )


# ---------------------------------------------------------------------------
# Scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingMap:
    """Dilation y -> center + factor * (y - center)."""

    center: np.ndarray
    factor: float

    def __post_init__(self):
        if self.factor <= 0.0:
            raise ConfigurationError(f"scaling factor must be positive, got {self.factor}")
        object.__setattr__(self, "center", _freeze(np.asarray(self.center, dtype=float)))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return self.center + self.factor * (points - self.center)

    def inverse(self) -> "ScalingMap":
        return ScalingMap(center=self.center, factor=1.0 / self.factor)


def scale_mesh(mesh: SurfaceMesh, smap: ScalingMap) -> SurfaceMesh:
    """Return the mesh mapped through the dilation.

    Areas scale by factor^2 and normals are unchanged; factor == 1 reproduces
    the input arrays bit for bit.
    """
    if smap.factor == 1.0:
        vertices = mesh.vertices
    else:
        vertices = smap.apply(mesh.vertices)
    return _mesh_from_arrays(vertices, mesh.panels)


# ---------------------------------------------------------------------------
# OFF import/export
# ---------------------------------------------------------------------------

def write_off(mesh: SurfaceMesh, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("OFF\n")
        fh.write(f"{len(mesh.vertices)} {len(mesh.panels)} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for p in mesh.panels:
            fh.write(f"3 {p[0]} {p[1]} {p[2]}\n")


def read_off(path) -> SurfaceMesh:
    """Read an ASCII OFF file of triangles into a mesh.

    Panels are re-oriented outward about the barycenter, matching the
    constructors in this module.
    """
    with open(path, "r", encoding="utf-8") as fh:
        tokens = [
            tok
            for line in fh
            if (stripped := line.split("#", 1)[0].strip())
            for tok in stripped.split()
        ]
    if not tokens or tokens[0] != "OFF":
        raise ConfigurationError(f"{path}: not an OFF file")
    try:
        n_vert, n_face = int(tokens[1]), int(tokens[2])
        pos = 4
        verts = np.array(tokens[pos : pos + 3 * n_vert], dtype=float).reshape(n_vert, 3)
        pos += 3 * n_vert
        faces = []
        for _ in range(n_face):
            arity = int(tokens[pos])
            if arity != 3:
                raise ConfigurationError(f"{path}: only triangle faces supported")
            faces.append([int(t) for t in tokens[pos + 1 : pos + 4]])
            pos += 1 + arity
    except (IndexError, ValueError) as exc:
        raise ConfigurationError(f"{path}: malformed OFF data ({exc})") from exc
    return _mesh_from_arrays(verts, np.array(faces, dtype=np.int64))
