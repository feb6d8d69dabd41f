"""Independent ground truth for the sphere problem and the operator assembly.

Three unrelated oracles live here:

* an exact Mie-type series for plane-wave scattering by a spherical bubble
  with the transmission conditions u+ = u-, (1/rho0) dn u+ = (1/(rho1 eps^2)) dn u-,
  plus a Newton search for the complex root of the monopole modal determinant;
* single-entry recomputation of the boundary operators with high-order
  adaptive Gauss/Duffy quadrature;
* the closed-form integral of 1/(4 pi |x0 - y|) over a flat triangle.

None of this shares kernel or quadrature code with layer_ops; independence
is the point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DiagnosticFailure, UnsupportedGeometryError, UsageError
from .geometry import SurfaceMesh

_4PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# Spherical Bessel/Hankel functions for complex argument
# ---------------------------------------------------------------------------

def spherical_jn_complex(lmax: int, x: complex) -> np.ndarray:
    """j_0..j_lmax at complex x by Miller's downward recurrence.

    Stable for the moderate orders and arguments used here (l <= ~20,
    |x| <= ~30); scipy's spherical_jn only accepts real arguments.
    """
    x = complex(x)
    if x == 0:
        out = np.zeros(lmax + 1, dtype=complex)
        out[0] = 1.0
        return out
    nstart = lmax + 15 + int(abs(x))
    jm = np.zeros(nstart + 2, dtype=complex)
    jm[nstart + 1] = 0.0
    jm[nstart] = 1e-280
    for l in range(nstart, 0, -1):
        jm[l - 1] = (2 * l + 1) / x * jm[l] - jm[l + 1]
    scale = (np.sin(x) / x) / jm[0]
    return jm[: lmax + 1] * scale


def spherical_h1_complex(lmax: int, x: complex) -> np.ndarray:
    """h^(1)_0..h^(1)_lmax at complex x != 0 by upward recurrence.

    Upward is stable for h^(1) (the dominant solution); the l = 0, 1 closed
    forms seed it."""
    x = complex(x)
    if x == 0:
        raise UsageError("spherical Hankel functions are singular at 0")
    out = np.empty(lmax + 1, dtype=complex)
    out[0] = -1j * np.exp(1j * x) / x
    if lmax >= 1:
        out[1] = -np.exp(1j * x) * (x + 1j) / x**2
    for l in range(1, lmax):
        out[l + 1] = (2 * l + 1) / x * out[l] - out[l - 1]
    return out


def _derivatives(f: np.ndarray, x: complex) -> np.ndarray:
    """f_l' = f_{l-1} - (l+1)/x f_l (and f_0' = -f_1)."""
    lmax = len(f) - 1
    df = np.empty_like(f)
    df[0] = -f[1] if lmax >= 1 else -(np.sin(x) / x**2) * 0  # lmax >= 1 always here
    for l in range(1, lmax + 1):
        df[l] = f[l - 1] - (l + 1) / x * f[l]
    return df


# ---------------------------------------------------------------------------
# Mie transmission series
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MieSolution:
    """Per-degree coefficients of the transmission solution.

    Fields follow the expansion about the bubble center y0 with a plane wave
    exp(i k0 d.x):

        u_out = prefactor * sum_l (2l+1) i^l [ j_l(k0 r) + b_l h_l(k0 r) ] P_l(cos theta)
        u_in  = prefactor * sum_l (2l+1) i^l a_l j_l(k1 r) P_l(cos theta)
    """

    omega: float
    direction: np.ndarray
    radius: float
    center: np.ndarray
    k_out: complex
    k_in: complex
    scatter_coeffs: np.ndarray    # b_l
    interior_coeffs: np.ndarray   # a_l
    prefactor: complex
    convergence_estimate: float
    transmission_residual: float
    max_degree: int


def _mie_modal_matrix(l: int, medium, omega: complex, radius: float):
    """2x2 transmission system for degree l and its right-hand side."""
    k_out = omega / medium.c0
    k_in = omega / medium.c1
    j_out = spherical_jn_complex(l + 1, k_out * radius)
    j_in = spherical_jn_complex(l + 1, k_in * radius)
    h_out = spherical_h1_complex(l + 1, k_out * radius)
    dj_out = j_out[l - 1] - (l + 1) / (k_out * radius) * j_out[l] if l >= 1 else -j_out[1]
    dj_in = j_in[l - 1] - (l + 1) / (k_in * radius) * j_in[l] if l >= 1 else -j_in[1]
    dh_out = h_out[l - 1] - (l + 1) / (k_out * radius) * h_out[l] if l >= 1 else -h_out[1]
    w_out = k_out / medium.rho0
    w_in = k_in / (medium.rho1 * medium.eps**2)
    mat = np.array(
        [[h_out[l], -j_in[l]], [w_out * dh_out, -w_in * dj_in]], dtype=complex
    )
    rhs = np.array([-j_out[l], -w_out * dj_out], dtype=complex)
    return mat, rhs


def mie_scatter(medium, omega: float, direction, max_degree: int = 12,
                reference_radius: float = 1.0) -> MieSolution:
    """Exact series solution for a spherical bubble of radius eps * reference_radius."""
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    radius = medium.eps * reference_radius
    center = np.asarray(medium.y0, dtype=float)

    b = np.empty(max_degree + 1, dtype=complex)
    a = np.empty(max_degree + 1, dtype=complex)
    residual = 0.0
    for l in range(max_degree + 1):
        mat, rhs = _mie_modal_matrix(l, medium, omega, radius)
        sol = np.linalg.solve(mat, rhs)
        b[l], a[l] = sol
        res = np.linalg.norm(mat @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
        residual = max(residual, float(res))

    conv = abs(b[-1]) / max(abs(b[0]), 1e-300)
    prefactor = np.exp(1j * (omega / medium.c0) * direction @ center)
    return MieSolution(
        omega=float(omega),
        direction=direction,
        radius=float(radius),
        center=center,
        k_out=omega / medium.c0,
        k_in=omega / medium.c1,
        scatter_coeffs=b,
        interior_coeffs=a,
        prefactor=prefactor,
        convergence_estimate=float(conv),
        transmission_residual=residual,
        max_degree=max_degree,
    )


def _legendre_all(lmax: int, x: np.ndarray) -> np.ndarray:
    """P_0..P_lmax(x), shape (lmax+1, len(x))."""
    out = np.empty((lmax + 1, len(x)))
    out[0] = 1.0
    if lmax >= 1:
        out[1] = x
    for l in range(1, lmax):
        out[l + 1] = ((2 * l + 1) * x * out[l] - l * out[l - 1]) / (l + 1)
    return out


def _mie_series(sol: MieSolution, points: np.ndarray, part: str) -> np.ndarray:
    rel = points - sol.center
    r = np.linalg.norm(rel, axis=1)
    if np.any(r == 0.0) and part != "interior":
        raise UsageError("cannot evaluate the exterior series at the center")
    cos_t = np.zeros_like(r)
    mask = r > 0
    cos_t[mask] = (rel[mask] @ sol.direction) / r[mask]
    pl = _legendre_all(sol.max_degree, cos_t)
    out = np.zeros(len(points), dtype=complex)
    for i in range(len(points)):
        if part == "interior":
            radial = spherical_jn_complex(sol.max_degree, sol.k_in * r[i])
            coeff = sol.interior_coeffs
        elif part == "scattered":
            radial = spherical_h1_complex(sol.max_degree, sol.k_out * r[i])
            coeff = sol.scatter_coeffs
        else:  # incident
            radial = spherical_jn_complex(sol.max_degree, sol.k_out * r[i])
            coeff = np.ones(sol.max_degree + 1)
        ls = np.arange(sol.max_degree + 1)
        out[i] = np.sum((2 * ls + 1) * (1j**ls) * coeff * radial * pl[:, i])
    return sol.prefactor * out


def mie_eval(sol: MieSolution, points) -> np.ndarray:
    """Total field: interior series inside the bubble, incident + scattered outside."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r = np.linalg.norm(points - sol.center, axis=1)
    out = np.empty(len(points), dtype=complex)
    inside = r < sol.radius
    if np.any(inside):
        out[inside] = _mie_series(sol, points[inside], "interior")
    if np.any(~inside):
        pts = points[~inside]
        out[~inside] = _mie_series(sol, pts, "incident") + _mie_series(sol, pts, "scattered")
    return out


def mie_eval_scattered(sol: MieSolution, points) -> np.ndarray:
    """Scattered field u - u_in (exterior points only)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r = np.linalg.norm(points - sol.center, axis=1)
    if np.any(r < sol.radius):
        raise UsageError("scattered-field evaluation expects exterior points")
    return _mie_series(sol, points, "scattered")


def mie_resonance(medium, seed: complex, reference_radius: float = 1.0,
                  max_iter: int = 60, tol: float = 1e-12) -> complex:
    """Complex root of the monopole (l = 0) modal determinant by Newton.

    The determinant uses the outgoing h_0^(1) continuation, so roots in the
    lower half-plane are meaningful.  Raises DiagnosticFailure when Newton
    does not converge from the seed.
    """
    radius = medium.eps * reference_radius

    def det(z: complex) -> complex:
        mat, _ = _mie_modal_matrix(0, medium, z, radius)
        return mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]

    z = complex(seed)
    for _ in range(max_iter):
        f = det(z)
        h = 1e-7 * max(abs(z), 1.0)
        df = (det(z + h) - det(z - h)) / (2.0 * h)
        if df == 0:
            break
        step = f / df
        z -= step
        if abs(step) < tol * max(abs(z), 1.0):
            return z
    raise DiagnosticFailure(
        f"modal-determinant Newton did not converge from seed {seed}",
        diagnostics={"last_iterate": z, "determinant": det(z)},
    )


# ---------------------------------------------------------------------------
# Brute-force operator entries
# ---------------------------------------------------------------------------

def _gauss_square(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    uu, vv = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    return uu.ravel(), vv.ravel(), ww.ravel()


def _triangle_gauss(tri: np.ndarray, order: int):
    """Tensor rule collapsed onto a triangle: nodes (n,3), weights (n,)."""
    u, v, w = _gauss_square(order)
    # map unit square onto triangle via (u, uv) Duffy collapse at vertex 0
    a, b, c = tri
    pts = a + np.outer(u, b - a) + np.outer(u * v, c - b)
    area2 = np.linalg.norm(np.cross(b - a, c - a))
    wts = w * u * area2
    return pts, wts


def _adaptive_panel_integral(target: np.ndarray, tri: np.ndarray, kern, order: int,
                             max_depth: int = 12) -> complex:
    """Integral of kern(|target - y|, ndot-free) over a triangle.

    Subdivides until each leaf is small against its distance to the target;
    leaves are integrated with the collapsed tensor rule.
    """
    total = 0.0 + 0.0j
    stack = [(tri, 0)]
    while stack:
        t, depth = stack.pop()
        edges = max(
            np.linalg.norm(t[1] - t[0]),
            np.linalg.norm(t[2] - t[1]),
            np.linalg.norm(t[0] - t[2]),
        )
        dist = np.linalg.norm(target - t.mean(axis=0)) - edges
        if depth < max_depth and (dist <= 0.0 or edges > 0.5 * dist):
            m01, m12, m20 = 0.5 * (t[0] + t[1]), 0.5 * (t[1] + t[2]), 0.5 * (t[2] + t[0])
            stack.extend(
                [
                    (np.array([t[0], m01, m20]), depth + 1),
                    (np.array([t[1], m12, m01]), depth + 1),
                    (np.array([t[2], m20, m12]), depth + 1),
                    (np.array([m01, m12, m20]), depth + 1),
                ]
            )
            continue
        pts, wts = _triangle_gauss(t, order)
        d = target[None, :] - pts
        r = np.linalg.norm(d, axis=1)
        total += np.sum(kern(r, d) * wts)
    return total


def _panel_integral(mesh: SurfaceMesh, kern, i: int, j: int, order: int) -> complex:
    """High-order integral of kern(|c_i - y|, c_i - y) over panel j."""
    target = mesh.panel_centroids[i]
    tri = mesh.vertices[mesh.panels[j]]
    if i != j:
        return _adaptive_panel_integral(target, tri, kern, order)
    total = 0.0 + 0.0j
    u, v, w = _gauss_square(order)
    for k in range(3):
        va, vb = tri[k], tri[(k + 1) % 3]
        e0, e1 = va - target, vb - va
        pts = target + np.outer(u, e0) + np.outer(u * v, e1)
        jac = np.linalg.norm(np.cross(e0, e1))
        d = target[None, :] - pts
        r = np.linalg.norm(d, axis=1)
        total += np.sum(kern(r, d) * (w * u * jac))
    return total


def brute_force_entry(mesh: SurfaceMesh, kernel_kind: str, z: complex,
                      i: int, j: int, order: int = 16) -> complex:
    """Recompute operator entry (i, j) with adaptive high-order quadrature.

    Self entries use a three-subtriangle Duffy split about the collocation
    point.  The entry definitions match the assembled operators: 'S' is the
    kernel-value symmetrized single layer, 'K' the direct d/dnu_y operator,
    'Kstar' the plain d/dnu_x collocation integral (which differs from the
    assembled adjoint-built K* by discretization, not by quadrature error).
    """
    if kernel_kind == "S":
        def kern(r, dvec):
            return np.exp((1j * z) * r) / (_4PI * r)

        a = mesh.panel_areas
        val_ij = _panel_integral(mesh, kern, i, j, order)
        if i == j:
            return val_ij
        val_ji = _panel_integral(mesh, kern, j, i, order)
        return 0.5 * (val_ij / a[j] + val_ji / a[i]) * a[j]

    if kernel_kind == "K":
        nu = mesh.panel_normals[j]

        def kern(r, dvec):
            ndot = dvec @ nu
            return -ndot * ((1j * z) * r - 1.0) * np.exp((1j * z) * r) / (_4PI * r**3)

        return 0j if i == j else _panel_integral(mesh, kern, i, j, order)

    if kernel_kind == "Kstar":
        nu = mesh.panel_normals[i]

        def kern(r, dvec):
            ndot = dvec @ nu
            return ndot * ((1j * z) * r - 1.0) * np.exp((1j * z) * r) / (_4PI * r**3)

        return 0j if i == j else _panel_integral(mesh, kern, i, j, order)

    raise UsageError(f"brute_force_entry supports 'S'/'K'/'Kstar', got {kernel_kind!r}")


# ---------------------------------------------------------------------------
# Closed-form flat-triangle potential
# ---------------------------------------------------------------------------

def triangle_potential_inplane(x0: np.ndarray, tri: np.ndarray) -> float:
    """int_T 1/(4 pi |x0 - y|) dsigma(y) for x0 inside T (in its plane).

    Polar integration about x0: the radial integral of (1/r) r dr is the ray
    length, and the angular integral over each subtriangle has the closed
    form d * log((tan(theta2/2 + pi/4)) / tan(theta1/2 + pi/4)) with d the
    distance from x0 to the opposite edge line.
    """
    x0 = np.asarray(x0, dtype=float)
    total = 0.0
    for k in range(3):
        va, vb = tri[k], tri[(k + 1) % 3]
        e = vb - va
        elen = np.linalg.norm(e)
        ehat = e / elen
        foot = va + ((x0 - va) @ ehat) * ehat
        d = np.linalg.norm(x0 - foot)
        t1 = (va - foot) @ ehat
        t2 = (vb - foot) @ ehat
        # int over the subtriangle (x0, va, vb): int_theta R(theta) dtheta
        # with R(theta) = d / cos(theta); substitution gives asinh terms.
        total += d * (np.arcsinh(t2 / d) - np.arcsinh(t1 / d))
    return total / _4PI
