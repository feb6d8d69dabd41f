"""Complex scattering resonances of the characteristic operator family.

A resonance is a z where the boundary/volume integral system loses
injectivity.  On the reference domain the family is

    Q_eps(w) = [[ I - gamma w^2 N_{w/c0},      (rho0/(rho1 eps^2) - 1) SL_{w/c0} ],
                [ -gamma w^2 dN_{w/c0},         (rho0/(rho1 eps^2)) Lambda_w     ]]

with gamma = 1/c1^2 - 1/c0^2, and physical frequencies enter through the
scaling A_eps(z) = Q_eps(eps z).  For c1 = c0 the family collapses to the
boundary block

    T_eps(z) = (rho1 eps^2/rho0) I + (1 - rho1 eps^2/rho0)(1/2 I + K*_{eps z/c0}).

Roots are located by complex Newton on the smallest singular value: at the
current iterate the singular pair (u, v) defines the locally holomorphic
scalar f(z) = u^H T(z) v with f(z_k) = sigma_min, whose Newton step uses
central finite differences in the complex plane.  Kernels are entire in z,
so evaluation in the lower half-plane needs nothing special.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .asymptotics import AsymptoticConfig, resonance_first_order
from .errors import DiagnosticFailure, MultiplicityAnomalyError, UsageError
from .geometry import VolumeQuadrature
from .layer_ops import assemble_N, assemble_Kstar, helmholtz_kernel
from .scattering import Medium, _dn_newton_matrix, _sl_matrix, _speeds_equal
from .spectral import SpectralFrame


@dataclass(frozen=True)
class ResonancePair:
    """The two located Minnaert resonances with solver diagnostics."""

    z_plus: complex
    z_minus: complex
    eps: float
    sigma_plus: float
    sigma_minus: float
    iterations: int
    converged: bool
    operator_norm: float
    minima_count: int = None      # grid-verified root count, when requested


def characteristic_matrix(medium: Medium, frame: SpectralFrame, z: complex,
                          eps: float, volume_quadrature: VolumeQuadrature = None) -> np.ndarray:
    """Discrete A_eps(z) = Q_eps(eps z) on the reference mesh.

    For c1 = c0 this is the reduced boundary operator; otherwise the full
    2x2 block over (volume nodes, panels), which requires a quadrature.
    """
    mesh = frame.mesh
    contrast = medium.rho1 * eps**2 / medium.rho0
    zb = eps * z / medium.c0
    kstar = assemble_Kstar(mesh, zb).matrix
    n = mesh.n_panels
    reduced = contrast * np.eye(n) + (1.0 - contrast) * (0.5 * np.eye(n) + kstar)
    if _speeds_equal(medium):
        return reduced

    if volume_quadrature is None:
        raise UsageError("c1 != c0 requires a volume quadrature for the full block family")
    if volume_quadrature.mesh_id != mesh.mesh_id:
        raise UsageError("volume quadrature was built on a different mesh")
    vq = volume_quadrature
    m = vq.n_nodes
    gamma = 1.0 / medium.c1**2 - 1.0 / medium.c0**2
    wsq = (eps * z) ** 2
    scale = 1.0 / contrast

    a = np.empty((m + n, m + n), dtype=complex)
    a[:m, :m] = -gamma * wsq * assemble_N(vq, zb).matrix
    a[:m, :m][np.diag_indices(m)] += 1.0
    a[:m, m:] = (scale - 1.0) * _sl_matrix(mesh, zb, vq.nodes)
    a[m:, :m] = -gamma * wsq * _dn_newton_matrix(mesh, vq, zb)
    a[m:, m:] = scale * reduced
    return a


def _sigma_min_vectors(mat: np.ndarray, iters: int = 40, seed: int = 0):
    """Smallest singular value and its (left, right) vectors.

    Inverse power iteration on (T^H T)^{-1} through one LU of T; returns
    sigma = 0 with no vectors when T is numerically singular.
    """
    n = mat.shape[0]
    try:
        lu = lu_factor(mat)
    except np.linalg.LinAlgError:
        return 0.0, None, None
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma_prev = np.inf
    for _ in range(iters):
        y = lu_solve(lu, v, trans=2)     # T^H y = v
        x = lu_solve(lu, y, trans=0)     # T x = y
        norm = np.linalg.norm(x)
        if not np.isfinite(norm) or norm == 0.0:
            return 0.0, None, None
        v = x / norm
        sigma = 1.0 / np.sqrt(norm)
        if abs(sigma - sigma_prev) <= 1e-12 * sigma:
            break
        sigma_prev = sigma
    tv = mat @ v
    sigma = float(np.linalg.norm(tv))
    u = tv / sigma if sigma > 0 else None
    return sigma, u, v


def _operator_norm(mat: np.ndarray, iters: int = 12, seed: int = 1) -> float:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(mat.shape[0]) + 1j * rng.standard_normal(mat.shape[0])
    v /= np.linalg.norm(v)
    s = 0.0
    for _ in range(iters):
        w = mat @ v
        w = mat.conj().T @ w
        s = np.linalg.norm(w) ** 0.5
        v = w / np.linalg.norm(w)
    return float(s)


def characteristic_sigma(medium: Medium, frame: SpectralFrame, z: complex, eps: float,
                         volume_quadrature: VolumeQuadrature = None) -> float:
    """Smallest singular value of the characteristic operator at z."""
    if z == 0:
        raise UsageError("characteristic family is evaluated away from z = 0")
    mat = characteristic_matrix(medium, frame, z, eps, volume_quadrature)
    sigma, _, _ = _sigma_min_vectors(mat)
    return sigma


def sigma_grid(medium: Medium, frame: SpectralFrame, eps: float,
               re_values, im_values, volume_quadrature=None) -> np.ndarray:
    """characteristic_sigma sampled on a Cartesian grid (rows: Im, cols: Re)."""
    out = np.empty((len(im_values), len(re_values)))
    for i, im in enumerate(im_values):
        for j, re in enumerate(re_values):
            out[i, j] = characteristic_sigma(medium, frame, complex(re, im), eps,
                                             volume_quadrature)
    return out


def _count_deep_minima(grid: np.ndarray, rel_floor: float = 0.05) -> int:
    """Strict 8-neighborhood local minima lying well below the grid median."""
    interior = grid[1:-1, 1:-1]
    neighbors = [
        grid[:-2, :-2], grid[:-2, 1:-1], grid[:-2, 2:],
        grid[1:-1, :-2], grid[1:-1, 2:],
        grid[2:, :-2], grid[2:, 1:-1], grid[2:, 2:],
    ]
    is_min = np.ones_like(interior, dtype=bool)
    for nb in neighbors:
        is_min &= interior < nb
    deep = interior < rel_floor * np.median(grid)
    return int(np.count_nonzero(is_min & deep))


def _newton_root(assemble, seed: complex, sigma_tol: float, max_iter: int):
    z = complex(seed)
    fd_step = 1e-6 * max(abs(seed), 1.0)
    history = []
    for iteration in range(1, max_iter + 1):
        mat = assemble(z)
        sigma, u, v = _sigma_min_vectors(mat)
        history.append((z, sigma))
        if sigma <= sigma_tol:
            return z, sigma, iteration, True
        if u is None:
            return z, 0.0, iteration, True
        f_plus = np.conj(u) @ (assemble(z + fd_step) @ v)
        f_minus = np.conj(u) @ (assemble(z - fd_step) @ v)
        df = (f_plus - f_minus) / (2.0 * fd_step)
        if df == 0:
            break
        step = -sigma / df
        z = z + step
        if abs(step) <= 1e-12 * max(abs(z), 1.0):
            mat = assemble(z)
            sigma, _, _ = _sigma_min_vectors(mat)
            return z, sigma, iteration + 1, sigma <= sigma_tol or abs(step) <= 1e-12
    raise DiagnosticFailure(
        f"resonance Newton stalled after {len(history)} iterations from seed {seed}",
        diagnostics={"history": history},
    )


def find_resonances(medium: Medium, frame: SpectralFrame, eps: float,
                    search_radius: float, volume_quadrature: VolumeQuadrature = None,
                    grid_n: int = 40, verify_count: bool = True,
                    max_iter: int = 100) -> ResonancePair:
    """Locate the Minnaert resonance pair by sigma-min Newton iteration.

    Seeds come from the first-order asymptotics; convergence requires
    sigma <= 1e-8 ||operator|| or a Newton step below 1e-12.  When
    verify_count is set, a grid_n x grid_n scan of the disk of radius
    search_radius about +omega_M counts the deep local minima (the -omega_M
    disk is its exact mirror under z -> -conj(z)); any count other than one
    per disk raises MultiplicityAnomalyError.
    """
    config = AsymptoticConfig.from_frame(frame, medium)
    seed_plus, seed_minus = resonance_first_order(config, eps)

    def assemble(z):
        return characteristic_matrix(medium, frame, z, eps, volume_quadrature)

    op_norm = _operator_norm(assemble(seed_plus))
    sigma_tol = 1e-8 * op_norm

    z_plus, sigma_plus, it_plus, ok_plus = _newton_root(assemble, seed_plus, sigma_tol, max_iter)
    z_minus, sigma_minus, it_minus, ok_minus = _newton_root(assemble, seed_minus, sigma_tol, max_iter)

    minima_count = None
    if verify_count:
        re_vals = np.linspace(config.omega_m - search_radius,
                              config.omega_m + search_radius, grid_n)
        im_vals = np.linspace(-search_radius, search_radius, grid_n)
        grid = sigma_grid(medium, frame, eps, re_vals, im_vals, volume_quadrature)
        count_plus = _count_deep_minima(grid)
        minima_count = 2 * count_plus   # the -omega_M disk mirrors exactly
        if count_plus != 1:
            raise MultiplicityAnomalyError(
                f"expected one deep minimum per half-plane disk, found {count_plus}",
                count=minima_count,
                landscape={"re": re_vals, "im": im_vals, "sigma": grid},
            )

    return ResonancePair(
        z_plus=z_plus,
        z_minus=z_minus,
        eps=eps,
        sigma_plus=sigma_plus,
        sigma_minus=sigma_minus,
        iterations=it_plus + it_minus,
        converged=ok_plus and ok_minus,
        operator_norm=op_norm,
        minima_count=minima_count,
    )


# ---------------------------------------------------------------------------
# Truncated cubic characteristic equation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CubicRoots:
    """Roots of eps^2 - w^2/omega_M^2 - i w^3 C/(4 pi c0 omega_M^2) = 0.

    w is the scaled variable (w = eps z); the two O(eps) roots are physical
    and map back to z = w/eps, the third sits near i 4 pi c0 / C and is a
    truncation artifact.
    """

    w_roots: np.ndarray
    physical_w: np.ndarray
    spurious_w: complex
    physical_z: np.ndarray    # None when eps == 0
    eps: float


def cubic_characteristic_roots(config: AsymptoticConfig, eps: float) -> CubicRoots:
    if eps < 0:
        raise UsageError(f"eps must be >= 0, got {eps}")
    c0 = config.medium.c0
    coeff = [1j * config.capacitance / (4.0 * np.pi * c0), 1.0, 0.0,
             -(eps**2) * config.omega_m**2]
    w = np.roots(coeff)
    order = np.argsort(np.abs(w))
    physical = w[order[:2]]
    spurious = complex(w[order[2]])
    physical = physical[np.argsort(-physical.real)]   # z_plus first
    physical_z = physical / eps if eps > 0 else None
    return CubicRoots(w_roots=w, physical_w=physical, spurious_w=spurious,
                      physical_z=physical_z, eps=float(eps))
