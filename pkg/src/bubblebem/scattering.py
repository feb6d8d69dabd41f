"""Bubble scattering solves and field evaluation.

The physical problem lives on the shrunk bubble Omega_eps = y0 + eps(Omega -
y0), but every linear solve happens on the reference domain Omega at the
scaled wavenumber eps*omega/c0, in the variables w = u o Phi_eps.  With the
contrast gamma = 1/c1^2 - 1/c0^2 and beta = rho0/(rho1 eps^2) - 1, the
coupled reference system reads

    [I - gamma (eps w)^2 N] w + beta SL dnw = w_in              in Omega,
    -gamma (eps w)^2 dN w + (beta + 1) Lambda dnw = dn w_in     on Gamma,

with Lambda = (1/2)(1 + rho1 eps^2/rho0) I + (1 - rho1 eps^2/rho0) K*.
For c1 = c0 the volume coupling vanishes identically and only the boundary
equation is solved.  Fields anywhere follow from the integral representation
mapped back through Phi_{1/eps}.

The same machinery applies the resolvent of the acoustic propagator to
compactly supported sources: the incident trace is replaced by the free
resolvent of the source and its normal derivative.
"""

from __future__ import annotations

import uuid
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import asymptotics
from .errors import ConfigurationError, NearSingularEvaluationError, UsageError
from .geometry import ScalingMap, SurfaceMesh, VolumeQuadrature, make_volume_quadrature, scale_mesh
from .layer_ops import (
    Density,
    VolumeField,
    _distance_to_surface,
    _potential_apply,
    apply_N,
    assemble_K,
    assemble_N,
    assemble_S,
    assemble_Kstar,
    eval_SL_unchecked,
    helmholtz_kernel,
    helmholtz_normal_kernel,
    mesh_tables,
    normal_derivative_of_N,
)

FOUR_PI = 4.0 * np.pi


# ---------------------------------------------------------------------------
# Medium and incident fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Medium:
    """Piecewise-constant acoustic medium with the high-contrast scaling.

    Background density/bulk modulus (rho0, k0) outside the bubble; the bubble
    of size eps about y0 carries rho1 * eps^2 and k1 * eps^2.
    """

    rho0: float
    k0: float
    rho1: float
    k1: float
    eps: float
    y0: np.ndarray

    def __post_init__(self):
        for name in ("rho0", "k0", "rho1", "k1", "eps"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"medium parameter {name} must be positive")
        object.__setattr__(self, "y0", np.asarray(self.y0, dtype=float))

    @property
    def c0(self) -> float:
        return float(np.sqrt(self.k0 / self.rho0))

    @property
    def c1(self) -> float:
        return float(np.sqrt(self.k1 / self.rho1))

    @property
    def contrast(self) -> float:
        """rho1 eps^2 / rho0, the small density ratio."""
        return self.rho1 * self.eps**2 / self.rho0


def canonical_medium(eps: float, y0=(0.0, 0.0, 0.0)) -> Medium:
    """Unit parameters rho0 = k0 = rho1 = k1 = 1 (so c1 = c0 = 1)."""
    return Medium(rho0=1.0, k0=1.0, rho1=1.0, k1=1.0, eps=eps, y0=np.asarray(y0, float))


class IncidentField:
    """Closed-form incident field with value and gradient closures."""

    def __init__(self, kind: str, omega: float, c0: float, value, gradient, params=None):
        self.kind = kind
        self.omega = float(omega)
        self.c0 = float(c0)
        self.value = value
        self.gradient = gradient
        self.params = params or {}


def plane_wave(direction, omega: float, c0: float = 1.0) -> IncidentField:
    """u_in(x) = exp(i (omega/c0) d.x) with |d| = 1."""
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if abs(norm - 1.0) > 1e-12:
        if norm == 0:
            raise ConfigurationError("plane-wave direction must be nonzero")
        direction = direction / norm
    k = omega / c0

    def value(points):
        points = np.asarray(points, dtype=float)
        return np.exp(1j * k * (points @ direction))

    def gradient(points):
        return (1j * k) * direction[None, :] * value(points)[..., None]

    return IncidentField("plane_wave", omega, c0, value, gradient,
                         {"direction": direction})


def point_source(location, omega: float, c0: float = 1.0) -> IncidentField:
    """u_in(x) = e^{i(omega/c0)|x - xs|} / (4 pi |x - xs|), xs off the bubble."""
    location = np.asarray(location, dtype=float)
    k = omega / c0

    def value(points):
        r = np.linalg.norm(np.asarray(points, float) - location, axis=-1)
        return np.exp(1j * k * r) / (FOUR_PI * r)

    def gradient(points):
        d = np.asarray(points, float) - location
        r = np.linalg.norm(d, axis=-1)
        radial = (1j * k * r - 1.0) * np.exp(1j * k * r) / (FOUR_PI * r**3)
        return radial[..., None] * d

    return IncidentField("point_source", omega, c0, value, gradient,
                         {"location": location})


def helmholtz_residual(incident: IncidentField, points, step: float = 1e-3) -> np.ndarray:
    """|Laplacian u + (omega/c0)^2 u| / |u| by central differences (7-point)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lap = -6.0 * incident.value(points)
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = step
        lap = lap + incident.value(points + offset) + incident.value(points - offset)
    lap /= step**2
    k2 = (incident.omega / incident.c0) ** 2
    return np.abs(lap + k2 * incident.value(points)) / np.abs(incident.value(points))


# ---------------------------------------------------------------------------
# The scaled solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScatterSolution:
    """Scaled-domain solution of one scattering problem.

    boundary_density holds dn w on the reference surface (the interior
    normal derivative in the w variables); interior_values holds w at the
    volume quadrature nodes.  Fields anywhere come from eval_field.
    """

    omega: float
    medium: Medium
    mesh: SurfaceMesh
    volume_quadrature: VolumeQuadrature
    boundary_density: Density
    interior_values: VolumeField
    incident: IncidentField
    diagnostics: dict

    def scaled_mesh(self) -> SurfaceMesh:
        cached = getattr(self, "_scaled_mesh", None)
        if cached is None:
            cached = scale_mesh(self.mesh, ScalingMap(self.medium.y0, self.medium.eps))
            object.__setattr__(self, "_scaled_mesh", cached)
        return cached


def _lambda_matrix(mesh: SurfaceMesh, medium: Medium, zb: complex) -> np.ndarray:
    contrast = medium.contrast
    kstar = assemble_Kstar(mesh, zb)
    return (0.5 * (1.0 + contrast) * np.eye(mesh.n_panels)
            + (1.0 - contrast) * kstar.matrix)


def _speeds_equal(medium: Medium) -> bool:
    return abs(medium.c1 - medium.c0) <= 1e-12 * medium.c0


def _solve_scaled_system(mesh, vq, medium, omega_or_z, w_in_nodes, dnw_in,
                         f_nodes=None):
    """Shared core of solve_bubble and resolvent_apply on the reference domain.

    Returns (w values on volume nodes, dn w panel coefficients, diagnostics).
    `f_nodes`, when given, adds the volume source terms of the resolvent
    system (eps^2 gamma N f and eps^2 gamma dN f).
    """
    eps = medium.eps
    zb = eps * omega_or_z / medium.c0
    beta = medium.rho0 / (medium.rho1 * eps**2) - 1.0
    gamma = 1.0 / medium.c1**2 - 1.0 / medium.c0**2
    lam = _lambda_matrix(mesh, medium, zb)
    scale = medium.rho0 / (medium.rho1 * eps**2)
    diagnostics = {}

    if _speeds_equal(medium):
        rhs = dnw_in / scale
        try:
            lu = lu_factor(lam)
            dnw = lu_solve(lu, rhs)
        except np.linalg.LinAlgError:
            dnw, *_ = np.linalg.lstsq(lam, rhs, rcond=None)
            warnings.warn("near-real-resonance boundary system; least-squares fallback")
        residual = np.linalg.norm(lam @ dnw - rhs) / max(np.linalg.norm(rhs), 1e-300)
        diagnostics["system_residual"] = float(residual)
        cond = np.linalg.cond(lam) if mesh.n_panels <= 800 else None
        if cond is not None and cond > 1e12:
            warnings.warn(f"near-real-resonance boundary system (cond ~ {cond:.2e})")
        diagnostics["condition_estimate"] = cond
        # interior: w = w_in - beta SL dnw (+ resolvent source term)
        w_nodes = w_in_nodes - beta * _potential_apply(
            mesh, helmholtz_kernel(zb), dnw, vq.nodes)
        if f_nodes is not None and np.any(f_nodes):
            nop = assemble_N(vq, zb)
            w_nodes = w_nodes + eps**2 * gamma * (nop.matrix @ f_nodes)
        return w_nodes, dnw, diagnostics

    m = vq.n_nodes
    n = mesh.n_panels
    zsq = (eps * omega_or_z) ** 2
    nop = assemble_N(vq, zb).matrix
    sl_mat = _sl_matrix(mesh, zb, vq.nodes)
    dn_mat = _dn_newton_matrix(mesh, vq, zb)

    a = np.empty((m + n, m + n), dtype=complex)
    a[:m, :m] = -gamma * zsq * nop
    a[:m, :m][np.diag_indices(m)] += 1.0
    a[:m, m:] = beta * sl_mat
    a[m:, :m] = -gamma * zsq * dn_mat
    a[m:, m:] = scale * lam

    rhs = np.concatenate([w_in_nodes, dnw_in])
    if f_nodes is not None and np.any(f_nodes):
        rhs = rhs + eps**2 * gamma * np.concatenate([nop @ f_nodes, dn_mat @ f_nodes])
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        warnings.warn("near-real-resonance coupled system; least-squares fallback")
    residual = np.linalg.norm(a @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
    diagnostics["system_residual"] = float(residual)
    diagnostics["condition_estimate"] = None
    return sol[:m], sol[m:], diagnostics


def _sl_matrix(mesh: SurfaceMesh, z: complex, points: np.ndarray) -> np.ndarray:
    """(n_points, n_panels) single-layer potential matrix at interior points."""
    cols = np.empty((len(points), mesh.n_panels), dtype=complex)
    basis = np.zeros(mesh.n_panels, dtype=complex)
    # column assembly through the near-aware potential engine
    for j in range(mesh.n_panels):
        basis[j] = 1.0
        cols[:, j] = _potential_apply(mesh, helmholtz_kernel(z), basis, points)
        basis[j] = 0.0
    return cols


def _dn_newton_matrix(mesh: SurfaceMesh, vq: VolumeQuadrature, z: complex) -> np.ndarray:
    """(n_panels, n_nodes) normal derivative of the Newtonian potential."""
    kern = helmholtz_normal_kernel(z)
    d = mesh.panel_centroids[:, None, :] - vq.nodes[None, :, :]
    r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
    ndot = np.einsum("ix,ijx->ij", mesh.panel_normals, d)
    return kern(r, ndot) * vq.weights[None, :]


def solve_bubble(medium: Medium, omega: float, incident: IncidentField,
                 mesh: SurfaceMesh, volume_quadrature: VolumeQuadrature = None,
                 radial_order: int = 4) -> ScatterSolution:
    """Solve the transmission problem for one bubble and one incident field.

    All operators are assembled on the reference mesh at the scaled
    wavenumber eps*omega/c0; the incident data is pulled back through
    Phi_eps with its analytic gradient.
    """
    if omega <= 0:
        raise UsageError(f"omega must be positive, got {omega}")
    if abs(incident.omega - omega) > 1e-12 * max(1.0, omega):
        raise UsageError("incident field frequency disagrees with omega")
    if abs(incident.c0 - medium.c0) > 1e-12 * medium.c0:
        raise UsageError("incident field wave speed disagrees with the medium")
    if volume_quadrature is None:
        volume_quadrature = make_volume_quadrature(mesh, medium.y0, radial_order)
    if volume_quadrature.mesh_id != mesh.mesh_id:
        raise UsageError("volume quadrature was built on a different mesh")

    eps = medium.eps
    phi_eps = ScalingMap(medium.y0, eps)
    w_in_nodes = incident.value(phi_eps.apply(volume_quadrature.nodes))
    grad_in = incident.gradient(phi_eps.apply(mesh.panel_centroids))
    dnw_in = eps * np.einsum("ix,ix->i", mesh.panel_normals, grad_in)

    w_nodes, dnw, diagnostics = _solve_scaled_system(
        mesh, volume_quadrature, medium, omega, w_in_nodes, dnw_in)

    return ScatterSolution(
        omega=float(omega),
        medium=medium,
        mesh=mesh,
        volume_quadrature=volume_quadrature,
        boundary_density=Density(dnw, mesh.mesh_id),
        interior_values=VolumeField(w_nodes, volume_quadrature.quadrature_id),
        incident=incident,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Field evaluation
# ---------------------------------------------------------------------------

def _representation_eval(mesh, vq, medium, omega_or_z, w_nodes, dnw, points,
                         extra_volume=None):
    """Integral representation mapped through Phi_{1/eps}, evaluated at points.

    Returns the total minus incident part (the potentials only):
        gamma z^2 eps^3 int G(x, Phi_eps(y)) w dy
      + gamma eps^3 int G(x, Phi_eps(y)) f dy            [extra_volume]
      - beta / eps * SL_{Gamma_eps}(dn w)(x).
    """
    eps = medium.eps
    k0 = omega_or_z / medium.c0
    beta = medium.rho0 / (medium.rho1 * eps**2) - 1.0
    gamma = 1.0 / medium.c1**2 - 1.0 / medium.c0**2
    points = np.asarray(points, dtype=float).reshape(-1, 3)

    phi_eps = ScalingMap(medium.y0, eps)
    out = np.zeros(len(points), dtype=complex)
    if gamma != 0.0 or extra_volume is not None:
        mapped = phi_eps.apply(vq.nodes)
        d = points[:, None, :] - mapped[None, :, :]
        r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
        green = np.exp((1j * k0) * r) / (FOUR_PI * r)
        if gamma != 0.0:
            out += gamma * omega_or_z**2 * eps**3 * (green @ (vq.weights * w_nodes))
            if extra_volume is not None:
                out += gamma * eps**3 * (green @ (vq.weights * extra_volume))

    scaled = scale_mesh(mesh, phi_eps)
    out -= (beta / eps) * _potential_apply(
        scaled, helmholtz_kernel(k0), np.asarray(dnw, dtype=complex), points)
    return out


def _check_eval_points(solution: ScatterSolution, points: np.ndarray) -> None:
    scaled = solution.scaled_mesh()
    dist = _distance_to_surface(scaled, points)
    limit = solution.medium.eps * solution.mesh.h_min
    if np.any(dist <= limit):
        worst = int(np.argmin(dist))
        raise NearSingularEvaluationError(
            f"point {points[worst]} is {dist[worst]:.3e} from the bubble surface "
            f"(< eps*h_min = {limit:.3e})"
        )


def eval_field(solution: ScatterSolution, points) -> np.ndarray:
    """Total field u at points away from the bubble surface."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    _check_eval_points(solution, points)
    pot = _representation_eval(
        solution.mesh, solution.volume_quadrature, solution.medium,
        solution.omega, solution.interior_values.values,
        solution.boundary_density.coefficients, points)
    return solution.incident.value(points) + pot


def eval_scattered(solution: ScatterSolution, points) -> np.ndarray:
    """Scattered field u - u_in."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    _check_eval_points(solution, points)
    return _representation_eval(
        solution.mesh, solution.volume_quadrature, solution.medium,
        solution.omega, solution.interior_values.values,
        solution.boundary_density.coefficients, points)


def boundary_trace(solution: ScatterSolution) -> np.ndarray:
    """w on the reference surface (panel collocation values).

    Evaluated from the volume representation restricted to Gamma, where the
    single-layer part is the boundary operator itself.
    """
    medium = solution.medium
    eps = medium.eps
    zb = eps * solution.omega / medium.c0
    beta = medium.rho0 / (medium.rho1 * eps**2) - 1.0
    gamma = 1.0 / medium.c1**2 - 1.0 / medium.c0**2
    mesh = solution.mesh
    phi_eps = ScalingMap(medium.y0, eps)
    w_in = solution.incident.value(phi_eps.apply(mesh.panel_centroids))
    s_mat = assemble_S(mesh, zb).matrix
    trace = w_in - beta * (s_mat @ solution.boundary_density.coefficients)
    if gamma != 0.0:
        vq = solution.volume_quadrature
        kern = helmholtz_kernel(zb)
        d = mesh.panel_centroids[:, None, :] - vq.nodes[None, :, :]
        r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
        trace = trace + gamma * (eps * solution.omega) ** 2 * (
            kern(r, None) @ (vq.weights * solution.interior_values.values))
    return trace


def exterior_flux(solution: ScatterSolution) -> complex:
    """int_{Gamma_eps} conj(u) dn u+ dsigma, normalized by its absolute scale.

    Radiating solutions of the lossless problem carry Im >= 0 (zero in exact
    arithmetic); the sign is the energy-flux sanity check.
    """
    medium = solution.medium
    trace = boundary_trace(solution)
    dnw = solution.boundary_density.coefficients
    # dsigma_eps = eps^2 dsigma, dn u- = dn w / eps, dn u+ = (rho0/(rho1 eps^2)) dn u-
    scale = medium.rho0 / (medium.rho1 * medium.eps)
    flux = scale * np.sum(solution.mesh.panel_areas * np.conj(trace) * dnw)
    norm = scale * np.sum(solution.mesh.panel_areas * np.abs(trace) * np.abs(dnw))
    return complex(flux / max(norm, 1e-300))


def normal_derivative_via_dtn(mesh: SurfaceMesh, z: complex, trace_values) -> np.ndarray:
    """Dirichlet-to-Neumann route dn g = S_z^{-1} (1/2 I + K_z) g for interior
    Helmholtz solutions; the independent cross-check of the analytic-gradient
    incident data."""
    s_mat = assemble_S(mesh, z).matrix
    k_mat = assemble_K(mesh, z).matrix
    rhs = 0.5 * np.asarray(trace_values, dtype=complex) + k_mat @ np.asarray(trace_values, complex)
    return np.linalg.solve(s_mat, rhs)


# ---------------------------------------------------------------------------
# Flux identity
# ---------------------------------------------------------------------------

def check_flux_identity(solution: ScatterSolution, frame=None) -> tuple[complex, complex, float]:
    """Both sides of the interior flux identity and their relative residual:

    <dn N w, e> = -(eps^2 w^2/(C c0^2)) intint G w + (c1^2/(eps^2 w^2)) <dn w, e>.
    """
    from .spectral import build_frame

    if frame is None:
        frame = build_frame(solution.mesh)
    if frame.mesh_id != solution.mesh.mesh_id:
        raise UsageError("frame was built on a different mesh")
    medium = solution.medium
    eps = medium.eps
    omega = solution.omega
    zb = eps * omega / medium.c0
    vq = solution.volume_quadrature
    w_field = solution.interior_values

    dn_n = normal_derivative_of_N(solution.mesh, vq, w_field, zb)
    lhs = complex(frame.inner_row @ dn_n.coefficients)

    double_integral = complex(vq.weights @ apply_N(vq, w_field, zb))
    dnw_proj = complex(frame.inner_row @ solution.boundary_density.coefficients)
    rhs = (-(eps**2 * omega**2) / (frame.capacitance * medium.c0**2) * double_integral
           + medium.c1**2 / (eps**2 * omega**2) * dnw_proj)
    residual = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
    return lhs, rhs, float(residual)


# ---------------------------------------------------------------------------
# Resolvent of the acoustic propagator
# ---------------------------------------------------------------------------

def resolvent_apply(medium: Medium, z: complex, source, mesh: SurfaceMesh,
                    volume_quadrature: VolumeQuadrature = None,
                    radial_order: int = 4,
                    normalization: str = "hamiltonian"):
    """Apply the resolvent of the perturbed medium to a compact source.

    Hamiltonian normalization solves (-H - z^2) u = f; the propagator
    normalization applies the resolvent to k_eps * f per the exact relation
    R(z) f = R^H(z) (k_eps f).  Returns a ResolventField evaluator.
    """
    if z == 0:
        raise UsageError("resolvent is undefined at z = 0")
    if volume_quadrature is None:
        volume_quadrature = make_volume_quadrature(mesh, medium.y0, radial_order)
    if volume_quadrature.mesh_id != mesh.mesh_id:
        raise UsageError("volume quadrature was built on a different mesh")
    if normalization not in ("hamiltonian", "propagator"):
        raise UsageError(f"unknown normalization {normalization!r}")

    if normalization == "propagator":
        keps = np.where(
            np.linalg.norm(source.nodes - np.asarray(medium.y0), axis=1) < medium.eps,
            medium.k1 * medium.eps**2, medium.k0)
        source = asymptotics.CompactSource(
            center=source.center, radius=source.radius, func=source.func,
            nodes=source.nodes, weights=source.weights,
            values=source.values * keps)

    eps = medium.eps
    phi_eps = ScalingMap(medium.y0, eps)
    c0 = medium.c0

    mapped_nodes = phi_eps.apply(volume_quadrature.nodes)
    v_nodes = -asymptotics.free_resolvent(z / c0, source, mapped_nodes) / c0**2
    grad = -asymptotics.free_resolvent_gradient(
        z / c0, source, phi_eps.apply(mesh.panel_centroids)) / c0**2
    dnv = eps * np.einsum("ix,ix->i", mesh.panel_normals, grad)
    f_nodes = source(mapped_nodes)

    w_nodes, dnw, diagnostics = _solve_scaled_system(
        mesh, volume_quadrature, medium, z, v_nodes, dnv, f_nodes=f_nodes)

    return _ResolventField(medium, complex(z), source, mesh, volume_quadrature,
                           w_nodes, dnw, f_nodes, diagnostics)


class _ResolventField:
    def __init__(self, medium, z, source, mesh, vq, w_nodes, dnw, f_nodes, diagnostics):
        self.medium = medium
        self.z = z
        self.source = source
        self.mesh = mesh
        self.volume_quadrature = vq
        self.w_nodes = w_nodes
        self.dnw = dnw
        self.f_nodes = f_nodes
        self.diagnostics = diagnostics

    def free_field(self, points) -> np.ndarray:
        c0 = self.medium.c0
        return -asymptotics.free_resolvent(self.z / c0, self.source, points) / c0**2

    def evaluate(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        pot = _representation_eval(
            self.mesh, self.volume_quadrature, self.medium, self.z,
            self.w_nodes, self.dnw, points, extra_volume=self.f_nodes)
        return self.free_field(points) + pot

    __call__ = evaluate
