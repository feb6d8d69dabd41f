"""Closed-form asymptotic quantities of the high-contrast bubble.

Everything the point-scatterer picture predicts: the Minnaert frequency
omega_M = sqrt(C k1 / (|Omega| rho0)), the resonant denominator

    D(z, eps) = omega_M^2 - z^2 - i eps z^3 C / (4 pi c0),

the leading monopole form of the scattered field, the free resolvent
R_z f = int e^{iz|x-y|}/(4 pi |x-y|) f(y) dy and its Hamiltonian
normalization -c0^{-2} R_{z/c0}, the rank-one point perturbation of the
Laplacian, the resolvent leading terms, and the first-order resonance pair
z_pm = +-omega_M - i (omega_M^2 C / (8 pi c0)) eps.

Capacitance and volume always come in from the discrete pipeline; nothing
here recomputes geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class AsymptoticConfig:
    """Capacitance/volume constants plus the medium they belong to."""

    capacitance: float
    volume: float
    medium: "Medium"
    omega_m: float = None

    def __post_init__(self):
        if self.capacitance <= 0 or self.volume <= 0:
            raise ConfigurationError("capacitance and volume must be positive")
        derived = np.sqrt(self.capacitance * self.medium.k1 / (self.volume * self.medium.rho0))
        if self.omega_m is None:
            object.__setattr__(self, "omega_m", float(derived))
        elif abs(self.omega_m - derived) > 1e-14 * derived:
            raise ConfigurationError(
                f"omega_m {self.omega_m} inconsistent with sqrt(C k1/(|Omega| rho0)) = {derived}"
            )

    @classmethod
    def from_frame(cls, frame, medium) -> "AsymptoticConfig":
        return cls(capacitance=frame.capacitance, volume=frame.volume, medium=medium)


def minnaert_frequency(config: AsymptoticConfig) -> float:
    """sqrt(C k1 / (|Omega| rho0)); scales as 1/R for a radius-R sphere."""
    return config.omega_m


def denominator(config: AsymptoticConfig, z: complex, eps: float) -> complex:
    """Resonant denominator omega_M^2 - z^2 - i eps z^3 C/(4 pi c0)."""
    return (config.omega_m**2 - z**2
            - 1j * eps * z**3 * config.capacitance / (FOUR_PI * config.medium.c0))


@dataclass(frozen=True)
class LowerBoundReport:
    samples: np.ndarray
    values: np.ndarray        # |C1 - z^2 - i eps z^3 C2|
    bound: float              # (sqrt2/4) C1 eps
    passed: np.ndarray

    @property
    def all_passed(self) -> bool:
        return bool(self.passed.all())


def denominator_lower_bound_check(config: AsymptoticConfig, samples, eps: float) -> LowerBoundReport:
    """Check |C1 - z^2 - i eps z^3 C2| >= (sqrt2/4) C1 eps on the samples.

    C1 = omega_M^2 and C2 = C/(4 pi c0).  The admissible window
    eps < min(1/(2 d_max C2), 1/d_min) is a precondition; outside it the
    bound is not claimed and a ConfigurationError is raised.
    """
    samples = np.asarray(samples, dtype=complex).ravel()
    if samples.size == 0:
        raise UsageError("empty sample set")
    if np.any(samples == 0) or np.any(samples.imag < -1e-15):
        raise UsageError("samples must lie in the closed upper half-plane minus 0")
    c1 = config.omega_m**2
    c2 = config.capacitance / (FOUR_PI * config.medium.c0)
    d_max = float(np.abs(samples).max())
    d_min = float(np.abs(samples).min())
    window = min(1.0 / (2.0 * d_max * c2), 1.0 / d_min)
    if not 0.0 < eps < window:
        raise ConfigurationError(
            f"eps = {eps} outside the admissible window (0, {window:.6g})"
        )
    values = np.abs(c1 - samples**2 - 1j * eps * samples**3 * c2)
    bound = np.sqrt(2.0) / 4.0 * c1 * eps
    return LowerBoundReport(samples=samples, values=values, bound=float(bound),
                            passed=values >= bound)


def point_scatterer_field(config: AsymptoticConfig, omega: float, eps: float,
                          u_in_at_y0: complex, points) -> np.ndarray:
    """Leading monopole term of the scattered field.

    [eps omega^2 C / D(omega, eps)] u_in(y0) e^{i omega |x-y0|/c0} / (4 pi |x-y0|);
    at omega = omega_M the coefficient collapses to i 4 pi c0 / omega_M,
    independent of eps.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    rel = points - np.asarray(config.medium.y0)[None, :]
    r = np.linalg.norm(rel, axis=1)
    if np.any(r == 0.0):
        raise UsageError("evaluation point coincides with the bubble center")
    coeff = eps * omega**2 * config.capacitance / denominator(config, omega, eps)
    return coeff * u_in_at_y0 * np.exp(1j * (omega / config.medium.c0) * r) / (FOUR_PI * r)


# ---------------------------------------------------------------------------
# Compactly supported sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CompactSource:
    """Smooth compactly supported source with its own ball quadrature.

    The quadrature is a radial Gauss-Legendre x spherical product rule over
    the support ball; `values` caches the source samples at the nodes.
    """

    center: np.ndarray
    radius: float
    func: callable
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.values is None:
            object.__setattr__(self, "values", np.asarray(self.func(self.nodes), dtype=complex))

    @property
    def mass(self) -> complex:
        return complex(self.weights @ self.values)

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        vals = np.asarray(self.func(points), dtype=complex)
        outside = np.linalg.norm(points - self.center[None, :], axis=1) > self.radius
        vals[outside] = 0.0
        return vals


def ball_quadrature(center, radius: float, n_radial: int = 12, n_polar: int = 12,
                    n_azimuth: int = 24):
    """Product rule over a ball: GL in r (weight r^2), GL in cos(theta), uniform phi."""
    center = np.asarray(center, dtype=float)
    t, wt = np.polynomial.legendre.leggauss(n_radial)
    r = 0.5 * (t + 1.0) * radius
    wr = 0.5 * wt * radius * r**2
    mu, wmu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
    wphi = np.full(n_azimuth, 2.0 * np.pi / n_azimuth)

    sin_t = np.sqrt(1.0 - mu**2)
    dirs = np.stack(
        [
            np.outer(sin_t, np.cos(phi)),
            np.outer(sin_t, np.sin(phi)),
            np.broadcast_to(mu[:, None], (n_polar, n_azimuth)),
        ],
        axis=-1,
    )                                            # (n_polar, n_azimuth, 3)
    nodes = center + r[:, None, None, None] * dirs[None, :, :, :]
    weights = wr[:, None, None] * wmu[None, :, None] * wphi[None, None, :]
    return nodes.reshape(-1, 3), weights.reshape(-1)


def gaussian_bump(center, sigma: float, mass: complex = 1.0, cutoff: float = 6.0,
                  n_radial: int = 16, n_polar: int = 10, n_azimuth: int = 20) -> CompactSource:
    """Normalized Gaussian mass * (2 pi sigma^2)^{-3/2} exp(-|x-c|^2/(2 sigma^2)),
    truncated at cutoff * sigma (exp(-18) at the default cutoff)."""
    center = np.asarray(center, dtype=float)
    radius = cutoff * sigma
    amp = mass / (2.0 * np.pi * sigma**2) ** 1.5

    def func(points):
        d2 = np.sum((np.asarray(points) - center) ** 2, axis=-1)
        return amp * np.exp(-0.5 * d2 / sigma**2)

    nodes, weights = ball_quadrature(center, radius, n_radial, n_polar, n_azimuth)
    return CompactSource(center=center, radius=radius, func=func,
                         nodes=nodes, weights=weights)


# ---------------------------------------------------------------------------
# Free resolvent and point perturbation
# ---------------------------------------------------------------------------

def free_resolvent(z: complex, source: CompactSource, points) -> np.ndarray:
    """(R_z f)(x) = int e^{iz|x-y|}/(4 pi |x-y|) f(y) dy by source quadrature."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    d = points[:, None, :] - source.nodes[None, :, :]
    r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
    if np.any(r < 1e-300):
        raise UsageError("evaluation point coincides with a source node")
    return (np.exp((1j * z) * r) / (FOUR_PI * r)) @ (source.weights * source.values)


def free_resolvent_gradient(z: complex, source: CompactSource, points) -> np.ndarray:
    """grad_x (R_z f)(x), shape (n_points, 3)."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    d = points[:, None, :] - source.nodes[None, :, :]
    r = np.sqrt(np.einsum("ijx,ijx->ij", d, d))
    radial = ((1j * z) * r - 1.0) * np.exp((1j * z) * r) / (FOUR_PI * r**3)
    return np.einsum("ij,ijx,j->ix", radial, d, source.weights * source.values)


def hamiltonian_free_resolvent(config_or_c0, z: complex, source: CompactSource,
                               points) -> np.ndarray:
    """R^H_0(z) f = -c0^{-2} R_{z/c0} f."""
    c0 = getattr(getattr(config_or_c0, "medium", config_or_c0), "c0", config_or_c0)
    return -free_resolvent(z / c0, source, points) / c0**2


def point_perturbation_resolvent(config: AsymptoticConfig, z: complex,
                                 source: CompactSource, points) -> np.ndarray:
    """Rank-one point perturbation of the free Laplacian resolvent at y0:

    -c0^{-2} (R_{z/c0} f)(x) - (i/(c0 z)) e^{iz|x-y0|/c0}/|x-y0| (R_{z/c0} f)(y0).
    """
    if z == 0:
        raise UsageError("point perturbation is undefined at z = 0")
    c0 = config.medium.c0
    y0 = np.asarray(config.medium.y0, dtype=float)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    r0 = np.linalg.norm(points - y0[None, :], axis=1)
    if np.any(r0 == 0.0):
        raise UsageError("evaluation point coincides with the perturbation point y0")
    free = -free_resolvent(z / c0, source, points) / c0**2
    at_y0 = free_resolvent(z / c0, source, y0)[0]
    mono = -(1j / (c0 * z)) * np.exp(1j * (z / c0) * r0) / r0 * at_y0
    return free + mono


def resolvent_leading(config: AsymptoticConfig, z: complex, eps: float,
                      h_at_y0: complex, rh_at_y0: complex, points,
                      free_values, statement: int = 2,
                      normalization: str = "hamiltonian") -> np.ndarray:
    """Leading terms of the perturbed resolvent applied to a source h.

    free_values are (R^H_0 h)(x) at the points and rh_at_y0 is (R^H_0 h)(y0).
    Statement 1 adds the monopole [eps z^2 C / D] rh_at_y0 G_z(x, y0);
    statement 2 additionally adds [eps C / D] h(y0) G_z(x, y0), the term that
    survives for sources not vanishing at y0.  The 'propagator' normalization
    multiplies the statement-1 form by k0.
    """
    if statement not in (1, 2):
        raise UsageError(f"statement must be 1 or 2, got {statement}")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    free_values = np.asarray(free_values, dtype=complex).reshape(-1)
    if free_values.shape[0] != points.shape[0]:
        raise UsageError("free_values and points disagree in length")
    y0 = np.asarray(config.medium.y0, dtype=float)
    r0 = np.linalg.norm(points - y0[None, :], axis=1)
    if eps == 0.0:
        out = free_values.copy()
    else:
        green = np.exp(1j * (z / config.medium.c0) * r0) / (FOUR_PI * r0)
        d = denominator(config, z, eps)
        out = free_values + (eps * z**2 * config.capacitance / d) * rh_at_y0 * green
        if statement == 2 and normalization == "hamiltonian":
            out = out + (eps * config.capacitance / d) * h_at_y0 * green
    if normalization == "propagator":
        return config.medium.k0 * out
    if normalization != "hamiltonian":
        raise UsageError(f"unknown normalization {normalization!r}")
    return out


def resonance_first_order(config: AsymptoticConfig, eps: float) -> tuple[complex, complex]:
    """z_pm = +-omega_M - i (omega_M^2 C/(8 pi c0)) eps; z_minus = -conj(z_plus)."""
    if eps < 0:
        raise UsageError(f"eps must be >= 0, got {eps}")
    damp = config.omega_m**2 * config.capacitance / (8.0 * np.pi * config.medium.c0)
    z_plus = config.omega_m - 1j * damp * eps
    return z_plus, -np.conj(z_plus)
