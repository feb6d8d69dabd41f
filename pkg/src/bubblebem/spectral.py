"""Spectral frame of the static Neumann-Poincare operator.

Everything here revolves around the equilibrium density e = S_0^{-1} 1, the
capacitance C = int_Gamma e, the bilinear product

    <phi, psi> = C^{-1} int_Gamma (S_0 phi) psi dsigma,

the rank-one projection P phi = <phi, e> e onto the eigenspace of K*_0 at
-1/2, and the 2x2 block representation of operators in the splitting
span{e} + span{e}^perp.  The block inverse is what turns the near-singular
high-contrast operator (Lambda^(2) + eps^2 beta P) into an explicitly
controlled solve: its Schur scalar vanishing is precisely the resonance
condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import NearResonanceError, NumericalFailure, UsageError
from .geometry import SurfaceMesh
from .layer_ops import BoundaryOperator, Density, assemble_Kstar, assemble_S


@dataclass(frozen=True, eq=False)
class SpectralFrame:
    """Static single-layer data for one mesh.

    Attributes
    ----------
    mesh : SurfaceMesh
    e : Density
        Equilibrium density S_0^{-1} 1, normalized to <e, e> = 1.
    capacitance : float
        C = int_Gamma S_0^{-1} 1 (length units).
    gram : float
        <e, e> after normalization (1 up to rounding).
    s0 : ndarray
        The static single-layer matrix (real), kept for the inner product.
    """

    mesh: SurfaceMesh
    e: Density
    capacitance: float
    gram: float
    s0: np.ndarray
    inner_row: np.ndarray     # row functional of <., e>: inner_row @ phi

    @property
    def mesh_id(self) -> str:
        return self.mesh.mesh_id

    @property
    def volume(self) -> float:
        return self.mesh.volume

    def projection_matrix(self) -> np.ndarray:
        return np.outer(self.e.coefficients, self.inner_row)


def build_frame(mesh: SurfaceMesh) -> SpectralFrame:
    """Solve S_0 e = 1 and package capacitance, product and projection data."""
    s_op = assemble_S(mesh, 0.0)
    s0 = s_op.matrix.real
    ones = np.ones(mesh.n_panels)
    try:
        lu = lu_factor(s0)
        e_raw = lu_solve(lu, ones)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"static single-layer solve failed: {exc}") from exc
    residual = np.linalg.norm(s0 @ e_raw - ones) / np.sqrt(mesh.n_panels)
    if not np.isfinite(e_raw).all() or residual > 1e-8:
        cond = np.linalg.cond(s0)
        raise NumericalFailure(
            f"static single-layer solve unreliable (residual {residual:.2e})",
            condition=cond,
        )

    a = mesh.panel_areas
    capacitance = float(a @ e_raw)
    gram_raw = float((a * (s0 @ e_raw)) @ e_raw) / capacitance
    e = e_raw / np.sqrt(gram_raw)
    inner_row = (s0 @ (a * e)) / capacitance
    gram = float(inner_row @ e)
    return SpectralFrame(
        mesh=mesh,
        e=Density(e, mesh.mesh_id),
        capacitance=capacitance,
        gram=gram,
        s0=s0,
        inner_row=inner_row,
    )


def _coeffs(frame: SpectralFrame, phi) -> np.ndarray:
    if isinstance(phi, Density):
        if phi.mesh_id != frame.mesh_id:
            raise UsageError("density was built on a different mesh")
        return phi.coefficients
    return np.asarray(phi, dtype=complex)


def s0_inner(frame: SpectralFrame, phi, psi) -> complex:
    """Bilinear product C^{-1} int (S_0 phi) psi (no conjugation)."""
    pc = _coeffs(frame, phi)
    qc = _coeffs(frame, psi)
    a = frame.mesh.panel_areas
    return complex((a * (frame.s0 @ pc)) @ qc) / frame.capacitance


def project_P(frame: SpectralFrame, phi) -> Density:
    """Projection onto span{e}: P phi = <phi, e> e."""
    pc = _coeffs(frame, phi)
    return Density((frame.inner_row @ pc) * frame.e.coefficients, frame.mesh_id)


# ---------------------------------------------------------------------------
# Block representation and inverse
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class BlockOperator:
    """2x2 block form of an operator in the span{e} (+) span{e}^perp splitting.

    Complement elements are stored in full panel coordinates and re-projected
    after every application.
    """

    h00: complex
    h01_row: np.ndarray      # functional on the complement: h01_row @ phi_r
    h10: np.ndarray          # column element of the complement
    h11: np.ndarray          # dense (I-P) H (I-P)
    frame: SpectralFrame
    matrix: np.ndarray       # the original operator, kept for residual checks
    _shifted_lu: tuple = field(default=None, repr=False)

    @property
    def frame_id(self) -> str:
        return self.frame.mesh_id

    def _complement_solve(self, rhs: np.ndarray) -> np.ndarray:
        # H11 annihilates span{e}; shift by scale*P to make the full matrix
        # invertible, which leaves the complement action untouched.
        if self._shifted_lu is None:
            scale = np.linalg.norm(self.h11, ord="fro") / np.sqrt(self.h11.shape[0])
            shifted = self.h11 + scale * self.frame.projection_matrix()
            self._shifted_lu = (lu_factor(shifted),)
        x = lu_solve(self._shifted_lu[0], rhs)
        return x - (self.frame.inner_row @ x) * self.frame.e.coefficients


def block_decompose(frame: SpectralFrame, op) -> BlockOperator:
    """Split an operator (BoundaryOperator or matrix) against the frame."""
    if isinstance(op, BoundaryOperator):
        if op.mesh_id != frame.mesh_id:
            raise UsageError("operator was assembled on a different mesh")
        h = op.matrix
    else:
        h = np.asarray(op, dtype=complex)
    e = frame.e.coefficients
    w = frame.inner_row
    q = h @ e
    h00 = complex(w @ q)
    h10 = q - h00 * e
    p_row = w @ h
    h11 = h - np.outer(e, p_row) - np.outer(q, w) + h00 * np.outer(e, w)
    return BlockOperator(h00=h00, h01_row=p_row, h10=h10, h11=h11,
                         frame=frame, matrix=h)


def block_invert(block: BlockOperator, phi) -> Density:
    """Apply the explicit 2x2 block inverse to phi.

    Raises NearResonanceError when the Schur scalar
    h00 - H01 H11^{-1} H10 falls below 1e-13 * ||H||; that degeneracy is the
    resonance signal the root finder exploits.
    """
    frame = block.frame
    pc = _coeffs(frame, phi)
    e = frame.e.coefficients
    a_phi = complex(frame.inner_row @ pc)
    phi_r = pc - a_phi * e

    u = block._complement_solve(block.h10)
    x = block._complement_solve(phi_r)
    schur = block.h00 - complex(block.h01_row @ u)
    op_norm = np.linalg.norm(block.matrix, ord="fro")
    if abs(schur) <= 1e-13 * op_norm:
        raise NearResonanceError(
            f"Schur scalar {abs(schur):.3e} below threshold ({1e-13 * op_norm:.3e})",
            schur_scalar=schur,
        )
    coef = (a_phi - complex(block.h01_row @ x)) / schur
    return Density(coef * e + (x - coef * u), frame.mesh_id)


# ---------------------------------------------------------------------------
# The controlled high-contrast inverse
# ---------------------------------------------------------------------------

def lambda2_matrix(frame: SpectralFrame, z: complex, eps: float, medium) -> np.ndarray:
    """(1/2)(1 + rho1 eps^2/rho0) I + (1 - rho1 eps^2/rho0) K*_{eps z / c0}."""
    contrast = medium.rho1 * eps**2 / medium.rho0
    kstar = assemble_Kstar(frame.mesh, eps * z / medium.c0)
    n = frame.mesh.n_panels
    return 0.5 * (1.0 + contrast) * np.eye(n) + (1.0 - contrast) * kstar.matrix


def invert_lambda2(frame: SpectralFrame, z: complex, eps: float, beta: float,
                   medium, phi) -> tuple[Density, complex]:
    """eps^2 (Lambda^(2) + eps^2 beta P)^{-1} phi via the block inverse.

    Also returns the closed-form leading coefficient of the e-component,

        <phi, e> / (rho1/rho0 + beta - z^2 |Omega| / (C c0^2)
                    - i z^3 |Omega| eps / (4 pi c0^3)),

    against which the numerical result is O(eps) accurate.
    """
    if beta < 0:
        raise UsageError(f"beta must be >= 0, got {beta}")
    mat = lambda2_matrix(frame, z, eps, medium)
    if beta != 0.0:
        mat = mat + (eps**2 * beta) * frame.projection_matrix()
    block = block_decompose(frame, mat)
    inv = block_invert(block, phi)
    result = Density(eps**2 * inv.coefficients, frame.mesh_id)

    volume = frame.volume
    c0 = medium.c0
    denom = (medium.rho1 / medium.rho0 + beta
             - z**2 * volume / (frame.capacitance * c0**2)
             - 1j * z**3 * volume * eps / (4.0 * np.pi * c0**3))
    a_phi = complex(frame.inner_row @ _coeffs(frame, phi))
    return result, a_phi / denom
