"""Magnon dispersion and photon-magnon hybridization.

The in-plane magnetized film supports a uniform precession mode plus
thickness-quantized dipole-exchange modes at k_n = n*pi/L. Coupling one
microwave resonator mode to that family gives the arrowhead Hamiltonian
diagonalized here; the two-mode special case has the closed-form branch
frequencies and linewidths used throughout the fitting layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (ContractError, CouplingModel, DomainError, MagnonParams,
                   ResonatorParams, _readonly)


def _dispersion(b0, gamma: float, mu0_meff: float, exchange_field):
    """gamma * sqrt((B + E) * (B + mu0_meff + E)) with E the exchange term."""
    b = np.asarray(b0, dtype=float)
    if np.any(b < 0):
        raise DomainError("bias field must be non-negative")
    return gamma * np.sqrt((b + exchange_field) * (b + mu0_meff + exchange_field))


def kittel_frequency(b0, magnon: MagnonParams):
    """Uniform-mode frequency, omega_m = gamma*sqrt(B0*(B0 + mu0_meff)). rad/s."""
    return _dispersion(b0, magnon.gamma, magnon.mu0_meff, 0.0)


def exchange_mode_frequency(b0, magnon: MagnonParams, n: int):
    """Thickness-mode frequency for index n >= 0 (n = 0 is the Kittel mode).

    omega_n = gamma*sqrt((B0 + M*lam2*k^2)*(B0 + M + M*lam2*k^2)),
    k = n*pi/L, M = mu0_meff. The n = 0 call reduces to kittel_frequency
    through the same code path.
    """
    if n < 0:
        raise DomainError("mode index must be non-negative")
    if n > 0 and magnon.thickness <= 0:
        raise DomainError("thickness must be positive for n > 0 modes")
    k = (n * math.pi / magnon.thickness) if n > 0 else 0.0
    exchange_field = magnon.mu0_meff * magnon.lambda_ex_sq * k * k
    return _dispersion(b0, magnon.gamma, magnon.mu0_meff, exchange_field)


def coupled_branch_frequencies(omega_r, omega_m, g: float):
    """Hybridized branch frequencies of the two-mode system.

    omega_pm = omega_r + Delta/2 +/- sqrt(Delta^2 + 4 g^2)/2, Delta = omega_m - omega_r.
    Returns (omega_plus, omega_minus), elementwise over broadcast inputs.
    """
    omega_r = np.asarray(omega_r, dtype=float)
    delta = np.asarray(omega_m, dtype=float) - omega_r
    half_split = 0.5 * np.sqrt(delta * delta + 4.0 * g * g)
    center = omega_r + 0.5 * delta
    return center + half_split, center - half_split


def branch_linewidths(omega_r, kappa_r, omega_m, kappa_m, g: float):
    """Hybridized branch damping rates.

    kappa_pm = kappa_r/2 + kappa_m/2 -/+ Im sqrt((Delta + i*dk)^2 + 4 g^2),
    dk = (kappa_r - kappa_m)/2. The principal square root keeps each branch
    attached to its bare damping at large |Delta| and gives the strong-coupling
    equal mix (kappa_r + kappa_m)/2 at Delta = 0. Sum rule:
    kappa_plus + kappa_minus = kappa_r + kappa_m, exactly.
    """
    delta = np.asarray(omega_m, dtype=float) - np.asarray(omega_r, dtype=float)
    kappa_r = np.asarray(kappa_r, dtype=float)
    kappa_m = np.asarray(kappa_m, dtype=float)
    if np.any(kappa_r < 0) or np.any(kappa_m < 0):
        raise DomainError("damping rates must be non-negative")
    dk = 0.5 * (kappa_r - kappa_m)
    root = np.sqrt((delta + 1j * dk) ** 2 + 4.0 * g * g)
    mean = 0.5 * (kappa_r + kappa_m)
    kp = mean - root.imag
    km = mean + root.imag
    if np.any(kp < 0) or np.any(km < 0):
        raise DomainError("branch selection produced a negative rate; "
                          "check the input damping ordering")
    return kp, km


def complex_mode_frequencies(omega_r, kappa_r, omega_m, kappa_m, g: float):
    """Damped hybrid modes as complex frequencies omega - i*kappa/2.

    Re gives the driven-mode positions (reduces to coupled_branch_frequencies
    when kappa_r = kappa_m), -2*Im reproduces branch_linewidths identically.
    """
    wr = np.asarray(omega_r, dtype=float) - 0.5j * np.asarray(kappa_r, dtype=float)
    wm = np.asarray(omega_m, dtype=float) - 0.5j * np.asarray(kappa_m, dtype=float)
    delta = wm - wr
    root = np.sqrt(delta * delta + 4.0 * g * g)
    return wr + 0.5 * delta + 0.5 * root, wr + 0.5 * delta - 0.5 * root


def detuning_for_linewidth(kappa_target: float, kappa_r: float, kappa_m: float,
                           g: float) -> float:
    """|Delta| at which the resonator-like branch damping equals kappa_target.

    Exact inversion of branch_linewidths for kappa_r < kappa_target <
    (kappa_r + kappa_m)/2 in the strong-coupling regime. Used to place a
    ring-down operating point on a measured branch linewidth.
    """
    mean = 0.5 * (kappa_r + kappa_m)
    dk = 0.5 * abs(kappa_r - kappa_m)
    y = mean - kappa_target
    if not (0.0 < y < dk):
        raise DomainError("kappa_target must lie strictly between the bare "
                          "resonator damping and the equal-mix value")
    num = y * y - dk * dk + 4.0 * g * g
    if num <= 0:
        raise DomainError("coupling too weak for the requested linewidth inversion")
    return y * math.sqrt(num / (dk * dk - y * y))


@dataclass(frozen=True)
class BranchPair:
    """Closed-form branch frequencies and linewidths at one bias field."""

    omega_plus: float
    omega_minus: float
    kappa_plus: float
    kappa_minus: float


def branches(omega_r: float, kappa_r: float, omega_m: float, kappa_m: float,
             g: float) -> BranchPair:
    wp, wm = coupled_branch_frequencies(omega_r, omega_m, g)
    kp, km = branch_linewidths(omega_r, kappa_r, omega_m, kappa_m, g)
    return BranchPair(float(wp), float(wm), float(kp), float(km))


def build_hamiltonian(b0: float, resonator: ResonatorParams, magnon: MagnonParams,
                      coupling: CouplingModel) -> np.ndarray:
    """Real symmetric arrowhead matrix of the lossless multimode system, rad/s.

    Basis order: (resonator, magnon n = 0, ..., magnon n = n_max). The first
    row/column carries the couplings (g, g_1, ..., g_n); damping is not part
    of this matrix.
    """
    n_modes = coupling.n_max + 2
    h = np.zeros((n_modes, n_modes))
    h[0, 0] = float(resonator.omega_r(b0))
    h[1, 1] = float(kittel_frequency(b0, magnon))
    h[0, 1] = h[1, 0] = coupling.g
    gs = coupling.couplings()
    for j in range(coupling.n_max):
        h[j + 2, j + 2] = float(exchange_mode_frequency(b0, magnon, j + 1))
        h[0, j + 2] = h[j + 2, 0] = gs[j]
    return h


@dataclass(frozen=True)
class EigenSpectrum:
    """Eigenvalues (ascending, rad/s) and resonator weights at one field."""

    field_b0: float
    eigenvalues: np.ndarray
    resonator_weights: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=float)
        w = np.asarray(self.resonator_weights, dtype=float)
        if ev.shape != w.shape or ev.ndim != 1:
            raise ContractError("eigenvalues and weights must be matching 1-D arrays")
        order = np.argsort(ev, kind="stable")
        object.__setattr__(self, "eigenvalues", _readonly(ev[order]))
        object.__setattr__(self, "resonator_weights", _readonly(w[order]))


def eigenspectrum(h: np.ndarray, field_b0: float = float("nan")) -> EigenSpectrum:
    """Diagonalize a symmetric mode matrix; weights are |<resonator|v_i>|^2.

    The weights sum to one over the spectrum because the eigenvectors form an
    orthonormal basis. Non-symmetric input is a contract violation.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ContractError("mode matrix must be square")
    scale = max(float(np.max(np.abs(h))), 1.0)
    if not np.allclose(h, h.T, rtol=0.0, atol=1e-12 * scale):
        raise ContractError("mode matrix must be symmetric")
    eigenvalues, vectors = np.linalg.eigh(h)
    weights = np.abs(vectors[0, :]) ** 2
    return EigenSpectrum(field_b0=field_b0, eigenvalues=eigenvalues,
                         resonator_weights=weights)


def device_eigenspectrum(b0: float, resonator: ResonatorParams, magnon: MagnonParams,
                         coupling: CouplingModel) -> EigenSpectrum:
    return eigenspectrum(build_hamiltonian(b0, resonator, magnon, coupling), b0)
