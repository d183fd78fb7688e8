"""Feedline transmission models for the notch-coupled resonator.

Both models return complex S21. The bare model is the standard asymmetric
(Fano-phase) notch resonance; the coupled model inserts the magnon as a
self-energy in the resonator denominator, so its g = 0 limit is the bare
model up to complex conjugation (the two forms use opposite detuning sign
conventions; magnitudes are identical).
"""
from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from .core import (CoverageError, DomainError, MagnonParams, ResonatorParams,
                   SweepMap)
from .dynamics import kittel_frequency


@dataclass(frozen=True)
class BareResonanceModel:
    """Notch resonance parameters: S21 = a*(1 - (Ql/|Qc|) e^{i phi} / (1 + 2i Ql (w/w_res - 1)))."""

    omega_res: float      # rad/s
    q_loaded: float
    abs_qc: float
    phi: float = 0.0
    attenuation_a: float = 1.0

    def __post_init__(self):
        if self.omega_res <= 0 or self.q_loaded <= 0 or self.abs_qc <= 0:
            raise DomainError("omega_res and Q factors must be positive")
        if self.attenuation_a <= 0:
            raise DomainError("attenuation_a must be positive")
        # Internal loss must be non-negative: 1/Ql >= Re(e^{i phi})/|Qc|.
        if 1.0 / self.q_loaded < np.cos(self.phi) / self.abs_qc - 1e-9 / self.q_loaded:
            raise DomainError("negative internal loss: Ql too large for |Qc| at this phi")

    @property
    def kappa_loaded(self) -> float:
        return self.omega_res / self.q_loaded

    @property
    def kappa_ext(self) -> float:
        return self.omega_res / self.abs_qc


def rate_to_q(omega_res: float, kappa: float) -> float:
    """Total or external damping rate to the matching Q factor."""
    if kappa <= 0:
        raise DomainError("rate must be positive")
    return omega_res / kappa


def q_to_rate(omega_res: float, q: float) -> float:
    if q <= 0:
        raise DomainError("Q must be positive")
    return omega_res / q


def s21_bare(omega, model: BareResonanceModel):
    """Complex bare-resonator transmission, vectorized over omega."""
    w = np.asarray(omega, dtype=float)
    x = w / model.omega_res - 1.0
    resonant = (model.q_loaded / model.abs_qc) * cmath.exp(1j * model.phi)
    return model.attenuation_a * (1.0 - resonant / (1.0 + 2j * model.q_loaded * x))


def s21_coupled(omega, b0: float, resonator: ResonatorParams, magnon: MagnonParams,
                g: float, s21_background=None):
    """Complex transmission of the resonator dressed by the uniform magnon mode.

    S21 = S21_bg * (1 + (kappa_ext/2) e^{-i phi} / D),
    D = i(w - w_r) - kappa_r/2 + g^2 / (i(w - w_m) - kappa_m/2),
    with w_r, kappa_r evaluated on the resonator's field model and w_m the
    Kittel frequency at b0. s21_background defaults to the flat attenuation.
    """
    w = np.asarray(omega, dtype=float)
    wr = float(resonator.omega_r(b0))
    kr = float(resonator.kappa_r(b0))
    if kr <= 0:
        raise DomainError(f"kappa_r({b0:.6g} T) is not positive")
    wm = float(kittel_frequency(b0, magnon))
    if s21_background is None:
        s21_background = resonator.attenuation_a
    bg = np.asarray(s21_background, dtype=complex)
    with np.errstate(divide="ignore", invalid="ignore"):
        self_energy = g * g / (1j * (w - wm) - 0.5 * magnon.kappa_m)
        denom = 1j * (w - wr) - 0.5 * kr + self_energy
        resonant = 0.5 * resonator.kappa_ext * cmath.exp(-1j * resonator.phi) / denom
    return bg * (1.0 + resonant)


def bare_model_from_device(resonator: ResonatorParams, b0: float) -> BareResonanceModel:
    """The Q-factor parameterization of a device's bare resonance at one field.

    s21_coupled at g = 0 equals the complex conjugate of s21_bare on this
    model (same phi; the conventions differ by the detuning sign).
    """
    wr = float(resonator.omega_r(b0))
    kr = float(resonator.kappa_r(b0))
    return BareResonanceModel(
        omega_res=wr,
        q_loaded=rate_to_q(wr, kr),
        abs_qc=rate_to_q(wr, resonator.kappa_ext),
        phi=resonator.phi,
        attenuation_a=resonator.attenuation_a,
    )


def stitch_background(sweep: SweepMap, segments) -> np.ndarray:
    """Assemble a per-frequency complex background from far-detuned rows.

    segments: iterable of (f_lo, f_hi, b_ref) with frequencies in rad/s and
    b_ref a field on the sweep grid whose row is dip-free inside [f_lo, f_hi].
    Segments must tile the frequency axis: every grid frequency must fall in
    exactly one segment (shared endpoints go to the earlier segment). Gaps or
    overlaps raise CoverageError naming the offending range.
    """
    segs = [(float(lo), float(hi), float(b)) for lo, hi, b in segments]
    if not segs:
        raise CoverageError("no background segments given")
    for lo, hi, _ in segs:
        if hi <= lo:
            raise CoverageError(f"empty segment [{lo:.6g}, {hi:.6g}] rad/s")
    freqs = sweep.freqs
    background = np.zeros(freqs.size, dtype=complex)
    owner = np.full(freqs.size, -1)
    for k, (lo, hi, b_ref) in enumerate(segs):
        row = sweep.row(b_ref)
        inside = (freqs >= lo) & (freqs <= hi)
        claim = inside & (owner < 0)
        if np.any(inside & (owner >= 0) & (freqs > lo) & (freqs < hi)):
            raise CoverageError(f"segment {k} overlaps an earlier segment "
                                f"in its interior")
        background[claim] = row[claim]
        owner[claim] = k
    if np.any(owner < 0):
        missing = freqs[owner < 0]
        raise CoverageError(
            "background segments leave frequencies uncovered: "
            f"[{missing.min():.9g}, {missing.max():.9g}] rad/s "
            f"({missing.size} grid points)")
    return background
