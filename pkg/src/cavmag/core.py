"""Shared value types, unit policy and physical constants.

Unit policy: every frequency and rate is stored as an angular quantity in
rad/s; magnetic fields are tesla, lengths metres, powers watts. Division by
2*pi happens only at I/O and reporting boundaries (config files, CSV columns,
printed summaries), never inside the physics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

# CODATA 2018
HBAR = 1.054571817e-34        # J s
MU0 = 1.25663706212e-6        # T m / A
MU_B = 9.2740100783e-24       # J / T
G_E = 2.00231930436           # free-electron g-factor

# Domain default: electron-like gyromagnetic ratio, 2*pi * 28 GHz/T.
GAMMA_E = TWO_PI * 28.0e9


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A structural precondition (shape, symmetry, ordering) was violated."""


class CoverageError(ValueError):
    """Background segments fail to cover the frequency axis exactly."""


class GridSizeError(ValueError):
    """Requested sweep grid exceeds the in-memory size limit."""


class IntegrationError(RuntimeError):
    """Time-domain integration became unstable or violated its tolerance."""


def ghz_to_rad(f_ghz):
    """GHz (ordinary frequency) to angular rad/s."""
    return np.asarray(f_ghz, dtype=float) * (TWO_PI * 1e9)


def rad_to_ghz(w):
    return np.asarray(w, dtype=float) / (TWO_PI * 1e9)


def mhz_to_rad(f_mhz):
    return np.asarray(f_mhz, dtype=float) * (TWO_PI * 1e6)


def rad_to_mhz(w):
    return np.asarray(w, dtype=float) / (TWO_PI * 1e6)


def dbm_to_watt(p_dbm: float) -> float:
    return 1e-3 * 10.0 ** (p_dbm / 10.0)


def db_from_ratio(s21, s21_ref):
    """Transmission change in dB, 20*log10(|s21| / |s21_ref|).

    Accepts complex or real inputs, scalar or array. A zero-magnitude
    reference is a domain error; a zero-magnitude numerator yields -inf.
    """
    ref = np.abs(np.asarray(s21_ref))
    if np.any(ref == 0.0):
        raise DomainError("reference transmission has zero magnitude")
    num = np.abs(np.asarray(s21))
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(num / ref)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ResonatorParams:
    """Loaded microwave resonator with linear field dependence.

    omega_r(B) = omega_r0 + gamma_r * B
    kappa_r(B) = kappa_r0 + kappa_r_slope * (B - b_ref)

    kappa_r is the total (loaded) damping; kappa_ext <= kappa_r(B) is the
    external (feedline) part, omega/|Qc| in Q-factor language.
    """

    omega_r0: float           # rad/s at B = 0
    gamma_r: float            # rad/s per tesla
    kappa_r0: float           # rad/s at B = b_ref
    kappa_r_slope: float      # rad/s per tesla
    kappa_ext: float          # rad/s
    phi: float = 0.0          # Fano asymmetry angle, rad
    attenuation_a: float = 1.0
    b_ref: float = 0.0        # tesla
    z_r: float = 50.0         # ohm, for single-spin coupling estimates
    wire_width: float = 10e-6  # m, inductor wire width

    def __post_init__(self):
        if self.omega_r0 <= 0:
            raise DomainError("omega_r0 must be positive")
        if self.kappa_r0 <= 0 or self.kappa_ext < 0:
            raise DomainError("damping rates must be positive")
        if self.attenuation_a <= 0:
            raise DomainError("attenuation_a must be positive")
        if self.z_r <= 0 or self.wire_width <= 0:
            raise DomainError("z_r and wire_width must be positive")

    def omega_r(self, b0):
        return self.omega_r0 + self.gamma_r * np.asarray(b0, dtype=float)

    def kappa_r(self, b0):
        return self.kappa_r0 + self.kappa_r_slope * (np.asarray(b0, dtype=float) - self.b_ref)

    def validate_over(self, b_lo: float, b_hi: float) -> None:
        """Check rate positivity and kappa_ext <= kappa_r on a field range."""
        for b in (b_lo, b_hi):
            kr = float(self.kappa_r(b))
            if kr <= 0:
                raise DomainError(f"kappa_r({b:.6g} T) = {kr:.6g} rad/s is not positive")
            if self.kappa_ext > kr * (1 + 1e-12):
                raise DomainError(
                    f"kappa_ext exceeds total damping at {b:.6g} T "
                    f"({self.kappa_ext:.6g} > {kr:.6g} rad/s)")
            if float(self.omega_r(b)) <= 0:
                raise DomainError(f"omega_r({b:.6g} T) is not positive")


@dataclass(frozen=True)
class MagnonParams:
    """Magnetic material and geometry for the magnon mode family."""

    gamma: float = GAMMA_E    # rad/s per tesla
    mu0_meff: float = 0.0     # tesla, mu0 * (Ms - Hk)
    kappa_m: float = 0.0      # rad/s
    lambda_ex_sq: float = 0.0  # m^2, exchange length squared
    thickness: float = 0.0    # m, film thickness for k_n = n*pi/L
    ms_field: float = 0.0     # tesla, mu0 * Ms
    volume: float = 0.0       # m^3
    n_spins: float = 0.0      # stored spin count; see n_spins_from_magnetization

    def __post_init__(self):
        if self.gamma <= 0:
            raise DomainError("gamma must be positive")
        if self.kappa_m < 0 or self.lambda_ex_sq < 0:
            raise DomainError("kappa_m and lambda_ex_sq must be non-negative")
        if self.mu0_meff < 0:
            raise DomainError("mu0_meff must be non-negative")

    def n_spins_from_magnetization(self) -> float:
        """Spin count implied by (ms_field, volume) at one Bohr magneton each.

        Provided for cross-checks only; the stored n_spins always wins in
        estimators because the moment per unit cell is material dependent.
        """
        if self.ms_field <= 0 or self.volume <= 0:
            raise DomainError("ms_field and volume must be positive to derive n_spins")
        return self.ms_field * self.volume / (MU0 * MU_B)


@dataclass(frozen=True)
class CouplingModel:
    """Photon-magnon couplings: uniform-mode g plus a thickness-mode rule.

    g_rule is either the string "inverse_n_plus_1" (g_n = g / (n + 1)) or an
    explicit tuple of n_max angular rates for modes n = 1..n_max.
    """

    g: float                  # rad/s, uniform (n = 0) mode
    n_max: int = 0
    g_rule: object = "inverse_n_plus_1"

    def __post_init__(self):
        if self.g < 0:
            raise DomainError("g must be non-negative")
        if self.n_max < 0:
            raise DomainError("n_max must be non-negative")
        if isinstance(self.g_rule, str):
            if self.g_rule != "inverse_n_plus_1":
                raise ContractError(f"unknown g_rule {self.g_rule!r}")
        else:
            rule = tuple(float(x) for x in self.g_rule)
            if len(rule) != self.n_max:
                raise ContractError(
                    f"explicit g_rule needs n_max = {self.n_max} entries, got {len(rule)}")
            if any(x < 0 for x in rule):
                raise DomainError("explicit g_n must be non-negative")
            object.__setattr__(self, "g_rule", rule)

    def couplings(self) -> np.ndarray:
        """Angular couplings g_1..g_n_max (empty for n_max = 0)."""
        if isinstance(self.g_rule, str):
            n = np.arange(1, self.n_max + 1)
            return self.g / (n + 1.0) if self.n_max else np.empty(0)
        return np.asarray(self.g_rule, dtype=float)


@dataclass(frozen=True)
class Device:
    """A resonator + magnon + coupling bundle with free-form metadata."""

    resonator: ResonatorParams
    magnon: MagnonParams
    coupling: CouplingModel
    device_id: str = ""
    meta: dict = field(default_factory=dict)

    def with_resonator(self, **changes) -> "Device":
        return replace(self, resonator=replace(self.resonator, **changes))


@dataclass(frozen=True)
class SweepMap:
    """Complex transmission on a (field, frequency) grid.

    fields: tesla, strictly increasing. freqs: rad/s, strictly increasing.
    s21 has shape (len(fields), len(freqs)). Arrays are stored read-only.
    """

    fields: np.ndarray
    freqs: np.ndarray
    s21: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        fields = _readonly(np.asarray(self.fields, dtype=float))
        freqs = _readonly(np.asarray(self.freqs, dtype=float))
        s21 = _readonly(np.asarray(self.s21, dtype=complex))
        if fields.ndim != 1 or freqs.ndim != 1:
            raise ContractError("fields and freqs must be 1-D")
        if s21.shape != (fields.size, freqs.size):
            raise ContractError(
                f"s21 shape {s21.shape} != (n_fields, n_freqs) = "
                f"({fields.size}, {freqs.size})")
        for name, ax in (("fields", fields), ("freqs", freqs)):
            if ax.size > 1 and not np.all(np.diff(ax) > 0):
                raise ContractError(f"{name} must be strictly increasing")
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "s21", s21)

    def magnitude_db(self, s21_ref=1.0) -> np.ndarray:
        return db_from_ratio(self.s21, s21_ref)

    def row(self, b0: float, atol: float = 1e-12) -> np.ndarray:
        i = int(np.argmin(np.abs(self.fields - b0)))
        if abs(self.fields[i] - b0) > max(atol, 1e-9 * max(abs(b0), 1.0)):
            raise DomainError(f"field {b0!r} T not on the sweep grid")
        return self.s21[i]


@dataclass(frozen=True)
class FitResult:
    """Parameter estimates with (J^T J)^-1 * residual-variance covariance."""

    params: dict
    std_errors: dict
    residual_norm: float
    covariance: np.ndarray
    converged: bool
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        cov = _readonly(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "covariance", cov)
        if set(self.params) != set(self.std_errors):
            raise ContractError("params and std_errors must share keys")
        if cov.shape != (len(self.params), len(self.params)):
            raise ContractError("covariance shape must match parameter count")

    def summary(self) -> str:
        lines = []
        for k in self.params:
            lines.append(f"{k} = {self.params[k]:.8g} +/- {self.std_errors[k]:.3g}")
        lines.append(f"residual_norm = {self.residual_norm:.6g} converged = {self.converged}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Device config files. Reporting units on disk (GHz, MHz, mT, um), angular
# SI in memory.

def device_to_dict(device: Device) -> dict:
    r, m, c = device.resonator, device.magnon, device.coupling
    g_rule = c.g_rule if isinstance(c.g_rule, str) else [rad_to_mhz(x).item() for x in c.g_rule]
    return {
        "device_id": device.device_id,
        "resonator": {
            "omega_r0_ghz": float(rad_to_ghz(r.omega_r0)),
            "gamma_r_mhz_per_t": float(rad_to_mhz(r.gamma_r)),
            "kappa_r0_mhz": float(rad_to_mhz(r.kappa_r0)),
            "kappa_r_slope_mhz_per_t": float(rad_to_mhz(r.kappa_r_slope)),
            "b_ref_t": r.b_ref,
            "kappa_ext_mhz": float(rad_to_mhz(r.kappa_ext)),
            "phi_rad": r.phi,
            "attenuation_a": r.attenuation_a,
            "zr_ohm": r.z_r,
            "wire_width_um": r.wire_width * 1e6,
        },
        "magnon": {
            "gamma_ghz_per_t": float(rad_to_ghz(m.gamma)),
            "mu0_meff_mt": m.mu0_meff * 1e3,
            "kappa_m_mhz": float(rad_to_mhz(m.kappa_m)),
            "lambda_ex_sq_m2": m.lambda_ex_sq,
            "thickness_nm": m.thickness * 1e9,
            "ms_mt": m.ms_field * 1e3,
            "volume_m3": m.volume,
            "n_spins": m.n_spins,
        },
        "coupling": {"g_mhz": float(rad_to_mhz(c.g)), "n_max": c.n_max, "g_rule": g_rule},
        "meta": dict(device.meta),
    }


def device_from_dict(cfg: dict) -> Device:
    try:
        r = cfg["resonator"]
        m = cfg["magnon"]
        c = cfg["coupling"]
        resonator = ResonatorParams(
            omega_r0=float(ghz_to_rad(r["omega_r0_ghz"])),
            gamma_r=float(mhz_to_rad(r.get("gamma_r_mhz_per_t", 0.0))),
            kappa_r0=float(mhz_to_rad(r["kappa_r0_mhz"])),
            kappa_r_slope=float(mhz_to_rad(r.get("kappa_r_slope_mhz_per_t", 0.0))),
            b_ref=float(r.get("b_ref_t", 0.0)),
            kappa_ext=float(mhz_to_rad(r["kappa_ext_mhz"])),
            phi=float(r.get("phi_rad", 0.0)),
            attenuation_a=float(r.get("attenuation_a", 1.0)),
            z_r=float(r.get("zr_ohm", 50.0)),
            wire_width=float(r.get("wire_width_um", 10.0)) * 1e-6,
        )
        magnon = MagnonParams(
            gamma=float(ghz_to_rad(m.get("gamma_ghz_per_t", 28.0))),
            mu0_meff=float(m["mu0_meff_mt"]) * 1e-3,
            kappa_m=float(mhz_to_rad(m.get("kappa_m_mhz", 0.0))),
            lambda_ex_sq=float(m.get("lambda_ex_sq_m2", 0.0)),
            thickness=float(m.get("thickness_nm", 0.0)) * 1e-9,
            ms_field=float(m.get("ms_mt", 0.0)) * 1e-3,
            volume=float(m.get("volume_m3", 0.0)),
            n_spins=float(m.get("n_spins", 0.0)),
        )
        rule = c.get("g_rule", "inverse_n_plus_1")
        if not isinstance(rule, str):
            rule = tuple(float(mhz_to_rad(x)) for x in rule)
        coupling = CouplingModel(
            g=float(mhz_to_rad(c["g_mhz"])), n_max=int(c.get("n_max", 0)), g_rule=rule)
    except KeyError as exc:
        raise ContractError(f"device config missing key {exc}") from None
    return Device(resonator=resonator, magnon=magnon, coupling=coupling,
                  device_id=str(cfg.get("device_id", "")), meta=dict(cfg.get("meta", {})))


def load_device_config(path) -> Device:
    with open(Path(path)) as fh:
        return device_from_dict(json.load(fh))


def save_device_config(device: Device, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(device_to_dict(device), fh, indent=2, sort_keys=True)
        fh.write("\n")
