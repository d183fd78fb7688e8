"""Sweep orchestration, device presets, synthetic datasets and file I/O.

CSV columns follow the reporting convention (tesla, Hz, dB); everything in
memory stays angular. The complex sweep schema round-trips bit-exactly at 17
significant digits; loaders snap converted values by at most a few ulps so a
rewrite reproduces the file byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .core import (GAMMA_E, TWO_PI, ContractError, CouplingModel, Device,
                   DomainError, GridSizeError, MagnonParams, ResonatorParams,
                   SweepMap, ghz_to_rad, mhz_to_rad, rad_to_ghz, rad_to_mhz)
from .dynamics import (EigenSpectrum, detuning_for_linewidth,
                       device_eigenspectrum, kittel_frequency)
from .ringdown import RingdownTrace
from .transmission import bare_model_from_device, s21_bare, s21_coupled

SWEEP_MODELS = ("bare", "coupled", "multimode-eigen")

# memory budget for one sweep: complex grid plus one noise copy
MAX_GRID_CELLS = 20_000_000


def _grid(start: float, stop: float, step: float) -> np.ndarray:
    """Regular grid, endpoint included when the step divides the span."""
    if step <= 0:
        raise ContractError("grid step must be positive")
    if stop < start:
        raise ContractError("grid stop must not precede start")
    span = stop - start
    n = int(math.floor(span / step + 1e-9))
    grid = start + step * np.arange(n + 1)
    # rounding in start + n*step can push the last point a few ulp past
    # stop, which matters to exact range checks downstream
    if n > 0 and abs(grid[-1] - stop) <= 1e-9 * step:
        grid[-1] = stop
    return grid


@dataclass(frozen=True)
class SweepPlan:
    """Field/frequency grid plus model and noise selection for run_sweep."""

    field_start: float                 # T
    field_stop: float
    field_step: float
    freq_start: float                  # rad/s
    freq_stop: float
    freq_step: float
    model: str = "coupled"
    noise_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.model not in SWEEP_MODELS:
            raise ContractError(
                f"unknown model '{self.model}'; choose from {SWEEP_MODELS}")
        if self.noise_fraction < 0:
            raise ContractError("noise_fraction must be non-negative")
        # grid validity checked here so a bad plan fails before any work
        self.fields()
        self.freqs()

    def fields(self) -> np.ndarray:
        return _grid(self.field_start, self.field_stop, self.field_step)

    def freqs(self) -> np.ndarray:
        return _grid(self.freq_start, self.freq_stop, self.freq_step)

    def check_size(self):
        nb, nf = self.fields().size, self.freqs().size
        if nb * nf > MAX_GRID_CELLS:
            raise GridSizeError(
                f"plan asks for {nb} x {nf} = {nb * nf} grid cells, over the "
                f"{MAX_GRID_CELLS}-cell budget; coarsen a step or split the sweep")


def plan_to_dict(plan: SweepPlan) -> dict:
    return {
        "field_start_t": plan.field_start,
        "field_stop_t": plan.field_stop,
        "field_step_t": plan.field_step,
        "freq_start_ghz": float(rad_to_ghz(plan.freq_start)),
        "freq_stop_ghz": float(rad_to_ghz(plan.freq_stop)),
        "freq_step_mhz": float(rad_to_mhz(plan.freq_step)),
        "model": plan.model,
        "noise_fraction": plan.noise_fraction,
        "seed": plan.seed,
    }


def plan_from_dict(cfg: dict) -> SweepPlan:
    try:
        return SweepPlan(
            field_start=float(cfg["field_start_t"]),
            field_stop=float(cfg["field_stop_t"]),
            field_step=float(cfg["field_step_t"]),
            freq_start=float(ghz_to_rad(cfg["freq_start_ghz"])),
            freq_stop=float(ghz_to_rad(cfg["freq_stop_ghz"])),
            freq_step=float(mhz_to_rad(cfg["freq_step_mhz"])),
            model=cfg.get("model", "coupled"),
            noise_fraction=float(cfg.get("noise_fraction", 0.0)),
            seed=int(cfg.get("seed", 0)),
        )
    except KeyError as missing:
        raise ContractError(f"sweep plan is missing key {missing}") from None


def load_sweep_plan(path) -> SweepPlan:
    with open(path, encoding="utf-8") as fh:
        return plan_from_dict(json.load(fh))


def save_sweep_plan(path, plan: SweepPlan):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(plan_to_dict(plan), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_sweep(plan: SweepPlan, device: Device) -> SweepMap:
    """Evaluate the selected forward model over the plan's grid.

    Noise is multiplicative Gaussian on the complex value (magnitude scaled,
    phase untouched), drawn row-major from one seeded generator so the result
    is independent of any evaluation order.
    """
    if plan.model == "multimode-eigen":
        raise ContractError(
            "model 'multimode-eigen' produces eigenvalue tables, not "
            "transmission; call run_eigen_sweep")
    plan.check_size()
    fields = plan.fields()
    freqs = plan.freqs()
    device.resonator.validate_over(float(fields[0]), float(fields[-1]))
    if plan.model == "coupled" and device.coupling.n_max > 0:
        raise ContractError(
            "the coupled transmission model covers the uniform mode only; "
            "multimode devices export spectra via run_eigen_sweep")

    s21 = np.empty((fields.size, freqs.size), dtype=complex)
    for i, b0 in enumerate(fields):
        if plan.model == "bare":
            s21[i] = s21_bare(freqs, bare_model_from_device(device.resonator, b0))
        else:
            s21[i] = s21_coupled(freqs, float(b0), device.resonator,
                                 device.magnon, device.coupling.g)
    if plan.noise_fraction > 0:
        rng = np.random.default_rng(plan.seed)
        s21 = s21 * (1.0 + plan.noise_fraction
                     * rng.standard_normal(s21.shape))
    meta = {"device_id": device.device_id, "model": plan.model,
            "seed": plan.seed, "noise_fraction": plan.noise_fraction,
            "plan": plan_to_dict(plan)}
    return SweepMap(fields=fields, freqs=freqs, s21=s21, meta=meta)


def run_eigen_sweep(plan: SweepPlan, device: Device) -> list[EigenSpectrum]:
    """Dense-diagonalization spectrum at every field of the plan."""
    return [device_eigenspectrum(float(b0), device.resonator, device.magnon,
                                 device.coupling)
            for b0 in plan.fields()]


# ---------------------------------------------------------------------------
# device presets
#
# Both measured devices are reconstructed from their published anchors at
# runtime instead of hard-coding derived decimals: the resonator line is drawn
# through the measured (field, frequency) anchor and the crossing point, and
# the damping line through the measured kappa_r anchors.

PRESET_IDS = ("3.6GHz", "3.6GHz-ringdown", "9.2GHz", "3.6GHz-multimode")

_VTCNE_COMMON = dict(gamma=GAMMA_E, lambda_ex_sq=0.25e-16, thickness=300e-9,
                     ms_field=0.010, volume=600e-6 * 6e-6 * 300e-9,
                     n_spins=2.195e12)


def _preset_36() -> Device:
    magnon = MagnonParams(mu0_meff=0.053614, kappa_m=mhz_to_rad(30.62),
                          **_VTCNE_COMMON)
    b_anchor = 0.0809
    b_res = 0.103429
    f_anchor = ghz_to_rad(3.604)
    omega_x = kittel_frequency(b_res, magnon)
    gamma_r = (omega_x - f_anchor) / (b_res - b_anchor)
    kappa_anchor = f_anchor / 4302.0          # omega/Q_l at the anchor field
    kappa_slope = (mhz_to_rad(0.902) - kappa_anchor) / (b_res - b_anchor)
    resonator = ResonatorParams(
        omega_r0=f_anchor - gamma_r * b_anchor, gamma_r=gamma_r,
        kappa_r0=kappa_anchor, kappa_r_slope=kappa_slope, b_ref=b_anchor,
        kappa_ext=f_anchor / 11200.0, phi=0.15, attenuation_a=0.82,
        z_r=17.0, wire_width=10e-6)
    coupling = CouplingModel(g=mhz_to_rad(90.31))
    return Device(resonator=resonator, magnon=magnon, coupling=coupling,
                  device_id="3.6GHz",
                  meta={"temperature_k": 0.43, "power_dbm": -75.0})


def _preset_36_ringdown() -> Device:
    """3.6GHz device with the resonator line re-anchored for ring-down work.

    The measured ring-down at 0.101 T decays at kappa/2pi = 1.872 MHz, which
    under this damping model pins the resonator-magnon detuning at that field;
    the Kittel-crossing construction of the sweep preset gives a much smaller
    detuning there. Both anchor sets cannot hold on one straight line, so this
    preset redraws the line through the ring-down point and the crossing. It
    is meant for time-domain work near the crossing, not for wide sweeps.
    """
    base = _preset_36()
    b_rd = 0.101
    kappa_rd = base.resonator.kappa_r(b_rd)
    omega_m_rd = kittel_frequency(b_rd, base.magnon)
    delta = detuning_for_linewidth(mhz_to_rad(1.872), kappa_rd,
                                   base.magnon.kappa_m, base.coupling.g)
    # magnon sits below the resonator at 0.101 T, so omega_r = omega_m + |delta|
    omega_r_rd = omega_m_rd + delta
    b_res = 0.103429
    omega_x = kittel_frequency(b_res, base.magnon)
    gamma_r = (omega_x - omega_r_rd) / (b_res - b_rd)
    device = base.with_resonator(omega_r0=omega_r_rd - gamma_r * b_rd,
                                 gamma_r=gamma_r)
    return replace(device, device_id="3.6GHz-ringdown",
                   meta={**base.meta, "valid_fields_t": [0.099, 0.104]})


def _preset_92() -> Device:
    magnon = MagnonParams(mu0_meff=0.07240, kappa_m=mhz_to_rad(117.7),
                          **_VTCNE_COMMON)
    omega_r0 = ghz_to_rad(9.2529)
    gamma_r = -mhz_to_rad(71.7)

    def crossing(b):
        return omega_r0 + gamma_r * b - kittel_frequency(b, magnon)

    b_res = brentq(crossing, 0.20, 0.40)
    resonator = ResonatorParams(
        omega_r0=omega_r0, gamma_r=gamma_r,
        kappa_r0=mhz_to_rad(7.917), kappa_r_slope=mhz_to_rad(6.0),
        b_ref=b_res, kappa_ext=mhz_to_rad(2.4), phi=0.10, attenuation_a=0.85,
        z_r=17.0, wire_width=10e-6)
    coupling = CouplingModel(g=mhz_to_rad(147.21))
    return Device(resonator=resonator, magnon=magnon, coupling=coupling,
                  device_id="9.2GHz",
                  meta={"temperature_k": 0.43, "b_res_t": float(b_res)})


def _preset_36_multimode() -> Device:
    magnon = MagnonParams(mu0_meff=0.0537, kappa_m=mhz_to_rad(30.62),
                          **_VTCNE_COMMON)
    resonator = ResonatorParams(
        omega_r0=ghz_to_rad(3.593), gamma_r=0.0,
        kappa_r0=mhz_to_rad(0.9), kappa_r_slope=0.0, b_ref=0.0,
        kappa_ext=mhz_to_rad(0.32), phi=0.0, attenuation_a=1.0,
        z_r=17.0, wire_width=10e-6)
    coupling = CouplingModel(g=mhz_to_rad(90.0), n_max=4,
                             g_rule="inverse_n_plus_1")
    return Device(resonator=resonator, magnon=magnon, coupling=coupling,
                  device_id="3.6GHz-multimode", meta={"temperature_k": 0.43})


def preset_device(device_id: str) -> Device:
    makers = {"3.6GHz": _preset_36, "3.6GHz-ringdown": _preset_36_ringdown,
              "9.2GHz": _preset_92, "3.6GHz-multimode": _preset_36_multimode}
    if device_id not in makers:
        raise ContractError(
            f"unknown device id '{device_id}'; presets: {PRESET_IDS}")
    return makers[device_id]()


def default_plan(device_id: str) -> SweepPlan:
    if device_id in ("3.6GHz", "3.6GHz-ringdown"):
        # the lower branch walks down to ~3.39 GHz within the two-dip band;
        # the frequency window must hold a full fit window around it
        return SweepPlan(0.080, 0.128, 0.0005,
                         ghz_to_rad(3.35), ghz_to_rad(3.85), mhz_to_rad(0.1))
    if device_id == "9.2GHz":
        return SweepPlan(0.249, 0.344, 0.001,
                         ghz_to_rad(8.90), ghz_to_rad(9.60), mhz_to_rad(0.5))
    if device_id == "3.6GHz-multimode":
        return SweepPlan(0.098, 0.110, 0.0002,
                         ghz_to_rad(3.40), ghz_to_rad(3.80), mhz_to_rad(10.0),
                         model="multimode-eigen")
    raise ContractError(f"unknown device id '{device_id}'; presets: {PRESET_IDS}")


def _background_segments(device_id: str, plan: SweepPlan):
    # stitch rows taken at the sweep edges, split where neither edge row has
    # a dip; the 3.6GHz edge dips sit near 3.617 (low-field row) and
    # 3.519 GHz (high-field row)
    if device_id == "3.6GHz":
        return [(plan.freq_start, ghz_to_rad(3.57), plan.field_start),
                (ghz_to_rad(3.57), plan.freq_stop, plan.field_stop)]
    return None


def synthesize_acceptance_dataset(device_id: str, noise_fraction: float = 0.01,
                                  seed: int = 7):
    """Noisy synthetic crossing sweep plus the sealed ground truth behind it.

    Returns (SweepMap, truth dict). The truth dict reports the generating
    parameters in reporting units, including the cooperativity that a perfect
    analysis should recover.
    """
    device = preset_device(device_id)
    if device_id not in ("3.6GHz", "9.2GHz"):
        raise ContractError(
            "acceptance datasets exist for the '3.6GHz' and '9.2GHz' devices")
    plan = replace(default_plan(device_id), noise_fraction=noise_fraction,
                   seed=seed)
    sweep = run_sweep(plan, device)
    segments = _background_segments(device_id, plan)
    if segments:
        sweep.meta["background_segments"] = [list(s) for s in segments]

    res, mag = device.resonator, device.magnon
    if device_id == "3.6GHz":
        b_res = 0.103429
    else:
        b_res = device.meta["b_res_t"]
    kappa_r_bres = res.kappa_r(b_res)
    g = device.coupling.g
    coop = 4.0 * g * g / (kappa_r_bres * mag.kappa_m)
    # detuning slope at the crossing: d(omega_m - omega_r)/dB
    db = 1e-6
    slope_m = (kittel_frequency(b_res + db, mag)
               - kittel_frequency(b_res - db, mag)) / (2 * db)
    truth = {
        "device_id": device_id,
        "g_mhz": float(rad_to_mhz(g)),
        "b_res_t": float(b_res),
        "mu0_meff_mt": mag.mu0_meff * 1e3,
        "kappa_r_bres_mhz": float(rad_to_mhz(kappa_r_bres)),
        "kappa_m_mhz": float(rad_to_mhz(mag.kappa_m)),
        "kappa_ext_mhz": float(rad_to_mhz(res.kappa_ext)),
        "omega_r0_ghz": float(rad_to_ghz(res.omega_r0)),
        "gamma_r_mhz_per_t": float(rad_to_mhz(res.gamma_r)),
        "gamma_rm_mhz_per_t": float(rad_to_mhz(slope_m - res.gamma_r)),
        "cooperativity": float(coop),
        "noise_fraction": noise_fraction,
        "seed": seed,
    }
    return sweep, truth


def write_acceptance_dataset(out_dir, device_id: str,
                             noise_fraction: float = 0.01, seed: int = 7):
    """File-based variant: sweep CSV + sidecar + truth JSON. Returns paths."""
    import os

    sweep, truth = synthesize_acceptance_dataset(device_id, noise_fraction, seed)
    os.makedirs(out_dir, exist_ok=True)
    tag = device_id.replace(".", "p")
    sweep_path = os.path.join(out_dir, f"sweep_{tag}.csv")
    truth_path = os.path.join(out_dir, f"truth_{tag}.json")
    save_sweep_csv(sweep_path, sweep, complex_values=True)
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"sweep": sweep_path, "meta": sweep_path + ".meta.json",
            "truth": truth_path}


# ---------------------------------------------------------------------------
# file I/O

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def _snap_to_inverse(x: np.ndarray, convert, target: np.ndarray) -> np.ndarray:
    """Nudge x by ulps until convert(x) reproduces target bit-exactly.

    Needed because a/c*c is not always a in floating point; the matching
    preimage lies within a few ulps of the naive conversion.
    """
    x = np.array(x, dtype=float)
    for _ in range(4):
        bad = convert(x) != target
        if not np.any(bad):
            break
        up = np.nextafter(x, np.inf)
        down = np.nextafter(x, -np.inf)
        x = np.where(bad & (convert(up) == target), up,
                     np.where(bad & (convert(down) == target), down, x))
        x[bad & (convert(x) != target)] = np.where(
            np.abs(convert(up) - target) < np.abs(convert(down) - target),
            up, down)[bad & (convert(x) != target)]
    return x


def save_sweep_csv(path, sweep: SweepMap, complex_values: bool = False):
    """Write a sweep grid as delimited text plus a sidecar metadata file.

    Columns: field_t, freq_hz, s21_db (magnitude schema, lossy by design) or
    field_t, freq_hz, re, im (complex schema, exact round-trip).
    """
    nb, nf = sweep.s21.shape
    field_col = np.repeat(sweep.fields, nf)
    freq_col = np.tile(sweep.freqs / TWO_PI, nb)
    if complex_values:
        header = "field_t,freq_hz,re,im"
        cols = np.column_stack([field_col, freq_col,
                                sweep.s21.real.ravel(), sweep.s21.imag.ravel()])
        schema = "complex"
    else:
        header = "field_t,freq_hz,s21_db"
        db = 20.0 * np.log10(np.abs(sweep.s21))
        cols = np.column_stack([field_col, freq_col, db.ravel()])
        schema = "magnitude_db"
    np.savetxt(path, cols, fmt="%.17g", delimiter=",", header=header,
               comments="")
    sidecar = {"schema": schema, "shape": [nb, nf],
               "units": {"field_t": "T", "freq_hz": "Hz",
                         "s21": "linear" if complex_values else "dB"},
               "meta": sweep.meta}
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def load_sweep_csv(path) -> SweepMap:
    """Rebuild a SweepMap from either CSV schema (sidecar merged if present)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
    names = header.split(",")
    if names[:2] != ["field_t", "freq_hz"]:
        raise ContractError(f"unrecognized sweep CSV header: {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(names):
        raise ContractError("sweep CSV column count does not match its header")
    fields = np.unique(data[:, 0])
    freqs_hz = np.unique(data[:, 1])
    if fields.size * freqs_hz.size != data.shape[0]:
        raise ContractError("sweep CSV rows do not form a complete grid")
    i_idx = np.searchsorted(fields, data[:, 0])
    j_idx = np.searchsorted(freqs_hz, data[:, 1])
    s21 = np.full((fields.size, freqs_hz.size), np.nan, dtype=complex)
    if names[2:] == ["re", "im"]:
        s21[i_idx, j_idx] = data[:, 2] + 1j * data[:, 3]
    elif names[2:] == ["s21_db"]:
        mag = 10.0 ** (data[:, 2] / 20.0)
        mag = _snap_to_inverse(mag, lambda m: 20.0 * np.log10(m), data[:, 2])
        s21[i_idx, j_idx] = mag
    else:
        raise ContractError(f"unrecognized sweep CSV header: {header!r}")
    if np.any(np.isnan(s21)):
        raise ContractError("sweep CSV grid has duplicate or missing cells")
    freqs = _snap_to_inverse(freqs_hz * TWO_PI, lambda w: w / TWO_PI, freqs_hz)
    meta = {}
    try:
        with open(str(path) + ".meta.json", encoding="utf-8") as fh:
            sidecar = json.load(fh)
        meta = sidecar.get("meta", {})
    except FileNotFoundError:
        pass
    return SweepMap(fields=fields, freqs=freqs, s21=s21, meta=meta)


def save_eigen_csv(path, spectra: list[EigenSpectrum]):
    """Plot-ready export: one row per (field, mode) with resonator weight."""
    rows = []
    for spec in spectra:
        for ev, w in zip(spec.eigenvalues, spec.resonator_weights):
            rows.append((spec.field_b0, rad_to_ghz(ev), w))
    np.savetxt(path, np.asarray(rows), fmt="%.17g", delimiter=",",
               header="field_t,eigenvalue_ghz,resonator_weight", comments="")


def save_trace_csv(path, trace: RingdownTrace):
    """Write a ring-down trace; run parameters travel as # header lines."""
    digest = hashlib.sha256(
        json.dumps(trace.meta, sort_keys=True, default=_json_default)
        .encode()).hexdigest()
    lines = [f"# drive_freq_hz={trace.drive_freq / TWO_PI:.17g}",
             f"# drive_on_until_s={trace.drive_on_until:.17g}",
             f"# dt_s={trace.dt:.17g}",
             f"# params_digest=sha256:{digest}"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write("time_s,voltage\n")
        for t, v in zip(trace.times, trace.voltage):
            fh.write(f"{t:.17g},{v:.17g}\n")


def load_trace_csv(path) -> RingdownTrace:
    headers = {}
    n_skip = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            n_skip += 1
            key, _, value = line[1:].strip().partition("=")
            headers[key.strip()] = value.strip()
    data = np.loadtxt(path, delimiter=",", skiprows=n_skip + 1, ndmin=2)
    times, voltage = data[:, 0], data[:, 1]
    drive_freq_hz = float(headers.get("drive_freq_hz", "nan"))
    drive_freq = _snap_to_inverse(
        np.array([drive_freq_hz * TWO_PI]), lambda w: w / TWO_PI,
        np.array([drive_freq_hz]))[0]
    unknown = np.full(times.size, np.nan, dtype=complex)
    return RingdownTrace(
        times=times, voltage=voltage, drive_freq=drive_freq,
        drive_on_until=float(headers.get("drive_on_until_s", times[0])),
        alpha=unknown, beta=unknown,
        meta={k: v for k, v in headers.items() if k != "params_digest"})
