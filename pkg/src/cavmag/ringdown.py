"""Time-domain ring-up/ring-down of the driven two-mode system.

The simulation runs in the frame rotating at the drive frequency:

    d alpha/dt = (i delta_r - kappa_r/2) alpha - i g beta + eps * [t < t_on]
    d beta/dt  = (i delta_m - kappa_m/2) beta - i g alpha

with delta_r = w_drive - w_r(B0), delta_m = w_drive - w_m(B0) and
eps = sqrt(kappa_ext) * drive_amplitude. The recorded voltage is the homodyne
real part of the feedline output (input - sqrt(kappa_ext) * alpha) with the
mixer phase fixed so the steady-state ring-down signal starts real and
positive. After switch-off the voltage envelope decays with the amplitude
time constant tau_V = 2/kappa of the populated branch.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (DomainError, FitResult, IntegrationError, MagnonParams,
                   ResonatorParams, _readonly)
from .dynamics import kittel_frequency


@dataclass(frozen=True)
class RingdownTrace:
    """Uniformly sampled homodyne record plus the underlying mode amplitudes."""

    times: np.ndarray          # s, uniform step
    voltage: np.ndarray        # arbitrary homodyne units
    drive_freq: float          # rad/s, lab frame
    drive_on_until: float      # s, snapped to the sample grid
    alpha: np.ndarray          # resonator amplitude, rotating frame
    beta: np.ndarray           # magnon amplitude, rotating frame
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.voltage, dtype=float)
        if t.ndim != 1 or t.shape != v.shape:
            raise DomainError("times and voltage must be matching 1-D arrays")
        for name in ("times", "voltage", "alpha", "beta"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name))))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def _rk4_propagators(m: np.ndarray, dt: float):
    """One-step RK4 update for dy/dt = M y + e with piecewise-constant e.

    y_{n+1} = P y_n + Q e, P = sum_{k<=4} (M dt)^k / k!,
    Q = dt * sum_{k<=3} (M dt)^k / (k+1)!. Identical to textbook RK4 applied
    stepwise, just precomputed because M is constant inside each segment.
    """
    a = m * dt
    eye = np.eye(2, dtype=complex)
    a2 = a @ a
    a3 = a2 @ a
    a4 = a3 @ a
    p = eye + a + a2 / 2.0 + a3 / 6.0 + a4 / 24.0
    q = dt * (eye + a / 2.0 + a2 / 6.0 + a3 / 24.0)
    return p, q


def simulate_ringdown(resonator: ResonatorParams, magnon: MagnonParams, g: float,
                      b0: float, drive_freq: float, drive_amplitude: float,
                      t_on: float, t_total: float, dt: float,
                      meta: dict | None = None) -> RingdownTrace:
    """Integrate the driven two-mode system and record the homodyne voltage.

    dt must satisfy dt <= 0.05 / max(|delta_r|, |delta_m|, g, kappa_r, kappa_m)
    so the fixed-step fourth-order update stays in its accuracy regime; the
    error message quotes the bound. t_on is snapped to the sample grid.
    """
    if t_total <= 0 or dt <= 0:
        raise DomainError("t_total and dt must be positive")
    if not 0 < t_on < t_total:
        raise DomainError("need 0 < t_on < t_total to see a ring-down")
    wr = float(resonator.omega_r(b0))
    kr = float(resonator.kappa_r(b0))
    wm = float(kittel_frequency(b0, magnon))
    km = magnon.kappa_m
    delta_r = drive_freq - wr
    delta_m = drive_freq - wm
    rate_scale = max(abs(delta_r), abs(delta_m), g, kr, km)
    dt_max = 0.05 / rate_scale
    if dt > dt_max:
        raise DomainError(
            f"dt = {dt:.3e} s too coarse for this operating point; "
            f"need dt <= 0.05/max(|delta_r|, |delta_m|, g, kappa) = {dt_max:.3e} s")

    n_steps = int(round(t_total / dt))
    n_on = min(max(int(round(t_on / dt)), 1), n_steps - 1)
    m = np.array([[1j * delta_r - 0.5 * kr, -1j * g],
                  [-1j * g, 1j * delta_m - 0.5 * km]], dtype=complex)
    root_ext = math.sqrt(resonator.kappa_ext)
    eps = root_ext * drive_amplitude
    p_mat, q_mat = _rk4_propagators(m, dt)
    p00, p01 = p_mat[0]
    p10, p11 = p_mat[1]
    # drive vector is (eps, 0), so only Q's first column matters
    q0 = q_mat[0, 0] * eps
    q1 = q_mat[1, 0] * eps

    alpha = np.empty(n_steps + 1, dtype=complex)
    beta = np.empty(n_steps + 1, dtype=complex)
    a = 0.0 + 0.0j
    b = 0.0 + 0.0j
    alpha[0] = a
    beta[0] = b
    for i in range(1, n_on + 1):
        a, b = p00 * a + p01 * b + q0, p10 * a + p11 * b + q1
        alpha[i] = a
        beta[i] = b
    for i in range(n_on + 1, n_steps + 1):
        a, b = p00 * a + p01 * b, p10 * a + p11 * b
        alpha[i] = a
        beta[i] = b

    # energy must not grow once the drive is off (1e-9 step-local tolerance)
    energy = np.abs(alpha[n_on:]) ** 2 + np.abs(beta[n_on:]) ** 2
    growth = np.diff(energy) - 1e-9 * np.maximum(energy[:-1], 1e-300)
    if np.any(growth > 0):
        raise IntegrationError(
            "mode energy grew after switch-off; integration step is unstable")

    # mixer phase from the driven steady state, so the ring-down starts
    # real and positive
    if eps != 0.0:
        y_ss = np.linalg.solve(m, [-eps, 0.0])
        ss_signal = -root_ext * y_ss[0]
        theta = -cmath.phase(ss_signal) if ss_signal != 0 else 0.0
    else:
        theta = 0.0
    phase = cmath.exp(1j * theta)
    times = np.arange(n_steps + 1) * dt
    # the input pulse ends at t_on: the sample taken at the switch instant
    # already sees no feedthrough, so the decay window can start right there
    # without a steady-state outlier as its first point
    s_in = np.where(np.arange(n_steps + 1) < n_on, drive_amplitude, 0.0)
    voltage = np.real(phase * (s_in - root_ext * alpha))

    info = {"b0_t": b0, "delta_r": delta_r, "delta_m": delta_m, "g": g,
            "kappa_r": kr, "kappa_m": km, "dt_s": dt,
            "drive_amplitude": drive_amplitude}
    info.update(meta or {})
    return RingdownTrace(times=times, voltage=voltage, drive_freq=drive_freq,
                         drive_on_until=n_on * dt, alpha=alpha, beta=beta,
                         meta=info)


def _window(trace: RingdownTrace, t_start, t_stop):
    t_start = trace.drive_on_until if t_start is None else float(t_start)
    t_stop = float(trace.times[-1]) if t_stop is None else float(t_stop)
    sel = (trace.times >= t_start) & (trace.times <= t_stop)
    if np.count_nonzero(sel) < 8:
        raise DomainError("decay window holds fewer than 8 samples")
    return trace.times[sel] - t_start, trace.voltage[sel], t_stop - t_start


def fit_exponential_decay(trace: RingdownTrace, t_start: float | None = None,
                          t_stop: float | None = None) -> FitResult:
    """Fit A*exp(-(t - t_start)/tau) to the ring-down voltage.

    Initial guesses come from a log-linear regression when the window is all
    positive, else from crude heuristics; the reported fit is always the
    nonlinear one. params: amplitude, tau_voltage (s).
    """
    from .fitting import _least_squares_fit  # shared optimizer plumbing

    t, v, span = _window(trace, t_start, t_stop)
    if np.all(v > 0):
        slope, intercept = np.polyfit(t, np.log(v), 1)
        tau0 = -1.0 / slope if slope < 0 else 10.0 * span
        a0 = math.exp(intercept)
    else:
        a0 = abs(v[0]) if v[0] != 0 else max(np.max(np.abs(v)), 1e-30)
        tau0 = span / 3.0
    tau0 = min(max(tau0, span * 1e-3), span * 1e3)

    def residuals(p):
        return p[0] * np.exp(-t / p[1]) - v

    result = _least_squares_fit(
        residuals, x0=[a0, tau0], names=["amplitude", "tau_voltage"],
        x_scale=[max(a0, 1e-30), tau0], seed=11,
        bounds=([0.0, span * 1e-6], [np.inf, np.inf]))
    if result.params["tau_voltage"] > 50.0 * span:
        meta = dict(result.meta)
        meta["diagnostics"] = "no decay detected over the fit window"
        result = replace(result, converged=False, meta=meta)
    return result


def fit_decaying_sinusoid(trace: RingdownTrace, t_start: float | None = None,
                          t_stop: float | None = None) -> FitResult:
    """Fit A*exp(-t'/tau)*cos(omega_beat*t' + phase) + offset to the ring-down.

    The beat guess is the FFT peak of the detrended window. params:
    amplitude, tau_voltage (s), beat_freq (angular, rad/s), phase, offset. A beat below the
    window's spectral resolution leaves the model degenerate with a plain
    decay; the result carries a warning in that case.
    """
    from .fitting import _least_squares_fit

    t, v, span = _window(trace, t_start, t_stop)
    dt = t[1] - t[0]
    centred = v - np.mean(v)
    spectrum = np.abs(np.fft.rfft(centred * np.hanning(t.size)))
    freqs = np.fft.rfftfreq(t.size, dt)
    peak = int(np.argmax(spectrum[1:])) + 1 if spectrum.size > 1 else 0
    omega0 = 2.0 * math.pi * freqs[peak] if peak else 2.0 * math.pi / span
    a0 = float(np.max(np.abs(centred)))
    if a0 == 0.0:
        a0 = 1e-30
    tau0 = span / 3.0

    def residuals(p):
        a, tau, w, ph, off = p
        return a * np.exp(-t / tau) * np.cos(w * t + ph) + off - v

    result = _least_squares_fit(
        residuals, x0=[a0, tau0, omega0, 0.0, float(np.mean(v))],
        names=["amplitude", "tau_voltage", "beat_freq", "phase", "offset"],
        x_scale=[a0, tau0, max(omega0, 2.0 * math.pi / span), 1.0, max(a0, 1e-30)],
        seed=12,
        bounds=([0.0, span * 1e-6, 0.0, -2.0 * math.pi, -np.inf],
                [np.inf, np.inf, math.pi / dt, 2.0 * math.pi, np.inf]))
    if result.params["beat_freq"] < 2.0 * math.pi / span:
        meta = dict(result.meta)
        meta["warning"] = ("beat below the window's spectral resolution; "
                           "degenerate with a plain exponential decay")
        result = replace(result, meta=meta)
    return result


def decay_rate_conversion(tau_voltage: float):
    """Voltage decay constant to (tau_energy, kappa): tau_E = tau_V/2, kappa = 1/tau_E."""
    if tau_voltage <= 0:
        raise DomainError("tau_voltage must be positive")
    tau_energy = 0.5 * tau_voltage
    return tau_energy, 1.0 / tau_energy
