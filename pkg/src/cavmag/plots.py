"""File-output matplotlib views of sweeps, ring-down traces and spectra."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import TWO_PI, SweepMap


def plot_sweep_map(sweep: SweepMap, path, background=None, vmin=None, vmax=None):
    """Field-frequency magnitude map in dB, optionally background-referenced."""
    mag = np.abs(sweep.s21)
    if background is not None:
        mag = mag / np.abs(background)[None, :]
    db = 20.0 * np.log10(np.clip(mag, 1e-300, None))
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    mesh = ax.pcolormesh(sweep.fields * 1e3, sweep.freqs / TWO_PI / 1e9,
                         db.T, shading="nearest", cmap="viridis",
                         vmin=vmin, vmax=vmax)
    fig.colorbar(mesh, ax=ax, label=(r"$\Delta|S_{21}|$ (dB)" if background
                                     is not None else r"$|S_{21}|$ (dB)"))
    ax.set_xlabel(r"$B_0$ (mT)")
    ax.set_ylabel("frequency (GHz)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_trace(trace, path, fit_params: dict | None = None):
    """Ring-down voltage versus time, with an optional fitted envelope."""
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    t_us = trace.times * 1e6
    ax.plot(t_us, trace.voltage, lw=0.8, label="homodyne voltage")
    ax.axvline(trace.drive_on_until * 1e6, color="0.5", ls="--", lw=0.8,
               label="drive off")
    if fit_params and "tau_voltage" in fit_params:
        t0 = trace.drive_on_until
        sel = trace.times >= t0
        env = fit_params.get("amplitude", np.max(np.abs(trace.voltage))) \
            * np.exp(-(trace.times[sel] - t0) / fit_params["tau_voltage"])
        ax.plot(trace.times[sel] * 1e6, env, "k--", lw=1.0,
                label=f"fit, tau_V = {fit_params['tau_voltage'] * 1e9:.1f} ns")
    ax.set_xlabel(r"time ($\mu$s)")
    ax.set_ylabel("voltage (arb.)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_eigenspectrum(spectra, path):
    """Eigenvalues versus field, colored by resonator weight."""
    fields = np.concatenate([np.full(s.eigenvalues.size, s.field_b0)
                             for s in spectra])
    evs = np.concatenate([s.eigenvalues for s in spectra])
    weights = np.concatenate([s.resonator_weights for s in spectra])
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    sc = ax.scatter(fields * 1e3, evs / TWO_PI / 1e9, c=weights, s=6,
                    cmap="coolwarm", vmin=0.0, vmax=1.0)
    fig.colorbar(sc, ax=ax, label="resonator weight")
    ax.set_xlabel(r"$B_0$ (mT)")
    ax.set_ylabel("mode frequency (GHz)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_splitting_fit(fields, splittings, crossing, path):
    """Measured branch splitting against the fitted hyperbola."""
    fields = np.asarray(fields, dtype=float)
    splittings = np.asarray(splittings, dtype=float)
    fig, ax = plt.subplots(figsize=(6.0, 3.8))
    ax.plot(fields * 1e3, splittings / TWO_PI / 1e6, "o", ms=4, label="data")
    b_fine = np.linspace(fields.min(), fields.max(), 400)
    model = np.sqrt(crossing.gamma_rm ** 2 * (b_fine - crossing.b_res) ** 2
                    + 4.0 * crossing.g ** 2)
    ax.plot(b_fine * 1e3, model / TWO_PI / 1e6, "k--", lw=1.0,
            label=f"fit, g = {crossing.g / TWO_PI / 1e6:.2f} MHz")
    ax.set_xlabel(r"$B_0$ (mT)")
    ax.set_ylabel(r"$\omega_+ - \omega_-$ (MHz)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
