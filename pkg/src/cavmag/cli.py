"""Command-line front end: simulate, fit, ringdown and estimate workflows.

Every file-producing run leaves a `<output>.manifest.json` recording version,
command, arguments, input digests, seed and timestamp. Exit codes: 0 success,
1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .core import (TWO_PI, ContractError, CoverageError, DomainError,
                   FitResult, GridSizeError, IntegrationError, dbm_to_watt,
                   load_device_config, rad_to_ghz, rad_to_mhz)
from .dynamics import complex_mode_frequencies, kittel_frequency
from .fitting import (cone_angle, estimate_collective_coupling,
                      estimate_single_spin_coupling, fit_field_calibration,
                      fit_resonance, fit_sweep_pipeline, photon_number)
from .ringdown import (decay_rate_conversion, fit_decaying_sinusoid,
                       fit_exponential_decay, simulate_ringdown)
from .sweeps import (PRESET_IDS, default_plan, file_digest, load_sweep_csv,
                     load_sweep_plan, load_trace_csv, preset_device, run_sweep,
                     run_eigen_sweep, save_eigen_csv, save_sweep_csv,
                     save_trace_csv, write_acceptance_dataset)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; the scripting contract reserves 2 for
    # numerical failures, so usage problems are rerouted to exit 1
    def error(self, message):
        raise _UsageError(message)


def _write_manifest(primary_out, command: str, args: argparse.Namespace,
                    inputs: list, seed) -> str:
    manifest = {
        "version": __version__,
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items())
                 if k != "func" and v is not None},
        "input_digests": {str(p): file_digest(p) for p in inputs
                          if p and os.path.exists(str(p))},
        "seed": seed,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    path = str(primary_out) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _device_from_arg(spec: str):
    if os.path.exists(spec):
        return load_device_config(spec), spec
    if spec in PRESET_IDS:
        return preset_device(spec), None
    raise ContractError(
        f"device '{spec}' is neither a readable file nor one of the presets "
        f"{PRESET_IDS}")


def _fit_payload(fit: FitResult) -> dict:
    return {
        "params": fit.params,
        "std_errors": fit.std_errors,
        "residual_norm": fit.residual_norm,
        "converged": fit.converged,
        "meta": {k: v for k, v in fit.meta.items()},
    }


def _dump_json(path, payload: dict):
    def fallback(obj):
        if isinstance(obj, (np.floating, np.integer)):
            return obj.item()
        if isinstance(obj, np.ndarray):
            return obj.tolist()
        raise TypeError(f"not JSON-serializable: {type(obj)!r}")

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=fallback)
        fh.write("\n")


# ---------------------------------------------------------------------------
# simulate

def _cmd_simulate(args) -> int:
    device, device_path = _device_from_arg(args.device)

    if args.acceptance:
        paths = write_acceptance_dataset(args.out, device.device_id,
                                         noise_fraction=args.noise,
                                         seed=args.seed)
        _write_manifest(paths["sweep"], "simulate", args,
                        [device_path], args.seed)
        print(f"wrote {paths['sweep']}")
        print(f"wrote {paths['truth']} (sealed ground truth)")
        if args.plot:
            from . import plots
            png = plots.plot_sweep_map(load_sweep_csv(paths["sweep"]),
                                       paths["sweep"] + ".png")
            print(f"wrote {png}")
        return 0

    if args.plan:
        plan = load_sweep_plan(args.plan)
    elif device_path is None:
        plan = default_plan(device.device_id)
    else:
        raise ContractError("--plan is required when --device is a file")
    overrides = {}
    if args.model:
        overrides["model"] = args.model
    if args.noise is not None:
        overrides["noise_fraction"] = args.noise
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        plan = replace(plan, **overrides)

    if plan.model == "multimode-eigen":
        spectra = run_eigen_sweep(plan, device)
        save_eigen_csv(args.out, spectra)
        print(f"wrote {args.out}: {len(spectra)} fields x "
              f"{spectra[0].eigenvalues.size} modes")
        if args.plot:
            from . import plots
            print(f"wrote {plots.plot_eigenspectrum(spectra, str(args.out) + '.png')}")
    else:
        sweep = run_sweep(plan, device)
        save_sweep_csv(args.out, sweep, complex_values=args.complex_values)
        print(f"wrote {args.out}: {sweep.s21.shape[0]} fields x "
              f"{sweep.s21.shape[1]} frequencies ({plan.model} model)")
        if args.plot:
            from . import plots
            print(f"wrote {plots.plot_sweep_map(sweep, str(args.out) + '.png')}")
    _write_manifest(args.out, "simulate", args,
                    [device_path, args.plan], plan.seed)
    return 0


# ---------------------------------------------------------------------------
# fit

def _looks_like_trace(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    return first.startswith("#") or first.startswith("time_s")


def _cmd_fit(args) -> int:
    report_path = args.report or str(args.input) + ".report.json"
    status = 0

    if _looks_like_trace(args.input):
        trace = load_trace_csv(args.input)
        fit = fit_exponential_decay(trace)
        tau_v = fit.params["tau_voltage"]
        tau_e, kappa = decay_rate_conversion(tau_v)
        payload = {"kind": "ringdown-decay", "exponential": _fit_payload(fit),
                   "tau_voltage_ns": tau_v * 1e9, "tau_energy_ns": tau_e * 1e9,
                   "kappa_mhz": float(rad_to_mhz(kappa))}
        print(f"tau_V = {tau_v * 1e9:.1f} ns  ->  tau_E = {tau_e * 1e9:.1f} ns, "
              f"kappa/2pi = {rad_to_mhz(kappa):.4f} MHz")
        if args.beat:
            beat = fit_decaying_sinusoid(trace)
            payload["beat"] = _fit_payload(beat)
            payload["beat_freq_mhz"] = float(rad_to_mhz(beat.params["beat_freq"]))
            print(f"beat = {rad_to_mhz(beat.params['beat_freq']):.3f} MHz, "
                  f"tau_V = {beat.params['tau_voltage'] * 1e9:.1f} ns")
            status = max(status, 0 if beat.converged else 2)
        if not fit.converged:
            status = 2
    else:
        sweep = load_sweep_csv(args.input)
        if sweep.fields.size == 1:
            fit = fit_resonance(sweep.freqs, sweep.s21[0],
                                complex_residuals=args.complex_residuals,
                                seed=args.seed)
            p = fit.params
            kappa_l = p["omega_res"] / p["q_loaded"]
            payload = {"kind": "resonance", "fit": _fit_payload(fit),
                       "omega_res_ghz": float(rad_to_ghz(p["omega_res"])),
                       "q_loaded": p["q_loaded"], "abs_qc": p["abs_qc"],
                       "kappa_loaded_mhz": float(rad_to_mhz(kappa_l))}
            print(f"omega_res/2pi = {rad_to_ghz(p['omega_res']):.6f} GHz, "
                  f"Q_l = {p['q_loaded']:.0f}, |Q_c| = {p['abs_qc']:.0f}, "
                  f"kappa_l/2pi = {rad_to_mhz(kappa_l):.4f} MHz")
            if not fit.converged:
                status = 2
        else:
            report = fit_sweep_pipeline(sweep, seed=args.seed)
            head = report.headline()
            payload = {"kind": "sweep-pipeline", "headline": head,
                       "crossing": _fit_payload(report.crossing.fit),
                       "dispersion": _fit_payload(report.dispersion.fit),
                       "linewidths": _fit_payload(report.linewidths),
                       "meta": report.meta}
            print(f"g/2pi      = {head['g_mhz']:.2f} ({head['g_err_mhz']:.2f}) MHz")
            print(f"B_res      = {head['b_res_t'] * 1e3:.3f} "
                  f"({head['b_res_err_t'] * 1e3:.3f}) mT")
            print(f"mu0_Meff   = {head['mu0_meff_mt']:.3f} "
                  f"({head['mu0_meff_err_mt']:.3f}) mT")
            print(f"kappa_r/2pi = {head['kappa_r_bres_mhz']:.3f} "
                  f"({head['kappa_r_err_mhz']:.3f}) MHz at B_res")
            print(f"kappa_m/2pi = {head['kappa_m_mhz']:.2f} "
                  f"({head['kappa_m_err_mhz']:.2f}) MHz")
            print(f"C          = {head['cooperativity']:.0f} "
                  f"({head['cooperativity_err']:.0f})")
            if args.plot:
                from . import plots
                png = plots.plot_splitting_fit(
                    np.asarray(report.meta["splitting_fields_t"]),
                    np.asarray(report.meta["splittings_rad"]),
                    report.crossing, str(report_path) + ".png")
                print(f"wrote {png}")
            bad = [name for name, fit in
                   [("crossing", report.crossing.fit),
                    ("dispersion", report.dispersion.fit),
                    ("linewidths", report.linewidths)] if not fit.converged]
            if bad:
                print(f"warning: non-converged stages: {', '.join(bad)}",
                      file=sys.stderr)
                status = 2

    payload["seed"] = args.seed
    payload["input"] = str(args.input)
    payload["input_digest"] = file_digest(args.input)
    _dump_json(report_path, payload)
    print(f"wrote {report_path}")
    _write_manifest(report_path, "fit", args, [args.input], args.seed)
    return status


# ---------------------------------------------------------------------------
# ringdown

def _cmd_ringdown(args) -> int:
    device, device_path = _device_from_arg(args.device)
    res, mag = device.resonator, device.magnon
    g = device.coupling.g
    b0 = args.b0
    wr, kr = res.omega_r(b0), res.kappa_r(b0)
    wm = kittel_frequency(b0, mag)
    plus, minus = complex_mode_frequencies(wr, kr, wm, mag.kappa_m, g)
    if args.branch == "upper":
        mode = plus
    elif args.branch == "lower":
        mode = minus
    else:
        # default to the resonator-like branch, the one visible in feedline
        mode = plus if wr >= wm else minus
    kappa_branch = -2.0 * mode.imag
    drive = mode.real + TWO_PI * args.detune_mhz * 1e6

    delta_r = drive - wr
    delta_m = drive - wm
    rate = max(abs(delta_r), abs(delta_m), g, kr, mag.kappa_m)
    dt = args.dt if args.dt else 0.02 / rate
    t_on = args.t_on if args.t_on else 8.0 / kappa_branch
    t_total = args.t_total if args.t_total else t_on + 20.0 / kappa_branch

    trace = simulate_ringdown(res, mag, g, b0, drive, args.amplitude,
                              t_on, t_total, dt,
                              meta={"device_id": device.device_id})
    save_trace_csv(args.out, trace)
    print(f"wrote {args.out}: {trace.times.size} samples, dt = {dt:.3e} s")

    report_path = str(args.out) + ".report.json"
    payload = {"kind": "ringdown", "b0_t": b0,
               "drive_freq_ghz": float(rad_to_ghz(drive)),
               "detune_mhz": args.detune_mhz,
               "branch_kappa_mhz": float(rad_to_mhz(kappa_branch)),
               "branch_tau_voltage_ns": 2.0 / kappa_branch * 1e9}
    status = 0
    if args.detune_mhz:
        fit = fit_decaying_sinusoid(trace)
        tau_v = fit.params["tau_voltage"]
        payload["fit"] = _fit_payload(fit)
        payload["beat_freq_mhz"] = float(rad_to_mhz(fit.params["beat_freq"]))
        print(f"beat = {payload['beat_freq_mhz']:.3f} MHz, "
              f"tau_V = {tau_v * 1e9:.1f} ns")
    else:
        fit = fit_exponential_decay(trace)
        tau_v = fit.params["tau_voltage"]
        tau_e, kappa = decay_rate_conversion(tau_v)
        payload["fit"] = _fit_payload(fit)
        payload["tau_voltage_ns"] = tau_v * 1e9
        payload["tau_energy_ns"] = tau_e * 1e9
        payload["kappa_mhz"] = float(rad_to_mhz(kappa))
        print(f"tau_V = {tau_v * 1e9:.1f} ns  ->  kappa/2pi = "
              f"{rad_to_mhz(kappa):.4f} MHz "
              f"(model: {rad_to_mhz(kappa_branch):.4f} MHz)")
    if not fit.converged:
        status = 2
    _dump_json(report_path, payload)
    print(f"wrote {report_path}")
    if args.plot:
        from . import plots
        png = plots.plot_trace(trace, str(args.out) + ".png", fit.params)
        print(f"wrote {png}")
    _write_manifest(args.out, "ringdown", args, [device_path], None)
    return status


# ---------------------------------------------------------------------------
# estimate

def _require(args, estimate: str, **needed):
    missing = [flag for flag, value in needed.items() if value is None]
    if missing:
        raise ContractError(
            f"missing inputs for --{estimate}: "
            + ", ".join("--" + m.replace("_", "-") for m in missing))


def _cmd_estimate(args) -> int:
    lines = []
    payload = {}
    requested = False

    if args.gs:
        requested = True
        _require(args, "gs", zr=args.zr, w=args.w, fr=args.fr)
        gs = estimate_single_spin_coupling(TWO_PI * args.fr, args.zr, args.w)
        payload["gs_hz"] = gs / TWO_PI
        lines.append(f"g_s = {gs / TWO_PI:.2f} Hz "
                     f"(Z_r = {args.zr} ohm, w = {args.w} m, f_r = {args.fr} Hz)")
    if args.collective:
        requested = True
        _require(args, "collective", gs_hz=args.gs_hz, nspins=args.nspins)
        g = estimate_collective_coupling(args.gs_hz, args.nspins)
        payload["g_mhz"] = g / 1e6
        lines.append(f"g = g_s*sqrt(N) = {g / 1e6:.2f} MHz "
                     f"(g_s = {args.gs_hz} Hz, N = {args.nspins:.4g})")
    if args.photons:
        requested = True
        _require(args, "photons", p_dbm=args.p_dbm, ql=args.ql, qc=args.qc,
                 fr=args.fr)
        n = photon_number(dbm_to_watt(args.p_dbm), args.ql, args.qc,
                          TWO_PI * args.fr)
        payload["photon_number"] = n
        lines.append(f"<n> = {n:.4g} (P = {args.p_dbm} dBm, Q_l = {args.ql}, "
                     f"|Q_c| = {args.qc}, f_r = {args.fr} Hz)")
    if args.cone:
        requested = True
        _require(args, "cone", nm=args.nm, nspins=args.nspins)
        theta = cone_angle(args.nm, args.nspins)
        payload["cone_angle_rad"] = theta
        lines.append(f"theta = {theta:.4g} rad = {math.degrees(theta):.4g} deg "
                     f"(n_m = {args.nm:.4g}, N = {args.nspins:.4g})")
    if args.calibrate:
        requested = True
        _require(args, "calibrate", g_factor=args.g_factor)
        data = np.loadtxt(args.calibrate, delimiter=",", skiprows=1, ndmin=2)
        fit = fit_field_calibration(data[:, 0], TWO_PI * data[:, 1],
                                    args.g_factor, seed=args.seed)
        slope, icpt = fit.params["slope"], fit.params["intercept"]
        payload["calibration"] = _fit_payload(fit)
        payload["slope_mt_per_a"] = slope * 1e3
        payload["intercept_mt"] = icpt * 1e3
        lines.append(
            f"calibration: {slope * 1e3:.2f} "
            f"({fit.std_errors['slope'] * 1e3:.2f}) mT/A, intercept "
            f"{icpt * 1e3:.3f} ({fit.std_errors['intercept'] * 1e3:.3f}) mT "
            f"(g = {args.g_factor})")

    if not requested:
        raise ContractError(
            "nothing to do; pass at least one of --gs, --collective, "
            "--photons, --cone, --calibrate")
    for line in lines:
        print(line)
    if args.report:
        _dump_json(args.report, payload)
        print(f"wrote {args.report}")
        _write_manifest(args.report, "estimate", args,
                        [args.calibrate], args.seed)
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> _Parser:
    parser = _Parser(prog="cavmag",
                     description="Photon-magnon device simulation and fitting")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="evaluate a forward model on a grid")
    sim.add_argument("--device", required=True,
                     help=f"device config JSON or preset id {PRESET_IDS}")
    sim.add_argument("--plan", help="sweep plan JSON (defaults per preset)")
    sim.add_argument("--model", choices=("bare", "coupled", "multimode-eigen"))
    sim.add_argument("--noise", type=float, default=None,
                     help="multiplicative amplitude noise fraction")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", required=True, help="output CSV (or directory "
                     "with --acceptance)")
    sim.add_argument("--complex-values", action="store_true",
                     help="write re/im columns instead of s21_db")
    sim.add_argument("--acceptance", action="store_true",
                     help="emit the noisy dataset plus sealed truth file")
    sim.add_argument("--plot", action="store_true",
                     help="render a PNG next to the output")
    sim.set_defaults(func=_cmd_simulate, noise_default=0.01)

    fit = sub.add_parser("fit", help="fit a trace, a resonance or a full sweep")
    fit.add_argument("--input", required=True, help="trace or sweep CSV")
    fit.add_argument("--report", help="report JSON path "
                     "(default <input>.report.json)")
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--beat", action="store_true",
                     help="also fit a decaying sinusoid to a trace")
    fit.add_argument("--complex-residuals", action="store_true")
    fit.add_argument("--plot", action="store_true")
    fit.set_defaults(func=_cmd_fit)

    ring = sub.add_parser("ringdown", help="simulate a ring-down and fit it")
    ring.add_argument("--device", required=True)
    ring.add_argument("--b0", type=float, required=True, help="static field (T)")
    ring.add_argument("--branch", choices=("auto", "upper", "lower"),
                      default="auto")
    ring.add_argument("--detune-mhz", type=float, default=0.0,
                      help="drive offset from the branch (MHz)")
    ring.add_argument("--amplitude", type=float, default=1.0)
    ring.add_argument("--t-on", type=float, default=None, help="drive time (s)")
    ring.add_argument("--t-total", type=float, default=None)
    ring.add_argument("--dt", type=float, default=None,
                      help="integrator step (s); default from the rate bound")
    ring.add_argument("--out", required=True, help="trace CSV path")
    ring.add_argument("--plot", action="store_true")
    ring.set_defaults(func=_cmd_ringdown)

    est = sub.add_parser("estimate", help="closed-form estimators")
    est.add_argument("--gs", action="store_true",
                     help="single-spin coupling from geometry")
    est.add_argument("--collective", action="store_true",
                     help="collective coupling g_s*sqrt(N)")
    est.add_argument("--photons", action="store_true",
                     help="steady-state photon number")
    est.add_argument("--cone", action="store_true", help="magnon cone angle")
    est.add_argument("--calibrate", help="CSV of current_a,freq_hz points")
    est.add_argument("--zr", type=float, help="impedance (ohm)")
    est.add_argument("--w", type=float, help="inductor width (m)")
    est.add_argument("--fr", type=float, help="resonance frequency (Hz)")
    est.add_argument("--gs-hz", type=float, help="single-spin coupling (Hz)")
    est.add_argument("--nspins", type=float, help="number of spins")
    est.add_argument("--p-dbm", type=float, help="drive power (dBm)")
    est.add_argument("--ql", type=float, help="loaded quality factor")
    est.add_argument("--qc", type=float, help="|Q_c|")
    est.add_argument("--nm", type=float, help="magnon number")
    est.add_argument("--g-factor", type=float, help="marker spin g factor")
    est.add_argument("--seed", type=int, default=0)
    est.add_argument("--report", help="optional report JSON path")
    est.set_defaults(func=_cmd_estimate)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    if getattr(args, "acceptance", False) and args.noise is None:
        args.noise = 0.01
    if getattr(args, "acceptance", False) and args.seed is None:
        args.seed = 7
    try:
        return args.func(args)
    except (ContractError, GridSizeError, OSError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DomainError, CoverageError, IntegrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
