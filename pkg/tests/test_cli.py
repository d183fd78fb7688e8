"""End-to-end command-line workflows through main(argv)."""

import json

import numpy as np
import pytest

from cavmag.cli import main
from cavmag.core import HBAR, MU_B, TWO_PI, ghz_to_rad, mhz_to_rad
from cavmag.sweeps import SweepPlan, save_sweep_plan


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def crossing_sweep_csv(ws):
    """Coarse but full-span coupled map of the 3.6 GHz crossing.

    The frequency span matches the preset default: the pipeline drops any
    model-predicted window clipped by a sweep edge, so a narrowed span
    starves it of two-dip fields near the crossing. A touch of noise is
    deliberate; on noiseless rows the early-stop cost in the window fits
    never engages and the multi-start optimizer grinds for a minute.
    """
    plan = SweepPlan(field_start=0.080, field_stop=0.128, field_step=0.001,
                     freq_start=ghz_to_rad(3.35), freq_stop=ghz_to_rad(3.85),
                     freq_step=mhz_to_rad(0.25), noise_fraction=0.005, seed=11)
    plan_path = ws / "crossing_plan.json"
    save_sweep_plan(plan_path, plan)
    out = ws / "crossing.csv"
    rc = main(["simulate", "--device", "3.6GHz", "--plan", str(plan_path),
               "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def ringdown_trace_csv(ws):
    out = ws / "ring.csv"
    rc = main(["ringdown", "--device", "3.6GHz-ringdown", "--b0", "0.101",
               "--out", str(out)])
    assert rc == 0
    return out


# ---------------------------------------------------------------------------
# exit codes and top-level behaviour

def test_no_command_prints_help(capsys):
    assert main([]) == 1
    assert "simulate" in capsys.readouterr().out


def test_usage_error_is_exit_1(capsys):
    assert main(["simulate"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_subcommand_is_exit_1(capsys):
    assert main(["transmogrify"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_unknown_device_is_exit_1(tmp_path, capsys):
    rc = main(["simulate", "--device", "12GHz",
               "--out", str(tmp_path / "x.csv")])
    assert rc == 1
    assert "neither a readable file nor one of the presets" in \
        capsys.readouterr().err


def test_missing_input_file_is_exit_1(tmp_path, capsys):
    rc = main(["fit", "--input", str(tmp_path / "nope.csv")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_too_coarse_step_is_exit_2(tmp_path, capsys):
    rc = main(["ringdown", "--device", "3.6GHz-ringdown", "--b0", "0.101",
               "--dt", "1e-6", "--out", str(tmp_path / "r.csv")])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# simulate

def test_simulate_writes_csv_and_manifest(crossing_sweep_csv):
    assert crossing_sweep_csv.exists()
    manifest = json.loads(
        (crossing_sweep_csv.parent / "crossing.csv.manifest.json").read_text())
    assert set(manifest) == {"version", "command", "args", "input_digests",
                             "seed", "timestamp"}
    assert manifest["command"] == "simulate"
    plan_path = str(crossing_sweep_csv.parent / "crossing_plan.json")
    assert manifest["input_digests"][plan_path].startswith("sha256:")


def test_simulate_complex_values_schema(ws):
    plan = SweepPlan(field_start=0.09, field_stop=0.09, field_step=0.01,
                     freq_start=ghz_to_rad(3.59), freq_stop=ghz_to_rad(3.61),
                     freq_step=mhz_to_rad(1.0))
    plan_path = ws / "one_row_plan.json"
    save_sweep_plan(plan_path, plan)
    out = ws / "one_row.csv"
    rc = main(["simulate", "--device", "3.6GHz", "--plan", str(plan_path),
               "--model", "bare", "--complex-values", "--out", str(out)])
    assert rc == 0
    assert out.read_text().splitlines()[0] == "field_t,freq_hz,re,im"


def test_simulate_plot_renders_png(ws, crossing_sweep_csv, capsys):
    plan_path = ws / "crossing_plan.json"
    out = ws / "crossing_plot.csv"
    rc = main(["simulate", "--device", "3.6GHz", "--plan", str(plan_path),
               "--plot", "--out", str(out)])
    assert rc == 0
    png = ws / "crossing_plot.csv.png"
    assert png.exists()
    # PNG magic bytes, not just a nonempty file
    assert png.read_bytes()[:4] == b"\x89PNG"


def test_simulate_eigen_model(ws):
    out = ws / "modes.csv"
    plan = SweepPlan(field_start=0.098, field_stop=0.108, field_step=0.002,
                     freq_start=ghz_to_rad(3.4), freq_stop=ghz_to_rad(3.8),
                     freq_step=mhz_to_rad(10.0), model="multimode-eigen")
    plan_path = ws / "modes_plan.json"
    save_sweep_plan(plan_path, plan)
    rc = main(["simulate", "--device", "3.6GHz-multimode",
               "--plan", str(plan_path), "--out", str(out)])
    assert rc == 0
    assert out.read_text().splitlines()[0] == \
        "field_t,eigenvalue_ghz,resonator_weight"


def test_simulate_device_file_requires_plan(ws, tmp_path, capsys):
    from cavmag import preset_device, save_device_config
    dev_path = tmp_path / "dev.json"
    save_device_config(preset_device("3.6GHz"), dev_path)
    rc = main(["simulate", "--device", str(dev_path),
               "--out", str(tmp_path / "y.csv")])
    assert rc == 1
    assert "--plan is required" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# fit

def test_fit_single_resonance(ws, capsys):
    plan = SweepPlan(field_start=0.0809, field_stop=0.0809, field_step=0.01,
                     freq_start=ghz_to_rad(3.596), freq_stop=ghz_to_rad(3.612),
                     freq_step=mhz_to_rad(0.02), model="bare")
    plan_path = ws / "res_plan.json"
    save_sweep_plan(plan_path, plan)
    csv = ws / "res.csv"
    assert main(["simulate", "--device", "3.6GHz", "--plan", str(plan_path),
                 "--complex-values", "--out", str(csv)]) == 0
    report = ws / "res_report.json"
    rc = main(["fit", "--input", str(csv), "--report", str(report)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "Q_l = 4302" in out
    payload = json.loads(report.read_text())
    assert payload["kind"] == "resonance"
    # the preset anchors Q_l = 4302 and |Q_c| = 11200 at exactly this field
    assert payload["q_loaded"] == pytest.approx(4302.0, rel=1e-5)
    assert payload["abs_qc"] == pytest.approx(11200.0, rel=1e-5)
    assert payload["omega_res_ghz"] == pytest.approx(3.604, rel=1e-9)
    assert payload["input_digest"].startswith("sha256:")


def test_fit_sweep_pipeline_recovers_device(crossing_sweep_csv, ws, capsys):
    report = ws / "pipeline_report.json"
    rc = main(["fit", "--input", str(crossing_sweep_csv),
               "--report", str(report), "--plot"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "g/2pi" in out
    head = json.loads(report.read_text())["headline"]
    assert head["g_mhz"] == pytest.approx(90.31, abs=0.5)
    assert head["mu0_meff_mt"] == pytest.approx(53.614, abs=0.5)
    assert head["b_res_t"] == pytest.approx(0.103429, abs=5e-4)
    assert head["kappa_m_mhz"] == pytest.approx(30.62, rel=0.05)
    assert head["cooperativity"] == pytest.approx(1181.0, rel=0.1)
    assert (ws / "pipeline_report.json.png").exists()
    manifest = json.loads((ws / "pipeline_report.json.manifest.json").read_text())
    assert manifest["command"] == "fit"


def test_fit_ringdown_trace(ringdown_trace_csv, ws, capsys):
    # the ringdown command wrote ring.csv.report.json already; aim the refit
    # elsewhere so both reports can be compared
    report = ws / "ring_refit.json"
    rc = main(["fit", "--input", str(ringdown_trace_csv),
               "--report", str(report)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "tau_V" in out
    refit = json.loads(report.read_text())
    assert refit["kind"] == "ringdown-decay"
    assert refit["kappa_mhz"] == pytest.approx(1.872, rel=0.02)
    assert refit["tau_voltage_ns"] == pytest.approx(170.0, rel=0.02)
    original = json.loads(
        (ringdown_trace_csv.parent / "ring.csv.report.json").read_text())
    assert original["branch_kappa_mhz"] == pytest.approx(1.872, rel=1e-3)
    assert refit["kappa_mhz"] == pytest.approx(original["kappa_mhz"],
                                               rel=1e-12)


def test_ringdown_beat_workflow(ws, capsys):
    out = ws / "ring_beat.csv"
    # explicit timing keeps the trace short; the beat only needs a few
    # periods and the default runs 28 branch lifetimes
    rc = main(["ringdown", "--device", "3.6GHz-ringdown", "--b0", "0.101",
               "--detune-mhz", "5.0", "--t-on", "4e-7", "--t-total", "1.2e-6",
               "--dt", "1.55e-11", "--out", str(out)])
    assert rc == 0
    assert "beat" in capsys.readouterr().out
    payload = json.loads((ws / "ring_beat.csv.report.json").read_text())
    assert payload["beat_freq_mhz"] == pytest.approx(5.0, abs=0.1)
    # refit the saved trace through the generic fit entry point
    report = ws / "beat_refit.json"
    rc = main(["fit", "--input", str(out), "--beat", "--report", str(report)])
    assert rc == 0
    refit = json.loads(report.read_text())
    assert refit["kind"] == "ringdown-decay"
    assert refit["beat_freq_mhz"] == pytest.approx(5.0, abs=0.1)


# ---------------------------------------------------------------------------
# estimate

def test_estimate_geometry_chain(ws, capsys):
    report = ws / "est.json"
    rc = main(["estimate", "--gs", "--zr", "17", "--w", "10e-6",
               "--fr", "3.6e9", "--collective", "--gs-hz", "35.073",
               "--nspins", "2.195e12", "--report", str(report)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "g_s = 35.07 Hz" in out
    payload = json.loads(report.read_text())
    assert payload["gs_hz"] == pytest.approx(35.073227535854652, rel=1e-12)
    assert payload["g_mhz"] == pytest.approx(51.96, abs=0.01)
    manifest = json.loads((ws / "est.json.manifest.json").read_text())
    assert manifest["command"] == "estimate"


def test_estimate_photons_and_cone(ws):
    report = ws / "est2.json"
    rc = main(["estimate", "--photons", "--p-dbm", "-75", "--ql", "4302",
               "--qc", "11200", "--fr", "3.604e9",
               "--cone", "--nm", "2875.8", "--nspins", "2.195e12",
               "--report", str(report)])
    assert rc == 0
    payload = json.loads(report.read_text())
    assert payload["photon_number"] == pytest.approx(3865247.5950530199,
                                                     rel=1e-9)
    assert payload["cone_angle_rad"] == pytest.approx(7.2392249676411114e-5,
                                                      rel=1e-9)


def test_estimate_missing_inputs_is_exit_1(capsys):
    rc = main(["estimate", "--gs", "--zr", "17"])
    assert rc == 1
    assert "missing inputs for --gs: --w, --fr" in capsys.readouterr().err


def test_estimate_nothing_requested_is_exit_1(capsys):
    rc = main(["estimate"])
    assert rc == 1
    assert "nothing to do" in capsys.readouterr().err


def test_estimate_field_calibration(ws, capsys):
    g_marker = 2.083
    slope_t_per_a = 0.06064
    currents = np.linspace(2.6, 4.8, 12)
    freqs_hz = g_marker * MU_B * slope_t_per_a * currents / (HBAR * TWO_PI)
    path = ws / "marker.csv"
    lines = ["current_a,freq_hz"]
    lines += [f"{i:.17g},{f:.17g}" for i, f in zip(currents, freqs_hz)]
    path.write_text("\n".join(lines) + "\n")
    report = ws / "cal.json"
    rc = main(["estimate", "--calibrate", str(path), "--g-factor",
               str(g_marker), "--report", str(report)])
    assert rc == 0
    assert "calibration: 60.64" in capsys.readouterr().out
    payload = json.loads(report.read_text())
    assert payload["slope_mt_per_a"] == pytest.approx(60.64, rel=1e-9)
    assert abs(payload["intercept_mt"]) < 1e-6
