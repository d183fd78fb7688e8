"""Forward simulation and inverse fitting for hybrid photon-magnon devices.

The package covers the full loop a transmission experiment runs through:
device parameters -> coupled-mode spectra and ring-down traces -> delimited
files -> fitted couplings, damping rates and cooperativity.
"""

from .core import (ContractError, CouplingModel, CoverageError, Device,
                   DomainError, FitResult, GridSizeError, IntegrationError,
                   MagnonParams, ResonatorParams, SweepMap, db_from_ratio,
                   dbm_to_watt, device_from_dict, device_to_dict, ghz_to_rad,
                   load_device_config, mhz_to_rad, rad_to_ghz, rad_to_mhz,
                   save_device_config)
from .dynamics import (BranchPair, EigenSpectrum, branch_linewidths, branches,
                       build_hamiltonian, complex_mode_frequencies,
                       coupled_branch_frequencies, detuning_for_linewidth,
                       device_eigenspectrum, eigenspectrum,
                       exchange_mode_frequency, kittel_frequency)
from .fitting import (BranchPoint, CrossingFit, DispersionFit, PipelineReport,
                      cone_angle, cooperativity, esr_field,
                      estimate_collective_coupling,
                      estimate_single_spin_coupling, extract_branches,
                      fit_avoided_crossing, fit_branch_dispersion,
                      fit_field_calibration, fit_linewidth_dispersion,
                      fit_resonance, fit_sweep_pipeline, fit_transmission_map,
                      interpolate_kappa_r, kappa_m_from_branches,
                      photon_number)
from .ringdown import (RingdownTrace, decay_rate_conversion,
                       fit_decaying_sinusoid, fit_exponential_decay,
                       simulate_ringdown)
from .sweeps import (PRESET_IDS, SweepPlan, default_plan, load_sweep_csv,
                     load_sweep_plan, load_trace_csv, plan_from_dict,
                     plan_to_dict, preset_device, run_eigen_sweep, run_sweep,
                     save_eigen_csv, save_sweep_csv, save_sweep_plan,
                     save_trace_csv, synthesize_acceptance_dataset,
                     write_acceptance_dataset)
from .transmission import (BareResonanceModel, bare_model_from_device,
                           q_to_rate, rate_to_q, s21_bare, s21_coupled,
                           stitch_background)

__version__ = "0.1.0"
