"""Closed-form mode physics: dispersions, branches, linewidths, eigenmodes.

Reference values were frozen from an independent 30-digit evaluation of the
same closed forms (mpmath), so these tests catch sign slips and accidental
reorderings rather than re-deriving the formulas with the code under test.
"""

import math

import numpy as np
import pytest

from cavmag import (
    ContractError,
    CouplingModel,
    DomainError,
    MagnonParams,
    ResonatorParams,
    branch_linewidths,
    branches,
    build_hamiltonian,
    complex_mode_frequencies,
    coupled_branch_frequencies,
    detuning_for_linewidth,
    device_eigenspectrum,
    eigenspectrum,
    exchange_mode_frequency,
    kittel_frequency,
)
from cavmag.core import GAMMA_E, ghz_to_rad, mhz_to_rad, rad_to_ghz, rad_to_mhz


# ---------------------------------------------------------------------------
# frozen references

def test_kittel_frequency_reference():
    m = MagnonParams(mu0_meff=0.053614)
    f = rad_to_ghz(kittel_frequency(0.1034, m))
    assert f == pytest.approx(3.56769310877491, rel=1e-12)


def test_kittel_frequency_vectorized():
    m = MagnonParams(mu0_meff=0.053614)
    b = np.array([0.08, 0.1034, 0.128])
    w = kittel_frequency(b, m)
    assert w.shape == (3,)
    assert w == pytest.approx(GAMMA_E * np.sqrt(b * (b + 0.053614)), rel=1e-14)


def test_exchange_mode_reference():
    # 300 nm film, lambda_ex^2 = 0.25e-16 m^2, n = 1 thickness mode
    m = MagnonParams(mu0_meff=0.0537, lambda_ex_sq=0.25e-16, thickness=300e-9)
    f1 = rad_to_mhz(exchange_mode_frequency(0.1043, m, 1))
    f0 = rad_to_mhz(exchange_mode_frequency(0.1043, m, 0))
    assert f1 == pytest.approx(3598.63053303561, rel=1e-12)
    assert f0 == pytest.approx(3594.41922986176, rel=1e-12)
    # n = 0 has zero exchange stiffening: identical to the uniform mode
    assert f0 == pytest.approx(rad_to_mhz(kittel_frequency(0.1043, m)), rel=1e-15)


def test_exchange_field_scaling():
    """The exchange contribution enters as a field offset M_ex = mu0_meff * lambda^2 * k_n^2."""
    m = MagnonParams(mu0_meff=0.0537, lambda_ex_sq=0.25e-16, thickness=300e-9)
    b = 0.1043
    mex = 0.0537 * 0.25e-16 * (math.pi / 300e-9) ** 2
    assert mex == pytest.approx(1.47221598982916e-4, rel=1e-12)
    expect = GAMMA_E * math.sqrt((b + mex) * (b + 0.0537 + mex))
    assert float(exchange_mode_frequency(b, m, 1)) == pytest.approx(expect, rel=1e-14)
    # quadratic in n
    m4 = exchange_mode_frequency(b, m, 4)
    mex16 = 16.0 * mex
    expect4 = GAMMA_E * math.sqrt((b + mex16) * (b + 0.0537 + mex16))
    assert float(m4) == pytest.approx(expect4, rel=1e-14)


def test_branch_frequency_reference():
    wp, wm = coupled_branch_frequencies(ghz_to_rad(3.6), ghz_to_rad(3.7),
                                        mhz_to_rad(90.0))
    assert rad_to_mhz(wp) == pytest.approx(3752.95630140987, rel=1e-12)
    assert rad_to_mhz(wm) == pytest.approx(3547.04369859013, rel=1e-12)


def test_branch_linewidth_reference():
    kp, km = branch_linewidths(ghz_to_rad(3.6), mhz_to_rad(1.0),
                               ghz_to_rad(3.65), mhz_to_rad(30.0),
                               mhz_to_rad(90.0))
    assert rad_to_mhz(kp) == pytest.approx(19.3917294039443, rel=1e-12)
    assert rad_to_mhz(km) == pytest.approx(11.6082705960557, rel=1e-12)


# ---------------------------------------------------------------------------
# algebraic invariants

def test_zero_detuning_splitting_is_2g():
    rng = np.random.default_rng(3)
    for _ in range(200):
        w0 = ghz_to_rad(rng.uniform(1.0, 20.0))
        g = mhz_to_rad(rng.uniform(1.0, 500.0))
        wp, wm = coupled_branch_frequencies(w0, w0, g)
        assert wp - wm == pytest.approx(2.0 * g, rel=1e-12)
        assert 0.5 * (wp + wm) == pytest.approx(w0, rel=1e-12)


def test_branches_match_two_mode_eigenvalues():
    """Closed form vs numpy.linalg.eigvalsh of [[wr, g], [g, wm]]."""
    rng = np.random.default_rng(11)
    for _ in range(300):
        wr = ghz_to_rad(rng.uniform(1.0, 15.0))
        wm = wr + mhz_to_rad(rng.uniform(-800.0, 800.0))
        g = mhz_to_rad(rng.uniform(0.1, 300.0))
        wp, wm_branch = coupled_branch_frequencies(wr, wm, g)
        lo, hi = np.linalg.eigvalsh(np.array([[wr, g], [g, wm]]))
        assert wp == pytest.approx(hi, rel=1e-12)
        assert wm_branch == pytest.approx(lo, rel=1e-12)


def test_linewidth_sum_rule():
    rng = np.random.default_rng(7)
    for _ in range(300):
        wr = ghz_to_rad(rng.uniform(1.0, 15.0))
        wm = wr + mhz_to_rad(rng.uniform(-500.0, 500.0))
        kr = mhz_to_rad(rng.uniform(0.1, 20.0))
        km = mhz_to_rad(rng.uniform(0.1, 200.0))
        g = mhz_to_rad(rng.uniform(50.0, 300.0))
        kp, kmm = branch_linewidths(wr, kr, wm, km, g)
        assert kp + kmm == pytest.approx(kr + km, rel=1e-14)


def test_equal_mix_at_zero_detuning():
    # strong coupling: 2 g > |kappa_r - kappa_m| / 2 makes the root real
    wr = ghz_to_rad(3.6)
    kr, km, g = mhz_to_rad(1.0), mhz_to_rad(30.0), mhz_to_rad(90.0)
    kp, kmm = branch_linewidths(wr, kr, wr, km, g)
    assert kp == pytest.approx(0.5 * (kr + km), rel=1e-13)
    assert kmm == pytest.approx(0.5 * (kr + km), rel=1e-13)


def test_far_detuned_branches_recover_bare_rates():
    wr = ghz_to_rad(3.6)
    kr, km, g = mhz_to_rad(1.0), mhz_to_rad(30.0), mhz_to_rad(90.0)
    # magnon 100 g above: plus branch is magnon-like, minus resonator-like
    kp, kmm = branch_linewidths(wr, kr, wr + 100.0 * g, km, g)
    assert rad_to_mhz(kp) == pytest.approx(30.0, abs=0.01)
    assert rad_to_mhz(kmm) == pytest.approx(1.0, abs=0.01)


def test_complex_modes_consistent_with_real_forms():
    rng = np.random.default_rng(19)
    for _ in range(200):
        wr = ghz_to_rad(rng.uniform(2.0, 10.0))
        wm = wr + mhz_to_rad(rng.uniform(-400.0, 400.0))
        kr = mhz_to_rad(rng.uniform(0.5, 10.0))
        km = mhz_to_rad(rng.uniform(0.5, 120.0))
        g = mhz_to_rad(rng.uniform(40.0, 250.0))
        zp, zm = complex_mode_frequencies(wr, kr, wm, km, g)
        kp, kmm = branch_linewidths(wr, kr, wm, km, g)
        assert -2.0 * zp.imag == pytest.approx(kp, rel=1e-12)
        assert -2.0 * zm.imag == pytest.approx(kmm, rel=1e-12)
    # equal damping: real parts reduce to the lossless branch frequencies
    wp, wm_b = coupled_branch_frequencies(wr, wm, g)
    zp, zm = complex_mode_frequencies(wr, kr, wm, kr, g)
    assert zp.real == pytest.approx(wp, rel=1e-13)
    assert zm.real == pytest.approx(wm_b, rel=1e-13)


def test_branches_bundle_matches_parts():
    wr, wm = ghz_to_rad(3.6), ghz_to_rad(3.65)
    kr, km, g = mhz_to_rad(1.0), mhz_to_rad(30.0), mhz_to_rad(90.0)
    pair = branches(wr, kr, wm, km, g)
    wp, wmm = coupled_branch_frequencies(wr, wm, g)
    kp, kmm = branch_linewidths(wr, kr, wm, km, g)
    assert pair.omega_plus == pytest.approx(float(wp), rel=0)
    assert pair.omega_minus == pytest.approx(float(wmm), rel=0)
    assert pair.kappa_plus == pytest.approx(float(kp), rel=0)
    assert pair.kappa_minus == pytest.approx(float(kmm), rel=0)


def test_negative_rate_rejected():
    with pytest.raises(DomainError):
        branch_linewidths(1.0, -0.1, 1.0, 0.2, 0.05)


def test_detuning_for_linewidth_round_trip():
    kr, km, g = mhz_to_rad(1.0), mhz_to_rad(30.0), mhz_to_rad(90.0)
    wr = ghz_to_rad(3.6)
    for target_mhz in (1.5, 4.0, 8.0, 15.0):
        target = mhz_to_rad(target_mhz)
        delta = detuning_for_linewidth(target, kr, km, g)
        # magnon above: the minus branch is the resonator-like one
        _, k_res = branch_linewidths(wr, kr, wr + delta, km, g)
        assert k_res == pytest.approx(target, rel=1e-12)
        # and by symmetry the plus branch for magnon below
        k_res2, _ = branch_linewidths(wr, kr, wr - delta, km, g)
        assert k_res2 == pytest.approx(target, rel=1e-12)


def test_detuning_for_linewidth_domain():
    kr, km, g = mhz_to_rad(1.0), mhz_to_rad(30.0), mhz_to_rad(90.0)
    # at or below the bare rate, and above the equal mix, no solution
    # (the boundaries themselves are open but sit on float roundoff)
    for bad in (0.5, 1.0, 15.6, 20.0):
        with pytest.raises(DomainError):
            detuning_for_linewidth(mhz_to_rad(bad), kr, km, g)


# ---------------------------------------------------------------------------
# multimode matrix

def multimode_parts():
    res = ResonatorParams(omega_r0=ghz_to_rad(3.593), gamma_r=0.0,
                          kappa_r0=mhz_to_rad(0.9), kappa_r_slope=0.0,
                          kappa_ext=mhz_to_rad(0.32))
    mag = MagnonParams(mu0_meff=0.0537, lambda_ex_sq=0.25e-16,
                       thickness=300e-9)
    cpl = CouplingModel(g=mhz_to_rad(90.0), n_max=4)
    return res, mag, cpl


def test_hamiltonian_is_arrowhead():
    res, mag, cpl = multimode_parts()
    h = build_hamiltonian(0.1043, res, mag, cpl)
    assert h.shape == (6, 6)
    assert h == pytest.approx(h.T, rel=0)
    assert h[0, 0] == pytest.approx(float(res.omega_r(0.1043)))
    assert h[1, 1] == pytest.approx(float(kittel_frequency(0.1043, mag)))
    for n in range(1, 5):
        assert h[n + 1, n + 1] == pytest.approx(
            float(exchange_mode_frequency(0.1043, mag, n)))
        assert h[0, n + 1] == pytest.approx(cpl.g / (n + 1.0))
    # no direct magnon-magnon coupling
    off = h[1:, 1:].copy()
    np.fill_diagonal(off, 0.0)
    assert np.all(off == 0.0)


def test_eigenspectrum_weights_and_order():
    res, mag, cpl = multimode_parts()
    spec = device_eigenspectrum(0.1043, res, mag, cpl)
    assert spec.field_b0 == 0.1043
    assert np.all(np.diff(spec.eigenvalues) > 0)
    assert float(np.sum(spec.resonator_weights)) == pytest.approx(1.0, rel=1e-12)
    assert np.all(spec.resonator_weights >= 0.0)


def test_eigenspectrum_two_mode_matches_closed_form():
    res, mag, _ = multimode_parts()
    cpl = CouplingModel(g=mhz_to_rad(90.0), n_max=0)
    spec = device_eigenspectrum(0.1043, res, mag, cpl)
    wp, wm = coupled_branch_frequencies(float(res.omega_r(0.1043)),
                                        float(kittel_frequency(0.1043, mag)),
                                        cpl.g)
    assert spec.eigenvalues == pytest.approx([float(wm), float(wp)], rel=1e-13)


def test_eigenspectrum_contract_errors():
    with pytest.raises(ContractError, match="square"):
        eigenspectrum(np.ones((2, 3)))
    with pytest.raises(ContractError, match="symmetric"):
        eigenspectrum(np.array([[1.0, 2.0], [0.0, 1.0]]))
