"""Unit converters, parameter containers, and the sweep-map contract."""

import math

import numpy as np
import pytest

from cavmag import (
    ContractError,
    CouplingModel,
    Device,
    DomainError,
    FitResult,
    MagnonParams,
    ResonatorParams,
    SweepMap,
    device_from_dict,
    device_to_dict,
    load_device_config,
    save_device_config,
)
from cavmag.core import (
    G_E,
    GAMMA_E,
    HBAR,
    MU0,
    MU_B,
    TWO_PI,
    db_from_ratio,
    dbm_to_watt,
    ghz_to_rad,
    mhz_to_rad,
    rad_to_ghz,
    rad_to_mhz,
)


def test_constants():
    assert GAMMA_E == TWO_PI * 28.0e9
    assert G_E == pytest.approx(2.00231930436, rel=0, abs=0)
    assert MU_B == pytest.approx(9.2740100783e-24, rel=0, abs=0)
    assert MU0 == pytest.approx(1.25663706212e-6, rel=0, abs=0)
    assert HBAR == pytest.approx(1.054571817e-34, rel=0, abs=0)


def test_frequency_converters_round_trip():
    rng = np.random.default_rng(0)
    f = rng.uniform(0.1, 20.0, 50)
    assert rad_to_ghz(ghz_to_rad(f)) == pytest.approx(f, rel=1e-15)
    assert rad_to_mhz(mhz_to_rad(f * 1e3)) == pytest.approx(f * 1e3, rel=1e-15)
    assert ghz_to_rad(3.6) == pytest.approx(TWO_PI * 3.6e9)
    assert mhz_to_rad(1.0) == pytest.approx(TWO_PI * 1.0e6)


def test_dbm_to_watt():
    assert dbm_to_watt(0.0) == pytest.approx(1e-3, rel=1e-15)
    assert dbm_to_watt(30.0) == pytest.approx(1.0, rel=1e-15)
    # -75 dBm drive used throughout the photon-number estimates
    assert dbm_to_watt(-75.0) == pytest.approx(10.0 ** (-10.5), rel=1e-15)


def test_db_from_ratio():
    assert db_from_ratio(0.5, 1.0) == pytest.approx(20.0 * math.log10(0.5))
    # complex input uses magnitudes only
    assert db_from_ratio(0.3 + 0.4j, 1.0) == pytest.approx(20.0 * math.log10(0.5))
    assert db_from_ratio(0.0, 1.0) == -math.inf
    with pytest.raises(DomainError):
        db_from_ratio(1.0, 0.0)


class TestResonatorParams:
    def make(self, **kw):
        base = dict(omega_r0=ghz_to_rad(3.6), gamma_r=mhz_to_rad(10.0),
                    kappa_r0=mhz_to_rad(1.0), kappa_r_slope=0.0,
                    kappa_ext=mhz_to_rad(0.5))
        base.update(kw)
        return ResonatorParams(**base)

    def test_linear_laws(self):
        r = self.make(kappa_r_slope=mhz_to_rad(2.0), b_ref=0.1)
        assert r.omega_r(0.0) == pytest.approx(ghz_to_rad(3.6))
        assert r.omega_r(0.2) == pytest.approx(ghz_to_rad(3.6) + 0.2 * mhz_to_rad(10.0))
        assert r.kappa_r(0.1) == pytest.approx(mhz_to_rad(1.0))
        assert r.kappa_r(0.3) == pytest.approx(mhz_to_rad(1.0) + 0.2 * mhz_to_rad(2.0))

    def test_rejects_bad_rates(self):
        with pytest.raises(DomainError):
            self.make(omega_r0=0.0)
        with pytest.raises(DomainError):
            self.make(kappa_r0=-1.0)
        with pytest.raises(DomainError):
            self.make(kappa_ext=-1.0)
        with pytest.raises(DomainError):
            self.make(attenuation_a=0.0)
        with pytest.raises(DomainError):
            self.make(wire_width=0.0)

    def test_validate_over(self):
        # slope drives kappa_r negative at the high end of the range
        r = self.make(kappa_r_slope=-mhz_to_rad(20.0))
        r.validate_over(0.0, 0.01)
        with pytest.raises(DomainError, match="not positive"):
            r.validate_over(0.0, 0.2)
        # kappa_ext above the total loaded damping is unphysical
        r2 = self.make(kappa_ext=mhz_to_rad(2.0))
        with pytest.raises(DomainError, match="kappa_ext exceeds"):
            r2.validate_over(0.0, 0.1)


class TestMagnonParams:
    def test_defaults_and_validation(self):
        m = MagnonParams()
        assert m.gamma == GAMMA_E
        with pytest.raises(DomainError):
            MagnonParams(gamma=0.0)
        with pytest.raises(DomainError):
            MagnonParams(kappa_m=-1.0)
        with pytest.raises(DomainError):
            MagnonParams(mu0_meff=-0.01)

    def test_n_spins_from_magnetization(self):
        vol = 600e-6 * 6e-6 * 300e-9
        m = MagnonParams(ms_field=0.010, volume=vol)
        assert m.n_spins_from_magnetization() == pytest.approx(
            0.010 * vol / (MU0 * MU_B), rel=1e-15)
        with pytest.raises(DomainError):
            MagnonParams().n_spins_from_magnetization()


class TestCouplingModel:
    def test_inverse_rule(self):
        c = CouplingModel(g=mhz_to_rad(90.0), n_max=4)
        g_n = c.couplings()
        assert g_n == pytest.approx(mhz_to_rad(90.0) / np.array([2.0, 3.0, 4.0, 5.0]))
        assert CouplingModel(g=1.0).couplings().size == 0

    def test_explicit_rule(self):
        c = CouplingModel(g=1.0, n_max=2, g_rule=(0.5, 0.25))
        assert c.couplings() == pytest.approx([0.5, 0.25])

    def test_contract_errors(self):
        with pytest.raises(ContractError, match="unknown g_rule"):
            CouplingModel(g=1.0, g_rule="linear")
        with pytest.raises(ContractError, match="entries"):
            CouplingModel(g=1.0, n_max=3, g_rule=(0.5, 0.25))
        with pytest.raises(DomainError):
            CouplingModel(g=-1.0)


def make_device():
    return Device(
        resonator=ResonatorParams(
            omega_r0=ghz_to_rad(3.6), gamma_r=mhz_to_rad(-71.0),
            kappa_r0=mhz_to_rad(0.9), kappa_r_slope=mhz_to_rad(1.5),
            kappa_ext=mhz_to_rad(0.3), phi=0.15, attenuation_a=0.82,
            b_ref=0.08),
        magnon=MagnonParams(mu0_meff=0.0536, kappa_m=mhz_to_rad(30.0),
                            lambda_ex_sq=0.25e-16, thickness=300e-9,
                            ms_field=0.010, volume=1.08e-15, n_spins=2.195e12),
        coupling=CouplingModel(g=mhz_to_rad(90.0), n_max=2),
        device_id="unit-test",
        meta={"note": "round trip"})


def test_device_with_resonator():
    dev = make_device()
    dev2 = dev.with_resonator(phi=0.0)
    assert dev2.resonator.phi == 0.0
    assert dev2.resonator.omega_r0 == dev.resonator.omega_r0
    assert dev.resonator.phi == 0.15  # original untouched


def test_device_dict_round_trip():
    dev = make_device()
    dev2 = device_from_dict(device_to_dict(dev))
    for name in ("omega_r0", "gamma_r", "kappa_r0", "kappa_r_slope",
                 "kappa_ext", "phi", "attenuation_a", "b_ref", "z_r",
                 "wire_width"):
        assert getattr(dev2.resonator, name) == pytest.approx(
            getattr(dev.resonator, name), rel=1e-12)
    for name in ("gamma", "mu0_meff", "kappa_m", "lambda_ex_sq", "thickness",
                 "ms_field", "volume", "n_spins"):
        assert getattr(dev2.magnon, name) == pytest.approx(
            getattr(dev.magnon, name), rel=1e-12)
    assert dev2.coupling.g == pytest.approx(dev.coupling.g, rel=1e-12)
    assert dev2.coupling.n_max == dev.coupling.n_max
    assert dev2.device_id == dev.device_id


def test_device_dict_round_trip_explicit_g_rule():
    dev = make_device()
    dev = Device(resonator=dev.resonator, magnon=dev.magnon,
                 coupling=CouplingModel(g=mhz_to_rad(90.0), n_max=2,
                                        g_rule=(mhz_to_rad(45.0), mhz_to_rad(30.0))),
                 device_id=dev.device_id)
    dev2 = device_from_dict(device_to_dict(dev))
    assert dev2.coupling.couplings() == pytest.approx(dev.coupling.couplings(),
                                                      rel=1e-12)


def test_device_config_file_round_trip(tmp_path):
    dev = make_device()
    path = tmp_path / "device.json"
    save_device_config(dev, path)
    dev2 = load_device_config(path)
    assert dev2.resonator.omega_r0 == pytest.approx(dev.resonator.omega_r0, rel=1e-12)
    assert dev2.magnon.n_spins == pytest.approx(dev.magnon.n_spins, rel=1e-12)


class TestSweepMap:
    def make(self):
        fields = np.linspace(0.08, 0.12, 5)
        freqs = ghz_to_rad(np.linspace(3.4, 3.8, 7))
        s21 = np.ones((5, 7), dtype=complex) * 0.5
        return SweepMap(fields=fields, freqs=freqs, s21=s21)

    def test_arrays_read_only(self):
        sweep = self.make()
        with pytest.raises(ValueError):
            sweep.s21[0, 0] = 0.0
        with pytest.raises(ValueError):
            sweep.fields[0] = 0.0

    def test_shape_contract(self):
        with pytest.raises(ContractError, match="shape"):
            SweepMap(fields=np.arange(3.0), freqs=np.arange(4.0),
                     s21=np.ones((4, 3), dtype=complex))
        with pytest.raises(ContractError, match="1-D"):
            SweepMap(fields=np.ones((2, 2)), freqs=np.arange(4.0),
                     s21=np.ones((2, 4), dtype=complex))

    def test_monotonic_axes(self):
        with pytest.raises(ContractError, match="strictly increasing"):
            SweepMap(fields=np.array([0.1, 0.1, 0.2]),
                     freqs=np.arange(3.0) + 1.0,
                     s21=np.ones((3, 3), dtype=complex))

    def test_magnitude_db(self):
        sweep = self.make()
        assert sweep.magnitude_db() == pytest.approx(
            np.full((5, 7), 20.0 * math.log10(0.5)))

    def test_row_lookup(self):
        sweep = self.make()
        row = sweep.row(float(sweep.fields[2]))
        assert row == pytest.approx(sweep.s21[2])
        with pytest.raises(DomainError, match="not on the sweep grid"):
            sweep.row(0.0805)


class TestFitResult:
    def test_key_and_shape_contracts(self):
        with pytest.raises(ContractError, match="share keys"):
            FitResult(params={"a": 1.0}, std_errors={"b": 0.1},
                      residual_norm=0.0, covariance=np.eye(1), converged=True)
        with pytest.raises(ContractError, match="covariance shape"):
            FitResult(params={"a": 1.0}, std_errors={"a": 0.1},
                      residual_norm=0.0, covariance=np.eye(2), converged=True)

    def test_summary_lists_parameters(self):
        fr = FitResult(params={"a": 1.25, "b": -3.0},
                       std_errors={"a": 0.1, "b": 0.2},
                       residual_norm=0.5, covariance=np.eye(2), converged=True)
        text = fr.summary()
        assert "a = 1.25" in text
        assert "converged = True" in text
