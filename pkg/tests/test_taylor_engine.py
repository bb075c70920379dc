import math

import numpy as np
import pytest

from borelflow.bessel_kernels import two_j1_over_z
from borelflow.norms import NormParams, c0_constant, stack_norm
from borelflow.spectral_core import FlowState, ModeLattice, PhysicalParams, SpectralField
from borelflow.taylor_engine import (
    ABOVE_CUTOFF, BorelTaylorSeries, eval_series, majorant_sequence, radius_estimate,
    radius_from_norms, series_boussinesq, series_mhd, truncation_error, tspace_series,
)
from conftest import shear, two_mode

L1 = NormParams("l1_linf", dim=2)


def test_zero_data_gives_zero_series(lat4, unit_params):
    s = series_boussinesq(SpectralField.zeros(lat4, "vector"), SpectralField.zeros(lat4, "scalar"),
                          None, unit_params, 10)
    assert not np.any(s.coefficients)
    z = SpectralField.zeros(lat4, "vector")
    assert not np.any(series_mhd(z, z, None, PhysicalParams(), 10).coefficients)


def test_heat_shear_closed_form(lat4):
    nu = 0.7
    p = PhysicalParams(nu=nu, mu_thermal=1.0, buoyancy_a=3.0)
    u0 = shear(lat4, 0.4)
    s = series_boussinesq(u0, SpectralField.zeros(lat4, "scalar"), None, p, 20)
    lam = nu * lat4.ksq
    for l in range(21):
        expect = (-lam) ** (l + 1) * u0.amplitudes / (math.factorial(l) * math.factorial(l + 1))
        got = s.coefficient(l)
        assert np.allclose(got.primary.amplitudes, expect, rtol=1e-13, atol=1e-300)
        assert not np.any(got.companion.amplitudes)


def test_first_order_single_temperature_mode(lat4):
    nu, mu, a = 0.7, 0.3, 2.0
    p = PhysicalParams(nu=nu, mu_thermal=mu, buoyancy_a=a)
    th = SpectralField.from_modes(lat4, "scalar", [((1, 2), 0.4 + 0.1j)])
    s = series_boussinesq(SpectralField.zeros(lat4, "vector"), th, None, p, 2)
    # hand substitution at k = (1, 2): P_k e2 = e2 - k k_2/|k|^2
    k = np.array([1.0, 2.0])
    lam = 5.0
    pe2 = np.array([0.0, 1.0]) - k * 2.0 / lam
    t0 = 0.4 + 0.1j
    idx = lat4.index((1, 2))
    h1 = s.coefficient(1)
    expect_u = 0.5 * (-nu * lam * a * t0 * pe2 + a * (-mu * lam * t0) * pe2)
    assert np.allclose(h1.primary.amplitudes[(slice(None),) + idx], expect_u, atol=1e-15)
    assert h1.companion.amplitudes[idx] == pytest.approx(0.5 * (mu * lam) ** 2 * t0, abs=1e-15)


def test_tspace_heat_closed_form(lat4):
    p = PhysicalParams(nu=0.5, mu_thermal=1.0, buoyancy_a=0.0)
    u0 = shear(lat4, 1.0)
    u = tspace_series(u0, SpectralField.zeros(lat4, "scalar"), None, p, 15)
    assert np.array_equal(u[0, :2], u0.amplitudes)
    for m in range(16):
        assert np.allclose(u[m, :2], (-0.5 * lat4.ksq) ** m * u0.amplitudes / math.factorial(m), rtol=1e-13, atol=0)


def test_borel_and_time_series_agree(lat4):
    p = PhysicalParams(nu=1.0, mu_thermal=0.5, buoyancy_a=1.0)
    u0, th = two_mode(lat4)
    f = SpectralField.from_modes(lat4, "vector", [((2, 1), [0.1, -0.2])])
    s = series_boussinesq(u0, th, f, p, 20)
    u = tspace_series(u0, th, f, p, 21)
    for l in range(21):
        ref = u[l + 1].reshape(3, -1)
        assert np.max(np.abs(s.coefficients[l] * math.factorial(l) - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_mhd_shear_cases(lat4):
    p = PhysicalParams(nu=0.6, mu_mag=2.0, sigma=0.4, rho=0.5)
    zero = SpectralField.zeros(lat4, "vector")
    v0 = shear(lat4, 0.5)
    s = series_mhd(v0, zero, None, p, 12)
    for l in range(13):
        expect = (-0.6 * lat4.ksq) ** (l + 1) * v0.amplitudes / (math.factorial(l) * math.factorial(l + 1))
        assert np.allclose(s.coefficient(l).primary.amplitudes, expect, rtol=1e-13, atol=1e-300)
    b0 = SpectralField.from_modes(lat4, "vector", [((1, 0), [0.0, 0.3])])
    s = series_mhd(zero, b0, None, p, 12)
    eta = 1.0 / (2.0 * 0.4)
    u = tspace_series(zero, b0, None, p, 13, problem="mhd")
    for l in range(13):
        expect = (-eta * lat4.ksq) ** (l + 1) * b0.amplitudes / (math.factorial(l) * math.factorial(l + 1))
        assert np.allclose(s.coefficient(l).companion.amplitudes, expect, rtol=1e-13, atol=1e-300)
        ref = u[l + 1].reshape(4, -1)
        assert np.max(np.abs(s.coefficients[l] * math.factorial(l) - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_eval_series_limits(lat4):
    p = PhysicalParams(nu=1.0, mu_thermal=1.0)
    u0 = SpectralField.from_modes(lat4, "vector", [((0, 1), [0.5, 0.0])])
    s = series_boussinesq(u0, SpectralField.zeros(lat4, "scalar"), None, p, 30)
    st, _ = eval_series(s, 0.0)
    assert np.array_equal(st.stack().reshape(3, -1), s.coefficients[0])
    st, err = eval_series(s, 0.5)
    expect = s.coefficients[0] * two_j1_over_z(2 * math.sqrt(0.5))
    assert np.max(np.abs(st.stack().reshape(3, -1) - expect)) <= 1e-10
    assert err < 1e-30


def test_partial_sums_converge(lat4, unit_params):
    u0, th = two_mode(lat4)
    errs = []
    ref = series_boussinesq(u0, th, None, unit_params, 60)
    exact, _ = eval_series(ref, 0.3)
    for L in (8, 16, 32):
        s = series_boussinesq(u0, th, None, unit_params, L)
        st, _ = eval_series(s, 0.3)
        errs.append(np.max(np.abs(st.stack() - exact.stack())))
    assert errs[0] > errs[1] > errs[2]
    assert truncation_error(ref, np.array([0.3]))[0] < 1e-30


def test_radius_markers():
    lat = ModeLattice(1.0, 2, 2)
    p = PhysicalParams(nu=1.0, mu_thermal=1.0)
    s = series_boussinesq(shear(lat, 1.0), SpectralField.zeros(lat, "scalar"), None, p, 24)
    assert radius_estimate(s, L1) == ABOVE_CUTOFF
    r = 0.37
    assert radius_from_norms(r ** -np.arange(25.0)) == pytest.approx(r, rel=0.05)
    with pytest.raises(ValueError):
        radius_from_norms(np.ones(5))


def test_radius_amplitude_scaling(lat4, unit_params):
    est = []
    for scale in (1.0, 100.0):
        u0, th = two_mode(lat4, scale)
        est.append(radius_estimate(series_boussinesq(u0, th, None, unit_params, 30), L1))
    assert est[0] == est[1] or max(est) / min(est) < 2


def test_majorant_examples():
    p = PhysicalParams(nu=1.0, mu_thermal=1.0, buoyancy_a=0.0)
    m = majorant_sequence(0.0, [0.0], 2.0, p, 10)
    assert not np.any(m.a_tilde[1:])
    assert m.radius_bound == 0.25


def test_majorant_dominates_coefficients(lat4):
    p = PhysicalParams(nu=1.0, mu_thermal=0.5, buoyancy_a=1.0)
    u0, th = two_mode(lat4)
    f = SpectralField.from_modes(lat4, "vector", [((2, 1), [0.1, -0.2])])
    for nrm in (NormParams("gamma_beta", 3.0, 0.0, 2), L1):
        u = tspace_series(u0, th, f, p, 25).reshape(26, 3, -1)
        norms = stack_norm(u, lat4, nrm)
        fn = float(stack_norm(np.concatenate([f.amplitudes.reshape(2, -1), np.zeros((1, lat4.size))]), lat4, nrm))
        m = majorant_sequence(norms[0], [fn], lat4.max_kabs(), p, 25, c0=c0_constant(nrm))
        assert m.attained_order == 25
        assert np.all(norms <= m.a_tilde)


def test_series_dataclass_roundtrip(lat4, unit_params):
    u0, th = two_mode(lat4)
    s = series_boussinesq(u0, th, None, unit_params, 3)
    assert isinstance(s, BorelTaylorSeries)
    st = s.coefficient(2)
    assert isinstance(st, FlowState) and st.primary.is_divergence_free(1e-12)
