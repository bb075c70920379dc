import math

import numpy as np
import pytest

from borelflow.bessel_kernels import two_j1_over_z
from borelflow.borel_march import (
    build_grid, laplace_convolve, march_boussinesq, march_mhd, residual_integral_eq,
)
from borelflow.spectral_core import ModeLattice, PhysicalParams, SpectralField
from borelflow.taylor_engine import eval_series_array, series_boussinesq, series_mhd, truncation_error
from borelflow.reconstruct import galerkin_rk4
from conftest import shear, two_mode


def test_build_grid_examples():
    assert np.allclose(build_grid(1.0, 4).nodes, [0, 0.25, 0.5, 0.75, 1])
    assert np.allclose(build_grid(1.0, 2, 2.0).nodes, [0, 0.25, 1])
    assert build_grid(1.0, 16, 2.0).nodes[1] < build_grid(1.0, 16, 1.0).nodes[1]
    assert build_grid(1.0, 8).is_uniform() and not build_grid(1.0, 8, 2.0).is_uniform()
    with pytest.raises(ValueError):
        build_grid(1.0, 0)
    with pytest.raises(ValueError):
        build_grid(1.0, 4, 0.5)


def test_laplace_convolve_examples():
    g = build_grid(1.0, 64)
    p = g.nodes
    one = np.ones_like(p)
    assert laplace_convolve(one, one, g, 64) == pytest.approx(1.0, abs=1e-15)
    assert laplace_convolve(one, one, g, 10) == pytest.approx(p[10], abs=1e-15)
    assert abs(laplace_convolve(one, p, g, 64) - 0.5) <= 1e-3


@pytest.mark.parametrize("grading", [1.0, 2.0])
def test_laplace_convolve_second_order(grading):
    errs = []
    for n in (32, 64, 128, 256):
        g = build_grid(1.0, n, grading)
        errs.append(abs(laplace_convolve(g.nodes, g.nodes, g, n) - 1 / 6))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_zero_data_march(lat4, unit_params):
    sol = march_boussinesq(SpectralField.zeros(lat4, "vector"), SpectralField.zeros(lat4, "scalar"),
                           None, unit_params, build_grid(1.0, 32))
    assert not np.any(sol.samples)
    assert residual_integral_eq(sol) == 0.0
    z = SpectralField.zeros(lat4, "vector")
    assert not np.any(march_mhd(z, z, None, PhysicalParams(), build_grid(1.0, 16)).samples)


def test_heat_shear_march_matches_bessel_form():
    lat = ModeLattice(1.0, 3, 2)
    p = PhysicalParams(nu=0.8, mu_thermal=1.0, buoyancy_a=2.0)
    u0 = shear(lat, 0.5)
    sol = march_boussinesq(u0, SpectralField.zeros(lat, "scalar"), None, p, build_grid(10.0, 256))
    u1 = -0.8 * lat.ksq.reshape(-1) * u0.amplitudes.reshape(2, -1)
    lam = 0.8 * lat.ksq.reshape(-1)
    expect = u1[None] * two_j1_over_z(2 * np.sqrt(np.outer(sol.nodes, lam)))[:, None, :]
    scale = np.abs(u1).max()
    assert np.abs(sol.samples[:, :2] - expect).max() <= 1e-8 * scale
    assert residual_integral_eq(sol) <= 1e-7


def test_march_agrees_with_series_inside_disk(lat4, unit_params):
    u0, th = two_mode(lat4)
    series = series_boussinesq(u0, th, None, unit_params, 40)
    sol = march_boussinesq(u0, th, None, unit_params, build_grid(0.5, 256, 2.0))
    ok = truncation_error(series, sol.nodes) < 1e-10
    ref = eval_series_array(series, sol.nodes[ok])
    rel = np.abs(sol.samples[ok] - ref).max(axis=(1, 2)) / np.abs(ref).max(axis=(1, 2))
    assert rel.max() <= 1e-5


def _linear_temperature_case():
    lat = ModeLattice(1.0, 2, 2)
    nu, mu = 1.0, 0.5
    p = PhysicalParams(nu=nu, mu_thermal=mu, buoyancy_a=1.0)
    th = SpectralField.from_modes(lat, "scalar", [((1, 1), 0.3)])
    return lat, p, SpectralField.zeros(lat, "vector"), th


def test_linear_temperature_closed_form_second_order():
    """u0 = 0 with one temperature mode: all transport products vanish and
    H_theta = -mu|k|^2 theta0 J(2 sqrt(mu|k|^2 p))."""
    lat, p, u0, th = _linear_temperature_case()
    lam = lat.ksq.reshape(-1)
    errs, res = [], []
    for n in (32, 64, 128):
        sol = march_boussinesq(u0, th, None, p, build_grid(2.0, n, 2.0), seed_order=0)
        jm = two_j1_over_z(2 * np.sqrt(np.outer(sol.nodes, p.mu_thermal * lam)))
        exact = -p.mu_thermal * lam * th.amplitudes.reshape(-1) * jm
        errs.append(np.abs(sol.samples[:, 2] - exact).max())
        res.append(residual_integral_eq(sol))
    for seq in (errs, res):
        r = np.array(seq[:-1]) / np.array(seq[1:])
        assert np.all((r > 3.5) & (r < 4.5))


def test_mhd_magnetic_shear_against_series():
    lat = ModeLattice(1.0, 3, 2)
    p = PhysicalParams(nu=1.0, mu_mag=1.0, sigma=2.0, rho=1.0)
    zero = SpectralField.zeros(lat, "vector")
    b0 = SpectralField.from_modes(lat, "vector", [((1, 0), [0.0, 0.4]), ((0, 1), [0.3, 0.0])])
    sol = march_mhd(zero, b0, None, p, build_grid(0.5, 256, 2.0))
    series = series_mhd(zero, b0, None, p, 40)
    ok = truncation_error(series, sol.nodes) < 1e-10
    ref = eval_series_array(series, sol.nodes[ok])
    assert np.abs(sol.samples[ok] - ref).max() <= 1e-5 * np.abs(ref).max()


def test_mhd_aligned_fields_reduce_to_heat():
    """v0 = B0 with mu rho = 1 and equal diffusivities: every transport
    product cancels, so v - B stays zero and each field decays like heat."""
    lat = ModeLattice(1.0, 3, 2)
    p = PhysicalParams(nu=0.5, mu_mag=1.0, sigma=2.0, rho=1.0)
    v0, _ = two_mode(lat)
    sol = march_mhd(v0, v0, None, p, build_grid(1.0, 64, 2.0))
    v, b = sol.samples[:, :2], sol.samples[:, 2:]
    assert np.abs(v - b).max() <= 1e-14 * np.abs(v).max()
    lam = 0.5 * lat.ksq.reshape(-1)
    heat = (-lam * v0.amplitudes.reshape(2, -1))[None] * two_j1_over_z(2 * np.sqrt(np.outer(sol.nodes, lam)))[:, None]
    assert np.abs(v - heat).max() <= 1e-12 * np.abs(heat).max()
    traj = galerkin_rk4(v0, v0, None, p, 0.2, 1e-3, problem="mhd")
    last = traj.states[-1]
    assert np.abs(last.primary.amplitudes - last.companion.amplitudes).max() <= 1e-15
    assert np.allclose(last.primary.amplitudes, v0.amplitudes * np.exp(-0.5 * lat.ksq * 0.2), atol=1e-12)


def test_restricted_solution(lat4, unit_params):
    u0, th = two_mode(lat4)
    sol = march_boussinesq(u0, th, None, unit_params, build_grid(0.2, 16))
    part = sol.restricted(8)
    assert part.grid.size == 9 and part.nodes[-1] == sol.nodes[8]
    assert np.array_equal(part.samples, sol.samples[:9])
