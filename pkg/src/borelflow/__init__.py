"""Spectral Borel-plane solver for Boussinesq and magnetic Benard flows on Fourier lattices."""
from borelflow._backend import BACKEND
from borelflow.bessel_kernels import (
    KernelTable, bessel_j1, bessel_y1, build_kernel_table, kernel_G, kernel_H, two_j1_over_z,
)
from borelflow.borel_march import BorelGrid, BorelSolution, build_grid, march_boussinesq, march_mhd
from borelflow.estimates import (
    GrowthEstimate, ImprovedEstimateReport, apriori_growth, improved_existence,
    series_bound_constants,
)
from borelflow.norms import NormParams, field_norm, lemma24_constants
from borelflow.reconstruct import TimeTrajectory, galerkin_rk4, laplace_eval, physical_eval
from borelflow.spectral_core import FlowState, ModeLattice, PhysicalParams, SpectralField
from borelflow.taylor_engine import BorelTaylorSeries, series_boussinesq, series_mhd

__all__ = [
    "BACKEND", "BorelGrid", "BorelSolution", "BorelTaylorSeries", "FlowState", "GrowthEstimate",
    "ImprovedEstimateReport", "KernelTable", "ModeLattice", "NormParams", "PhysicalParams",
    "SpectralField", "TimeTrajectory", "apriori_growth", "bessel_j1", "bessel_y1",
    "build_grid", "build_kernel_table", "field_norm", "galerkin_rk4", "improved_existence",
    "kernel_G", "kernel_H", "laplace_eval", "lemma24_constants", "march_boussinesq",
    "march_mhd", "physical_eval", "series_bound_constants", "series_boussinesq", "series_mhd",
    "two_j1_over_z",
]
__version__ = "0.1.0"
