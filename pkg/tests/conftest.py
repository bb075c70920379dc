import numpy as np
import pytest

from borelflow.spectral_core import FlowState, ModeLattice, PhysicalParams, SpectralField


def random_scalar(lattice, rng, decay=0.5):
    a = rng.standard_normal(lattice.shape) + 1j * rng.standard_normal(lattice.shape)
    a *= np.exp(-decay * lattice.kabs)
    flip = a[::-1, ::-1] if lattice.dim == 2 else a[::-1, ::-1, ::-1]
    return SpectralField(lattice, "scalar", 0.5 * (a + np.conj(flip)))


def random_vector(lattice, rng, decay=0.5):
    return SpectralField(lattice, "vector",
                         np.array([random_scalar(lattice, rng, decay).amplitudes for _ in range(lattice.dim)]))


def shear(lattice, amp):
    """u0 = amp cos(x2) e1 (modes (0, +-1) carrying amp/2)."""
    return SpectralField.from_modes(lattice, "vector", [((0, 1), [amp / 2, 0.0])])


def two_mode(lattice, scale=1.0):
    u0 = SpectralField.from_modes(lattice, "vector",
                                  [((1, 0), [0.0, 0.5 * scale]), ((0, 1), [0.5j * scale, 0.0])])
    th = SpectralField.from_modes(lattice, "scalar", [((1, 1), 0.3 * scale)])
    return u0, th


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def lat2():
    return ModeLattice(1.0, 2, 2)


@pytest.fixture
def lat4():
    return ModeLattice(1.0, 4, 2)


@pytest.fixture
def unit_params():
    return PhysicalParams(nu=1.0, mu_thermal=1.0, buoyancy_a=1.0)


def zero_state(problem, lattice):
    return FlowState.zeros(problem, lattice)
