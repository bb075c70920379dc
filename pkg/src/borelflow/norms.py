"""Weighted Fourier norms and the named constants built from them.

Norms act on finite lattice fields.  The exponentially weighted norm is
max_k (1+|k|)^gamma e^{beta|k|} |f(k)|; the L1 cap Linf norm uses the
counting measure.  Pairs of fields are combined into a single Euclidean
magnitude per mode before weighting.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from borelflow.bessel_kernels import KernelTable
from borelflow.spectral_core import FlowState, ModeLattice, PhysicalParams, SpectralField

NORM_KINDS = ("gamma_beta", "l1_linf")
C7 = {2: 18.0, 3: 2.0}


class NormError(ValueError):
    """Invalid norm parameters or inputs."""


@dataclass(frozen=True)
class NormParams:
    kind: str = "gamma_beta"
    gamma: float = 3.0
    beta: float = 0.0
    dim: int = 2

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise NormError(f"norm kind must be one of {NORM_KINDS}, got {self.kind!r}")
        if self.dim not in (2, 3):
            raise NormError(f"dim must be 2 or 3, got {self.dim}")
        if self.kind == "gamma_beta":
            if not (self.beta >= 0 and np.isfinite(self.beta)):
                raise NormError(f"beta must be nonnegative, got {self.beta}")
            if self.beta == 0 and not self.gamma > self.dim:
                raise NormError(f"gamma must exceed dim={self.dim} when beta = 0, got {self.gamma}")
            if self.gamma < 0:
                raise NormError(f"gamma must be nonnegative, got {self.gamma}")

    def weights(self, lattice: ModeLattice) -> np.ndarray:
        """Per-mode weight (1+|k|)^gamma e^{beta|k|} (ones for l1_linf)."""
        return _weights(self, lattice)


@functools.lru_cache(maxsize=64)
def _weights(nparams: NormParams, lattice: ModeLattice) -> np.ndarray:
    if nparams.kind == "l1_linf":
        w = np.ones(lattice.size)
    else:
        kab = lattice.kabs.reshape(-1)
        w = (1.0 + kab) ** nparams.gamma * np.exp(nparams.beta * kab)
    w.flags.writeable = False
    return w


@dataclass(frozen=True)
class ConstantsBundle:
    c0: float
    c2: float
    c3: float
    c4: float
    m0: float
    m1: float
    m2: float
    m3: float


def mode_magnitudes(arr: np.ndarray) -> np.ndarray:
    """Euclidean magnitude over the component axis: (..., C, M) -> (..., M)."""
    return np.sqrt(np.sum(arr.real**2 + arr.imag**2, axis=-2))


def stack_norm(arr: np.ndarray, lattice: ModeLattice, nparams: NormParams) -> np.ndarray:
    """Norm of component stacks of shape (..., C, M); returns shape (...)."""
    mag = mode_magnitudes(arr)
    if nparams.kind == "l1_linf":
        return np.maximum(mag.sum(axis=-1), mag.max(axis=-1, initial=0.0))
    return np.max(mag * nparams.weights(lattice), axis=-1, initial=0.0)


def field_norm(f, params: NormParams) -> float:
    """Norm of a SpectralField or FlowState (pair fields stacked per mode)."""
    if isinstance(f, FlowState):
        lat = f.lattice
        arr = f.stack().reshape(-1, lat.size)
    elif isinstance(f, SpectralField):
        lat = f.lattice
        arr = f.amplitudes.reshape(-1, lat.size)
    else:
        raise NormError(f"field_norm needs a SpectralField or FlowState, got {type(f).__name__}")
    if lat.dim != params.dim:
        raise NormError("norm dimension does not match the lattice")
    return float(stack_norm(arr, lat, params))


def c0_constant(params: NormParams) -> float:
    """Subalgebra constant: 1 for L1 cap Linf, the closed form in gamma otherwise."""
    if params.kind == "l1_linf":
        return 1.0
    g = params.gamma
    if params.dim == 2:
        if g <= 2:
            raise NormError(f"the d=2 constant has a pole for gamma <= 2 (gamma={g})")
        return math.pi * 2.0 ** (g + 2) / ((g - 1) * (g - 2))
    if g <= 3:
        raise NormError(f"the d=3 constant has a pole for gamma <= 3 (gamma={g})")
    return math.pi * 2.0 ** (g + 4) / ((g - 1) * (g - 2) * (g - 3))


def _m0_integral(p: float) -> float:
    if p <= 0:
        return 0.0
    val, _ = integrate.quad(lambda s: 1.0 / ((1 + s * s) * (1 + (p - s) ** 2)), 0.0, p,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return (1 + p * p) * val


@functools.lru_cache(maxsize=1)
def m0_constant() -> float:
    """sup_p int_0^p (1+p^2) ds / ((1+s^2)(1+(p-s)^2)), maximized over [0, 50]."""
    res = optimize.minimize_scalar(lambda p: -_m0_integral(p), bounds=(0.0, 50.0),
                                   method="bounded", options={"xatol": 1e-10})
    # the bounded search is local; check a coarse scan did not see a larger value
    coarse = max(_m0_integral(p) for p in np.linspace(0.1, 50.0, 200))
    return float(max(-res.fun, coarse))


def lemma24_constants(phys: PhysicalParams, nparams: NormParams, table: KernelTable,
                      c0: float | None = None) -> ConstantsBundle:
    """C0, C2, C3, C4, M0 and M1..M3 from the kernel suprema."""
    c0 = c0_constant(nparams) if c0 is None else c0
    nu, mu = phys.nu, phys.mu_thermal
    c2 = math.pi * c0 * table.sup_G / min(math.sqrt(nu), math.sqrt(mu))
    c3 = math.pi * phys.buoyancy_a * table.sup_G_over_z
    c4 = (2.0 * math.pi * max(1.0 / math.sqrt(nu), math.sqrt(phys.mu_mag * phys.sigma))
          * phys.m3 * c0 * table.sup_G)
    return ConstantsBundle(c0=c0, c2=c2, c3=c3, c4=c4, m0=m0_constant(),
                           m1=phys.m1, m2=phys.m2, m3=phys.m3)


def log_q_poly(n: int, y: float) -> float:
    """log of Q_n(y) = sum_{j<=n} 2^{n-j} y^j / j!  (y >= 0)."""
    if n < 0:
        raise NormError("Q_n needs n >= 0")
    if y < 0:
        raise NormError("Q_n is evaluated at y >= 0")
    j = np.arange(n + 1)
    if y == 0:
        return n * math.log(2.0)
    terms = (n - j) * math.log(2.0) + j * math.log(y) - np.array([math.lgamma(v + 1) for v in j])
    top = terms.max()
    return float(top + math.log(np.exp(terms - top).sum()))


def q_poly(n: int, y: float) -> float:
    """Q_n(y) by Horner in the variable y (log-space above n = 120)."""
    if n > 120:
        return math.exp(log_q_poly(n, y))
    if n < 0:
        raise NormError("Q_n needs n >= 0")
    # Q_n(y) = 2^n sum_j (y/2)^j / j!; Horner on the truncated exponential
    x = y / 2.0
    acc = 1.0
    for j in range(n, 0, -1):
        acc = 1.0 + acc * x / j
    return 2.0**n * acc


def pgrid_weighted_norms(sol, alpha: float, nparams: NormParams) -> tuple[float, float]:
    """Grid-restricted (sup (1+p^2)e^{-alpha p}||.||, trapezoid of e^{-alpha p}||.||).

    ``sol`` is any object with ``nodes`` (N,), ``samples`` (N, C, M) and
    ``lattice`` attributes, such as a BorelSolution.
    """
    p = np.asarray(sol.nodes, float)
    if p.size == 0:
        raise NormError("pgrid norms need a nonempty grid")
    vals = stack_norm(sol.samples, sol.lattice, nparams)
    damp = np.exp(-alpha * p)
    sup = float(np.max((1 + p**2) * damp * vals))
    l1 = float(np.trapezoid(damp * vals, p)) if p.size > 1 else 0.0
    return sup, l1


def weighted_convolution_integral(q: float, m: int, n: int, dim: int = 2) -> float:
    """|q| int e^{|q|-|q'|-|q-q'|} |q'|^m |q-q'|^n dq' by quadrature (d = 2).

    The plane is split along the bisector of 0 and q.  On the half nearer
    to 0 the integral is done in polar coordinates about 0, which absorbs the
    |q'|^{-1} singularity; the other half equals the same integral with m and
    n swapped.
    """
    if dim != 2:
        raise NormError("the sampled check is implemented for d = 2")
    if q <= 0:
        return 0.0

    def half(mm: int, nn: int) -> float:
        def radial(theta: float) -> float:
            c = math.cos(theta)
            rmax = q / (2 * c) if c > 1e-15 else np.inf

            def f(r):
                d = math.sqrt(max(q * q + r * r - 2 * q * r * c, 0.0))
                return r ** (mm + 1) * d**nn * math.exp(q - r - d)

            # the integrand is concentrated near the segment [0, q]
            opts = dict(epsabs=1e-12, epsrel=1e-10, limit=400)
            if np.isfinite(rmax):
                return integrate.quad(f, 0.0, rmax, **opts)[0]
            head = integrate.quad(f, 0.0, 2 * q, **opts)[0]
            return head + integrate.quad(f, 2 * q, np.inf, **opts)[0]

        val, _ = integrate.quad(radial, 0.0, math.pi, epsabs=1e-11, epsrel=1e-9, limit=400,
                                points=[math.pi / 2])
        return 2.0 * val  # theta in [-pi, 0] by reflection symmetry

    return q * (half(m, n) + half(n, m))


def weighted_convolution_bound(q: float, m: int, n: int, dim: int = 2) -> float:
    return C7[dim] * math.pi * math.factorial(m + 1) * math.factorial(n + 1) * q_poly(m + n + 3, q)
