"""Power-series engines for the truncated flow systems.

Two independent recursions are provided: the small-t series of the solution
(u^[m]) and the Borel-plane series H(p) = sum_l H^[l] p^l with H^[0] = u1.
They are linked by H^[l] l! = u^[l+1], which the tests use as an oracle.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from borelflow.norms import NormParams, stack_norm
from borelflow.spectral_core import (
    FlowState, FlowSystem, ModeLattice, PhysicalParams, SpectralField, _check_solenoidal,
)

# coefficient magnitudes beyond this are reported instead of silently overflowing
OVERFLOW_LIMIT = 1e280
ABOVE_CUTOFF = math.inf


class SeriesOverflowError(ArithmeticError):
    """Coefficient magnitudes left the double-precision range."""


@dataclass(frozen=True)
class BorelTaylorSeries:
    problem: str
    lattice: ModeLattice
    order: int
    coefficients: np.ndarray = field(repr=False)  # (order + 1, C, M)

    def coefficient(self, l: int) -> FlowState:
        arr = self.coefficients[l].reshape((-1,) + self.lattice.shape)
        return FlowState.from_stack(self.problem, self.lattice, arr)

    def norms(self, nparams: NormParams) -> np.ndarray:
        return stack_norm(self.coefficients, self.lattice, nparams)


@dataclass(frozen=True)
class MajorantSequence:
    a_tilde: np.ndarray
    K1: float
    radius_bound: float
    attained_order: int


def _log_weights(l: int) -> np.ndarray:
    """l1! (l-1-l1)! / l! for l1 = 0..l-1 via log-gamma."""
    l1 = np.arange(l)
    lg = np.array([math.lgamma(a + 1) + math.lgamma(l - a) for a in l1]) - math.lgamma(l + 1)
    return np.exp(lg)


def _check_range(arr: np.ndarray, what: str, order: int):
    top = float(np.max(np.abs(arr), initial=0.0))
    if not np.isfinite(top) or top > OVERFLOW_LIMIT:
        raise SeriesOverflowError(f"{what} coefficients exceed {OVERFLOW_LIMIT:g} at order {order}")


def borel_coefficients(system: FlowSystem, U0: np.ndarray, U1: np.ndarray, L: int) -> np.ndarray:
    """H^[0..L] from
    (l+1)(l+2) H^[l+1] = (-Lambda + A) H^[l] + Phi(u0, H^[l]) + Phi(H^[l], u0)
                         + sum_{l1<l} l1!(l-1-l1)!/l! Phi(H^[l1], H^[l-1-l1]).
    """
    H = np.zeros((L + 1,) + U0.shape, complex)
    H[0] = U1
    for l in range(L):
        Xs = [U0, H[l]]
        Ys = [H[l], U0]
        w = [1.0, 1.0]
        if l > 0:
            Xs.extend(H[:l])
            Ys.extend(H[l - 1::-1])
            w.extend(_log_weights(l))
        nonlin = system.weighted_bilinear(np.array(Xs), np.array(Ys), np.array(w))
        H[l + 1] = (system.linear(H[l]) + nonlin) / ((l + 1) * (l + 2))
        _check_range(H[l + 1], "Borel", l + 1)
    return H


def time_coefficients(system: FlowSystem, U0: np.ndarray, force: np.ndarray, M: int) -> np.ndarray:
    """u^[0..M] from (m+1) u^[m+1] = f delta_m0 + (-Lambda + A) u^[m] + sum_j Phi(u^[j], u^[m-j])."""
    u = np.zeros((M + 1,) + U0.shape, complex)
    u[0] = U0
    for m in range(M):
        nonlin = system.weighted_bilinear(u[: m + 1], u[m::-1], np.ones(m + 1))
        nxt = system.linear(u[m]) + nonlin
        if m == 0:
            nxt = nxt + force
        u[m + 1] = nxt / (m + 1)
        _check_range(u[m + 1], "time", m + 1)
    return u


def _build_state(problem, primary, companion) -> FlowState:
    return FlowState(problem, primary, companion)


def borel_series(system: FlowSystem, state: FlowState, forcing: SpectralField | None,
                 L: int) -> BorelTaylorSeries:
    if L < 0:
        raise ValueError("series order must be nonnegative")
    _check_solenoidal(state, forcing)
    U0 = system.flat(state)
    U1 = system.rhs(U0, system.forcing_flat(forcing))
    H = borel_coefficients(system, U0, U1, L)
    return BorelTaylorSeries(system.problem, system.lattice, L, H)


def series_boussinesq(u0: SpectralField, theta0: SpectralField, f: SpectralField | None,
                      params: PhysicalParams, L: int, workers: int | None = None) -> BorelTaylorSeries:
    state = _build_state("boussinesq", u0, theta0)
    system = FlowSystem("boussinesq", state.lattice, params, workers)
    return borel_series(system, state, f, L)


def series_mhd(v0: SpectralField, B0: SpectralField, f: SpectralField | None,
               params: PhysicalParams, L: int, workers: int | None = None) -> BorelTaylorSeries:
    state = _build_state("mhd", v0, B0)
    system = FlowSystem("mhd", state.lattice, params, workers)
    return borel_series(system, state, f, L)


def tspace_series(u0: SpectralField, theta0: SpectralField, f: SpectralField | None,
                  params: PhysicalParams, M: int, problem: str = "boussinesq",
                  workers: int | None = None) -> np.ndarray:
    """Small-t coefficients u^[0..M] as an array (M + 1, C, *lattice.shape)."""
    state = _build_state(problem, u0, theta0)
    _check_solenoidal(state, f)
    system = FlowSystem(problem, state.lattice, params, workers)
    u = time_coefficients(system, system.flat(state), system.forcing_flat(f), M)
    return u.reshape((M + 1, system.ncomp) + state.lattice.shape)


def eval_series(series: BorelTaylorSeries, p: float,
                radius: float | None = None) -> tuple[FlowState, float]:
    """Horner evaluation of sum_l H^[l] p^l and the size of the last retained term."""
    if p < 0:
        raise ValueError("eval_series needs p >= 0")
    if radius is not None and p >= radius:
        warnings.warn(f"p = {p} lies outside the estimated radius {radius}", RuntimeWarning)
    H = series.coefficients
    acc = np.zeros_like(H[0])
    for l in range(series.order, -1, -1):
        acc = acc * p + H[l]
    err = float(np.max(np.abs(H[-1]), initial=0.0)) * p**series.order if series.order > 0 else 0.0
    state = FlowState.from_stack(series.problem, series.lattice,
                                 acc.reshape((-1,) + series.lattice.shape))
    return state, err


def eval_series_array(series: BorelTaylorSeries, p: np.ndarray) -> np.ndarray:
    """Series values at many p; returns (len(p), C, M)."""
    p = np.asarray(p, float)
    H = series.coefficients
    acc = np.zeros((len(p),) + H.shape[1:], complex)
    for l in range(series.order, -1, -1):
        acc = acc * p[:, None, None] + H[l]
    return acc


def truncation_error(series: BorelTaylorSeries, p: np.ndarray) -> np.ndarray:
    """Max-modulus size of the last retained term, a proxy for the omitted tail."""
    p = np.asarray(p, float)
    last = float(np.max(np.abs(series.coefficients[-1]), initial=0.0))
    return last * p**series.order


def _slope(l: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(l, y, 1)[0])


def radius_from_norms(norms) -> float:
    """Root-test radius from coefficient norms, or ABOVE_CUTOFF for superexponential decay.

    A line is fitted to log ||c_l|| over the top half of orders.  The decay
    counts as superexponential when the slope over the top quarter is more
    negative than the slope over the quarter below it by more than half of
    log(7/5), the gap a 1/l! factor would produce.
    """
    c = np.asarray(norms, float)
    L = len(c) - 1
    if L < 8:
        raise ValueError("radius estimation needs at least order 8")
    if not np.any(c > 0):
        return ABOVE_CUTOFF
    l = np.arange(L + 1)
    half = l[L // 2:]
    if np.any(c[half] <= 0):
        return ABOVE_CUTOFF
    logc = np.log(c)
    q3 = (3 * L) // 4
    upper = l[q3:]
    lower = l[L // 2:q3 + 1]
    if _slope(upper, logc[upper]) - _slope(lower, logc[lower]) < -0.5 * math.log(7.0 / 5.0):
        return ABOVE_CUTOFF
    return math.exp(-_slope(half, logc[half]))


def radius_estimate(series: BorelTaylorSeries, nparams: NormParams) -> float:
    return radius_from_norms(series.norms(nparams))


def majorant_sequence(a0: float, b, K1: float, params: PhysicalParams, M: int,
                      c0: float = 1.0) -> MajorantSequence:
    """a~_{m+1} = b_m/(m+1) + a a~_m/(m+1) + K1^2 max(nu,mu)(m+1) a~_m + 2 K1 C0 sum a~_l a~_{m-l}."""
    if K1 <= 0:
        raise ValueError("K1 must be positive")
    if a0 < 0:
        raise ValueError("a0 must be nonnegative")
    b = np.asarray(b, float)
    bm = np.zeros(M)
    bm[: min(M, len(b))] = b[:M]
    nm = max(params.nu, params.mu_thermal)
    a = params.buoyancy_a
    at = np.zeros(M + 1)
    at[0] = a0
    attained = M
    with np.errstate(over="ignore", invalid="ignore"):
        for m in range(M):
            conv = float(np.dot(at[: m + 1], at[m::-1]))
            nxt = bm[m] / (m + 1) + a * at[m] / (m + 1) + K1**2 * nm * (m + 1) * at[m] + 2 * K1 * c0 * conv
            if not np.isfinite(nxt):
                attained = m
                at = at[: m + 1]
                break
            at[m + 1] = nxt
    return MajorantSequence(a_tilde=at, K1=float(K1), radius_bound=1.0 / (K1**2 * nm),
                            attained_order=attained)
