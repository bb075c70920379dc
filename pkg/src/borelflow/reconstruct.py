"""Laplace reconstruction of time-domain modes, physical evaluation and the RK4 oracle."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from borelflow.borel_march import BorelSolution
from borelflow.spectral_core import (
    FlowState, FlowSystem, PhysicalParams, SpectralField, _check_solenoidal,
)

BLOWUP_LIMIT = 1e12
WINDOW_TOL = 1e-14
TAIL_FRACTION = 0.1
SYMMETRY_TOL = 1e-12


class ValidityError(ValueError):
    """Evaluation requested outside the region where the representation is proven."""


class BlowUpError(ArithmeticError):
    def __init__(self, time: float, norm: float):
        super().__init__(f"RK4 solution norm {norm:.3e} exceeded {BLOWUP_LIMIT:g} at t = {time:.17g}")
        self.time = time
        self.norm = norm


@dataclass(frozen=True)
class TimeTrajectory:
    times: np.ndarray
    states: list = field(repr=False)
    source: str
    initial: FlowState | None = field(default=None, repr=False)

    def __post_init__(self):
        t = np.asarray(self.times, float)
        if t.ndim != 1 or len(t) != len(self.states):
            raise ValueError("times and states must have equal length")
        if np.any(t <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be positive and increasing")
        if self.source not in ("laplace", "rk4"):
            raise ValueError(f"unknown trajectory source {self.source!r}")

    def stacks(self) -> np.ndarray:
        return np.array([s.stack() for s in self.states])


# --- Laplace reconstruction -------------------------------------------------
def _panel_moments(a: np.ndarray, h: np.ndarray, s: float) -> np.ndarray:
    """int_a^{a+h} (p-a)^j e^{-s p} dp for j = 0, 1, 2; shape (3, n)."""
    x = s * h
    out = np.empty((3,) + a.shape)
    for j in range(3):
        # gamma(j+1) * regularized lower incomplete gamma, stable for small x
        out[j] = math.factorial(j) * special.gammainc(j + 1, x) / s ** (j + 1)
    return out * np.exp(-s * a)


def laplace_weights(nodes: np.ndarray, s: float) -> np.ndarray:
    """Weights w_i with sum_i w_i g(p_i) = int_{p_0}^{p_N} g(p) e^{-s p} dp for
    g piecewise quadratic.  Interval [p_i, p_{i+1}] uses nodes i, i+1, i+2
    (i-1, i, i+1 on the last interval)."""
    p = np.asarray(nodes, float)
    N = len(p)
    if N < 3:
        raise ValueError("Laplace quadrature needs at least three nodes")
    starts = np.arange(N - 1)
    first = np.minimum(starts, N - 3)
    a = p[starts]
    h = p[starts + 1] - a
    mom = _panel_moments(a, h, s)
    w = np.zeros(N)
    for r in range(3):
        idx = first + r
        xr = p[idx] - a
        others = [p[first + q] - a for q in range(3) if q != r]
        # Lagrange basis (x - o1)(x - o2) / ((xr - o1)(xr - o2)) expanded in x = p - a
        denom = (xr - others[0]) * (xr - others[1])
        c2 = 1.0 / denom
        c1 = -(others[0] + others[1]) / denom
        c0 = others[0] * others[1] / denom
        np.add.at(w, idx, c0 * mom[0] + c1 * mom[1] + c2 * mom[2])
    return w


def _tail_correction(nodes: np.ndarray, samples: np.ndarray, s: float) -> np.ndarray:
    """int_{p_N}^inf c e^{kappa p} e^{-s p} dp with c e^{kappa p} fitted per entry
    to |samples| over the last tenth of the grid."""
    N = len(nodes)
    k = max(2, int(math.ceil(TAIL_FRACTION * N)))
    pk = nodes[-k:]
    last = samples[-1]
    mags = np.abs(samples[-k:])
    out = np.zeros_like(last)
    mask = np.all(mags > 0, axis=0)
    if not mask.any():
        return out
    logs = np.log(mags[:, mask])
    pc = pk - pk.mean()
    kappa = (pc @ (logs - logs.mean(axis=0))) / (pc @ pc)
    gap = s - kappa
    if np.any(gap <= 0):
        raise ValidityError(
            f"fitted growth rate {kappa.max():.6g} is not below 1/t = {s:.6g}; the tail integral diverges"
        )
    out[mask] = last[mask] * math.exp(-s * nodes[-1]) / gap
    return out


def laplace_eval(sol: BorelSolution, u0: SpectralField, theta0: SpectralField, t: float,
                 omega: float) -> FlowState:
    """(u, theta)(k, t) = (u0, theta0)(k) + int_0^inf H(k, p) e^{-p/t} dp.

    Piecewise-quadratic product integration on the grid plus a fitted
    exponential tail beyond the last node.  Requires 1/t > omega.
    """
    if not t > 0:
        raise ValidityError(f"t must be positive, got {t}")
    s = 1.0 / t
    if not s > omega:
        raise ValidityError(
            f"1/t = {s:.6g} does not exceed omega = {omega:.6g}; the Laplace representation "
            "holds only for 1/t > omega"
        )
    state0 = FlowState(sol.problem, u0, theta0)
    U0 = state0.stack().reshape(sol.samples.shape[1:])
    nodes = np.asarray(sol.nodes, float)
    H = sol.samples
    damped = np.exp(-s * nodes) * np.max(np.abs(H), axis=(1, 2))
    peak = float(damped.max(initial=0.0))
    if peak > 0 and damped[-1] > WINDOW_TOL * peak:
        warnings.warn(
            f"grid ends at p = {nodes[-1]:.6g} where the damped samples are {damped[-1] / peak:.2e} "
            "of their peak; the fitted tail carries the remainder",
            RuntimeWarning,
        )
    w = laplace_weights(nodes, s)
    integral = np.tensordot(w, H, axes=(0, 0)) + _tail_correction(nodes, H, s)
    out = U0 + integral
    return FlowState.from_stack(sol.problem, sol.lattice, out.reshape((-1,) + sol.lattice.shape))


def laplace_trajectory(sol: BorelSolution, u0: SpectralField, theta0: SpectralField, times,
                       omega: float) -> TimeTrajectory:
    times = np.asarray(times, float)
    states = [laplace_eval(sol, u0, theta0, float(t), omega) for t in times]
    return TimeTrajectory(times, states, "laplace", FlowState(sol.problem, u0, theta0))


# --- RK4 oracle -------------------------------------------------------------
def galerkin_rk4(u0: SpectralField, theta0: SpectralField, f: SpectralField | None,
                 params: PhysicalParams, t_end: float, dt: float, problem: str = "boussinesq",
                 record_every: int = 1, workers: int | None = None,
                 record_times=None) -> TimeTrajectory:
    """Fixed-step classical RK4 on the truncated mode system.

    The step is t_end / ceil(t_end / dt) so that t_end is hit exactly.  States
    are recorded every ``record_every`` steps and at the final time; when
    ``record_times`` is given each of those times is hit exactly instead,
    with steps no larger than dt between consecutive times.
    """
    if not (t_end > 0 and dt > 0):
        raise ValueError("t_end and dt must be positive")
    state = FlowState(problem, u0, theta0)
    _check_solenoidal(state, f)
    system = FlowSystem(problem, state.lattice, params, workers)
    U = system.flat(state).copy()
    force = system.forcing_flat(f)

    def F(X):
        return system.rhs(X, force)

    if record_times is None:
        nsteps = int(math.ceil(t_end / dt - 1e-12))
        h = t_end / nsteps
        idx = [i for i in range(1, nsteps + 1) if i % record_every == 0 or i == nsteps]
        plan = [(i * h, i - j, h) for j, i in zip([0] + idx[:-1], idx)]
    else:
        rt = np.asarray(record_times, float)
        if rt[0] <= 0 or np.any(np.diff(rt) <= 0):
            raise ValueError("record_times must be positive and increasing")
        plan = []
        t0 = 0.0
        for tt in rt:
            n = int(math.ceil((tt - t0) / dt - 1e-12))
            plan.append((float(tt), n, (tt - t0) / n))
            t0 = float(tt)
    times, states = [], []
    t0 = 0.0
    for tt, n, h in plan:
        for i in range(n):
            k1 = F(U)
            k2 = F(U + 0.5 * h * k1)
            k3 = F(U + 0.5 * h * k2)
            k4 = F(U + h * k3)
            U = U + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            norm = float(np.max(np.abs(U)))
            if not np.isfinite(norm) or norm > BLOWUP_LIMIT:
                raise BlowUpError(t0 + (i + 1) * h, norm)
        t0 = tt
        times.append(tt)
        states.append(system.unflat(U))
    return TimeTrajectory(np.array(times), states, "rk4", state)


# --- physical space ---------------------------------------------------------
def physical_eval(fld: SpectralField, points) -> np.ndarray:
    """sum_k amplitude(k) e^{i k.x} at the given points (shape (P, d)).

    Returns (P,) for scalars and (P, d) for vectors.
    """
    if not fld.is_conjugate_symmetric(SYMMETRY_TOL):
        raise ValueError(f"field is not conjugate-symmetric (defect {fld.conjugate_defect():.3e})")
    lat = fld.lattice
    x = np.atleast_2d(np.asarray(points, float))
    if x.shape[1] != lat.dim:
        raise ValueError(f"points must have {lat.dim} coordinates")
    k = lat.k.reshape(lat.dim, -1)
    phase = np.exp(1j * (x @ k))  # (P, M)
    amps = fld.amplitudes.reshape(-1, lat.size)
    vals = phase @ amps.T  # (P, ncomp)
    scale = max(float(np.abs(amps).sum()), 1e-300)
    resid = float(np.max(np.abs(vals.imag), initial=0.0))
    if resid > SYMMETRY_TOL * scale:
        raise ValueError(f"imaginary residue {resid:.3e} exceeds tolerance")
    out = vals.real
    return out[:, 0] if fld.kind == "scalar" else out


def pde_residual(traj: TimeTrajectory, f: SpectralField | None, params: PhysicalParams,
                 workers: int | None = None) -> float:
    """Max over interior samples of |central difference - right side| relative
    to the size of the terms in the balance."""
    if len(traj.times) < 3:
        raise ValueError("pde_residual needs at least three time samples")
    st0 = traj.states[0]
    system = FlowSystem(st0.problem, st0.lattice, params, workers)
    force = system.forcing_flat(f)
    U = np.array([system.flat(s) for s in traj.states])
    t = np.asarray(traj.times, float)
    worst = 0.0
    for i in range(1, len(t) - 1):
        d = (U[i + 1] - U[i - 1]) / (t[i + 1] - t[i - 1])
        lin = system.linear(U[i])
        r = lin + system.bilinear(U[i], U[i]) + force
        scale = max(np.abs(d).max(), np.abs(r).max(), np.abs(lin).max(), np.abs(force).max(), 1e-300)
        worst = max(worst, float(np.abs(d - r).max() / scale))
    return worst
