"""Volterra march for the Borel-plane integral equations.

Each field component c with diffusive rate D_c satisfies

    H_c(k, p) = U1_c(k) J(2 sqrt(lam p)) + int_0^p Kr(p, p'; lam) R_c(k, p') dp',

with lam = D_c |k|^2, J(z) = 2 J1(z)/z, Kr the scaled Green kernel and

    R = A H + Phi(u0, H) + Phi(H, u0) + Phi-assembly of int_0^p H(s) * H(p - s) ds.

Both p-integrals use the trapezoid rule on the grid, with the convolution's
off-node arguments obtained by linear interpolation.  Because the kernel
vanishes on the diagonal the unknown at a node never enters its own update,
so each node is an explicit step; the first few nodes are seeded from the
Borel Taylor series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from borelflow.bessel_kernels import KernelRow, two_j1_over_z
from borelflow.spectral_core import (
    FlowState, FlowSystem, ModeLattice, PhysicalParams, SpectralField, _check_solenoidal,
)
from borelflow.taylor_engine import (
    ABOVE_CUTOFF, borel_coefficients, BorelTaylorSeries, eval_series_array,
)


class MarchError(ArithmeticError):
    """A march node produced a non-finite or non-convergent value."""

    def __init__(self, node: int, residual: float, message: str = ""):
        self.node = node
        self.residual = residual
        super().__init__(message or f"march failed at node {node} (residual {residual:.3e})")


@dataclass(frozen=True)
class BorelGrid:
    nodes: np.ndarray = field(repr=False)
    grading: float
    p_max: float

    @property
    def size(self) -> int:
        return len(self.nodes)

    def is_uniform(self) -> bool:
        d = np.diff(self.nodes)
        return bool(np.allclose(d, d[0], rtol=1e-12, atol=0.0))


def build_grid(p_max: float, n: int, grading: float = 1.0) -> BorelGrid:
    """Nodes p_i = p_max (i/n)^grading for i = 0..n."""
    if not (p_max > 0 and np.isfinite(p_max)):
        raise ValueError(f"p_max must be positive, got {p_max}")
    if int(n) != n or n < 1:
        raise ValueError(f"node count must be a positive integer, got {n}")
    if grading < 1:
        raise ValueError(f"grading must be >= 1, got {grading}")
    i = np.arange(n + 1)
    nodes = p_max * (i / n) ** grading
    nodes[-1] = p_max
    nodes.flags.writeable = False
    return BorelGrid(nodes=nodes, grading=float(grading), p_max=float(p_max))


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Trapezoid weights on the (possibly nonuniform) node set."""
    n = len(nodes)
    w = np.zeros(n)
    if n < 2:
        return w
    d = np.diff(nodes)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def reflected_interpolation(nodes: np.ndarray, n: int):
    """Linear interpolation data for g(p_n - s_i), i = 0..n.

    Returns (lo, hi, theta) so that g(p_n - s_i) ~ (1 - theta) g[lo] + theta g[hi].
    """
    x = nodes[n] - nodes[: n + 1]
    hi = np.searchsorted(nodes[: n + 1], x, side="left")
    hi = np.clip(hi, 0, n)
    lo = np.clip(hi - 1, 0, n)
    span = nodes[hi] - nodes[lo]
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(span > 0, (x - nodes[lo]) / span, 0.0)
    # exact hits on a node (always the case on uniform grids)
    exact = np.isclose(x, nodes[hi], rtol=0, atol=1e-14 * max(nodes[n], 1.0))
    lo = np.where(exact, hi, lo)
    theta = np.where(exact, 0.0, theta)
    return lo, hi, theta


def laplace_convolve(f_samples, g_samples, grid: BorelGrid, n: int):
    """Trapezoid product quadrature of int_0^{p_n} f(s) g(p_n - s) ds.

    Samples have shape (N, ...); products are taken elementwise over the
    trailing axes.  Off-node values of g are linearly interpolated.
    """
    nodes = np.asarray(grid.nodes)
    if not (0 <= n < len(nodes)):
        raise IndexError(f"node index {n} outside 0..{len(nodes) - 1}")
    f = np.asarray(f_samples)
    g = np.asarray(g_samples)
    if n == 0:
        return np.zeros(f.shape[1:], dtype=np.result_type(f, g))
    w = trapezoid_weights(nodes[: n + 1])
    lo, hi, theta = reflected_interpolation(nodes, n)
    th = theta.reshape((-1,) + (1,) * (g.ndim - 1))
    gr = (1 - th) * g[lo] + th * g[hi]
    return np.tensordot(w, f[: n + 1] * gr, axes=(0, 0))


@dataclass
class BorelSolution:
    grid: BorelGrid
    problem: str
    lattice: ModeLattice
    params: PhysicalParams
    samples: np.ndarray = field(repr=False)  # (N, C, M)
    initial: np.ndarray = field(repr=False)  # u0 stack (C, M)
    seed_order: int
    seeded_nodes: int
    forcing: np.ndarray | None = field(default=None, repr=False)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def system(self, workers: int | None = None) -> FlowSystem:
        return FlowSystem(self.problem, self.lattice, self.params, workers)

    def state_at(self, i: int) -> FlowState:
        arr = self.samples[i].reshape((-1,) + self.lattice.shape)
        return FlowState.from_stack(self.problem, self.lattice, arr)

    def first_coefficient(self) -> np.ndarray:
        return self.samples[0]

    def restricted(self, n: int) -> "BorelSolution":
        """Solution on nodes 0..n (inclusive)."""
        g = self.grid
        nodes = np.array(g.nodes[: n + 1])
        nodes.flags.writeable = False
        return BorelSolution(BorelGrid(nodes, g.grading, float(nodes[-1])), self.problem,
                             self.lattice, self.params, self.samples[: n + 1], self.initial,
                             self.seed_order, min(self.seeded_nodes, n + 1), self.forcing)


class _RateMap:
    """Distinct decay rates lam = D_c |k|^2 and their Bessel tables on a grid."""

    def __init__(self, system: FlowSystem, nodes: np.ndarray):
        rates = system.decay  # (C, M)
        uniq, inv = np.unique(rates, return_inverse=True)
        self.rates = uniq
        self.index = inv.reshape(rates.shape)
        self.kernel = KernelRow(nodes, uniq)
        z = 2.0 * np.sqrt(np.outer(uniq, nodes))
        self.jfac = two_j1_over_z(z)  # (rates, N)

    def source_factor(self, n: int) -> np.ndarray:
        """J(2 sqrt(lam p_n)) per (C, M)."""
        return self.jfac[self.index, n]

    def kernel_row(self, n: int) -> np.ndarray:
        """Kr(p_n, p_j) per (C, M, j)."""
        return self.kernel.row(n)[self.index]


def _source_terms(system: FlowSystem, U0: np.ndarray, Hs: np.ndarray, nodes: np.ndarray,
                  n: int, weights: np.ndarray | None = None) -> np.ndarray:
    """R(p_n) from samples Hs[0..n] on ``nodes``."""
    Hn = Hs[n]
    Xs = [U0, Hn]
    Ys = [Hn, U0]
    w = [1.0, 1.0]
    if n > 0:
        tw = trapezoid_weights(nodes[: n + 1]) if weights is None else weights
        lo, hi, theta = reflected_interpolation(nodes, n)
        th = theta[:, None, None]
        refl = (1 - th) * Hs[lo] + th * Hs[hi]
        Xs = np.concatenate([np.array(Xs), Hs[: n + 1]])
        Ys = np.concatenate([np.array(Ys), refl])
        w = np.concatenate([w, tw])
    else:
        Xs, Ys, w = np.array(Xs), np.array(Ys), np.array(w)
    return system.coupling(Hn) + system.weighted_bilinear(Xs, Ys, w)


def seed_switch(grid: BorelGrid, radius: float) -> float:
    """p below which nodes are taken from the Taylor series."""
    p1 = grid.nodes[1] if grid.size > 1 else grid.p_max
    second = 8.0 * p1
    return second if radius == ABOVE_CUTOFF else min(0.25 * radius, second)


def march(system: FlowSystem, state: FlowState, forcing: SpectralField | None, grid: BorelGrid,
          seed_order: int = 12, tol: float = 1e-12, radius: float | None = None) -> BorelSolution:
    """March the integral equation of ``system`` across ``grid``.

    The kernel vanishes on the diagonal, so each node is an explicit update
    of earlier ones and no fixed-point iteration is needed.  ``tol`` is kept
    for signature compatibility; non-finite updates raise MarchError.
    """
    _check_solenoidal(state, forcing)
    nodes = np.asarray(grid.nodes)
    U0 = system.flat(state)
    force = system.forcing_flat(forcing)
    U1 = system.rhs(U0, force)
    N = len(nodes)
    H = np.zeros((N,) + U0.shape, complex)
    R = np.zeros_like(H)

    coeffs = borel_coefficients(system, U0, U1, seed_order)
    series = BorelTaylorSeries(system.problem, system.lattice, seed_order, coeffs)
    if radius is None:
        from borelflow.taylor_engine import radius_from_norms
        from borelflow.norms import NormParams, stack_norm
        lnorm = NormParams("l1_linf", dim=system.dim)
        radius = radius_from_norms(stack_norm(coeffs, system.lattice, lnorm)) if seed_order >= 8 \
            else ABOVE_CUTOFF
    p_switch = seed_switch(grid, radius)
    seeded = int(np.searchsorted(nodes, p_switch, side="right"))
    seeded = max(1, min(seeded, N))
    H[:seeded] = eval_series_array(series, nodes[:seeded])
    H[0] = U1

    rmap = _RateMap(system, nodes)
    for n in range(N):
        if n >= seeded:
            tw = trapezoid_weights(nodes[: n + 1])
            K = rmap.kernel_row(n)  # (C, M, n+1); K[..., n] = 0
            integral = np.einsum("cmj,jcm->cm", K[..., :n] * tw[:n], R[:n])
            H[n] = U1 * rmap.source_factor(n) + integral
            if not np.all(np.isfinite(H[n])):
                raise MarchError(n, math.inf, f"non-finite value at node {n} (p = {nodes[n]:.6g})")
        R[n] = _source_terms(system, U0, H, nodes, n)
        if not np.all(np.isfinite(R[n])):
            raise MarchError(n, math.inf, f"non-finite source at node {n} (p = {nodes[n]:.6g})")
    return BorelSolution(grid=grid, problem=system.problem, lattice=system.lattice,
                         params=system.params, samples=H, initial=U0, seed_order=seed_order,
                         seeded_nodes=seeded, forcing=force)


def march_boussinesq(u0: SpectralField, theta0: SpectralField, f: SpectralField | None,
                     params: PhysicalParams, grid: BorelGrid, seed_order: int = 12,
                     tol: float = 1e-12, workers: int | None = None) -> BorelSolution:
    state = FlowState("boussinesq", u0, theta0)
    system = FlowSystem("boussinesq", state.lattice, params, workers)
    return march(system, state, f, grid, seed_order, tol)


def march_mhd(v0: SpectralField, B0: SpectralField, f: SpectralField | None,
              params: PhysicalParams, grid: BorelGrid, seed_order: int = 12,
              tol: float = 1e-12, workers: int | None = None) -> BorelSolution:
    state = FlowState("mhd", v0, B0)
    system = FlowSystem("mhd", state.lattice, params, workers)
    return march(system, state, f, grid, seed_order, tol)


def residual_integral_eq(sol: BorelSolution, refinement: int = 2,
                         workers: int | None = None) -> float:
    """Defect of the samples in the integral equation, re-evaluated on a finer grid.

    The samples are carried to a grid refined by ``refinement`` with cubic
    splines (per mode and component).  The convolution and kernel integrals
    are then recomputed with trapezoid sums on the fine grid and compared
    with the stored values at the original nodes:
    max |lhs - rhs| / (1 + |lhs|).
    """
    if refinement < 1:
        raise ValueError("refinement must be >= 1")
    H = sol.samples
    if not np.any(H):
        return 0.0
    system = sol.system(workers)
    nodes = np.asarray(sol.nodes)
    N = len(nodes)
    # fine grid: subdivide every interval uniformly
    fine = np.concatenate([
        np.linspace(nodes[i], nodes[i + 1], refinement + 1)[:-1] for i in range(N - 1)
    ] + [nodes[-1:]])
    coarse_idx = np.arange(N) * refinement
    spline = CubicSpline(nodes, H, axis=0)
    Hf = spline(fine)
    Hf[coarse_idx] = H
    U0 = sol.initial
    U1 = H[0]
    # sources at the coarse nodes with fine-grid convolutions
    Rc = np.zeros_like(H)
    for n in range(N):
        Rc[n] = _source_terms(system, U0, Hf, fine, coarse_idx[n])
    Rf = CubicSpline(nodes, Rc, axis=0)(fine)
    Rf[coarse_idx] = Rc
    rmap = _RateMap(system, fine)
    worst = 0.0
    for n in range(1, N):
        nf = coarse_idx[n]
        tw = trapezoid_weights(fine[: nf + 1])
        K = rmap.kernel_row(nf)
        rhs = U1 * rmap.source_factor(nf) + np.einsum("cmj,jcm->cm", K * tw, Rf[: nf + 1])
        defect = np.abs(H[n] - rhs) / (1.0 + np.abs(H[n]))
        worst = max(worst, float(defect.max()))
    return worst
