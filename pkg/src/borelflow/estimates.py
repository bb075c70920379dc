"""Growth-rate bounds, series-bound constants and improved existence times.

All strict inequalities are enforced with a 1% multiplicative margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from borelflow.bessel_kernels import KernelTable
from borelflow.borel_march import BorelSolution, _RateMap, _source_terms, trapezoid_weights
from borelflow.norms import C7, ConstantsBundle, NormParams, stack_norm
from borelflow.spectral_core import PhysicalParams

MARGIN = 1.01
OMEGA_FLOOR = 1e-6
L_BALL_CAP = 1e6


class EstimateError(ArithmeticError):
    """An estimate could not be formed (for example a violated precondition)."""


@dataclass(frozen=True)
class GrowthEstimate:
    problem: str
    omega: float
    L_ball: float
    constants: ConstantsBundle
    lhs_at_omega: float
    a0d0: float | None = None
    radius_lower_bound: float | None = None


@dataclass(frozen=True)
class ImprovedEstimateReport:
    p0: float
    omega0: float
    b: float
    epsilon1: float
    B1: float
    B2_integral: float
    B3: float
    B4: float
    omega_star: float
    omega_final: float
    existence_time: float
    tail_rate: float = 0.0
    tail_decays: bool = True
    scan: dict = field(default_factory=dict)

    def discriminant_holds(self) -> bool:
        w = self.omega_final
        return w > self.epsilon1 and (self.epsilon1 - w) ** 2 > 4 * self.B3 * self.b


def growth_lhs(problem: str, omega: float, n0: float, n1: float, c: ConstantsBundle) -> float:
    """Left side of the contraction condition on the exponential growth rate."""
    if omega <= 0:
        return math.inf
    if problem == "boussinesq":
        base = 2 * c.c2 * math.sqrt(math.pi) * omega**-0.5 * (2 * n1 / omega + n0)
        return base + 2 * c.c3 / omega
    return 2 * c.c4 * math.sqrt(math.pi) * omega**-0.5 * (2 * n1 / omega + n0)


def ball_lhs(problem: str, L: float, n0: float, n1: float, c: ConstantsBundle) -> float:
    """Left side of the local-interval condition."""
    if problem == "boussinesq":
        return 2 * c.c2 * math.sqrt(L) * (2 * L * n1 + n0) + 2 * c.c3 * L
    return 2 * c.c4 * math.sqrt(L) * (2 * L * n1 + n0)


def apriori_growth(problem: str, n0: float, n1: float, constants: ConstantsBundle) -> GrowthEstimate:
    """Smallest admissible growth rate (times the margin) and the local interval.

    n0, n1 are the norms of the initial data and of the first coefficient.
    """
    if problem not in ("boussinesq", "mhd"):
        raise EstimateError(f"unknown problem {problem!r}")
    if not (np.isfinite(n0) and np.isfinite(n1)) or n0 < 0 or n1 < 0:
        raise EstimateError("data norms must be finite and nonnegative")
    c = constants

    def f(w):
        return growth_lhs(problem, w, n0, n1, c)

    if f(OMEGA_FLOOR) < 1.0 / MARGIN or (n0 == 0 and n1 == 0 and (problem == "mhd" or c.c3 == 0)):
        omega = OMEGA_FLOOR
    else:
        hi = 1.0
        while f(hi) >= 1.0:
            hi *= 2.0
        lo = hi / 2.0
        while f(lo) < 1.0 and lo > OMEGA_FLOOR:
            lo /= 2.0
        a, b = lo, hi
        for _ in range(300):
            m = math.sqrt(a * b)
            if f(m) < 1.0:
                b = m
            else:
                a = m
            if b / a - 1 < 1e-14:
                break
        omega = max(b * MARGIN, OMEGA_FLOOR)

    def g(L):
        return ball_lhs(problem, L, n0, n1, c)

    if g(L_BALL_CAP) < 1.0:
        L_ball = L_BALL_CAP
    else:
        a, b = 0.0, L_BALL_CAP
        for _ in range(400):
            m = 0.5 * (a + b)
            if g(m) < 1.0:
                a = m
            else:
                b = m
            if b - a <= 1e-15 * b:
                break
        L_ball = a / MARGIN
    return GrowthEstimate(problem=problem, omega=omega, L_ball=L_ball, constants=c,
                          lhs_at_omega=f(omega))


def _positive_root(b: float, c: float) -> float:
    """Largest root of x^2 = b x + c (b, c >= 0)."""
    return 0.5 * (b + math.sqrt(b * b + 4 * c))


def series_bound_constants(problem: str, n0: float, n1: float, constants: ConstantsBundle,
                           params: PhysicalParams, nparams: NormParams) -> tuple[float, float]:
    """(A0, D0) such that |H^[l](k)| <= e^{-beta|k|} A0 D0^l (1+|k|)^{-gamma} Q_2l(beta|k|)/(2l+1)^2.

    A0 is the norm of the first coefficient times the margin.  D0 is the largest value
    demanded by the base case, the second-order case and the induction step;
    the induction step is taken both with and without the D0 factor on its
    first-coefficient term so that either reading is covered.  Zero data
    return A0 = 0 and D0 = OMEGA_FLOOR.
    """
    if nparams.kind != "gamma_beta" or nparams.beta <= 0:
        raise EstimateError("series bounds need the weighted norm with beta > 0")
    beta, gam, d = nparams.beta, nparams.gamma, nparams.dim
    c0 = constants.c0
    c7 = C7[d]
    bd = beta**d
    if n1 == 0:
        return 0.0, OMEGA_FLOOR
    # equality holds at l = 0 on the mode attaining the norm, so A0 takes the margin too
    A0 = n1 * MARGIN
    if problem == "boussinesq":
        m1, a = constants.m1, params.buoyancy_a
        base = 9.0 / beta**2 * n1 * (c0 * beta * n0 + m1 + a * beta**2) / A0
        lin = 6 * m1 / beta**2 + 2**gam * 9 * c7 * math.pi * n0 / bd
        second = _positive_root(lin + a, c0 * n1**2 / (A0 * beta))
        u1term = 2**gam * 9 * c7 * math.pi * n1 / (4 * bd)
        const = 2 ** (gam + 1) * c7 * A0 / bd
        ind_a = _positive_root(lin + a / 2 + u1term, const)
        ind_b = _positive_root(lin + a / 2, u1term + const)
    else:
        m2, m3 = constants.m2, constants.m3
        base = 9.0 / beta**2 * n1 * m2 * m3 * (1 + c0 * beta * n0) / A0
        lin = 6 * m2 / beta**2 + m3 * 2 ** (gam + 1) * 9 * c7 * math.pi * n0 / bd
        second = _positive_root(lin, 2 * c0 * m3 * n1**2 / (A0 * beta))
        u1term = m3 * 2 ** (gam + 1) * 9 * c7 * math.pi * n1 / (4 * bd)
        const = m3 * 2 ** (gam + 2) * c7 * A0 / bd
        ind_a = _positive_root(lin + u1term, const)
        ind_b = _positive_root(lin, u1term + const)
    D0 = max(base, second, ind_a, ind_b) * MARGIN
    return A0, D0


def coefficient_bound(A0: float, D0: float, l: int, kabs: np.ndarray, nparams: NormParams) -> np.ndarray:
    """Right side of the coefficient bound per mode (log-space safe)."""
    from borelflow.norms import log_q_poly
    beta, gam = nparams.beta, nparams.gamma
    if A0 == 0:
        return np.zeros_like(kabs)
    logq = np.array([log_q_poly(2 * l, beta * k) for k in np.ravel(kabs)]).reshape(np.shape(kabs))
    logb = (-beta * kabs + math.log(A0) + l * math.log(D0) - gam * np.log1p(kabs) + logq
            - 2 * math.log(2 * l + 1))
    return np.exp(logb)


def truncated_tail_functions(sol: BorelSolution, p0: float, grid_nodes: np.ndarray | None = None,
                             workers: int | None = None):
    """Samples of (H, S)^(s) on the solution grid (or ``grid_nodes``).

    (H,S)^(a) is the solution on [0, p0] and zero beyond.  Then

        (H,S)^(s)(p) = U1 J(p) + int_0^{min(p, 2 p0)} Kr(p, p') R^(a)(p') dp'

    where R^(a) collects the transport terms built from (H,S)^(a) and u0,
    and the buoyancy coupling a P[e2 S^(a)], which vanishes beyond p0.
    Returns (nodes, samples (N, C, M), a_part (N, C, M)).
    """
    nodes = np.asarray(sol.nodes if grid_nodes is None else grid_nodes, float)
    on_grid = np.isclose(nodes, p0, rtol=0, atol=1e-12 * max(1.0, p0))
    if not on_grid.any():
        raise EstimateError(f"p0 = {p0} is not a grid node")
    n0 = int(np.argmax(on_grid))
    if not np.allclose(nodes[: n0 + 1], np.asarray(sol.nodes)[: n0 + 1], rtol=0, atol=1e-14):
        raise EstimateError("the tail grid must agree with the solution grid on [0, p0]")
    if nodes[-1] < 2 * p0 * (1 - 1e-12):
        raise EstimateError("the tail grid must extend to at least 2 p0")
    system = sol.system(workers)
    N = len(nodes)
    Ha = np.zeros((N,) + sol.samples.shape[1:], complex)
    Ha[: n0 + 1] = sol.samples[: n0 + 1]
    U0 = sol.initial
    force = sol.forcing if sol.forcing is not None else np.zeros_like(U0)
    U1 = system.rhs(U0, force)
    R = np.zeros_like(Ha)
    n_conv = int(np.searchsorted(nodes, 2 * p0 * (1 + 1e-12), side="right"))
    for n in range(min(n_conv, N)):
        R[n] = _source_terms(system, U0, Ha, nodes, n)
    rmap = _RateMap(system, nodes)
    Hs = np.zeros_like(Ha)
    Hs[0] = U1
    # R^(a) vanishes beyond 2 p0, so the zero-padded integral over [0, p] is the truncated one
    for n in range(1, N):
        K = rmap.kernel_row(n)
        tw = trapezoid_weights(nodes[: n + 1])
        Hs[n] = U1 * rmap.source_factor(n) + np.einsum("cmj,jcm->cm", K * tw, R[: n + 1])
    return nodes, Hs, Ha


def _tail_integral(p: np.ndarray, vals: np.ndarray, rate: float) -> tuple[float, float]:
    """int_{p[0]}^inf e^{-rate p} vals dp: trapezoid plus a geometric tail bound."""
    damped = np.exp(-rate * p) * vals
    body = float(np.trapezoid(damped, p)) if len(p) > 1 else 0.0
    peak = float(damped.max(initial=0.0))
    if peak == 0.0:
        return 0.0, 0.0
    # decay rate of the damped integrand over the last tenth of the grid
    k = max(2, len(p) // 10)
    a, b = damped[-k], damped[-1]
    span = p[-1] - p[-k]
    if a > 0 and b > 0 and b < a and span > 0:
        decay = math.log(a / b) / span
        tail = b / decay
    elif b == 0:
        decay, tail = math.inf, 0.0
    else:
        raise EstimateError("the tail integrand does not decay on the computed grid; extend p_max")
    return body + tail, decay


def improved_existence(sol: BorelSolution, p0: float, omega0: float, constants: ConstantsBundle,
                       table: KernelTable, nparams: NormParams, tail_nodes: np.ndarray | None = None,
                       workers: int | None = None, tail=None) -> ImprovedEstimateReport:
    """Improved growth rate from knowledge of the solution on [0, p0].

    B0 is bounded by C0 sup|G/z| over the whole kernel domain, which is
    no smaller than the sup over [p0, p] that the bound calls for.
    """
    if omega0 < 0:
        raise EstimateError("omega0 must be nonnegative")
    lat = sol.lattice
    if tail is None:
        tail = truncated_tail_functions(sol, p0, tail_nodes, workers)
    nodes, Hs, Ha = tail
    i0 = int(np.argmax(np.isclose(nodes, p0, rtol=0, atol=1e-12 * max(1.0, p0))))
    kmax = lat.max_kabs()
    B0 = constants.c0 * table.sup_G_over_z
    nu0 = float(stack_norm(sol.initial, lat, nparams))
    B1 = 2 * kmax * B0 * nu0
    B3 = kmax * B0
    B4 = sol.params.buoyancy_a * B0
    a_norms = stack_norm(Ha[: i0 + 1], lat, nparams)
    B2 = 2 * kmax * B0 * a_norms
    pa = nodes[: i0 + 1]
    B2_int = float(np.trapezoid(np.exp(-omega0 * pa) * B2, pa)) if i0 > 0 else 0.0
    eps1 = B1 + B4 + B2_int
    s_norms = stack_norm(Hs[i0:], lat, nparams)
    if omega0 == 0:
        b, rate = 0.0, 0.0
    else:
        integral, rate = _tail_integral(nodes[i0:], s_norms, omega0)
        b = omega0 * integral
    omega_star = eps1 + 2 * math.sqrt(B3 * b)
    omega_final = max(omega0, omega_star) * MARGIN
    if omega_final <= 0:
        omega_final = OMEGA_FLOOR
    if not np.isfinite(omega_final):
        raise EstimateError(f"improved estimate is not finite (eps1={eps1}, B3={B3}, b={b})")
    report = ImprovedEstimateReport(p0=float(p0), omega0=float(omega0), b=float(b),
                                    epsilon1=float(eps1), B1=float(B1), B2_integral=B2_int,
                                    B3=float(B3), B4=float(B4), omega_star=float(omega_star),
                                    omega_final=float(omega_final),
                                    existence_time=1.0 / omega_final, tail_rate=float(rate),
                                    tail_decays=bool(rate > 0 or b == 0))
    if not report.discriminant_holds() and not (B3 * b == 0 and omega_final > eps1):
        raise EstimateError(
            f"discriminant condition fails: eps1={eps1}, B3={B3}, b={b}, omega={omega_final}"
        )
    return report


def improved_existence_scan(sol: BorelSolution, p0: float, omega: float, constants: ConstantsBundle,
                            table: KernelTable, nparams: NormParams,
                            fractions=(0.125, 0.25, 0.5), tail_nodes=None,
                            workers: int | None = None) -> ImprovedEstimateReport:
    """Run improved_existence at omega0 = omega * fraction and keep the best result."""
    tail = truncated_tail_functions(sol, p0, tail_nodes, workers)
    reports = {}
    for fr in fractions:
        reports[fr] = improved_existence(sol, p0, omega * fr, constants, table, nparams, tail=tail)
    best = min(reports.values(), key=lambda r: r.omega_final)
    scan = {f"{fr:g}": r.omega_final for fr, r in reports.items()}
    return ImprovedEstimateReport(**{**best.__dict__, "scan": scan})
