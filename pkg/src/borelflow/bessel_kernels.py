"""Order-one Bessel functions and the Borel-plane Green kernels.

J1 and Y1 use the ascending series for small arguments, Miller backward
recurrence with a Neumann series for Y1 at moderate arguments (where the
alternating ascending series loses absolute accuracy to cancellation), and
the Hankel asymptotic expansion above ``ASYMPTOTIC_SPLIT``.  The kernel

    G(z, z') = z' (-J1(z) Y1(z') + Y1(z) J1(z'))

and its scaled form H(p, p', lam) = (pi / z) G(z, z') with z = 2 sqrt(lam p),
z' = 2 sqrt(lam p') are evaluated with dedicated branches where direct
subtraction loses digits: near the diagonal z' = z and for small z.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

SERIES_SPLIT = 4.0
ASYMPTOTIC_SPLIT = 25.0
EULER_GAMMA = 0.5772156649015329
_SERIES_TERMS = 60
_ASYMPTOTIC_TERMS = 40
DIAGONAL_FRACTION = 1e-3
SMALL_Z = 1e-4


class KernelDomainError(ValueError):
    """Argument outside the domain of a kernel or special function."""


def _series_tables():
    m = np.arange(_SERIES_TERMS)
    lg = np.array([math.lgamma(k + 1) + math.lgamma(k + 2) for k in m])
    coef = (-1.0) ** m * np.exp(-lg)  # (-1)^m / (m! (m+1)!)
    harmonic = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, _SERIES_TERMS + 1))])
    psi_sum = (-EULER_GAMMA + harmonic[m]) + (-EULER_GAMMA + harmonic[m + 1])
    return coef, psi_sum


_COEF, _PSI_SUM = _series_tables()


def _j1_y1_series(z: np.ndarray):
    """Ascending series for J1 and Y1 (Y1 only meaningful for z > 0)."""
    h = 0.5 * z
    h2 = h * h
    j = np.zeros_like(z)
    s = np.zeros_like(z)
    power = h.copy()  # (z/2)^(2m+1)
    for m in range(_SERIES_TERMS):
        term = _COEF[m] * power
        j += term
        s += _PSI_SUM[m] * term
        power = power * h2
        if m > 4 and np.all(np.abs(term) <= 1e-18 * np.maximum(np.abs(j), 1e-300)):
            break
    with np.errstate(divide="ignore", invalid="ignore"):
        y = (2.0 / np.pi) * np.log(h) * j - 2.0 / (np.pi * z) - s / np.pi
    return j, y


def _hankel_coefficients():
    mu = 4.0
    a = [1.0]
    for k in range(1, _ASYMPTOTIC_TERMS + 1):
        a.append(a[-1] * (mu - (2 * k - 1) ** 2) / (k * 8.0))
    return np.array(a)


_HANKEL = _hankel_coefficients()


def _j1_y1_asymptotic(z: np.ndarray):
    """Hankel expansion J1 = s (P cos chi - Q sin chi), Y1 = s (P sin chi + Q cos chi)."""
    P = np.zeros_like(z)
    Q = np.zeros_like(z)
    inv = 1.0 / z
    prev = np.full_like(z, np.inf)
    active = np.ones(z.shape, dtype=bool)
    zk = np.ones_like(z)
    for k in range(_ASYMPTOTIC_TERMS + 1):
        term = _HANKEL[k] * zk
        mag = np.abs(term)
        # stop each point at its smallest term (optimal truncation)
        active &= mag < prev
        sign = (-1.0) ** (k // 2)
        if k % 2 == 0:
            P += np.where(active, sign * term, 0.0)
        else:
            Q += np.where(active, sign * term, 0.0)
        prev = mag
        zk = zk * inv
        if not active.any():
            break
    chi = z - 0.75 * np.pi
    amp = np.sqrt(2.0 / (np.pi * z))
    c, s = np.cos(chi), np.sin(chi)
    return amp * (P * c - Q * s), amp * (P * s + Q * c)


def _j1_y1_recurrence(z: np.ndarray):
    """Miller backward recurrence for J_n, normalized by J0 + 2 sum J_2k = 1.

    Y1 follows from differentiating the Neumann series of Y0:
    Y1 = -2 J0/(pi z) + (2/pi)(ln(z/2) + gamma) J1
         + (2/pi) sum_k (-1)^k (J_{2k-1} - J_{2k+1}) / k.
    """
    N = 2 * int((float(z.max()) + 40.0) / 2.0)
    jn1 = np.zeros_like(z)
    jn = np.full_like(z, 1e-30)
    J = np.zeros((N + 2,) + z.shape)
    J[N] = jn
    for n in range(N, 0, -1):
        jm = (2.0 * n / z) * jn - jn1
        jn1, jn = jn, jm
        J[n - 1] = jm
        big = np.abs(jm) > 1e200
        if big.any():
            J[:, big] *= 1e-200
            jn1 = np.where(big, jn1 * 1e-200, jn1)
            jn = np.where(big, jn * 1e-200, jn)
    norm = J[0] + 2.0 * J[2:N + 1:2].sum(axis=0)
    J /= norm
    k = np.arange(1, N // 2 + 1)
    sign = ((-1.0) ** k)[:, None] if z.ndim else (-1.0) ** k
    diff = (J[2 * k - 1] - J[2 * k + 1])
    tail = np.sum((sign / k.reshape((-1,) + (1,) * z.ndim)) * diff, axis=0)
    y = (-2.0 * J[0] / (np.pi * z) + (2.0 / np.pi) * (np.log(0.5 * z) + EULER_GAMMA) * J[1]
         + (2.0 / np.pi) * tail)
    return J[1], y


def _j1_y1(z):
    z = np.asarray(z, dtype=float)
    j = np.empty_like(z)
    y = np.empty_like(z)
    small = z < SERIES_SPLIT
    large = z >= ASYMPTOTIC_SPLIT
    mid = ~(small | large)
    if small.any():
        j[small], y[small] = _j1_y1_series(z[small])
    if mid.any():
        j[mid], y[mid] = _j1_y1_recurrence(z[mid])
    if large.any():
        j[large], y[large] = _j1_y1_asymptotic(z[large])
    return j, y


def _scalarize(x, like):
    return float(x) if np.ndim(like) == 0 else x


def bessel_j1(z):
    """J1(z) for z >= 0 (scalar or array)."""
    za = np.asarray(z, dtype=float)
    if np.any(za < 0):
        raise KernelDomainError("bessel_j1 requires z >= 0")
    return _scalarize(_j1_y1(za)[0], z)


def bessel_y1(z):
    """Y1(z) for z > 0 (scalar or array)."""
    za = np.asarray(z, dtype=float)
    if np.any(za <= 0):
        raise KernelDomainError("bessel_y1 has a logarithmic singularity at z = 0; need z > 0")
    return _scalarize(_j1_y1(za)[1], z)


def two_j1_over_z(z):
    """2 J1(z) / z with the removable singularity filled (value 1 at z = 0)."""
    za = np.asarray(z, dtype=float)
    if np.any(za < 0):
        raise KernelDomainError("two_j1_over_z requires z >= 0")
    out = np.empty_like(za)
    tiny = za < 1e-3
    zt = za[tiny]
    out[tiny] = 1.0 - zt**2 / 8.0 + zt**4 / 192.0 - zt**6 / 9216.0
    zb = za[~tiny]
    out[~tiny] = 2.0 * _j1_y1(zb)[0] / zb
    return _scalarize(out, z)


def _scaled_parts(zp: np.ndarray):
    """(z' J1(z'), z' Y1(z')) with the z' = 0 limits (0, -2/pi)."""
    j, y = _j1_y1(np.where(zp > 0, zp, 1.0))
    zj = np.where(zp > 0, zp * j, 0.0)
    zy = np.where(zp > 0, zp * y, -2.0 / np.pi)
    return zj, zy


def _near_diagonal_G(z, delta):
    """Local expansion of G(z, z + delta) about the diagonal."""
    return (-(2.0 / np.pi) * delta - delta**2 / (np.pi * z)
            + delta**3 / (3.0 * np.pi) + delta**4 / (6.0 * np.pi * z))


def kernel_G(z, z_prime):
    """G(z, z') = z'(-J1(z) Y1(z') + Y1(z) J1(z')) for 0 <= z' <= z."""
    z_arr, zp_arr = np.broadcast_arrays(np.asarray(z, float), np.asarray(z_prime, float))
    if np.any(zp_arr < 0) or np.any(zp_arr > z_arr):
        raise KernelDomainError("kernel_G requires 0 <= z' <= z")
    out = np.zeros(z_arr.shape)
    pos = z_arr > 0
    zz = z_arr[pos]
    zp = zp_arr[pos]
    jz, yz = _j1_y1(zz)
    zj, zy = _scaled_parts(zp)
    g = -jz * zy + yz * zj
    delta = zp - zz
    near = np.abs(delta) < DIAGONAL_FRACTION * np.minimum(zz, 1.0)
    g[near] = _near_diagonal_G(zz[near], delta[near])
    out[pos] = g
    if np.ndim(z) == 0 and np.ndim(z_prime) == 0:
        return float(out)
    return out


def _small_z_H(p, pp, lam):
    """1 - p'/p plus the first-order correction in lam, for tiny z."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logterm = np.where(pp > 0, pp * p * np.log(p / np.where(pp > 0, pp, 1.0)), 0.0)
    k1 = -((p - pp) ** 2 / 2.0 - logterm + pp * (p - pp)) / p
    return 1.0 - pp / p + lam * k1


def kernel_H(p, p_prime, ksq_nu):
    """H(p, p', lam) = (pi/z) G(z, z') with z = 2 sqrt(lam p), z' = 2 sqrt(lam p')."""
    p_a, pp_a, lam_a = np.broadcast_arrays(
        np.asarray(p, float), np.asarray(p_prime, float), np.asarray(ksq_nu, float)
    )
    if np.any(p_a <= 0):
        raise KernelDomainError("kernel_H requires p > 0")
    if np.any(pp_a < 0) or np.any(pp_a > p_a):
        raise KernelDomainError("kernel_H requires 0 <= p' <= p")
    if np.any(lam_a < 0):
        raise KernelDomainError("kernel_H requires ksq_nu >= 0")
    z = 2.0 * np.sqrt(lam_a * p_a)
    zp = 2.0 * np.sqrt(lam_a * pp_a)
    out = np.empty(z.shape)
    small = z < SMALL_Z
    out[small] = _small_z_H(p_a[small], pp_a[small], lam_a[small])
    big = ~small
    if big.any():
        zb = z[big]
        out[big] = (np.pi / zb) * kernel_G(zb, np.minimum(zp[big], zb))
    if np.ndim(p) == 0 and np.ndim(p_prime) == 0 and np.ndim(ksq_nu) == 0:
        return float(out)
    return out


class KernelRow:
    """H(p_n, p_j, lam) for one fixed outer point and a row of inner points.

    The inner Bessel values z' J1(z'), z' Y1(z') are computed once for all
    inner nodes and rates; each outer row is then a linear combination,
    patched on the near-diagonal and small-z branches.
    """

    def __init__(self, nodes: np.ndarray, rates: np.ndarray):
        self.nodes = np.asarray(nodes, float)
        self.rates = np.asarray(rates, float)
        zp = 2.0 * np.sqrt(np.outer(self.rates, self.nodes))
        self.zp = zp
        self.zj, self.zy = _scaled_parts(zp)
        self.jz, self.yz = _j1_y1(np.where(zp > 0, zp, 1.0))

    def row(self, n: int) -> np.ndarray:
        """Array (rates, n + 1) of H(p_n, p_j, rate) for j = 0..n."""
        p = self.nodes[n]
        pp = self.nodes[: n + 1]
        out = np.empty((len(self.rates), n + 1))
        if p <= 0:
            out[:] = 0.0
            return out
        z = self.zp[:, n]
        zp = self.zp[:, : n + 1]
        big = z >= SMALL_Z
        if big.any():
            zb = z[big][:, None]
            g = -self.jz[big, n][:, None] * self.zy[big, : n + 1] \
                + self.yz[big, n][:, None] * self.zj[big, : n + 1]
            delta = zp[big] - zb
            near = np.abs(delta) < DIAGONAL_FRACTION * np.minimum(zb, 1.0)
            if near.any():
                zfull = np.broadcast_to(zb, delta.shape)
                g[near] = _near_diagonal_G(zfull[near], delta[near])
            out[big] = (np.pi / zb) * g
        if (~big).any():
            lam = self.rates[~big][:, None]
            out[~big] = _small_z_H(p, np.broadcast_to(pp, (lam.shape[0], n + 1)), lam)
        out[:, n] = 0.0
        return out


@dataclass(frozen=True)
class KernelTable:
    sup_G: float
    sup_G_over_z: float
    z_max_scan: float
    grid_resolution: float


@functools.lru_cache(maxsize=4)
def build_kernel_table(z_max: float = 200.0, step: float = 0.01, interior: int = 200) -> KernelTable:
    """Scan |G(z, z')| and |G(z, z')/z| over 0 <= z' <= z <= z_max.

    z runs over a uniform grid of the given step; for each z the inner
    variable takes ``interior`` equispaced interior points plus both ends.
    For large z, |G| is bounded by (2/pi) times an envelope that decreases
    toward 2/pi, so the scanned range captures the global sup.  G/z is
    largest as z -> 0, where it tends to (1 - (z'/z)^2)/pi.
    """
    zs = np.arange(step, z_max + step / 2, step)
    frac = np.linspace(0.0, 1.0, interior + 2)
    sup_g = 0.0
    sup_gz = 1.0 / np.pi  # z -> 0 limit at z' = 0
    chunk = 2000
    jz_all, yz_all = _j1_y1(zs)
    for s in range(0, len(zs), chunk):
        z = zs[s:s + chunk][:, None]
        zp = z * frac[None, :]
        zj, zy = _scaled_parts(zp)
        g = -jz_all[s:s + chunk][:, None] * zy + yz_all[s:s + chunk][:, None] * zj
        delta = zp - z
        near = np.abs(delta) < DIAGONAL_FRACTION * np.minimum(z, 1.0)
        if near.any():
            zfull = np.broadcast_to(z, delta.shape)
            g[near] = _near_diagonal_G(zfull[near], delta[near])
        a = np.abs(g)
        sup_g = max(sup_g, float(a.max()))
        sup_gz = max(sup_gz, float((a / z).max()))
    return KernelTable(sup_G=sup_g, sup_G_over_z=sup_gz, z_max_scan=float(z_max),
                       grid_resolution=float(step))


def kernel_ode_residual(p: float, p_prime: float, ksq_nu: float, step: float | None = None) -> float:
    """Central-difference residual of p H_pp + 2 H_p + lam H in the outer variable,
    relative to max(|H|, lam).

    Without an explicit ``step`` the difference step is 3e-4 of the local
    oscillation length min(sqrt(p / lam), p), which balances rounding noise
    against truncation error over a wide range of arguments.
    """
    if not 0 < p_prime < p:
        raise KernelDomainError("the residual check needs 0 < p' < p")
    if step is None:
        step = 3e-4 * min(math.sqrt(p / ksq_nu), p) if ksq_nu > 0 else 3e-4 * p
    h = min(step, 0.5 * (p - p_prime))
    hm, h0, hp = (kernel_H(p + s, p_prime, ksq_nu) for s in (-h, 0.0, h))
    d2 = (hp - 2.0 * h0 + hm) / h**2
    d1 = (hp - hm) / (2.0 * h)
    res = p * d2 + 2.0 * d1 + ksq_nu * h0
    return abs(res) / max(abs(h0), ksq_nu)


def laplace_identity_error(ksq_nu: float, t: float, tail_tol: float = 1e-12) -> float:
    """|int_0^P J(p) e^{-p/t} dp - (1 - e^{-lam t}) / lam| with J(p) = two_j1_over_z(2 sqrt(lam p)).

    |J| <= 1, so the omitted tail is below t e^{-P/t}; P is chosen to make
    that bound smaller than ``tail_tol``.
    """
    from scipy import integrate

    if not (ksq_nu > 0 and t > 0):
        raise KernelDomainError("the Laplace identity needs ksq_nu > 0 and t > 0")
    P = t * max(math.log(t / tail_tol), 1.0)
    f = lambda p: two_j1_over_z(2.0 * math.sqrt(ksq_nu * p)) * math.exp(-p / t)  # noqa: E731
    val, _ = integrate.quad(f, 0.0, P, epsabs=1e-15, epsrel=1e-13, limit=400)
    return abs(val - (1.0 - math.exp(-ksq_nu * t)) / ksq_nu)
