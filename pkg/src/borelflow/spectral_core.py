"""Fourier-mode lattices, spectral fields and the truncated flow nonlinearities.

Fields are stored densely over the box of wavevectors kappa0 * n with
|n_i| <= K.  Vector amplitudes carry a leading component axis.  All products
use a sharp Galerkin cutoff: convolution terms that land outside the box are
dropped, so every engine in the package advances the same finite ODE system.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from borelflow import _backend

PROBLEMS = ("boussinesq", "mhd")


class SpectralError(ValueError):
    """Invalid lattice data (mismatched lattices, non-solenoidal vectors...)."""


@dataclass(frozen=True)
class PhysicalParams:
    nu: float = 1.0
    mu_thermal: float = 1.0
    buoyancy_a: float = 0.0
    mu_mag: float = 1.0
    sigma: float = 1.0
    rho: float = 1.0
    dim: int = 2

    def __post_init__(self):
        for name in ("nu", "mu_thermal", "mu_mag", "sigma", "rho"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise SpectralError(f"{name} must be positive and finite, got {v}")
        if not (np.isfinite(self.buoyancy_a) and self.buoyancy_a >= 0):
            raise SpectralError(f"buoyancy_a must be nonnegative, got {self.buoyancy_a}")
        if self.dim not in (2, 3):
            raise SpectralError(f"dim must be 2 or 3, got {self.dim}")

    @property
    def magnetic_diffusivity(self) -> float:
        return 1.0 / (self.mu_mag * self.sigma)

    @property
    def m1(self) -> float:
        return max(self.nu, self.mu_thermal)

    @property
    def m2(self) -> float:
        return max(self.nu, self.magnetic_diffusivity)

    @property
    def m3(self) -> float:
        return max(1.0, 1.0 / (self.mu_mag * self.rho))


@dataclass(frozen=True)
class ModeLattice:
    base: float
    cutoff: int
    dim: int = 2

    def __post_init__(self):
        if not (self.base > 0 and np.isfinite(self.base)):
            raise SpectralError(f"lattice base must be positive, got {self.base}")
        if int(self.cutoff) != self.cutoff or self.cutoff < 1:
            raise SpectralError(f"lattice cutoff must be a positive integer, got {self.cutoff}")
        if self.dim not in (2, 3):
            raise SpectralError(f"lattice dim must be 2 or 3, got {self.dim}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (2 * self.cutoff + 1,) * self.dim

    @property
    def size(self) -> int:
        return (2 * self.cutoff + 1) ** self.dim

    @property
    def half_widths(self) -> tuple[int, int, int]:
        K = self.cutoff
        return (K, K, K) if self.dim == 3 else (K, K, 0)

    @functools.cached_property
    def integer_vectors(self) -> np.ndarray:
        """Integer wavevector labels, shape (dim, *shape)."""
        ax = np.arange(-self.cutoff, self.cutoff + 1)
        return np.stack(np.meshgrid(*([ax] * self.dim), indexing="ij"))

    @functools.cached_property
    def k(self) -> np.ndarray:
        """Physical wavevectors kappa0 * n, shape (dim, *shape)."""
        return self.base * self.integer_vectors.astype(float)

    @functools.cached_property
    def ksq(self) -> np.ndarray:
        return np.sum(self.k**2, axis=0)

    @functools.cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @property
    def zero_index(self) -> tuple[int, ...]:
        return (self.cutoff,) * self.dim

    def index(self, n: Sequence[int]) -> tuple[int, ...]:
        n = tuple(int(v) for v in n)
        if len(n) != self.dim or any(abs(v) > self.cutoff for v in n):
            raise SpectralError(f"wavevector {n} is outside the lattice")
        return tuple(v + self.cutoff for v in n)

    def max_kabs(self) -> float:
        return float(self.kabs.max())


def reflect(amplitudes: np.ndarray, dim: int) -> np.ndarray:
    """Return conj(a(-k)) for a dense amplitude array (spatial axes last)."""
    sl = (Ellipsis,) + (slice(None, None, -1),) * dim
    return np.conj(amplitudes[sl])


@dataclass(frozen=True)
class SpectralField:
    lattice: ModeLattice
    kind: str
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.kind not in ("vector", "scalar"):
            raise SpectralError(f"field kind must be 'vector' or 'scalar', got {self.kind!r}")
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        want = self.expected_shape(self.lattice, self.kind)
        if a.shape != want:
            raise SpectralError(f"amplitude array has shape {a.shape}, expected {want}")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "amplitudes", a)

    @staticmethod
    def expected_shape(lattice: ModeLattice, kind: str) -> tuple[int, ...]:
        if kind == "vector":
            return (lattice.dim,) + lattice.shape
        return lattice.shape

    @classmethod
    def zeros(cls, lattice: ModeLattice, kind: str) -> "SpectralField":
        return cls(lattice, kind, np.zeros(cls.expected_shape(lattice, kind), complex))

    @classmethod
    def from_modes(cls, lattice: ModeLattice, kind: str,
                   modes: Iterable[tuple[Sequence[int], object]],
                   complete_conjugates: bool = True) -> "SpectralField":
        """Build a field from (integer wavevector, amplitude) pairs.

        With ``complete_conjugates`` the amplitude at -n is synthesized as
        the conjugate of the one given at n unless -n is listed explicitly.
        """
        a = np.zeros(cls.expected_shape(lattice, kind), complex)
        given = set()
        for n, amp in modes:
            idx = lattice.index(n)
            amp = np.asarray(amp, dtype=complex)
            if kind == "vector":
                if amp.shape != (lattice.dim,):
                    raise SpectralError(f"vector amplitude at {tuple(n)} must have {lattice.dim} components")
                a[(slice(None),) + idx] = amp
            else:
                if amp.shape != ():
                    raise SpectralError(f"scalar amplitude at {tuple(n)} must be a single number")
                a[idx] = amp
            given.add(tuple(int(v) for v in n))
        if complete_conjugates:
            for n in list(given):
                m = tuple(-v for v in n)
                if m in given:
                    continue
                idx = lattice.index(m)
                src = lattice.index(n)
                if kind == "vector":
                    a[(slice(None),) + idx] = np.conj(a[(slice(None),) + src])
                else:
                    a[idx] = np.conj(a[src])
        return cls(lattice, kind, a)

    def with_amplitudes(self, amplitudes: np.ndarray) -> "SpectralField":
        return SpectralField(self.lattice, self.kind, amplitudes)

    def scaled(self, alpha: complex) -> "SpectralField":
        return self.with_amplitudes(alpha * self.amplitudes)

    def conjugate_defect(self) -> float:
        a = self.amplitudes
        return float(np.max(np.abs(a - reflect(a, self.lattice.dim)), initial=0.0))

    def is_conjugate_symmetric(self, tol: float = 1e-14) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.amplitudes), initial=0.0)))
        return self.conjugate_defect() <= tol * scale

    def divergence_defect(self) -> float:
        """max_k |k . a(k)| / max(|a(k)|, tiny), zero for scalar fields."""
        if self.kind != "vector":
            return 0.0
        kdot = np.abs(np.sum(self.lattice.k * self.amplitudes, axis=0))
        mag = np.sqrt(np.sum(np.abs(self.amplitudes) ** 2, axis=0))
        kab = self.lattice.kabs
        ratio = np.where(mag > 0, kdot / np.maximum(mag * np.maximum(kab, 1.0), 1e-300), 0.0)
        zero = self.lattice.zero_index
        zmag = float(mag[zero])
        return float(max(ratio.max(initial=0.0), zmag))

    def is_divergence_free(self, tol: float = 1e-12) -> bool:
        return self.divergence_defect() <= tol


@dataclass(frozen=True)
class FlowState:
    problem: str
    primary: SpectralField
    companion: SpectralField

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise SpectralError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.primary.lattice != self.companion.lattice:
            raise SpectralError("primary and companion fields live on different lattices")
        if self.primary.kind != "vector":
            raise SpectralError("primary field must be a vector field")
        want = "scalar" if self.problem == "boussinesq" else "vector"
        if self.companion.kind != want:
            raise SpectralError(f"{self.problem} companion field must be {want}")

    @property
    def lattice(self) -> ModeLattice:
        return self.primary.lattice

    def stack(self) -> np.ndarray:
        """Component stack of shape (C, *lattice.shape)."""
        c = self.companion.amplitudes
        if self.companion.kind == "scalar":
            c = c[None]
        return np.concatenate([self.primary.amplitudes, c], axis=0)

    @classmethod
    def from_stack(cls, problem: str, lattice: ModeLattice, arr: np.ndarray) -> "FlowState":
        d = lattice.dim
        arr = np.asarray(arr)
        prim = SpectralField(lattice, "vector", arr[:d])
        if problem == "boussinesq":
            comp = SpectralField(lattice, "scalar", arr[d])
        else:
            comp = SpectralField(lattice, "vector", arr[d:2 * d])
        return cls(problem, prim, comp)

    @classmethod
    def zeros(cls, problem: str, lattice: ModeLattice) -> "FlowState":
        kind = "scalar" if problem == "boussinesq" else "vector"
        return cls(problem, SpectralField.zeros(lattice, "vector"), SpectralField.zeros(lattice, kind))


def hodge_project(k, v) -> np.ndarray:
    """P_k v = v - k (k.v)/|k|^2 for a single nonzero wavevector."""
    k = np.asarray(k, dtype=float)
    v = np.asarray(v)
    kk = float(k @ k)
    if kk == 0.0:
        raise SpectralError("the Hodge projection is undefined at the zero wavevector")
    return v - k * (k @ v) / kk


def project_field(lattice: ModeLattice, vec: np.ndarray) -> np.ndarray:
    """Apply P_k at every mode of a (dim, *shape, ...) array; zero mode -> 0.

    Extra trailing axes (for example a node axis) are carried along.
    """
    k = lattice.k
    ksq = lattice.ksq
    extra = vec.ndim - 1 - lattice.dim
    kx = k.reshape(k.shape + (1,) * extra)
    safe = np.where(ksq > 0, ksq, 1.0).reshape(ksq.shape + (1,) * extra)
    kv = np.sum(kx * vec, axis=0)
    out = vec - kx * (kv / safe)[None]
    out[(slice(None),) + lattice.zero_index] = 0.0
    return out


def convolve(f: SpectralField, g: SpectralField) -> SpectralField:
    """Truncated lattice convolution, componentwise for vector fields.

    For two vector fields the result is the component-by-component product
    f_i * g_i; mixing scalar and vector fields scales every component.
    """
    if f.lattice != g.lattice:
        raise SpectralError("cannot convolve fields on different lattices")
    lat = f.lattice
    M = lat.size
    fa = f.amplitudes.reshape(-1, M) if f.kind == "vector" else f.amplitudes.reshape(1, M)
    ga = g.amplitudes.reshape(-1, M) if g.kind == "vector" else g.amplitudes.reshape(1, M)
    if fa.shape[0] != ga.shape[0]:
        if fa.shape[0] == 1:
            fa = np.repeat(fa, ga.shape[0], axis=0)
        elif ga.shape[0] == 1:
            ga = np.repeat(ga, fa.shape[0], axis=0)
        else:
            raise SpectralError("vector fields of different dimension")
    out = _backend.conv_weighted(fa[..., None], ga[..., None], np.ones(1), lat.half_widths)
    kind = "vector" if (f.kind == "vector" or g.kind == "vector") else "scalar"
    shape = SpectralField.expected_shape(lat, kind)
    return SpectralField(lat, kind, out.reshape(shape))


class FlowSystem:
    """The truncated mode ODE  U' = -Lambda U + A U + Phi(U, U) + f.

    ``Lambda`` holds the diffusive rates, ``A`` the buoyancy coupling
    a P_k[e_2 Theta] (Boussinesq only) and ``Phi`` the symmetric-in-form
    bilinear transport term.  Arrays are component stacks of shape
    (C, M) with M the flattened lattice size; C = d + 1 for Boussinesq and
    2 d for MHD.
    """

    def __init__(self, problem: str, lattice: ModeLattice, params: PhysicalParams,
                 workers: int | None = None):
        if problem not in PROBLEMS:
            raise SpectralError(f"problem must be one of {PROBLEMS}, got {problem!r}")
        if params.dim != lattice.dim:
            raise SpectralError("parameter dimension does not match the lattice")
        self.problem = problem
        self.lattice = lattice
        self.params = params
        self.workers = workers
        d = lattice.dim
        self.dim = d
        self.ncomp = d + 1 if problem == "boussinesq" else 2 * d
        M = lattice.size
        self.kflat = lattice.k.reshape(d, M)
        self.ksq = lattice.ksq.reshape(M)
        if problem == "boussinesq":
            diff = [params.nu] * d + [params.mu_thermal]
            self.pairs = [(a, b) for a in range(d) for b in range(self.ncomp)]
        else:
            diff = [params.nu] * d + [params.magnetic_diffusivity] * d
            self.pairs = [(a, b) for a in range(self.ncomp) for b in range(self.ncomp)]
        self.diffusivity = np.array(diff)
        self.decay = self.diffusivity[:, None] * self.ksq[None, :]
        self._pair_a = np.array([p[0] for p in self.pairs])
        self._pair_b = np.array([p[1] for p in self.pairs])
        self._zero = int(np.ravel_multi_index(lattice.zero_index, lattice.shape))

    # --- helpers -----------------------------------------------------------
    def flat(self, state: FlowState) -> np.ndarray:
        if state.problem != self.problem:
            raise SpectralError(f"expected a {self.problem} state, got {state.problem}")
        if state.lattice != self.lattice:
            raise SpectralError("state lattice does not match the system lattice")
        return state.stack().reshape(self.ncomp, -1)

    def unflat(self, arr: np.ndarray) -> FlowState:
        return FlowState.from_stack(self.problem, self.lattice,
                                    arr.reshape((self.ncomp,) + self.lattice.shape))

    def forcing_flat(self, forcing: SpectralField | None) -> np.ndarray:
        out = np.zeros((self.ncomp, self.lattice.size), complex)
        if forcing is None:
            return out
        if forcing.lattice != self.lattice or forcing.kind != "vector":
            raise SpectralError("forcing must be a vector field on the system lattice")
        out[: self.dim] = forcing.amplitudes.reshape(self.dim, -1)
        return out

    def project(self, vec: np.ndarray) -> np.ndarray:
        """P_k on a (d, M, ...) block; the zero mode is mapped to zero."""
        k = self.kflat
        extra = vec.ndim - 2
        kx = k.reshape(k.shape + (1,) * extra)
        safe = np.where(self.ksq > 0, self.ksq, 1.0).reshape((-1,) + (1,) * extra)
        kv = np.sum(kx * vec, axis=0)
        out = vec - kx * (kv / safe)[None]
        out[:, self._zero] = 0.0
        return out

    def vector_blocks(self) -> list[slice]:
        d = self.dim
        if self.problem == "boussinesq":
            return [slice(0, d)]
        return [slice(0, d), slice(d, 2 * d)]

    # --- linear parts ------------------------------------------------------
    def coupling(self, X: np.ndarray) -> np.ndarray:
        """Buoyancy term a P_k[e_2 Theta] placed in the velocity components.

        X may carry trailing axes after the mode axis.
        """
        out = np.zeros_like(X)
        a = self.params.buoyancy_a
        if self.problem == "boussinesq" and a != 0.0:
            d = self.dim
            e2 = np.zeros((d,) + X.shape[1:], X.dtype)
            e2[1] = X[d]
            out[:d] = a * self.project(e2)
        return out

    def linear(self, X: np.ndarray) -> np.ndarray:
        return -self.decay.reshape(self.decay.shape + (1,) * (X.ndim - 2)) * X + self.coupling(X)

    # --- bilinear transport -----------------------------------------------
    def assemble(self, conv: np.ndarray) -> np.ndarray:
        """Map pairwise products conv[pair, M] onto the transport term Phi."""
        d = self.dim
        C = self.ncomp
        M = conv.shape[1]
        prod = {p: conv[i] for i, p in enumerate(self.pairs)}
        k = self.kflat
        out = np.zeros((C, M), complex)
        if self.problem == "boussinesq":
            vel = np.zeros((d, M), complex)
            for i in range(d):
                vel[i] = sum(k[j] * prod[(j, i)] for j in range(d))
            out[:d] = -1j * self.project(vel)
            out[d] = -1j * sum(k[j] * prod[(j, d)] for j in range(d))
        else:
            coef = 1.0 / (self.params.mu_mag * self.params.rho)
            vel = np.zeros((d, M), complex)
            mag = np.zeros((d, M), complex)
            for i in range(d):
                vel[i] = sum(k[j] * (prod[(j, i)] - coef * prod[(d + j, d + i)]) for j in range(d))
                mag[i] = sum(k[j] * (prod[(j, d + i)] - prod[(d + j, i)]) for j in range(d))
            out[:d] = -1j * self.project(vel)
            out[d:] = -1j * self.project(mag)
        return out

    def pair_products(self, Xs: np.ndarray, Ys: np.ndarray, w: np.ndarray) -> np.ndarray:
        """sum_i w_i X_a[i] * Y_b[i] for every needed pair (a, b).

        Xs, Ys: arrays of shape (n, C, M).  Returns shape (npairs, M).
        """
        F = np.transpose(Xs[:, self._pair_a, :], (1, 2, 0))
        G = np.transpose(Ys[:, self._pair_b, :], (1, 2, 0))
        return _backend.conv_weighted(F, G, w, self.lattice.half_widths, workers=self.workers)

    def weighted_bilinear(self, Xs: np.ndarray, Ys: np.ndarray, w) -> np.ndarray:
        """sum_i w_i Phi(X_i, Y_i) for stacks of shape (n, C, M)."""
        w = np.asarray(w, dtype=float)
        if len(w) == 0:
            return np.zeros((self.ncomp, self.lattice.size), complex)
        return self.assemble(self.pair_products(Xs, Ys, w))

    def bilinear(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        return self.weighted_bilinear(X[None], Y[None], np.ones(1))

    def rhs(self, U: np.ndarray, force: np.ndarray) -> np.ndarray:
        return self.linear(U) + self.bilinear(U, U) + force


def _check_solenoidal(state: FlowState, forcing: SpectralField | None, tol: float = 1e-10):
    fields = [("primary", state.primary)]
    if state.companion.kind == "vector":
        fields.append(("companion", state.companion))
    if forcing is not None:
        fields.append(("forcing", forcing))
    for name, f in fields:
        if not f.is_divergence_free(tol):
            raise SpectralError(
                f"{name} field is not divergence-free (defect {f.divergence_defect():.3e})"
            )


def first_coefficients(system: FlowSystem, state: FlowState,
                       forcing: SpectralField | None = None) -> FlowState:
    """Right side of the truncated system at the initial data."""
    _check_solenoidal(state, forcing)
    U0 = system.flat(state)
    return system.unflat(system.rhs(U0, system.forcing_flat(forcing)))


def first_coeff_boussinesq(state: FlowState, forcing: SpectralField | None,
                           params: PhysicalParams) -> tuple[SpectralField, SpectralField]:
    """(u1, Theta1) = -nu|k|^2 u0 - i k_j P[u0_j * u0] + a P[e2 Theta0] + f, and
    -mu|k|^2 Theta0 - i k_j (u0_j * Theta0)."""
    if state.problem != "boussinesq":
        raise SpectralError("first_coeff_boussinesq needs a boussinesq state")
    system = FlowSystem("boussinesq", state.lattice, params)
    out = first_coefficients(system, state, forcing)
    return out.primary, out.companion


def first_coeff_mhd(state: FlowState, forcing: SpectralField | None,
                    params: PhysicalParams) -> tuple[SpectralField, SpectralField]:
    """(v1, B1) for the magnetic Benard system."""
    if state.problem != "mhd":
        raise SpectralError("first_coeff_mhd needs an mhd state")
    system = FlowSystem("mhd", state.lattice, params)
    out = first_coefficients(system, state, forcing)
    return out.primary, out.companion
