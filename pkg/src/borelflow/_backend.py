"""Selection between the compiled convolution core and the numpy fallback.

Both paths compute the weighted lattice-and-node convolution

    out[b, k] = sum_i w[i] sum_{k'} F[b, k', i] G[b, k - k', i]

on a box of integer wavevectors, dropping products whose difference leaves
the box.  The compiled path runs a direct loop over valid wavevector pairs
for short node axes and, for long ones, a BLAS node sum followed by a
compiled fold onto output modes.  The fallback forms the node-summed outer
product with a numpy matrix multiply and folds it with ``np.bincount``.

Setting ``BOREL_FLOW_BACKEND=python`` before import forces the fallback.
"""
from __future__ import annotations

import functools
import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by whichever build is present
    if os.environ.get("BOREL_FLOW_BACKEND", "").lower() == "python":
        raise ImportError("compiled backend disabled by environment")
    from borelflow import _ckernels
except ImportError:
    _ckernels = None

BACKEND = "compiled" if _ckernels is not None else "python"

# node-axis length above which the compiled path switches to the BLAS node sum
GEMM_MIN_NODES = 8


def default_workers() -> int:
    env = os.environ.get("BOREL_FLOW_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


@functools.lru_cache(maxsize=32)
def pair_tables(half_widths: tuple[int, int, int]):
    """Index triples (source k', source k - k', target k) of a lattice box."""
    K0, K1, K2 = half_widths
    axes = [np.arange(-K, K + 1) for K in half_widths]
    n = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    S = np.array([2 * K0 + 1, 2 * K1 + 1, 2 * K2 + 1])
    half = np.array(half_widths)

    def flat(v):
        s = v + half
        return (s[..., 0] * S[1] + s[..., 1]) * S[2] + s[..., 2]

    diff = n[:, None, :] - n[None, :, :]  # target k minus source k'
    ok = np.all(np.abs(diff) <= half, axis=-1)
    tgt, src = np.nonzero(ok)
    other = flat(diff[tgt, src])
    return src.astype(np.intp), other.astype(np.intp), tgt.astype(np.intp)


def _conv_weighted_numpy(F, G, w, half_widths):
    src, other, tgt = pair_tables(half_widths)
    B, M, _ = F.shape
    out = np.empty((B, M), dtype=np.complex128)
    for b in range(B):
        W = (F[b] * w) @ G[b].T
        vals = W[src, other]
        out[b] = np.bincount(tgt, vals.real, M) + 1j * np.bincount(tgt, vals.imag, M)
    return out


def conv_weighted(F, G, w, half_widths, workers=None, backend=None):
    """Weighted batched lattice convolution; see module docstring.

    F, G: complex arrays of shape (B, M, n); w: real weights of length n.
    """
    F = np.ascontiguousarray(F, dtype=np.complex128)
    G = np.ascontiguousarray(G, dtype=np.complex128)
    w = np.ascontiguousarray(w, dtype=np.float64)
    use = backend or BACKEND
    if use == "compiled" and _ckernels is not None:
        K0, K1, K2 = half_widths
        if F.shape[2] >= GEMM_MIN_NODES:
            return _ckernels.conv_weighted_gemm(F, G, w, K0, K1, K2)
        nw = default_workers() if workers is None else workers
        re, im = _ckernels.conv_weighted(
            np.ascontiguousarray(F.real), np.ascontiguousarray(F.imag),
            np.ascontiguousarray(G.real), np.ascontiguousarray(G.imag),
            w, K0, K1, K2, nw,
        )
        return re + 1j * im
    return _conv_weighted_numpy(F, G, w, half_widths)
