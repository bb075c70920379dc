# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled lattice convolution kernels.

Amplitudes live on a dense box of integer wavevectors with half-widths
(K0, K1, K2); a 2-D lattice uses K2 = 0.  Flat index of n = (n0, n1, n2) is
((n0 + K0) * S1 + (n1 + K1)) * S2 + (n2 + K2) with S_i = 2 K_i + 1.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from scipy.linalg.cython_blas cimport zgemm

cnp.import_array()


def conv_weighted(double[:, :, ::1] Fr, double[:, :, ::1] Fi,
                  double[:, :, ::1] Gr, double[:, :, ::1] Gi, double[::1] w,
                  int K0, int K1, int K2, int workers=1):
    """out[b, k] = sum_i w[i] sum_{k'} F[b, k', i] G[b, k - k', i].

    F and G are complex arrays of shape (B, M, n) passed as separate real and
    imaginary parts so the inner node sum runs over contiguous memory.
    Products whose difference wavevector leaves the box are dropped.
    Returns real and imaginary parts of the (B, M) result.
    """
    cdef Py_ssize_t B = Fr.shape[0]
    cdef Py_ssize_t M = Fr.shape[1]
    cdef Py_ssize_t n = Fr.shape[2]
    cdef int S0 = 2 * K0 + 1
    cdef int S1 = 2 * K1 + 1
    cdef int S2 = 2 * K2 + 1
    if M != S0 * S1 * S2:
        raise ValueError("mode axis does not match the lattice box")
    for arr in (Fi, Gr, Gi):
        if arr.shape[0] != B or arr.shape[1] != M or arr.shape[2] != n:
            raise ValueError("shape mismatch between F and G")
    if w.shape[0] != n:
        raise ValueError("weights do not match the node axis")

    wFr_arr = np.asarray(Fr) * np.asarray(w)
    wFi_arr = np.asarray(Fi) * np.asarray(w)
    cdef double[:, :, ::1] wFr = wFr_arr
    cdef double[:, :, ::1] wFi = wFi_arr

    outr_arr = np.zeros((B, M), dtype=np.float64)
    outi_arr = np.zeros((B, M), dtype=np.float64)
    cdef double[:, ::1] outr = outr_arr
    cdef double[:, ::1] outi = outi_arr
    cdef Py_ssize_t b, i, job, njobs = B * M
    cdef int a0, a1, a2, p0, p1, p2, lo0, hi0, lo1, hi1, lo2, hi2
    cdef Py_ssize_t kidx, pidx, qidx
    cdef double accr, acci
    cdef double *xr
    cdef double *xi
    cdef double *yr
    cdef double *yi
    cdef int nthreads = workers if workers > 0 else 1

    for job in prange(njobs, nogil=True, schedule="static", num_threads=nthreads):
        b = job // M
        kidx = job - b * M
        a0 = <int>(kidx // (S1 * S2)) - K0
        a1 = <int>((kidx // S2) % S1) - K1
        a2 = <int>(kidx % S2) - K2
        lo0 = a0 - K0 if a0 - K0 > -K0 else -K0
        hi0 = a0 + K0 if a0 + K0 < K0 else K0
        lo1 = a1 - K1 if a1 - K1 > -K1 else -K1
        hi1 = a1 + K1 if a1 + K1 < K1 else K1
        lo2 = a2 - K2 if a2 - K2 > -K2 else -K2
        hi2 = a2 + K2 if a2 + K2 < K2 else K2
        accr = 0.0
        acci = 0.0
        for p0 in range(lo0, hi0 + 1):
            for p1 in range(lo1, hi1 + 1):
                for p2 in range(lo2, hi2 + 1):
                    pidx = ((p0 + K0) * S1 + (p1 + K1)) * S2 + (p2 + K2)
                    qidx = ((a0 - p0 + K0) * S1 + (a1 - p1 + K1)) * S2 + (a2 - p2 + K2)
                    xr = &wFr[b, pidx, 0]
                    xi = &wFi[b, pidx, 0]
                    yr = &Gr[b, qidx, 0]
                    yi = &Gi[b, qidx, 0]
                    accr = accr + _dot_re(xr, xi, yr, yi, n)
                    acci = acci + _dot_im(xr, xi, yr, yi, n)
        outr[b, kidx] = accr
        outi[b, kidx] = acci
    return outr_arr, outi_arr


cdef inline double _dot_re(double *xr, double *xi, double *yr, double *yi,
                           Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s += xr[i] * yr[i] - xi[i] * yi[i]
    return s


cdef inline double _dot_im(double *xr, double *xi, double *yr, double *yi,
                           Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        s += xr[i] * yi[i] + xi[i] * yr[i]
    return s


def conv_weighted_gemm(double complex[:, :, ::1] F, double complex[:, :, ::1] G,
                       double[::1] w, int K0, int K1, int K2):
    """Same contraction as ``conv_weighted`` for long node axes.

    The node sum is done first as a dense product W = (F w) G^T of shape
    (M, M) through BLAS zgemm; valid (k', k - k') entries of W are then
    folded onto output modes by a direct loop.
    """
    cdef Py_ssize_t B = F.shape[0]
    cdef int M = <int>F.shape[1]
    cdef int n = <int>F.shape[2]
    cdef int S0 = 2 * K0 + 1
    cdef int S1 = 2 * K1 + 1
    cdef int S2 = 2 * K2 + 1
    if M != S0 * S1 * S2:
        raise ValueError("mode axis does not match the lattice box")
    if G.shape[0] != B or G.shape[1] != M or G.shape[2] != n or w.shape[0] != n:
        raise ValueError("shape mismatch between F, G and w")

    wF_arr = np.asarray(F) * np.asarray(w)
    cdef double complex[:, :, ::1] wF = wF_arr
    W_arr = np.empty((M, M), dtype=np.complex128)
    cdef double complex[:, ::1] W = W_arr
    out_arr = np.zeros((B, M), dtype=np.complex128)
    cdef double complex[:, ::1] out = out_arr
    cdef double complex alpha = 1.0
    cdef double complex beta = 0.0
    cdef char transa = b'T'
    cdef char transb = b'N'
    cdef Py_ssize_t b, kidx, pidx, qidx
    cdef int a0, a1, a2, p0, p1, p2, lo0, hi0, lo1, hi1, lo2, hi2
    cdef double complex acc

    for b in range(B):
        # column-major view: W^T = G_b^T-as-(n x M)^T times wF_b-as-(n x M)
        zgemm(&transa, &transb, &M, &M, &n, &alpha, &G[b, 0, 0], &n,
              &wF[b, 0, 0], &n, &beta, &W[0, 0], &M)
        with nogil:
            for kidx in range(M):
                a0 = <int>(kidx // (S1 * S2)) - K0
                a1 = <int>((kidx // S2) % S1) - K1
                a2 = <int>(kidx % S2) - K2
                lo0 = a0 - K0 if a0 - K0 > -K0 else -K0
                hi0 = a0 + K0 if a0 + K0 < K0 else K0
                lo1 = a1 - K1 if a1 - K1 > -K1 else -K1
                hi1 = a1 + K1 if a1 + K1 < K1 else K1
                lo2 = a2 - K2 if a2 - K2 > -K2 else -K2
                hi2 = a2 + K2 if a2 + K2 < K2 else K2
                acc = 0.0
                for p0 in range(lo0, hi0 + 1):
                    for p1 in range(lo1, hi1 + 1):
                        for p2 in range(lo2, hi2 + 1):
                            pidx = ((p0 + K0) * S1 + (p1 + K1)) * S2 + (p2 + K2)
                            qidx = ((a0 - p0 + K0) * S1 + (a1 - p1 + K1)) * S2 + (a2 - p2 + K2)
                            acc = acc + W[pidx, qidx]
                out[b, kidx] = acc
    return out_arr
