# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: same contract as ``_pykernels`` using native 128-bit products."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t

cnp.import_array()

cdef extern from *:
    """
    typedef unsigned __int128 gme_u128;
    static inline uint64_t gme_barrett(gme_u128 x, uint64_t q, uint64_t mu, int k) {
        uint64_t t = (uint64_t)(x >> (k - 2));
        uint64_t qhat = (uint64_t)(((gme_u128)t * mu) >> (k + 3));
        uint64_t r = (uint64_t)x - qhat * q;
        return r >= q ? r - q : r;
    }
    static inline uint64_t gme_mulmod(uint64_t a, uint64_t b, uint64_t q, uint64_t mu, int k) {
        return gme_barrett((gme_u128)a * b, q, mu, k);
    }
    static inline uint64_t gme_red_hilo(uint64_t hi, uint64_t lo, uint64_t q, uint64_t mu, int k) {
        return gme_barrett(((gme_u128)hi << 64) | lo, q, mu, k);
    }
    """
    uint64_t gme_mulmod(uint64_t a, uint64_t b, uint64_t q, uint64_t mu, int k) nogil
    uint64_t gme_red_hilo(uint64_t hi, uint64_t lo, uint64_t q, uint64_t mu, int k) nogil


ctypedef uint64_t u64


def _u64(x):
    return np.ascontiguousarray(x, dtype=np.uint64)


def _mods(q, mu, k):
    return _u64(q).ravel(), _u64(mu).ravel(), _u64(k).ravel()


def reduce128(hi, lo, q, mu, k):
    hi, lo = np.broadcast_arrays(_u64(hi), _u64(lo))
    cdef const u64[:, ::1] H = _u64(hi)
    cdef const u64[:, ::1] Lo = _u64(lo)
    out = np.empty((H.shape[0], H.shape[1]), dtype=np.uint64)
    cdef u64[:, ::1] O = out
    cdef const u64[::1] Q, MU, K
    Q, MU, K = _mods(q, mu, k)
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(H.shape[0]):
            for j in range(H.shape[1]):
                O[i, j] = gme_red_hilo(H[i, j], Lo[i, j], Q[i], MU[i], <int>K[i])
    return out


def mul128(a, b):
    a, b = np.broadcast_arrays(_u64(a), _u64(b))
    a = _u64(a); b = _u64(b)
    flat_a = a.ravel(); flat_b = b.ravel()
    cdef const u64[::1] A = flat_a
    cdef const u64[::1] B = flat_b
    hi = np.empty_like(flat_a); lo = np.empty_like(flat_a)
    cdef u64[::1] HI = hi
    cdef u64[::1] LO = lo
    cdef Py_ssize_t i
    cdef unsigned long long ah, al, bh, bl, p00, p01, p10, p11, mid
    with nogil:
        for i in range(A.shape[0]):
            al = A[i] & 0xFFFFFFFFULL; ah = A[i] >> 32
            bl = B[i] & 0xFFFFFFFFULL; bh = B[i] >> 32
            p00 = al * bl; p01 = al * bh; p10 = ah * bl; p11 = ah * bh
            mid = (p00 >> 32) + (p01 & 0xFFFFFFFFULL) + (p10 & 0xFFFFFFFFULL)
            LO[i] = (p00 & 0xFFFFFFFFULL) | (mid << 32)
            HI[i] = p11 + (p01 >> 32) + (p10 >> 32) + (mid >> 32)
    return hi.reshape(a.shape), lo.reshape(a.shape)


def mod_mult(a, b, q, mu, k):
    a, b = np.broadcast_arrays(_u64(a), _u64(b))
    cdef const u64[:, ::1] A = _u64(a)
    cdef const u64[:, ::1] B = _u64(b)
    out = np.empty((A.shape[0], A.shape[1]), dtype=np.uint64)
    cdef u64[:, ::1] O = out
    cdef const u64[::1] Q, MU, K
    Q, MU, K = _mods(q, mu, k)
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(A.shape[0]):
            for j in range(A.shape[1]):
                O[i, j] = gme_mulmod(A[i, j], B[i, j], Q[i], MU[i], <int>K[i])
    return out


def mod_mult_scalar(a, s, q, mu, k):
    cdef const u64[:, ::1] A = _u64(a)
    cdef const u64[::1] S = _u64(s).ravel()
    out = np.empty((A.shape[0], A.shape[1]), dtype=np.uint64)
    cdef u64[:, ::1] O = out
    cdef const u64[::1] Q, MU, K
    Q, MU, K = _mods(q, mu, k)
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(A.shape[0]):
            for j in range(A.shape[1]):
                O[i, j] = gme_mulmod(A[i, j], S[i], Q[i], MU[i], <int>K[i])
    return out


def mod_add(a, b, q):
    a, b = np.broadcast_arrays(_u64(a), _u64(b))
    cdef const u64[:, ::1] A = _u64(a)
    cdef const u64[:, ::1] B = _u64(b)
    out = np.empty((A.shape[0], A.shape[1]), dtype=np.uint64)
    cdef u64[:, ::1] O = out
    cdef const u64[::1] Q = _u64(q).ravel()
    cdef Py_ssize_t i, j
    cdef u64 s
    with nogil:
        for i in range(A.shape[0]):
            for j in range(A.shape[1]):
                s = A[i, j] + B[i, j]
                O[i, j] = s - Q[i] if s >= Q[i] else s
    return out


def mod_sub(a, b, q):
    a, b = np.broadcast_arrays(_u64(a), _u64(b))
    cdef const u64[:, ::1] A = _u64(a)
    cdef const u64[:, ::1] B = _u64(b)
    out = np.empty((A.shape[0], A.shape[1]), dtype=np.uint64)
    cdef u64[:, ::1] O = out
    cdef const u64[::1] Q = _u64(q).ravel()
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(A.shape[0]):
            for j in range(A.shape[1]):
                O[i, j] = A[i, j] - B[i, j] if A[i, j] >= B[i, j] else A[i, j] + Q[i] - B[i, j]
    return out


def mod_neg(a, q):
    cdef const u64[:, ::1] A = _u64(a)
    out = np.empty((A.shape[0], A.shape[1]), dtype=np.uint64)
    cdef u64[:, ::1] O = out
    cdef const u64[::1] Q = _u64(q).ravel()
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(A.shape[0]):
            for j in range(A.shape[1]):
                O[i, j] = Q[i] - A[i, j] if A[i, j] else 0
    return out


def ntt_forward(a, psi_rev, q, mu, k):
    cdef u64[:, ::1] A = a
    cdef const u64[:, ::1] W = _u64(psi_rev)
    cdef const u64[::1] Q, MU, K
    Q, MU, K = _mods(q, mu, k)
    cdef Py_ssize_t r, n = A.shape[1], m, t, i, j, j1
    cdef u64 qq, mm, w, u, v, s
    cdef int kk
    with nogil:
        for r in range(A.shape[0]):
            qq = Q[r]; mm = MU[r]; kk = <int>K[r]
            t = n
            m = 1
            while m < n:
                t = t // 2
                for i in range(m):
                    j1 = 2 * i * t
                    w = W[r, m + i]
                    for j in range(j1, j1 + t):
                        u = A[r, j]
                        v = gme_mulmod(A[r, j + t], w, qq, mm, kk)
                        s = u + v
                        A[r, j] = s - qq if s >= qq else s
                        A[r, j + t] = u - v if u >= v else u + qq - v
                m = m * 2
    return a


def ntt_inverse(a, psi_inv_rev, n_inv, q, mu, k):
    cdef u64[:, ::1] A = a
    cdef const u64[:, ::1] W = _u64(psi_inv_rev)
    cdef const u64[::1] NI = _u64(n_inv).ravel()
    cdef const u64[::1] Q, MU, K
    Q, MU, K = _mods(q, mu, k)
    cdef Py_ssize_t r, n = A.shape[1], m, t, h, i, j, j1
    cdef u64 qq, mm, w, u, v, s
    cdef int kk
    with nogil:
        for r in range(A.shape[0]):
            qq = Q[r]; mm = MU[r]; kk = <int>K[r]
            t = 1
            m = n
            while m > 1:
                h = m // 2
                j1 = 0
                for i in range(h):
                    w = W[r, h + i]
                    for j in range(j1, j1 + t):
                        u = A[r, j]
                        v = A[r, j + t]
                        s = u + v
                        A[r, j] = s - qq if s >= qq else s
                        A[r, j + t] = gme_mulmod(u - v if u >= v else u + qq - v, w, qq, mm, kk)
                    j1 = j1 + 2 * t
                t = t * 2
                m = h
            for j in range(n):
                A[r, j] = gme_mulmod(A[r, j], NI[r], qq, mm, kk)
    return a


def lru_serve(item, kind, next_use, liveout, anchor, hop, long capacity):
    """Same contract as the fallback; the LRU is an intrusive doubly linked list over item ids."""
    cdef const cnp.int64_t[::1] IT = np.ascontiguousarray(item, dtype=np.int64)
    cdef const cnp.uint8_t[::1] KD = np.ascontiguousarray(kind, dtype=np.uint8)
    cdef const cnp.int64_t[::1] NX = np.ascontiguousarray(next_use, dtype=np.int64)
    cdef const cnp.uint8_t[::1] LO = np.ascontiguousarray(liveout, dtype=np.uint8)
    cdef const cnp.int64_t[::1] AN = np.ascontiguousarray(anchor, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] HP = np.ascontiguousarray(hop, dtype=np.int64)
    cdef Py_ssize_t n = IT.shape[0], m = LO.shape[0], i
    dram_a = np.zeros(n, dtype=np.uint8)
    hops_a = np.zeros(n, dtype=np.int64)
    cdef cnp.uint8_t[::1] DR = dram_a
    cdef cnp.int64_t[::1] HO = hops_a
    if capacity <= 0:
        dram_a[:] = 1
        return dram_a, hops_a
    prev_a = np.full(m + 1, -1, dtype=np.int64)
    next_a = np.full(m + 1, -1, dtype=np.int64)
    inl_a = np.zeros(m, dtype=np.uint8)
    dirty_a = np.zeros(m, dtype=np.uint8)
    lastw_a = np.full(m, -1, dtype=np.int64)
    home_a = np.zeros(m, dtype=np.int64)
    cdef cnp.int64_t[::1] PV = prev_a
    cdef cnp.int64_t[::1] NXL = next_a
    cdef cnp.uint8_t[::1] IN = inl_a
    cdef cnp.uint8_t[::1] DI = dirty_a
    cdef cnp.int64_t[::1] LW = lastw_a
    cdef cnp.int64_t[::1] HM = home_a
    # sentinel m: NXL[m] = LRU head (oldest), PV[m] = tail (newest)
    cdef cnp.int64_t S = m, x, y
    cdef long size = 0
    cdef int k
    NXL[S] = S
    PV[S] = S
    with nogil:
        for i in range(n):
            x = IT[i]
            k = KD[i]
            if k == 2:
                DR[i] = 1
                continue
            if IN[x]:
                # unlink
                NXL[PV[x]] = NXL[x]
                PV[NXL[x]] = PV[x]
                size -= 1
                if k == 0:
                    HO[i] = HP[HM[x], AN[i]]
                else:
                    DI[x] = 1
                    LW[x] = i
                    HM[x] = AN[i]
            else:
                IN[x] = 1
                if k == 0:
                    DR[i] = 1
                    DI[x] = 0
                    LW[x] = -1
                else:
                    DI[x] = 1
                    LW[x] = i
                HM[x] = AN[i]
            if NX[i] < 0:
                if DI[x] and LO[x]:
                    DR[LW[x]] = 1
                IN[x] = 0
                continue
            # append as newest
            PV[x] = PV[S]
            NXL[x] = S
            NXL[PV[S]] = x
            PV[S] = x
            size += 1
            while size > capacity:
                y = NXL[S]
                NXL[S] = NXL[y]
                PV[NXL[y]] = S
                size -= 1
                IN[y] = 0
                if DI[y]:
                    DR[LW[y]] = 1
        y = NXL[S]
        while y != S:
            if DI[y] and LO[y]:
                DR[LW[y]] = 1
            y = NXL[y]
    return dram_a, hops_a
