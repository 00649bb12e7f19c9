"""Vectorised numpy kernels; the fallback when the compiled core is absent.

All arrays are 2-D uint64 of shape (limbs, N) with one modulus per row.
Moduli come as a ``(q, mu, k)`` triple of 1-D arrays, see ``barrett_table``.
128-bit products are assembled from 32-bit halves so every step is exact.
"""

import numpy as np

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _col(v):
    return np.asarray(v, dtype=np.uint64).reshape(-1, 1)


def mul128(a, b):
    """Full 128-bit product of uint64 arrays as (hi, lo)."""
    a0, a1 = a & _M32, a >> _S32
    b0, b1 = b & _M32, b >> _S32
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _S32) + (p01 & _M32) + (p10 & _M32)
    lo = (p00 & _M32) | (mid << _S32)
    hi = p11 + (p01 >> _S32) + (p10 >> _S32) + (mid >> _S32)
    return hi, lo


def _shr128(hi, lo, s):
    # low 64 bits of (hi:lo) >> s for per-row shifts 1 <= s <= 127
    s = np.asarray(s, dtype=np.uint64)
    big = s >= 64
    s_small = np.where(big, np.uint64(1), s)
    s_big = np.where(big, s - np.uint64(64), np.uint64(0))
    small = (hi << (np.uint64(64) - s_small)) | (lo >> s_small)
    return np.where(big, hi >> s_big, small)


def reduce128(hi, lo, q, mu, k):
    """(hi:lo) mod q per row; requires the value < 2^(2k)."""
    q, mu, k = _col(q), _col(mu), _col(k)
    t = _shr128(hi, lo, k - np.uint64(2))
    thi, tlo = mul128(t, mu)
    qhat = _shr128(thi, tlo, k + np.uint64(3))
    r = lo - qhat * q
    return np.where(r >= q, r - q, r)


def mod_mult(a, b, q, mu, k):
    hi, lo = mul128(a, b)
    return reduce128(hi, lo, q, mu, k)


def mod_mult_scalar(a, s, q, mu, k):
    """Multiply row i of `a` by the reduced scalar s[i]."""
    return mod_mult(a, _col(s), q, mu, k)


def mod_add(a, b, q):
    q = _col(q)
    s = a + b
    return np.where(s >= q, s - q, s)


def mod_sub(a, b, q):
    q = _col(q)
    return np.where(a >= b, a - b, a + q - b)


def mod_neg(a, q):
    q = _col(q)
    return np.where(a == 0, a, q - a)


def ntt_forward(a, psi_rev, q, mu, k):
    """In-place merged negacyclic Cooley-Tukey transform of every row.

    psi_rev[i, j] holds psi_i^bitrev(j); output is in bit-reversed order.
    """
    rows, n = a.shape
    qc = _col(q)
    m, t = 1, n
    while m < n:
        t //= 2
        v = a.reshape(rows, m, 2, t)
        w = psi_rev[:, m:2 * m].reshape(rows, m, 1)
        u = v[:, :, 0, :].copy()
        x = mod_mult(v[:, :, 1, :].reshape(rows, -1),
                     np.broadcast_to(w, (rows, m, t)).reshape(rows, -1), q, mu, k).reshape(rows, m, t)
        s = u + x
        v[:, :, 0, :] = np.where(s >= qc[:, :, None], s - qc[:, :, None], s)
        v[:, :, 1, :] = np.where(u >= x, u - x, u + qc[:, :, None] - x)
        m *= 2
    return a


def ntt_inverse(a, psi_inv_rev, n_inv, q, mu, k):
    """In-place Gentleman-Sande inverse of ``ntt_forward`` including the 1/N scaling."""
    rows, n = a.shape
    qc = _col(q)[:, :, None]
    t, m = 1, n
    while m > 1:
        h = m // 2
        v = a.reshape(rows, h, 2, t)
        w = psi_inv_rev[:, h:m].reshape(rows, h, 1)
        u = v[:, :, 0, :].copy()
        x = v[:, :, 1, :].copy()
        s = u + x
        v[:, :, 0, :] = np.where(s >= qc, s - qc, s)
        d = np.where(u >= x, u - x, u + qc - x)
        v[:, :, 1, :] = mod_mult(d.reshape(rows, -1),
                                 np.broadcast_to(w, (rows, h, t)).reshape(rows, -1),
                                 q, mu, k).reshape(rows, h, t)
        t *= 2
        m = h
    a[...] = mod_mult_scalar(a, n_inv, q, mu, k)
    return a


# -- limb residency ---------------------------------------------------------

READ, WRITE, STREAM = 0, 1, 2


def lru_serve(item, kind, next_use, liveout, anchor, hop, capacity):
    """Replay a limb access trace through a liveness-aware LRU scratchpad.

    Returns (dram, hops): dram[i] = 1 when access i is served by DRAM (read
    misses, streamed reads, and writes whose data must be written back),
    hops[i] = router hops from the limb's home to the accessing block for
    on-chip read hits. Limbs with no further use are released at once.
    """
    from collections import OrderedDict

    item = np.asarray(item, dtype=np.int64)
    kind = np.asarray(kind, dtype=np.uint8)
    next_use = np.asarray(next_use, dtype=np.int64)
    liveout = np.asarray(liveout, dtype=np.uint8)
    anchor = np.asarray(anchor, dtype=np.int64)
    hop = np.asarray(hop, dtype=np.int64)
    n = item.shape[0]
    dram = np.zeros(n, dtype=np.uint8)
    hops = np.zeros(n, dtype=np.int64)
    if capacity <= 0:
        dram[:] = 1
        return dram, hops
    lru = OrderedDict()  # item -> [dirty, last_write, home]
    items, kinds, nxt, anc = item.tolist(), kind.tolist(), next_use.tolist(), anchor.tolist()
    lo = liveout.tolist()
    for i in range(n):
        x, k = items[i], kinds[i]
        if k == STREAM:
            dram[i] = 1
            continue
        ent = lru.get(x)
        if k == READ:
            if ent is None:
                dram[i] = 1
                ent = [0, -1, anc[i]]
                lru[x] = ent
            else:
                hops[i] = hop[ent[2], anc[i]]
                lru.move_to_end(x)
        else:
            if ent is None:
                ent = [1, i, anc[i]]
                lru[x] = ent
            else:
                ent[0], ent[1], ent[2] = 1, i, anc[i]
                lru.move_to_end(x)
        if nxt[i] < 0:
            if ent[0] and lo[x]:
                dram[ent[1]] = 1
            del lru[x]
            continue
        while len(lru) > capacity:
            y, ev = lru.popitem(last=False)
            if ev[0]:
                dram[ev[1]] = 1
    for x, ent in lru.items():
        if ent[0] and lo[x]:
            dram[ent[1]] = 1
    return dram, hops
