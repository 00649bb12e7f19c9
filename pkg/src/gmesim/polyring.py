"""RNS polynomials in Z_Q[x]/(x^N + 1): NTT, pointwise ops, automorphisms, basis conversion.

Every operation takes an optional ``stats`` (:class:`OpStats`) that receives
exact instruction and byte counts. The counting helpers ``cost_*`` are the
single source of those numbers so analytic block profiles and instrumented
runs agree by construction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from functools import lru_cache
from math import prod

import numpy as np

from . import _kernels as K
from .modarith import Modulus

GALOIS_GEN = 5
WORD_BYTES = 8


class Rep(enum.Enum):
    COEFF = "coeff"
    EVAL = "eval"


class RingError(ValueError):
    pass


@dataclass
class OpStats:
    mod_add: int = 0
    mod_mult: int = 0
    mod_red: int = 0
    add: int = 0
    mult: int = 0
    ntt: int = 0
    intt: int = 0
    bytes_read: int = 0
    bytes_written: int = 0

    def __iadd__(self, other: "OpStats") -> "OpStats":
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))
        return self

    def __add__(self, other: "OpStats") -> "OpStats":
        out = OpStats(**self.as_dict())
        out += other
        return out

    def scaled(self, k: int) -> "OpStats":
        return OpStats(**{name: v * k for name, v in self.as_dict().items()})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _rec(stats, cost):
    if stats is not None:
        stats += cost


# -- cost model -------------------------------------------------------------

def _lb(limbs, N):
    return limbs * N * WORD_BYTES


def cost_elementwise(op: str, limbs: int, N: int, n_in: int = 2) -> OpStats:
    key = {"add": "mod_add", "sub": "mod_add", "neg": "mod_add", "mult": "mod_mult"}[op]
    return OpStats(**{key: limbs * N}, bytes_read=n_in * _lb(limbs, N), bytes_written=_lb(limbs, N))


def cost_scalar(op: str, limbs: int, N: int) -> OpStats:
    # scalar operand sits in a register: one polynomial read
    key = {"add": "mod_add", "mult": "mod_mult"}[op]
    return OpStats(**{key: limbs * N}, bytes_read=_lb(limbs, N), bytes_written=_lb(limbs, N))


def cost_ntt(limbs: int, N: int) -> OpStats:
    logn = N.bit_length() - 1
    return OpStats(mod_mult=limbs * (N // 2) * logn, mod_add=limbs * N * logn, ntt=limbs,
                   bytes_read=_lb(limbs, N), bytes_written=_lb(limbs, N))


def cost_intt(limbs: int, N: int) -> OpStats:
    logn = N.bit_length() - 1
    return OpStats(mod_mult=limbs * ((N // 2) * logn + N), mod_add=limbs * N * logn, intt=limbs,
                   bytes_read=_lb(limbs, N), bytes_written=_lb(limbs, N))


def cost_base_convert(src: int, dst: int, N: int) -> OpStats:
    return OpStats(mod_mult=src * N + src * dst * N, mod_red=src * dst * N,
                   mod_add=(src - 1) * dst * N,
                   bytes_read=_lb(src, N), bytes_written=_lb(dst, N))


def cost_automorph(limbs: int, N: int, rep: Rep) -> OpStats:
    # EVAL: pure permutation; COEFF: conditional negation on every residue
    return OpStats(mod_add=limbs * N if rep is Rep.COEFF else 0,
                   bytes_read=_lb(limbs, N), bytes_written=_lb(limbs, N))


def cost_centered_fix(src: int, dst: int, N: int) -> OpStats:
    # float quotient estimate per coefficient, then y_j -= v*Q mod t_j
    return OpStats(mult=src * N, add=(src - 1) * N, mod_mult=dst * N, mod_add=dst * N,
                   bytes_read=_lb(dst, N), bytes_written=_lb(dst, N))


def cost_mod_down(keep: int, drop: int, N: int, eval_rep: bool = True) -> OpStats:
    c = OpStats()
    if eval_rep:
        c += cost_intt(drop, N)
    c += cost_base_convert(drop, keep, N)
    if drop > 1:
        c += cost_centered_fix(drop, keep, N)
    if eval_rep:
        c += cost_ntt(keep, N)
    c += cost_elementwise("sub", keep, N)
    c += cost_scalar("mult", keep, N)
    return c


# -- data type --------------------------------------------------------------

@dataclass
class RnsPoly:
    limbs: np.ndarray
    basis: tuple[int, ...]
    rep: Rep

    def __post_init__(self):
        self.basis = tuple(int(q) for q in self.basis)
        if self.limbs.ndim != 2 or self.limbs.shape[0] != len(self.basis):
            raise RingError("limb matrix shape does not match basis")
        if self.limbs.dtype != np.uint64:
            raise RingError("limbs must be uint64")

    @property
    def N(self) -> int:
        return self.limbs.shape[1]

    @property
    def nlimbs(self) -> int:
        return len(self.basis)

    @property
    def nbytes(self) -> int:
        return _lb(self.nlimbs, self.N)

    def copy(self) -> "RnsPoly":
        return RnsPoly(self.limbs.copy(), self.basis, self.rep)

    def select(self, basis) -> "RnsPoly":
        """Sub-basis view (copy) in the requested order."""
        pos = {q: i for i, q in enumerate(self.basis)}
        try:
            idx = [pos[int(q)] for q in basis]
        except KeyError as e:
            raise RingError(f"modulus {e.args[0]} not in basis") from None
        return RnsPoly(np.ascontiguousarray(self.limbs[idx]), tuple(basis), self.rep)

    def check(self) -> None:
        q = np.array(self.basis, dtype=np.uint64)[:, None]
        if (self.limbs >= q).any():
            raise RingError("residue not reduced")

    def __eq__(self, other):
        return (isinstance(other, RnsPoly) and self.basis == other.basis and self.rep == other.rep
                and np.array_equal(self.limbs, other.limbs))


def zeros(basis, N: int, rep: Rep = Rep.EVAL) -> RnsPoly:
    return RnsPoly(np.zeros((len(basis), N), dtype=np.uint64), tuple(basis), rep)


def from_int_coeffs(coeffs, basis, rep_out: Rep = Rep.COEFF, stats=None) -> RnsPoly:
    """Residues of signed integer (or Python-int object) coefficients."""
    c = np.asarray(coeffs)
    rows = []
    for q in basis:
        if c.dtype == object:
            rows.append(np.array([int(v) % q for v in c], dtype=np.uint64))
        else:
            rows.append(np.mod(c.astype(np.int64), np.int64(q)).astype(np.uint64))
    p = RnsPoly(np.stack(rows), tuple(basis), Rep.COEFF)
    return ntt_forward(p, stats) if rep_out is Rep.EVAL else p


@lru_cache(maxsize=None)
def _crt_consts(basis):
    Q = prod(basis)
    return Q, [(Q // q) * pow(Q // q, -1, q) for q in basis]


def to_int_coeffs(p: RnsPoly, centered: bool = True) -> list[int]:
    """Exact CRT reconstruction of a COEFF polynomial as Python ints."""
    if p.rep is not Rep.COEFF:
        raise RingError("CRT reconstruction needs COEFF representation")
    Q, w = _crt_consts(p.basis)
    acc = np.zeros(p.N, dtype=object)
    for row, wi in zip(p.limbs, w):
        acc = acc + row.astype(object) * wi
    vals = [int(v) % Q for v in acc]
    if centered:
        half = Q // 2
        vals = [v - Q if v > half else v for v in vals]
    return vals


# -- tables -----------------------------------------------------------------

@lru_cache(maxsize=None)
def bitrev_perm(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    r = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        r |= ((idx >> b) & 1) << (bits - 1 - b)
    return r


def _powers(base: int, n: int, q: int) -> np.ndarray:
    out = np.empty(n, dtype=np.uint64)
    x = 1
    for i in range(n):
        out[i] = x
        x = x * base % q
    return out


@lru_cache(maxsize=None)
def ntt_table(q: int, N: int):
    """(psi_rev, psi_inv_rev, n_inv) for one prime; twiddles stored in bit-reversed order."""
    m = Modulus.make(q, N)
    psi = m.two_adic_root
    rev = bitrev_perm(N)
    psi_rev = _powers(psi, N, q)[rev]
    psi_inv_rev = _powers(pow(psi, -1, q), N, q)[rev]
    return psi_rev, psi_inv_rev, m.n_inv, psi


@lru_cache(maxsize=256)
def _basis_tables(basis, N):
    tabs = [ntt_table(q, N) for q in basis]
    psi = np.ascontiguousarray(np.stack([t[0] for t in tabs]))
    ipsi = np.ascontiguousarray(np.stack([t[1] for t in tabs]))
    ninv = np.array([t[2] for t in tabs], dtype=np.uint64)
    for a in (psi, ipsi, ninv):
        a.setflags(write=False)
    return psi, ipsi, ninv


@lru_cache(maxsize=256)
def modtab(basis):
    t = K.barrett_table(basis)
    for a in t:
        a.setflags(write=False)
    return t


def eval_exponents(N: int) -> np.ndarray:
    """Odd exponent e_k with output slot k of ntt_forward holding P(psi^e_k)."""
    return 2 * bitrev_perm(N) + 1


# -- transforms -------------------------------------------------------------

def ntt_forward(p: RnsPoly, stats: OpStats | None = None) -> RnsPoly:
    if p.rep is not Rep.COEFF:
        raise RingError("ntt_forward expects COEFF representation")
    psi, _, _ = _basis_tables(p.basis, p.N)
    a = np.ascontiguousarray(p.limbs, dtype=np.uint64).copy()
    q, mu, k = modtab(p.basis)
    K.ntt_forward(a, psi, q, mu, k)
    _rec(stats, cost_ntt(p.nlimbs, p.N))
    return RnsPoly(a, p.basis, Rep.EVAL)


def ntt_inverse(p: RnsPoly, stats: OpStats | None = None) -> RnsPoly:
    if p.rep is not Rep.EVAL:
        raise RingError("ntt_inverse expects EVAL representation")
    _, ipsi, ninv = _basis_tables(p.basis, p.N)
    a = np.ascontiguousarray(p.limbs, dtype=np.uint64).copy()
    q, mu, k = modtab(p.basis)
    K.ntt_inverse(a, ipsi, ninv, q, mu, k)
    _rec(stats, cost_intt(p.nlimbs, p.N))
    return RnsPoly(a, p.basis, Rep.COEFF)


# -- arithmetic -------------------------------------------------------------

def _same(a: RnsPoly, b: RnsPoly):
    if a.basis != b.basis:
        raise RingError("basis mismatch")
    if a.rep is not b.rep:
        raise RingError("representation mismatch")
    if a.N != b.N:
        raise RingError("degree mismatch")


def add(a: RnsPoly, b: RnsPoly, stats=None) -> RnsPoly:
    _same(a, b)
    _rec(stats, cost_elementwise("add", a.nlimbs, a.N))
    return RnsPoly(K.mod_add(a.limbs, b.limbs, modtab(a.basis)[0]), a.basis, a.rep)


def sub(a: RnsPoly, b: RnsPoly, stats=None) -> RnsPoly:
    _same(a, b)
    _rec(stats, cost_elementwise("sub", a.nlimbs, a.N))
    return RnsPoly(K.mod_sub(a.limbs, b.limbs, modtab(a.basis)[0]), a.basis, a.rep)


def negate(a: RnsPoly, stats=None) -> RnsPoly:
    _rec(stats, cost_elementwise("neg", a.nlimbs, a.N, n_in=1))
    return RnsPoly(K.mod_neg(a.limbs, modtab(a.basis)[0]), a.basis, a.rep)


def pointwise_mult(a: RnsPoly, b: RnsPoly, stats=None) -> RnsPoly:
    _same(a, b)
    if a.rep is not Rep.EVAL:
        raise RingError("pointwise_mult requires EVAL representation")
    _rec(stats, cost_elementwise("mult", a.nlimbs, a.N))
    return RnsPoly(K.mod_mult(a.limbs, b.limbs, *modtab(a.basis)), a.basis, a.rep)


def scalar_mult(a: RnsPoly, c: int, stats=None) -> RnsPoly:
    """Multiply every limb by the integer c (reduced per limb)."""
    s = np.array([int(c) % q for q in a.basis], dtype=np.uint64)
    _rec(stats, cost_scalar("mult", a.nlimbs, a.N))
    return RnsPoly(K.mod_mult_scalar(a.limbs, s, *modtab(a.basis)), a.basis, a.rep)


def scalar_add(a: RnsPoly, c: int, stats=None) -> RnsPoly:
    """Add the integer c to every residue (the all-c vector of length N)."""
    s = np.array([int(c) % q for q in a.basis], dtype=np.uint64)[:, None]
    _rec(stats, cost_scalar("add", a.nlimbs, a.N))
    return RnsPoly(K.mod_add(a.limbs, np.broadcast_to(s, a.limbs.shape), modtab(a.basis)[0]),
                   a.basis, a.rep)


# -- automorphisms ----------------------------------------------------------

def galois_element(r: int, N: int) -> int:
    # 5 has order N/2 modulo 2N
    return pow(GALOIS_GEN, r % (N // 2), 2 * N)


@lru_cache(maxsize=512)
def _eval_perm(N: int, g: int) -> np.ndarray:
    e = eval_exponents(N)
    pos = np.empty(2 * N, dtype=np.int64)
    pos[e] = np.arange(N)
    return pos[(e * g) % (2 * N)]


@lru_cache(maxsize=512)
def _coeff_map(N: int, g: int):
    j = (np.arange(N) * g) % (2 * N)
    return j % N, j >= N


def automorph_galois(p: RnsPoly, g: int, stats=None) -> RnsPoly:
    """Apply x -> x^g for odd g."""
    N = p.N
    g %= 2 * N
    if g % 2 == 0:
        raise RingError("Galois element must be odd")
    _rec(stats, cost_automorph(p.nlimbs, N, p.rep))
    if p.rep is Rep.EVAL:
        return RnsPoly(np.ascontiguousarray(p.limbs[:, _eval_perm(N, g)]), p.basis, p.rep)
    dst, neg = _coeff_map(N, g)
    q = modtab(p.basis)[0][:, None]
    vals = np.where(neg[None, :] & (p.limbs != 0), q - p.limbs, p.limbs)
    out = np.empty_like(p.limbs)
    out[:, dst] = vals
    return RnsPoly(out, p.basis, p.rep)


def automorph(p: RnsPoly, r: int, stats=None) -> RnsPoly:
    """x -> x^(5^r mod 2N): a left rotation of the decoded slots by r."""
    return automorph_galois(p, galois_element(r, p.N), stats)


# -- basis conversion -------------------------------------------------------

@lru_cache(maxsize=512)
def _conv_consts(src, dst):
    Q = prod(src)
    qhat_inv = np.array([pow(Q // q, -1, q) for q in src], dtype=np.uint64)
    qhat_mod = np.array([[(Q // q) % t for q in src] for t in dst], dtype=np.uint64)
    return qhat_inv, qhat_mod


def base_convert(p: RnsPoly, target_basis, stats=None, centered: bool = False) -> RnsPoly:
    """Fast RNS basis extension of a COEFF polynomial.

    Plain mode returns sum_i [x_i * (Q/q_i)^-1]_{q_i} * (Q/q_i) mod t_j, which
    equals x + u*Q for some 0 <= u < len(source basis). With ``centered`` the
    overflow u is estimated in floating point and removed, so the result
    represents the centred residue of x in [-Q/2, Q/2).
    """
    if p.rep is not Rep.COEFF:
        raise RingError("base_convert operates on COEFF representation")
    target = tuple(int(t) for t in target_basis)
    if set(target) & set(p.basis) or len(set(target)) != len(target):
        raise RingError("target basis overlaps source or repeats a modulus")
    qhat_inv, qhat_mod = _conv_consts(p.basis, target)
    y = K.mod_mult_scalar(p.limbs, qhat_inv, *modtab(p.basis))
    tq, tmu, tk = modtab(target)
    tcol = tq[:, None]
    acc = None
    for i in range(p.nlimbs):
        yi = np.remainder(y[i][None, :], tcol)
        term = K.mod_mult_scalar(yi, qhat_mod[:, i], tq, tmu, tk)
        acc = term if acc is None else K.mod_add(acc, term, tq)
    _rec(stats, cost_base_convert(p.nlimbs, len(target), p.N))
    if centered and p.nlimbs > 1:
        frac = (y.astype(np.float64) / np.array(p.basis, dtype=np.float64)[:, None]).sum(axis=0)
        v = np.floor(frac + 0.5).astype(np.uint64)
        Q = prod(p.basis)
        qmod = np.array([Q % t for t in target], dtype=np.uint64)
        acc = K.mod_sub(acc, K.mod_mult_scalar(np.remainder(v[None, :], tcol), qmod, tq, tmu, tk), tq)
        _rec(stats, cost_centered_fix(p.nlimbs, len(target), p.N))
    elif centered:
        # single limb: lift the residue to its centred representative
        x = p.limbs[0]
        q0 = p.basis[0]
        neg = x > np.uint64(q0 // 2)
        qmod = np.array([q0 % t for t in target], dtype=np.uint64)[:, None]
        acc = np.where(neg[None, :], K.mod_sub(acc, np.broadcast_to(qmod, acc.shape), tq), acc)
    return RnsPoly(acc, target, Rep.COEFF)


def mod_raise(p: RnsPoly, ext_basis, stats=None) -> RnsPoly:
    """Extend a COEFF polynomial to basis p.basis + ext_basis."""
    ext = base_convert(p, ext_basis, stats)
    return RnsPoly(np.concatenate([p.limbs, ext.limbs]), p.basis + ext.basis, Rep.COEFF)


def mod_down(p: RnsPoly, drop_basis, stats=None) -> RnsPoly:
    """round(x / P) for P = prod(drop_basis), removing those limbs.

    Works on COEFF input, or on EVAL input (only the dropped part is
    inverse-transformed and the correction is transformed back).
    """
    drop = tuple(int(t) for t in drop_basis)
    dset = set(drop)
    keep = tuple(q for q in p.basis if q not in dset)
    if len(keep) + len(drop) != p.nlimbs or not keep or not drop:
        raise RingError("drop basis must be a proper subset of the polynomial basis")
    ev = p.rep is Rep.EVAL
    pd = p.select(drop)
    pk = p.select(keep)
    if ev:
        pd = ntt_inverse(pd)
    # x - [x]_P (centred) is divisible by P, and the quotient is round(x/P)
    conv = base_convert(pd, keep, centered=True)
    if ev:
        conv = ntt_forward(conv)
    kq, kmu, kk = modtab(keep)
    diff = K.mod_sub(pk.limbs, conv.limbs, kq)
    P = prod(drop)
    pinv = np.array([pow(P % q, -1, q) for q in keep], dtype=np.uint64)
    out = K.mod_mult_scalar(diff, pinv, kq, kmu, kk)
    _rec(stats, cost_mod_down(len(keep), len(drop), p.N, eval_rep=ev))
    return RnsPoly(out, keep, p.rep)
