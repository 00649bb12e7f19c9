"""CKKS building blocks on RNS polynomials with exact instruction profiles.

Ciphertexts are pairs (b, a) in EVAL representation that decrypt as
b + a*s. Every block accepts an optional ``OpStats`` and returns its result;
``profile_*`` functions give the same counts analytically, without running.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import polyring as R
from .params import CkksParams
from .polyring import OpStats, Rep, RnsPoly

ERR_SIGMA = 3.2


class HeError(ValueError):
    pass


# -- types ------------------------------------------------------------------

@dataclass
class PlaintextPoly:
    poly: RnsPoly
    scale: float  # log2
    n: int

    @property
    def level(self) -> int:
        return self.poly.nlimbs - 1


@dataclass
class Ciphertext:
    b: RnsPoly
    a: RnsPoly
    scale: float  # log2 of the current scaling factor
    n: int

    def __post_init__(self):
        if self.b.basis != self.a.basis or self.b.rep is not self.a.rep:
            raise HeError("ciphertext components disagree on basis or representation")

    @property
    def level(self) -> int:
        return self.b.nlimbs - 1

    @property
    def basis(self):
        return self.b.basis

    @property
    def N(self) -> int:
        return self.b.N

    @property
    def nbytes(self) -> int:
        return self.b.nbytes + self.a.nbytes


@dataclass
class SecretKey:
    coeffs: np.ndarray  # int8 in {-1, 0, 1}
    _eval: dict = field(default_factory=dict, repr=False)

    def eval_poly(self, basis) -> RnsPoly:
        basis = tuple(basis)
        if basis not in self._eval:
            self._eval[basis] = R.from_int_coeffs(self.coeffs, basis, Rep.EVAL)
        return self._eval[basis]


@dataclass
class PublicKey:
    b: RnsPoly
    a: RnsPoly


@dataclass
class EvalKey:
    kind: str  # "mult", "rot", "conj"
    pairs: list  # dnum (b_j, a_j) over chain + ext_moduli, EVAL
    r: int = 0
    galois: int = 1

    @property
    def basis(self):
        return self.pairs[0][0].basis


@dataclass
class BlockProfile:
    kind: str
    level: int
    mod_add: int = 0
    mod_mult: int = 0
    mod_red: int = 0
    add: int = 0
    mult: int = 0
    ntt: int = 0
    intt: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    key_bytes: int = 0
    # total per-kernel traffic including intermediates (key reads included)
    op_bytes_read: int = 0
    op_bytes_written: int = 0

    @classmethod
    def from_stats(cls, kind, level, st: OpStats, bytes_in, bytes_out, key_bytes=0):
        return cls(kind, level, st.mod_add, st.mod_mult, st.mod_red, st.add, st.mult, st.ntt,
                   st.intt, bytes_in, bytes_out, key_bytes, st.bytes_read, st.bytes_written)

    def stats(self) -> OpStats:
        return OpStats(self.mod_add, self.mod_mult, self.mod_red, self.add, self.mult, self.ntt,
                       self.intt, self.op_bytes_read, self.op_bytes_written)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "BlockProfile":
        return cls(**d)


# -- context: parameters, keys, randomness -----------------------------------

class CkksContext:
    """Parameters plus key material; keys are generated lazily and cached."""

    def __init__(self, params: CkksParams, seed: int = 0):
        self.params = params
        self.N = params.N
        self.chain = params.chain
        self.ext = params.ext_moduli
        self.alpha = params.alpha
        self.rng = np.random.default_rng(seed)
        self.sk = SecretKey(self.rng.integers(-1, 2, self.N).astype(np.int8))
        self._pk = None
        self._keys: dict = {}

    # sampling
    def _ternary(self):
        return self.rng.integers(-1, 2, self.N).astype(np.int64)

    def _error(self):
        e = np.rint(self.rng.normal(0.0, ERR_SIGMA, self.N))
        return np.clip(e, -6 * ERR_SIGMA, 6 * ERR_SIGMA).astype(np.int64)

    def _uniform(self, basis) -> RnsPoly:
        rows = [self.rng.integers(0, q, self.N, dtype=np.uint64) for q in basis]
        return RnsPoly(np.stack(rows), tuple(basis), Rep.EVAL)

    def basis_at(self, level: int):
        if not 0 <= level <= self.params.L:
            raise HeError(f"level {level} outside [0, {self.params.L}]")
        return self.chain[: level + 1]

    @property
    def public_key(self) -> PublicKey:
        if self._pk is None:
            basis = self.chain
            a = self._uniform(basis)
            e = R.from_int_coeffs(self._error(), basis, Rep.EVAL)
            b = R.sub(e, R.pointwise_mult(a, self.sk.eval_poly(basis)))
            self._pk = PublicKey(b, a)
        return self._pk

    def _switch_key(self, s_new: RnsPoly, kind, r=0, galois=1) -> EvalKey:
        """Key taking s_new (over chain+ext, EVAL) to the secret s."""
        full = self.chain + self.ext
        s = self.sk.eval_poly(full)
        P = math.prod(self.ext)
        pairs = []
        L1 = len(self.chain)
        for j in range(self.params.dnum):
            lo, hi = j * self.alpha, min((j + 1) * self.alpha, L1)
            if lo >= L1:
                break
            a = self._uniform(full)
            e = R.from_int_coeffs(self._error(), full, Rep.EVAL)
            b = R.sub(e, R.pointwise_mult(a, s))
            # gadget P * Qhat_j * [Qhat_j^-1]_{Q_j} is P on digit j limbs, 0 elsewhere
            g = np.zeros(len(full), dtype=np.uint64)
            for i in range(lo, hi):
                g[i] = P % full[i]
            gs = R.RnsPoly(R.K.mod_mult_scalar(s_new.limbs, g, *R.modtab(full)), full, Rep.EVAL)
            pairs.append((R.add(b, gs), a))
        return EvalKey(kind, pairs, r, galois)

    def mult_key(self) -> EvalKey:
        if "mult" not in self._keys:
            s = self.sk.eval_poly(self.chain + self.ext)
            self._keys["mult"] = self._switch_key(R.pointwise_mult(s, s), "mult")
        return self._keys["mult"]

    def galois_key(self, g: int, kind="rot", r=0) -> EvalKey:
        key = ("gal", g % (2 * self.N))
        if key not in self._keys:
            full = self.chain + self.ext
            s_g = R.automorph_galois(self.sk.eval_poly(full), g)
            self._keys[key] = self._switch_key(s_g, kind, r, g)
        return self._keys[key]

    def rot_key(self, r: int) -> EvalKey:
        g = R.galois_element(r, self.N)
        return self.galois_key(g, "rot", r)

    def conj_key(self) -> EvalKey:
        return self.galois_key(2 * self.N - 1, "conj")


# -- canonical embedding ----------------------------------------------------

def _slot_index(N: int, n_half: int) -> np.ndarray:
    # position (5^s mod 2N - 1)/2 of slot s in the odd-root evaluation vector
    e = np.array([pow(5, s, 2 * N) for s in range(n_half)], dtype=np.int64)
    return (e - 1) // 2


def embed_inverse(z: np.ndarray, N: int) -> np.ndarray:
    """Real coefficients m_i with m(zeta^(5^s)) = z_s for the N/2 slots."""
    half = N // 2
    idx = _slot_index(N, half)
    W = np.zeros(N, dtype=np.complex128)
    W[idx] = z
    W[N - 1 - idx] = np.conj(z)  # conjugate root zeta^(-e) sits at (2N - e - 1)/2
    twist = np.exp(-1j * np.pi * np.arange(N) / N)
    return (twist * np.fft.fft(W)).real / N


def embed(m: np.ndarray, N: int) -> np.ndarray:
    """Evaluate real coefficients at the N/2 slot roots."""
    twist = np.exp(1j * np.pi * np.arange(N) / N)
    W = N * np.fft.ifft(np.asarray(m, dtype=np.float64) * twist)
    return W[_slot_index(N, N // 2)]


def encode(ctx: CkksContext, m, scale: float | None = None, level: int | None = None) -> PlaintextPoly:
    m = np.asarray(m, dtype=np.complex128).ravel()
    N = ctx.N
    n = m.size
    if not 1 <= n <= N // 2 or (N // 2) % n:
        raise HeError(f"slot count {n} must divide N/2 = {N // 2}")
    scale = float(ctx.params.delta_bits if scale is None else scale)
    level = ctx.params.L if level is None else level
    basis = ctx.basis_at(level)
    cap = sum(math.log2(q) for q in basis) - 1
    peak = float(np.abs(m).max()) if n else 0.0
    if peak > 0 and scale + math.log2(peak) + 1 >= cap:
        raise HeError("scale overflow: encoded values exceed the modulus")
    coeffs = embed_inverse(np.tile(m, (N // 2) // n), N)
    scaled = np.rint(coeffs * 2.0 ** scale)
    if scale + math.log2(peak + 1) + 1 < 62:
        ints = scaled.astype(np.int64)
    else:
        ints = np.array([int(v) for v in scaled], dtype=object)
    return PlaintextPoly(R.from_int_coeffs(ints, basis, Rep.EVAL), scale, n)


def decode(pt: PlaintextPoly) -> np.ndarray:
    p = pt.poly
    if p.rep is Rep.EVAL:
        p = R.ntt_inverse(p)
    vals = R.to_int_coeffs(p)
    coeffs = np.array([float(v) for v in vals]) / 2.0 ** pt.scale
    return embed(coeffs, p.N)[: pt.n]


# -- encryption -------------------------------------------------------------

def encrypt(ctx: CkksContext, pt: PlaintextPoly, key=None) -> Ciphertext:
    """Encrypt under the secret key (default) or a PublicKey."""
    basis = pt.poly.basis
    e0 = R.from_int_coeffs(ctx._error(), basis, Rep.EVAL)
    if key is None or isinstance(key, SecretKey):
        sk = ctx.sk if key is None else key
        a = ctx._uniform(basis)
        b = R.add(R.sub(e0, R.pointwise_mult(a, sk.eval_poly(basis))), pt.poly)
    elif isinstance(key, PublicKey):
        v = R.from_int_coeffs(ctx._ternary(), basis, Rep.EVAL)
        e1 = R.from_int_coeffs(ctx._error(), basis, Rep.EVAL)
        pb, pa = key.b.select(basis), key.a.select(basis)
        b = R.add(R.add(R.pointwise_mult(v, pb), e0), pt.poly)
        a = R.add(R.pointwise_mult(v, pa), e1)
    else:
        raise HeError("key must be a SecretKey or PublicKey")
    return Ciphertext(b, a, pt.scale, pt.n)


def decrypt(ctx: CkksContext, ct: Ciphertext, sk: SecretKey | None = None) -> PlaintextPoly:
    sk = ctx.sk if sk is None else sk
    m = R.add(ct.b, R.pointwise_mult(ct.a, sk.eval_poly(ct.basis)))
    return PlaintextPoly(m, ct.scale, ct.n)


def decrypt_decode(ctx, ct):
    return decode(decrypt(ctx, ct))


# -- helpers ----------------------------------------------------------------

def _cap(basis) -> float:
    return sum(math.log2(q) for q in basis) - 1


def _check_scale(scale: float, basis):
    if scale >= _cap(basis):
        raise HeError(f"scale overflow: 2^{scale:.1f} exceeds modulus capacity 2^{_cap(basis):.1f}")


def _same_level(c1: Ciphertext, c2):
    if c1.basis != c2.basis:
        raise HeError(f"level mismatch: {c1.level} vs {len(c2.basis) - 1}")


SCALE_TOL = 1e-4


# -- blocks -----------------------------------------------------------------

def scalar_add(ct: Ciphertext, c: float, stats=None) -> Ciphertext:
    v = int(round(c * 2.0 ** ct.scale))
    return Ciphertext(R.scalar_add(ct.b, v, stats), ct.a.copy(), ct.scale, ct.n)


def scalar_mult(ct: Ciphertext, c: float, stats=None, scale_bits: float | None = None) -> Ciphertext:
    """Multiply by round(c * 2^scale_bits); the scale grows by scale_bits (default: log2 of the top modulus)."""
    sb = math.log2(ct.basis[-1]) if scale_bits is None else float(scale_bits)
    new_scale = ct.scale + sb
    _check_scale(new_scale, ct.basis)
    v = int(round(c * 2.0 ** sb))
    return Ciphertext(R.scalar_mult(ct.b, v, stats), R.scalar_mult(ct.a, v, stats), new_scale, ct.n)


def poly_add(ct: Ciphertext, pt: PlaintextPoly, stats=None) -> Ciphertext:
    _same_level(ct, pt.poly)
    if abs(ct.scale - pt.scale) > SCALE_TOL:
        raise HeError("scale mismatch")
    return Ciphertext(R.add(ct.b, pt.poly, stats), ct.a.copy(), ct.scale, ct.n)


def poly_mult(ct: Ciphertext, pt: PlaintextPoly, stats=None) -> Ciphertext:
    _same_level(ct, pt.poly)
    new_scale = ct.scale + pt.scale
    _check_scale(new_scale, ct.basis)
    return Ciphertext(R.pointwise_mult(ct.b, pt.poly, stats), R.pointwise_mult(ct.a, pt.poly, stats),
                      new_scale, ct.n)


def he_add(c1: Ciphertext, c2: Ciphertext, stats=None) -> Ciphertext:
    _same_level(c1, c2.b)
    if abs(c1.scale - c2.scale) > SCALE_TOL:
        raise HeError(f"scale mismatch: 2^{c1.scale} vs 2^{c2.scale}")
    return Ciphertext(R.add(c1.b, c2.b, stats), R.add(c1.a, c2.a, stats), c1.scale, c1.n)


def digits_at(level: int, alpha: int) -> list[tuple[int, int]]:
    """Limb ranges [lo, hi) of the key-switching digits at a level."""
    L1 = level + 1
    return [(lo, min(lo + alpha, L1)) for lo in range(0, L1, alpha)]


def key_switch(d: RnsPoly, evk: EvalKey, ext, alpha: int, stats=None) -> tuple[RnsPoly, RnsPoly]:
    """Hybrid key switching of the EVAL polynomial d; returns (c0, c1) over d's basis."""
    if d.rep is not Rep.EVAL:
        raise HeError("key_switch expects an EVAL polynomial")
    ext = tuple(ext)
    basis = d.basis
    key_basis = evk.basis
    if not set(basis) <= set(key_basis):
        raise HeError("evaluation key does not cover the ciphertext basis")
    if not set(ext) <= set(key_basis):
        raise HeError("evaluation key lacks the extension moduli")
    raised = basis + ext
    level = len(basis) - 1
    dc = R.ntt_inverse(d, stats)
    acc_b = acc_a = None
    for j, (lo, hi) in enumerate(digits_at(level, alpha)):
        if j >= len(evk.pairs):
            raise HeError("evaluation key has too few digits")
        dig = basis[lo:hi]
        rest = tuple(q for q in raised if q not in set(dig))
        conv = R.base_convert(dc.select(dig), rest, stats)
        conv_e = R.ntt_forward(conv, stats)
        # raised digit in EVAL: original limbs of d for the digit, converted limbs elsewhere
        limbs = np.empty((len(raised), d.N), dtype=np.uint64)
        pos = {q: i for i, q in enumerate(rest)}
        for i, q in enumerate(raised):
            limbs[i] = d.limbs[lo + dig.index(q)] if q in dig else conv_e.limbs[pos[q]]
        dj = RnsPoly(limbs, raised, Rep.EVAL)
        kb, ka = (p.select(raised) for p in evk.pairs[j])
        tb = R.pointwise_mult(dj, kb, stats)
        ta = R.pointwise_mult(dj, ka, stats)
        if acc_b is None:
            acc_b, acc_a = tb, ta
        else:
            acc_b, acc_a = R.add(acc_b, tb, stats), R.add(acc_a, ta, stats)
    return R.mod_down(acc_b, ext, stats), R.mod_down(acc_a, ext, stats)


def he_mult(ctx: CkksContext, c1: Ciphertext, c2: Ciphertext, evk: EvalKey | None = None,
            stats=None) -> Ciphertext:
    _same_level(c1, c2.b)
    evk = ctx.mult_key() if evk is None else evk
    if evk.kind != "mult":
        raise HeError("he_mult needs a multiplication key")
    new_scale = c1.scale + c2.scale
    _check_scale(new_scale, c1.basis)
    d0 = R.pointwise_mult(c1.b, c2.b, stats)
    d1 = R.add(R.pointwise_mult(c1.a, c2.b, stats), R.pointwise_mult(c2.a, c1.b, stats), stats)
    d2 = R.pointwise_mult(c1.a, c2.a, stats)
    k0, k1 = key_switch(d2, evk, ctx.ext, ctx.alpha, stats)
    return Ciphertext(R.add(d0, k0, stats), R.add(d1, k1, stats), new_scale, c1.n)


def he_square(ctx, ct, evk=None, stats=None):
    return he_mult(ctx, ct, ct, evk, stats)


def he_rotate(ctx: CkksContext, ct: Ciphertext, r: int, evk: EvalKey | None = None,
              stats=None) -> Ciphertext:
    N = ct.N
    g = R.galois_element(r, N)
    if g == 1:
        return Ciphertext(ct.b.copy(), ct.a.copy(), ct.scale, ct.n)
    if evk is None:
        evk = ctx.rot_key(r)
    if evk.galois % (2 * N) != g:
        raise HeError(f"missing rotation key for r={r}")
    return _apply_galois(ctx, ct, g, evk, stats)


def he_conjugate(ctx, ct, evk=None, stats=None):
    evk = ctx.conj_key() if evk is None else evk
    return _apply_galois(ctx, ct, 2 * ct.N - 1, evk, stats)


def _apply_galois(ctx, ct, g, evk, stats):
    bg = R.automorph_galois(ct.b, g, stats)
    ag = R.automorph_galois(ct.a, g, stats)
    k0, k1 = key_switch(ag, evk, ctx.ext, ctx.alpha, stats)
    return Ciphertext(R.add(bg, k0, stats), k1, ct.scale, ct.n)


def he_rescale(ct: Ciphertext, stats=None) -> Ciphertext:
    if ct.level < 1:
        raise HeError("cannot rescale at level 0")
    top = (ct.basis[-1],)
    b = R.mod_down(ct.b, top, stats)
    a = R.mod_down(ct.a, top, stats)
    return Ciphertext(b, a, ct.scale - math.log2(top[0]), ct.n)


def drop_level(ct: Ciphertext, levels: int = 1) -> Ciphertext:
    """Discard top limbs without changing the scale."""
    keep = ct.basis[: ct.level + 1 - levels]
    if not keep:
        raise HeError("cannot drop below level 0")
    return Ciphertext(ct.b.select(keep), ct.a.select(keep), ct.scale, ct.n)


# -- instrumented runs and analytic profiles --------------------------------

def _ct_bytes(limbs, N):
    return 2 * limbs * N * R.WORD_BYTES


def _key_bytes(level, alpha, ext, N):
    ndig = len(digits_at(level, alpha))
    return ndig * 2 * (level + 1 + ext) * N * R.WORD_BYTES


def cost_key_switch(level: int, alpha: int, ext: int, N: int) -> OpStats:
    l1 = level + 1
    c = R.cost_intt(l1, N)
    digs = digits_at(level, alpha)
    for lo, hi in digs:
        a = hi - lo
        c += R.cost_base_convert(a, l1 - a + ext, N)
        c += R.cost_ntt(l1 - a + ext, N)
    c += R.cost_elementwise("mult", l1 + ext, N).scaled(2 * len(digs))
    c += R.cost_elementwise("add", l1 + ext, N).scaled(2 * (len(digs) - 1))
    c += R.cost_mod_down(l1, ext, N).scaled(2)
    return c


def block_cost(kind: str, N: int, level: int, alpha: int, ext: int) -> tuple[OpStats, int, int, int]:
    """(stats, bytes_in, bytes_out, key_bytes) for a block at a level."""
    l1 = level + 1
    ct = _ct_bytes(l1, N)
    pt = l1 * N * R.WORD_BYTES
    kb = _key_bytes(level, alpha, ext, N)
    if kind == "ScalarAdd":
        return R.cost_scalar("add", l1, N), ct, ct, 0
    if kind == "ScalarMult":
        return R.cost_scalar("mult", l1, N).scaled(2), ct, ct, 0
    if kind == "PolyAdd":
        return R.cost_elementwise("add", l1, N), ct + pt, ct, 0
    if kind == "PolyMult":
        return R.cost_elementwise("mult", l1, N).scaled(2), ct + pt, ct, 0
    if kind == "HEAdd":
        return R.cost_elementwise("add", l1, N).scaled(2), 2 * ct, ct, 0
    if kind == "HEMult":
        c = R.cost_elementwise("mult", l1, N).scaled(4) + R.cost_elementwise("add", l1, N).scaled(3)
        return c + cost_key_switch(level, alpha, ext, N), 2 * ct, ct, kb
    if kind in ("HERotate", "Conjugate"):
        c = R.cost_automorph(l1, N, Rep.EVAL).scaled(2) + R.cost_elementwise("add", l1, N)
        return c + cost_key_switch(level, alpha, ext, N), ct, ct, kb
    if kind == "KeySwitch":
        return cost_key_switch(level, alpha, ext, N), pt, ct, kb
    if kind == "HERescale":
        if level < 1:
            raise HeError("cannot rescale at level 0")
        return R.cost_mod_down(level, 1, N).scaled(2), ct, _ct_bytes(level, N), 0
    if kind == "NTT":
        return R.cost_ntt(l1, N), pt, pt, 0
    if kind == "iNTT":
        return R.cost_intt(l1, N), pt, pt, 0
    if kind == "ModRaise":
        # ciphertext raised from the base limb to `level`
        if level < 1:
            raise HeError("ModRaise needs a target level >= 1")
        c = R.cost_intt(1, N) + R.cost_base_convert(1, level, N) + R.cost_ntt(l1, N)
        return c.scaled(2), _ct_bytes(1, N), ct, 0
    if kind == "ModDown":
        return R.cost_mod_down(l1, ext, N), (l1 + ext) * N * R.WORD_BYTES, pt, 0
    raise HeError(f"unknown block kind {kind!r}")


BLOCK_KINDS = ("ScalarAdd", "ScalarMult", "PolyAdd", "PolyMult", "HEAdd", "HEMult", "HERotate",
               "Conjugate", "HERescale", "KeySwitch", "NTT", "iNTT", "ModRaise", "ModDown")


def profile_block(kind: str, params: CkksParams, level: int | None = None) -> BlockProfile:
    level = params.L if level is None else level
    st, bi, bo, kb = block_cost(kind, params.N, level, params.alpha, len(params.ext_moduli) or params.ext_limbs)
    return BlockProfile.from_stats(kind, level, st, bi, bo, kb)


def run_block(ctx: CkksContext, kind: str, level: int | None = None, seed: int = 1, r: int = 1):
    """Execute one block on random encryptions; returns (result, BlockProfile)."""
    p = ctx.params
    level = p.L if level is None else level
    rng = np.random.default_rng(seed)
    n = p.n

    def msg():
        return rng.uniform(-1, 1, n) + 1j * rng.uniform(-1, 1, n)

    ct1 = encrypt(ctx, encode(ctx, msg(), level=level))
    ct2 = encrypt(ctx, encode(ctx, msg(), level=level))
    pt = encode(ctx, msg(), level=level)
    st = OpStats()
    if kind == "ScalarAdd":
        out = scalar_add(ct1, 0.5, st)
    elif kind == "ScalarMult":
        out = scalar_mult(ct1, 0.5, st)
    elif kind == "PolyAdd":
        out = poly_add(ct1, pt, st)
    elif kind == "PolyMult":
        out = poly_mult(ct1, pt, st)
    elif kind == "HEAdd":
        out = he_add(ct1, ct2, st)
    elif kind == "HEMult":
        out = he_mult(ctx, ct1, ct2, ctx.mult_key(), st)
    elif kind == "HERotate":
        out = he_rotate(ctx, ct1, r, ctx.rot_key(r), st)
    elif kind == "HERescale":
        out = he_rescale(ct1, st)
    else:
        raise HeError(f"run_block does not execute {kind!r}")
    _, bi, bo, kb = block_cost(kind, ctx.N, level, ctx.alpha, len(ctx.ext))
    return out, BlockProfile.from_stats(kind, level, st, bi, bo, kb)


# -- serialisation ----------------------------------------------------------

CT_MAGIC = b"GMECT\x01"
_HDR = struct.Struct("<6sIId8s")


def params_hash(params: CkksParams) -> bytes:
    blob = json.dumps(params.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).digest()[:8]


def ct_to_bytes(ct: Ciphertext, params: CkksParams) -> bytes:
    """Header, then limb-major little-endian u64 residues of b followed by a."""
    hdr = _HDR.pack(CT_MAGIC, ct.N, ct.b.nlimbs, ct.scale, params_hash(params))
    n_le = struct.pack("<I", ct.n)
    body = ct.b.limbs.astype("<u8").tobytes() + ct.a.limbs.astype("<u8").tobytes()
    return hdr + n_le + body


def ct_from_bytes(blob: bytes, params: CkksParams) -> Ciphertext:
    magic, N, nl, scale, h = _HDR.unpack_from(blob)
    if magic != CT_MAGIC:
        raise HeError("not a ciphertext blob")
    if h != params_hash(params) or N != params.N:
        raise HeError("ciphertext was produced under different parameters")
    off = _HDR.size
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    size = nl * N * 8
    if len(blob) != off + 2 * size:
        raise HeError("truncated ciphertext blob")
    b = np.frombuffer(blob, "<u8", nl * N, off).reshape(nl, N).astype(np.uint64)
    a = np.frombuffer(blob, "<u8", nl * N, off + size).reshape(nl, N).astype(np.uint64)
    basis = params.chain[:nl]
    return Ciphertext(RnsPoly(b, basis, Rep.EVAL), RnsPoly(a, basis, Rep.EVAL), scale, n)
