"""CKKS parameter sets, prime generation and derived size quantities."""

from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

# deterministic Miller-Rabin witnesses, sufficient for n < 3.3e24
_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


class ParamsError(ValueError):
    pass


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_WITNESSES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _is_pow2(x: int) -> bool:
    return x > 0 and x & (x - 1) == 0


def gen_moduli(count: int, word_bits: int, N: int, seed: int = 0, exclude=()) -> list[int]:
    """Return `count` distinct primes q = 1 (mod 2N) in [2^(word_bits-1), 2^word_bits).

    Candidates are scanned downward from the top of the range. A nonzero
    seed moves the starting point to a reproducible offset inside the upper
    half of the range; the scan wraps around once.
    """
    if count < 1:
        raise ParamsError("count must be >= 1")
    if not 3 <= word_bits <= 61:
        raise ParamsError(f"word_bits {word_bits} outside [3, 61]")
    if not _is_pow2(N):
        raise ParamsError(f"N={N} is not a power of two")
    m = 2 * N
    lo, hi = 1 << (word_bits - 1), 1 << word_bits
    # largest candidate = 1 mod m below hi
    top = (hi - 2) // m * m + 1
    n_cand = (top - lo) // m + 1 if top >= lo else 0
    if n_cand <= 0:
        raise ParamsError("no candidates of the form k*2N+1 in range")
    start = 0 if seed == 0 else random.Random(seed).randrange(n_cand // 2 + 1)
    skip = set(exclude)
    out: list[int] = []
    for i in range(n_cand):
        q = top - ((start + i) % n_cand) * m
        if q not in skip and is_prime(q):
            out.append(q)
            if len(out) == count:
                return out
    raise ParamsError(f"only {len(out)} primes = 1 mod {m} with {word_bits} bits; {count} requested")


@dataclass(frozen=True)
class CkksParams:
    N: int
    n: int
    word_bits: int
    moduli: tuple[int, ...]
    L: int
    L_boot: int
    dnum: int
    fftIter: int
    delta_bits: int
    ext_moduli: tuple[int, ...] = ()
    lam: int = 128
    name: str = ""

    @property
    def alpha(self) -> int:
        return math.ceil((self.L + 1) / self.dnum)

    @property
    def ext_limbs(self) -> int:
        return self.alpha + 1

    @property
    def chain(self) -> tuple[int, ...]:
        """Ciphertext modulus chain q_0..q_L."""
        return self.moduli[: self.L + 1]

    @property
    def log_q(self) -> int:
        return sum(q.bit_length() for q in self.moduli)

    def validate(self) -> "CkksParams":
        if not _is_pow2(self.N):
            raise ParamsError(f"N={self.N} is not a power of two")
        if not 1 <= self.n <= self.N // 2:
            raise ParamsError(f"slot count n={self.n} must be in [1, N/2]")
        if self.N // 2 % self.n:
            raise ParamsError("n must divide N/2")
        if self.L < 0 or not 0 <= self.L_boot <= self.L:
            raise ParamsError("need 0 <= L_boot <= L")
        if self.dnum < 1 or self.dnum > self.L + 1:
            raise ParamsError("dnum must be in [1, L+1]")
        if len(self.moduli) < self.L + 1:
            raise ParamsError(f"{len(self.moduli)} moduli cannot hold {self.L + 1} levels")
        if self.ext_moduli and len(self.ext_moduli) != self.ext_limbs:
            raise ParamsError(f"expected {self.ext_limbs} extension moduli, got {len(self.ext_moduli)}")
        allq = list(self.moduli) + list(self.ext_moduli)
        if len(set(allq)) != len(allq):
            raise ParamsError("moduli are not distinct")
        for q in allq:
            if q >= 1 << self.word_bits:
                raise ParamsError(f"modulus {q} exceeds {self.word_bits} bits")
            if q % (2 * self.N) != 1:
                raise ParamsError(f"modulus {q} is not 1 mod 2N")
            if not is_prime(q):
                raise ParamsError(f"modulus {q} is not prime")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["moduli"] = list(self.moduli)
        d["ext_moduli"] = list(self.ext_moduli)
        d["alpha"] = self.alpha
        d["ext_limbs"] = self.ext_limbs
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CkksParams":
        d = dict(d)
        alpha, ext = d.pop("alpha", None), d.pop("ext_limbs", None)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        d["moduli"] = tuple(int(q) for q in d["moduli"])
        d["ext_moduli"] = tuple(int(q) for q in d.get("ext_moduli", ()))
        p = cls(**d).validate()
        if alpha is not None and alpha != p.alpha:
            raise ParamsError(f"alpha={alpha} inconsistent with ceil((L+1)/dnum)={p.alpha}")
        if ext is not None and ext != p.ext_limbs:
            raise ParamsError(f"ext_limbs={ext} inconsistent with alpha+1={p.ext_limbs}")
        return p


def make_params(
    N: int,
    L: int,
    L_boot: int,
    dnum: int,
    fftIter: int,
    word_bits: int = 54,
    delta_bits: int = 40,
    n: int | None = None,
    n_moduli: int | None = None,
    base_bits: int | None = None,
    seed: int = 0,
    name: str = "",
) -> CkksParams:
    """Build a parameter set with freshly generated primes.

    The first prime (decryption headroom) has `base_bits` bits (default
    word_bits); the rescaling chain uses primes just below 2^delta_bits so
    the scale stays near Delta after each rescale. Extension primes use
    word_bits.
    """
    n_moduli = L + 1 if n_moduli is None else n_moduli
    base_bits = word_bits if base_bits is None else base_bits
    scale_bits = min(delta_bits, word_bits)
    alpha = math.ceil((L + 1) / dnum)
    q0 = gen_moduli(1, base_bits, N, seed)
    rest = gen_moduli(n_moduli - 1, scale_bits, N, seed, exclude=q0) if n_moduli > 1 else []
    used = q0 + rest
    ext = gen_moduli(alpha + 1, word_bits, N, seed, exclude=used)
    return CkksParams(
        N=N, n=n or N // 2, word_bits=word_bits, moduli=tuple(used), L=L, L_boot=L_boot,
        dnum=dnum, fftIter=fftIter, delta_bits=delta_bits, ext_moduli=tuple(ext), name=name,
    ).validate()


@dataclass(frozen=True)
class DerivedSizes:
    log_q: int
    ciphertext_bits: int
    ciphertext_bytes: int
    limb_bytes_packed: int
    limb_bytes_stored: int
    limb_count: int
    ct_bytes_stored: int
    evk_bytes: int


def derive_sizes(p: CkksParams) -> DerivedSizes:
    log_q = p.log_q
    limb_stored = p.N * 8
    ksk_limbs = p.L + 1 + p.ext_limbs
    return DerivedSizes(
        log_q=log_q,
        ciphertext_bits=2 * p.N * log_q,
        ciphertext_bytes=2 * p.N * log_q // 8,
        limb_bytes_packed=p.N * p.word_bits // 8,
        limb_bytes_stored=limb_stored,
        limb_count=len(p.moduli),
        ct_bytes_stored=2 * (p.L + 1) * limb_stored,
        # dnum digit pairs over the raised basis, one word per residue
        evk_bytes=p.dnum * 2 * ksk_limbs * limb_stored,
    )


def load_params(src) -> CkksParams:
    """Load from a preset name ('paper', 'desk') or a JSON file path."""
    path = Path(str(src))
    if not path.suffix and not path.exists():
        text = resources.files("gmesim.data.params").joinpath(f"{src}.json").read_text()
    else:
        text = path.read_text()
    return CkksParams.from_dict(json.loads(text))


def save_params(p: CkksParams, path) -> None:
    Path(path).write_text(json.dumps(p.to_dict(), indent=2) + "\n")


def paper_preset() -> CkksParams:
    # 32 limbs of 54 bits -> log Q = 1728; all-54-bit chain, Delta ~ one limb
    return make_params(2**16, L=23, L_boot=17, dnum=3, fftIter=4, word_bits=54, delta_bits=54,
                       n=2**15, n_moduli=32, name="paper")


def desk_preset() -> CkksParams:
    return make_params(2**13, L=9, L_boot=6, dnum=3, fftIter=2, word_bits=54, delta_bits=40,
                       n=2**8, name="desk")
