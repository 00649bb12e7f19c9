"""Scalar 64-bit modular arithmetic with a single-correction Barrett reduction.

This is the semantic reference for the vector kernels in ``gmesim._kernels``
and for the mod-red / mod-add / mod-mult instruction costs.

The reduction follows Dhem's parameterisation: for an n-bit modulus q and
x < 2^(2n), with mu = floor(2^(2n+1) / q),

    qhat = ((x >> (n-2)) * mu) >> (n+3)

underestimates floor(x/q) by at most one, so ``x - qhat*q`` needs at most one
conditional subtraction. All intermediates fit in 64-bit words for n <= 62.
"""

from __future__ import annotations

from dataclasses import dataclass

from .params import is_prime

MASK64 = (1 << 64) - 1
MAX_MODULUS_BITS = 62

DEBUG = __debug__


@dataclass(frozen=True)
class Modulus:
    q: int
    nbits: int
    barrett_mu: int
    N: int | None = None
    two_adic_root: int | None = None
    n_inv: int | None = None

    @classmethod
    def make(cls, q: int, N: int | None = None) -> "Modulus":
        if not 3 <= q < 1 << MAX_MODULUS_BITS:
            raise ValueError(f"modulus must be in [3, 2^{MAX_MODULUS_BITS})")
        if not is_prime(q):
            raise ValueError(f"{q} is not prime")
        nbits = q.bit_length()
        mu = (1 << (2 * nbits + 1)) // q
        m = cls(q, nbits, mu)
        if N is not None:
            root = find_2n_root(m, N)
            m = cls(q, nbits, mu, N, root, pow(N, -1, q))
        return m


def barrett_constants(q: int) -> tuple[int, int]:
    """(nbits, mu) for the single-correction reduction."""
    k = q.bit_length()
    return k, (1 << (2 * k + 1)) // q


def mod_red(x: int, m: Modulus) -> int:
    """x mod q for 0 <= x < 2^(2*nbits) (covers any product of two reduced operands)."""
    k = m.nbits
    if DEBUG and not 0 <= x < 1 << (2 * k):
        raise ValueError("mod_red input out of range")
    t = x >> (k - 2)
    qhat = (t * m.barrett_mu) >> (k + 3)
    r = (x - qhat * m.q) & MASK64
    if r >= m.q:
        r -= m.q
    return r


def mod_add(a: int, b: int, m: Modulus) -> int:
    if DEBUG and not (0 <= a < m.q and 0 <= b < m.q):
        raise ValueError("mod_add operands must be reduced")
    s = a + b
    return s - m.q if s >= m.q else s


def mod_sub(a: int, b: int, m: Modulus) -> int:
    if DEBUG and not (0 <= a < m.q and 0 <= b < m.q):
        raise ValueError("mod_sub operands must be reduced")
    return a - b if a >= b else a + m.q - b


def mod_mult(a: int, b: int, m: Modulus) -> int:
    if DEBUG and not (0 <= a < m.q and 0 <= b < m.q):
        raise ValueError("mod_mult operands must be reduced")
    return mod_red(a * b, m)


def pow_mod(a: int, e: int, m: Modulus) -> int:
    """Left-to-right square-and-multiply on top of mod_mult."""
    if e < 0:
        raise ValueError("negative exponent")
    a %= m.q
    r = 1 % m.q
    for bit in bin(e)[2:]:
        r = mod_mult(r, r, m)
        if bit == "1":
            r = mod_mult(r, a, m)
    return r


def find_2n_root(m: Modulus, N: int) -> int:
    """Primitive 2N-th root of unity: g^((q-1)/2N) for the smallest non-residue g."""
    q = m.q
    if (q - 1) % (2 * N):
        raise ValueError(f"q={q} is not 1 mod 2N={2 * N}")
    e = (q - 1) // (2 * N)
    for g in range(2, q):
        # g is a non-residue iff g^((q-1)/2) = -1, then the root has order exactly 2N
        if pow_mod(g, (q - 1) // 2, m) == q - 1:
            return pow_mod(g, e, m)
    raise ValueError("no quadratic non-residue found")  # unreachable for odd prime q
