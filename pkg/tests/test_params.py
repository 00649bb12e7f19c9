import json

import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from gmesim.params import (CkksParams, ParamsError, derive_sizes, gen_moduli, is_prime, load_params, make_params,
                           save_params)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**64))
def test_is_prime_matches_sympy(n):
    assert is_prime(n) == sympy.isprime(n)


def test_is_prime_known_values():
    assert [n for n in range(30) if is_prime(n)] == [2, 3, 5, 7, 11, 13, 17, 19, 23, 29]
    assert is_prime(2**61 - 1) and not is_prime(3215031751)  # strong pseudoprime to bases 2,3,5,7


def test_gen_moduli_small_case():
    (q,) = gen_moduli(1, 17, 2**4)
    assert 2**16 <= q < 2**17 and q % 32 == 1 and sympy.isprime(q)
    # the smallest admissible prime in the range
    assert min(p for p in range(2**16, 2**17) if p % 32 == 1 and sympy.isprime(p)) == 65537


def test_gen_moduli_paper_chain():
    qs = gen_moduli(32, 54, 2**16)
    assert len(set(qs)) == 32
    assert all(q % 2**17 == 1 and q.bit_length() == 54 and sympy.isprime(q) for q in qs)
    assert sum(q.bit_length() for q in qs) == 1728


def test_gen_moduli_errors():
    with pytest.raises(ParamsError):
        gen_moduli(0, 54, 16)
    with pytest.raises(ParamsError):
        gen_moduli(1, 54, 12)
    with pytest.raises(ParamsError):
        gen_moduli(1, 62, 16)
    with pytest.raises(ParamsError):
        gen_moduli(50, 8, 16)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.sampled_from([20, 30, 40, 54]), st.integers(2, 12), st.integers(0, 1000))
def test_gen_moduli_properties(count, bits, logn, seed):
    qs = gen_moduli(count, bits, 2**logn, seed=seed)
    assert len(qs) == len(set(qs)) == count
    for q in qs:
        assert q % 2 ** (logn + 1) == 1 and 2 ** (bits - 1) <= q < 2**bits and is_prime(q)
    assert gen_moduli(count, bits, 2**logn, seed=seed) == qs


def test_paper_preset(paper):
    assert (paper.N, paper.n, paper.L, paper.L_boot, paper.dnum, paper.fftIter) == (2**16, 2**15, 23, 17, 3, 4)
    assert paper.alpha == 8 and paper.ext_limbs == 9
    assert paper.log_q == 1728 and len(paper.moduli) == 32
    d = derive_sizes(paper)
    assert d.ciphertext_bytes == 28_311_552
    assert d.limb_bytes_packed == 442_368
    assert d.limb_bytes_stored == 2**16 * 8


def test_tiny_limb_size():
    p = CkksParams(N=16, n=8, word_bits=17, moduli=(65537,), L=0, L_boot=0, dnum=1, fftIter=1,
                   delta_bits=10).validate()
    assert derive_sizes(p).limb_bytes_stored == 128


def test_alpha_is_exact_ceiling():
    for L in range(0, 12):
        for dnum in range(1, L + 2):
            p = make_params(2**4, L=L, L_boot=0, dnum=dnum, fftIter=1, word_bits=30, delta_bits=20)
            assert p.alpha == -(-(L + 1) // dnum) and p.ext_limbs == p.alpha + 1
            assert len(p.ext_moduli) == p.ext_limbs


def test_validation_rejects_bad_sets(desk):
    d = desk.to_dict()
    bad = [
        dict(d, N=3000), dict(d, n=desk.N), dict(d, L_boot=desk.L + 1), dict(d, dnum=0),
        dict(d, moduli=d["moduli"][:3]), dict(d, moduli=[d["moduli"][0]] * len(d["moduli"])),
        dict(d, alpha=desk.alpha + 1), dict(d, moduli=[d["moduli"][0] + 2 * desk.N] + d["moduli"][1:]),
        dict(d, word_bits=40),
    ]
    for b in bad:
        with pytest.raises(ParamsError):
            CkksParams.from_dict(b)


def test_save_load_roundtrip(tmp_path, desk):
    path = tmp_path / "p.json"
    save_params(desk, path)
    assert load_params(path) == desk
    assert json.loads(path.read_text())["alpha"] == desk.alpha
