"""Hot kernels: modular arithmetic, NTT butterflies and the limb-residency replay.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy implementation in ``_pykernels`` is used. Set ``GMESIM_BACKEND=python``
to force the fallback.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("GMESIM_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def backends():
    """Available kernel modules by name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out


def barrett_table(moduli):
    """(q, mu, k) arrays for a list of moduli, as the kernels expect."""
    qs = [int(q) for q in moduli]
    k = [q.bit_length() for q in qs]
    mu = [(1 << (2 * b + 1)) // q for q, b in zip(qs, k)]
    return (np.array(qs, dtype=np.uint64), np.array(mu, dtype=np.uint64),
            np.array(k, dtype=np.uint64))


reduce128 = _impl.reduce128
mul128 = _impl.mul128
mod_mult = _impl.mod_mult
mod_mult_scalar = _impl.mod_mult_scalar
mod_add = _impl.mod_add
mod_sub = _impl.mod_sub
mod_neg = _impl.mod_neg
ntt_forward = _impl.ntt_forward
ntt_inverse = _impl.ntt_inverse
lru_serve = _impl.lru_serve
