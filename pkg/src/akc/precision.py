"""Arithmetic backends for map evaluation.

Points are numpy arrays. Ordinary ``complex128`` arrays give the fast
double-precision path; ``object`` arrays holding :class:`gmpy2.mpc` values
give the multiple-precision path used when long chains of twists amplify
rounding errors. Every kernel in the package is written against the small
set of helpers below, so both paths share one implementation.
"""
from __future__ import annotations

import contextlib
from typing import Iterator

import gmpy2
import numpy as np

__all__ = [
    "is_mp",
    "working_precision",
    "to_mp",
    "to_real_mp",
    "to_complex",
    "to_real",
    "cis",
    "real_part",
    "conj",
    "exact_turns",
    "promote",
]

_mpc = np.frompyfunc(gmpy2.mpc, 1, 1)
_complex = np.frompyfunc(complex, 1, 1)
_float = np.frompyfunc(float, 1, 1)


def is_mp(a) -> bool:
    """True if ``a`` is an object array (multiple-precision path)."""
    return isinstance(a, np.ndarray) and a.dtype == object


@contextlib.contextmanager
def working_precision(bits: int) -> Iterator[None]:
    """Temporarily set the gmpy2 working precision (in bits)."""
    with gmpy2.context(gmpy2.get_context(), precision=int(bits)):
        yield


def to_mp(a) -> np.ndarray:
    """Convert a complex array to an object array of ``mpc`` (exact)."""
    arr = np.asarray(a)
    if is_mp(arr):
        return arr
    return np.asarray(_mpc(arr.astype(complex)), dtype=object)


_mpfr = np.frompyfunc(gmpy2.mpfr, 1, 1)


def to_real_mp(a) -> np.ndarray:
    """Convert a float array to an object array of ``mpfr`` (exact)."""
    return np.asarray(_mpfr(np.asarray(a, dtype=float)), dtype=object)


def to_complex(a) -> np.ndarray:
    """Round an array of either backend to ``complex128``."""
    arr = np.asarray(a)
    if is_mp(arr):
        return np.asarray(_complex(arr), dtype=object).astype(complex)
    return arr.astype(complex)


def to_real(a) -> np.ndarray:
    """Round a real-valued array of either backend to ``float64``."""
    arr = np.asarray(a)
    if is_mp(arr):
        return np.asarray(_float(arr), dtype=object).astype(float)
    return arr.astype(float)


def _cis_scalar(x):
    tau = 2 * gmpy2.const_pi()
    if isinstance(x, gmpy2.mpc):
        return gmpy2.exp(gmpy2.mpc(0, 1) * tau * x)
    sin, cos = gmpy2.sin_cos(tau * gmpy2.mpfr(x))
    return gmpy2.mpc(cos, sin)


_cis_mp = np.frompyfunc(_cis_scalar, 1, 1)


def cis(s):
    """Return exp(2*pi*i*s) elementwise; ``s`` may be real or complex."""
    s = np.asarray(s)
    if is_mp(s):
        return np.asarray(_cis_mp(s), dtype=object)
    return np.exp(2j * np.pi * s)


def _real_scalar(x):
    return x.real if isinstance(x, gmpy2.mpc) else x


_real_mp = np.frompyfunc(_real_scalar, 1, 1)


def real_part(a):
    """Real part for either backend (``mpfr`` entries on the mp path)."""
    if is_mp(a):
        return np.asarray(_real_mp(a), dtype=object)
    return np.real(a)


def conj(a):
    """Complex conjugate for either backend."""
    if is_mp(a):
        return np.asarray(np.conjugate(a), dtype=object)
    return np.conjugate(a)


def promote(s, like) -> np.ndarray:
    """Lift a double parameter to the backend of ``like`` (no-op on doubles)."""
    s = np.asarray(s)
    if not is_mp(like) or is_mp(s):
        return s
    return to_mp(s) if np.iscomplexobj(s) else to_real_mp(s)


def exact_turns(k: np.ndarray, q: int, like) -> np.ndarray:
    """Return ``k/q`` in the backend of ``like``.

    On the mp path the division happens at working precision so that
    rational rotation times are represented to full accuracy.
    """
    k = np.asarray(k)
    if is_mp(like):
        out = np.empty(k.shape, dtype=object)
        flat = out.reshape(-1)
        for n, kk in enumerate(k.reshape(-1)):
            flat[n] = gmpy2.mpfr(int(kk)) / int(q)
        return out
    return k.astype(float) / q
