"""Integer fixed-point kernels.

Every projection and attention score in the package is an integer
matrix product of mantissas followed by one round-half-even shift and
saturation. That product is the only hot loop, so it gets a numba
version. Set ``HYBRIDATTN_DISABLE_NUMBA=1`` to force the pure numpy path
(it is also used automatically whenever int64 could overflow).
"""

import os

import numpy as np

_DISABLED = os.environ.get("HYBRIDATTN_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        return decorator


_backend = "numba" if (HAVE_NUMBA and not _DISABLED) else "numpy"

# headroom kept below 2**63 for the int64 accumulators
_INT64_BITS = 62


def backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    prev, _backend = _backend, name
    return prev


def _maxbits(a):
    if a.size == 0:
        return 0
    if a.dtype == object:
        return max(abs(int(v)) for v in a.flat).bit_length()
    return int(np.abs(a).max()).bit_length()


def fits_int64(a, b, width):
    """True if every partial sum of ``a @ b.T`` fits comfortably in int64."""
    return _maxbits(a) + _maxbits(b) + max(int(width), 1).bit_length() <= _INT64_BITS


def round_shift_numpy(p, shift):
    """Divide integer array by ``2**shift``, rounding half to even."""
    if shift == 0:
        return p.copy()
    q = p >> shift
    r = p - (q << shift)
    half = 1 << (shift - 1)
    up = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + up.astype(p.dtype)


def fixed_matmul_numpy(a, b, shift, lim):
    if a.dtype == object or b.dtype == object or not fits_int64(a, b, a.shape[1]):
        p = np.dot(a.astype(object), b.astype(object).T)
        if p.ndim == 0 or p.size == 0:
            return np.zeros((a.shape[0], b.shape[0]), dtype=object)
        out = round_shift_numpy(p, shift)
        return np.minimum(np.maximum(out, -lim), lim)
    p = a.astype(np.int64) @ b.astype(np.int64).T
    out = round_shift_numpy(p, shift)
    return np.clip(out, -lim, lim)


@njit(cache=True, nogil=True)
def _fixed_matmul_nb(a, b, shift, lim):
    n, w = a.shape
    m = b.shape[0]
    out = np.empty((n, m), dtype=np.int64)
    half = np.int64(1) << (shift - 1) if shift > 0 else np.int64(0)
    for i in range(n):
        for j in range(m):
            acc = np.int64(0)
            for k in range(w):
                acc += a[i, k] * b[j, k]
            if shift > 0:
                q = acc >> shift
                r = acc - (q << shift)
                if r > half or (r == half and (q & 1) == 1):
                    q += 1
            else:
                q = acc
            if q > lim:
                q = lim
            elif q < -lim:
                q = -lim
            out[i, j] = q
    return out


def fixed_matmul(a, b, shift, lim):
    """Saturating fixed-point product ``round_even((a @ b.T) / 2**shift)``.

    ``a`` is (n, w), ``b`` is (m, w); both hold integer mantissas. The
    accumulation is exact and the single rounding happens at the end.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if (
        _backend == "numba"
        and a.dtype != object
        and b.dtype != object
        and lim < (1 << _INT64_BITS)
        and fits_int64(a, b, a.shape[1])
    ):
        return _fixed_matmul_nb(
            np.ascontiguousarray(a, dtype=np.int64),
            np.ascontiguousarray(b, dtype=np.int64),
            int(shift),
            int(lim),
        )
    return fixed_matmul_numpy(a, b, shift, lim)


@njit(cache=True, nogil=True)
def _two_sum_flags_nb(x, modulus):
    n = x.shape[0]
    out = np.zeros(n, dtype=np.int8)
    seen = np.zeros(modulus, dtype=np.bool_)
    for i in range(n):
        r = x[i] % modulus
        if seen[(modulus - r) % modulus]:
            out[i] = 1
        seen[r] = True
    return out


def _two_sum_flags_numpy(x, modulus):
    out = np.zeros(len(x), dtype=np.int8)
    seen = set()
    for i, v in enumerate(x):
        r = int(v) % modulus
        if (-r) % modulus in seen:
            out[i] = 1
        seen.add(r)
    return out


def two_sum_flags(x, modulus):
    """Prefix-complement flags: ``out[i] = 1`` iff some ``j < i`` has ``x[i]+x[j] = 0 mod modulus``."""
    x = np.asarray(x, dtype=np.int64)
    if _backend == "numba":
        return _two_sum_flags_nb(x, int(modulus))
    return _two_sum_flags_numpy(x, modulus)
