"""Hand-built retrieval head and the Eva / PerCom solvers built on it.

Token layout (width ``d = 3D + 2``)::

    [ a (D) | b (D) | q (D) | key_flag | query_flag ]

Key tokens carry an address ``a`` and a payload ``b``; query tokens carry
the address ``q`` they look up. The head maps a key token to
``K x = scale * (a, key_flag - a)``, a query token to
``Q x = (q, query_flag - q)`` and every token to ``V x = b`` (written into
the ``b`` slots of the output). The score between a query and a key is
``scale * (D - hamming(a, q))``; tokens without ``key_flag`` score 0.
``scale`` is ``log(n)**2`` rounded up onto the grid so the gap never
shrinks below ``log(n)**2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np

from .attention import HeadParams, LayerConfig, full_layer, project, score_row, softmax_weights
from .numerics import (
    PrecisionConfig,
    RepresentabilityError,
    ceil_log2,
    ceil_to_grid,
    mp_to_fraction_bounds,
    round_div,
)
from .tasks import EvaInstance, PerComInstance

# p(n) = RETRIEVAL_PRECISION_FACTOR * ceil(log2 n), frac bits = ceil(log2 n).
# Smallest factor that passes the n = 8..256 sweep; re-derive with
# scripts/derive_precision_constant.py.
RETRIEVAL_PRECISION_FACTOR = 3

LOG_BASES = ("e", "2")


class DecodeError(ValueError):
    """Retrieved payload is not a clean 0/1 vector."""


def address_bits(n: int) -> int:
    return max(1, ceil_log2(n))


def retrieval_precision(n: int, factor: int = RETRIEVAL_PRECISION_FACTOR) -> PrecisionConfig:
    D = address_bits(n)
    return PrecisionConfig(total_bits=max(factor * D, D + 1), frac_bits=D)


def log_squared(n: int, base: str = "e"):
    """``log(n)**2`` as an mpmath number at 256-bit precision."""
    if base not in LOG_BASES:
        raise ValueError(f"log base must be one of {LOG_BASES}")
    with mpmath.workprec(256):
        v = mpmath.log(n) if base == "e" else mpmath.log(n, 2)
        return v * v


def retrieval_scale(n: int, cfg: PrecisionConfig, base: str = "e") -> Fraction:
    """Smallest grid value at or above ``log(n)**2``."""
    # the true value lies in [lo, hi); rounding hi up can only widen the gap
    _, hi = mp_to_fraction_bounds(log_squared(n, base))
    return ceil_to_grid(hi, cfg)


@dataclass(frozen=True)
class RetrievalEncoding:
    """Binary addresses/payloads of a retrieval prompt."""

    D: int
    a: tuple  # per key token
    b: tuple
    queries: tuple

    @property
    def width(self) -> int:
        return 3 * self.D + 2


def code(value: int, D: int, base_bits: int | None = None) -> tuple:
    """``D``-bit little-endian code of ``value``; bit ``r`` repeats bit ``r mod base_bits``."""
    base_bits = D if base_bits is None else base_bits
    return tuple((value >> (r % base_bits)) & 1 for r in range(D))


def decode_bits(bits) -> int:
    return sum(int(b) << r for r, b in enumerate(bits))


def build_retrieval_head(n: int, D: int, cfg: PrecisionConfig, log_base: str = "e") -> HeadParams:
    if D < ceil_log2(max(n, 1)):
        raise ValueError(f"D={D} cannot address n={n} positions")
    d = 3 * D + 2
    scale = retrieval_scale(n, cfg, log_base)
    one = cfg.scale
    if one > cfg.max_mantissa:
        raise RepresentabilityError(f"1 is not representable at p={cfg.p}, s={cfg.s}")
    if scale * D > cfg.max_value:
        raise RepresentabilityError(
            f"peak score log(n)^2 * D = {float(scale * D):.4g} exceeds p={cfg.p}, s={cfg.s}"
        )
    sm = int(scale * cfg.scale)
    dtype = cfg.mantissa_dtype
    Q = np.zeros((d, d), dtype=dtype)
    K = np.zeros((d, d), dtype=dtype)
    V = np.zeros((d, d), dtype=dtype)
    key_flag, query_flag = 3 * D, 3 * D + 1
    for r in range(D):
        K[r, r] = sm
        K[D + r, key_flag] = sm
        K[D + r, r] = -sm
        Q[r, 2 * D + r] = one
        Q[D + r, query_flag] = one
        Q[D + r, 2 * D + r] = -one
        V[D + r, D + r] = one
    return HeadParams(Q, K, V)


def retrieval_layer(n: int, D: int, cfg: PrecisionConfig, log_base: str = "e") -> LayerConfig:
    return LayerConfig("full", (build_retrieval_head(n, D, cfg, log_base),), cfg, mlp="project_second")


def _key_token(a, b, D, cfg):
    row = [0] * (3 * D + 2)
    for r in range(D):
        row[r] = a[r] * cfg.scale
        row[D + r] = b[r] * cfg.scale
    row[3 * D] = cfg.scale
    return row


def _query_token(q, D, cfg):
    row = [0] * (3 * D + 2)
    for r in range(D):
        row[2 * D + r] = q[r] * cfg.scale
    row[3 * D + 1] = cfg.scale
    return row


def encode_retrieval(enc: RetrievalEncoding, cfg: PrecisionConfig) -> np.ndarray:
    rows = [_key_token(a, b, enc.D, cfg) for a, b in zip(enc.a, enc.b)]
    rows += [_query_token(q, enc.D, cfg) for q in enc.queries]
    return np.array(rows, dtype=cfg.mantissa_dtype)


def eva_encoding(inst: EvaInstance, D: int | None = None) -> RetrievalEncoding:
    D0 = address_bits(inst.n)
    D = D0 if D is None else D
    return RetrievalEncoding(
        D,
        tuple(code(i - 1, D, D0) for i in range(1, inst.n + 1)),
        tuple(code(v - 1, D) for v in inst.f),
        (code(inst.x - 1, D, D0),),
    )


def percom_encoding(inst: PerComInstance, D: int | None = None) -> RetrievalEncoding:
    D0 = address_bits(inst.n)
    D = D0 if D is None else D
    return RetrievalEncoding(
        D,
        tuple(code(j - 1, D, D0) for j in range(1, inst.n + 1)),
        tuple(code(v - 1, D) for v in inst.sigma),
        tuple(code(t - 1, D, D0) for t in inst.tau),
    )


def decode_payload(row, D: int, cfg: PrecisionConfig) -> int:
    bits = []
    for r in range(D):
        k = int(row[D + r])
        if k == 0:
            bits.append(0)
        elif k == cfg.scale:
            bits.append(1)
        else:
            raise DecodeError(f"payload slot {r} holds {cfg.value(k)}, not 0 or 1")
    return decode_bits(bits) + 1


def _solve(enc, n, cfg, log_base):
    cfg = cfg or retrieval_precision(n)
    layer = retrieval_layer(n, enc.D, cfg, log_base)
    seq = encode_retrieval(enc, cfg)
    positions = list(range(len(enc.a), len(enc.a) + len(enc.queries)))
    out = full_layer(seq, layer, positions)
    return [decode_payload(row, enc.D, cfg) for row in out]


def solve_eva(inst: EvaInstance, cfg: PrecisionConfig | None = None, log_base: str = "e", D: int | None = None) -> int:
    """One full-attention layer with the retrieval head; returns ``f(x)``."""
    return _solve(eva_encoding(inst, D), inst.n, cfg, log_base)[0]


def solve_percom(
    inst: PerComInstance, cfg: PrecisionConfig | None = None, log_base: str = "e", D: int | None = None
) -> tuple:
    """Positions ``n+1..2n`` each retrieve ``sigma(tau(i))``."""
    return tuple(_solve(percom_encoding(inst, D), inst.n, cfg, log_base))


def hdp_of(n: int, cfg: PrecisionConfig, D: int | None = None) -> dict:
    D = address_bits(n) if D is None else D
    d = 3 * D + 2
    hdp = d * cfg.total_bits
    log_n = address_bits(n)
    return {"H": 1, "d": d, "p": cfg.total_bits, "Hdp": hdp, "polylog_cap": 16 * log_n * log_n, "polylog_ok": hdp <= 16 * log_n * log_n}


@dataclass
class ConcentrationReport:
    n: int
    D: int
    p: int
    frac_bits: int
    log_base: str
    scale: Fraction
    match_weight: Fraction | None  # smallest match weight over all queries
    max_mismatch_weight: Fraction | None
    bound: object  # mpmath 1 - n / n**log(n)
    mismatch_bound: object  # mpmath 1 / n**log(n)
    meets_bound: bool
    mismatch_ok: bool
    quantizes_to_one: bool
    mismatch_quantizes_to_zero: bool
    defined: bool
    hdp: dict

    def to_json(self) -> dict:
        w = self.match_weight
        return {
            "n": self.n,
            "D": self.D,
            "p": self.p,
            "frac_bits": self.frac_bits,
            "log_base": self.log_base,
            "scale": f"{self.scale.numerator}/{self.scale.denominator}",
            "match_weight_num": str(w.numerator) if w is not None else None,
            "match_weight_den": str(w.denominator) if w is not None else None,
            "bound": mpmath.nstr(self.bound, 30),
            "mismatch_bound": mpmath.nstr(self.mismatch_bound, 30),
            "meets_bound": self.meets_bound,
            "mismatch_ok": self.mismatch_ok,
            "quantizes_to_one": self.quantizes_to_one,
            "mismatch_quantizes_to_zero": self.mismatch_quantizes_to_zero,
            "defined": self.defined,
            "Hdp": self.hdp["Hdp"],
            "H": self.hdp["H"],
            "d": self.hdp["d"],
        }


def retrieval_concentration(
    n: int,
    D: int | None = None,
    cfg: PrecisionConfig | None = None,
    log_base: str = "e",
    addresses: list | None = None,
) -> ConcentrationReport:
    """Exact softmax weights of the retrieval head at the query position.

    Keys use addresses ``0..n-1`` (or the given ``addresses``); every
    address in use is queried and the worst match weight is reported. An
    address set where some query matches zero or several keys is flagged
    ``defined=False``.
    """
    D0 = address_bits(n)
    D = D0 if D is None else D
    cfg = cfg or retrieval_precision(n)
    addrs = list(range(n)) if addresses is None else list(addresses)
    head = build_retrieval_head(n, D, cfg, log_base)
    scale = retrieval_scale(n, cfg, log_base)
    keys = np.array([_key_token(code(a, D, D0), (0,) * D, D, cfg) for a in addrs], dtype=cfg.mantissa_dtype)
    kx = project(keys, head.K, cfg)
    with mpmath.workprec(256):
        ln = mpmath.log(n) if log_base == "e" else mpmath.log(n, 2)
        mismatch_bound = 1 / mpmath.power(n, ln)
        bound = 1 - n * mismatch_bound
    defined = len(set(addrs)) == len(addrs)
    worst = None
    worst_mis = Fraction(0)
    for target in sorted(set(addrs)):
        q = np.array([_query_token(code(target, D, D0), D, cfg)], dtype=cfg.mantissa_dtype)
        qx = project(q, head.Q, cfg)[0]
        # the query attends to every key and to itself (score 0)
        scores = score_row(qx, kx, cfg) + [0]
        w = softmax_weights(scores, cfg)
        matches = [j for j, a in enumerate(addrs) if a == target]
        if len(matches) != 1:
            defined = False
            continue
        m = matches[0]
        worst = w[m] if worst is None else min(worst, w[m])
        others = [w[j] for j in range(len(w)) if j != m]
        if others:
            worst_mis = max(worst_mis, max(others))
    if worst is None:
        return ConcentrationReport(
            n, D, cfg.p, cfg.s, log_base, scale, None, None, bound, mismatch_bound,
            False, False, False, False, False, hdp_of(n, cfg, D),
        )
    b_lo, b_hi = mp_to_fraction_bounds(bound)
    mb_lo, _ = mp_to_fraction_bounds(mismatch_bound)
    one = cfg.scale
    return ConcentrationReport(
        n=n,
        D=D,
        p=cfg.p,
        frac_bits=cfg.s,
        log_base=log_base,
        scale=scale,
        match_weight=worst,
        max_mismatch_weight=worst_mis,
        bound=bound,
        mismatch_bound=mismatch_bound,
        meets_bound=worst >= b_hi,
        mismatch_ok=worst_mis <= mb_lo,
        quantizes_to_one=round_div(worst.numerator * one, worst.denominator) == one,
        mismatch_quantizes_to_zero=round_div(worst_mis.numerator * one, worst_mis.denominator) == 0,
        defined=defined,
        hdp=hdp_of(n, cfg, D),
    )
