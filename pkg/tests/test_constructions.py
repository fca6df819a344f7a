import itertools

import mpmath
import numpy as np
import pytest

from hybridattn.constructions import (
    RETRIEVAL_PRECISION_FACTOR,
    DecodeError,
    address_bits,
    build_retrieval_head,
    code,
    decode_bits,
    eva_encoding,
    retrieval_concentration,
    retrieval_precision,
    retrieval_scale,
    solve_eva,
    solve_percom,
)
from hybridattn.attention import project, score_row
from hybridattn.numerics import PrecisionConfig, RepresentabilityError
from hybridattn.tasks import EvaInstance, PerComInstance, gen_instance, oracle_eva, oracle_percom


def key_row(a, D, cfg):
    row = [0] * (3 * D + 2)
    for r in range(D):
        row[r] = a[r] * cfg.scale
    row[3 * D] = cfg.scale
    return row


def query_row(q, D, cfg):
    row = [0] * (3 * D + 2)
    for r in range(D):
        row[2 * D + r] = q[r] * cfg.scale
    row[3 * D + 1] = cfg.scale
    return row


@pytest.mark.parametrize("n", [8, 16, 32, 64])
def test_score_gap_exhaustive(n):
    cfg = retrieval_precision(n)
    D = address_bits(n)
    head = build_retrieval_head(n, D, cfg)
    scale = retrieval_scale(n, cfg)
    with mpmath.workprec(200):
        assert mpmath.mpf(scale.numerator) / scale.denominator >= mpmath.log(n) ** 2
    keys = np.array([key_row(code(a, D), D, cfg) for a in range(2**D)])
    kx = project(keys, head.K, cfg)
    for q in range(2**D):
        qx = project(np.array([query_row(code(q, D), D, cfg)]), head.Q, cfg)[0]
        scores = [cfg.value(s) for s in score_row(qx, kx, cfg)]
        assert scores[q] == scale * D
        for a in range(2**D):
            if a != q:
                hamming = bin(a ^ q).count("1")
                assert scores[a] == scale * (D - hamming)
                assert scores[q] - scores[a] >= scale


def test_code_roundtrip_and_repetition():
    assert code(5, 3) == (1, 0, 1)
    assert decode_bits(code(5, 3)) == 5
    assert code(5, 6, 3) == (1, 0, 1, 1, 0, 1)


@pytest.mark.parametrize("n", [8, 16, 64, 256])
def test_concentration_bounds(n):
    rep = retrieval_concentration(n)
    assert rep.defined and rep.meets_bound and rep.mismatch_ok
    assert rep.quantizes_to_one and rep.mismatch_quantizes_to_zero
    with mpmath.workprec(256):
        assert mpmath.mpf(rep.match_weight.numerator) / rep.match_weight.denominator >= 1 - n / mpmath.power(n, mpmath.log(n))
    obj = rep.to_json()
    for key in ("n", "D", "p", "match_weight_num", "match_weight_den", "bound", "quantizes_to_one"):
        assert key in obj
    assert rep.hdp["H"] == 1 and rep.hdp["polylog_ok"]


@pytest.mark.parametrize("n", [8, 16, 32])
def test_concentration_monotone_in_gap(n):
    D0 = address_bits(n)
    narrow = retrieval_concentration(n, D=D0)
    wide = retrieval_concentration(n, D=2 * D0)
    assert wide.match_weight >= narrow.match_weight


def test_concentration_undefined_on_duplicates():
    rep = retrieval_concentration(8, addresses=[0, 1, 1, 2])
    assert not rep.defined
    assert not retrieval_concentration(8, addresses=[3, 3]).defined


def test_precision_factor_is_smallest():
    assert RETRIEVAL_PRECISION_FACTOR == 3
    failures = 0
    for n in (8, 16, 32):
        cfg = retrieval_precision(n, factor=2)
        try:
            rep = retrieval_concentration(n, cfg=cfg)
            failures += not (rep.quantizes_to_one and rep.mismatch_quantizes_to_zero and rep.meets_bound)
        except (RepresentabilityError, ValueError):
            failures += 1
    assert failures > 0


def test_solve_eva_identity():
    n = 16
    f = tuple(range(1, n + 1))
    for x in range(1, n + 1):
        assert solve_eva(EvaInstance(n, f, x)) == x


def test_solve_eva_all_queries_n32():
    base = gen_instance("eva", 4, n=32)
    for x in range(1, 33):
        inst = EvaInstance(32, base.f, x)
        assert solve_eva(inst) == oracle_eva(inst)


def test_solve_percom_examples():
    ident = tuple(range(1, 9))
    assert solve_percom(PerComInstance(8, ident, ident)) == ident
    rev = tuple(range(8, 0, -1))
    assert solve_percom(PerComInstance(8, rev, ident)) == rev
    for seed in range(3):
        inst = gen_instance("percom", seed, n=32)
        assert solve_percom(inst) == oracle_percom(inst)


def test_solve_base_two_variant():
    inst = gen_instance("eva", 2, n=16)
    assert solve_eva(inst, log_base="2") == oracle_eva(inst)


def test_head_rejects_short_address():
    with pytest.raises(ValueError):
        build_retrieval_head(16, 3, retrieval_precision(16))


def test_head_rejects_small_grid():
    with pytest.raises(RepresentabilityError):
        build_retrieval_head(64, 6, PrecisionConfig(7, 3))


def test_low_precision_fails_loudly():
    # coarse grids either cannot hold the scores or blur the payload
    inst = gen_instance("eva", 0, n=8)
    outcomes = set()
    for p, s in itertools.product(range(4, 9), range(0, 3)):
        try:
            outcomes.add(solve_eva(inst, PrecisionConfig(p, s)) == oracle_eva(inst))
        except (RepresentabilityError, DecodeError):
            outcomes.add("error")
    assert "error" in outcomes


def test_encoding_layout():
    inst = EvaInstance(4, (2, 3, 4, 1), 3)
    enc = eva_encoding(inst)
    assert enc.D == 2 and enc.width == 8
    assert enc.a == ((0, 0), (1, 0), (0, 1), (1, 1))
    assert enc.b[0] == (1, 0) and enc.queries == ((0, 1),)
