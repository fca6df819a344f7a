"""Exit criteria, one test per criterion, each reporting a PASS/FAIL line."""

import time
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from hybridattn import cli
from hybridattn.attention import (
    DegenerateInputError,
    FEATURE_MAPS,
    LayerConfig,
    linear_as_rnn,
    linear_layer,
    linear_states,
    live_state_count,
    loglinear_states,
    random_heads,
    random_sequence,
    rnn_run,
)
from hybridattn.comm import (
    InjectiveBundle,
    ProtocolSpec,
    RandomHashBundle,
    RetrievalFactBundle,
    SetEncodingBundle,
    TruncationBundle,
    budget,
    find_block_collision,
    find_collision,
    honest_rnn_bundles,
    hybrid_spec,
    run_adversary,
    run_hybrid,
    soft_transcript_independence_check,
    sparse_adversary,
    verify_witness,
)
from hybridattn.comm.collisions import TwoSumInstance
from hybridattn.constructions import retrieval_concentration, solve_eva, solve_percom
from hybridattn.numerics import PrecisionConfig
from hybridattn.tasks import (
    FuncCompSpec,
    check_hybrid_budget,
    check_size_bound,
    default_hybrid_schedule,
    derive_params,
    gen_instance,
    oracle_eva,
    oracle_percom,
    oracle_two_sum,
    param_equalities,
)

pytestmark = pytest.mark.acceptance

RETRIEVAL_SIZES = (8, 16, 32, 64, 128, 256)
PARAM_CONFIGS = ((1, 2, 1, 2), (1, 2, 1, 3), (2, 2, 2, 2))


def _mp(q: Fraction):
    return mpmath.mpf(q.numerator) / q.denominator


def test_criterion_1_retrieval_upper_bound(report):
    t0 = time.perf_counter()
    bad = []
    for n in RETRIEVAL_SIZES:
        hits = 0
        for seed in range(100):
            inst = gen_instance("eva", seed, n=n)
            hits += solve_eva(inst) == oracle_eva(inst)
        rep = retrieval_concentration(n)
        with mpmath.workprec(256):
            bound = 1 - n / mpmath.power(n, mpmath.log(n))
            exact_ok = _mp(rep.match_weight) >= bound
        if hits != 100 or not exact_ok or not rep.quantizes_to_one:
            bad.append((n, hits, exact_ok, rep.quantizes_to_one))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 10
    report(1, ok, f"n in {RETRIEVAL_SIZES}, 100/100 each, {elapsed:.1f}s" + (f", failures {bad}" if bad else ""))
    assert ok


@pytest.mark.slow
def test_criterion_1_every_size_untimed(report):
    # same check on every integer size in range; too slow for the timed budget
    bad = []
    for n in range(8, 257):
        for seed in range(100):
            inst = gen_instance("eva", seed, n=n)
            if solve_eva(inst) != oracle_eva(inst):
                bad.append((n, seed))
        rep = retrieval_concentration(n)
        if not (rep.meets_bound and rep.quantizes_to_one):
            bad.append((n, "bound"))
    report("1 (every n in 8..256, untimed)", not bad, f"{len(bad)} failures")
    assert not bad


def test_criterion_2_percom_upper_bound(report):
    t0 = time.perf_counter()
    bad = []
    for n in (8, 16, 32, 64):
        for seed in range(50):
            inst = gen_instance("percom", seed, n=n)
            if solve_percom(inst) != oracle_percom(inst):
                bad.append((n, seed))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 30
    report(2, ok, f"4 x 50 instances, {elapsed:.1f}s, {len(bad)} mismatches")
    assert ok


def test_criterion_3_linear_as_rnn(report):
    rng = np.random.default_rng(20240)
    maps = sorted(FEATURE_MAPS)
    mismatches = dims_bad = redrawn = compared = 0
    # draws whose normalizer vanishes in all three paths are redrawn so 200 configs are compared
    while compared < 200:
        d, H, n = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 17))
        fm = maps[int(rng.integers(len(maps)))]
        cfg = PrecisionConfig(int(rng.integers(6, 12)), int(rng.integers(0, 4)))
        lay = LayerConfig("linear", random_heads(rng, H, d, cfg, 6), cfg, feature_map=fm)
        x = random_sequence(rng, n, lay.width, cfg, 6)
        adapter = linear_as_rnn(lay)
        outs = []
        for run in (lambda: linear_layer(x, lay, "direct"), lambda: linear_layer(x, lay, "recurrent"),
                    lambda: rnn_run(adapter, x)):
            try:
                outs.append(run().tolist())
            except DegenerateInputError:
                outs.append("degenerate")
        if outs == ["degenerate"] * 3:
            redrawn += 1
            continue
        compared += 1
        dims_bad += adapter.hidden_dim != H * (d * d + d)
        mismatches += not (outs[0] == outs[1] == outs[2])
    ok = mismatches == 0 and dims_bad == 0
    report(3, ok, f"200 configs, {mismatches} mismatches, {dims_bad} bad hidden dims, {redrawn} degenerate draws redrawn")
    assert ok


def test_criterion_4_loglinear_state_accounting(report):
    count_bad = 0
    for i in range(1, 1025):
        # ceil(log2 i + 1) + 1, with ceil(log2 i) read off the bit length of i - 1
        count_bad += live_state_count(i) != (i - 1).bit_length() + 2
    rng = np.random.default_rng(7)
    tele_bad = 0
    for _ in range(50):
        d, n = int(rng.integers(1, 4)), int(rng.integers(1, 33))
        cfg = PrecisionConfig(8, 2)
        lay = LayerConfig("loglinear", random_heads(rng, 1, d, cfg, 6), cfg)
        x = random_sequence(rng, n, lay.width, cfg, 6)
        lin = linear_states(x, lay.with_kind("linear", feature_map="identity"))
        traces = loglinear_states(x, lay)[0]
        for i in range(1, n + 1):
            total = [[sum(S[a][b] for S in traces[i - 1]) for b in range(d)] for a in range(d)]
            S = lin[i - 1][0].S
            tele_bad += total != [[S[b][a] for b in range(d)] for a in range(d)]
    ok = count_bad == 0 and tele_bad == 0
    report(4, ok, f"count mismatches {count_bad}/1024, telescoping mismatches {tele_bad} over 50 sequences")
    assert ok


def _pigeonhole_bundles():
    # Eva at n = 3 has 27 inputs, so every budget up to 4 bits is below n log n
    for total in (2, 3, 4):
        yield from honest_rnn_bundles("rnn_eva", 3, total_bits=total)
    for bits in (1, 2, 3, 4):
        spec = ProtocolSpec("rnn_eva", n=3, message_bits=bits)
        yield f"hash-{bits}", spec, RandomHashBundle(spec)
        yield f"truncation-{bits}", spec, TruncationBundle(spec)


def test_criterion_5_pigeonhole(report):
    t0 = time.perf_counter()
    missing = []
    count = 0
    for name, spec, bundle in _pigeonhole_bundles():
        count += 1
        w = find_collision(spec, bundle)
        if w is None or not verify_witness(w, spec, bundle):
            missing.append(name)
    spec = ProtocolSpec("rnn_eva", n=2, message_bits=8)
    none_ok = find_collision(spec, InjectiveBundle(spec)) is None
    elapsed = time.perf_counter() - t0
    ok = not missing and none_ok and elapsed < 5
    report(5, ok, f"{count} bundles at n=3, {len(missing)} without witness, injective n=2 none={none_ok}, {elapsed:.2f}s")
    assert ok


def test_criterion_6_sparse_separation(report):
    t0 = time.perf_counter()
    bad = []
    cases = 0
    for c in range(1, 8):
        spec = ProtocolSpec("sparse_twosum", n=8, M=8, B=4, k=1, block_bits=c)
        for encoder in ("truncated-bitmask", "hash", "sum-mod", "honest-mean"):
            cases += 1
            bundle = SetEncodingBundle(spec, encoder)
            col = find_block_collision(spec, bundle)
            if col is None or set(col.block_a) == set(col.block_b):
                bad.append((c, encoder, "no collision"))
                continue
            adv = sparse_adversary((col.block_a, col.block_b), 8, 8, 4, selected=bundle.select(None))
            ya, yb = oracle_two_sum(adv.instance_a), oracle_two_sum(adv.instance_b)
            res = run_adversary(spec, bundle, adv)
            if not (isinstance(adv.instance_a, TwoSumInstance) and ya[8] != yb[8]
                    and res["a"]["fingerprint"] == res["b"]["fingerprint"]):
                bad.append((c, encoder, "adversary"))
    spec8 = ProtocolSpec("sparse_twosum", n=8, M=8, B=4, k=1, block_bits=8)
    none_ok = find_block_collision(spec8, SetEncodingBundle(spec8, "bitmask")) is None
    elapsed = time.perf_counter() - t0
    ok = not bad and none_ok and elapsed < 10
    report(6, ok, f"{cases} (c, encoder) cases, {len(bad)} failures, bitmask c=8 none={none_ok}, {elapsed:.2f}s")
    assert ok


def test_criterion_7_parameter_calculus(report):
    t0 = time.perf_counter()
    bad = []
    for H, d, p, L in PARAM_CONFIGS:
        ps = derive_params(H, d, p, L)
        eq = param_equalities(ps)
        if not all(eq.values()):
            bad.append(((H, d, p, L), "equalities", [k for k, v in eq.items() if not v]))
        if not check_size_bound(ps).holds:
            bad.append(((H, d, p, L), "size bound"))
        if not check_hybrid_budget(ps, default_hybrid_schedule(L)).holds:
            bad.append(((H, d, p, L), "default schedule"))
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 60
    report("7 (equalities, size bound, default schedule)", ok, f"{len(PARAM_CONFIGS)} configs, {elapsed:.2f}s" + (f", {bad}" if bad else ""))
    assert ok


def test_criterion_7_adversarial_schedule_violates(report):
    # a_2 = K must break the linear-layer budget for every config
    held = []
    for H, d, p, L in PARAM_CONFIGS:
        ps = derive_params(H, d, p, L)
        a = (1, ps.K) + default_hybrid_schedule(L)[2:]
        rep = check_hybrid_budget(ps, a)
        if rep.holds:
            held.append((H, d, p, L))
    ok = not held
    report("7 (a_2 = K violation)", ok, "budget still holds at a_2 = K for " + str(held) if held else "")
    assert ok


def test_criterion_8_transcript_budget_exactness(report):
    fc = FuncCompSpec(2, 2, (2,))
    spec = hybrid_spec(fc, (1, 0))
    bundle = RetrievalFactBundle(spec)
    inst = gen_instance("funccomp", 0, spec=fc)
    t = run_hybrid(spec, bundle, inst).transcript
    bud = budget(spec)
    wrong = [r for r in t.budgeted()
             if len(r.bits) != bud.channels["linear" if r.kind == "linear" else f"soft->{r.receiver}"]]
    closed = (bud.channels["linear"] == spec.H * spec.d * (spec.d + 1) * spec.p
              and all(bud.channels[f"soft->{i}"] == 2 * spec.H * spec.d * spec.p * spec.m_of(i) for i in (-1, 0, 1)))
    indep = soft_transcript_independence_check(spec, bundle)
    ok = not wrong and closed and indep.ok and t.total_bits() == bud.total
    report(8, ok, f"{len(t.budgeted())} budgeted messages, {len(wrong)} off-budget, independence violations {len(indep.violations)}")
    assert ok


def test_criterion_9_desk_scale_table(report):
    rows = cli.hierarchy_rows(0)
    outcomes = {r[4] for r in rows}
    mechanisms = {r[0] for r in rows}
    ok = outcomes <= {"solved", "failed", "collision", "no-collision", "n/a"} and {"full", "linear", "loglinear", "sparse"} <= mechanisms
    report(9, ok, f"hierarchy table: {len(rows)} qualitative rows; full-scale magnitudes are out of reach by design")
    assert ok
