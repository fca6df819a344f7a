import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridattn import comm
from hybridattn.attention import (
    DegenerateInputError,
    LayerConfig,
    SparseConfig,
    adapter_state_cfg,
    linear_layer,
    loglinear_layer,
    random_heads,
    rnn_run,
    sparse_layer,
)
from hybridattn.comm import (
    CAPS,
    ForgetfulnessViolation,
    HonestLinearBundle,
    HonestLogLinearBundle,
    HonestRnnBundle,
    HonestSparseBundle,
    InjectiveBundle,
    ProtocolSpec,
    ProtocolViolation,
    RandomHashBundle,
    Record,
    ResourceCapError,
    RetrievalFactBundle,
    SetEncodingBundle,
    Transcript,
    TruncationBundle,
    View,
    block_space_size,
    budget,
    canonical_sets,
    complement,
    cot_non_help_violations,
    decode_code,
    enumerate_inputs,
    enumerate_queries,
    find_block_collision,
    find_collision,
    honest_rnn_bundles,
    hybrid_spec,
    input_code,
    input_space_size,
    leaky_factory,
    lower_bound_forced,
    run_adversary,
    run_hybrid,
    run_sparse,
    run_two_party,
    search_collision,
    soft_transcript_independence_check,
    solves,
    sparse_adversary,
    tiny_rnn,
    toy_family,
    transcript_fingerprint,
    verify_witness,
)
from hybridattn.numerics import PrecisionConfig
from hybridattn.tasks import FuncCompSpec, TwoSumInstance, encode_prompt, gen_instance, oracle_two_sum

# ------------------------------------------------------------------ budgets


@pytest.mark.parametrize("H,m,p,d,L", [(1, 2, 2, 1, 1), (2, 3, 4, 2, 3), (1, 1, 8, 3, 2)])
def test_rnn_budget(H, m, p, d, L):
    b = budget(ProtocolSpec("rnn_eva", n=3, H=H, d=d, p=p, m_hidden=m, rounds=L, cot=True))
    assert b.channels == {"alice->bob": H * m * p, "bob->charles": H * (m + d) * p}
    assert b.total == L * H * m * p + L * H * (m + d) * p and b.messages == 2 * L


@pytest.mark.parametrize("H,d,p", [(1, 1, 1), (2, 3, 5)])
def test_linear_budget(H, d, p):
    b = budget(ProtocolSpec("linear_twosum", n=4, H=H, d=d, p=p, cot=True))
    assert b.channels["alice->bob"] == H * d * (d + 1) * p
    assert b.channels["bob->charles"] == H * d * (d + 1) * p + H * d * p


@pytest.mark.parametrize("n", [1, 2, 3, 4, 7, 8, 100])
def test_loglinear_budget(n):
    b = budget(ProtocolSpec("loglinear_percom", n=n, H=2, d=3, p=4))
    R = math.ceil(math.log2(n + 1) + 1) + 1
    assert b.channels["alice->bob"] == R * 9 * 4 * 2


def test_sparse_and_hybrid_budgets():
    b = budget(ProtocolSpec("sparse_twosum", n=8, B=4, k=1, M=8, H=1, d=2, p=3))
    assert b.channels["block->last"] == 6 and b.channels["select"] == 4 * 4
    fc = FuncCompSpec(3, 2, (2, 3))
    spec = hybrid_spec(fc, (1, 2, 0), H=2, d=2, p=3)
    b = budget(spec)
    m_of = {-1: 1, 0: 1, 1: 2, 2: 4}
    for i, m in m_of.items():
        assert b.channels[f"soft->{i}"] == 2 * 2 * 2 * 3 * m
    assert b.channels["linear"] == 2 * 2 * 3 * 3


def test_pigeonhole_threshold_is_exact():
    spec = ProtocolSpec("rnn_eva", n=3, m_hidden=2, p=2)
    assert input_space_size(spec) == 27 and lower_bound_forced(spec)
    assert not lower_bound_forced(ProtocolSpec("rnn_eva", n=2, m_hidden=1, p=2))
    sp = ProtocolSpec("sparse_twosum", n=8, B=4, k=1, M=8, block_bits=7)
    assert input_space_size(sp) == 163 and lower_bound_forced(sp)
    assert not lower_bound_forced(dataclasses.replace(sp, block_bits=8))


# ------------------------------------------------------- engine contracts


def test_view_blocks_outside_reads():
    v = View("alice", (1, 2, 3))
    assert v.own_input == (1, 2, 3) and v.received == ()
    with pytest.raises(ForgetfulnessViolation):
        v.bob_input
    with pytest.raises(ForgetfulnessViolation):
        v.own_input_extra = 1


class PeekingBundle(TruncationBundle):
    def alice(self, view, rnd):
        return view.query  # not part of Alice's view


class LongBundle(TruncationBundle):
    def alice(self, view, rnd):
        return super().alice(view, rnd) + "0"


class NonBinaryBundle(TruncationBundle):
    def alice(self, view, rnd):
        return "2" * self.budget.channels["alice->bob"]


@pytest.mark.parametrize("cls,err", [(PeekingBundle, ForgetfulnessViolation), (LongBundle, ProtocolViolation), (NonBinaryBundle, ProtocolViolation)])
def test_engine_rejects_misbehaving_strategies(cls, err):
    spec = ProtocolSpec("rnn_eva", n=3, message_bits=4)
    with pytest.raises(err):
        run_two_party(spec, cls(spec), (1, 2, 3), 2)


def test_transcript_fingerprints():
    assert transcript_fingerprint(Transcript(), "bob") == ""
    spec = ProtocolSpec("rnn_eva", n=3, message_bits=4, rounds=3, cot=True)
    b = TruncationBundle(spec)
    t1 = run_two_party(spec, b, (3, 1, 2), 1).transcript
    t2 = run_two_party(spec, b, (3, 1, 2), 1).transcript
    assert t1.fingerprint("bob") == t2.fingerprint("bob") and len(t1.records) == budget(spec).messages
    rec = t1.records[0]
    flipped = rec.bits[:-1] + ("1" if rec.bits[-1] == "0" else "0")
    t3 = Transcript([dataclasses.replace(rec, bits=flipped)] + t1.records[1:])
    assert t3.fingerprint("bob") != t1.fingerprint("bob")
    assert t3.fingerprint("charles") == t1.fingerprint("charles")


def test_transcript_jsonl_roundtrip():
    t = Transcript([Record(1, 0, "0", "-1", "soft", "0101"), Record(1, 0, "-1", "0", "forward", "", budgeted=False),
                    Record(2, 1, "1", "0", "linear", "1" * 13)])
    back = Transcript.from_jsonl(t.to_jsonl())
    assert back.records == t.records and back.total_bits() == 17


@given(st.lists(st.integers(-8, 7), max_size=6))
def test_pack_roundtrip(values):
    assert comm.unpack(comm.pack(values, 4), 4, len(values)) == values


def test_int_to_bits_range():
    with pytest.raises(ProtocolViolation):
        comm.int_to_bits(8, 4)
    assert comm.int_to_bits(-1, 3) == "111"


# --------------------------------------------------------- input codes


@pytest.mark.parametrize("task,n", [("eva", 3), ("percom", 4)])
def test_input_codes_are_injective(task, n):
    codes = set()
    for inp in enumerate_inputs(task, n):
        value, width = input_code(task, inp, n)
        assert value < 2**width and decode_code(task, value, n) == inp
        codes.add(value)
    assert len(codes) == len(enumerate_inputs(task, n))


def test_complement():
    assert [complement(q, 8) for q in (1, 4, 8)] == [7, 4, 8]


def test_canonical_sets_cover_every_value_set():
    sets = canonical_sets(5, 3, 3)
    assert len(sets) == sum(math.comb(5, j) for j in range(1, 4))
    assert len({frozenset(s) for s in sets}) == len(sets)
    assert all(len(s) == 3 for s in sets)


# ---------------------------------------------------- honest consistency


CFG8 = PrecisionConfig(8, 0)


@pytest.mark.parametrize("task", ["eva", "percom"])
@pytest.mark.parametrize("rule", ["sum", "last", "mix"])
def test_honest_rnn_matches_rnn_run(task, rule):
    n = 3
    kind = f"rnn_{task}"
    rnn = tiny_rnn(rule, 2, 2)
    spec = ProtocolSpec(kind, n=n, p=2, m_hidden=2)
    bundle = HonestRnnBundle(spec, rnn)
    for seed in range(5):
        inst = gen_instance(task, seed, n=n)
        a, b = comm.split_input(spec, inst)
        seq = encode_prompt(inst, CFG8).tokens
        expected = tuple(tuple(r) for r in rnn_run(rnn, seq)[n:].tolist())
        assert run_two_party(spec, bundle, a, b).output == expected


def _twosum_inst(seed, n=5, M=7):
    return gen_instance("twosum", seed, n=n, M=M)


@pytest.mark.parametrize("fm", ["exp", "relu1"])
@pytest.mark.parametrize("cot", [False, True])
def test_honest_linear_matches_layer(fm, cot):
    cfg = PrecisionConfig(10, 2)
    layer = LayerConfig("linear", random_heads(np.random.default_rng(3), 1, 3, cfg, 6), cfg, feature_map=fm)
    spec = ProtocolSpec("linear_twosum", n=5, M=7, H=1, d=3, p=adapter_state_cfg(cfg).total_bits, cot=cot)
    bundle = HonestLinearBundle(spec, layer)
    compared = 0
    for seed in range(12):
        inst = _twosum_inst(seed)
        seq = encode_prompt(inst, cfg).tokens
        try:
            expected = linear_layer(seq, layer, positions=[5]).tolist()
        except DegenerateInputError:
            with pytest.raises(DegenerateInputError):
                run_two_party(spec, bundle, inst.x[:-1], inst.x[-1])
            continue
        compared += 1
        r = run_two_party(spec, bundle, inst.x[:-1], inst.x[-1])
        got = [list(row) for row in r.output]
        if cot:
            assert got == [expected[-1][:3]]
        else:
            assert got == expected
        for rec in r.transcript.budgeted():
            assert len(rec.bits) == budget(spec).channels[f"{rec.sender}->{rec.receiver}"]
    assert compared >= 4


@pytest.mark.parametrize("task,kind", [("twosum", "loglinear_twosum"), ("eva", "loglinear_eva"), ("percom", "loglinear_percom")])
def test_honest_loglinear_matches_layer(task, kind):
    cfg = PrecisionConfig(10, 2)
    layer = LayerConfig("loglinear", random_heads(np.random.default_rng(5), 1, 3, cfg, 5), cfg)
    spec = ProtocolSpec(kind, n=4, M=7, H=1, d=3, p=adapter_state_cfg(cfg).total_bits)
    bundle = HonestLogLinearBundle(spec, layer)
    for seed in range(4):
        inst = gen_instance(task, seed, n=4, M=7) if task == "twosum" else gen_instance(task, seed, n=4)
        a, b = comm.split_input(spec, inst)
        seq = encode_prompt(inst, cfg).tokens
        expected = loglinear_layer(seq, layer)[4:].tolist()
        assert [list(r) for r in run_two_party(spec, bundle, a, b).output] == expected


@pytest.mark.parametrize("k,lam", [(1, 0), (2, "1/2"), (3, 1)])
def test_honest_sparse_matches_layer(k, lam):
    from fractions import Fraction

    cfg = PrecisionConfig(10, 2)
    sp = SparseConfig(4, k, Fraction(lam))
    layer = LayerConfig("sparse", random_heads(np.random.default_rng(7), 1, 3, cfg, 6), cfg, sparse=sp)
    spec = ProtocolSpec("sparse_twosum", n=8, M=8, B=4, k=k, H=1, d=3, p=cfg.total_bits)
    bundle = HonestSparseBundle(spec, layer)
    for seed in range(5):
        inst = gen_instance("twosum", seed, n=8, M=8)
        seq = encode_prompt(inst, cfg).tokens
        expected = sparse_layer(seq, layer, positions=[8]).tolist()[0]
        blocks = [inst.x[0:4], inst.x[4:8]]
        r = run_sparse(spec, bundle, blocks, inst.x[-1])
        assert list(r.output) == expected
        assert r.transcript.total_bits() == sum(len(rec.bits) for rec in r.transcript.records)


# --------------------------------------------------------------- collisions


@pytest.mark.parametrize("name,spec,bundle", honest_rnn_bundles("rnn_eva", 3), ids=lambda v: v if isinstance(v, str) else "")
def test_honest_rnn_collisions(name, spec, bundle):
    w = find_collision(spec, bundle)
    assert w is not None and verify_witness(w, spec, bundle)


@pytest.mark.parametrize("make", [lambda s: RandomHashBundle(s, 1), TruncationBundle])
@pytest.mark.parametrize("kind", ["rnn_eva", "rnn_percom"])
def test_adversarial_bundle_collisions(make, kind):
    spec = ProtocolSpec(kind, n=3, message_bits=2)
    bundle = make(spec)
    w = find_collision(spec, bundle)
    assert w is not None and verify_witness(w, spec, bundle)
    obj = w.to_json(spec)
    assert obj["instance_a"]["task"] == spec.task and obj["fingerprint_nbits"] == 2


def test_injective_has_no_collision():
    spec = ProtocolSpec("rnn_eva", n=2, message_bits=8)
    res = search_collision(spec, InjectiveBundle(spec))
    assert res.witness is None and res.classes == 4 and not res.forced
    with pytest.raises(ProtocolViolation):
        InjectiveBundle(ProtocolSpec("rnn_eva", n=3, message_bits=4))


def test_collision_classes_pigeonhole():
    spec = ProtocolSpec("rnn_eva", n=3, message_bits=4)
    res = search_collision(spec, TruncationBundle(spec))
    assert res.forced and res.classes <= 16 and res.largest_class >= 2


def test_twosum_collision_over_value_sets():
    spec = ProtocolSpec("linear_twosum", n=4, M=6, message_bits=3)
    bundle = TruncationBundle(spec)
    w = find_collision(spec, bundle)
    assert w is not None and verify_witness(w, spec, bundle)
    assert frozenset(w.input_a) != frozenset(w.input_b)


def test_verify_witness_negative_controls():
    spec = ProtocolSpec("rnn_eva", n=3, message_bits=2)
    bundle = TruncationBundle(spec)
    w = find_collision(spec, bundle)
    agree = [q for q in range(1, 4) if w.input_a[q - 1] == w.input_b[q - 1]]
    for q in agree:
        assert not verify_witness(dataclasses.replace(w, query=q), spec, bundle)
    same = dataclasses.replace(w, input_b=w.input_a)
    assert not verify_witness(same, spec, bundle)
    assert not verify_witness(w, spec, bundle, oracle_fn=lambda a, q: 0)


def test_collision_caps():
    with pytest.raises(ResourceCapError):
        find_collision(ProtocolSpec("rnn_eva", n=CAPS["eva"] + 1, message_bits=4), None)
    with pytest.raises(ResourceCapError):
        find_collision(ProtocolSpec("rnn_percom", n=4, message_bits=4), None, max_runs=10)


@pytest.mark.parametrize("make", [lambda s: HonestRnnBundle(s, tiny_rnn("mix", 1, 4)), TruncationBundle, lambda s: RandomHashBundle(s, 2)])
def test_cot_non_help(make):
    spec = ProtocolSpec("rnn_eva", n=3, p=4, m_hidden=1, cot=True, rounds=2)
    bundle = make(spec)
    inputs = enumerate_inputs("eva", 3)
    assert cot_non_help_violations(spec, bundle, inputs, enumerate_queries("eva", 3)) == 0
    w = find_collision(spec, bundle)
    assert w is not None and w.observer == "charles" and verify_witness(w, spec, bundle)


# ----------------------------------------------------------------- sparse


def test_block_space_size():
    assert block_space_size(8, 4) == 162
    assert block_space_size(8, 4) + 1 == sum(math.comb(8, j) for j in range(5))


@pytest.mark.parametrize("c", range(1, 8))
@pytest.mark.parametrize("encoder", ["truncated-bitmask", "hash", "sum-mod", "honest-mean"])
def test_block_collisions_below_threshold(c, encoder):
    spec = ProtocolSpec("sparse_twosum", n=8, M=8, B=4, k=1, block_bits=c)
    bundle = SetEncodingBundle(spec, encoder)
    col = find_block_collision(spec, bundle)
    assert col is not None and col.sets[0] != col.sets[1]
    adv = sparse_adversary((col.block_a, col.block_b), 8, 8, 4, selected=bundle.select(None))
    res = run_adversary(spec, bundle, adv)
    assert res["a"]["fingerprint"] == res["b"]["fingerprint"]
    assert res["a"]["oracle"] != res["b"]["oracle"]
    assert res["a"]["answer"] != res["a"]["oracle"] or res["b"]["answer"] != res["b"]["oracle"]


def test_bitmask_is_injective_at_c8():
    spec = ProtocolSpec("sparse_twosum", n=8, M=8, B=4, k=1, block_bits=8)
    assert find_block_collision(spec, SetEncodingBundle(spec, "bitmask")) is None
    with pytest.raises(ProtocolViolation):
        SetEncodingBundle(dataclasses.replace(spec, block_bits=7), "bitmask")


def test_sparse_adversary_example():
    adv = sparse_adversary(((1, 2, 3, 4), (1, 2, 3, 5)), 8, 8, 4)
    assert adv.v == 4 and adv.x_last == 4
    ya, yb = oracle_two_sum(adv.instance_a), oracle_two_sum(adv.instance_b)
    assert ya[-1] != yb[-1]
    # the selected block 0 holds the B content in both fillings
    assert adv.instance_a.x[:4] == adv.instance_b.x[:4] == (1, 2, 3, 5)
    with pytest.raises(ValueError):
        sparse_adversary(((1, 2, 3, 4), (4, 3, 2, 1)), 8, 8, 4)


def test_sparse_adversary_swaps_roles():
    adv = sparse_adversary(((1, 1, 2, 2), (1, 2, 3, 3)), 8, 8, 4)
    assert adv.v == 3 and adv.x_last == 5
    assert isinstance(adv.instance_a, TwoSumInstance)


def test_run_sparse_validates_selection():
    spec = ProtocolSpec("sparse_twosum", n=8, M=8, B=4, k=1, block_bits=8)

    class Greedy(SetEncodingBundle):
        def select(self, view):
            return [0, 1]

    with pytest.raises(ProtocolViolation):
        run_sparse(spec, Greedy(spec, "bitmask"), [(1, 2, 3, 4), (5, 6, 7, 8)], 1)


# ----------------------------------------------------------------- hybrid


TOY = FuncCompSpec(2, 2, (2,))


def test_hybrid_budget_exactness():
    spec = hybrid_spec(TOY, (1, 0))
    bundle = RetrievalFactBundle(spec)
    inst = gen_instance("funccomp", 3, spec=TOY)
    t = run_hybrid(spec, bundle, inst).transcript
    bud = budget(spec)
    for r in t.budgeted():
        key = "linear" if r.kind == "linear" else f"soft->{r.receiver}"
        assert len(r.bits) == bud.channels[key]
    assert bud.channels["soft->-1"] == 2 * 1 * 2 * 2 * 1
    assert bud.channels["soft->1"] == 2 * 1 * 2 * 2 * 2
    assert bud.channels["linear"] == 1 * 2 * 3 * 2
    assert t.total_bits() == bud.total and len(t.budgeted()) == bud.messages
    assert all(r.kind == "forward" for r in t.records if not r.budgeted)


def test_hybrid_solves_with_one_linear_round():
    spec = hybrid_spec(TOY, (1, 0))
    bundle = RetrievalFactBundle(spec)
    assert all(solves(spec, bundle, inst) for inst in toy_family(TOY, choices=2))


def test_hybrid_without_linear_rounds_fails_somewhere():
    spec = hybrid_spec(TOY, (0, 0))
    bundle = RetrievalFactBundle(spec)
    assert not all(solves(spec, bundle, inst) for inst in toy_family(TOY, choices=2))


def test_independence_honest_and_leaky():
    spec = hybrid_spec(TOY, (1, 0))
    rep = soft_transcript_independence_check(spec, RetrievalFactBundle(spec))
    assert rep.ok and rep.instances == 16 and rep.checked > 0
    leaky = soft_transcript_independence_check(spec, leaky_factory(spec))
    assert not leaky.ok
    assert all(v["kind"] == "soft" for v in leaky.violations)


def test_hybrid_l3_runs():
    fc = FuncCompSpec(3, 2, (2, 2))
    spec = hybrid_spec(fc, (1, 1, 0), d=2, p=3)
    bundle = RetrievalFactBundle(spec)
    for seed in range(6):
        assert solves(spec, bundle, gen_instance("funccomp", seed, spec=fc))
    assert soft_transcript_independence_check(spec, bundle).ok


def test_fact_bundle_rejects_tiny_channels():
    with pytest.raises(ProtocolViolation):
        RetrievalFactBundle(hybrid_spec(FuncCompSpec(2, 4, (4,)), (1, 0), d=1, p=1))
