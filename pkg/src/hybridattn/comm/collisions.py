"""Brute-force pigeonhole search for indistinguishable inputs.

Two inputs collide when the output player receives exactly the same
payloads for both. If the correct answers differ on some query, the
protocol must be wrong on one of them, and the pair is a witness.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from ..tasks import TwoSumInstance, instance_to_json, oracle, oracle_two_sum
from .engine import (
    CAPS,
    TWO_PARTY_KINDS,
    ProtocolSpec,
    ResourceCapError,
    View,
    assemble,
    fingerprint_key,
    input_space_size,
    lower_bound_forced,
    run_sparse,
    run_two_party,
)
from .strategies import complement, enumerate_queries

MAX_RUNS = 200_000


def party_oracle(spec: ProtocolSpec, alice_input, bob_input):
    """Correct answer of the output player (2-Sum: the flag at ``n + 1``)."""
    out = oracle(assemble(spec, alice_input, bob_input))
    return out[-1] if spec.task == "twosum" else out


def canonical_sets(M: int, max_size: int, length: int) -> list:
    """One representative per nonempty value set of size ``<= max_size``.

    The set is listed in increasing order and padded to ``length`` by
    repeating its largest element.
    """
    out = []
    for size in range(1, min(max_size, M, length) + 1):
        for combo in itertools.combinations(range(1, M + 1), size):
            out.append(combo + (combo[-1],) * (length - size))
    return out


def default_inputs(spec: ProtocolSpec) -> list:
    """Alice inputs to enumerate: every function or permutation, or every value set for 2-Sum."""
    from .strategies import enumerate_inputs

    if spec.task == "twosum":
        return canonical_sets(spec.modulus, spec.n, spec.n)
    return enumerate_inputs(spec.task, spec.n)


def _query_count(spec: ProtocolSpec) -> int:
    if spec.task == "eva":
        return spec.n
    if spec.task == "percom":
        return math.factorial(spec.n)
    return spec.modulus


def _check_caps(spec: ProtocolSpec, runs: int, max_runs: int) -> None:
    cap = CAPS[spec.task]
    if spec.n > cap:
        raise ResourceCapError(f"{spec.task} enumeration is capped at n <= {cap}, got n = {spec.n}")
    if runs > max_runs:
        raise ResourceCapError(f"{runs} protocol runs exceed the cap of {max_runs}")


@dataclass(frozen=True)
class CollisionWitness:
    kind: str
    n: int
    M: int
    input_a: tuple
    input_b: tuple
    query: object
    oracle_a: object
    oracle_b: object
    observer: str
    fingerprint: str

    def instances(self, spec: ProtocolSpec) -> tuple:
        return assemble(spec, self.input_a, self.query), assemble(spec, self.input_b, self.query)

    def to_json(self, spec: ProtocolSpec | None = None) -> dict:
        spec = spec or ProtocolSpec(self.kind, n=self.n, M=self.M)
        inst_a, inst_b = self.instances(spec)
        nbits = len(self.fingerprint)
        return {
            "kind": self.kind,
            "observer": self.observer,
            "query": list(self.query) if isinstance(self.query, tuple) else self.query,
            "oracle_a": list(self.oracle_a) if isinstance(self.oracle_a, tuple) else self.oracle_a,
            "oracle_b": list(self.oracle_b) if isinstance(self.oracle_b, tuple) else self.oracle_b,
            "fingerprint_nbits": nbits,
            "fingerprint_hex": format(int(self.fingerprint, 2), f"0{(nbits + 3) // 4}x") if nbits else "",
            "instance_a": instance_to_json(inst_a),
            "instance_b": instance_to_json(inst_b),
        }


@dataclass(frozen=True)
class CollisionSearch:
    """Outcome of :func:`find_collision`, witness or not."""

    witness: CollisionWitness | None
    inputs: int
    classes: int
    largest_class: int
    forced: bool


def fingerprint_classes(spec: ProtocolSpec, bundle, inputs, query) -> dict:
    """Inputs grouped by the output player's fingerprint under ``query``."""
    classes = {}
    for a in inputs:
        fp = run_two_party(spec, bundle, a, query).transcript.fingerprint(spec.output_player)
        classes.setdefault(fingerprint_key(fp), []).append(a)
    return classes


def search_collision(spec: ProtocolSpec, bundle, inputs=None, queries=None, max_runs: int = MAX_RUNS) -> CollisionSearch:
    """Full search result: the witness (if any) plus class statistics."""
    if spec.kind not in TWO_PARTY_KINDS:
        raise ValueError(f"{spec.kind} is not a two-party model")
    # caps are checked on closed-form counts before anything is enumerated
    n_inputs = len(inputs) if inputs is not None else input_space_size(spec)
    n_queries = len(queries) if queries is not None else _query_count(spec)
    _check_caps(spec, n_inputs * n_queries, max_runs)
    inputs = list(inputs) if inputs is not None else default_inputs(spec)
    queries = list(queries) if queries is not None else enumerate_queries(spec.task, spec.n, spec.modulus)
    witness = None
    n_classes = largest = 0
    for q in queries:
        classes = fingerprint_classes(spec, bundle, inputs, q)
        if not n_classes:
            n_classes = len(classes)
            largest = max(len(c) for c in classes.values())
        for key, members in classes.items():
            by_answer = {}
            for a in members:
                by_answer.setdefault(party_oracle(spec, a, q), a)
                if len(by_answer) > 1:
                    break
            if len(by_answer) > 1:
                (oa, a), (ob, b) = list(by_answer.items())[:2]
                witness = CollisionWitness(
                    spec.kind, spec.n, spec.modulus, tuple(a), tuple(b), q, oa, ob,
                    spec.output_player, key.decode("ascii"),
                )
                break
        if witness is not None:
            break
    return CollisionSearch(witness, len(inputs), n_classes, largest, lower_bound_forced(spec))


def find_collision(spec: ProtocolSpec, bundle, inputs=None, queries=None, max_runs: int = MAX_RUNS):
    """A verified-by-construction :class:`CollisionWitness`, or ``None``.

    Groups every input by the output player's fingerprint and looks, per
    query, for two inputs in one class with different correct answers.
    Raises :class:`ResourceCapError` above the desk-scale caps.
    """
    return search_collision(spec, bundle, inputs, queries, max_runs).witness


def verify_witness(w: CollisionWitness, spec: ProtocolSpec, bundle, oracle_fn=None) -> bool:
    """Re-run both inputs: same fingerprint, different answers, one wrong output."""
    oracle_fn = oracle_fn or (lambda a, q: party_oracle(spec, a, q))
    if tuple(w.input_a) == tuple(w.input_b):
        return False
    ra = run_two_party(spec, bundle, w.input_a, w.query)
    rb = run_two_party(spec, bundle, w.input_b, w.query)
    fa = ra.transcript.fingerprint(w.observer)
    fb = rb.transcript.fingerprint(w.observer)
    ya, yb = oracle_fn(w.input_a, w.query), oracle_fn(w.input_b, w.query)
    if fa != fb or fa != w.fingerprint or ya == yb:
        return False
    return ra.answer != ya or rb.answer != yb


def replay_charles(spec: ProtocolSpec, bundle, bob_input, bob_received) -> str:
    """Charles' fingerprint rebuilt from Bob's view alone."""
    out = []
    for rnd in range(1, spec.rounds + 1):
        out.append(bundle.bob_to_charles(View("bob", bob_input, tuple(bob_received[:rnd])), rnd))
    return "".join(out)


def cot_non_help_violations(spec: ProtocolSpec, bundle, inputs, queries) -> int:
    """Runs where Charles saw something not determined by Bob's view."""
    bad = 0
    for a in inputs:
        for q in queries:
            t = run_two_party(spec, bundle, a, q).transcript
            bob_msgs = [r.bits for r in t.budgeted() if r.receiver == "bob"]
            if replay_charles(spec, bundle, q, bob_msgs) != t.fingerprint("charles"):
                bad += 1
    return bad


# ----------------------------------------------------------------- sparse


@dataclass(frozen=True)
class BlockCollision:
    block_a: tuple
    block_b: tuple
    message: str

    @property
    def sets(self) -> tuple:
        return frozenset(self.block_a), frozenset(self.block_b)


def block_space_size(M: int, B: int) -> int:
    """Nonempty value sets a block of ``B`` tokens over ``[M]`` can hold."""
    return sum(math.comb(M, j) for j in range(1, min(B, M) + 1))


def find_block_collision(spec: ProtocolSpec, bundle, block_index: int = 0):
    """Two blocks with different value sets that send the same message."""
    if spec.n > CAPS["twosum"]:
        raise ResourceCapError(f"2-Sum enumeration is capped at n <= {CAPS['twosum']}")
    _check_caps(spec, block_space_size(spec.modulus, spec.B), MAX_RUNS)
    seen = {}
    for block in canonical_sets(spec.modulus, spec.B, spec.B):
        msg = bundle.block_message(View(block_index, block))
        key = fingerprint_key(msg)
        if key in seen and frozenset(seen[key]) != frozenset(block):
            return BlockCollision(seen[key], block, msg)
        seen.setdefault(key, block)
    return None


@dataclass(frozen=True)
class SparseAdversary:
    v: int
    x_last: int
    instance_a: TwoSumInstance
    instance_b: TwoSumInstance
    a_block: int
    selected: tuple


def sparse_adversary(pair, n: int, M: int, B: int, selected=(0,), a_block: int | None = None) -> SparseAdversary:
    """Two fillings the last player cannot tell apart but must answer differently.

    ``pair`` is ``(A, B)`` block contents with ``v`` in ``set(A) - set(B)``
    (the roles are swapped when only ``set(B) - set(A)`` is nonempty).
    Every block holds the ``B`` content except ``a_block`` (by default the
    last block the last player does not select), which holds ``A`` in the
    first filling. The final token is the complement of ``v``.
    """
    block_a, block_b = tuple(pair[0]), tuple(pair[1])
    if len(block_a) != B or len(block_b) != B:
        raise ValueError(f"block contents must have {B} tokens")
    diff = sorted(set(block_a) - set(block_b))
    if not diff:
        diff = sorted(set(block_b) - set(block_a))
        block_a, block_b = block_b, block_a
    if not diff:
        raise ValueError("blocks hold the same value set; no adversary exists")
    players = n // B
    selected = tuple(sorted(selected))
    if a_block is None:
        free = [j for j in range(players) if j not in selected]
        if not free:
            raise ValueError("every block is selected; nothing left to hide the difference in")
        a_block = free[-1]
    elif a_block in selected:
        raise ValueError("the differing block must not be selected")
    v = diff[0]
    x_last = complement(v, M)
    filling_a = [block_a if j == a_block else block_b for j in range(players)]
    filling_b = [block_b] * players
    inst_a = TwoSumInstance(n, M, tuple(itertools.chain(*filling_a)) + (x_last,))
    inst_b = TwoSumInstance(n, M, tuple(itertools.chain(*filling_b)) + (x_last,))
    return SparseAdversary(v, x_last, inst_a, inst_b, a_block, selected)


def run_adversary(spec: ProtocolSpec, bundle, adv: SparseAdversary) -> dict:
    """Run both fillings: last-player fingerprints, answers and oracle flags."""
    out = {}
    for name, inst in (("a", adv.instance_a), ("b", adv.instance_b)):
        blocks = [inst.x[j * spec.B : (j + 1) * spec.B] for j in range(spec.n // spec.B)]
        r = run_sparse(spec, bundle, blocks, inst.x[-1])
        out[name] = {
            "fingerprint": r.transcript.fingerprint("last"),
            "answer": r.answer,
            "oracle": oracle_two_sum(inst)[-1],
        }
    return out


__all__ = [
    "MAX_RUNS",
    "party_oracle",
    "canonical_sets",
    "default_inputs",
    "CollisionWitness",
    "CollisionSearch",
    "fingerprint_classes",
    "search_collision",
    "find_collision",
    "verify_witness",
    "replay_charles",
    "cot_non_help_violations",
    "BlockCollision",
    "block_space_size",
    "find_block_collision",
    "SparseAdversary",
    "sparse_adversary",
    "run_adversary",
]
