"""The ``(L, a_1..a_L)`` hybrid communication model for L-FuncComp.

Players ``-1..L`` hold ``w``, ``z_0`` and the tables ``z_1..z_L``. Each
epoch starts with a soft round: every player ``i`` shows its information
set to all later players, and each later player ``j`` replies with a
soft transcript ``Pi[j, i]``. The ``a_l`` linear rounds follow, passing
one message per hop from player ``L`` down to player ``-1``. Player
``-1`` answers from what it has received.

Only replies and linear messages are charged against the budget. The
forward legs (``X_i`` shown to later players) are logged with
``budgeted=False``, and the receiving player uses them for that one
reply and then forgets them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from ..numerics import bit_width
from ..tasks import FuncCompInstance, FuncCompSpec, oracle_funccomp, pair_index
from .engine import (
    ProtocolSpec,
    ProtocolViolation,
    Record,
    RunResult,
    Transcript,
    View,
    budget,
    check_payload,
    pad,
)


def players(L: int) -> range:
    return range(-1, L + 1)


def hybrid_spec(funccomp: FuncCompSpec, schedule, H: int = 1, d: int = 2, p: int = 2) -> ProtocolSpec:
    return ProtocolSpec("hybrid_funccomp", n=funccomp.prompt_length, H=H, d=d, p=p, funccomp=funccomp, schedule=tuple(schedule))


def _forward_bits(received) -> str:
    return "".join(received)


def run_hybrid(spec: ProtocolSpec, bundle, inst: FuncCompInstance) -> RunResult:
    """Execute the hybrid schedule on ``inst``.

    Bundle interface: ``soft(view_j, view_i, epoch)`` returns
    ``Pi[j, i]`` from the replier's view and the view shown to it by
    player ``i``; ``linear(view, epoch, round)`` returns the message a
    player passes to the next lower player; ``output(view)`` is player
    ``-1``'s answer and ``answer(output)`` maps it to the task answer.
    """
    if spec.kind != "hybrid_funccomp":
        raise ValueError("run_hybrid needs a hybrid model spec")
    if inst.spec != spec.funccomp:
        raise ValueError("instance does not match the protocol's FuncComp sizes")
    L = spec.funccomp.L
    bud = budget(spec)
    inputs = {i: inst.player_input(i) for i in players(L)}
    X = {i: [] for i in players(L)}
    t = Transcript()
    for epoch, a_l in enumerate(spec.schedule, start=1):
        before = {i: tuple(X[i]) for i in players(L)}
        for i in range(-1, L):
            shown = View(i, inputs[i], before[i])
            for j in range(i + 1, L + 1):
                t.add(Record(epoch, 0, str(i), str(j), "forward", _forward_bits(before[i]), budgeted=False))
                reply = bundle.soft(View(j, inputs[j], before[j]), shown, epoch)
                check_payload(reply, bud.channels[f"soft->{i}"], f"soft {j}->{i} epoch {epoch}")
                t.add(Record(epoch, 0, str(j), str(i), "soft", reply))
                X[i].append(reply)
        for rnd in range(1, a_l + 1):
            for i in range(L, -1, -1):
                msg = bundle.linear(View(i, inputs[i], tuple(X[i])), epoch, rnd)
                check_payload(msg, bud.channels["linear"], f"linear {i}->{i - 1} epoch {epoch} round {rnd}")
                t.add(Record(epoch, rnd, str(i), str(i - 1), "linear", msg))
                X[i - 1].append(msg)
    out = bundle.output(View(-1, inputs[-1], tuple(X[-1])))
    return RunResult(t, out, bundle.answer(out))


# ------------------------------------------------------- retrieval facts


class RetrievalFactBundle:
    """Idealized honest protocol: players relay partial composition values.

    A fact is ``[present | level | value - 1]``. A player that sees
    ``i_(l-1)`` and owns ``z_l`` (plus ``w``, when ``l >= 2``) computes
    ``i_l``. Every reply and linear message carries the highest-level fact
    its sender can produce from the information it is allowed to use.
    """

    def __init__(self, spec: ProtocolSpec):
        self.spec = spec
        self.fc = spec.funccomp
        self.level_bits = bit_width(self.fc.L + 1)
        self.value_bits = bit_width(max(self.fc.Ns))
        self.fact_bits = 1 + self.level_bits + self.value_bits
        self.channels = budget(spec).channels
        smallest = min(self.channels.values())
        if smallest < self.fact_bits:
            raise ProtocolViolation(f"a fact needs {self.fact_bits} bits, smallest channel has {smallest}")

    # facts <-> bits
    def encode(self, fact) -> str:
        if fact is None:
            return "0" * self.fact_bits
        level, value = fact
        return "1" + format(level, f"0{self.level_bits}b") + format(value - 1, f"0{self.value_bits}b")

    def decode(self, bits: str):
        if bits[0] != "1":
            return None
        level = int(bits[1 : 1 + self.level_bits], 2)
        value = int(bits[1 + self.level_bits : self.fact_bits], 2) + 1
        return level, value

    def facts(self, view) -> dict:
        out = {}
        if view.player == 0:
            out[0] = view.own_input
        for bits in view.received:
            fact = self.decode(bits)
            if fact is not None:
                out[fact[0]] = fact[1]
        return out

    def derive(self, player: int, table, known: dict, w) -> dict:
        known = dict(known)
        if player >= 1 and player - 1 in known and player not in known:
            prev = known[player - 1]
            if player == 1:
                known[1] = table[prev - 1]
            elif w is not None:
                idx = pair_index(w[player - 2], prev, self.fc.N(player - 2))
                known[player] = table[idx - 1]
        return known

    def best(self, known: dict):
        if not known:
            return None
        level = max(known)
        return level, known[level]

    def soft(self, view_j, view_i, epoch) -> str:
        known = {**self.facts(view_i), **self.facts(view_j)}
        w = view_i.own_input if view_i.player == -1 else None
        known = self.derive(view_j.player, view_j.own_input, known, w)
        return pad(self.encode(self.best(known)), self.channels[f"soft->{view_i.player}"])

    def linear(self, view, epoch, rnd) -> str:
        known = self.facts(view)
        table = view.own_input if view.player >= 1 else None
        known = self.derive(view.player, table, known, None)
        return pad(self.encode(self.best(known)), self.channels["linear"])

    def determined(self, view) -> bool:
        return self.fc.L in self.facts(view)

    def output(self, view):
        return self.facts(view).get(self.fc.L)

    def answer(self, out):
        return out


class LeakyFactBundle(RetrievalFactBundle):
    """Negative control: replies read ``w`` straight from the instance.

    Built per instance by :func:`leaky_factory`, so it can use the query
    even when the requester is not player ``-1``. The independence check
    must flag it.
    """

    def __init__(self, spec: ProtocolSpec, inst: FuncCompInstance):
        super().__init__(spec)
        self._w = inst.w

    def soft(self, view_j, view_i, epoch) -> str:
        known = {**self.facts(view_i), **self.facts(view_j)}
        known = self.derive(view_j.player, view_j.own_input, known, self._w)
        body = self.encode(self.best(known))
        nbits = self.channels[f"soft->{view_i.player}"]
        room = nbits - len(body)
        extra = format((self._w[0] - 1) % (1 << room), f"0{room}b") if room else ""
        return body + extra


def leaky_factory(spec: ProtocolSpec):
    return lambda inst: LeakyFactBundle(spec, inst)


# ------------------------------------------------------ independence check


@dataclass
class IndependenceReport:
    instances: int
    checked: int
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_json(self) -> dict:
        return {"instances": self.instances, "checked": self.checked, "violations": list(self.violations)}


def toy_family(fc: FuncCompSpec, seed: int = 0, choices: int = 2) -> list:
    """Instances varying every player's input over ``choices`` options.

    The options are drawn once per player, and the family is their full
    product (``choices ** (L + 2)`` instances).
    """
    from ..tasks import gen_instance

    pool = [gen_instance("funccomp", seed + s, spec=fc) for s in range(64)]
    options = {}
    for i in players(fc.L):
        seen = []
        for inst in pool:
            v = inst.player_input(i)
            if v not in seen:
                seen.append(v)
            if len(seen) == choices:
                break
        options[i] = seen
    out = []
    for combo in itertools.product(*(options[i] for i in players(fc.L))):
        pick = dict(zip(players(fc.L), combo))
        tables = tuple(pick[level] for level in range(1, fc.L + 1))
        out.append(FuncCompInstance(fc, pick[0], tables, pick[-1]))
    return out


def soft_transcript_independence_check(spec: ProtocolSpec, bundle_or_factory, family=None) -> IndependenceReport:
    """Check that messages never depend on inputs they may not see.

    ``Pi[j, i]`` may depend only on players ``>= i`` and ``Sigma_(i+1)``
    only on players ``>= i + 1``. Runs are grouped by the inputs a
    channel may depend on; any group with two different payloads on that
    channel is a violation. ``bundle_or_factory`` is a bundle, or a
    callable building one per instance.
    """
    fc = spec.funccomp
    family = family if family is not None else toy_family(fc)
    runs = []
    for inst in family:
        bundle = bundle_or_factory(inst) if callable(bundle_or_factory) else bundle_or_factory
        runs.append((inst, run_hybrid(spec, bundle, inst).transcript))
    groups = {}
    for inst, t in runs:
        for r in t.budgeted():
            lowest = int(r.receiver) if r.kind == "soft" else int(r.sender)
            allowed = tuple(inst.player_input(p) for p in range(lowest, fc.L + 1))
            groups.setdefault((r.key(), allowed), set()).add(r.bits)
    violations = [
        {"epoch": key[0], "round": key[1], "from": key[2], "to": key[3], "kind": key[4], "payloads": len(bits)}
        for (key, _), bits in groups.items()
        if len(bits) > 1
    ]
    return IndependenceReport(len(family), len(groups), violations)


def solves(spec: ProtocolSpec, bundle, inst: FuncCompInstance) -> bool:
    return run_hybrid(spec, bundle, inst).answer == oracle_funccomp(inst)


__all__ = [
    "players",
    "hybrid_spec",
    "run_hybrid",
    "RetrievalFactBundle",
    "LeakyFactBundle",
    "leaky_factory",
    "IndependenceReport",
    "toy_family",
    "soft_transcript_independence_check",
    "solves",
]
