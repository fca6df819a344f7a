"""Protocol schedules, bit budgets, player views and transcripts.

Three families of models are simulated:

* two-party (Alice -> Bob, plus Charles when chain-of-thought is on) for
  the RNN, linear and log-linear lower bounds;
* sparse: one player per block sends a fixed-size message to the last
  player, which then reads the full contents of ``k`` chosen blocks;
* hybrid: players ``-1..L`` exchanging soft and linear transcripts over
  ``L`` epochs (see :mod:`hybridattn.comm.hybrid`).

Strategies never see the instance. Each call receives a :class:`View`
holding the player's own input and the payloads it has received; any
other attribute access raises :class:`ForgetfulnessViolation`. Every
payload is a ``'0'/'1'`` string whose length must equal the channel
budget exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from ..attention import live_state_count
from ..tasks import FuncCompSpec

TWO_PARTY_KINDS = (
    "rnn_eva",
    "loglinear_eva",
    "rnn_percom",
    "loglinear_percom",
    "linear_twosum",
    "loglinear_twosum",
)
KINDS = TWO_PARTY_KINDS + ("sparse_twosum", "hybrid_funccomp")

# desk-scale enumeration caps
CAPS = {"eva": 4, "percom": 4, "twosum": 10}


class ProtocolViolation(ValueError):
    """A strategy emitted a payload that breaks the schedule or its budget."""


class ForgetfulnessViolation(AttributeError):
    """A strategy tried to read outside its information set."""


class ResourceCapError(RuntimeError):
    """Enumeration would exceed the desk-scale caps."""


def task_of_kind(kind: str) -> str:
    return kind.split("_", 1)[1]


@dataclass(frozen=True)
class ProtocolSpec:
    """Model kind plus the sizes that fix its schedule and budgets.

    ``p`` is the bit width of every transmitted number; honest wrappers
    set it to the width of the state grid they stream. ``message_bits``
    and ``block_bits`` override the closed-form per-message budgets.
    """

    kind: str
    n: int = 1
    H: int = 1
    d: int = 1
    p: int = 1
    m_hidden: int = 1
    rounds: int = 1
    cot: bool = False
    M: int | None = None
    B: int | None = None
    k: int | None = None
    message_bits: int | None = None
    block_bits: int | None = None
    funccomp: FuncCompSpec | None = None
    schedule: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if min(self.n, self.H, self.d, self.p, self.m_hidden, self.rounds) < 1:
            raise ValueError("sizes must be positive")
        if self.kind == "sparse_twosum":
            if self.B is None or self.k is None:
                raise ValueError("sparse model needs B and k")
            if self.n % self.B:
                raise ValueError("sparse model assumes B divides n")
        if self.kind == "hybrid_funccomp":
            if self.funccomp is None or self.schedule is None:
                raise ValueError("hybrid model needs a FuncComp spec and a schedule")
            object.__setattr__(self, "schedule", tuple(int(a) for a in self.schedule))
            if len(self.schedule) != self.funccomp.L:
                raise ValueError("schedule needs one linear count per epoch")

    @property
    def task(self) -> str:
        return task_of_kind(self.kind)

    @property
    def modulus(self) -> int:
        return self.M if self.M is not None else self.n

    @property
    def output_player(self) -> str:
        if self.kind == "sparse_twosum":
            return "last"
        if self.kind == "hybrid_funccomp":
            return "-1"
        return "charles" if self.cot else "bob"

    @property
    def alice_tokens(self) -> int:
        return self.n

    def m_of(self, player: int) -> int:
        """Number of tokens held by hybrid player ``player``."""
        if player in (-1, 0):
            return 1
        return self.funccomp.N(player - 1)


@dataclass(frozen=True)
class Budget:
    channels: dict  # channel name -> bits per message
    total: int  # budgeted bits over the whole schedule
    messages: int  # budgeted messages in the schedule

    def to_json(self) -> dict:
        return {"channels": dict(self.channels), "total": self.total, "messages": self.messages}


def loglinear_state_count(spec: ProtocolSpec) -> int:
    """Live states Bob needs at his first position (``R(n+1)``)."""
    return live_state_count(spec.alice_tokens + 1)


def budget(spec: ProtocolSpec) -> Budget:
    """Closed-form message sizes for ``spec``."""
    H, d, p, L = spec.H, spec.d, spec.p, spec.rounds
    kind = spec.kind
    if kind in TWO_PARTY_KINDS:
        if kind.startswith("rnn"):
            alice = H * spec.m_hidden * p
            cot = H * (spec.m_hidden + d) * p
        elif kind.startswith("linear"):
            alice = H * d * (d + 1) * p
            cot = alice + H * d * p
        else:
            alice = loglinear_state_count(spec) * d * d * p * H
            cot = alice + d * p * H
        if spec.message_bits is not None:
            alice = spec.message_bits
        channels = {"alice->bob": alice}
        total = L * alice
        messages = L
        if spec.cot:
            channels["bob->charles"] = cot
            total += L * cot
            messages += L
        return Budget(channels, total, messages)
    if kind == "sparse_twosum":
        c = spec.block_bits if spec.block_bits is not None else H * d * p
        players = spec.n // spec.B
        sel = spec.B * value_bits(spec.modulus)
        k = min(spec.k, players + 1)
        return Budget({"block->last": c, "select": sel}, players * c + k * sel, players + k)
    # hybrid
    L = spec.funccomp.L
    soft = {i: 2 * H * d * p * spec.m_of(i) for i in range(-1, L)}
    linear = H * d * (d + 1) * p
    channels = {f"soft->{i}": bits for i, bits in soft.items()}
    channels["linear"] = linear
    per_epoch_soft = sum(soft[i] * (L - i) for i in range(-1, L))
    soft_msgs = sum(L - i for i in range(-1, L))
    total = L * per_epoch_soft + sum(spec.schedule) * (L + 1) * linear
    messages = L * soft_msgs + sum(spec.schedule) * (L + 1)
    return Budget(channels, total, messages)


def value_bits(M: int) -> int:
    """Bits for one 2-Sum value in ``[M]`` (``ceil(log2(M + 1))``)."""
    return max(1, math.ceil(math.log2(M + 1)))


def input_space_size(spec: ProtocolSpec) -> int:
    """Distinct inputs the receiving side must tell apart."""
    task, n = spec.task, spec.n
    if spec.kind == "sparse_twosum":
        return sum(math.comb(spec.modulus, j) for j in range(spec.B + 1))
    if task == "eva":
        return n**n
    if task == "percom":
        return math.factorial(n)
    if task == "twosum":
        M = spec.modulus
        return sum(math.comb(M, j) for j in range(1, min(n, M) + 1))
    raise ValueError(f"no closed-form input space for {spec.kind}")


def lower_bound_forced(spec: ProtocolSpec) -> bool:
    """Exact pigeonhole test ``2**bits < |input space|`` (log base never enters)."""
    if spec.kind == "sparse_twosum":
        bits = budget(spec).channels["block->last"]
    else:
        bits = budget(spec).channels["alice->bob"] * spec.rounds
    return (1 << bits) < input_space_size(spec)


# ------------------------------------------------------------------ views


class View:
    """What one player may look at: its own input and received payloads."""

    __slots__ = ("_player", "_own", "_received")

    def __init__(self, player, own_input, received=()):
        object.__setattr__(self, "_player", player)
        object.__setattr__(self, "_own", own_input)
        object.__setattr__(self, "_received", tuple(received))

    @property
    def player(self):
        return self._player

    @property
    def own_input(self):
        return self._own

    @property
    def received(self) -> tuple:
        return self._received

    def __getattr__(self, name):
        raise ForgetfulnessViolation(f"player {self._player} cannot read {name!r}")

    def __setattr__(self, name, value):
        raise ForgetfulnessViolation("views are read-only")

    def __repr__(self):
        return f"View(player={self._player!r}, received={len(self._received)})"


# ------------------------------------------------------------ transcripts


@dataclass(frozen=True)
class Record:
    epoch: int
    round: int
    sender: str
    receiver: str
    kind: str
    bits: str
    budgeted: bool = True

    def key(self) -> tuple:
        return (self.epoch, self.round, self.sender, self.receiver, self.kind)

    def to_json(self) -> dict:
        nbits = len(self.bits)
        hex_digits = (nbits + 3) // 4
        bits_hex = format(int(self.bits, 2), f"0{hex_digits}x") if nbits else ""
        return {
            "epoch": self.epoch,
            "round": self.round,
            "from": self.sender,
            "to": self.receiver,
            "kind": self.kind,
            "nbits": nbits,
            "bits_hex": bits_hex,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Record":
        nbits = int(obj["nbits"])
        bits = format(int(obj["bits_hex"], 16), f"0{nbits}b") if nbits else ""
        return cls(int(obj["epoch"]), int(obj["round"]), obj["from"], obj["to"], obj["kind"], bits, obj["kind"] != "forward")


@dataclass
class Transcript:
    records: list = field(default_factory=list)

    def add(self, record: Record) -> None:
        self.records.append(record)

    def budgeted(self) -> list:
        return [r for r in self.records if r.budgeted]

    def fingerprint(self, player) -> str:
        """Concatenated budgeted payloads received by ``player``, in schedule order."""
        player = str(player)
        return "".join(r.bits for r in self.records if r.budgeted and r.receiver == player)

    def by_key(self) -> dict:
        return {r.key(): r.bits for r in self.budgeted()}

    def total_bits(self) -> int:
        return sum(len(r.bits) for r in self.budgeted())

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_json()) + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        return cls([Record.from_json(json.loads(line)) for line in text.splitlines() if line.strip()])


def transcript_fingerprint(t: Transcript, player) -> str:
    return t.fingerprint(player)


def fingerprint_key(bits: str) -> bytes:
    """Exact byte key for a fingerprint (no hashing, so no false collisions)."""
    return bits.encode("ascii")


def check_payload(bits, expected: int, what: str) -> str:
    if not isinstance(bits, str) or any(c not in "01" for c in bits):
        raise ProtocolViolation(f"{what}: payload must be a '0'/'1' string")
    if len(bits) != expected:
        raise ProtocolViolation(f"{what}: payload has {len(bits)} bits, budget is {expected}")
    return bits


# ------------------------------------------------------------ bit helpers


def int_to_bits(value: int, width: int, signed: bool = True) -> str:
    """Fixed-width two's-complement (or unsigned) encoding."""
    value = int(value)
    if width < 1:
        raise ProtocolViolation("field width must be positive")
    if signed:
        lo, hi = -(1 << (width - 1)), (1 << (width - 1)) - 1
    else:
        lo, hi = 0, (1 << width) - 1
    if not lo <= value <= hi:
        raise ProtocolViolation(f"{value} does not fit in {width} bits")
    return format(value & ((1 << width) - 1), f"0{width}b")


def bits_to_int(bits: str, signed: bool = True) -> int:
    v = int(bits, 2) if bits else 0
    if signed and bits and bits[0] == "1":
        v -= 1 << len(bits)
    return v


def pack(values, width: int, signed: bool = True) -> str:
    return "".join(int_to_bits(v, width, signed) for v in values)


def unpack(bits: str, width: int, count: int, signed: bool = True) -> list:
    return [bits_to_int(bits[i * width : (i + 1) * width], signed) for i in range(count)]


def pad(bits: str, budget_bits: int) -> str:
    if len(bits) > budget_bits:
        raise ProtocolViolation(f"message of {len(bits)} bits exceeds budget {budget_bits}")
    return bits + "0" * (budget_bits - len(bits))


# ------------------------------------------------------------- two-party


def split_input(spec: ProtocolSpec, inst) -> tuple:
    """``(alice_input, bob_input)`` for a task instance."""
    task = spec.task
    if task == "eva":
        return inst.f, inst.x
    if task == "percom":
        return inst.sigma, inst.tau
    if task == "twosum":
        return inst.x[:-1], inst.x[-1]
    raise ValueError(f"{spec.kind} is not a two-party model")


def assemble(spec: ProtocolSpec, alice_input, bob_input):
    from ..tasks import EvaInstance, PerComInstance, TwoSumInstance

    task = spec.task
    if task == "eva":
        return EvaInstance(spec.n, tuple(alice_input), int(bob_input))
    if task == "percom":
        return PerComInstance(spec.n, tuple(alice_input), tuple(bob_input))
    if task == "twosum":
        return TwoSumInstance(spec.n, spec.modulus, tuple(alice_input) + (int(bob_input),))
    raise ValueError(f"{spec.kind} is not a two-party model")


@dataclass
class RunResult:
    transcript: Transcript
    output: object
    answer: object


def run_two_party(spec: ProtocolSpec, bundle, alice_input, bob_input) -> RunResult:
    """Alice streams one message per round; Bob (or Charles) answers.

    Bundle interface: ``alice(view, round)``, ``bob_output(view)`` and,
    with chain-of-thought, ``bob_to_charles(view, round)`` and
    ``charles_output(view)``; ``answer(output)`` maps the raw output to a
    task answer.
    """
    if spec.kind not in TWO_PARTY_KINDS:
        raise ValueError(f"{spec.kind} is not a two-party model")
    bud = budget(spec)
    t = Transcript()
    bob_received = []
    charles_received = []
    for rnd in range(1, spec.rounds + 1):
        msg = bundle.alice(View("alice", alice_input), rnd)
        check_payload(msg, bud.channels["alice->bob"], f"alice round {rnd}")
        t.add(Record(rnd, rnd, "alice", "bob", "message", msg))
        bob_received.append(msg)
        if spec.cot:
            fwd = bundle.bob_to_charles(View("bob", bob_input, bob_received), rnd)
            check_payload(fwd, bud.channels["bob->charles"], f"bob round {rnd}")
            t.add(Record(rnd, rnd, "bob", "charles", "cot", fwd))
            charles_received.append(fwd)
    if spec.cot:
        out = bundle.charles_output(View("charles", None, charles_received))
    else:
        out = bundle.bob_output(View("bob", bob_input, bob_received))
    return RunResult(t, out, bundle.answer(out))


# ---------------------------------------------------------------- sparse


def run_sparse(spec: ProtocolSpec, bundle, blocks, last_token) -> RunResult:
    """Block players message the last player, which then reads ``k`` blocks.

    Bundle interface: ``block_message(view)`` (the view's player id is the
    0-based block index), ``select(view)`` (returns
    block indices; index ``n/B`` is the last player's own block) and
    ``output(view)``. Selected contents arrive as payloads of
    ``B * value_bits(M)`` bits, in block order; choosing the own block is
    allowed and logged like any other selection.
    """
    if spec.kind != "sparse_twosum":
        raise ValueError("run_sparse needs a sparse model spec")
    bud = budget(spec)
    players = spec.n // spec.B
    if len(blocks) != players or any(len(b) != spec.B for b in blocks):
        raise ProtocolViolation(f"need {players} blocks of {spec.B} tokens")
    t = Transcript()
    received = []
    for j, block in enumerate(blocks):
        msg = bundle.block_message(View(j, tuple(block)))
        check_payload(msg, bud.channels["block->last"], f"block {j}")
        t.add(Record(1, 1, f"block{j}", "last", "block", msg))
        received.append(msg)
    chosen = list(bundle.select(View("last", last_token, received)))
    k = min(spec.k, players + 1)
    if len(chosen) != k or len(set(chosen)) != k or any(not 0 <= j <= players for j in chosen):
        raise ProtocolViolation(f"selection must name {k} distinct blocks in [0, {players}], got {chosen}")
    width = value_bits(spec.modulus)
    for j in sorted(chosen):
        # the last player's own block holds only its token, zero padded
        contents = blocks[j] if j < players else (last_token,) + (0,) * (spec.B - 1)
        payload = pack(contents, width, signed=False)
        check_payload(payload, bud.channels["select"], f"selected block {j}")
        sender = f"block{j}" if j < players else "last"
        t.add(Record(1, 2, sender, "last", "select", payload))
        received.append(payload)
    out = bundle.output(View("last", last_token, received))
    return RunResult(t, out, bundle.answer(out))


__all__ = [
    "TWO_PARTY_KINDS",
    "KINDS",
    "CAPS",
    "ProtocolViolation",
    "ForgetfulnessViolation",
    "ResourceCapError",
    "task_of_kind",
    "ProtocolSpec",
    "Budget",
    "loglinear_state_count",
    "budget",
    "value_bits",
    "input_space_size",
    "lower_bound_forced",
    "View",
    "Record",
    "Transcript",
    "transcript_fingerprint",
    "fingerprint_key",
    "check_payload",
    "int_to_bits",
    "bits_to_int",
    "pack",
    "unpack",
    "pad",
    "split_input",
    "assemble",
    "RunResult",
    "run_two_party",
    "run_sparse",
]
