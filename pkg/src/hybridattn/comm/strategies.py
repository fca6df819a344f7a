"""Strategy bundles for the two-party and sparse models.

Honest bundles wrap a concrete layer from :mod:`hybridattn.attention` and
stream its exact state, so their outputs match the layer bit for bit.
The remaining bundles are the adversarial zoo that collision search is
run against: random hashes, truncated and injective encodings, and the
set encoders used for block messages.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from fractions import Fraction

import numpy as np

from ..attention import (
    COMPRESSIONS,
    LayerConfig,
    LinearHeadState,
    RnnLayerSpec,
    adapter_state_cfg,
    compress_blocks,
    linear_features,
    linear_states,
    live_state_count,
    loglinear_states,
    loglinear_step,
    mlp_apply,
    project,
    rnn_output,
    rnn_states,
    rnn_step,
    score_row,
    select_blocks,
    sparse_position_output,
)
from ..numerics import PrecisionConfig, bit_width, saturate
from .engine import (
    ProtocolSpec,
    ProtocolViolation,
    budget,
    pack,
    pad,
    unpack,
    value_bits,
)

# ------------------------------------------------------------------ tokens


def player_rows(task: str, role: str, inp, n: int) -> list:
    """Prompt rows ``[owner, position, value]`` held by one party.

    Mirrors :func:`hybridattn.tasks.encode_prompt` so a party can build its
    own slice of the prompt without seeing the other party's input.
    """
    if task == "eva":
        if role == "alice":
            return [(1, i, v) for i, v in enumerate(inp, start=1)]
        return [(-1, 1, int(inp))]
    if task == "percom":
        owner = 1 if role == "alice" else 2
        return [(owner, i, v) for i, v in enumerate(inp, start=1)]
    if task == "twosum":
        if role == "alice":
            return [(1, i, v) for i, v in enumerate(inp, start=1)]
        return [(1, n + 1, int(inp))]
    raise ValueError(f"no two-party split for {task}")


def rows_to_mantissas(rows, cfg: PrecisionConfig, width: int | None = None) -> np.ndarray:
    width = width or len(rows[0])
    out = []
    for r in rows:
        vals = (list(r) + [0] * width)[:width]
        out.append([saturate(int(v) * cfg.scale, cfg) for v in vals])
    return np.array(out, dtype=cfg.mantissa_dtype)


def _decode_rows_answer(task, rows, cfg, n):
    def val(k):
        return int(round(cfg.value(int(k))))

    if task == "eva":
        return val(rows[0][0])
    if task == "percom":
        return tuple(val(r[0]) for r in rows)
    return int(val(rows[-1][0]) != 0)


class _Base:
    """Shared task plumbing for two-party bundles."""

    def __init__(self, spec: ProtocolSpec):
        self.spec = spec
        self.budget = budget(spec)

    @property
    def task(self):
        return self.spec.task

    def bob_first_position(self) -> int:
        return self.spec.alice_tokens + 1


# --------------------------------------------------------------- honest RNN


class HonestRnnBundle(_Base):
    """Alice runs the RNN over her tokens and sends ``h_n``; Bob continues.

    Numbers travel as ``state_cfg.total_bits``-bit two's-complement
    mantissas, so ``spec.p`` must equal that width and ``spec.m_hidden``
    the hidden dimension.
    """

    def __init__(self, spec: ProtocolSpec, rnn: RnnLayerSpec, width: int = 3):
        super().__init__(spec)
        if spec.p != rnn.state_cfg.total_bits or spec.m_hidden != rnn.hidden_dim or spec.H != 1:
            raise ValueError("spec must use H=1, m = hidden_dim and p = state width")
        self.rnn = rnn
        self.width = width

    def _tokens(self, role, inp):
        rows = player_rows(self.task, role, inp, self.spec.n)
        return rows_to_mantissas(rows, self.rnn.input_cfg, self.width)

    def _encode_state(self, h):
        cfg = self.rnn.state_cfg
        return pack([int(v * cfg.scale) for v in h], cfg.total_bits)

    def _decode_state(self, bits):
        cfg = self.rnn.state_cfg
        return tuple(cfg.value(k) for k in unpack(bits, cfg.total_bits, self.rnn.hidden_dim))

    def alice(self, view, rnd):
        h = rnn_states(self.rnn, self._tokens("alice", view.own_input))[-1]
        return self._encode_state(h)

    def _continue(self, view):
        h = self._decode_state(view.received[-1][: self.rnn.hidden_dim * self.rnn.state_cfg.total_bits])
        rows = []
        for off, row in enumerate(self._tokens("bob", view.own_input)):
            i = self.bob_first_position() + off
            h = rnn_step(self.rnn, i, row, h)
            rows.append(tuple(rnn_output(self.rnn, i, row, h)))
        return h, tuple(rows)

    def bob_output(self, view):
        return self._continue(view)[1]

    def bob_to_charles(self, view, rnd):
        h, rows = self._continue(view)
        p = self.rnn.state_cfg.total_bits
        y = [max(min(v, (1 << (p - 1)) - 1), -(1 << (p - 1))) for v in rows[-1]]
        msg = self._encode_state(h) + pack(y[: self.spec.d], p)
        return pad(msg, self.budget.channels["bob->charles"])

    def charles_output(self, view):
        p = self.rnn.state_cfg.total_bits
        bits = view.received[-1][self.rnn.hidden_dim * p :]
        return (tuple(unpack(bits, p, self.spec.d)),)

    def answer(self, out):
        return _decode_rows_answer(self.task, out, self.rnn.out_cfg, self.spec.n)


def _token_value(x):
    return x[2] if len(x) > 2 else x[-1]


def _tiny_transition(rule, p):
    lim = (1 << (p - 1)) - 1

    def clamp(v):
        return max(-lim, min(lim, v))

    def wrap(v):
        return v % (lim + 1)

    if rule == "sum":
        return lambda i, x, h: tuple(clamp(h[r] + _token_value(x) * (r + 1)) for r in range(len(h)))
    if rule == "last":
        return lambda i, x, h: tuple(clamp(_token_value(x)) for _ in h)
    if rule == "mix":
        return lambda i, x, h: tuple(wrap(3 * h[r] + _token_value(x) + r) for r in range(len(h)))
    raise ValueError(f"unknown tiny RNN rule {rule!r}")


TINY_RNN_RULES = ("sum", "last", "mix")


def tiny_rnn(rule: str, m: int, p: int, in_cfg: PrecisionConfig | None = None) -> RnnLayerSpec:
    """Small integer RNN with ``m`` hidden units of ``p`` bits each."""
    in_cfg = in_cfg or PrecisionConfig(8, 0)
    out_cfg = PrecisionConfig(max(p, 8), 0)
    return RnnLayerSpec(
        hidden_dim=m,
        h0=(Fraction(0),) * m,
        transition=_tiny_transition(rule, p),
        readout=lambda i, x, h: (h[0] + _token_value(x),) + tuple(h[1:]),
        state_cfg=PrecisionConfig(p, 0),
        out_cfg=out_cfg,
        in_cfg=in_cfg,
    )


def honest_rnn_bundles(kind: str, n: int, total_bits: int = 4, cot: bool = False) -> list:
    """Honest wrappers around tiny RNNs whose state has ``m * p <= total_bits`` bits."""
    out = []
    for m in range(1, total_bits // 2 + 1):
        p = total_bits // m
        if p < 2:
            continue
        for rule in TINY_RNN_RULES:
            rnn = tiny_rnn(rule, m, p)
            spec = ProtocolSpec(kind, n=n, H=1, d=1, p=p, m_hidden=m, cot=cot)
            out.append((f"honest-rnn-{rule}-m{m}p{p}", spec, HonestRnnBundle(spec, rnn)))
    return out


# ------------------------------------------------------------ honest linear


def _pack_linear_state(states, cfg, width):
    s = cfg.frac_bits
    vals = []
    for st in states:
        for row in st.S:
            vals.extend(row)
        vals.extend(z << s for z in st.Z)
    return pack(vals, width)


def _unpack_linear_state(bits, H, d, cfg, width):
    s = cfg.frac_bits
    vals = unpack(bits, width, H * (d * d + d))
    out = []
    for h in range(H):
        chunk = vals[h * (d * d + d) : (h + 1) * (d * d + d)]
        S = [chunk[b * d : (b + 1) * d] for b in range(d)]
        Z = [z >> s for z in chunk[d * d :]]
        out.append(LinearHeadState(S, Z))
    return out


class HonestLinearBundle(_Base):
    """Alice sends the exact ``(S, Z)`` of every head; Bob finishes the layer.

    Entries travel on the adapter's state grid (``2p + 16`` bits, ``2s``
    fraction bits) so ``spec.p`` must equal that width.
    """

    def __init__(self, spec: ProtocolSpec, layer: LayerConfig):
        super().__init__(spec)
        if layer.kind != "linear":
            raise ValueError("needs a linear layer")
        self.layer = layer
        self.state_cfg = adapter_state_cfg(layer.cfg)
        if (spec.H, spec.d, spec.p) != (layer.H, layer.d, self.state_cfg.total_bits):
            raise ValueError("spec H, d, p must match the layer and its state width")

    def _tokens(self, role, inp):
        rows = player_rows(self.task, role, inp, self.spec.n)
        return rows_to_mantissas(rows, self.layer.cfg, self.layer.width)

    def alice(self, view, rnd):
        states = linear_states(self._tokens("alice", view.own_input), self.layer)[-1]
        return _pack_linear_state(states, self.layer.cfg, self.state_cfg.total_bits)

    def _continue(self, view):
        layer, cfg = self.layer, self.layer.cfg
        states = _unpack_linear_state(view.received[-1], layer.H, layer.d, cfg, self.state_cfg.total_bits)
        rows = []
        for row in self._tokens("bob", view.own_input):
            y = []
            for st, head in zip(states, layer.heads):
                fq, fk, fv = linear_features(row, head, cfg, layer.feature_map)
                st.update(fk, fv)
                y.extend(st.readout(fq, cfg))
            rows.append(tuple(mlp_apply(layer.mlp, row, y, cfg)))
        return states, tuple(rows)

    def bob_output(self, view):
        return self._continue(view)[1]

    def bob_to_charles(self, view, rnd):
        states, rows = self._continue(view)
        w = self.state_cfg.total_bits
        y = [v << self.layer.cfg.frac_bits for v in rows[-1][: self.layer.d * self.layer.H]]
        msg = _pack_linear_state(states, self.layer.cfg, w) + pack(y, w)
        return pad(msg, self.budget.channels["bob->charles"])

    def charles_output(self, view):
        w = self.state_cfg.total_bits
        H, d = self.layer.H, self.layer.d
        tail = view.received[-1][H * (d * d + d) * w :]
        return (tuple(v >> self.layer.cfg.frac_bits for v in unpack(tail, w, H * d)),)

    def answer(self, out):
        return _decode_rows_answer(self.task, out, self.layer.cfg, self.spec.n)


# -------------------------------------------------------- honest log-linear


class HonestLogLinearBundle(_Base):
    """Alice sends the ``R(n+1)`` log-linear states of every head."""

    def __init__(self, spec: ProtocolSpec, layer: LayerConfig):
        super().__init__(spec)
        if layer.kind != "loglinear":
            raise ValueError("needs a loglinear layer")
        self.layer = layer
        self.state_cfg = adapter_state_cfg(layer.cfg)
        if (spec.H, spec.d, spec.p) != (layer.H, layer.d, self.state_cfg.total_bits):
            raise ValueError("spec H, d, p must match the layer and its state width")
        self.R = live_state_count(spec.alice_tokens + 1)

    def _tokens(self, role, inp):
        rows = player_rows(self.task, role, inp, self.spec.n)
        return rows_to_mantissas(rows, self.layer.cfg, self.layer.width)

    def alice(self, view, rnd):
        traces = loglinear_states(self._tokens("alice", view.own_input), self.layer)
        d = self.layer.d
        vals = []
        for trace in traces:
            states = trace[-1]
            for r in range(self.R):
                S = states[r] if r < len(states) else [[0] * d for _ in range(d)]
                for row in S:
                    vals.extend(row)
        return pad(pack(vals, self.state_cfg.total_bits), self.budget.channels["alice->bob"])

    def _continue(self, view):
        layer, cfg = self.layer, self.layer.cfg
        d, w = layer.d, self.state_cfg.total_bits
        vals = unpack(view.received[-1], w, layer.H * self.R * d * d)
        per_head = []
        for h in range(layer.H):
            base = h * self.R * d * d
            per_head.append(
                [
                    [vals[base + r * d * d + a * d : base + r * d * d + (a + 1) * d] for a in range(d)]
                    for r in range(self.R)
                ]
            )
        rows = []
        toks = self._tokens("bob", view.own_input)
        for off, row in enumerate(toks):
            i = self.bob_first_position() + off
            y = []
            arr = np.asarray(row).reshape(1, -1)
            for h, head in enumerate(layer.heads):
                q = [int(c) for c in project(arr, head.Q, cfg)[0]]
                k = [int(c) for c in project(arr, head.K, cfg)[0]]
                v = [int(c) for c in project(arr, head.V, cfg)[0]]
                per_head[h], out = loglinear_step(i, per_head[h], q, k, v, cfg, layer.update, layer.lam_rule)
                y.extend(out)
            rows.append(tuple(mlp_apply(layer.mlp, row, y, cfg)))
        return per_head, tuple(rows)

    def bob_output(self, view):
        return self._continue(view)[1]

    def bob_to_charles(self, view, rnd):
        per_head, rows = self._continue(view)
        d, w = self.layer.d, self.state_cfg.total_bits
        vals = []
        for states in per_head:
            for r in range(self.R):
                S = states[r] if r < len(states) else [[0] * d for _ in range(d)]
                for row in S:
                    vals.extend(row)
        y = [v << self.layer.cfg.frac_bits for v in rows[-1][: d * self.layer.H]]
        return pad(pack(vals, w) + pack(y, w), self.budget.channels["bob->charles"])

    def charles_output(self, view):
        d, w, H = self.layer.d, self.state_cfg.total_bits, self.layer.H
        tail = view.received[-1][H * self.R * d * d * w :]
        return (tuple(v >> self.layer.cfg.frac_bits for v in unpack(tail, w, H * d)),)

    def answer(self, out):
        return _decode_rows_answer(self.task, out, self.layer.cfg, self.spec.n)


# ---------------------------------------------------------------- codes


def input_code(task: str, inp, n: int, M: int | None = None) -> tuple:
    """Injective integer code of a party's input and its bit width."""
    if task == "eva":
        value = sum((v - 1) * n**i for i, v in enumerate(inp))
        return value, bit_width(n**n)
    if task == "percom":
        items = list(range(1, n + 1))
        rank = 0
        for i, v in enumerate(inp):
            idx = items.index(v)
            rank += idx * math.factorial(n - 1 - i)
            items.pop(idx)
        return rank, bit_width(math.factorial(n))
    if task == "twosum":
        M = M or n
        mask = 0
        for v in inp:
            mask |= 1 << ((int(v) - 1) % M)
        return mask, M
    raise ValueError(task)


def decode_code(task: str, value: int, n: int, M: int | None = None):
    if task == "eva":
        out = []
        for _ in range(n):
            value, r = divmod(value, n)
            out.append(r % n + 1)
        return tuple(out)
    if task == "percom":
        items = list(range(1, n + 1))
        out = []
        value %= math.factorial(n)
        for i in range(n):
            f = math.factorial(n - 1 - i)
            idx, value = divmod(value, f)
            out.append(items.pop(idx))
        return tuple(out)
    if task == "twosum":
        M = M or n
        return frozenset(v + 1 for v in range(M) if (value >> v) & 1)
    raise ValueError(task)


def complement(q: int, M: int) -> int:
    """The value ``v`` in ``[M]`` with ``v + q = 0 mod M``."""
    c = (-int(q)) % M
    return M if c == 0 else c


def answer_from_input(task: str, alice_input, bob_input, n: int, M: int | None = None):
    """Correct answer computed from a (possibly reconstructed) Alice input."""
    if task == "eva":
        return alice_input[bob_input - 1]
    if task == "percom":
        return tuple(alice_input[t - 1] for t in bob_input)
    M = M or n
    values = alice_input if isinstance(alice_input, frozenset) else frozenset(alice_input)
    return int(complement(bob_input, M) in values)


def _hash_bits(*parts, nbits: int) -> str:
    digest = hashlib.sha256("|".join(repr(p) for p in parts).encode()).digest()
    while len(digest) * 8 < nbits:
        digest += hashlib.sha256(digest).digest()
    return "".join(format(b, "08b") for b in digest)[:nbits]


class RandomHashBundle(_Base):
    """Alice sends a salted SHA-256 of her input; Bob guesses from a hash."""

    def __init__(self, spec: ProtocolSpec, salt: int = 0):
        super().__init__(spec)
        self.salt = salt

    def alice(self, view, rnd):
        return _hash_bits(self.salt, rnd, tuple(view.own_input), nbits=self.budget.channels["alice->bob"])

    def _guess(self, msgs, own):
        n = self.spec.n
        h = int(_hash_bits(self.salt, "bob", msgs, own, nbits=64), 2)
        if self.task == "eva":
            return h % n + 1
        if self.task == "percom":
            perm = list(range(1, n + 1))
            for i in range(n - 1, 0, -1):
                h, j = divmod(h, i + 1)
                perm[i], perm[j] = perm[j], perm[i]
            return tuple(perm)
        return h & 1

    def bob_output(self, view):
        return self._guess(view.received, view.own_input)

    def bob_to_charles(self, view, rnd):
        return _hash_bits(self.salt, "cot", view.received, view.own_input, nbits=self.budget.channels["bob->charles"])

    def charles_output(self, view):
        return self._guess(view.received, None)

    def answer(self, out):
        return out


class TruncationBundle(_Base):
    """Alice sends the low bits of an injective code of her input.

    With a budget at least the code width this is lossless
    (:class:`InjectiveBundle` insists on that).
    """

    def alice(self, view, rnd):
        value, _ = input_code(self.task, view.own_input, self.spec.n, self.spec.modulus)
        nbits = self.budget.channels["alice->bob"]
        value &= (1 << nbits) - 1
        return format(value, f"0{nbits}b")

    def _reconstruct(self, bits):
        return decode_code(self.task, int(bits, 2) if bits else 0, self.spec.n, self.spec.modulus)

    def _probe(self):
        n = self.spec.n
        if self.task == "twosum":
            return (1,) * n
        return tuple(range(1, n + 1))

    def bob_output(self, view):
        guess = self._reconstruct(view.received[-1])
        return answer_from_input(self.task, guess, view.own_input, self.spec.n, self.spec.modulus)

    def bob_to_charles(self, view, rnd):
        # Bob forwards his own answer, coded as an integer and truncated
        ans = self.bob_output(view)
        n, nbits = self.spec.n, self.budget.channels["bob->charles"]
        if self.task == "eva":
            value = ans - 1
        elif self.task == "percom":
            value, _ = input_code("percom", ans, n)
        else:
            value = ans
        return format(value & ((1 << nbits) - 1), f"0{nbits}b")

    def charles_output(self, view):
        value = int(view.received[-1], 2)
        n = self.spec.n
        if self.task == "eva":
            return value % n + 1
        if self.task == "percom":
            return decode_code("percom", value, n)
        return value & 1

    def answer(self, out):
        return out


class InjectiveBundle(TruncationBundle):
    def __init__(self, spec: ProtocolSpec):
        super().__init__(spec)
        _, width = input_code(self.task, self._probe(), spec.n, spec.modulus)
        if self.budget.channels["alice->bob"] < width:
            raise ProtocolViolation(f"injective code needs {width} bits, budget is {self.budget.channels['alice->bob']}")


# ----------------------------------------------------------- sparse bundles


def _set_mask(values, M):
    mask = 0
    for v in values:
        mask |= 1 << ((int(v) - 1) % M)
    return mask


SET_ENCODERS = ("bitmask", "truncated-bitmask", "hash", "sum-mod", "honest-mean")


class SetEncodingBundle:
    """Block players send a ``c``-bit digest of their block.

    ``bitmask`` needs ``c >= M`` and is injective on value sets;
    ``truncated-bitmask`` keeps the low ``c`` bits; ``hash`` a salted
    SHA-256 prefix; ``sum-mod`` the value sum mod ``2**c``;
    ``honest-mean`` the rounded block mean, saturated to ``c`` bits. The
    last player selects the first ``k`` blocks and reports whether the
    complement of its token occurs in a selected block or in any block
    whose digest it can decode.
    """

    def __init__(self, spec: ProtocolSpec, encoder: str):
        if encoder not in SET_ENCODERS:
            raise ValueError(f"unknown encoder {encoder!r}")
        self.spec = spec
        self.encoder = encoder
        self.c = budget(spec).channels["block->last"]
        self.M = spec.modulus
        if encoder == "bitmask" and self.c < self.M:
            raise ProtocolViolation(f"bitmask needs {self.M} bits, budget is {self.c}")

    def digest(self, block) -> str:
        c, M = self.c, self.M
        if self.encoder in ("bitmask", "truncated-bitmask"):
            return format(_set_mask(block, M) & ((1 << c) - 1), f"0{c}b")
        if self.encoder == "hash":
            return _hash_bits("block", tuple(sorted(set(block))), nbits=c)
        if self.encoder == "sum-mod":
            return format(sum(block) % (1 << c), f"0{c}b")
        mean = COMPRESSIONS["mean"]([[v] for v in block], None)[0]
        return format(min(mean, (1 << c) - 1), f"0{c}b")

    def block_message(self, view):
        return self.digest(view.own_input)

    def select(self, view):
        players = self.spec.n // self.spec.B
        return list(range(min(self.spec.k, players + 1)))

    def output(self, view):
        players = self.spec.n // self.spec.B
        msgs = view.received[:players]
        payloads = view.received[players:]
        width = value_bits(self.M)
        seen = set()
        for bits in payloads:
            seen.update(v for v in unpack(bits, width, self.spec.B, signed=False) if v)
        if self.encoder in ("bitmask", "truncated-bitmask"):
            for bits in msgs:
                mask = int(bits, 2)
                seen.update(v + 1 for v in range(self.c) if (mask >> v) & 1)
        return int(complement(view.own_input, self.M) in seen)

    def answer(self, out):
        return out


class HonestSparseBundle:
    """Exact single-head sparse layer as a protocol.

    Block players send their compressed token (``d`` mantissas of ``p``
    bits); the last player scores every block against its own token,
    reads the raw tokens of the ``k`` winners and evaluates the layer.
    """

    def __init__(self, spec: ProtocolSpec, layer: LayerConfig):
        if layer.kind != "sparse" or layer.H != 1:
            raise ValueError("needs a single-head sparse layer")
        sp = layer.sparse
        if (sp.B, sp.k) != (spec.B, spec.k):
            raise ValueError("spec B, k must match the layer")
        if (spec.H, spec.d, spec.p) != (1, layer.d, layer.cfg.total_bits):
            raise ValueError("spec H, d, p must match the layer")
        self.spec, self.layer = spec, layer
        self.cfg = layer.cfg

    def _rows(self, start, values):
        rows = [(1, start + t + 1, v) for t, v in enumerate(values)]
        return rows_to_mantissas(rows, self.cfg, self.layer.width)

    def _own(self, x_last):
        return self._rows(self.spec.n, (x_last,))

    def block_message(self, view):
        j = view.player
        toks = self._rows(j * self.spec.B, view.own_input)
        comp = compress_blocks(toks, self.layer.sparse, self.cfg, len(toks))[0]
        return pack(comp, self.cfg.total_bits)

    def _compressed(self, view):
        players = self.spec.n // self.spec.B
        comp = [unpack(bits, self.cfg.total_bits, self.layer.width) for bits in view.received[:players]]
        own = compress_blocks(self._own(view.own_input), self.layer.sparse, self.cfg, 1)[0]
        return comp + [own]

    def select(self, view):
        comp = self._compressed(view)
        head, sp = self.layer.heads[0], self.layer.sparse
        if sp.score == "constant":
            scores = [0] * len(comp)
        else:
            q = project(self._own(view.own_input), head.Q, self.cfg)[0]
            scores = score_row(q, project(np.asarray(comp), head.K, self.cfg), self.cfg)
        return select_blocks(scores, sp.k)

    def output(self, view):
        players = self.spec.n // self.spec.B
        comp = self._compressed(_PartialView(view.own_input, view.received[:players]))
        chosen = self.select(_PartialView(view.own_input, view.received[:players]))
        width = value_bits(self.spec.modulus)
        tokens = {}
        for j, bits in zip(chosen, view.received[players:]):
            vals = unpack(bits, width, self.spec.B, signed=False)
            if j == players:
                tokens[j] = list(self._own(view.own_input))
            else:
                tokens[j] = list(self._rows(j * self.spec.B, vals))
        x_i = self._own(view.own_input)[0]
        y, _ = sparse_position_output(x_i, comp, players, tokens, self.layer.heads[0], self.layer.sparse, self.cfg)
        return tuple(mlp_apply(self.layer.mlp, x_i, y, self.cfg))

    def answer(self, out):
        return int(out[0] != 0)


class _PartialView:
    """Stand-in view used when a strategy re-derives its own earlier choice."""

    __slots__ = ("own_input", "received")

    def __init__(self, own_input, received):
        self.own_input = own_input
        self.received = tuple(received)


def enumerate_inputs(task: str, n: int, M: int | None = None):
    """All Alice inputs for a two-party task (Eva: ``[n]^n``, PerCom: ``S_n``, 2-Sum: ``[M]^n``)."""
    if task == "eva":
        return [tuple(f) for f in itertools.product(range(1, n + 1), repeat=n)]
    if task == "percom":
        return [tuple(p) for p in itertools.permutations(range(1, n + 1))]
    M = M or n
    return [tuple(x) for x in itertools.product(range(1, M + 1), repeat=n)]


def enumerate_queries(task: str, n: int, M: int | None = None):
    if task == "eva":
        return list(range(1, n + 1))
    if task == "percom":
        return [tuple(p) for p in itertools.permutations(range(1, n + 1))]
    return list(range(1, (M or n) + 1))


__all__ = [
    "HonestRnnBundle",
    "HonestLinearBundle",
    "HonestLogLinearBundle",
    "HonestSparseBundle",
    "RandomHashBundle",
    "TruncationBundle",
    "InjectiveBundle",
    "SetEncodingBundle",
    "tiny_rnn",
    "honest_rnn_bundles",
    "player_rows",
    "rows_to_mantissas",
    "enumerate_inputs",
    "enumerate_queries",
    "input_code",
    "decode_code",
    "complement",
    "answer_from_input",
    "SET_ENCODERS",
    "TINY_RNN_RULES",
]
