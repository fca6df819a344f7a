"""Exact fixed-precision attention layers.

A token sequence is an integer array of shape ``(n, d*H)`` holding
mantissas on the grid of a :class:`~hybridattn.numerics.PrecisionConfig`.
Every layer maps such a sequence to a new one on the same grid:

* projections ``Qx``, ``Kx``, ``Vx`` are exact integer products rounded once;
* softmax uses exponentials at ``2p + 16`` fraction bits and a single final
  rounding of ``sum E_j v_j / sum E_j``;
* linear and log-linear layers keep their states as exact integers, so the
  direct and recurrent evaluations agree bit for bit;
* the MLP ``g(x_prev, y)`` runs last and is quantized once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from ._kernels import fixed_matmul
from .numerics import (
    PrecisionConfig,
    exp_fixed,
    quantize_exp,
    quantize_mantissa,
    round_div,
    saturate,
    working_bits,
)

KINDS = ("full", "linear", "loglinear", "sparse")


class DegenerateInputError(ValueError):
    """Linear-attention normalizer is exactly zero."""


class ScheduleError(ValueError):
    """Layer list does not follow the hybrid schedule."""


# ------------------------------------------------------------------ config


@dataclass(frozen=True, eq=False)
class HeadParams:
    """Per-head ``Q, K, V`` as ``(d, d*H)`` mantissa matrices."""

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.Q), np.shape(self.K), np.shape(self.V)}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError(f"Q, K, V must be equal-shape matrices, got {sorted(shapes)}")

    def __eq__(self, other):
        if not isinstance(other, HeadParams):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in ((self.Q, other.Q), (self.K, other.K), (self.V, other.V)))

    __hash__ = None

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    @property
    def width(self) -> int:
        return self.Q.shape[1]


@dataclass(frozen=True)
class SparseConfig:
    B: int
    k: int
    lam: Fraction = Fraction(1, 2)
    compress: str = "mean"
    score: str = "dot"

    def __post_init__(self):
        object.__setattr__(self, "lam", Fraction(self.lam))
        if self.B < 1 or self.k < 1:
            raise ValueError("need B >= 1 and k >= 1")
        if not 0 <= self.lam <= 1:
            raise ValueError("mixing weight must lie in [0, 1]")
        if self.compress not in COMPRESSIONS:
            raise ValueError(f"unknown compression {self.compress!r}")
        if self.score not in SELECTION_SCORES:
            raise ValueError(f"unknown selection score {self.score!r}")


@dataclass(frozen=True)
class LayerConfig:
    """One attention layer plus its position-wise MLP.

    Only the fields of ``kind`` may be set: ``feature_map`` for linear,
    ``lam_rule`` (and optionally ``update``) for loglinear, ``sparse`` for
    sparse. Missing ones get their defaults.
    """

    kind: str
    heads: tuple
    cfg: PrecisionConfig
    mlp: str = "project_second"
    feature_map: str | None = None
    lam_rule: str | None = None
    sparse: SparseConfig | None = None
    update: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        object.__setattr__(self, "heads", tuple(self.heads))
        if not self.heads:
            raise ValueError("need at least one head")
        d, width = self.heads[0].d, self.heads[0].width
        for h in self.heads:
            if (h.d, h.width) != (d, width):
                raise ValueError("all heads must share the same shape")
        if width != d * len(self.heads):
            raise ValueError(f"head matrices must be d x dH = {d} x {d * len(self.heads)}, got {d} x {width}")
        extras = {"linear": "feature_map", "loglinear": "lam_rule", "sparse": "sparse"}
        for kind, name in extras.items():
            if kind != self.kind and getattr(self, name) is not None:
                raise ValueError(f"{name} is only valid for {kind} layers")
        if self.update is not None and self.kind != "loglinear":
            raise ValueError("update is only valid for loglinear layers")
        if self.kind == "linear":
            fm = self.feature_map or "identity"
            if fm not in FEATURE_MAPS:
                raise ValueError(f"unknown feature map {fm!r}")
            object.__setattr__(self, "feature_map", fm)
        if self.kind == "loglinear":
            rule = self.lam_rule or "uniform"
            if rule not in LAMBDA_RULES:
                raise ValueError(f"unknown lambda rule {rule!r}")
            object.__setattr__(self, "lam_rule", rule)
        if self.kind == "sparse" and self.sparse is None:
            raise ValueError("sparse layers need a SparseConfig")
        if self.mlp not in MLP_REGISTRY:
            raise KeyError(f"unregistered MLP {self.mlp!r}")

    @property
    def H(self) -> int:
        return len(self.heads)

    @property
    def d(self) -> int:
        return self.heads[0].d

    @property
    def width(self) -> int:
        return self.d * self.H

    def with_kind(self, kind: str, **extra) -> "LayerConfig":
        return LayerConfig(kind, self.heads, self.cfg, self.mlp, **extra)


@dataclass(frozen=True)
class HybridSchedule:
    L: int
    a: tuple

    def __post_init__(self):
        object.__setattr__(self, "a", tuple(int(v) for v in self.a))
        if self.L < 1 or len(self.a) != self.L or any(v < 0 for v in self.a):
            raise ScheduleError("need L >= 1 and L non-negative linear counts")

    @property
    def n_layers(self) -> int:
        return self.L + sum(self.a)

    def kinds(self) -> list:
        out = []
        for a_l in self.a:
            out.append("full")
            out.extend(["linear"] * a_l)
        return out


# -------------------------------------------------------------- registries


def _phi_identity(k, cfg):
    return k


def _phi_exp(k, cfg):
    return quantize_exp(k, cfg)


def _phi_relu1(k, cfg):
    return saturate(max(k, 0) + cfg.scale, cfg)


FEATURE_MAPS = {"identity": _phi_identity, "exp": _phi_exp, "relu1": _phi_relu1}

LAMBDA_RULES = ("uniform", "unit")


def _compress_mean(block, cfg):
    n = len(block)
    return [round_div(sum(int(r[c]) for r in block), n) for c in range(len(block[0]))]


def _compress_sum(block, cfg):
    return [sum(int(r[c]) for r in block) for c in range(len(block[0]))]


def _compress_last(block, cfg):
    return [int(v) for v in block[-1]]


COMPRESSIONS = {"mean": _compress_mean, "sum": _compress_sum, "last": _compress_last}

SELECTION_SCORES = ("dot", "constant")


def _mlp_project_first(x, y, cfg):
    return list(x)


def _mlp_project_second(x, y, cfg):
    return list(y)


def _mlp_add(x, y, cfg):
    return [saturate(int(a) + int(b), cfg) for a, b in zip(x, y)]


MLP_REGISTRY = {
    "project_first": _mlp_project_first,
    "project_second": _mlp_project_second,
    "add": _mlp_add,
}


def register_mlp(name: str, fn: Callable) -> str:
    """Register ``fn(x_mantissas, y_mantissas, cfg) -> mantissas`` under ``name``."""
    MLP_REGISTRY[name] = fn
    return name


def table_mlp(name: str, table: dict, default=None) -> str:
    """Register a lookup-table MLP keyed on the exact grid values ``x + y``.

    Keys are tuples of rationals (the concatenated inputs); values are the
    output vectors. Unknown keys fall back to ``default`` or raise KeyError.
    """
    frozen = {tuple(Fraction(v) for v in k): tuple(Fraction(v) for v in out) for k, out in table.items()}

    def fn(x, y, cfg):
        key = tuple(cfg.value(int(v)) for v in list(x) + list(y))
        if key in frozen:
            out = frozen[key]
        elif default is not None:
            out = default
        else:
            raise KeyError(f"no table entry for {key}")
        return [quantize_mantissa(v, cfg) for v in out]

    return register_mlp(name, fn)


def mlp_apply(g: str, x_prev, y, cfg: PrecisionConfig) -> list:
    """``g(x_prev, y)`` for one position, quantized onto ``cfg``."""
    if g not in MLP_REGISTRY:
        raise KeyError(f"unregistered MLP {g!r}")
    out = MLP_REGISTRY[g](x_prev, y, cfg)
    return [saturate(int(v), cfg) for v in out]


def _apply_mlp_rows(g, x_rows, y_rows, cfg):
    out = [mlp_apply(g, x, y, cfg) for x, y in zip(x_rows, y_rows)]
    return np.array(out, dtype=cfg.mantissa_dtype).reshape(len(out), -1)


# ----------------------------------------------------------------- helpers


def as_sequence(seq, cfg: PrecisionConfig) -> np.ndarray:
    arr = np.asarray(seq)
    if arr.ndim != 2:
        raise ValueError(f"sequence must be 2-D (n, dH), got shape {arr.shape}")
    if arr.dtype != object and cfg.mantissa_dtype is object:
        arr = arr.astype(object)
    elif arr.dtype == object and cfg.mantissa_dtype is not object:
        arr = arr.astype(np.int64)
    lim = cfg.max_mantissa
    if arr.size and (arr.max() > lim or arr.min() < -lim):
        raise ValueError(f"sequence holds mantissas outside the {cfg.p}-bit range")
    return arr


def _check_width(seq, layer):
    if seq.shape[1] != layer.width:
        raise ValueError(f"token width {seq.shape[1]} != d*H = {layer.width}")


def project(seq, M, cfg: PrecisionConfig) -> np.ndarray:
    """Rows of ``M x`` for every token ``x``, rounded once onto ``cfg``."""
    return fixed_matmul(seq, np.asarray(M), cfg.frac_bits, cfg.max_mantissa)


def score_row(q, keys, cfg: PrecisionConfig) -> list:
    """Quantized inner products ``q . k`` against each key row."""
    if len(keys) == 0:
        return []
    q = np.asarray(q).reshape(1, -1)
    return [int(v) for v in fixed_matmul(q, np.asarray(keys), cfg.frac_bits, cfg.max_mantissa)[0]]


def _exp_bits(scores, cfg):
    # Exponentials are taken without max-subtraction so partial sums over
    # disjoint key sets add up exactly; only rows whose largest score is
    # negative get extra bits so the largest weight keeps 2p+16 bits.
    bits = working_bits(cfg)
    top = max(scores)
    if top < 0:
        bits += ((-top) * 1478 >> (cfg.frac_bits + 10)) + 2
    return bits


def softmax_parts(scores: Sequence[int], values, cfg: PrecisionConfig, bits: int | None = None):
    """Exact ``(numerators, denominator)`` of the softmax average of ``values``.

    ``scores`` are score mantissas; ``values`` is a list of value rows. The
    output mantissa of coordinate ``a`` is ``round_div(num[a], den)``.
    """
    if len(scores) == 0:
        raise ValueError("softmax over an empty key set")
    bits = _exp_bits(scores, cfg) if bits is None else bits
    weights = [exp_fixed(int(k), cfg.frac_bits, bits) for k in scores]
    width = len(values[0])
    nums = [0] * width
    for w, v in zip(weights, values):
        for a in range(width):
            nums[a] += w * int(v[a])
    return nums, sum(weights)


def softmax_weights(scores: Sequence[int], cfg: PrecisionConfig) -> list:
    """Exact rational attention weights ``E_j / sum E`` (they sum to 1)."""
    bits = _exp_bits(scores, cfg)
    weights = [exp_fixed(int(k), cfg.frac_bits, bits) for k in scores]
    total = sum(weights)
    return [Fraction(w, total) for w in weights]


def _finish(nums, den, cfg):
    return [saturate(round_div(num, den), cfg) for num in nums]


# ------------------------------------------------------------ full softmax


def _head_projections(seq, layer):
    cfg = layer.cfg
    return [(project(seq, h.Q, cfg), project(seq, h.K, cfg), project(seq, h.V, cfg)) for h in layer.heads]


def full_attention_row(i: int, projections, cfg: PrecisionConfig) -> list:
    """Concatenated head outputs at 0-based position ``i`` (keys ``0..i``)."""
    out = []
    for qx, kx, vx in projections:
        scores = score_row(qx[i], kx[: i + 1], cfg)
        nums, den = softmax_parts(scores, vx[: i + 1], cfg)
        out.extend(_finish(nums, den, cfg))
    return out


def full_layer(seq, layer: LayerConfig, positions: Sequence[int] | None = None) -> np.ndarray:
    """Causal softmax attention followed by the layer MLP.

    ``positions`` (0-based) restricts the computation to those rows; the
    result then has one row per requested position.
    """
    if layer.kind != "full":
        raise ValueError(f"full_layer needs a full layer, got {layer.kind}")
    cfg = layer.cfg
    seq = as_sequence(seq, cfg)
    _check_width(seq, layer)
    proj = _head_projections(seq, layer)
    rows = range(seq.shape[0]) if positions is None else positions
    ys, xs = [], []
    for i in rows:
        ys.append(full_attention_row(i, proj, cfg))
        xs.append(seq[i])
    return _apply_mlp_rows(layer.mlp, xs, ys, cfg)


# ---------------------------------------------------------------- linear


def linear_features(x_row, head: HeadParams, cfg: PrecisionConfig, feature_map: str):
    """``(phi(Qx), phi(Kx), Vx)`` mantissas for a single token."""
    phi = FEATURE_MAPS[feature_map]
    row = np.asarray(x_row).reshape(1, -1)
    q = project(row, head.Q, cfg)[0]
    k = project(row, head.K, cfg)[0]
    v = project(row, head.V, cfg)[0]
    return (
        [phi(int(c), cfg) for c in q],
        [phi(int(c), cfg) for c in k],
        [int(c) for c in v],
    )


def _all_features(seq, layer):
    cfg, phi = layer.cfg, FEATURE_MAPS[layer.feature_map]
    out = []
    for h in layer.heads:
        q = project(seq, h.Q, cfg)
        k = project(seq, h.K, cfg)
        v = project(seq, h.V, cfg)
        out.append(
            (
                [[phi(int(c), cfg) for c in r] for r in q],
                [[phi(int(c), cfg) for c in r] for r in k],
                [[int(c) for c in r] for r in v],
            )
        )
    return out


@dataclass
class LinearHeadState:
    """Cumulative ``S[b][a] = sum phi(Kx)_b (Vx)_a`` and ``Z[b] = sum phi(Kx)_b``.

    Entries are exact integers at ``2s`` (``S``) and ``s`` (``Z``) fraction bits.
    """

    S: list
    Z: list

    @classmethod
    def zero(cls, d: int) -> "LinearHeadState":
        return cls([[0] * d for _ in range(d)], [0] * d)

    def update(self, phi_k, v) -> None:
        for b, kb in enumerate(phi_k):
            if kb:
                row = self.S[b]
                for a, va in enumerate(v):
                    row[a] += kb * va
            self.Z[b] += kb

    def readout(self, phi_q, cfg: PrecisionConfig) -> list:
        d = len(self.Z)
        den = sum(qb * zb for qb, zb in zip(phi_q, self.Z))
        if den == 0:
            raise DegenerateInputError("linear attention normalizer phi(Qx)^T Z is zero")
        nums = [sum(phi_q[b] * self.S[b][a] for b in range(d)) for a in range(d)]
        return _finish(nums, den, cfg)

    def copy(self) -> "LinearHeadState":
        return LinearHeadState([list(r) for r in self.S], list(self.Z))


def linear_layer(seq, layer: LayerConfig, mode: str = "recurrent", positions: Sequence[int] | None = None) -> np.ndarray:
    """Linear attention (``direct`` pairwise sums or ``recurrent`` states) then MLP.

    ``positions`` picks the rows to read out; states still absorb every token.
    """
    if layer.kind != "linear":
        raise ValueError(f"linear_layer needs a linear layer, got {layer.kind}")
    if mode not in ("direct", "recurrent"):
        raise ValueError(f"unknown mode {mode!r}")
    cfg = layer.cfg
    seq = as_sequence(seq, cfg)
    _check_width(seq, layer)
    feats = _all_features(seq, layer)
    n = seq.shape[0]
    rows = list(range(n)) if positions is None else list(positions)
    wanted = set(rows)
    ys = {i: [] for i in rows}
    for fq, fk, fv in feats:
        d = len(fv[0]) if n else 0
        if mode == "recurrent":
            st = LinearHeadState.zero(d)
            for i in range(n):
                st.update(fk[i], fv[i])
                if i in wanted:
                    ys[i].extend(st.readout(fq[i], cfg))
        else:
            for i in rows:
                dots = [sum(a * b for a, b in zip(fq[i], fk[j])) for j in range(i + 1)]
                den = sum(dots)
                if den == 0:
                    raise DegenerateInputError("linear attention normalizer is zero")
                nums = [sum(dots[j] * fv[j][a] for j in range(i + 1)) for a in range(d)]
                ys[i].extend(_finish(nums, den, cfg))
    return _apply_mlp_rows(layer.mlp, [seq[i] for i in rows], [ys[i] for i in rows], cfg)


def linear_states(seq, layer: LayerConfig) -> list:
    """Per-position list of per-head :class:`LinearHeadState` after each token."""
    cfg = layer.cfg
    seq = as_sequence(seq, cfg)
    feats = _all_features(seq, layer)
    n = seq.shape[0]
    states = [LinearHeadState.zero(layer.d) for _ in layer.heads]
    out = []
    for i in range(n):
        for st, (fq, fk, fv) in zip(states, feats):
            st.update(fk[i], fv[i])
        out.append([st.copy() for st in states])
    return out


# -------------------------------------------------------------------- RNN


@dataclass(frozen=True)
class RnnLayerSpec:
    """Recurrence ``h_i = g(i, x_i, h_(i-1))``, ``y_i = f(i, x_i, h_i)``.

    ``transition`` and ``readout`` receive the 1-based position, the token
    and the state as tuples of exact rationals and return sequences of
    rationals; the engine quantizes states onto ``state_cfg`` and outputs
    onto ``out_cfg``.
    """

    hidden_dim: int
    h0: tuple
    transition: Callable
    readout: Callable
    state_cfg: PrecisionConfig
    out_cfg: PrecisionConfig
    in_cfg: PrecisionConfig | None = None

    def __post_init__(self):
        if len(self.h0) != self.hidden_dim:
            raise ValueError("h0 must have hidden_dim entries")

    @property
    def input_cfg(self) -> PrecisionConfig:
        return self.in_cfg or self.out_cfg


def _quant_tuple(values, cfg):
    return tuple(cfg.value(quantize_mantissa(v, cfg)) for v in values)


def rnn_initial(spec: RnnLayerSpec) -> tuple:
    return _quant_tuple(spec.h0, spec.state_cfg)


def rnn_step(spec: RnnLayerSpec, i: int, x_row, h: tuple) -> tuple:
    """One transition; ``x_row`` holds input mantissas, ``h`` grid values."""
    x = tuple(spec.input_cfg.value(int(v)) for v in x_row)
    h_new = tuple(spec.transition(i, x, h))
    if len(h_new) != spec.hidden_dim:
        raise ValueError(f"transition returned {len(h_new)} entries, expected {spec.hidden_dim}")
    return _quant_tuple(h_new, spec.state_cfg)


def rnn_output(spec: RnnLayerSpec, i: int, x_row, h: tuple) -> list:
    x = tuple(spec.input_cfg.value(int(v)) for v in x_row)
    return [quantize_mantissa(v, spec.out_cfg) for v in spec.readout(i, x, h)]


def rnn_run(spec: RnnLayerSpec, seq) -> np.ndarray:
    seq = np.asarray(seq)
    h = rnn_initial(spec)
    out = []
    for i, row in enumerate(seq, start=1):
        h = rnn_step(spec, i, row, h)
        out.append(rnn_output(spec, i, row, h))
    return np.array(out, dtype=spec.out_cfg.mantissa_dtype).reshape(len(out), -1)


def rnn_states(spec: RnnLayerSpec, seq) -> list:
    """States ``h_0, h_1, ..., h_n``."""
    h = rnn_initial(spec)
    out = [h]
    for i, row in enumerate(np.asarray(seq), start=1):
        h = rnn_step(spec, i, row, h)
        out.append(h)
    return out


RNN_TRANSITIONS = {
    "hold": lambda i, x, h: h,
    "running_sum": lambda i, x, h: tuple(a + b for a, b in zip(h, x)),
}

RNN_READOUTS = {
    "state": lambda i, x, h: h,
    "input": lambda i, x, h: x,
}


def rnn_spec(hidden_dim: int, transition: str, readout: str, state_cfg, out_cfg, h0=None) -> RnnLayerSpec:
    """Spec from registered transition/readout names."""
    h0 = tuple(h0) if h0 is not None else (Fraction(0),) * hidden_dim
    return RnnLayerSpec(hidden_dim, h0, RNN_TRANSITIONS[transition], RNN_READOUTS[readout], state_cfg, out_cfg)


def adapter_state_cfg(cfg: PrecisionConfig) -> PrecisionConfig:
    """State grid of the linear-to-RNN adapter.

    ``S`` entries carry ``2s`` fraction bits (products of two ``s``-bit
    values), so that grid stores the cumulative sums without rounding.
    """
    return PrecisionConfig(total_bits=2 * cfg.total_bits + 16, frac_bits=2 * cfg.frac_bits)


def linear_as_rnn(layer: LayerConfig) -> RnnLayerSpec:
    """Recast a linear layer as an RNN with hidden dim ``H(d^2 + d)``.

    Per head the state is ``S`` (row-major, rows indexed by key feature)
    followed by ``Z``. The readout divides ``phi(Qx)^T S`` by
    ``phi(Qx)^T Z`` and applies the layer MLP.
    """
    if layer.kind != "linear":
        raise ValueError("linear_as_rnn needs a linear layer")
    cfg, d, H = layer.cfg, layer.d, layer.H
    block = d * d + d

    def features(x):
        row = [quantize_mantissa(v, cfg) for v in x]
        return [linear_features(row, head, cfg, layer.feature_map) for head in layer.heads], row

    def transition(i, x, h):
        feats, _ = features(x)
        h = list(h)
        for idx, (_, fk, fv) in enumerate(feats):
            base = idx * block
            for b in range(d):
                kb = cfg.value(fk[b])
                for a in range(d):
                    h[base + b * d + a] += kb * cfg.value(fv[a])
                h[base + d * d + b] += kb
        return h

    def readout(i, x, h):
        feats, row = features(x)
        ys = []
        for idx, (fq, _, _) in enumerate(feats):
            base = idx * block
            q = [cfg.value(c) for c in fq]
            den = sum(q[b] * h[base + d * d + b] for b in range(d))
            if den == 0:
                raise DegenerateInputError("linear attention normalizer phi(Qx)^T Z is zero")
            for a in range(d):
                num = sum(q[b] * h[base + b * d + a] for b in range(d))
                ys.append(quantize_mantissa(num / den, cfg))
        out = mlp_apply(layer.mlp, row, ys, cfg)
        return [cfg.value(v) for v in out]

    return RnnLayerSpec(
        hidden_dim=H * block,
        h0=(Fraction(0),) * (H * block),
        transition=transition,
        readout=readout,
        state_cfg=adapter_state_cfg(cfg),
        out_cfg=cfg,
        in_cfg=cfg,
    )


# ------------------------------------------------------------- log-linear


def lssb(t: int) -> int:
    """Exponent of the largest power of two dividing ``t``."""
    t = int(t)
    if t < 1:
        raise ValueError("lssb needs a positive integer")
    return (t & -t).bit_length() - 1


def live_state_count(i: int) -> int:
    """``R = ceil(log2 i + 1) + 1`` states at position ``i``."""
    if i < 1:
        raise ValueError("positions start at 1")
    return (i - 1).bit_length() + 2


def _zero(d):
    return [[0] * d for _ in range(d)]


def _madd(A, B):
    return [[a + b for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def default_update(i: int, r: int, prev: list, fresh: list) -> list:
    """Four-case state recursion keyed on ``lssb(i)``.

    ``prev`` holds ``S_(i-1)^(r')`` for every ``r'`` (missing ones are 0),
    ``fresh`` is ``Vx_i (Kx_i)^T``.
    """
    d = len(fresh)
    low = lssb(i)
    if r == 0:
        return fresh
    if r <= low:
        return _zero(d)
    if r == low + 1:
        acc = _zero(d)
        for rp in range(0, r):
            if rp < len(prev):
                acc = _madd(acc, prev[rp])
        return acc
    return prev[r] if r < len(prev) else _zero(d)


def loglinear_step(i, states, q, k, v, cfg, update=None, lam_rule="uniform"):
    """Advance the state family to position ``i`` and read out ``y_i``.

    ``q, k, v`` are the projected mantissas of token ``i``; returns the new
    states (``R(i)`` matrices) and the output mantissas.
    """
    update = update or default_update
    d = len(v)
    fresh = [[va * kb for kb in k] for va in v]  # [a][b] = v_a k_b
    R = live_state_count(i)
    states = [update(i, r, states, fresh) for r in range(R)]
    nums = [0] * d
    for S in states:
        for a in range(d):
            nums[a] += sum(S[a][b] * q[b] for b in range(d))
    den = (R if lam_rule == "uniform" else 1) << (2 * cfg.frac_bits)
    return states, _finish(nums, den, cfg)


def _loglinear_head(fq, fk, fv, update, lam_rule, cfg):
    states = []
    outs, trace = [], []
    for i in range(1, len(fv) + 1):
        states, y = loglinear_step(i, states, fq[i - 1], fk[i - 1], fv[i - 1], cfg, update, lam_rule)
        outs.append(y)
        trace.append(states)
    return outs, trace


def _loglinear(seq, layer):
    if layer.kind != "loglinear":
        raise ValueError(f"loglinear_layer needs a loglinear layer, got {layer.kind}")
    cfg = layer.cfg
    seq = as_sequence(seq, cfg)
    _check_width(seq, layer)
    update = layer.update or default_update
    n = seq.shape[0]
    ys = [[] for _ in range(n)]
    traces = []
    for h in layer.heads:
        q = [[int(c) for c in r] for r in project(seq, h.Q, cfg)]
        k = [[int(c) for c in r] for r in project(seq, h.K, cfg)]
        v = [[int(c) for c in r] for r in project(seq, h.V, cfg)]
        outs, trace = _loglinear_head(q, k, v, update, layer.lam_rule, cfg)
        for i in range(n):
            ys[i].extend(outs[i])
        traces.append(trace)
    return seq, ys, traces


def loglinear_layer(seq, layer: LayerConfig) -> np.ndarray:
    """``y_i = sum_r lambda_r S_i^(r) Q x_i`` over the live states, then MLP.

    ``lam_rule="uniform"`` uses ``lambda_r = 1/R``; ``"unit"`` uses 1.
    States are ``d x d`` integer matrices at ``2s`` fraction bits.
    """
    seq, ys, _ = _loglinear(seq, layer)
    return _apply_mlp_rows(layer.mlp, list(seq), ys, layer.cfg)


def loglinear_states(seq, layer: LayerConfig) -> list:
    """``states[h][i-1][r]`` = ``S_i^(r)`` for head ``h`` (list of ``d x d`` int lists)."""
    _, _, traces = _loglinear(seq, layer)
    return traces


# ----------------------------------------------------------------- sparse


def block_ranges(i: int, B: int) -> list:
    """0-based token ranges of the blocks touching positions ``1..i``."""
    out = []
    start = 0
    while start < i:
        out.append((start, min(start + B, i)))
        start += B
    return out


def compress_blocks(seq, sp: SparseConfig, cfg: PrecisionConfig, upto: int) -> list:
    """Compressed tokens for every block that has a token at or before ``upto``."""
    fn = COMPRESSIONS[sp.compress]
    out = []
    for lo, hi in block_ranges(upto, sp.B):
        block = [seq[t] for t in range(lo, hi)]
        out.append([saturate(int(c), cfg) for c in fn(block, cfg)])
    return out


def select_blocks(scores: Sequence[int], k: int) -> list:
    """Indices of the ``k`` largest scores; ties go to the lower index."""
    order = sorted(range(len(scores)), key=lambda j: (-scores[j], j))
    return sorted(order[:k])


def sparse_position_output(
    x_i,
    compressed: list,
    completed: int,
    block_tokens: dict,
    head: HeadParams,
    sp: SparseConfig,
    cfg: PrecisionConfig,
) -> tuple:
    """Output mantissas of one head at the current position, plus the selected blocks.

    ``compressed`` holds the compressed tokens of all blocks visible to the
    position, the first ``completed`` of which are full blocks.
    ``block_tokens`` maps a block index to its raw tokens (at most up to the
    current position) and must contain every block the selection picks.
    """
    xq = np.asarray(x_i).reshape(1, -1)
    q = project(xq, head.Q, cfg)[0]
    ck = project(np.asarray(compressed), head.K, cfg) if compressed else []
    d = head.d
    if sp.score == "dot":
        sel_scores = score_row(q, ck, cfg) if compressed else []
    else:
        sel_scores = [0] * len(compressed)
    chosen = select_blocks(sel_scores, sp.k)

    y = [Fraction(0)] * d
    if completed and sp.lam:
        cv = project(np.asarray(compressed[:completed]), head.V, cfg)
        nums, den = softmax_parts(score_row(q, ck[:completed], cfg), cv, cfg)
        y = [sp.lam * Fraction(num, den) for num in nums]
    if sp.lam != 1:
        raw = []
        for j in chosen:
            raw.extend(block_tokens[j])
        raw = np.asarray(raw)
        rk = project(raw, head.K, cfg)
        rv = project(raw, head.V, cfg)
        nums, den = softmax_parts(score_row(q, rk, cfg), rv, cfg)
        y = [acc + (1 - sp.lam) * Fraction(num, den) for acc, num in zip(y, nums)]
    return [saturate(round_div(v.numerator, v.denominator), cfg) for v in y], chosen


def sparse_layer(seq, layer: LayerConfig, positions: Sequence[int] | None = None) -> np.ndarray:
    """(B, k)-sparse attention followed by the MLP.

    Blocks are ``[jB+1, (j+1)B]``. The compression branch attends over the
    compressed tokens of completed blocks (zero vector when there are
    none); the selection branch attends over the raw tokens ``t <= i`` of
    the ``k`` top-scoring blocks, the trailing partial block included.
    Each branch normalizes its own softmax.
    """
    if layer.kind != "sparse":
        raise ValueError(f"sparse_layer needs a sparse layer, got {layer.kind}")
    cfg, sp = layer.cfg, layer.sparse
    seq = as_sequence(seq, cfg)
    _check_width(seq, layer)
    rows = range(seq.shape[0]) if positions is None else positions
    xs, ys = [], []
    for i0 in rows:
        i = i0 + 1
        compressed = compress_blocks(seq, sp, cfg, i)
        completed = i // sp.B
        ranges = block_ranges(i, sp.B)
        tokens = {j: [seq[t] for t in range(lo, hi)] for j, (lo, hi) in enumerate(ranges)}
        y = []
        for head in layer.heads:
            out, _ = sparse_position_output(seq[i0], compressed, completed, tokens, head, sp, cfg)
            y.extend(out)
        xs.append(seq[i0])
        ys.append(y)
    return _apply_mlp_rows(layer.mlp, xs, ys, cfg)


# ----------------------------------------------------------------- hybrid


def apply_layer(seq, layer: LayerConfig, mode: str = "recurrent") -> np.ndarray:
    if layer.kind == "full":
        return full_layer(seq, layer)
    if layer.kind == "linear":
        return linear_layer(seq, layer, mode)
    if layer.kind == "loglinear":
        return loglinear_layer(seq, layer)
    return sparse_layer(seq, layer)


def hybrid_forward(seq, schedule: HybridSchedule, layers: Sequence[LayerConfig], trace: list | None = None):
    """Run the ``(L, a_1..a_L)`` stack: each full layer followed by ``a_l`` linear ones."""
    expected = schedule.kinds()
    got = [layer.kind for layer in layers]
    if got != expected:
        raise ScheduleError(f"layer kinds {got} do not match schedule {expected}")
    x = seq
    for layer in layers:
        x = apply_layer(x, layer)
        if trace is not None:
            trace.append(layer.kind)
    return x


# ------------------------------------------------------------ generation


def random_heads(rng, H: int, d: int, cfg: PrecisionConfig, magnitude: int | None = None) -> tuple:
    """Heads with i.i.d. mantissas in ``[-magnitude, magnitude]``."""
    mag = cfg.max_mantissa if magnitude is None else min(magnitude, cfg.max_mantissa)
    width = d * H

    def mat():
        return rng.integers(-mag, mag + 1, size=(d, width)).astype(np.int64)

    return tuple(HeadParams(mat(), mat(), mat()) for _ in range(H))


def random_sequence(rng, n: int, width: int, cfg: PrecisionConfig, magnitude: int | None = None) -> np.ndarray:
    mag = cfg.max_mantissa if magnitude is None else min(magnitude, cfg.max_mantissa)
    return rng.integers(-mag, mag + 1, size=(n, width)).astype(np.int64)


# ------------------------------------------------------------------- JSON


def _mat_json(m):
    return [[str(int(v)) for v in row] for row in np.asarray(m)]


def _mat_from(rows):
    return np.array([[int(v) for v in row] for row in rows], dtype=object if any(
        abs(int(v)) >= 1 << 62 for row in rows for v in row) else np.int64)


def layer_to_json(layer: LayerConfig) -> dict:
    obj = {
        "kind": layer.kind,
        "precision": layer.cfg.to_json(),
        "mlp": layer.mlp,
        "heads": [{"Q": _mat_json(h.Q), "K": _mat_json(h.K), "V": _mat_json(h.V)} for h in layer.heads],
    }
    if layer.kind == "linear":
        obj["feature_map"] = layer.feature_map
    if layer.kind == "loglinear":
        obj["lam_rule"] = layer.lam_rule
    if layer.kind == "sparse":
        sp = layer.sparse
        obj["sparse"] = {
            "B": sp.B,
            "k": sp.k,
            "lam": f"{sp.lam.numerator}/{sp.lam.denominator}",
            "compress": sp.compress,
            "score": sp.score,
        }
    return obj


def layer_from_json(obj: dict) -> LayerConfig:
    heads = tuple(HeadParams(_mat_from(h["Q"]), _mat_from(h["K"]), _mat_from(h["V"])) for h in obj["heads"])
    extra = {}
    if "feature_map" in obj:
        extra["feature_map"] = obj["feature_map"]
    if "lam_rule" in obj:
        extra["lam_rule"] = obj["lam_rule"]
    if "sparse" in obj:
        sp = obj["sparse"]
        extra["sparse"] = SparseConfig(int(sp["B"]), int(sp["k"]), Fraction(sp["lam"]), sp["compress"], sp["score"])
    return LayerConfig(obj["kind"], heads, PrecisionConfig.from_json(obj["precision"]), obj.get("mlp", "project_second"), **extra)


def dumps_layers(layers: Sequence[LayerConfig]) -> str:
    return json.dumps([layer_to_json(layer) for layer in layers], indent=2) + "\n"


def loads_layers(text: str) -> list:
    return [layer_from_json(o) for o in json.loads(text)]
