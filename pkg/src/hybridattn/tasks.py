"""Task instances, exact oracles, prompt encodings and the parameter calculus.

All task values are 1-indexed (``[n] = {1, ..., n}``) and stored as tuples
of Python ints, so instances are hashable and usable as dictionary keys
during exhaustive enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import isqrt
from typing import Union

import numpy as np

from . import _kernels
from .numerics import PrecisionConfig, RepresentabilityError, mantissas

TASKS = ("eva", "percom", "twosum", "funccomp")

MAX_PARAM_L = 4


class InstanceError(ValueError):
    """Malformed task instance."""


def _check_range(values, lo, hi, what):
    for v in values:
        if not (lo <= v <= hi):
            raise InstanceError(f"{what} entry {v} outside [{lo}, {hi}]")


def _is_permutation(values, n):
    return len(values) == n and sorted(values) == list(range(1, n + 1))


@dataclass(frozen=True)
class EvaInstance:
    n: int
    f: tuple
    x: int

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(int(v) for v in self.f))
        if self.n < 1 or len(self.f) != self.n:
            raise InstanceError(f"f must have length n={self.n}")
        _check_range(self.f, 1, self.n, "f")
        _check_range((self.x,), 1, self.n, "x")


@dataclass(frozen=True)
class PerComInstance:
    n: int
    sigma: tuple
    tau: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(int(v) for v in self.sigma))
        object.__setattr__(self, "tau", tuple(int(v) for v in self.tau))
        for name in ("sigma", "tau"):
            if not _is_permutation(getattr(self, name), self.n):
                raise InstanceError(f"{name} is not a permutation of [{self.n}]")


@dataclass(frozen=True)
class TwoSumInstance:
    n: int
    M: int
    x: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(int(v) for v in self.x))
        if self.M < 1:
            raise InstanceError("modulus M must be positive")
        if len(self.x) != self.n + 1:
            raise InstanceError(f"x must have length n+1={self.n + 1}")
        _check_range(self.x, 1, self.M, "x")


@dataclass(frozen=True)
class FuncCompSpec:
    """Sizes of an L-FuncComp task: ``N_l = m * n_1 * ... * n_l``."""

    L: int
    m: int
    ns: tuple

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(v) for v in self.ns))
        if self.L < 2:
            raise InstanceError("FuncComp needs L >= 2")
        if len(self.ns) != self.L - 1:
            raise InstanceError(f"need L-1={self.L - 1} sizes n_1..n_(L-1), got {len(self.ns)}")
        if self.m < 1 or any(v < 1 for v in self.ns):
            raise InstanceError("m and all n_l must be positive")

    def N(self, level: int) -> int:
        if not 0 <= level <= self.L - 1:
            raise IndexError(level)
        out = self.m
        for v in self.ns[:level]:
            out *= v
        return out

    @property
    def Ns(self) -> tuple:
        return tuple(self.N(level) for level in range(self.L))

    def table_size(self, level: int) -> int:
        """Domain size of ``z_level`` (``N_(level-1)``)."""
        return self.N(level - 1)

    @property
    def prompt_length(self) -> int:
        return 2 + sum(self.Ns)


@dataclass(frozen=True)
class FuncCompInstance:
    spec: FuncCompSpec
    z0: int
    tables: tuple  # tables[l-1] is z_l as a tuple of length N_(l-1)
    w: tuple

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(tuple(int(v) for v in t) for t in self.tables))
        object.__setattr__(self, "w", tuple(int(v) for v in self.w))
        spec = self.spec
        if len(self.tables) != spec.L:
            raise InstanceError(f"need {spec.L} tables z_1..z_L")
        _check_range((self.z0,), 1, spec.m, "z0")
        for level, table in enumerate(self.tables, start=1):
            size = spec.table_size(level)
            if len(table) != size:
                raise InstanceError(f"z_{level} must have {size} entries, got {len(table)}")
            _check_range(table, 1, size, f"z_{level}")
        if len(self.w) != spec.L - 1:
            raise InstanceError("w must have L-1 components")
        for level, (wl, nl) in enumerate(zip(self.w, spec.ns), start=1):
            _check_range((wl,), 1, nl, f"w_{level}")

    def z(self, level: int) -> tuple:
        return self.tables[level - 1]

    def player_input(self, player: int):
        """Input of hybrid-model player ``player`` in ``[-1:L]``."""
        if player == -1:
            return self.w
        if player == 0:
            return self.z0
        return self.z(player)


Instance = Union[EvaInstance, PerComInstance, TwoSumInstance, FuncCompInstance]


def task_of(inst) -> str:
    return {
        EvaInstance: "eva",
        PerComInstance: "percom",
        TwoSumInstance: "twosum",
        FuncCompInstance: "funccomp",
    }[type(inst)]


# ----------------------------------------------------------------- oracles


def oracle_eva(inst: EvaInstance) -> int:
    return inst.f[inst.x - 1]


def oracle_percom(inst: PerComInstance) -> tuple:
    return tuple(inst.sigma[t - 1] for t in inst.tau)


def oracle_two_sum(inst: TwoSumInstance) -> tuple:
    """``y_i`` for every position ``i`` in ``[n+1]`` (``y_1`` is always 0)."""
    return tuple(int(v) for v in _kernels.two_sum_flags(inst.x, inst.M))


def pair_index(w_l: int, i_l: int, n_prev: int) -> int:
    """Row-major bijection ``[n_l] x [N_(l-1)] -> [N_l]``."""
    return (w_l - 1) * n_prev + i_l


def unpair_index(idx: int, n_prev: int) -> tuple:
    w_l, rem = divmod(idx - 1, n_prev)
    return w_l + 1, rem + 1


def funccomp_trace(inst: FuncCompInstance) -> tuple:
    """Partial composition values ``(i_0, i_1, ..., i_L)``."""
    spec = inst.spec
    values = [inst.z0]
    # [m] sits inside [N_0] by identity
    current = inst.z(1)[inst.z0 - 1]
    values.append(current)
    for level in range(1, spec.L):
        idx = pair_index(inst.w[level - 1], current, spec.N(level - 1))
        table = inst.z(level + 1)
        if not 1 <= idx <= len(table):
            raise InstanceError(f"index {idx} outside table z_{level + 1}")
        current = table[idx - 1]
        values.append(current)
    return tuple(values)


def oracle_funccomp(inst: FuncCompInstance) -> int:
    return funccomp_trace(inst)[-1]


def oracle(inst):
    return {
        EvaInstance: oracle_eva,
        PerComInstance: oracle_percom,
        TwoSumInstance: oracle_two_sum,
        FuncCompInstance: oracle_funccomp,
    }[type(inst)](inst)


# -------------------------------------------------------------- generators


def _rng(seed):
    return np.random.default_rng(np.random.SeedSequence(int(seed) & ((1 << 64) - 1)))


def gen_instance(task: str, seed: int = 0, **sizes):
    """Deterministic random instance; identical for identical ``(task, sizes, seed)``.

    Sizes: ``eva``/``percom``: ``n``; ``twosum``: ``n`` and ``M`` (or
    ``modulus="linear"|"square"`` for ``M = n`` / ``M = n**2``);
    ``funccomp``: ``L``, ``m``, ``ns`` or a ``spec``.
    """
    rng = _rng(seed)
    if task == "eva":
        n = _positive(sizes, "n")
        f = rng.integers(1, n + 1, size=n)
        return EvaInstance(n, tuple(int(v) for v in f), int(rng.integers(1, n + 1)))
    if task == "percom":
        n = _positive(sizes, "n")
        sigma = rng.permutation(n) + 1
        tau = rng.permutation(n) + 1
        return PerComInstance(n, tuple(int(v) for v in sigma), tuple(int(v) for v in tau))
    if task == "twosum":
        n = _positive(sizes, "n")
        M = sizes.get("M")
        if M is None:
            M = n * n if sizes.get("modulus", "linear") == "square" else n
        M = int(M)
        if M < 1:
            raise InstanceError("M must be positive")
        x = rng.integers(1, M + 1, size=n + 1)
        return TwoSumInstance(n, M, tuple(int(v) for v in x))
    if task == "funccomp":
        spec = sizes.get("spec")
        if spec is None:
            spec = FuncCompSpec(int(sizes["L"]), int(sizes["m"]), tuple(sizes["ns"]))
        z0 = int(rng.integers(1, spec.m + 1))
        tables = []
        for level in range(1, spec.L + 1):
            size = spec.table_size(level)
            tables.append(tuple(int(v) for v in rng.integers(1, size + 1, size=size)))
        w = tuple(int(rng.integers(1, nl + 1)) for nl in spec.ns)
        return FuncCompInstance(spec, z0, tuple(tables), w)
    raise InstanceError(f"unknown task {task!r}")


def _positive(sizes, key):
    if key not in sizes:
        raise InstanceError(f"missing size parameter {key!r}")
    v = int(sizes[key])
    if v < 1:
        raise InstanceError(f"{key} must be positive, got {v}")
    return v


# ---------------------------------------------------------- prompt encoding
#
# Every token is [owner, position, v_1, ..., v_k]; k = 1 except for the
# FuncComp query token, which carries w_1..w_(L-1) and widens all tokens.
# Owners: eva f -> 1, query x -> -1; percom sigma -> 1, tau -> 2;
# twosum -> 1; funccomp z_l -> l, z_0 -> 0, w -> -1.


@dataclass(frozen=True)
class Prompt:
    task: str
    tokens: np.ndarray  # (length, width) mantissas
    cfg: PrecisionConfig
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return self.tokens.shape[0]

    def rows(self):
        return [tuple(self.cfg.value(int(k)) for k in row) for row in self.tokens]


def _token_matrix(rows, cfg):
    width = max(len(r) for r in rows)
    flat = []
    for r in rows:
        flat.extend(list(r) + [0] * (width - len(r)))
    try:
        m = mantissas(flat, cfg)
    except RepresentabilityError as exc:
        raise RepresentabilityError(f"prompt value not representable: {exc}") from None
    return m.reshape(len(rows), width)


def default_prompt_cfg(inst) -> PrecisionConfig:
    """Smallest integer grid (no fraction bits) that holds every token value."""
    biggest = 2
    if isinstance(inst, EvaInstance):
        biggest = inst.n + 1
    elif isinstance(inst, PerComInstance):
        biggest = inst.n + 2
    elif isinstance(inst, TwoSumInstance):
        biggest = max(inst.M, inst.n + 1)
    elif isinstance(inst, FuncCompInstance):
        biggest = max(max(inst.spec.Ns), inst.spec.L, max(inst.spec.ns))
    return PrecisionConfig(total_bits=biggest.bit_length() + 1, frac_bits=0)


def encode_prompt(inst, cfg: PrecisionConfig | None = None) -> Prompt:
    cfg = cfg or default_prompt_cfg(inst)
    if isinstance(inst, EvaInstance):
        rows = [(1, i, v) for i, v in enumerate(inst.f, start=1)] + [(-1, 1, inst.x)]
        return Prompt("eva", _token_matrix(rows, cfg), cfg)
    if isinstance(inst, PerComInstance):
        rows = [(1, i, v) for i, v in enumerate(inst.sigma, start=1)]
        rows += [(2, i, v) for i, v in enumerate(inst.tau, start=1)]
        return Prompt("percom", _token_matrix(rows, cfg), cfg)
    if isinstance(inst, TwoSumInstance):
        rows = [(1, i, v) for i, v in enumerate(inst.x, start=1)]
        return Prompt("twosum", _token_matrix(rows, cfg), cfg, {"M": inst.M})
    if isinstance(inst, FuncCompInstance):
        L = inst.spec.L
        rows = []
        for level in range(L, 0, -1):
            rows += [(level, i, v) for i, v in enumerate(inst.z(level), start=1)]
        rows.append((0, 1, inst.z0))
        rows.append((-1, 1) + inst.w)
        return Prompt("funccomp", _token_matrix(rows, cfg), cfg)
    raise InstanceError(f"cannot encode {type(inst).__name__}")


def decode_prompt(prompt: Prompt, M: int | None = None):
    """Inverse of :func:`encode_prompt`. 2-Sum needs ``M`` (or ``prompt.meta``)."""
    cfg = prompt.cfg
    rows = [[int(cfg.value(int(k))) for k in row] for row in prompt.tokens]
    if prompt.task == "eva":
        f = [r[2] for r in rows if r[0] == 1]
        x = [r[2] for r in rows if r[0] == -1][0]
        return EvaInstance(len(f), tuple(f), x)
    if prompt.task == "percom":
        sigma = [r[2] for r in rows if r[0] == 1]
        tau = [r[2] for r in rows if r[0] == 2]
        return PerComInstance(len(sigma), tuple(sigma), tuple(tau))
    if prompt.task == "twosum":
        M = M if M is not None else prompt.meta.get("M")
        if M is None:
            raise InstanceError("2-Sum decoding needs the modulus M")
        x = [r[2] for r in rows]
        return TwoSumInstance(len(x) - 1, int(M), tuple(x))
    if prompt.task == "funccomp":
        owners = [r[0] for r in rows]
        L = max(owners)
        tables = {level: [r[2] for r in rows if r[0] == level] for level in range(1, L + 1)}
        z0 = [r[2] for r in rows if r[0] == 0][0]
        w = tuple([r for r in rows if r[0] == -1][0][2 : 2 + L - 1])
        sizes = [len(tables[level]) for level in range(1, L + 1)]
        ns = tuple(sizes[i] // sizes[i - 1] for i in range(1, L))
        spec = FuncCompSpec(L, sizes[0], ns)
        return FuncCompInstance(spec, z0, tuple(tuple(tables[level]) for level in range(1, L + 1)), w)
    raise InstanceError(f"unknown prompt task {prompt.task!r}")


# ------------------------------------------------------------ JSON files


def _ints_to_str(values):
    return [str(int(v)) for v in values]


def instance_to_json(inst) -> dict:
    """``{"task", "params", "payload"}`` with every integer as a decimal string."""
    task = task_of(inst)
    if task == "eva":
        params = {"n": str(inst.n)}
        payload = {"f": _ints_to_str(inst.f), "x": str(inst.x)}
    elif task == "percom":
        params = {"n": str(inst.n)}
        payload = {"sigma": _ints_to_str(inst.sigma), "tau": _ints_to_str(inst.tau)}
    elif task == "twosum":
        params = {"n": str(inst.n), "M": str(inst.M)}
        payload = {"x": _ints_to_str(inst.x)}
    else:
        spec = inst.spec
        params = {"L": str(spec.L), "m": str(spec.m), "ns": _ints_to_str(spec.ns)}
        payload = {
            "z0": str(inst.z0),
            "tables": [_ints_to_str(t) for t in inst.tables],
            "w": _ints_to_str(inst.w),
        }
    return {"task": task, "params": params, "payload": payload}


def instance_from_json(obj: dict):
    task = obj.get("task")
    params = obj.get("params", {})
    payload = obj.get("payload", {})
    try:
        if task == "eva":
            return EvaInstance(int(params["n"]), tuple(int(v) for v in payload["f"]), int(payload["x"]))
        if task == "percom":
            return PerComInstance(
                int(params["n"]),
                tuple(int(v) for v in payload["sigma"]),
                tuple(int(v) for v in payload["tau"]),
            )
        if task == "twosum":
            return TwoSumInstance(int(params["n"]), int(params["M"]), tuple(int(v) for v in payload["x"]))
        if task == "funccomp":
            spec = FuncCompSpec(int(params["L"]), int(params["m"]), tuple(int(v) for v in params["ns"]))
            return FuncCompInstance(
                spec,
                int(payload["z0"]),
                tuple(tuple(int(v) for v in t) for t in payload["tables"]),
                tuple(int(v) for v in payload["w"]),
            )
    except (KeyError, TypeError) as exc:
        raise InstanceError(f"malformed {task} instance file: {exc}") from None
    raise InstanceError(f"unknown task {task!r}")


def dumps_instance(inst) -> str:
    return json.dumps(instance_to_json(inst), indent=2) + "\n"


def loads_instance(text: str):
    return instance_from_json(json.loads(text))


# ------------------------------------------------------ parameter calculus


@dataclass(frozen=True)
class ParamSet:
    """Exact task parameters for the hybrid lower bound.

    ``Delta`` is astronomically large (a power of two whose exponent alone
    has hundreds of digits), so it is kept as its exact base-2 exponent in
    ``log2_Delta``. ``Theta`` values are exact rationals.
    """

    H: int
    d: int
    p: int
    L: int
    K: int
    sqrt_K: int
    m: int
    n: dict  # l -> n_l, l in [1, L-1]
    N: dict  # l -> N_l, l in [0, L-1]
    x: dict  # l -> x_l, l in [0, L-1]
    log2_Delta: dict  # l -> log2(Delta_l), l in [2, L]
    Theta: dict  # l -> Theta_l (Fraction), l in [1, L-1]
    A_log: dict = field(default_factory=dict)  # l -> (base, exponent) with |A_l| = base**exponent

    @property
    def hdp(self) -> int:
        return self.H * self.d * self.p

    @property
    def prompt_length(self) -> int:
        return 2 + sum(self.N.values())

    def n_product(self) -> int:
        out = 1
        for v in self.n.values():
            out *= v
        return out

    def x_product(self, upto: int) -> int:
        """``x_0 * ... * x_upto`` (empty product is 1)."""
        out = 1
        for level in range(0, upto + 1):
            out *= self.x[level]
        return out

    def funccomp_spec(self) -> FuncCompSpec:
        return FuncCompSpec(self.L, self.m, tuple(self.n[level] for level in range(1, self.L)))


def derive_params(H: int, d: int, p: int, L: int) -> ParamSet:
    if min(H, d, p) < 1 or H * d * p < 2:
        raise ValueError("need positive H, d, p with Hdp >= 2")
    if not 2 <= L <= MAX_PARAM_L:
        raise ValueError(f"L must lie in [2, {MAX_PARAM_L}] (exact big-int evaluation cap)")
    K = (H * d * p * L) ** 8 * 8 ** (2 * L * L)
    sqrt_K = (H * d * p * L) ** 4 * 8 ** (L * L)
    m = K ** (sum(8**level for level in range(L)) + 1)
    n = {level: K ** (4 * 8 ** (L - level - 1)) for level in range(1, L)}
    N = {}
    acc = m
    N[0] = acc
    for level in range(1, L):
        acc *= n[level]
        N[level] = acc
    x = {level: K ** (8 ** (L - level - 1)) for level in range(L)}
    n_prod = 1
    for v in n.values():
        n_prod *= v
    log2_delta = {}
    for level in range(2, L + 1):
        xp = 1
        for j in range(0, level - 1):
            xp *= x[j]
        log2_delta[level] = 4 * sqrt_K * xp * n_prod
    theta = {}
    for level in range(1, L):
        xp = 1
        for j in range(0, level + 1):
            xp *= x[j]
        np_ = 1
        for j in range(1, level):
            np_ *= n[j]
        theta[level] = Fraction(xp * np_, 8 ** (L * level))
    a_log = {level: (N[level - 1], N[level - 1]) for level in range(1, L + 1)}
    return ParamSet(H, d, p, L, K, sqrt_K, m, n, N, x, log2_delta, theta, a_log)


# Independent route: the same quantities written as formula strings and
# evaluated by a tiny arithmetic interpreter. Guards transcription slips.

_FORMULAS = {
    "K": "(H*d*p*L)**8 * 8**(2*L**2)",
    "m": "K**(S8 + 1)",
    "n": "K**(4 * 8**(L - l - 1))",
    "x": "K**(8**(L - l - 1))",
    "theta": "X / 8**(L*l)",
}


def _eval_formula(expr: str, env: dict):
    import ast

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id]
        if isinstance(node, ast.BinOp):
            a, b = ev(node.left), ev(node.right)
            op = type(node.op)
            if op is ast.Add:
                return a + b
            if op is ast.Sub:
                return a - b
            if op is ast.Mult:
                return a * b
            if op is ast.Pow:
                return a**b
            if op is ast.Div:
                return Fraction(a) / b
        raise ValueError(f"unsupported syntax in formula {expr!r}")

    return ev(ast.parse(expr, mode="eval"))


def rederive_params(H: int, d: int, p: int, L: int) -> dict:
    """Second, string-formula evaluation of the parameter equations."""
    env = {"H": H, "d": d, "p": p, "L": L}
    K = _eval_formula(_FORMULAS["K"], env)
    env["K"] = K
    env["S8"] = sum(8**j for j in range(L))
    m = _eval_formula(_FORMULAS["m"], env)
    n = {}
    x = {}
    for level in range(L):
        env["l"] = level
        x[level] = _eval_formula(_FORMULAS["x"], env)
        if level >= 1:
            n[level] = _eval_formula(_FORMULAS["n"], env)
    N = {level: m * _prod(n[j] for j in range(1, level + 1)) for level in range(L)}
    theta = {}
    for level in range(1, L):
        env["l"] = level
        env["X"] = _prod(x[j] for j in range(level + 1)) * _prod(n[j] for j in range(1, level))
        theta[level] = _eval_formula(_FORMULAS["theta"], env)
    root = isqrt(K)
    log2_delta = {
        level: 4 * root * _prod(x[j] for j in range(level - 1)) * _prod(n.values()) for level in range(2, L + 1)
    }
    return {"K": K, "sqrt_K": root, "m": m, "n": n, "N": N, "x": x, "Theta": theta, "log2_Delta": log2_delta}


def _prod(values):
    out = 1
    for v in values:
        out *= v
    return out


def param_equalities(ps: ParamSet) -> dict:
    """Name -> bool for every defining equality, checked against :func:`rederive_params`."""
    alt = rederive_params(ps.H, ps.d, ps.p, ps.L)
    checks = {
        "K": ps.K == alt["K"],
        "sqrt_K": ps.sqrt_K * ps.sqrt_K == ps.K and ps.sqrt_K == alt["sqrt_K"],
        "m": ps.m == alt["m"],
    }
    for level in range(1, ps.L):
        checks[f"n_{level}"] = ps.n[level] == alt["n"][level]
        checks[f"N_{level}/N_{level - 1}"] = ps.N[level] == ps.N[level - 1] * ps.n[level]
        checks[f"Theta_{level}"] = ps.Theta[level] == alt["Theta"][level]
    for level in range(ps.L):
        checks[f"N_{level}"] = ps.N[level] == alt["N"][level]
        checks[f"x_{level}"] = ps.x[level] == alt["x"][level]
    for level in range(2, ps.L + 1):
        checks[f"log2_Delta_{level}"] = ps.log2_Delta[level] == alt["log2_Delta"][level]
    return checks


# exact-integer comparison of n against (Hdp)**(4*16**L) is done directly
# below this many result bits; above it the log2 chain is used
_DIRECT_COMPARE_MAX_BITS = 1 << 22


@dataclass
class SizeBoundReport:
    holds: bool
    mode: str  # "exact" or "log2-chain"
    n: int
    bound_exponent: int  # 4 * 16**L
    log2_n_upper: int
    log2_bound_lower: int
    doubling_chain: bool  # 2 <= N_0 and 2 N_(l-1) <= N_l for all l
    n_le_2N_last: bool
    exponent_identity: bool  # sum of K-exponents of 2N_(L-1) == 12/7 * 8**(L-1) + 2/7
    steps: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "holds": self.holds,
            "mode": self.mode,
            "n": str(self.n),
            "bound_exponent": str(self.bound_exponent),
            "log2_n_upper": str(self.log2_n_upper),
            "log2_bound_lower": str(self.log2_bound_lower),
            "doubling_chain": self.doubling_chain,
            "n_le_2N_last": self.n_le_2N_last,
            "exponent_identity": self.exponent_identity,
            "steps": self.steps,
        }


def check_size_bound(ps: ParamSet, mode: str = "auto") -> SizeBoundReport:
    """Check ``n = 2 + sum N_l <= (Hdp)**(4 * 16**L)``."""
    L, hdp = ps.L, ps.hdp
    n_total = ps.prompt_length
    exponent = 4 * 16**L
    doubling = ps.N[0] >= 2 and all(2 * ps.N[level - 1] <= ps.N[level] for level in range(1, L))
    n_le = n_total <= 2 * ps.N[L - 1]
    k_exponent = (sum(8**j for j in range(L)) + 1) + sum(4 * 8 ** (L - j - 1) for j in range(1, L))
    identity = Fraction(k_exponent) == Fraction(12, 7) * 8 ** (L - 1) + Fraction(2, 7)
    log2_n_upper = n_total.bit_length()  # n < 2**bit_length
    log2_bound_lower = exponent * (hdp.bit_length() - 1)  # (Hdp)**E >= 2**(E*floor(log2 Hdp))
    steps = [
        {"step": "n <= 2 N_(L-1)", "holds": n_le},
        {"step": "2 N_(L-1) = 2 K**e, e = 12/7 8**(L-1) + 2/7", "holds": identity and 2 * ps.N[L - 1] == 2 * ps.K**k_exponent},
        {"step": "log2(n) < bitlen(n) <= 4*16**L*floor(log2 Hdp)", "holds": log2_n_upper <= log2_bound_lower},
    ]
    if mode == "auto":
        mode = "exact" if exponent * hdp.bit_length() <= _DIRECT_COMPARE_MAX_BITS else "log2-chain"
    if mode == "exact":
        holds = n_total <= hdp**exponent
    elif mode == "log2-chain":
        holds = all(s["holds"] for s in steps)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return SizeBoundReport(
        holds=holds and doubling,
        mode=mode,
        n=n_total,
        bound_exponent=exponent,
        log2_n_upper=log2_n_upper,
        log2_bound_lower=log2_bound_lower,
        doubling_chain=doubling,
        n_le_2N_last=n_le,
        exponent_identity=identity,
        steps=steps,
    )


def default_hybrid_schedule(L: int) -> tuple:
    """``(a_1, ..., a_L) = (1, 2**(3L**2), ..., 2**(3L**2))``."""
    return (1,) + (2 ** (3 * L * L),) * (L - 1)


@dataclass
class HybridBudgetReport:
    holds: bool
    a1_ok: bool
    failing: list
    rows: list  # per l: {"l", "lhs", "rhs_sq", "holds"}

    def to_json(self) -> dict:
        return {
            "holds": self.holds,
            "a1_ok": self.a1_ok,
            "failing": self.failing,
            "rows": [
                {"l": r["l"], "lhs": str(r["lhs"]), "log2_rhs": str(r["log2_rhs"]), "holds": r["holds"]}
                for r in self.rows
            ],
        }


def check_hybrid_budget(ps: ParamSet, a) -> HybridBudgetReport:
    """Verify ``Hd(d+1)p (a_1+...+a_(l+1)) <= sqrt(K) (x_0...x_(l-1)) (n_1...n_(L-1))``.

    The square root is avoided by comparing squares of both (non-negative)
    sides. ``a_1 <= 1`` is checked and reported separately.
    """
    a = tuple(int(v) for v in a)
    if len(a) != ps.L:
        raise ValueError(f"schedule needs L={ps.L} entries, got {len(a)}")
    if any(v < 0 for v in a):
        raise ValueError("schedule entries must be non-negative")
    coef = ps.H * ps.d * (ps.d + 1) * ps.p
    n_prod = ps.n_product()
    rows, failing = [], []
    for level in range(1, ps.L):
        lhs = coef * sum(a[: level + 1])
        prod = ps.x_product(level - 1) * n_prod
        ok = lhs * lhs <= ps.K * prod * prod
        rows.append({"l": level, "lhs": lhs, "log2_rhs": (ps.sqrt_K * prod).bit_length() - 1, "holds": ok})
        if not ok:
            failing.append(level)
    a1_ok = a[0] <= 1
    return HybridBudgetReport(holds=not failing and a1_ok, a1_ok=a1_ok, failing=failing, rows=rows)
