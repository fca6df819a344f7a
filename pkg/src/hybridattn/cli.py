"""Command-line runner: ``hybridattn gen|solve|collide|params|budget|table``.

Every subcommand is deterministic for a fixed seed and config. Output
goes to ``--out``, else to a file under ``$HYBRIDATTN_OUT`` when that is
set, else to stdout. ``--config FILE`` holds a JSON object whose keys
override the matching flags.

Exit codes: 0 success, 2 validation error, 3 resource cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import comm
from .comm import (
    SET_ENCODERS,
    InjectiveBundle,
    ProtocolSpec,
    ProtocolViolation,
    RandomHashBundle,
    ResourceCapError,
    RetrievalFactBundle,
    SetEncodingBundle,
    TruncationBundle,
    budget,
    find_block_collision,
    hybrid_spec,
    run_adversary,
    run_hybrid,
    search_collision,
    sparse_adversary,
    verify_witness,
)
from .comm.strategies import HonestRnnBundle, tiny_rnn
from .constructions import DecodeError, hdp_of, retrieval_precision, solve_eva, solve_percom
from .numerics import PrecisionConfig, RepresentabilityError
from .tasks import (
    FuncCompSpec,
    InstanceError,
    check_hybrid_budget,
    check_size_bound,
    default_hybrid_schedule,
    derive_params,
    encode_prompt,
    gen_instance,
    instance_from_json,
    instance_to_json,
    oracle,
    param_equalities,
)

OUT_ENV = "HYBRIDATTN_OUT"
EXIT_OK, EXIT_INVALID, EXIT_CAP = 0, 2, 3
# integers up to this many bits are written out in decimal
DECIMAL_MAX_BITS = 4096
SEED_LIMIT = 1 << 64


class ConfigError(ValueError):
    pass


# -------------------------------------------------------------- helpers


def bignat_json(v: int) -> dict:
    """Exact big integer as a decimal string, or as log2 bounds when huge."""
    v = int(v)
    bits = v.bit_length()
    out = {"bits": bits}
    if v > 0 and v & (v - 1) == 0:
        out["log2"] = str(bits - 1)
    if bits <= DECIMAL_MAX_BITS:
        out["decimal"] = str(v)
    else:
        out["log2_floor"] = str(bits - 1)
    return out


def fraction_json(q: Fraction) -> dict:
    return {"num": bignat_json(q.numerator), "den": bignat_json(q.denominator)}


def _emit(args, name: str, text: str) -> None:
    path = args.out
    if path is None and os.environ.get(OUT_ENV):
        path = str(Path(os.environ[OUT_ENV]) / name)
    if path is None:
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sizes(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"size {item!r} must look like key=value")
        key, value = item.split("=", 1)
        if key == "ns":
            out[key] = tuple(int(v) for v in value.split(",") if v)
        elif key == "modulus":
            out[key] = value
        else:
            out[key] = int(value)
    return out


def _ints(text):
    if text is None or isinstance(text, (list, tuple)):
        return text
    return tuple(int(v) for v in str(text).split(",") if v)


def _apply_config(args, parser) -> None:
    if not args.config:
        return
    try:
        obj = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    known = set(vars(args))
    for key, value in obj.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("cmd", "config", "func"):
            raise ConfigError(f"unknown config key {key!r} for {args.cmd}")
        setattr(args, dest, value)


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < SEED_LIMIT:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return seed


# ------------------------------------------------------------------ gen


def cmd_gen(args) -> int:
    seed = _check_seed(args.seed)
    sizes = args.sizes if isinstance(args.sizes, dict) else _sizes(args.sizes)
    if args.task == "funccomp" and "ns" in sizes:
        sizes["ns"] = tuple(sizes["ns"])
    inst = gen_instance(args.task, seed, **sizes)
    obj = instance_to_json(inst)
    prompt = encode_prompt(inst)
    obj["prompt"] = {
        "length": len(prompt),
        "cfg": prompt.cfg.to_json(),
        "tokens": [[int(v) for v in row] for row in prompt.tokens],
    }
    obj["seed"] = str(seed)
    _emit(args, f"{args.task}-{seed}.json", _dump(obj))
    return EXIT_OK


# ---------------------------------------------------------------- solve


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def solve_record(inst, mechanism: str, p: int | None = None, frac_bits: int | None = None, log_base: str = "e", schedule=None) -> dict:
    """Run a mechanism on an instance and compare with the oracle."""
    task = type(inst).__name__
    truth = oracle(inst)
    rec = {"mechanism": mechanism, "oracle": _jsonable(truth), "answer": None, "agreement": False, "error": None}
    if mechanism == "retrieval":
        if task not in ("EvaInstance", "PerComInstance"):
            raise ConfigError("the retrieval head solves eva and percom only")
        n = inst.n
        cfg = retrieval_precision(n)
        solver = solve_eva if task == "EvaInstance" else solve_percom
        try:
            if p is not None:
                s = frac_bits if frac_bits is not None else min(cfg.frac_bits, max(int(p) - 1, 0))
                cfg = PrecisionConfig(int(p), int(s))
            rec["precision"] = cfg.to_json()
            rec.update(hdp_of(n, cfg))
            ans = solver(inst, cfg, log_base)
        except (DecodeError, RepresentabilityError, ValueError) as exc:
            d = hdp_of(n, retrieval_precision(n))["d"]
            rec.update({"H": 1, "d": d, "p": int(p) if p is not None else cfg.total_bits})
            rec["Hdp"] = rec["d"] * rec["p"]
            rec["error"] = f"{type(exc).__name__}: {exc}"
            return rec
    elif mechanism == "hybrid":
        if task != "FuncCompInstance":
            raise ConfigError("the hybrid protocol solves funccomp only")
        L = inst.spec.L
        sched = tuple(schedule) if schedule else (1,) + (0,) * (L - 1)
        spec = hybrid_spec(inst.spec, sched)
        rec.update({"H": spec.H, "d": spec.d, "p": spec.p, "Hdp": spec.H * spec.d * spec.p, "schedule": list(sched)})
        r = run_hybrid(spec, RetrievalFactBundle(spec), inst)
        rec["transcript_bits"] = r.transcript.total_bits()
        ans = r.answer
    else:
        raise ConfigError(f"unknown mechanism {mechanism!r}")
    rec["answer"] = _jsonable(ans)
    rec["agreement"] = ans == truth
    return rec


def cmd_solve(args) -> int:
    try:
        obj = json.loads(Path(args.instance).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read instance: {exc}") from exc
    inst = instance_from_json(obj)
    rec = solve_record(inst, args.mechanism, args.p, args.frac_bits, args.log_base, _ints(args.schedule))
    rec["task"] = obj.get("task")
    _emit(args, f"solve-{obj.get('task')}.json", _dump(rec))
    return EXIT_OK


# -------------------------------------------------------------- collide

STRATEGIES = ("honest-rnn", "hash", "truncation", "injective") + SET_ENCODERS


def make_bundle(spec: ProtocolSpec, strategy: str, rule: str = "sum"):
    if spec.kind == "sparse_twosum":
        if strategy not in SET_ENCODERS:
            raise ConfigError(f"sparse models take a set encoder: {', '.join(SET_ENCODERS)}")
        return SetEncodingBundle(spec, strategy)
    if strategy == "honest-rnn":
        if not spec.kind.startswith("rnn"):
            raise ConfigError("honest-rnn wraps rnn_* kinds only")
        return HonestRnnBundle(spec, tiny_rnn(rule, spec.m_hidden, spec.p))
    if strategy == "hash":
        return RandomHashBundle(spec)
    if strategy == "truncation":
        return TruncationBundle(spec)
    if strategy == "injective":
        return InjectiveBundle(spec)
    raise ConfigError(f"unknown strategy {strategy!r}")


def collide_record(kind: str, n: int, bits: int, strategy: str, M=None, B=None, k=None, cot=False, rule="sum") -> tuple:
    """``(summary, witness_json_or_None)`` for one collision search."""
    if kind == "sparse_twosum":
        spec = ProtocolSpec(kind, n=n, M=M, B=B or 4, k=k or 1, block_bits=bits)
        bundle = make_bundle(spec, strategy)
        col = find_block_collision(spec, bundle)
        summary = {"kind": kind, "n": n, "M": spec.modulus, "B": spec.B, "k": spec.k, "budget": bits,
                   "strategy": strategy, "block_space": comm.block_space_size(spec.modulus, spec.B),
                   "found": col is not None}
        if col is None:
            return summary, None
        adv = sparse_adversary((col.block_a, col.block_b), n, spec.modulus, spec.B, selected=bundle.select(None))
        res = run_adversary(spec, bundle, adv)
        verified = res["a"]["fingerprint"] == res["b"]["fingerprint"] and res["a"]["oracle"] != res["b"]["oracle"]
        summary["verified"] = verified
        witness = {
            "block_a": list(col.block_a),
            "block_b": list(col.block_b),
            "message": col.message,
            "v": adv.v,
            "x_last": adv.x_last,
            "instance_a": instance_to_json(adv.instance_a),
            "instance_b": instance_to_json(adv.instance_b),
            "oracle_a": res["a"]["oracle"],
            "oracle_b": res["b"]["oracle"],
        }
        return summary, witness
    if strategy == "honest-rnn":
        spec = ProtocolSpec(kind, n=n, M=M, H=1, d=1, p=bits, m_hidden=1, cot=cot)
    else:
        spec = ProtocolSpec(kind, n=n, M=M, message_bits=bits, cot=cot)
    bundle = make_bundle(spec, strategy, rule)
    res = search_collision(spec, bundle)
    classes = comm.fingerprint_classes(spec, bundle, comm.default_inputs(spec), comm.enumerate_queries(spec.task, n, spec.modulus)[0])
    hist = {}
    for members in classes.values():
        hist[len(members)] = hist.get(len(members), 0) + 1
    summary = {
        "kind": kind,
        "n": n,
        "budget": budget(spec).channels["alice->bob"] * spec.rounds,
        "strategy": strategy,
        "inputs": res.inputs,
        "classes": len(classes),
        "class_size_histogram": {str(s): c for s, c in sorted(hist.items())},
        "pigeonhole_forced": res.forced,
        "found": res.witness is not None,
    }
    if res.witness is None:
        return summary, None
    summary["verified"] = verify_witness(res.witness, spec, bundle)
    return summary, res.witness.to_json(spec)


def cmd_collide(args) -> int:
    summary, witness = collide_record(
        args.kind, int(args.n), int(args.budget), args.strategy, args.M, args.B, args.k, bool(args.cot), args.rule
    )
    _emit(args, f"collide-{args.kind}-n{args.n}.json", _dump({"summary": summary, "witness": witness}))
    return EXIT_OK


# --------------------------------------------------------------- params


def params_report(H: int, d: int, p: int, L: int, schedule=None) -> dict:
    ps = derive_params(H, d, p, L)
    sched = tuple(schedule) if schedule else default_hybrid_schedule(L)
    size = check_size_bound(ps)
    hyb = check_hybrid_budget(ps, sched)
    eqs = param_equalities(ps)
    return {
        "H": H, "d": d, "p": p, "L": L,
        "Hdp": ps.hdp,
        "K": bignat_json(ps.K),
        "log2_K": str(ps.K.bit_length() - 1),
        "sqrt_K": bignat_json(ps.sqrt_K),
        "m": bignat_json(ps.m),
        "n": {str(lv): bignat_json(v) for lv, v in ps.n.items()},
        "N": {str(lv): bignat_json(v) for lv, v in ps.N.items()},
        "x": {str(lv): bignat_json(v) for lv, v in ps.x.items()},
        "log2_Delta": {str(lv): bignat_json(v) for lv, v in ps.log2_Delta.items()},
        "Theta": {str(lv): fraction_json(v) for lv, v in ps.Theta.items()},
        "prompt_length": bignat_json(ps.prompt_length),
        "equalities": eqs,
        "equalities_hold": all(eqs.values()),
        "schedule": [str(a) for a in sched],
        "size_bound": size.to_json(),
        "hybrid_budget": hyb.to_json(),
    }


def cmd_params(args) -> int:
    rep = params_report(int(args.H), int(args.d), int(args.p), int(args.L), _ints(args.schedule))
    _emit(args, f"params-{args.H}-{args.d}-{args.p}-{args.L}.json", _dump(rep))
    return EXIT_OK


# --------------------------------------------------------------- budget


def cmd_budget(args) -> int:
    if args.kind == "hybrid_funccomp":
        fc = FuncCompSpec(int(args.L), int(args.m), _ints(args.ns) or ())
        sched = _ints(args.schedule) or (1,) + (0,) * (fc.L - 1)
        spec = hybrid_spec(fc, sched, H=int(args.H), d=int(args.d), p=int(args.p))
    else:
        spec = ProtocolSpec(
            args.kind, n=int(args.n), H=int(args.H), d=int(args.d), p=int(args.p), m_hidden=int(args.m_hidden),
            rounds=int(args.rounds), cot=bool(args.cot), M=args.M, B=args.B, k=args.k,
        )
    out = budget(spec).to_json()
    out["kind"] = args.kind
    if args.kind != "hybrid_funccomp":
        out["input_space"] = str(comm.input_space_size(spec))
        out["pigeonhole_forced"] = comm.lower_bound_forced(spec)
    _emit(args, f"budget-{args.kind}.json", _dump(out))
    return EXIT_OK


# ---------------------------------------------------------------- table

TABLE_FIELDS = ("mechanism", "task", "size", "budget_bits", "outcome", "detail")


def _comm_row(mechanism, task, kind, n, spec_kwargs, strategy="truncation"):
    spec = ProtocolSpec(kind, n=n, **spec_kwargs)
    bits = budget(spec).channels["alice->bob"]
    res = search_collision(spec, make_bundle(spec, strategy))
    outcome = "collision" if res.witness is not None else "no-collision"
    detail = f"{strategy}; {res.classes} classes over {res.inputs} inputs"
    return (mechanism, task, f"n={n}", bits, outcome, detail)


def hierarchy_rows(seed: int = 0) -> list:
    """Qualitative desk-scale outcomes per (mechanism, task)."""
    rows = []
    # full attention: the retrieval head on Eva and PerCom
    for task, n, solver, count in (("eva", 16, solve_eva, 20), ("percom", 8, solve_percom, 10)):
        cfg = retrieval_precision(n)
        ok = sum(solver(inst, cfg) == oracle(inst) for inst in (gen_instance(task, seed + s, n=n) for s in range(count)))
        rows.append(("full", task, f"n={n}", hdp_of(n, cfg)["Hdp"], "solved" if ok == count else "failed", f"{ok}/{count} instances"))
    rows.append(("full", "twosum", "-", "", "n/a", "no upper-bound construction shipped"))
    fc = FuncCompSpec(2, 2, (2,))
    for sched, label in (((0, 0), "full"), ((1, 0), "hybrid")):
        spec = hybrid_spec(fc, sched)
        bundle = RetrievalFactBundle(spec)
        insts = [gen_instance("funccomp", seed + s, spec=fc) for s in range(20)]
        ok = sum(run_hybrid(spec, bundle, inst).answer == oracle(inst) for inst in insts)
        outcome = "solved" if ok == len(insts) else "failed"
        rows.append((label, "funccomp", "L=2,m=2,n1=2", budget(spec).total, outcome, f"retrieval-fact protocol, schedule {sched}; {ok}/{len(insts)} instances"))
    # linear attention as an RNN with H d (d + 1) p bits per message (H=1, d=1, p=2)
    lin = {"message_bits": 4}
    rows.append(_comm_row("linear", "eva", "rnn_eva", 3, lin))
    rows.append(_comm_row("linear", "percom", "rnn_percom", 4, lin))
    rows.append(_comm_row("linear", "twosum", "linear_twosum", 4, {"H": 1, "d": 1, "p": 2, "M": 8}))
    rows.append(("linear", "funccomp", "-", "", "n/a", "hybrid rows cover linear layers on funccomp"))
    # log-linear: R(n + 1) d^2 p H bits (H=1, d=1, p=1)
    ll = {"H": 1, "d": 1, "p": 1}
    rows.append(_comm_row("loglinear", "eva", "loglinear_eva", 3, ll))
    rows.append(_comm_row("loglinear", "percom", "loglinear_percom", 4, ll))
    rows.append(_comm_row("loglinear", "twosum", "loglinear_twosum", 6, {**ll, "M": 8}))
    rows.append(("loglinear", "funccomp", "-", "", "n/a", "no log-linear funccomp protocol"))
    # sparse: per-block budget Hdp against the block value-set space
    rows.append(("sparse", "eva", "-", "", "n/a", "sparse model defined for 2-Sum"))
    rows.append(("sparse", "percom", "-", "", "n/a", "sparse model defined for 2-Sum"))
    spec = ProtocolSpec("sparse_twosum", n=8, H=1, d=2, p=2, B=4, k=1, M=8)
    bundle = SetEncodingBundle(spec, "truncated-bitmask")
    col = find_block_collision(spec, bundle)
    detail = "no block collision"
    outcome = "no-collision"
    if col is not None:
        adv = sparse_adversary((col.block_a, col.block_b), 8, 8, 4, selected=bundle.select(None))
        res = run_adversary(spec, bundle, adv)
        same = res["a"]["fingerprint"] == res["b"]["fingerprint"]
        outcome = "collision" if same and res["a"]["oracle"] != res["b"]["oracle"] else "failed"
        detail = f"truncated-bitmask; blocks {list(col.block_a)} vs {list(col.block_b)}"
    rows.append(("sparse", "twosum", "n=8,B=4,k=1,M=8", budget(spec).channels["block->last"], outcome, detail))
    rows.append(("sparse", "funccomp", "-", "", "n/a", "sparse model defined for 2-Sum"))
    return rows


SUITES = {"hierarchy": hierarchy_rows}


def cmd_table(args) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; known: {', '.join(SUITES)}")
    rows = SUITES[args.suite](_check_seed(args.seed))
    if args.format == "json":
        text = _dump([dict(zip(TABLE_FIELDS, r)) for r in rows])
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TABLE_FIELDS)
        w.writerows(rows)
        text = buf.getvalue()
    _emit(args, f"table-{args.suite}.{args.format}", text)
    return EXIT_OK


# ---------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybridattn", description="Attention-expressiveness testbed.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        p.add_argument("--out", help="output file (default: $HYBRIDATTN_OUT/<name> or stdout)")
        p.add_argument("--config", help="JSON file whose keys override the flags")

    p = sub.add_parser("gen", help="generate a task instance")
    p.add_argument("task", choices=("eva", "percom", "twosum", "funccomp"))
    p.add_argument("sizes", nargs="*", help="key=value sizes, e.g. n=16 or L=2 m=2 ns=2")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run a mechanism on an instance file")
    p.add_argument("instance")
    p.add_argument("--mechanism", default="retrieval", choices=("retrieval", "hybrid"))
    p.add_argument("--p", type=int)
    p.add_argument("--frac-bits", type=int)
    p.add_argument("--log-base", default="e", choices=("e", "2"))
    p.add_argument("--schedule", help="comma-separated linear counts a_1..a_L")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("collide", help="search a protocol for a collision witness")
    p.add_argument("kind", choices=comm.KINDS[:-1])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--budget", type=int, required=True, help="bits per message (per block for sparse)")
    p.add_argument("--strategy", default="truncation", choices=STRATEGIES)
    p.add_argument("--rule", default="sum", choices=("sum", "last", "mix"))
    p.add_argument("--M", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--cot", action="store_true")
    common(p)
    p.set_defaults(func=cmd_collide)

    p = sub.add_parser("params", help="derive and check the big-integer parameters")
    for name in ("H", "d", "p", "L"):
        p.add_argument(name, type=int)
    p.add_argument("--schedule", help="comma-separated a_1..a_L (default 1, 2^(3L^2), ...)")
    common(p)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("budget", help="closed-form message budgets")
    p.add_argument("kind", choices=comm.KINDS)
    for name, default in (("n", 1), ("H", 1), ("d", 1), ("p", 1), ("m-hidden", 1), ("rounds", 1), ("L", 2), ("m", 2)):
        p.add_argument(f"--{name}", type=int, default=default)
    p.add_argument("--M", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--ns", help="comma-separated n_1..n_(L-1) for hybrid")
    p.add_argument("--schedule")
    p.add_argument("--cot", action="store_true")
    common(p)
    p.set_defaults(func=cmd_budget)

    p = sub.add_parser("table", help="run a named sweep and emit a table")
    p.add_argument("suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    common(p)
    p.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, parser)
        return args.func(args)
    except ResourceCapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ConfigError, InstanceError, ProtocolViolation, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
