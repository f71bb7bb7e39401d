"""Command-line driver wiring the compiler, machine, and analysis together.

Exit codes: 0 success; 1 verification, diff, or statistical failure;
2 usage, parse, or semantic error; 3 runtime abort or fuel exhaustion.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis, codegen, frontend, isa
from .isa import DEFAULT_FUEL, ObjectCode, RunStatus, hex_word


def _parse_assignments(pairs: list[str], what: str) -> dict[str, int]:
    out: dict[str, int] = {}
    for p in pairs:
        if "=" not in p:
            raise ValueError(f"bad {what} {p!r}, expected name=value")
        name, _, val = p.partition("=")
        out[name.strip()] = int(val.strip(), 0) & isa.MASK32
    return out


def _load_object(path: str) -> ObjectCode:
    return ObjectCode.from_json(Path(path).read_text())


def _load_scheme(path: str) -> codegen.ObfuscationScheme:
    return codegen.ObfuscationScheme.from_json(Path(path).read_text())


def _compile_source(path: str, seed: int, pin_io: bool):
    checked = frontend.parse_and_check(Path(path).read_text())
    nominal = codegen.lower_nominal(checked, pin_io=pin_io)
    code, scheme = codegen.randomize(nominal, seed)
    return checked, nominal, code, scheme


def _infer_pin_io(code: ObjectCode, scheme: codegen.ObfuscationScheme) -> bool:
    if not code.code:
        return True
    if code.in_vars:
        slot = scheme.pre_slot(0, code.in_vars[0])
        return bool(scheme.slot_pinned[slot])
    if code.out_vars:
        slot = scheme.post_slot(len(code.code) - 1, code.out_vars[0])
        return bool(scheme.slot_pinned[slot])
    return True


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_compile(args: argparse.Namespace) -> int:
    src = Path(args.input)
    out_obj = Path(args.output) if args.output else src.with_suffix(".obj.json")
    out_scheme = Path(args.scheme) if args.scheme else src.with_suffix(".scheme.json")
    _, _, code, scheme = _compile_source(args.input, args.seed, not args.no_pin_io)
    out_obj.write_text(code.to_json())
    out_scheme.write_text(scheme.to_json())
    print(f"wrote {out_obj} ({len(code.code)} instructions, {len(code.vars)} locations)")
    print(f"wrote {out_scheme} ({len(scheme.slot_values)} slots)")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    code = _load_object(args.obj)
    inputs = _parse_assignments(args.inputs, "--in")
    scheme = _load_scheme(args.scheme) if args.scheme else None
    if scheme is not None:
        init = analysis.physical_inputs(code, scheme, inputs)
    else:
        name_to_id = {code.vars[v]: v for v in code.in_vars}
        missing = set(name_to_id) - set(inputs)
        if missing:
            raise ValueError(f"missing input values for: {', '.join(sorted(missing))}")
        extra = set(inputs) - set(name_to_id)
        if extra:
            raise ValueError(f"values supplied for non-input variables: {', '.join(sorted(extra))}")
        init = {name_to_id[k]: v for k, v in inputs.items()}
    res = isa.run(code, init, args.fuel)
    if args.trace:
        with open(args.trace, "w") as fp:
            res.trace.write_jsonl(fp)
    if res.status is not RunStatus.HALTED:
        print(f"error: run {res.status.value} at pc {res.final_pc}", file=sys.stderr)
        return 3
    if scheme is not None:
        outs = analysis.decode_outputs(code, scheme, res.final_store)
    else:
        outs = {code.vars[v]: res.final_store[v] for v in code.out_vars}
        print("note: printing physical values (no scheme supplied)", file=sys.stderr)
    for name in (code.vars[v] for v in code.out_vars):
        print(f"{name}={hex_word(outs[name])}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    code = _load_object(args.obj)
    scheme = _load_scheme(args.scheme)
    checked = frontend.parse_and_check(Path(args.input).read_text())
    pin_io = _infer_pin_io(code, scheme)
    nominal = codegen.lower_nominal(checked, pin_io=pin_io)
    report = codegen.verify_scheme(code, scheme, nominal)
    if not report.ok:
        print(f"verify: FAILED ({len(report.violations)} violations)")
        for v in report.violations[:20]:
            print(f"  {v}")
        return 1
    print(f"verify: scheme consistent over {report.checked_instructions} instructions")
    if args.inputs:
        inputs = _parse_assignments(args.inputs, "--in")
        rep = analysis.lockstep_check(checked, code, scheme, inputs, args.fuel)
        if not rep.ok:
            print(f"lockstep: FAILED: {rep.divergence}")
            return 1
        print(f"lockstep: ok over {rep.steps} steps, outputs match reference")
    return 0


def cmd_diff(args: argparse.Namespace) -> int:
    a = _load_object(args.obj_a)
    b = _load_object(args.obj_b)
    report = analysis.structural_diff(a, b)
    if report.structurally_identical:
        print(f"structural: identical; constants differ at {len(report.constant_diffs)} sites")
        return 0
    print(f"structural: DIFFERENT ({len(report.structural_diffs)} mismatches)")
    for d in report.structural_diffs[:20]:
        print(f"  {d}")
    return 1


def cmd_ensemble(args: argparse.Namespace) -> int:
    checked = frontend.parse_and_check(Path(args.input).read_text())
    inputs = _parse_assignments(args.inputs, "--in")
    seeds = [(args.seed + k) & (2**64 - 1) for k in range(args.count)]
    ens = analysis.ensemble(checked, seeds, inputs, args.fuel, pin_io=not args.no_pin_io)
    n = len(ens.members)

    uniform_positions: list[analysis.TracePosition] = []
    indep_pairs: list[tuple[analysis.TracePosition, analysis.TracePosition]] = []
    if args.positions:
        spec = json.loads(Path(args.positions).read_text())
        uniform_positions = [
            analysis.TracePosition(p["pc"], p["occ"], p["field"]) for p in spec
        ]
    elif n >= 5 * 256:
        uniform_positions = analysis.default_positions(ens, 20)
        indep_pairs = analysis.free_position_pairs(ens, 20)
    linked_pairs = analysis.loop_header_pairs(ens)

    report = analysis.build_report(
        ens, args.input, uniform_positions, indep_pairs, linked_pairs
    )
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")

    rejects = {"uniform": 0, "indep": 0, "linked": 0}
    for t in report["tests"]:
        if t["verdict"] == "reject":
            rejects[t["kind"]] += 1
    counts = {k: sum(1 for t in report["tests"] if t["kind"] == k) for k in rejects}
    print(
        f"ensemble: n={n}, structural ok, "
        f"uniform {counts['uniform'] - rejects['uniform']}/{counts['uniform']}, "
        f"indep {counts['indep'] - rejects['indep']}/{counts['indep']}, "
        f"linked {counts['linked'] - rejects['linked']}/{counts['linked']}"
    )
    ok = rejects["uniform"] <= 1 and rejects["indep"] <= 1 and rejects["linked"] == 0
    return 0 if ok else 1


def cmd_rekey(args: argparse.Namespace) -> int:
    code = _load_object(args.obj)
    by_name = _parse_assignments(args.deltas, "--delta")
    deltas: dict[int, int] = {}
    for name, val in by_name.items():
        if name not in code.vars:
            raise ValueError(f"unknown variable {name!r}")
        deltas[code.vars.index(name)] = val
    rekeyed = analysis.rekey(code, deltas)
    out = Path(args.output) if args.output else Path(args.obj).with_suffix(".rekeyed.json")
    out.write_text(rekeyed.to_json())
    changed = sum(
        1 for i, j in zip(code.code, rekeyed.code) if (i.a, i.b) != (j.a, j.b)
    )
    print(f"wrote {out} (constants changed at {changed} instructions)")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _hex64(s: str) -> int:
    return int(s, 0) & (2**64 - 1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="oicc",
        description="Obfuscating compiler and analysis harness for the "
                    "add-compare-jump one-instruction machine.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="compile a .min source file")
    p.add_argument("-i", "--input", required=True, help="source file (.min)")
    p.add_argument("-o", "--output", help="object code output (JSON)")
    p.add_argument("--scheme", help="obfuscation scheme output (JSON)")
    p.add_argument("--seed", type=_hex64, default=0, help="64-bit seed (hex or decimal)")
    p.add_argument("--no-pin-io", action="store_true", help="leave in/out deltas free")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="run compiled object code")
    p.add_argument("obj", help="object code file")
    p.add_argument("--scheme", help="scheme file (decode outputs, shift inputs)")
    p.add_argument("--in", dest="inputs", action="append", default=[],
                   metavar="NAME=VALUE", help="input assignment (repeatable)")
    p.add_argument("--fuel", type=int, default=DEFAULT_FUEL)
    p.add_argument("--trace", help="write a JSONL trace here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check object code against source and scheme")
    p.add_argument("-i", "--input", required=True, help="source file (.min)")
    p.add_argument("obj", help="object code file")
    p.add_argument("--scheme", required=True, help="scheme file")
    p.add_argument("--in", dest="inputs", action="append", default=[],
                   metavar="NAME=VALUE", help="also lockstep-run on this input")
    p.add_argument("--fuel", type=int, default=DEFAULT_FUEL)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("diff", help="compare two object code files")
    p.add_argument("obj_a")
    p.add_argument("obj_b")
    p.set_defaults(func=cmd_diff)

    p = sub.add_parser("ensemble", help="recompile under many seeds and test traces")
    p.add_argument("-i", "--input", required=True, help="source file (.min)")
    p.add_argument("-n", dest="count", type=int, required=True, help="number of seeds")
    p.add_argument("--seed", type=_hex64, default=0, help="base seed")
    p.add_argument("--in", dest="inputs", action="append", default=[],
                   metavar="NAME=VALUE", help="the fixed input (repeatable)")
    p.add_argument("--fuel", type=int, default=DEFAULT_FUEL)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--positions", help="JSON file with explicit positions to test")
    p.add_argument("--no-pin-io", action="store_true")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("rekey", help="fold fresh per-variable deltas into the constants")
    p.add_argument("obj", help="object code file")
    p.add_argument("-o", "--output", help="rekeyed object output")
    p.add_argument("--delta", dest="deltas", action="append", default=[],
                   metavar="NAME=VALUE", help="per-variable delta (repeatable)")
    p.set_defaults(func=cmd_rekey)

    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except frontend.ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return 2
    except frontend.SemanticErrors as e:
        for err in e.errors:
            print(f"semantic error: {err}", file=sys.stderr)
        return 2
    except codegen.LoweringError as e:
        print(f"compile error: {e}", file=sys.stderr)
        return 2
    except analysis.RekeyError as e:
        print(f"rekey error: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except analysis.EnsembleError as e:
        print(f"ensemble error: {e}", file=sys.stderr)
        return 1
    except (analysis.PositionError, analysis.StatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def cli_main() -> None:  # console-script entry
    sys.exit(main())


if __name__ == "__main__":
    cli_main()
