"""Checking and measurement tools around the compiler.

* ``reference_eval``: direct interpretation of the checked source, the
  nominal-semantics oracle.  Relational operators use the machine's wrapped
  comparison (``<`` is the sign of the wrapped difference) so source and
  object code agree exactly, including on wraparound.
* ``lockstep_check``: runs compiled code next to its nominal rendering and
  asserts, at every step, that each variable's stored value is the nominal
  value plus the offset of its current slot.
* ``structural_diff``: object-code comparison separating skeleton fields
  from embedded constants.
* ``ensemble``: many seeded recompilations of one program on one input,
  with structural identity and branch congruence enforced.
* trace positions, linkage classification, chi-square uniformity and
  independence tests (Wilson-Hilferty p-values), and data-level rekeying.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, NamedTuple, Optional, Sequence, Union

from .codegen import NominalCode, ObfuscationScheme, lower_nominal, randomize
from .frontend import (
    Add,
    Assign,
    CheckedAst,
    Cond,
    Const,
    Expr,
    If,
    Index,
    Stmt,
    Sub,
    Var,
    While,
)
from .isa import (
    DEFAULT_FUEL,
    MASK32,
    Instruction,
    ObjectCode,
    RunResult,
    RunStatus,
    Trace,
    lt_wrap,
    run,
)
from .prng import SplitMix64

ALPHA = 0.001


class PositionError(Exception):
    code = "E_POS"


class StatError(Exception):
    code = "E_SMALL"


class RekeyError(Exception):
    code = "E_IODELTA"


class EnsembleError(Exception):
    pass


# ---------------------------------------------------------------------------
# Reference interpreter
# ---------------------------------------------------------------------------

@dataclass
class RefResult:
    status: RunStatus
    outputs: Optional[dict[str, int]]  # None unless halted


class _Abort(Exception):
    pass


class _OutOfFuel(Exception):
    pass


def reference_eval(checked: CheckedAst, inputs: Mapping[str, int],
                   fuel: int = DEFAULT_FUEL) -> RefResult:
    """Interpret the source directly.  Assignment targets are evaluated
    value-first; a dynamic index outside the array aborts, matching the
    compiled dispatch default."""
    scalars: dict[str, int] = {}
    arrays: dict[str, list[int]] = {}
    for sym in checked.symbols.values():
        if sym.kind == "scalar":
            scalars[sym.name] = 0
        else:
            arrays[sym.name] = [0] * sym.size
    in_names = {checked.var_names[v] for v in checked.in_ids}
    given = set(inputs)
    if given != in_names:
        raise ValueError(f"inputs must assign exactly {sorted(in_names)}, got {sorted(given)}")
    for name, val in inputs.items():
        scalars[name] = val & MASK32

    budget = [fuel]

    def charge() -> None:
        budget[0] -= 1
        if budget[0] < 0:
            raise _OutOfFuel()

    def ev(e: Expr) -> int:
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Var):
            return scalars[e.name]
        if isinstance(e, Index):
            idx = ev(e.index)
            arr = arrays[e.name]
            if idx >= len(arr):
                raise _Abort()
            return arr[idx]
        if isinstance(e, Add):
            return (ev(e.left) + ev(e.right)) & MASK32
        if isinstance(e, Sub):
            return (ev(e.left) - ev(e.right)) & MASK32
        raise TypeError(f"unknown expression {e!r}")  # pragma: no cover

    def test(c: Cond) -> bool:
        a = ev(c.left)
        b = ev(c.right)
        if c.op == "<":
            return lt_wrap(a, b)
        if c.op == "<=":
            return not lt_wrap(b, a)
        if c.op == ">":
            return lt_wrap(b, a)
        if c.op == ">=":
            return not lt_wrap(a, b)
        if c.op == "==":
            return a == b
        if c.op == "!=":
            return a != b
        raise ValueError(f"unknown relop {c.op!r}")  # pragma: no cover

    def exec_stmts(stmts: list[Stmt]) -> None:
        for s in stmts:
            charge()
            if isinstance(s, Assign):
                val = ev(s.rhs)
                if isinstance(s.lhs, Var):
                    scalars[s.lhs.name] = val
                else:
                    idx = ev(s.lhs.index)
                    arr = arrays[s.lhs.name]
                    if idx >= len(arr):
                        raise _Abort()
                    arr[idx] = val
            elif isinstance(s, If):
                if test(s.cond):
                    exec_stmts(s.then_body)
                else:
                    exec_stmts(s.else_body)
            elif isinstance(s, While):
                while True:
                    charge()
                    if not test(s.cond):
                        break
                    exec_stmts(s.body)

    try:
        exec_stmts(checked.ast.body)
    except _Abort:
        return RefResult(RunStatus.ABORTED, None)
    except _OutOfFuel:
        return RefResult(RunStatus.FUEL_EXHAUSTED, None)
    outs = {checked.var_names[v]: scalars[checked.var_names[v]] for v in checked.out_ids}
    return RefResult(RunStatus.HALTED, outs)


# ---------------------------------------------------------------------------
# Lockstep simulation check
# ---------------------------------------------------------------------------

def nominal_from_physical(code: ObjectCode, scheme: ObfuscationScheme) -> ObjectCode:
    """Invert the constant rewrite: recover nominal constants via the scheme."""
    out: list[Instruction] = []
    for i, ins in enumerate(code.code):
        dx = scheme.pre_delta(i, ins.x)
        dy = scheme.post_delta(i, ins.y)
        dz = dy if ins.z == ins.y else scheme.pre_delta(i, ins.z)
        a = (ins.a + dx - dy) & MASK32
        b = (ins.b + dz - dy) & MASK32
        out.append(ins._replace(a=a, b=b))
    return ObjectCode(vars=list(code.vars), in_vars=list(code.in_vars),
                      out_vars=list(code.out_vars), code=out)


def decode_outputs(code: ObjectCode, scheme: ObfuscationScheme,
                   store: Sequence[int]) -> dict[str, int]:
    return {
        code.vars[v]: (store[v] - scheme.out_deltas.get(code.vars[v], 0)) & MASK32
        for v in code.out_vars
    }


def physical_inputs(code: ObjectCode, scheme: ObfuscationScheme,
                    inputs: Mapping[str, int]) -> dict[int, int]:
    init: dict[int, int] = {}
    for v in code.in_vars:
        name = code.vars[v]
        if name not in inputs:
            raise ValueError(f"missing input {name!r}")
        init[v] = (inputs[name] + scheme.in_deltas.get(name, 0)) & MASK32
    extra = set(inputs) - {code.vars[v] for v in code.in_vars}
    if extra:
        raise ValueError(f"values supplied for non-input variables: {sorted(extra)}")
    return init


@dataclass
class LockstepReport:
    ok: bool
    steps: int
    status: RunStatus
    divergence: Optional[str]
    decoded_outputs: Optional[dict[str, int]]
    reference_outputs: Optional[dict[str, int]]


def lockstep_check(checked: CheckedAst, code: ObjectCode, scheme: ObfuscationScheme,
                   inputs: Mapping[str, int], fuel: int = DEFAULT_FUEL) -> LockstepReport:
    """Run physical and nominal code side by side and check, before every
    step, that physical = nominal + delta(current slot) for every variable;
    afterwards check decoded outputs against the reference interpreter."""
    nom_code = nominal_from_physical(code, scheme)
    nvars = len(code.vars)
    n = len(code.code)

    # per-instruction vector of each variable's current offset
    deltas_by_pc = [
        [scheme.slot_values[scheme.pre_slot(i, v)] for v in range(nvars)]
        for i in range(n)
    ]

    store_p = [0] * nvars
    store_n = [0] * nvars
    for v in code.in_vars:
        name = code.vars[v]
        if name not in inputs:
            raise ValueError(f"missing input {name!r}")
        store_n[v] = inputs[name] & MASK32
        store_p[v] = (store_n[v] + scheme.in_deltas.get(name, 0)) & MASK32

    pc_p = pc_n = 0
    steps = 0
    divergence: Optional[str] = None
    status = RunStatus.FUEL_EXHAUSTED
    while steps < fuel:
        if pc_p != pc_n:
            divergence = f"step {steps}: pc {pc_p} (physical) != {pc_n} (nominal)"
            break
        if pc_p == n:
            status = RunStatus.HALTED
            break
        if pc_p == n + 1:
            status = RunStatus.ABORTED
            break
        dvec = deltas_by_pc[pc_p]
        for v in range(nvars):
            if store_p[v] != (store_n[v] + dvec[v]) & MASK32:
                divergence = (
                    f"step {steps}: variable {code.vars[v]} physical "
                    f"{store_p[v]:#010x} != nominal {store_n[v]:#010x} + "
                    f"delta {dvec[v]:#010x}"
                )
                break
        if divergence:
            break
        ip = code.code[pc_p]
        xv = store_p[ip.x]
        yv = (xv + ip.a) & MASK32
        store_p[ip.y] = yv
        taken_p = ((yv - ((store_p[ip.z] + ip.b) & MASK32)) & MASK32) >> 31
        pc_p = ip.l1 if taken_p else ip.l2

        iq = nom_code.code[pc_n]
        xv = store_n[iq.x]
        yv = (xv + iq.a) & MASK32
        store_n[iq.y] = yv
        taken_n = ((yv - ((store_n[iq.z] + iq.b) & MASK32)) & MASK32) >> 31
        pc_n = iq.l1 if taken_n else iq.l2

        if taken_p != taken_n:
            divergence = f"step {steps}: branch disagreement at pc {ip.l2 if taken_p else ip.l1}"
            break
        steps += 1

    decoded = None
    ref_out = None
    ok = divergence is None
    if ok and status == RunStatus.HALTED:
        decoded = decode_outputs(code, scheme, store_p)
        ref = reference_eval(checked, inputs, fuel)
        ref_out = ref.outputs
        if ref.status != RunStatus.HALTED:
            ok = False
            divergence = f"reference status {ref.status.value} but machine halted"
        elif decoded != ref.outputs:
            ok = False
            divergence = f"decoded outputs {decoded} != reference {ref.outputs}"
    elif ok and status == RunStatus.ABORTED:
        ref = reference_eval(checked, inputs, fuel)
        if ref.status != RunStatus.ABORTED:
            ok = False
            divergence = f"machine aborted but reference status {ref.status.value}"
    elif ok:
        ok = False
        divergence = "fuel exhausted"
    return LockstepReport(ok=ok, steps=steps, status=status, divergence=divergence,
                          decoded_outputs=decoded, reference_outputs=ref_out)


# ---------------------------------------------------------------------------
# Structural diff
# ---------------------------------------------------------------------------

@dataclass
class DiffReport:
    structurally_identical: bool
    constant_diffs: list[tuple[int, str, int, int]]
    structural_diffs: list[str]


def structural_diff(a: ObjectCode, b: ObjectCode) -> DiffReport:
    structural: list[str] = []
    constants: list[tuple[int, str, int, int]] = []
    if a.vars != b.vars:
        structural.append("variable tables differ")
    if a.in_vars != b.in_vars:
        structural.append("input lists differ")
    if a.out_vars != b.out_vars:
        structural.append("output lists differ")
    if len(a.code) != len(b.code):
        structural.append(f"lengths differ: {len(a.code)} vs {len(b.code)}")
    for i in range(min(len(a.code), len(b.code))):
        ia, ib = a.code[i], b.code[i]
        for fld in ("x", "y", "z", "l1", "l2"):
            va, vb = getattr(ia, fld), getattr(ib, fld)
            if va != vb:
                structural.append(f"instruction {i}: {fld} {va} vs {vb}")
        if ia.a != ib.a:
            constants.append((i, "a", ia.a, ib.a))
        if ia.b != ib.b:
            constants.append((i, "b", ia.b, ib.b))
    return DiffReport(
        structurally_identical=not structural,
        constant_diffs=constants,
        structural_diffs=structural,
    )


# ---------------------------------------------------------------------------
# Ensembles and trace positions
# ---------------------------------------------------------------------------

class TracePosition(NamedTuple):
    pc: int
    occ: int
    field: str  # "x_read" | "z_read" | "y_written"


@dataclass
class EnsembleMember:
    seed: int
    code: ObjectCode
    scheme: ObfuscationScheme
    trace: Trace


@dataclass
class Ensemble:
    checked: CheckedAst
    nominal: NominalCode
    inputs: dict[str, int]
    members: list[EnsembleMember]
    status: RunStatus

    _pc_index: Optional[dict[int, list[int]]] = None

    def pc_occurrences(self, pc: int) -> list[int]:
        if self._pc_index is None:
            index: dict[int, list[int]] = {}
            tr = self.members[0].trace
            for t in range(len(tr)):
                index.setdefault(tr[t].pc, []).append(t)
            self._pc_index = index
        return self._pc_index.get(pc, [])

    def position_step(self, pos: TracePosition) -> int:
        occs = self.pc_occurrences(pos.pc)
        if pos.occ >= len(occs):
            raise PositionError(
                f"pc {pos.pc} occurrence {pos.occ} never happens "
                f"(executed {len(occs)} times)"
            )
        if pos.field not in ("x_read", "z_read", "y_written"):
            raise PositionError(f"unknown field {pos.field!r}")
        return occs[pos.occ]


def ensemble(checked: CheckedAst, seeds: Sequence[int], inputs: Mapping[str, int],
             fuel: int = DEFAULT_FUEL, pin_io: bool = True) -> Ensemble:
    """Compile and run one program under many seeds; enforce structural
    identity of the object codes and equality of the pc sequences."""
    if len(set(seeds)) != len(seeds):
        raise ValueError("ensemble seeds must be distinct")
    if not seeds:
        raise ValueError("ensemble needs at least one seed")
    nominal = lower_nominal(checked, pin_io=pin_io)
    members: list[EnsembleMember] = []
    pc0: Optional[bytes] = None
    status0: Optional[RunStatus] = None
    first_code: Optional[ObjectCode] = None
    for seed in seeds:
        code, scheme = randomize(nominal, seed)
        init = physical_inputs(code, scheme, inputs)
        res = run(code, init, fuel)
        if first_code is None:
            first_code = code
            pc0 = res.trace.pc_sequence_bytes()
            status0 = res.status
        else:
            d = structural_diff(first_code, code)
            if not d.structurally_identical:
                raise EnsembleError(
                    f"seed {seed:#x}: structural mismatch: {d.structural_diffs[:3]}"
                )
            if res.trace.pc_sequence_bytes() != pc0 or res.status != status0:
                raise EnsembleError(f"seed {seed:#x}: trace diverges from first member")
        members.append(EnsembleMember(seed=seed, code=code, scheme=scheme, trace=res.trace))
    return Ensemble(checked=checked, nominal=nominal, inputs=dict(inputs),
                    members=members, status=status0)


def position_samples(ens: Ensemble, pos: TracePosition) -> list[int]:
    """One trace value per member, in seed order."""
    t = ens.position_step(pos)
    return [m.trace.value(t, pos.field) for m in ens.members]


def slot_for_position(nominal: NominalCode, pos: TracePosition) -> int:
    """The delta slot whose offset shifts the value observed at ``pos``."""
    ins = nominal.code[pos.pc]
    if pos.field == "x_read":
        return nominal.pre_slot(pos.pc, ins.x)
    if pos.field == "z_read":
        # when z == y the comparison reads the freshly written y
        if ins.z == ins.y:
            return nominal.post_slots[pos.pc]
        return nominal.pre_slot(pos.pc, ins.z)
    if pos.field == "y_written":
        return nominal.post_slots[pos.pc]
    raise PositionError(f"unknown field {pos.field!r}")


class Linkage(Enum):
    LINKED = "linked"
    FREE = "free"


def linkage(ens: Ensemble, pos_a: TracePosition, pos_b: TracePosition) -> Linkage:
    """Linked means the two positions' offsets necessarily coincide: they
    share a slot, or both sit in pinned (zero-offset) slots."""
    ens.position_step(pos_a)
    ens.position_step(pos_b)
    sa = slot_for_position(ens.nominal, pos_a)
    sb = slot_for_position(ens.nominal, pos_b)
    pinned = ens.nominal.slot_pinned
    if sa == sb or (pinned[sa] and pinned[sb]):
        return Linkage.LINKED
    return Linkage.FREE


# ---------------------------------------------------------------------------
# Chi-square statistics (Wilson-Hilferty p-values)
# ---------------------------------------------------------------------------

class StatReport(NamedTuple):
    statistic: float
    dof: int
    p_value: float


def wilson_hilferty_sf(x: float, dof: int) -> float:
    """Chi-square survival function via the Wilson-Hilferty cube-root
    normal approximation; adequate to about +/-0.02 for dof >= 15."""
    if dof <= 0:
        return 1.0 if x <= 0 else 0.0
    if x <= 0:
        return 1.0
    c = 2.0 / (9.0 * dof)
    z = ((x / dof) ** (1.0 / 3.0) - 1.0 + c) / math.sqrt(c)
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def chi2_uniform(samples: Sequence[int], buckets: int) -> StatReport:
    """Goodness of fit of ``samples mod buckets`` against uniform."""
    if buckets not in (16, 256):
        raise ValueError("buckets must be 16 or 256")
    n = len(samples)
    if n < 5 * buckets:
        raise StatError(f"need at least {5 * buckets} samples, got {n}")
    counts = [0] * buckets
    for v in samples:
        counts[v % buckets] += 1
    expected = n / buckets
    stat = sum((o - expected) ** 2 for o in counts) / expected
    dof = buckets - 1
    return StatReport(statistic=stat, dof=dof, p_value=wilson_hilferty_sf(stat, dof))


def chi2_indep(samples_a: Sequence[int], samples_b: Sequence[int],
               buckets: int = 16) -> StatReport:
    """Contingency-table test of independence on (a mod 16, b mod 16).

    Rows and columns with zero marginals are dropped and the degrees of
    freedom reduced accordingly (a constant stream therefore yields a
    degenerate table with p = 1 rather than an error)."""
    if len(samples_a) != len(samples_b):
        raise ValueError("sample lists must have equal length")
    n = len(samples_a)
    if n < 5 * buckets * buckets:
        raise StatError(f"need at least {5 * buckets * buckets} samples, got {n}")
    table = [[0] * buckets for _ in range(buckets)]
    for va, vb in zip(samples_a, samples_b):
        table[va % buckets][vb % buckets] += 1
    rows = [i for i in range(buckets) if sum(table[i]) > 0]
    cols = [j for j in range(buckets) if sum(table[i][j] for i in range(buckets)) > 0]
    dof = (len(rows) - 1) * (len(cols) - 1)
    if dof <= 0:
        return StatReport(statistic=0.0, dof=0, p_value=1.0)
    row_tot = {i: sum(table[i]) for i in rows}
    col_tot = {j: sum(table[i][j] for i in range(buckets)) for j in cols}
    stat = 0.0
    for i in rows:
        for j in cols:
            e = row_tot[i] * col_tot[j] / n
            d = table[i][j] - e
            stat += d * d / e
    return StatReport(statistic=stat, dof=dof, p_value=wilson_hilferty_sf(stat, dof))


def linked_difference(ens: Ensemble, pos_a: TracePosition, pos_b: TracePosition) -> set[int]:
    """Distinct wrapped differences sample_a - sample_b across members; a
    linked pair yields exactly one."""
    sa = position_samples(ens, pos_a)
    sb = position_samples(ens, pos_b)
    return {(va - vb) & MASK32 for va, vb in zip(sa, sb)}


# ---------------------------------------------------------------------------
# Position selection
# ---------------------------------------------------------------------------

POSITION_PICK_SEED = 0x0C0FFEE


def _free_candidates(ens: Ensemble, occ_cap: int = 3) -> list[TracePosition]:
    """All (pc, occ, field) positions in the common trace whose slot is
    free, occurrence-capped, in trace order."""
    nominal = ens.nominal
    tr = ens.members[0].trace
    seen: dict[int, int] = {}
    out: list[TracePosition] = []
    for t in range(len(tr)):
        pc = tr[t].pc
        occ = seen.get(pc, 0)
        seen[pc] = occ + 1
        if occ >= occ_cap:
            continue
        for fld in ("x_read", "z_read", "y_written"):
            pos = TracePosition(pc, occ, fld)
            if not nominal.slot_pinned[slot_for_position(nominal, pos)]:
                out.append(pos)
    return out


def default_positions(ens: Ensemble, count: int = 20) -> list[TracePosition]:
    """Pseudo-random free positions, chosen deterministically from the
    lowering (fixed selection seed keyed on the code length)."""
    cands = _free_candidates(ens)
    if len(cands) <= count:
        return cands
    rng = SplitMix64(POSITION_PICK_SEED ^ len(ens.nominal.code))
    picked: list[TracePosition] = []
    pool = list(cands)
    for _ in range(count):
        k = rng.next_below(len(pool))
        picked.append(pool.pop(k))
    return picked


def free_position_pairs(ens: Ensemble, count: int = 20) -> list[tuple[TracePosition, TracePosition]]:
    """Deterministic pairs of free positions living in distinct slots."""
    cands = _free_candidates(ens)
    nominal = ens.nominal
    rng = SplitMix64(POSITION_PICK_SEED ^ (len(ens.nominal.code) * 3 + 1))
    pairs: list[tuple[TracePosition, TracePosition]] = []
    tries = 0
    while len(pairs) < count and tries < 50 * count and len(cands) >= 2:
        tries += 1
        i = rng.next_below(len(cands))
        j = rng.next_below(len(cands))
        if i == j:
            continue
        a, b = cands[i], cands[j]
        if slot_for_position(nominal, a) != slot_for_position(nominal, b):
            pairs.append((a, b))
    return pairs


def loop_header_pairs(ens: Ensemble) -> list[tuple[TracePosition, TracePosition]]:
    """Linked pairs witnessing loop reconciliation: the entry move and the
    back-edge move of each loop variable (same shared slot), plus first
    versus second execution of the back-edge move."""
    pairs: list[tuple[TracePosition, TracePosition]] = []
    for lp in ens.nominal.loops:
        for (v_pre, a_pre), (v_back, a_back) in zip(lp.pre_recons, lp.back_recons):
            assert v_pre == v_back
            pre = TracePosition(a_pre, 0, "y_written")
            back0 = TracePosition(a_back, 0, "y_written")
            back1 = TracePosition(a_back, 1, "y_written")
            try:
                ens.position_step(pre)
                ens.position_step(back0)
                pairs.append((pre, back0))
            except PositionError:
                continue
            try:
                ens.position_step(back1)
                pairs.append((back0, back1))
            except PositionError:
                pass
    return pairs


def same_slot_read_pairs(ens: Ensemble, limit: int = 10) -> list[tuple[TracePosition, TracePosition]]:
    """Linked read-read pairs: two executed reads of the same slot."""
    nominal = ens.nominal
    cands = _free_candidates(ens)
    by_slot: dict[int, list[TracePosition]] = {}
    pairs: list[tuple[TracePosition, TracePosition]] = []
    for pos in cands:
        if pos.field == "y_written":
            continue
        s = slot_for_position(nominal, pos)
        bucket = by_slot.setdefault(s, [])
        for other in bucket:
            if (other.pc, other.occ) != (pos.pc, pos.occ):
                pairs.append((other, pos))
                if len(pairs) >= limit:
                    return pairs
                break
        bucket.append(pos)
    return pairs


# ---------------------------------------------------------------------------
# Rekeying (program keys folded into the constants)
# ---------------------------------------------------------------------------

def rekey(code: ObjectCode, deltas: Mapping[int, int]) -> ObjectCode:
    """Shift every variable v by deltas[v] (default 0) on top of whatever
    scheme the code already carries; in/out deltas must be zero so the
    rekeyed program is I/O-compatible.  Same trace shape, same outputs."""
    for v in list(code.in_vars) + list(code.out_vars):
        if deltas.get(v, 0) != 0:
            raise RekeyError(
                f"in/out variable {code.vars[v]!r} must keep delta 0"
            )
    def d(v: int) -> int:
        return deltas.get(v, 0) & MASK32

    out: list[Instruction] = []
    for ins in code.code:
        dz = d(ins.y) if ins.z == ins.y else d(ins.z)
        a = (ins.a - d(ins.x) + d(ins.y)) & MASK32
        b = (ins.b - dz + d(ins.y)) & MASK32
        out.append(ins._replace(a=a, b=b))
    return ObjectCode(vars=list(code.vars), in_vars=list(code.in_vars),
                      out_vars=list(code.out_vars), code=out)


# ---------------------------------------------------------------------------
# Ensemble report assembly
# ---------------------------------------------------------------------------

def position_json(pos: TracePosition) -> dict:
    return {"pc": pos.pc, "occ": pos.occ, "field": pos.field}


def build_report(ens: Ensemble, program: str,
                 uniform_positions: Sequence[TracePosition],
                 indep_pairs: Sequence[tuple[TracePosition, TracePosition]],
                 linked_pairs: Sequence[tuple[TracePosition, TracePosition]],
                 alpha: float = ALPHA) -> dict:
    tests: list[dict] = []
    for pos in uniform_positions:
        r = chi2_uniform(position_samples(ens, pos), 256)
        tests.append({
            "pos": position_json(pos),
            "kind": "uniform",
            "stat": r.statistic,
            "dof": r.dof,
            "p": r.p_value,
            "verdict": "reject" if r.p_value < alpha else "pass",
        })
    for pa, pb in indep_pairs:
        r = chi2_indep(position_samples(ens, pa), position_samples(ens, pb))
        tests.append({
            "pos": position_json(pa),
            "pos_b": position_json(pb),
            "kind": "indep",
            "stat": r.statistic,
            "dof": r.dof,
            "p": r.p_value,
            "verdict": "reject" if r.p_value < alpha else "pass",
        })
    for pa, pb in linked_pairs:
        diffs = linked_difference(ens, pa, pb)
        constant = len(diffs) == 1
        tests.append({
            "pos": position_json(pa),
            "pos_b": position_json(pb),
            "kind": "linked",
            "stat": float(len(diffs)),
            "dof": 0,
            "p": 1.0 if constant else 0.0,
            "verdict": "pass" if constant else "reject",
        })
    return {
        "program": program,
        "n": len(ens.members),
        "input": {k: v for k, v in sorted(ens.inputs.items())},
        "structural_ok": True,
        "tests": tests,
    }
