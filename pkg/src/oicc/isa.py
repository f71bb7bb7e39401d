"""Core machine model: 32-bit wrapped arithmetic, the add-compare-jump
instruction, object code, and the tracing interpreter.

The machine has exactly one instruction form,

    if (Y = X + A) < Z + B  goto L1  else goto L2

where X, Y, Z are variable (location) indices, A and B are embedded 32-bit
constants, and L1/L2 are instruction addresses.  All arithmetic wraps modulo
2**32 and the comparison tests the sign bit of the wrapped difference, which
makes it invariant under adding a common offset to both sides.

Control conventions: jumping to ``len(code)`` halts normally, jumping to
``len(code) + 1`` aborts (used as the out-of-range target of array
dispatch).  Variables not listed as inputs start at 0.
"""

from __future__ import annotations

import json
from array import array
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Mapping, NamedTuple, TextIO, Union

MASK32 = 0xFFFFFFFF
SIGN_BIT = 0x80000000

DEFAULT_FUEL = 10_000_000

OBJECT_FORMAT = "oic-object-v1"


def wrap_add(p: int, q: int) -> int:
    """Sum modulo 2**32."""
    return (p + q) & MASK32


def wrap_sub(p: int, q: int) -> int:
    """Difference modulo 2**32."""
    return (p - q) & MASK32


def lt_wrap(p: int, q: int) -> bool:
    """Wrapped less-than: true iff the wrapped difference p - q is negative
    as a signed word, i.e. lies in [2**31, 2**32).

    This order is not antisymmetric: when the operands differ by exactly
    2**31 both directions compare true.  Its key property is shift
    invariance, lt_wrap(p + d, q + d) == lt_wrap(p, q) for any d.
    """
    return ((p - q) & MASK32) >= SIGN_BIT


class Instruction(NamedTuple):
    """One add-compare-jump instruction."""

    x: int   # source variable
    a: int   # add constant
    y: int   # target variable
    z: int   # compare variable
    b: int   # compare constant
    l1: int  # taken target
    l2: int  # not-taken target


class RunStatus(Enum):
    HALTED = "halted"
    ABORTED = "aborted"
    FUEL_EXHAUSTED = "fuel-exhausted"


class TraceRecord(NamedTuple):
    """Values observed at one executed instruction (physical values)."""

    t: int
    pc: int
    xv: int
    zv: int
    yv: int
    taken: bool
    next: int


@dataclass
class ObjectCode:
    """An instruction stream plus its variable table and I/O lists."""

    vars: list[str]
    in_vars: list[int]
    out_vars: list[int]
    code: list[Instruction]

    def validate(self) -> None:
        nvars = len(self.vars)
        limit = len(self.code) + 1
        if len(set(self.vars)) != nvars:
            raise ValueError("duplicate variable names")
        for group, ids in (("in", self.in_vars), ("out", self.out_vars)):
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {group}-variable ids")
            for v in ids:
                if not 0 <= v < nvars:
                    raise ValueError(f"{group}-variable id {v} out of range")
        for i, ins in enumerate(self.code):
            for v in (ins.x, ins.y, ins.z):
                if not 0 <= v < nvars:
                    raise ValueError(f"instruction {i}: variable id {v} out of range")
            for l in (ins.l1, ins.l2):
                if not 0 <= l <= limit:
                    raise ValueError(f"instruction {i}: address {l} out of range")
            for c in (ins.a, ins.b):
                if not 0 <= c <= MASK32:
                    raise ValueError(f"instruction {i}: constant out of 32-bit range")

    def var_id(self, name: str) -> int:
        return self.vars.index(name)

    def to_json_dict(self) -> dict:
        return {
            "format": OBJECT_FORMAT,
            "vars": list(self.vars),
            "in": list(self.in_vars),
            "out": list(self.out_vars),
            "code": [
                {
                    "x": ins.x,
                    "a": hex_word(ins.a),
                    "y": ins.y,
                    "z": ins.z,
                    "b": hex_word(ins.b),
                    "l1": ins.l1,
                    "l2": ins.l2,
                }
                for ins in self.code
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json_dict(cls, d: dict) -> "ObjectCode":
        fmt = d.get("format", OBJECT_FORMAT)
        if fmt != OBJECT_FORMAT:
            raise ValueError(f"unsupported object format {fmt!r}")
        code = [
            Instruction(
                x=int(e["x"]),
                a=parse_word(e["a"]),
                y=int(e["y"]),
                z=int(e["z"]),
                b=parse_word(e["b"]),
                l1=int(e["l1"]),
                l2=int(e["l2"]),
            )
            for e in d["code"]
        ]
        oc = cls(
            vars=list(d["vars"]),
            in_vars=[int(v) for v in d["in"]],
            out_vars=[int(v) for v in d["out"]],
            code=code,
        )
        oc.validate()
        return oc

    @classmethod
    def from_json(cls, text: str) -> "ObjectCode":
        return cls.from_json_dict(json.loads(text))


def hex_word(v: int) -> str:
    return f"0x{v & MASK32:08X}"


def hex_word64(v: int) -> str:
    return f"0x{v & (2**64 - 1):016X}"


def parse_word(s: Union[str, int]) -> int:
    if isinstance(s, int):
        v = s
    else:
        v = int(s, 16) if s.lower().startswith("0x") else int(s)
    if not 0 <= v <= MASK32:
        raise ValueError(f"word out of 32-bit range: {s!r}")
    return v


@dataclass
class MachineState:
    """Program counter plus the store, indexed by variable id."""

    pc: int
    store: list[int]


class Trace:
    """Compact per-step record storage (columnar, one entry per step)."""

    __slots__ = ("_pc", "_xv", "_zv", "_yv", "_taken", "_next")

    def __init__(self) -> None:
        self._pc = array("I")
        self._xv = array("I")
        self._zv = array("I")
        self._yv = array("I")
        self._taken = array("B")
        self._next = array("I")

    def append(self, pc: int, xv: int, zv: int, yv: int, taken: bool, nxt: int) -> None:
        self._pc.append(pc)
        self._xv.append(xv)
        self._zv.append(zv)
        self._yv.append(yv)
        self._taken.append(1 if taken else 0)
        self._next.append(nxt)

    def __len__(self) -> int:
        return len(self._pc)

    def __getitem__(self, t: int) -> TraceRecord:
        if t < 0:
            t += len(self._pc)
        return TraceRecord(
            t=t,
            pc=self._pc[t],
            xv=self._xv[t],
            zv=self._zv[t],
            yv=self._yv[t],
            taken=bool(self._taken[t]),
            next=self._next[t],
        )

    def __iter__(self) -> Iterator[TraceRecord]:
        for t in range(len(self)):
            yield self[t]

    def pc_sequence_bytes(self) -> bytes:
        """The pc column as bytes, for fast equality of whole runs."""
        return self._pc.tobytes()

    def value(self, t: int, fld: str) -> int:
        if fld == "x_read":
            return self._xv[t]
        if fld == "z_read":
            return self._zv[t]
        if fld == "y_written":
            return self._yv[t]
        raise ValueError(f"unknown trace field {fld!r}")

    def write_jsonl(self, fp: TextIO) -> None:
        for rec in self:
            fp.write(
                json.dumps(
                    {
                        "t": rec.t,
                        "pc": rec.pc,
                        "xv": hex_word(rec.xv),
                        "zv": hex_word(rec.zv),
                        "yv": hex_word(rec.yv),
                        "taken": rec.taken,
                        "next": rec.next,
                    }
                )
                + "\n"
            )

    @classmethod
    def read_jsonl(cls, lines: Iterable[str]) -> "Trace":
        tr = cls()
        for line in lines:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            tr.append(
                int(d["pc"]),
                parse_word(d["xv"]),
                parse_word(d["zv"]),
                parse_word(d["yv"]),
                bool(d["taken"]),
                int(d["next"]),
            )
        return tr


@dataclass
class RunResult:
    status: RunStatus
    final_store: list[int]
    final_pc: int
    trace: Trace


def step(code: ObjectCode, state: MachineState) -> Union[RunStatus, tuple[MachineState, TraceRecord]]:
    """Execute one instruction, purely.

    Returns the terminal status when the pc sits at the halt or abort
    address, otherwise a fresh state and the trace record of the step.
    When z == y the comparison reads the freshly written value of y.
    """
    n = len(code.code)
    pc = state.pc
    if pc == n:
        return RunStatus.HALTED
    if pc == n + 1:
        return RunStatus.ABORTED
    ins = code.code[pc]
    store = list(state.store)
    xv = store[ins.x]
    yv = (xv + ins.a) & MASK32
    store[ins.y] = yv
    zv = store[ins.z]
    taken = ((yv - ((zv + ins.b) & MASK32)) & MASK32) >= SIGN_BIT
    nxt = ins.l1 if taken else ins.l2
    rec = TraceRecord(t=0, pc=pc, xv=xv, zv=zv, yv=yv, taken=taken, next=nxt)
    return MachineState(pc=nxt, store=store), rec


def initial_store(code: ObjectCode, init: Mapping[int, int]) -> list[int]:
    given = set(init)
    expected = set(code.in_vars)
    missing = expected - given
    if missing:
        names = ", ".join(code.vars[v] for v in sorted(missing))
        raise ValueError(f"missing input values for: {names}")
    extra = given - expected
    if extra:
        names = ", ".join(code.vars[v] for v in sorted(extra))
        raise ValueError(f"values supplied for non-input variables: {names}")
    store = [0] * len(code.vars)
    for v, val in init.items():
        store[v] = val & MASK32
    return store


def run(
    code: ObjectCode,
    init: Mapping[int, int],
    fuel: int = DEFAULT_FUEL,
    record_trace: bool = True,
) -> RunResult:
    """Run from instruction 0 until halt, abort, or fuel exhaustion.

    ``init`` must assign exactly the input variables; every other variable
    starts at 0.
    """
    store = initial_store(code, init)
    trace = Trace()
    n = len(code.code)
    instrs = code.code
    pc = 0
    steps = 0
    status = RunStatus.FUEL_EXHAUSTED
    append = trace.append if record_trace else None
    while steps < fuel:
        if pc == n:
            status = RunStatus.HALTED
            break
        if pc == n + 1:
            status = RunStatus.ABORTED
            break
        x, a, y, z, b, l1, l2 = instrs[pc]
        xv = store[x]
        yv = (xv + a) & MASK32
        store[y] = yv
        zv = store[z]
        taken = ((yv - ((zv + b) & MASK32)) & MASK32) >= SIGN_BIT
        nxt = l1 if taken else l2
        if append is not None:
            append(pc, xv, zv, yv, taken, nxt)
        pc = nxt
        steps += 1
    else:
        # Fuel ran out; the pc may nevertheless sit on a terminal address.
        if pc == n:
            status = RunStatus.HALTED
        elif pc == n + 1:
            status = RunStatus.ABORTED
    return RunResult(status=status, final_store=store, final_pc=pc, trace=trace)
