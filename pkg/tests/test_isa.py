from __future__ import annotations

import io
import random

import pytest
from hypothesis import given, strategies as st

from oicc import isa
from oicc.isa import (
    Instruction,
    MachineState,
    ObjectCode,
    RunStatus,
    Trace,
    lt_wrap,
    run,
    step,
    wrap_add,
)

WORDS = st.integers(min_value=0, max_value=0xFFFFFFFF)


def lt_oracle(p: int, q: int) -> bool:
    # independent statement of the comparison: wrapped difference in 64-bit
    # arithmetic, then test the sign-bit range
    d = (p - q + 2**32) % 2**32
    return 2**31 <= d < 2**32


def test_wrap_add_examples():
    assert wrap_add(5, 7) == 12
    assert wrap_add(0xFFFFFFFF, 1) == 0
    assert wrap_add(0x80000000, 0x80000000) == 0


def test_lt_wrap_examples():
    assert lt_wrap(3, 5) is True
    assert lt_wrap(5, 3) is False
    # values frozen from the 64-bit oracle
    assert lt_oracle(0, 0x80000000) is True
    assert lt_wrap(0, 0x80000000) is True
    assert lt_oracle(0x80000000, 0) is True
    assert lt_wrap(0x80000000, 0) is True  # not antisymmetric at distance 2**31


@given(WORDS, WORDS)
def test_lt_wrap_matches_oracle(p, q):
    assert lt_wrap(p, q) == lt_oracle(p, q)


@given(WORDS, WORDS, WORDS)
def test_lt_wrap_shift_invariant(p, q, d):
    assert lt_wrap(wrap_add(p, d), wrap_add(q, d)) == lt_wrap(p, q)


@given(WORDS, WORDS)
def test_lt_wrap_mutual_iff_half_distance(p, q):
    both = lt_wrap(p, q) and lt_wrap(q, p)
    assert both == (((p - q) & 0xFFFFFFFF) == 2**31)


def test_lt_wrap_mutual_boundary_case():
    assert lt_wrap(0x12345678, 0x92345678)
    assert lt_wrap(0x92345678, 0x12345678)


def one_ins_code() -> ObjectCode:
    return ObjectCode(
        vars=["v0", "v1", "v2"],
        in_vars=[0, 2],
        out_vars=[1],
        code=[Instruction(x=0, a=5, y=1, z=2, b=0, l1=1, l2=1)],
    )


def test_step_example_taken():
    code = one_ins_code()
    st0 = MachineState(pc=0, store=[10, 0, 20])
    nxt, rec = step(code, st0)
    assert nxt.store == [10, 15, 20]
    assert rec.yv == 15 and rec.taken is True and rec.next == 1
    # purity: the input state is untouched and a second call agrees
    assert st0.store == [10, 0, 20]
    nxt2, rec2 = step(code, st0)
    assert nxt2.store == nxt.store and rec2 == rec


def test_step_example_not_taken():
    code = one_ins_code()
    nxt, rec = step(code, MachineState(pc=0, store=[10, 0, 3]))
    assert rec.yv == 15 and rec.taken is False and rec.next == 1


def test_step_terminal_statuses():
    code = one_ins_code()
    assert step(code, MachineState(pc=1, store=[0, 0, 0])) is RunStatus.HALTED
    assert step(code, MachineState(pc=2, store=[0, 0, 0])) is RunStatus.ABORTED


def test_step_z_equals_y_reads_fresh_value():
    # y and z are the same variable: the comparison must see the new y
    code = ObjectCode(
        vars=["v0", "v1"],
        in_vars=[0],
        out_vars=[1],
        code=[Instruction(x=0, a=7, y=1, z=1, b=1, l1=0, l2=1)],
    )
    _, rec = step(code, MachineState(pc=0, store=[10, 0]))
    assert rec.zv == 17  # fresh y, not the stale 0
    assert rec.taken is True  # lt_wrap(17, 18)


def test_run_empty_code():
    code = ObjectCode(vars=["v0"], in_vars=[0], out_vars=[], code=[])
    res = run(code, {0: 3})
    assert res.status is RunStatus.HALTED
    assert len(res.trace) == 0


def test_run_single_instruction():
    res = run(one_ins_code(), {0: 10, 2: 20}, fuel=10)
    assert res.status is RunStatus.HALTED
    assert len(res.trace) == 1
    assert res.final_store == [10, 15, 20]


def test_run_self_loop_exhausts_fuel():
    code = ObjectCode(
        vars=["v0"],
        in_vars=[],
        out_vars=[],
        code=[Instruction(x=0, a=0, y=0, z=0, b=0, l1=0, l2=0)],
    )
    res = run(code, {}, fuel=100)
    assert res.status is RunStatus.FUEL_EXHAUSTED
    assert len(res.trace) == 100


def test_run_rejects_bad_inputs():
    code = one_ins_code()
    with pytest.raises(ValueError):
        run(code, {0: 1})  # missing v2
    with pytest.raises(ValueError):
        run(code, {0: 1, 1: 2, 2: 3})  # v1 is not an input


def test_trace_record_invariant_and_fields():
    code = one_ins_code()
    res = run(code, {0: 10, 2: 3})
    for rec in res.trace:
        ins = code.code[rec.pc]
        assert rec.next == (ins.l1 if rec.taken else ins.l2)
    assert res.trace[0].xv == 10 and res.trace[0].zv == 3


# -- run() must agree with iterated step() on arbitrary small codes ---------

@st.composite
def small_codes(draw):
    nvars = draw(st.integers(1, 3))
    n = draw(st.integers(1, 5))
    code = []
    for _ in range(n):
        code.append(
            Instruction(
                x=draw(st.integers(0, nvars - 1)),
                a=draw(WORDS),
                y=draw(st.integers(0, nvars - 1)),
                z=draw(st.integers(0, nvars - 1)),
                b=draw(WORDS),
                l1=draw(st.integers(0, n + 1)),
                l2=draw(st.integers(0, n + 1)),
            )
        )
    init = [draw(WORDS) for _ in range(nvars)]
    return ObjectCode(vars=[f"v{i}" for i in range(nvars)],
                      in_vars=list(range(nvars)), out_vars=[], code=code), init


@given(small_codes(), st.integers(1, 64))
def test_run_equals_iterated_step(code_init, fuel):
    code, init = code_init
    res = run(code, dict(enumerate(init)), fuel=fuel)
    state = MachineState(pc=0, store=list(init))
    # replicate the inputs (run() masks them)
    for v, val in enumerate(init):
        state.store[v] = val & 0xFFFFFFFF
    records = []
    status = RunStatus.FUEL_EXHAUSTED
    for _ in range(fuel):
        out = step(code, state)
        if isinstance(out, RunStatus):
            status = out
            break
        state, rec = out
        records.append(rec)
    else:
        out = step(code, state)
        if isinstance(out, RunStatus):
            status = out
    assert res.status == status
    assert res.final_store == state.store
    assert len(res.trace) == len(records)
    for got, want in zip(res.trace, records):
        assert (got.pc, got.xv, got.zv, got.yv, got.taken, got.next) == (
            want.pc, want.xv, want.zv, want.yv, want.taken, want.next)


def test_object_code_json_roundtrip():
    code = one_ins_code()
    text = code.to_json()
    back = ObjectCode.from_json(text)
    assert back == code
    assert '"a": "0x00000005"' in text


def test_object_code_validate_rejects_bad_addr():
    code = ObjectCode(vars=["v0"], in_vars=[], out_vars=[],
                      code=[Instruction(0, 0, 0, 0, 0, 3, 0)])
    with pytest.raises(ValueError):
        code.validate()


def test_trace_jsonl_roundtrip():
    res = run(one_ins_code(), {0: 10, 2: 20})
    buf = io.StringIO()
    res.trace.write_jsonl(buf)
    back = Trace.read_jsonl(buf.getvalue().splitlines())
    assert len(back) == len(res.trace)
    assert back[0] == res.trace[0]


def test_fuel_zero_reports_terminal_when_already_there():
    code = ObjectCode(vars=["v0"], in_vars=[], out_vars=[], code=[])
    assert run(code, {}, fuel=0).status is RunStatus.HALTED
