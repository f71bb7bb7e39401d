from __future__ import annotations

import random

import pytest

from oicc import analysis, isa
from oicc.codegen import (
    CompileOptions,
    LoweringError,
    ObfuscationScheme,
    compile_checked,
    lower_nominal,
    physical_constants,
    randomize,
    verify_scheme,
)
from oicc.isa import MASK32, RunStatus
from oicc.prng import SplitMix64

from conftest import checked_of


def test_splitmix64_reference_vectors():
    # first outputs for seed 0 of the standard splitmix64 stream
    rng = SplitMix64(0)
    assert rng.next_u64() == 0xE220A8397B1DCDAF
    assert rng.next_u64() == 0x6E789E6AA1B965F4
    assert rng.next_u64() == 0x06C45D188009454F
    rng2 = SplitMix64(0x123456789ABCDEF0)
    first = rng2.next_u64()
    assert SplitMix64(0x123456789ABCDEF0).next_u64() == first
    assert SplitMix64(1).next_u64() != first


def test_add_const_lowering_shape():
    nom = lower_nominal(checked_of("vars x, y; in x; out y; y = x + 5;"))
    # one assignment plus the exit move of the out-variable
    assert len(nom.code) == 2
    ins = nom.code[0]
    assert (ins.x, ins.a, ins.y) == (0, 5, 1)
    assert ins.l1 == ins.l2 == 1
    exit_ins = nom.code[1]
    assert (exit_ins.x, exit_ins.a, exit_ins.y) == (1, 0, 1)
    assert exit_ins.l1 == exit_ins.l2 == 2
    # exit slot pinned under pin_io
    assert nom.slot_pinned[nom.out_slots[1]]


def test_lowering_is_pure():
    src = "vars a[4], i, s, n; in i, n; out s; a[0]=1; a[1]=2; a[2]=3; a[3]=4; s = 0; while (s < n) { s = s + a[i]; i = i + 1; }"
    a = lower_nominal(checked_of(src)).to_json()
    b = lower_nominal(checked_of(src)).to_json()
    assert a == b


def test_lowering_size_examples_frozen():
    # counts fixed by the implementation's rule table (deterministic)
    assert len(lower_nominal(checked_of("vars x, y; in x; out y; y = x;")).code) == 2
    assert len(lower_nominal(checked_of("vars x, y; in x; out y; y = 7;")).code) == 2
    assert len(lower_nominal(checked_of(
        "vars x1, x2, y; in x1, x2; out y; y = x1 + x2;")).code) == 99


def test_dispatch_tree_shape_for_four_elements():
    src = "vars a[4], i, s; in i; out s; s = a[i] + 1;"
    nom = lower_nominal(checked_of(src))
    n = len(nom.code)
    abort_addr = n + 1
    internal = [i for i in nom.code if i.l1 != i.l2 and i.l1 != abort_addr and i.l2 != abort_addr]
    guards = [i for i in nom.code if abort_addr in (i.l1, i.l2)]
    leaves = [i for i in nom.code if "a[" in nom.vars[i.x]]
    assert len(internal) == 3      # balanced tree over 4 elements
    assert len(guards) == 2        # range guards routing to the abort address
    assert len(leaves) == 4        # one static access per element
    assert n == 12                 # frozen total from the rule table
    # all read leaves share one landing slot
    leaf_slots = {nom.post_slots[k] for k, i in enumerate(nom.code) if "a[" in nom.vars[i.x]}
    assert len(leaf_slots) == 1


def test_physical_constant_rewrite_examples():
    a, _ = physical_constants(7, 0, dx=3, dz=0, dy=5)
    assert a == 9
    _, b = physical_constants(0, 2, dx=0, dz=11, dy=5)
    assert b == 0xFFFFFFFC
    # zero offsets leave constants nominal
    assert physical_constants(7, 2, 0, 0, 0) == (7, 2)
    # z == y: the comparison reads the fresh y, offsets cancel
    _, b2 = physical_constants(0, 2, dx=0, dz=11, dy=5, z_is_y=True)
    assert b2 == 2


def test_compile_determinism_and_seed_variation():
    checked = checked_of("vars x, y; in x; out y; y = x + 5;")
    c1, s1 = compile_checked(checked, CompileOptions(seed=0x1234))
    c2, s2 = compile_checked(checked, CompileOptions(seed=0x1234))
    assert c1.to_json() == c2.to_json()
    assert s1.to_json() == s2.to_json()
    c3, _ = compile_checked(checked, CompileOptions(seed=0x1235))
    d = analysis.structural_diff(c1, c3)
    assert d.structurally_identical
    assert len(d.constant_diffs) >= 1


def test_pinned_io_deltas_are_zero():
    checked = checked_of("vars x, y; in x; out y; y = x + 5;")
    _, scheme = compile_checked(checked, CompileOptions(seed=9, pin_io=True))
    assert scheme.in_deltas == {"x": 0}
    assert scheme.out_deltas == {"y": 0}


def test_unpinned_io_deltas_are_free():
    checked = checked_of("vars x, y; in x; out y; y = x + 5;")
    _, scheme = compile_checked(checked, CompileOptions(seed=9, pin_io=False))
    assert scheme.in_deltas["x"] != 0 or scheme.out_deltas["y"] != 0


def test_every_free_slot_drawn_once_in_order():
    checked = checked_of("vars x, y, z; in x; out y, z; y = x + 1; z = y + 2;")
    nom = lower_nominal(checked)
    _, scheme = randomize(nom, 0xABCD)
    rng = SplitMix64(0xABCD)
    for sid, pinned in enumerate(nom.slot_pinned):
        if pinned:
            assert scheme.slot_values[sid] == 0
        else:
            assert scheme.slot_values[sid] == rng.next_u32()


def test_macro_add_sub_brute_force():
    rng = random.Random(0xBEEF)
    for op, pyop in (("+", lambda a, b: a + b), ("-", lambda a, b: a - b)):
        checked = checked_of(f"vars x1, x2, y; in x1, x2; out y; y = x1 {op} x2;")
        code, scheme = compile_checked(checked, CompileOptions(seed=5))
        cases = [(0, 0), (1, 1), (MASK32, 1), (MASK32, MASK32), (2**31, 2**31)]
        cases += [(rng.getrandbits(32), rng.getrandbits(32)) for _ in range(100)]
        for a, b in cases:
            res = isa.run(code, {0: a, 1: b})
            assert res.status is RunStatus.HALTED
            got = analysis.decode_outputs(code, scheme, res.final_store)["y"]
            assert got == pyop(a, b) & MASK32, (op, a, b)


def test_expression_forms_brute_force():
    src = """
    vars a[3], x, z, y, w;
    in x, z;
    out y, w;
    a[0] = 7; a[1] = x; a[2] = x + z;
    y = 10 - x + a[2] - z;
    w = a[1] + a[0] - 3;
    """
    checked = checked_of(src)
    code, scheme = compile_checked(checked, CompileOptions(seed=77))
    rng = random.Random(1)
    for _ in range(50):
        x, z = rng.getrandbits(32), rng.getrandbits(32)
        res = isa.run(code, {checked.location("x"): x, checked.location("z"): z})
        got = analysis.decode_outputs(code, scheme, res.final_store)
        assert got["y"] == (10 - x + (x + z) - z) & MASK32 == 10
        assert got["w"] == (x + 7 - 3) & MASK32


def test_loop_header_envs_slot_identical():
    checked = checked_of(
        "vars s, i, n; in n; out s; s = 0; i = 0; while (i < n) { s = s + i; i = i + 1; }"
    )
    nom = lower_nominal(checked)
    assert nom.loops
    for lp in nom.loops:
        for src_addr in lp.back_sources:
            for vid in range(len(nom.vars)):
                assert nom.pre_slot(lp.header, vid) == nom.post_slot(src_addr, vid)


def test_verify_scheme_clean_and_tampered(nominals):
    nom = nominals["while_sum"]
    code, scheme = randomize(nom, 0x77)
    rep = verify_scheme(code, scheme, nom)
    assert rep.ok and not rep.violations

    # +1 on one a field: exactly one offset-identity violation
    k = len(code.code) // 2
    bad = code.code[k]._replace(a=(code.code[k].a + 1) & MASK32)
    tampered = isa.ObjectCode(code.vars, code.in_vars, code.out_vars,
                              code.code[:k] + [bad] + code.code[k + 1:])
    rep2 = verify_scheme(tampered, scheme, nom)
    assert not rep2.ok
    assert len(rep2.violations) == 1
    assert rep2.violations[0].kind == "constant"
    assert f"instruction {k}" in rep2.violations[0].where

    # a pinned slot forced nonzero: pin violation
    pinned_sid = nom.slot_pinned.index(True)
    slots = list(scheme.slot_values)
    slots[pinned_sid] = 1
    scheme_bad = ObfuscationScheme(
        seed=scheme.seed, prng_name=scheme.prng_name, slot_values=slots,
        slot_pinned=scheme.slot_pinned, in_deltas=scheme.in_deltas,
        out_deltas=scheme.out_deltas, nominal=nom)
    rep3 = verify_scheme(code, scheme_bad, nom)
    assert any(v.kind == "pin" for v in rep3.violations)


def test_scheme_json_roundtrip_preserves_verification(nominals):
    nom = nominals["if_else"]
    code, scheme = randomize(nom, 0x99)
    loaded = ObfuscationScheme.from_json(scheme.to_json())
    assert loaded.seed == scheme.seed
    assert loaded.slot_values == scheme.slot_values
    assert loaded.in_deltas == scheme.in_deltas
    rep = verify_scheme(code, loaded, nom)
    assert rep.ok
    # loaded envs agree with nominal instruction by instruction
    for i in range(len(code.code)):
        for vid in range(len(code.vars)):
            assert loaded.pre_slot(i, vid) == nom.pre_slot(i, vid)
            assert loaded.post_slot(i, vid) == nom.post_slot(i, vid)


def test_code_size_limit():
    body = "\n".join(f"a[i] = {k};" for k in range(2100))
    src = f"vars a[256], i; in i;\n{body}\n"
    with pytest.raises(LoweringError) as ei:
        lower_nominal(checked_of(src))
    assert ei.value.code == "E_TOOBIG"


def test_nominal_run_equals_reference(corpus):
    # the nominal rendering (all offsets zero) is already correct code
    checked = corpus["while_sum"]
    nom = lower_nominal(checked)
    code = nom.to_object_code()
    res = isa.run(code, {checked.location("n"): 5})
    assert res.status is RunStatus.HALTED
    out = {code.vars[v]: res.final_store[v] for v in code.out_vars}
    assert out == {"s": 15}  # 1+2+3+4+5, computed by hand
