"""Lowering to add-compare-jump code and randomized constant rewriting.

Lowering happens in two stages.  ``lower_nominal`` turns a checked program
into seed-independent nominal code: every instruction carries its nominal
constants plus a delta environment (variable -> slot) before and after it.
``randomize`` then draws one 32-bit offset per free slot from a seeded
splitmix64 stream and rewrites every embedded constant so that the stored
value of a variable differs from its nominal value by the offset of its
current slot:

    A_phys = A_nom - delta(slot of x before) + delta(slot of y after)
    B_phys = B_nom - delta(slot of z before) + delta(slot of y after)

(when z == y the comparison reads the freshly written y, so its "before"
slot is y's "after" slot and B_phys == B_nom).  Because the machine's
comparison is invariant under shifting both sides by a common offset, the
rewritten code takes exactly the same branches as the nominal code.

Slot discipline
---------------

* Each variable has an entry slot.  Entry slots are pinned (offset 0) for
  every variable the machine zero-initializes, and for inputs exactly when
  ``pin_io`` is set; with ``pin_io`` off, input slots are free and their
  offsets are published as the scheme's in_deltas.
* An ordinary assignment writes its target into a fresh free slot.
* Joins force sharing: both arms of an ``if`` end by moving every variable
  written in either arm into a common fresh slot (reconciliation
  instructions ``v = v + 0``); loops move the loop-written set into the
  header slots both on entry and at the back edge, so the environment at
  the loop header is identical at the start and end of every iteration;
  each out-variable is moved into a dedicated exit slot (pinned when
  ``pin_io``) before the halt.
* Inside the var+/-var bit-extraction macro and inside array dispatch
  trees, the branchy code writes each variable into one designated slot on
  every path (in place for the accumulator and for dynamically written
  array elements), which keeps the environment path-independent without
  per-path reconciliation.

The var+/-var macro extracts the bits of the second operand from the top:
it speculatively subtracts 2^i from a scratch copy and tests the sign (one
instruction); if the bit was set, the target is adjusted by 2^i and the
next bit's speculative subtract follows (two instructions on that path);
if clear, a single combined restore-and-subtract instruction continues the
chain.  Setup is 2 instructions and the whole macro is 96 instructions of
static code; any dynamic path through it executes at most 2 per bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

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
from .isa import MASK32, Instruction, ObjectCode, hex_word, hex_word64, parse_word
from .prng import SplitMix64

CODE_SIZE_LIMIT = 1 << 20

SCHEME_FORMAT = "oic-scheme-v1"
PRNG_NAME = "splitmix64"


class LoweringError(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


@dataclass
class CompileOptions:
    seed: int
    pin_io: bool = True


@dataclass
class LoopInfo:
    """Addresses of one loop's header and reconciliation instructions."""

    header: int
    back_sources: list[int]
    recon_vars: list[int]
    pre_recons: list[tuple[int, int]]   # (var id, address)
    back_recons: list[tuple[int, int]]
    header_slots: dict[int, int]        # var id -> shared slot


@dataclass
class NominalCode:
    """Seed-independent lowering output: nominal instructions plus the
    slot environments that drive constant rewriting."""

    vars: list[str]
    in_vars: list[int]
    out_vars: list[int]
    code: list[Instruction]
    pre_envs: list[dict[int, int]]   # partial: vars absent are in their entry slot
    post_slots: list[int]            # slot the instruction's target lands in
    entry_slots: list[int]           # per variable
    slot_pinned: list[bool]
    exit_env: dict[int, int]
    out_slots: dict[int, int]        # out var id -> exit slot
    loops: list[LoopInfo]
    pin_io: bool

    @property
    def n_slots(self) -> int:
        return len(self.slot_pinned)

    def pre_slot(self, i: int, vid: int) -> int:
        return self.pre_envs[i].get(vid, self.entry_slots[vid])

    def post_slot(self, i: int, vid: int) -> int:
        if vid == self.code[i].y:
            return self.post_slots[i]
        return self.pre_slot(i, vid)

    def exit_slot(self, vid: int) -> int:
        return self.exit_env.get(vid, self.entry_slots[vid])

    def to_object_code(self) -> ObjectCode:
        """The nominal instruction stream (an all-zero-offset rendering)."""
        oc = ObjectCode(
            vars=list(self.vars),
            in_vars=list(self.in_vars),
            out_vars=list(self.out_vars),
            code=list(self.code),
        )
        oc.validate()
        return oc

    def total_envs(self, i: int) -> tuple[dict[int, int], dict[int, int]]:
        nv = len(self.vars)
        pre = {v: self.pre_slot(i, v) for v in range(nv)}
        post = dict(pre)
        post[self.code[i].y] = self.post_slots[i]
        return pre, post

    def to_json_dict(self) -> dict:
        return {
            "vars": list(self.vars),
            "in": list(self.in_vars),
            "out": list(self.out_vars),
            "pin_io": self.pin_io,
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
            "entry_slots": list(self.entry_slots),
            "slots": [{"pinned": p} for p in self.slot_pinned],
            "post_slots": list(self.post_slots),
            "pre_envs": [
                {str(v): s for v, s in sorted(env.items())} for env in self.pre_envs
            ],
            "exit_env": {str(v): s for v, s in sorted(self.exit_env.items())},
            "loops": [
                {
                    "header": lp.header,
                    "back_sources": lp.back_sources,
                    "recon_vars": lp.recon_vars,
                    "pre_recons": lp.pre_recons,
                    "back_recons": lp.back_recons,
                    "header_slots": {str(v): s for v, s in sorted(lp.header_slots.items())},
                }
                for lp in self.loops
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Emission machinery
# ---------------------------------------------------------------------------

class _Label:
    __slots__ = ("ins", "special")

    def __init__(self, special: Optional[str] = None):
        self.ins: Optional["_Ins"] = None
        self.special = special  # "abort" aborts; unbound labels resolve to halt


_FALL = object()  # l1/l2 sentinel: fall through to the next instruction


class _Ins:
    __slots__ = ("x", "a", "y", "z", "b", "l1", "l2", "pre_env", "post_slot")

    def __init__(self, x, a, y, z, b, l1, l2, pre_env, post_slot):
        self.x = x
        self.a = a
        self.y = y
        self.z = z
        self.b = b
        self.l1 = l1
        self.l2 = l2
        self.pre_env = pre_env
        self.post_slot = post_slot


class _Block:
    """A linear fragment under construction, tracking the delta env."""

    __slots__ = ("low", "ins", "env", "pending")

    def __init__(self, low: "_Lowerer", env: dict[int, int]):
        self.low = low
        self.ins: list[_Ins] = []
        self.env = env
        self.pending: list[_Label] = []

    def label_here(self, lab: _Label) -> None:
        self.pending.append(lab)

    def slot_of(self, vid: int) -> int:
        return self.env.get(vid, self.low.entry_slots[vid])

    def emit(self, x: int, a: int, y: int, z: int, b: int, l1, l2, post_slot: int) -> _Ins:
        ins = _Ins(x, a & MASK32, y, z, b & MASK32, l1, l2, dict(self.env), post_slot)
        self.env[y] = post_slot
        for lab in self.pending:
            lab.ins = ins
        self.pending.clear()
        self.ins.append(ins)
        self.low.count += 1
        if self.low.count > CODE_SIZE_LIMIT:
            raise LoweringError("E_TOOBIG", f"code would exceed {CODE_SIZE_LIMIT} instructions")
        return ins

    def move(self, vid: int, slot: int, l1=_FALL, l2=_FALL) -> _Ins:
        """Reconciliation write: v = v + 0 landing in ``slot``."""
        return self.emit(x=vid, a=0, y=vid, z=vid, b=0, l1=l1, l2=l2, post_slot=slot)

    def splice(self, other: "_Block") -> None:
        if other.ins:
            for lab in self.pending:
                lab.ins = other.ins[0]
            self.pending.clear()
            self.ins.extend(other.ins)
        self.pending.extend(other.pending)


def _flatten(e: Expr) -> tuple[int, list[tuple[int, Union[Var, Index]]]]:
    """Collapse an Add/Sub spine into a folded constant plus signed atoms."""
    net = 0
    terms: list[tuple[int, Union[Var, Index]]] = []

    def walk(node: Expr, sign: int) -> None:
        nonlocal net
        if isinstance(node, Add):
            walk(node.left, sign)
            walk(node.right, sign)
        elif isinstance(node, Sub):
            walk(node.left, sign)
            walk(node.right, -sign)
        elif isinstance(node, Const):
            net = (net + sign * node.value) & MASK32
        else:
            terms.append((sign, node))

    walk(e, +1)
    return net, terms


def _is_direct_atom(atom: Union[Var, Index]) -> bool:
    return isinstance(atom, Var) or (isinstance(atom, Index) and isinstance(atom.index, Const))


class _Lowerer:
    def __init__(self, checked: CheckedAst, pin_io: bool):
        self.checked = checked
        self.pin_io = pin_io
        self.var_names = list(checked.var_names)
        self.in_ids = list(checked.in_ids)
        self.out_ids = list(checked.out_ids)
        self.slot_pinned: list[bool] = []
        self.entry_slots: list[int] = []
        in_set = set(self.in_ids)
        for vid in range(len(self.var_names)):
            pinned = pin_io if vid in in_set else True
            self.entry_slots.append(self.new_slot(pinned))
        self.zero_var: Optional[int] = None
        self.pool_vars: list[int] = []
        self.pool_free: list[int] = []
        self.count = 0
        self.loops: list[dict] = []
        self.abort_label = _Label(special="abort")

    # -- allocators ---------------------------------------------------------

    def new_slot(self, pinned: bool) -> int:
        self.slot_pinned.append(pinned)
        return len(self.slot_pinned) - 1

    def _register_var(self, name: str) -> int:
        vid = len(self.var_names)
        self.var_names.append(name)
        self.entry_slots.append(self.new_slot(True))
        return vid

    def zero(self) -> int:
        if self.zero_var is None:
            self.zero_var = self._register_var("$zero")
        return self.zero_var

    def pool_alloc(self) -> int:
        if self.pool_free:
            return self.pool_free.pop()
        vid = self._register_var(f"$t{len(self.pool_vars)}")
        self.pool_vars.append(vid)
        return vid

    def pool_release(self, vid: int) -> None:
        self.pool_free.append(vid)

    def _checkpoint(self):
        return (
            len(self.var_names),
            len(self.slot_pinned),
            list(self.pool_free),
            len(self.pool_vars),
            self.zero_var,
            self.count,
            len(self.loops),
        )

    def _rollback(self, cp) -> None:
        nvars, nslots, pool_free, npool, zero_var, count, nloops = cp
        del self.var_names[nvars:]
        del self.entry_slots[nvars:]
        del self.slot_pinned[nslots:]
        self.pool_free = pool_free
        del self.pool_vars[npool:]
        self.zero_var = zero_var
        self.count = count
        del self.loops[nloops:]

    # -- name resolution ----------------------------------------------------

    def _scalar_id(self, name: str) -> int:
        return self.checked.symbols[name].var_id

    def _elem_id(self, atom: Index) -> int:
        sym = self.checked.symbols[atom.name]
        assert isinstance(atom.index, Const)
        return sym.var_id + atom.index.value

    def _atom_id_direct(self, atom: Union[Var, Index]) -> int:
        if isinstance(atom, Var):
            return self._scalar_id(atom.name)
        return self._elem_id(atom)

    # -- expression lowering -------------------------------------------------

    def _index_operand(self, blk: _Block, idx: Expr) -> tuple[int, Optional[int]]:
        if isinstance(idx, Var):
            return self._scalar_id(idx.name), None
        t = self.pool_alloc()
        net, terms = _flatten(idx)
        self._eval_into(blk, t, net, terms)
        return t, t

    def _atom_value(self, blk: _Block, atom: Union[Var, Index]) -> tuple[int, Optional[int]]:
        """Variable id holding the atom's value, plus a pool temp to release."""
        if _is_direct_atom(atom):
            return self._atom_id_direct(atom), None
        assert isinstance(atom, Index)
        t = self.pool_alloc()
        idx_vid, idx_tmp = self._index_operand(blk, atom.index)
        self._dispatch_read(blk, atom, idx_vid, t, 0)
        if idx_tmp is not None:
            self.pool_release(idx_tmp)
        return t, t

    def _load_atom(self, blk: _Block, target: int, atom: Union[Var, Index], add_const: int) -> None:
        if _is_direct_atom(atom):
            src = self._atom_id_direct(atom)
            blk.emit(x=src, a=add_const, y=target, z=target, b=0, l1=_FALL, l2=_FALL,
                     post_slot=self.new_slot(False))
            return
        assert isinstance(atom, Index)
        idx_vid, idx_tmp = self._index_operand(blk, atom.index)
        self._dispatch_read(blk, atom, idx_vid, target, add_const)
        if idx_tmp is not None:
            self.pool_release(idx_tmp)

    def _eval_into(self, blk: _Block, target: int, net: int,
                   terms: list[tuple[int, Union[Var, Index]]]) -> None:
        """Evaluate ``net + sum(sign * atom)`` into ``target``.

        The first positive atom is loaded together with the folded constant;
        every further atom goes through the bit macro, accumulating in place.
        """
        if not terms:
            blk.emit(x=self.zero(), a=net, y=target, z=target, b=0, l1=_FALL, l2=_FALL,
                     post_slot=self.new_slot(False))
            return
        sign0, atom0 = terms[0]
        if sign0 > 0:
            self._load_atom(blk, target, atom0, net)
            rest = terms[1:]
        else:
            blk.emit(x=self.zero(), a=net, y=target, z=target, b=0, l1=_FALL, l2=_FALL,
                     post_slot=self.new_slot(False))
            rest = terms
        for sign, atom in rest:
            vid, tmp = self._atom_value(blk, atom)
            self._macro_accumulate(blk, target, sign, vid)
            if tmp is not None:
                self.pool_release(tmp)

    # -- the var +/- var bit macro -------------------------------------------

    def _macro_accumulate(self, blk: _Block, target: int, sign: int, src: int) -> None:
        """target := target +/- src, one test per bit of a scratch copy.

        All scratch writes land in one slot and all target writes stay in the
        target's current slot, so every path through the macro leaves the
        same environment and no reconciliation is needed at its exit.
        """
        zero = self.zero()
        w = self.pool_alloc()
        sw = self.new_slot(False)
        sy = blk.slot_of(target)
        l_y = [_Label() for _ in range(32)]
        l_c = [None] + [_Label() for _ in range(31)]  # l_c[i] valid for i >= 1
        l_exit = _Label()

        # setup: copy the operand, then speculatively clear bit 31 and test
        blk.emit(x=src, a=0, y=w, z=w, b=0, l1=_FALL, l2=_FALL, post_slot=sw)
        blk.emit(x=w, a=(-(1 << 31)) & MASK32, y=w, z=zero, b=0,
                 l1=l_c[31], l2=l_y[31], post_slot=sw)
        for i in range(31, 0, -1):
            lo_clear = l_c[i - 1] if i >= 2 else l_exit
            lo_set = l_y[i - 1]
            # bit i was set: adjust the target, then probe bit i-1
            blk.label_here(l_y[i])
            blk.emit(x=target, a=(sign * (1 << i)) & MASK32, y=target, z=target, b=0,
                     l1=_FALL, l2=_FALL, post_slot=sy)
            blk.emit(x=w, a=(-(1 << (i - 1))) & MASK32, y=w, z=zero, b=0,
                     l1=lo_clear, l2=lo_set, post_slot=sw)
            # bit i was clear: restore 2^i and probe bit i-1 in one step
            blk.label_here(l_c[i])
            blk.emit(x=w, a=(1 << (i - 1)) & MASK32, y=w, z=zero, b=0,
                     l1=lo_clear, l2=lo_set, post_slot=sw)
        blk.label_here(l_y[0])
        blk.emit(x=target, a=sign & MASK32, y=target, z=target, b=0,
                 l1=_FALL, l2=_FALL, post_slot=sy)
        blk.label_here(l_exit)
        self.pool_release(w)

    # -- array dispatch --------------------------------------------------------

    def _emit_guards(self, blk: _Block, idx_vid: int, size: int, cmpv: int) -> None:
        zero = self.zero()
        # sign bit set: out of range
        blk.emit(x=idx_vid, a=0, y=cmpv, z=zero, b=0,
                 l1=self.abort_label, l2=_FALL, post_slot=self.new_slot(False))
        # otherwise require idx < size
        blk.emit(x=idx_vid, a=0, y=cmpv, z=zero, b=size,
                 l1=_FALL, l2=self.abort_label, post_slot=self.new_slot(False))

    def _dispatch_read(self, blk: _Block, atom: Index, idx_vid: int, target: int,
                       add_const: int) -> None:
        sym = self.checked.symbols[atom.name]
        base, size = sym.var_id, sym.size
        zero = self.zero()
        cmpv = self.pool_alloc()
        self._emit_guards(blk, idx_vid, size, cmpv)
        s_tree = self.new_slot(False) if size >= 2 else None
        s_t = self.new_slot(False)
        l_done = _Label()
        entry_env = dict(blk.env)

        def build(lo: int, hi: int, env_in: dict[int, int]) -> None:
            blk.env = dict(env_in)
            if hi - lo == 1:
                blk.emit(x=base + lo, a=add_const, y=target, z=target, b=0,
                         l1=l_done, l2=l_done, post_slot=s_t)
                return
            mid = lo + (hi - lo + 1) // 2
            l_left, l_right = _Label(), _Label()
            blk.emit(x=idx_vid, a=0, y=cmpv, z=zero, b=mid,
                     l1=l_left, l2=l_right, post_slot=s_tree)
            env_node = dict(blk.env)
            blk.label_here(l_left)
            build(lo, mid, env_node)
            blk.label_here(l_right)
            build(mid, hi, env_node)

        build(0, size, entry_env)
        env_done = dict(entry_env)
        if s_tree is not None:
            env_done[cmpv] = s_tree
        env_done[target] = s_t
        blk.env = env_done
        blk.label_here(l_done)
        self.pool_release(cmpv)

    def _dispatch_write(self, blk: _Block, atom: Index, idx_vid: int, val_vid: int,
                        leaf_net: int) -> None:
        sym = self.checked.symbols[atom.name]
        base, size = sym.var_id, sym.size
        zero = self.zero()
        cmpv = self.pool_alloc()
        self._emit_guards(blk, idx_vid, size, cmpv)
        s_tree = self.new_slot(False) if size >= 2 else None
        l_done = _Label()
        entry_env = dict(blk.env)

        def build(lo: int, hi: int, env_in: dict[int, int]) -> None:
            blk.env = dict(env_in)
            if hi - lo == 1:
                elem = base + lo
                # written in place: the element keeps its slot so that every
                # dispatch path leaves the same environment
                blk.emit(x=val_vid, a=leaf_net, y=elem, z=elem, b=0,
                         l1=l_done, l2=l_done, post_slot=blk.slot_of(elem))
                return
            mid = lo + (hi - lo + 1) // 2
            l_left, l_right = _Label(), _Label()
            blk.emit(x=idx_vid, a=0, y=cmpv, z=zero, b=mid,
                     l1=l_left, l2=l_right, post_slot=s_tree)
            env_node = dict(blk.env)
            blk.label_here(l_left)
            build(lo, mid, env_node)
            blk.label_here(l_right)
            build(mid, hi, env_node)

        build(0, size, entry_env)
        env_done = dict(entry_env)
        if s_tree is not None:
            env_done[cmpv] = s_tree
        blk.env = env_done
        blk.label_here(l_done)
        self.pool_release(cmpv)

    # -- conditions ------------------------------------------------------------

    def _canon_side(self, blk: _Block, e: Expr, temps: list[int]) -> tuple[int, int]:
        """Reduce one comparison side to (variable, folded constant)."""
        net, terms = _flatten(e)
        if not terms:
            return self.zero(), net
        if len(terms) == 1 and terms[0][0] > 0 and _is_direct_atom(terms[0][1]):
            return self._atom_id_direct(terms[0][1]), net
        t = self.pool_alloc()
        temps.append(t)
        self._eval_into(blk, t, net, terms)
        return t, 0

    def _lower_cond(self, blk: _Block, cond: Cond, l_true: _Label, l_false: _Label) -> None:
        temps: list[int] = []
        v1, c1 = self._canon_side(blk, cond.left, temps)
        v2, c2 = self._canon_side(blk, cond.right, temps)
        cmpv = self.pool_alloc()
        temps.append(cmpv)
        sc = self.new_slot(False)

        def cmp_ins(xv, a, zv, b, l1, l2):
            blk.emit(x=xv, a=a, y=cmpv, z=zv, b=b, l1=l1, l2=l2, post_slot=sc)

        op = cond.op
        if op == "<":
            cmp_ins(v1, c1, v2, c2, l_true, l_false)
        elif op == ">":
            cmp_ins(v2, c2, v1, c1, l_true, l_false)
        elif op == "<=":
            cmp_ins(v2, c2, v1, c1, l_false, l_true)
        elif op == ">=":
            cmp_ins(v1, c1, v2, c2, l_false, l_true)
        elif op == "==":
            # equal iff neither side is wrapped-less than the other; both
            # probes write the shared slot so all exits agree
            cmp_ins(v1, c1, v2, c2, l_false, _FALL)
            cmp_ins(v2, c2, v1, c1, l_false, l_true)
        elif op == "!=":
            cmp_ins(v1, c1, v2, c2, l_true, _FALL)
            cmp_ins(v2, c2, v1, c1, l_true, l_false)
        else:  # pragma: no cover
            raise ValueError(f"unknown relop {op!r}")
        for t in temps:
            self.pool_release(t)

    # -- statements --------------------------------------------------------------

    def _lower_stmts(self, blk: _Block, stmts: list[Stmt]) -> None:
        for s in stmts:
            if isinstance(s, Assign):
                self._lower_assign(blk, s)
            elif isinstance(s, If):
                self._lower_if(blk, s)
            elif isinstance(s, While):
                self._lower_while(blk, s)
            else:  # pragma: no cover
                raise TypeError(f"unknown statement {s!r}")

    def _lower_assign(self, blk: _Block, stmt: Assign) -> None:
        net, terms = _flatten(stmt.rhs)
        lhs = stmt.lhs
        static_target: Optional[int] = None
        if isinstance(lhs, Var):
            static_target = self._scalar_id(lhs.name)
        elif isinstance(lhs.index, Const):
            static_target = self._elem_id(lhs)

        simple = (
            len(terms) == 1 and terms[0][0] > 0 and _is_direct_atom(terms[0][1])
        )

        if static_target is not None:
            tgt = static_target
            if not terms:
                blk.emit(x=self.zero(), a=net, y=tgt, z=tgt, b=0, l1=_FALL, l2=_FALL,
                         post_slot=self.new_slot(False))
            elif simple:
                src = self._atom_id_direct(terms[0][1])
                blk.emit(x=src, a=net, y=tgt, z=tgt, b=0, l1=_FALL, l2=_FALL,
                         post_slot=self.new_slot(False))
            else:
                acc = self.pool_alloc()
                self._eval_into(blk, acc, net, terms)
                blk.emit(x=acc, a=0, y=tgt, z=tgt, b=0, l1=_FALL, l2=_FALL,
                         post_slot=self.new_slot(False))
                self.pool_release(acc)
            return

        # dynamic element target: value first, then the index, then the tree
        assert isinstance(lhs, Index)
        acc: Optional[int] = None
        if not terms:
            val_vid, leaf_net = self.zero(), net
        elif simple:
            val_vid, leaf_net = self._atom_id_direct(terms[0][1]), net
        else:
            acc = self.pool_alloc()
            self._eval_into(blk, acc, net, terms)
            val_vid, leaf_net = acc, 0
        idx_vid, idx_tmp = self._index_operand(blk, lhs.index)
        self._dispatch_write(blk, lhs, idx_vid, val_vid, leaf_net)
        if idx_tmp is not None:
            self.pool_release(idx_tmp)
        if acc is not None:
            self.pool_release(acc)

    def _lower_if(self, blk: _Block, stmt: If) -> None:
        l_then, l_else, l_join = _Label(), _Label(), _Label()
        self._lower_cond(blk, stmt.cond, l_then, l_else)
        env0 = dict(blk.env)
        tb = _Block(self, dict(env0))
        tb.label_here(l_then)
        self._lower_stmts(tb, stmt.then_body)
        eb = _Block(self, dict(env0))
        eb.label_here(l_else)
        self._lower_stmts(eb, stmt.else_body)

        written = sorted({i.y for i in tb.ins} | {i.y for i in eb.ins})
        sigmas = {v: self.new_slot(False) for v in written}
        for k, v in enumerate(written):
            tgt = l_join if k == len(written) - 1 else _FALL
            tb.move(v, sigmas[v], tgt, tgt)
        for v in written:
            eb.move(v, sigmas[v])

        join_env = dict(env0)
        join_env.update(sigmas)
        if written:
            assert tb.env == join_env and eb.env == join_env
        blk.splice(tb)
        blk.splice(eb)
        blk.env = join_env
        blk.label_here(l_join)

    def _loop_written(self, blk: _Block, stmt: While) -> list[int]:
        """Variables written by the loop header condition or body, found by a
        discarded dry lowering (allocator state is rolled back)."""
        cp = self._checkpoint()
        probe = _Block(self, dict(blk.env))
        self._lower_cond(probe, stmt.cond, _Label(), _Label())
        self._lower_stmts(probe, stmt.body)
        written = sorted({i.y for i in probe.ins})
        self._rollback(cp)
        return written

    def _lower_while(self, blk: _Block, stmt: While) -> None:
        written = self._loop_written(blk, stmt)
        sig = {v: self.new_slot(False) for v in written}
        pre_recons = [(v, blk.move(v, sig[v])) for v in written]
        l_head, l_body, l_exit = _Label(), _Label(), _Label()
        blk.label_here(l_head)
        header_env = dict(blk.env)
        head_mark = len(blk.ins)
        self._lower_cond(blk, stmt.cond, l_body, l_exit)
        header_ins = blk.ins[head_mark]
        env_after_cond = dict(blk.env)
        bb = _Block(self, dict(env_after_cond))
        bb.label_here(l_body)
        self._lower_stmts(bb, stmt.body)
        back_recons = []
        for k, v in enumerate(written):
            tgt = l_head if k == len(written) - 1 else _FALL
            back_recons.append((v, bb.move(v, sig[v], tgt, tgt)))
        assert bb.env == header_env
        blk.splice(bb)
        blk.env = env_after_cond
        blk.label_here(l_exit)
        self.loops.append(
            {
                "header": header_ins,
                "pre": pre_recons,
                "back": back_recons,
                "slots": sig,
            }
        )

    # -- top level ---------------------------------------------------------------

    def lower(self) -> NominalCode:
        blk = _Block(self, {})
        self._lower_stmts(blk, self.checked.ast.body)
        out_slots: dict[int, int] = {}
        for vid in self.out_ids:
            s = self.new_slot(self.pin_io)
            out_slots[vid] = s
            blk.move(vid, s)
        exit_env = dict(blk.env)

        index = {id(ins): i for i, ins in enumerate(blk.ins)}
        n = len(blk.ins)

        def resolve(tgt, at: int) -> int:
            if tgt is _FALL:
                return at + 1
            assert isinstance(tgt, _Label)
            if tgt.special == "abort":
                return n + 1
            if tgt.ins is None:
                return n
            return index[id(tgt.ins)]

        code: list[Instruction] = []
        pre_envs: list[dict[int, int]] = []
        post_slots: list[int] = []
        for i, ins in enumerate(blk.ins):
            code.append(
                Instruction(
                    x=ins.x,
                    a=ins.a,
                    y=ins.y,
                    z=ins.z,
                    b=ins.b,
                    l1=resolve(ins.l1, i),
                    l2=resolve(ins.l2, i),
                )
            )
            pre_envs.append(ins.pre_env)
            post_slots.append(ins.post_slot)

        loops = [
            LoopInfo(
                header=index[id(lp["header"])],
                back_sources=[index[id(lp["back"][-1][1])]] if lp["back"] else [],
                recon_vars=[v for v, _ in lp["pre"]],
                pre_recons=[(v, index[id(i_)]) for v, i_ in lp["pre"]],
                back_recons=[(v, index[id(i_)]) for v, i_ in lp["back"]],
                header_slots=dict(lp["slots"]),
            )
            for lp in self.loops
        ]

        nom = NominalCode(
            vars=self.var_names,
            in_vars=list(self.in_ids),
            out_vars=list(self.out_ids),
            code=code,
            pre_envs=pre_envs,
            post_slots=post_slots,
            entry_slots=self.entry_slots,
            slot_pinned=self.slot_pinned,
            exit_env=exit_env,
            out_slots=out_slots,
            loops=loops,
            pin_io=self.pin_io,
        )
        nom.to_object_code()  # validates addresses and ids
        return nom


def lower_nominal(checked: CheckedAst, pin_io: bool = True) -> NominalCode:
    """Deterministic, seed-independent lowering of a checked program."""
    return _Lowerer(checked, pin_io).lower()


# ---------------------------------------------------------------------------
# Randomization
# ---------------------------------------------------------------------------

@dataclass
class ObfuscationScheme:
    """Per-slot offsets plus the environments that place them: everything
    needed to decode a compiled program's stored values."""

    seed: int
    prng_name: str
    slot_values: list[int]
    slot_pinned: list[bool]
    in_deltas: dict[str, int]
    out_deltas: dict[str, int]
    nominal: Optional[NominalCode] = None
    envs: Optional[list[tuple[dict[int, int], dict[int, int]]]] = None

    @property
    def n_instructions(self) -> int:
        if self.nominal is not None:
            return len(self.nominal.code)
        return len(self.envs or [])

    def pre_slot(self, i: int, vid: int) -> int:
        if self.nominal is not None:
            return self.nominal.pre_slot(i, vid)
        return self.envs[i][0][vid]

    def post_slot(self, i: int, vid: int) -> int:
        if self.nominal is not None:
            return self.nominal.post_slot(i, vid)
        return self.envs[i][1][vid]

    def pre_delta(self, i: int, vid: int) -> int:
        return self.slot_values[self.pre_slot(i, vid)]

    def post_delta(self, i: int, vid: int) -> int:
        return self.slot_values[self.post_slot(i, vid)]

    def to_json_dict(self) -> dict:
        envs_json = []
        for i in range(self.n_instructions):
            if self.nominal is not None:
                pre, post = self.nominal.total_envs(i)
            else:
                pre, post = self.envs[i]
            envs_json.append(
                {
                    "pre": {str(v): str(s) for v, s in sorted(pre.items())},
                    "post": {str(v): str(s) for v, s in sorted(post.items())},
                }
            )
        return {
            "format": SCHEME_FORMAT,
            "seed": hex_word64(self.seed),
            "prng": self.prng_name,
            "slots": {
                str(i): {"delta": hex_word(self.slot_values[i]), "pinned": self.slot_pinned[i]}
                for i in range(len(self.slot_values))
            },
            "envs": envs_json,
            "in_deltas": {k: hex_word(v) for k, v in self.in_deltas.items()},
            "out_deltas": {k: hex_word(v) for k, v in self.out_deltas.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json_dict(cls, d: dict) -> "ObfuscationScheme":
        fmt = d.get("format", SCHEME_FORMAT)
        if fmt != SCHEME_FORMAT:
            raise ValueError(f"unsupported scheme format {fmt!r}")
        n_slots = len(d["slots"])
        slot_values = [0] * n_slots
        slot_pinned = [False] * n_slots
        for k, e in d["slots"].items():
            i = int(k)
            slot_values[i] = parse_word(e["delta"])
            slot_pinned[i] = bool(e["pinned"])
        envs = [
            (
                {int(v): int(s) for v, s in e["pre"].items()},
                {int(v): int(s) for v, s in e["post"].items()},
            )
            for e in d["envs"]
        ]
        return cls(
            seed=int(d["seed"], 16),
            prng_name=d["prng"],
            slot_values=slot_values,
            slot_pinned=slot_pinned,
            in_deltas={k: parse_word(v) for k, v in d["in_deltas"].items()},
            out_deltas={k: parse_word(v) for k, v in d["out_deltas"].items()},
            nominal=None,
            envs=envs,
        )

    @classmethod
    def from_json(cls, text: str) -> "ObfuscationScheme":
        return cls.from_json_dict(json.loads(text))


def physical_constants(a_nom: int, b_nom: int, dx: int, dz: int, dy: int,
                       z_is_y: bool = False) -> tuple[int, int]:
    """Rewrite one instruction's constants for the given operand offsets."""
    a = (a_nom - dx + dy) & MASK32
    dz_eff = dy if z_is_y else dz
    b = (b_nom - dz_eff + dy) & MASK32
    return a, b


def randomize(nominal: NominalCode, seed: int) -> tuple[ObjectCode, ObfuscationScheme]:
    """Draw one uniform offset per free slot (splitmix64, low 32 bits, in
    slot order) and rewrite every embedded constant accordingly."""
    rng = SplitMix64(seed)
    slot_values = [0 if pinned else rng.next_u32() for pinned in nominal.slot_pinned]
    code: list[Instruction] = []
    for i, ins in enumerate(nominal.code):
        dx = slot_values[nominal.pre_slot(i, ins.x)]
        dy = slot_values[nominal.post_slots[i]]
        dz = slot_values[nominal.pre_slot(i, ins.z)]
        a, b = physical_constants(ins.a, ins.b, dx, dz, dy, z_is_y=(ins.z == ins.y))
        code.append(ins._replace(a=a, b=b))
    obj = ObjectCode(
        vars=list(nominal.vars),
        in_vars=list(nominal.in_vars),
        out_vars=list(nominal.out_vars),
        code=code,
    )
    scheme = ObfuscationScheme(
        seed=seed,
        prng_name=PRNG_NAME,
        slot_values=slot_values,
        slot_pinned=list(nominal.slot_pinned),
        in_deltas={
            nominal.vars[v]: slot_values[nominal.entry_slots[v]] for v in nominal.in_vars
        },
        out_deltas={
            nominal.vars[v]: slot_values[nominal.out_slots[v]] for v in nominal.out_vars
        },
        nominal=nominal,
    )
    return obj, scheme


def compile_checked(checked: CheckedAst, opts: CompileOptions) -> tuple[ObjectCode, ObfuscationScheme]:
    """Full pipeline: deterministic lowering, then seeded randomization."""
    return randomize(lower_nominal(checked, pin_io=opts.pin_io), opts.seed)


# ---------------------------------------------------------------------------
# Scheme verification
# ---------------------------------------------------------------------------

@dataclass
class Violation:
    kind: str      # "structure" | "constant" | "pin" | "loop" | "env"
    where: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.where}: {self.detail}"


@dataclass
class VerifyReport:
    ok: bool
    violations: list[Violation]
    checked_instructions: int


def verify_scheme(code: ObjectCode, scheme: ObfuscationScheme, nominal: NominalCode) -> VerifyReport:
    """Check that object code, scheme and nominal code belong together:
    every constant satisfies the offset rewrite identities, pinned slots
    are zero, and loop header environments match every back edge."""
    vs: list[Violation] = []

    if len(code.code) != len(nominal.code):
        vs.append(Violation("structure", "code", f"length {len(code.code)} != nominal {len(nominal.code)}"))
    if code.vars != nominal.vars:
        vs.append(Violation("structure", "vars", "variable tables differ"))
    if len(scheme.slot_values) != nominal.n_slots:
        vs.append(Violation("structure", "slots", "slot count differs from nominal"))

    for sid, pinned in enumerate(nominal.slot_pinned):
        if sid >= len(scheme.slot_values):
            break
        if bool(scheme.slot_pinned[sid]) != bool(pinned):
            vs.append(Violation("pin", f"slot {sid}", "pin flag differs from nominal"))
        elif pinned and scheme.slot_values[sid] != 0:
            vs.append(Violation("pin", f"slot {sid}", f"pinned slot has delta {hex_word(scheme.slot_values[sid])}"))

    n = min(len(code.code), len(nominal.code))
    deltas = scheme.slot_values
    n_slots = len(deltas)

    def slot_val(sid: int) -> int:
        return deltas[sid] if sid < n_slots else 0

    for i in range(n):
        ci = code.code[i]
        ni = nominal.code[i]
        if (ci.x, ci.y, ci.z, ci.l1, ci.l2) != (ni.x, ni.y, ni.z, ni.l1, ni.l2):
            vs.append(Violation("structure", f"instruction {i}", "skeleton fields differ"))
            continue
        if scheme.nominal is None and scheme.envs is not None and i < len(scheme.envs):
            pre_n, post_n = nominal.total_envs(i)
            if scheme.envs[i][0] != pre_n or scheme.envs[i][1] != post_n:
                vs.append(Violation("env", f"instruction {i}", "scheme envs differ from nominal"))
        dx = slot_val(nominal.pre_slot(i, ni.x))
        dy = slot_val(nominal.post_slots[i])
        dz = slot_val(nominal.pre_slot(i, ni.z))
        a_want, b_want = physical_constants(ni.a, ni.b, dx, dz, dy, z_is_y=(ni.z == ni.y))
        if ci.a != a_want:
            vs.append(Violation("constant", f"instruction {i} field a",
                                f"have {hex_word(ci.a)}, expected {hex_word(a_want)}"))
        if ci.b != b_want:
            vs.append(Violation("constant", f"instruction {i} field b",
                                f"have {hex_word(ci.b)}, expected {hex_word(b_want)}"))

    nvars = len(nominal.vars)
    for li, lp in enumerate(nominal.loops):
        for src in lp.back_sources:
            for vid in range(nvars):
                h = nominal.pre_slot(lp.header, vid)
                s = nominal.post_slot(src, vid)
                if h != s:
                    vs.append(Violation(
                        "loop", f"loop {li} var {nominal.vars[vid]}",
                        f"header slot {h} != back-edge slot {s}"))

    return VerifyReport(ok=not vs, violations=vs, checked_instructions=n)
