"""Sketch compilation: loop bodies become hole-bearing join templates.

Constants and input reads compile to right-thread holes, state reads to
left-right holes before the first loop and to recursive holes inside
loops and after them.  Simple equations that follow a loop are also
copied into it, so single-pass joins that piggyback on the loop stay in
the search space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .equations import EquationSystem, LoopEq, SimpleEq
from .expr import (
    INDEX,
    INPUT,
    STATE,
    Binary,
    Const,
    Field,
    Hole,
    Len,
    Node,
    Subscript,
    Ternary,
    Unary,
    Var,
    ac_equal,
    children,
    infer_type,
    rebuild,
    var_names,
    walk,
)
from .funcform import ELEM, FuncForm
from .values import BOOL, INT, SeqType


class SketchError(Exception):
    pass


@dataclass
class HoleInfo:
    hid: int
    kind: str  # 'R' | 'LR' | 'Rec'
    typ: object
    eq_lhs: str
    in_loop: str | None  # enclosing loop index name
    initializer: bool = False
    source: object = None  # the replaced subexpression


@dataclass
class Sketch:
    kind: str  # 'parallel' | 'memoryless'
    eqs: list  # SimpleEq / LoopEq with holes in right-hand sides
    holes: dict  # hid -> HoleInfo
    repetitions: int = 1
    state_names: list = field(default_factory=list)

    def holes_for(self, lhs_set):
        return [h for h in self.holes.values() if h.eq_lhs in lhs_set]

    def format(self):
        return EquationSystem(self.eqs).format()


class _Compiler:
    def __init__(self, form: FuncForm, kind: str):
        self.form = form
        self.kind = kind
        self.holes = {}
        self.next_hid = 0
        self.type_env = form.state_type_env()

    def hole(self, hkind, typ, lhs, in_loop, initializer=False, source=None):
        hid = self.next_hid
        self.next_hid += 1
        self.holes[hid] = HoleInfo(hid, hkind, typ or INT, lhs, in_loop,
                                   initializer, source)
        return Hole(hid, hkind, typ or INT)

    def compile_expr(self, e, rec, lhs, in_loop):
        """C / C_rec on one right-hand side."""
        if isinstance(e, Const):
            return self.hole("R", BOOL if isinstance(e.value, bool) else INT,
                             lhs, in_loop, source=e)
        if self._is_input_read(e):
            return self.hole("R", infer_type(e, self.type_env), lhs, in_loop,
                             source=e)
        if self._is_state_read(e):
            return self.hole("Rec" if rec else "LR",
                             infer_type(e, self.type_env), lhs, in_loop,
                             source=e)
        if isinstance(e, Var) and e.kind == INDEX:
            return e
        kids = children(e)
        if not kids:
            return e
        return rebuild(
            e, tuple(self.compile_expr(c, rec, lhs, in_loop) for c in kids))

    def _is_input_read(self, e):
        """A maximal read of input data: input variables, element
        fields/cells, and subscript chains over them."""
        names = [v for v in walk(e) if isinstance(v, Var)]
        if not names:
            return False
        roots = {v.kind for v in names}
        if roots == {INPUT}:
            return True
        if isinstance(e, (Subscript, Field, Len)):
            base = e
            while isinstance(base, (Subscript, Field, Len)):
                base = base.base
            if isinstance(base, Var) and base.kind == INPUT:
                # indexes may appear in the subscript
                return all(v.kind in (INPUT, INDEX) for v in names)
        return False

    def _is_state_read(self, e):
        if isinstance(e, Var) and e.kind == STATE:
            return True
        if isinstance(e, Subscript):
            base = e.base
            while isinstance(base, Subscript):
                base = base.base
            if isinstance(base, Var) and base.kind == STATE:
                return all(
                    v.kind in (STATE, INDEX) for v in walk(e)
                    if isinstance(v, Var))
        return False


def compile_sketch(form: FuncForm, kind: str, repetitions: int = 1) -> Sketch:
    """Build the join sketch for a functional form's body.

    kind 'parallel': the join of two chunk states, loops kept.
    kind 'memoryless': the join of an outer state with one inner
    result; with scalar-only state the loops are spliced away, with
    sequence state the body loop iterates over the state length.
    """
    comp = _Compiler(form, kind)
    seq_states = form.seq_states()
    splice = kind == "memoryless" and not seq_states

    compiled = _compile_system(comp, form.body.eqs, rec=False,
                               in_loop=None, splice=splice)
    if not splice:
        compiled = _copy_post_loop_into_loops(comp, compiled)

    body = list(compiled)
    for _ in range(1, repetitions):
        extra = _compile_system(comp, form.body.eqs, rec=True,
                                in_loop=None, splice=splice)
        if not splice:
            extra = _copy_post_loop_into_loops(comp, extra)
        body.extend(extra)

    # a left-right initializer for every scalar state variable whose
    # value the source body reads before assigning (the join's locals
    # must be well-defined before recursive holes can read them);
    # sequence locals always start from the left state, which keeps the
    # join in the shape the summarized loop can absorb
    needed = _read_before_assign(form.body.eqs)
    inits = []
    for decl in form.states:
        if decl.name in needed and not isinstance(decl.typ, SeqType):
            inits.append(SimpleEq(
                decl.name, (),
                comp.hole("LR", decl.typ, decl.name, None, initializer=True,
                          source=Var(decl.name, STATE))))
    eqs = inits + body

    for eq in eqs:
        if isinstance(eq, LoopEq):
            _check_join_bound(eq)

    return Sketch(kind, eqs, comp.holes, repetitions,
                  [s.name for s in form.states])


def _compile_system(comp, eqs, rec, in_loop, splice=False):
    out = []
    seen_loop = rec
    for eq in eqs:
        if isinstance(eq, SimpleEq):
            out.append(SimpleEq(
                eq.lhs, eq.subs,
                comp.compile_expr(eq.rhs, seen_loop, eq.lhs, in_loop)))
        else:
            if splice:
                out.extend(_compile_system(
                    comp, eq.body.eqs, rec=True, in_loop=None, splice=True))
            else:
                inner = _compile_system(
                    comp, eq.body.eqs, rec=True, in_loop=eq.index,
                    splice=False)
                out.append(LoopEq(eq.modified, eq.index, eq.lo, eq.hi,
                                  EquationSystem(inner)))
            seen_loop = True
    return out


def _copy_post_loop_into_loops(comp, eqs):
    """Simple equations after a loop are also copied into the loop body
    (fresh holes) so one pass can compute them incrementally."""
    loops = [e for e in eqs if isinstance(e, LoopEq)]
    if not loops:
        return eqs
    last_loop = loops[-1]
    out = []
    for eq in eqs:
        out.append(eq)
    idx = out.index(last_loop)
    for eq in out[idx + 1:]:
        if isinstance(eq, SimpleEq) and not eq.subs:
            copy = SimpleEq(
                eq.lhs, (),
                comp.compile_expr(_strip_holes(eq.rhs), True, eq.lhs,
                                  last_loop.index))
            last_loop.body.eqs.append(copy)
            if eq.lhs not in last_loop.modified:
                last_loop.modified = tuple(list(last_loop.modified) + [eq.lhs])
    return out


def _strip_holes(e):
    """Recover a hole-free template shape (holes become placeholder
    state reads so recompilation produces fresh holes)."""
    if isinstance(e, Hole):
        return Var("_h", STATE)
    kids = children(e)
    if not kids:
        return e
    return rebuild(e, tuple(_strip_holes(c) for c in kids))


def _read_before_assign(eqs):
    """State variables whose entry value the body observes: read before
    their first whole assignment, including partial (cell) updates."""
    assigned = set()
    needed = set()

    def scan_expr(e):
        for v in walk(e):
            if isinstance(v, Var) and v.kind == STATE and v.name not in assigned:
                needed.add(v.name)

    def scan(eq_list):
        for eq in eq_list:
            if isinstance(eq, SimpleEq):
                scan_expr(eq.rhs)
                for s in eq.subs:
                    scan_expr(s)
                if eq.subs and eq.lhs not in assigned:
                    needed.add(eq.lhs)  # cell write keeps the rest
                if not eq.subs:
                    assigned.add(eq.lhs)
            else:
                scan_expr(eq.lo)
                scan_expr(eq.hi)
                scan(eq.body.eqs)

    scan(eqs)
    return needed


def _check_join_bound(loop):
    for e in (loop.lo, loop.hi):
        for v in walk(e):
            if isinstance(v, Var) and v.name == ELEM:
                raise SketchError(
                    "join loop bound depends on the consumed element")
