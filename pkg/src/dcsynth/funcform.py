"""Functional form of a loop nest.

A FuncForm is a left fold: starting from the declared initial state it
consumes the elements of one distinguished input sequence, running the
outer-loop body once per element.  Inside the body the current element
is the distinguished variable ``_a``; everything else it reads is
either state or an ambient input (lengths, second sequences).

Summarized forms consume abstract elements instead: records carrying
one field per state variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import values as V
from .equations import (
    ConversionError,
    EquationSystem,
    LoopEq,
    SimpleEq,
    eval_system,
    map_rhs,
    to_equations,
)
from .expr import (
    INDEX,
    INPUT,
    STATE,
    Const,
    Fill,
    Len,
    Node,
    Subscript,
    Var,
    eval_expr,
    pretty,
    rebuild,
    children,
    walk,
)
from .lang import For, Program
from .values import BOOL, INT, EvalError, SeqType

ELEM = "_a"
ELEM_VAR = Var(ELEM, INPUT)


@dataclass
class StateDecl:
    name: str
    typ: object
    init: Node
    length: Node | None = None  # sequence states: symbolic cell count

    def __repr__(self):
        return f"{self.name}: {self.typ!r} = {pretty(self.init)}"


@dataclass
class FuncForm:
    dim: int                      # loop-nest depth
    index: str                    # outer iteration index name
    length: Node                  # outer iteration count
    split: str | None             # consumed input sequence (None: abstract)
    elem_type: object | None      # type of one element, None for abstract
    elem_fields: list | None      # abstract elements: field declarations
    states: list
    body: EquationSystem
    inputs: dict                  # ambient inputs, name -> type

    def state_names(self):
        return [s.name for s in self.states]

    def state_decl(self, name):
        for s in self.states:
            if s.name == name:
                return s
        raise KeyError(name)

    def init_state(self, env):
        state = {}
        for s in self.states:
            state[s.name] = eval_expr(s.init, env)
        return state

    def base_env(self, inputs):
        env = dict(inputs)
        env.pop(self.split, None)
        return env

    def run(self, inputs, elems=None, state=None):
        """Fold the body over elements; returns the final state dict."""
        env = self.base_env(inputs)
        if elems is None:
            if self.split is None:
                raise ValueError("abstract form needs an explicit element list")
            elems = inputs[self.split]
        if state is None:
            state = self.init_state(env)
        env.update({k: V.copy_value(v) for k, v in state.items()})
        for pos, elem in enumerate(elems):
            env[self.index] = pos
            env[ELEM] = elem
            eval_system(self.body, env)
        return {s.name: env[s.name] for s in self.states}

    def step(self, state, elem, inputs):
        """One body application: state ⊗ element."""
        return self.run(inputs, elems=[elem], state=state)

    def prefix_states(self, inputs, elems=None):
        """States after each prefix, starting with the initial state."""
        env = self.base_env(inputs)
        if elems is None:
            elems = inputs[self.split]
        state = self.init_state(env)
        out = [dict(state)]
        for elem in elems:
            state = self.step(state, elem, inputs)
            out.append(dict(state))
        return out

    def seq_states(self):
        return [s for s in self.states if isinstance(s.typ, SeqType)]

    def state_type_env(self, inputs_types=None):
        env = dict(self.inputs)
        for s in self.states:
            env[s.name] = s.typ
        if self.elem_type is not None:
            env[ELEM] = self.elem_type
        if self.elem_fields is not None:
            env[("fields", ELEM)] = {f.name: f.typ for f in self.elem_fields}
        return env


# ---------------------------------------------------------------------------
# conversion from a parsed program

def to_functional(prog: Program) -> FuncForm:
    """Lower a program to its functional form.

    The program body must be a single outer for-loop over a prefix
    range; the loop must consume exactly one input sequence, reading
    only its current element.
    """
    loops = [s for s in prog.body if isinstance(s, For)]
    if len(loops) != 1 or len(prog.body) != 1:
        raise ConversionError(
            "program body must be exactly one outer for-loop")
    outer = prog.body[0]
    if not (isinstance(outer.lo, Const) and outer.lo.value == 0):
        raise ConversionError("outer loop must start at 0 (prefix ranges only)")

    eqs = to_equations(_wrap_body(prog, outer))
    split = _find_split(eqs, outer.index, prog)
    elem_type = prog.inputs[split].elem

    eqs = map_rhs(eqs, lambda e: _abstract_elem(e, split, outer.index))
    _check_streaming(eqs, split, outer.index)

    states = []
    for name, (typ, init) in prog.states.items():
        length = None
        if isinstance(typ, SeqType):
            if not isinstance(init, Fill):
                raise ConversionError(
                    f"sequence state '{name}' must be initialized with fill(...)")
            length = init.length
        states.append(StateDecl(name, typ, init, length))

    inputs = {n: t for n, t in prog.inputs.items() if n != split}
    dim = 1 + eqs.loop_depth()
    return FuncForm(
        dim=dim,
        index=outer.index,
        length=outer.hi,
        split=split,
        elem_type=elem_type,
        elem_fields=None,
        states=states,
        body=eqs,
        inputs=inputs,
    )


def _wrap_body(prog, outer):
    class _Block:
        body = outer.body

    return _Block


def _find_split(eqs, index, prog):
    idx = Var(index, INDEX)
    candidates = set()

    def scan(e):
        for n in walk(e):
            if isinstance(n, Subscript) and isinstance(n.base, Var) \
                    and n.base.kind == INPUT and n.index == idx:
                candidates.add(n.base.name)

    _walk_system(eqs, scan)
    seqs = {c for c in candidates if isinstance(prog.inputs.get(c), SeqType)}
    if not seqs:
        raise ConversionError(
            "outer loop does not read any input sequence at its index")
    if len(seqs) > 1:
        raise ConversionError(
            f"outer loop consumes several input sequences: {sorted(seqs)}")
    return seqs.pop()


def _walk_system(eqs, fn):
    for eq in eqs:
        if isinstance(eq, SimpleEq):
            fn(eq.rhs)
            for s in eq.subs:
                fn(s)
        else:
            fn(eq.lo)
            fn(eq.hi)
            _walk_system(eq.body, fn)


def _abstract_elem(e, split, index):
    """Rewrite split[i] into the element variable _a."""
    if isinstance(e, Subscript) and isinstance(e.base, Var) \
            and e.base.name == split and e.index == Var(index, INDEX):
        return ELEM_VAR
    kids = children(e)
    if not kids:
        return e
    new = tuple(_abstract_elem(c, split, index) for c in kids)
    if all(a is b for a, b in zip(new, kids)):
        return e
    return rebuild(e, new)


def _check_streaming(eqs, split, index):
    def check(e):
        for n in walk(e):
            if isinstance(n, Var) and n.kind == INPUT and n.name == split:
                raise ConversionError(
                    f"non-streaming access to '{split}': only {split}[{index}] "
                    "may be read inside the loop")
            if isinstance(n, Var) and n.kind == INDEX and n.name == index:
                raise ConversionError(
                    f"outer index '{index}' used beyond subscripting '{split}'")

    _walk_system(eqs, check)


# ---------------------------------------------------------------------------
# views

def inner_loop_form(form: FuncForm) -> FuncForm:
    """The inner loop nest as its own functional form over the cells of
    the current element.  Defined when the body has exactly one loop
    equation and elements are sequences."""
    loops = form.body.loops()
    if len(loops) != 1:
        raise ConversionError(
            "memoryless lift needs a body with exactly one inner loop")
    if form.elem_type is None or not isinstance(form.elem_type, SeqType):
        raise ConversionError("inner lift needs sequence-shaped elements")
    loop = loops[0]
    # inside the inner form, the current cell _a[j] becomes the element
    body = map_rhs(loop.body, lambda e: _abstract_cell(e, loop.index))
    return FuncForm(
        dim=form.dim - 1,
        index=loop.index,
        length=loop.hi,
        split=None,
        elem_type=form.elem_type.elem,
        elem_fields=None,
        states=form.states,
        body=body,
        inputs=dict(form.inputs),
    )


def _abstract_cell(e, index):
    if isinstance(e, Subscript) and e.base == ELEM_VAR and e.index == Var(index, INDEX):
        return ELEM_VAR
    kids = children(e)
    if not kids:
        return e
    new = tuple(_abstract_cell(c, index) for c in kids)
    if all(a is b for a, b in zip(new, kids)):
        return e
    return rebuild(e, new)


def equivalent_on(form: FuncForm, prog_eval, inputs) -> bool:
    """Oracle check: functional evaluation matches an independent
    program evaluation on one input binding."""
    got = form.run(inputs)
    want = prog_eval(inputs)
    return all(V.values_equal(got[k], want[k]) for k in want)
