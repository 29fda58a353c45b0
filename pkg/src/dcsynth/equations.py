"""Ordered recurrence-equation systems modeling loop bodies.

A system is an ordered list of simple equations (one assignment,
possibly to a subscripted cell) and loop equations (a nested system
together with the set of variables it modifies).  Equations have
sequential read semantics: each right-hand side sees the effects of the
equations before it within the current iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import values as V
from .expr import (
    INDEX,
    STATE,
    Binary,
    Const,
    Node,
    Subscript,
    Ternary,
    Var,
    children,
    eval_expr,
    pretty,
    rebuild,
    subst_vars,
    var_names,
    walk,
)
from .lang import Assign, For, If, _desugar_minmax
from .values import EvalError


class ConversionError(Exception):
    pass


@dataclass
class SimpleEq:
    lhs: str
    subs: tuple  # index expressions, outermost first; () for scalars
    rhs: Node

    def __repr__(self):
        subs = "".join(f"[{pretty(s)}]" for s in self.subs)
        return f"{self.lhs}{subs} = {pretty(self.rhs)}"


@dataclass
class LoopEq:
    modified: tuple
    index: str
    lo: Node
    hi: Node
    body: "EquationSystem"

    def __repr__(self):
        mods = ", ".join(self.modified)
        return f"({mods}) = for {self.index} in {pretty(self.lo)}..{pretty(self.hi)} {{ ... }}"


@dataclass
class EquationSystem:
    eqs: list

    def __iter__(self):
        return iter(self.eqs)

    def simple(self):
        return [e for e in self.eqs if isinstance(e, SimpleEq)]

    def loops(self):
        return [e for e in self.eqs if isinstance(e, LoopEq)]

    def assigned_vars(self):
        out = []
        for e in self.eqs:
            if isinstance(e, SimpleEq):
                if e.lhs not in out:
                    out.append(e.lhs)
            else:
                for v in e.modified:
                    if v not in out:
                        out.append(v)
        return out

    def loop_depth(self):
        d = 0
        for e in self.eqs:
            if isinstance(e, LoopEq):
                d = max(d, 1 + e.body.loop_depth())
        return d

    def format(self, indent=0):
        pad = "  " * indent
        lines = []
        for e in self.eqs:
            if isinstance(e, SimpleEq):
                lines.append(pad + repr(e))
            else:
                mods = ", ".join(e.modified)
                lines.append(
                    pad
                    + f"({mods}) = for {e.index} in "
                    + f"{pretty(e.lo)}..{pretty(e.hi)} {{"
                )
                lines.append(e.body.format(indent + 1))
                lines.append(pad + "}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# conversion from statement blocks

def to_equations(prog):
    """Convert a parsed program body to a nested equation system."""
    return _convert_block(prog.body)


def _convert_block(stmts):
    eqs = []
    for s in stmts:
        if isinstance(s, Assign):
            _append_assign(eqs, SimpleEq(s.name, s.subs, s.rhs))
        elif isinstance(s, For):
            body = _convert_block(s.body)
            modified = tuple(_assigned_in_block(s.body))
            eqs.append(LoopEq(modified, s.index, s.lo, s.hi, body))
        elif isinstance(s, If):
            for merged in _merge_conditional(s):
                _append_assign(eqs, merged)
        else:
            raise ConversionError(f"cannot convert statement {s!r}")
    return EquationSystem(eqs)


def _append_assign(eqs, eq):
    """Append a simple equation, composing a repeated assignment to the
    same scalar when that is sound (no intervening reader, no loop)."""
    if eq.subs:
        for prev in eqs:
            if isinstance(prev, SimpleEq) and prev.lhs == eq.lhs and prev.subs == eq.subs:
                raise ConversionError(
                    f"cell of '{eq.lhs}' assigned twice in one body")
        eqs.append(eq)
        return
    for pos, prev in enumerate(eqs):
        if isinstance(prev, SimpleEq) and prev.lhs == eq.lhs and not prev.subs:
            between = eqs[pos + 1:]
            if any(isinstance(b, LoopEq) for b in between):
                raise ConversionError(
                    f"'{eq.lhs}' assigned both before and after a loop")
            reads_between = any(
                eq.lhs in var_names(b.rhs, STATE) for b in between
            )
            old_reads = var_names(prev.rhs, STATE)
            redefined_between = {
                b.lhs for b in between if isinstance(b, SimpleEq)
            } & old_reads
            if reads_between or redefined_between:
                raise ConversionError(
                    f"repeated assignment to '{eq.lhs}' needs a temporary")
            composed = subst_vars(eq.rhs, {eq.lhs: prev.rhs})
            eqs[pos] = SimpleEq(eq.lhs, (), composed)
            # keep original position: nothing after reads or redefines it
            return
    eqs.append(eq)


def _assigned_in_block(stmts):
    out = []

    def visit(block):
        for s in block:
            if isinstance(s, Assign):
                if s.name not in out:
                    out.append(s.name)
            elif isinstance(s, If):
                visit(s.then)
                visit(s.orelse)
            elif isinstance(s, For):
                visit(s.body)

    visit(stmts)
    return out


def _merge_conditional(s):
    """Merge both branches into ternary equations, one per assigned
    variable; a variable untouched in one branch keeps itself there."""
    env_t = _branch_env(s.then)
    env_f = _branch_env(s.orelse)
    names = list(env_t)
    for n in env_f:
        if n not in names:
            names.append(n)
    merged = []
    for n in names:
        rhs_t = env_t.get(n, Var(n, STATE))
        rhs_f = env_f.get(n, Var(n, STATE))
        merged.append(SimpleEq(n, (), _desugar_minmax(Ternary(s.cond, rhs_t, rhs_f))))
    return _order_entry_relative(merged)


def _branch_env(stmts):
    """Sequentially compose a loop-free straight-line branch into
    entry-relative right-hand sides, one per assigned variable."""
    env = {}
    for s in stmts:
        if isinstance(s, For):
            raise ConversionError("loop inside a conditional is unsupported")
        if isinstance(s, If):
            for eq in _merge_conditional(s):
                env[eq.lhs] = subst_vars(eq.rhs, env)
            continue
        if not isinstance(s, Assign):
            raise ConversionError(f"cannot convert statement {s!r}")
        if s.subs:
            raise ConversionError(
                "subscripted assignment inside a conditional is unsupported; "
                "use a ternary right-hand side")
        env[s.name] = subst_vars(s.rhs, env)
    return env


def _order_entry_relative(eqs):
    """Order entry-relative equations so no equation reads a variable
    assigned by an earlier one (readers first)."""
    remaining = list(eqs)
    ordered = []
    while remaining:
        progressed = False
        for eq in list(remaining):
            pending_readers = set()
            for other in remaining:
                if other is not eq:
                    pending_readers |= var_names(other.rhs, STATE) - {other.lhs}
            if eq.lhs not in pending_readers:
                ordered.append(eq)
                remaining.remove(eq)
                progressed = True
                break
        if not progressed:
            raise ConversionError(
                "conditional assignments form a cycle; needs a temporary")
    return ordered


# ---------------------------------------------------------------------------
# evaluation

def eval_system(system, env):
    """Run a system once, mutating env's state bindings in place."""
    for eq in system.eqs:
        if isinstance(eq, SimpleEq):
            val = eval_expr(eq.rhs, env)
            if eq.subs:
                _store_cell(env, eq.lhs, eq.subs, val)
            else:
                # whole-variable assignment snapshots sequence values so
                # later cell writes cannot leak through aliases
                env[eq.lhs] = V.copy_value(val) if isinstance(val, list) else val
        else:
            lo = eval_expr(eq.lo, env)
            hi = eval_expr(eq.hi, env)
            if not (V.is_int(lo) and V.is_int(hi)):
                raise EvalError("loop bounds must be integers")
            for i in range(lo, hi):
                env[eq.index] = i
                eval_system(eq.body, env)
            env.pop(eq.index, None)
    return env


def _store_cell(env, name, subs, val):
    target = env.get(name)
    if target is None:
        raise EvalError(f"unbound variable '{name}'")
    idxs = [eval_expr(s, env) for s in subs]
    for depth, idx in enumerate(idxs):
        if not isinstance(target, list):
            raise EvalError(f"too many subscripts on '{name}'")
        if not V.is_int(idx):
            raise EvalError("subscript index is not an integer")
        if idx < 0 or idx >= len(target):
            raise EvalError(
                f"subscript out of bounds on '{name}': index {idx}, "
                f"length {len(target)}")
        if depth == len(idxs) - 1:
            target[idx] = val
        else:
            target = target[idx]


# ---------------------------------------------------------------------------
# helpers used across modules

def map_rhs(system, fn):
    """Rebuild a system applying fn to every simple-equation rhs and
    loop bound."""
    out = []
    for eq in system.eqs:
        if isinstance(eq, SimpleEq):
            out.append(SimpleEq(eq.lhs, tuple(fn(s) for s in eq.subs), fn(eq.rhs)))
        else:
            out.append(
                LoopEq(eq.modified, eq.index, fn(eq.lo), fn(eq.hi),
                       map_rhs(eq.body, fn))
            )
    return EquationSystem(out)


def read_vars(system):
    """State variables read anywhere in the system (before masking by
    assignment order; conservative)."""
    out = set()
    for eq in system.eqs:
        if isinstance(eq, SimpleEq):
            out |= var_names(eq.rhs, STATE)
            for s in eq.subs:
                out |= var_names(s, STATE)
        else:
            out |= var_names(eq.lo, STATE) | var_names(eq.hi, STATE)
            out |= read_vars(eq.body)
    return out


def modified_set_invariant(system):
    """Every loop equation's modified set equals the variables assigned
    in its body."""
    for eq in system.eqs:
        if isinstance(eq, LoopEq):
            if set(eq.modified) != set(eq.body.assigned_vars()):
                return False
            if not modified_set_invariant(eq.body):
                return False
    return True


def dead_code_eliminate(system):
    """Drop simple equations whose value is overwritten before any read.

    Only scalar self-contained cases are handled (an equation directly
    followed, possibly after unrelated equations, by another assignment
    to the same variable with no intervening read or loop).
    """
    eqs = list(system.eqs)
    changed = True
    while changed:
        changed = False
        for i, eq in enumerate(eqs):
            if not isinstance(eq, SimpleEq) or eq.subs:
                continue
            for later in eqs[i + 1:]:
                if isinstance(later, LoopEq):
                    if eq.lhs in later.modified or eq.lhs in read_vars(later.body):
                        break
                    continue
                if eq.lhs in var_names(later.rhs, STATE) or any(
                    eq.lhs in var_names(s, STATE) for s in later.subs
                ):
                    break
                if later.lhs == eq.lhs and not later.subs:
                    eqs.pop(i)
                    changed = True
                    break
            if changed:
                break
    return EquationSystem(eqs)
