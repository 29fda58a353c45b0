"""Symbolic unfolding, normal forms, and the cost-guided rewrite search.

Expressions are rewritten in a flattened working form where the
associative-commutative operators are n-ary and sums carry integer
coefficients.  The search runs in two phases: phase one pushes state
variables up and together (fewer occurrences, smaller depth); phase two
fixes a spine operator and drives the expression into spine-of-leaves
shape, where every leaf separates state from input.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field

from . import values as V
from .equations import EquationSystem, LoopEq, SimpleEq
from .expr import (
    INDEX,
    INPUT,
    STATE,
    BigOp,
    Binary,
    Const,
    Field,
    Fill,
    Len,
    Node,
    Subscript,
    Ternary,
    Unary,
    Var,
    ac_key,
    eval_expr,
    pretty,
    simplify,
    walk,
)
from .funcform import ELEM, ELEM_VAR, FuncForm
from .values import BOOL, INT, EvalError, SeqType


class UnfoldError(Exception):
    pass


class NormalizationFailure(Exception):
    def __init__(self, msg, best=None, trace=None):
        super().__init__(msg)
        self.best = best
        self.trace = trace or []


@dataclass
class Budget:
    node_limit: int = 50_000
    rewrite_limit: int = 200_000

    def check_nodes(self, n):
        if n > self.node_limit:
            raise UnfoldError(f"expression grew past {self.node_limit} nodes")


# ---------------------------------------------------------------------------
# flat working form

@dataclass(frozen=True)
class FlatSum:
    terms: tuple  # ((node, coeff), ...) canonically sorted
    const: object  # int or Inf

    def __repr__(self):
        return pretty(unflatten(self))


@dataclass(frozen=True)
class FlatOp:
    op: str  # '*', 'min', 'max', '&&', '||'
    args: tuple

    def __repr__(self):
        return pretty(unflatten(self))


@dataclass(frozen=True)
class FCmp:
    op: str  # '<', '<=', '==', '!='
    left: object
    right: object

    def __repr__(self):
        return pretty(unflatten(self))


@dataclass(frozen=True)
class FNot:
    operand: object

    def __repr__(self):
        return pretty(unflatten(self))


@dataclass(frozen=True)
class FTern:
    cond: object
    if_true: object
    if_false: object

    def __repr__(self):
        return pretty(unflatten(self))


@dataclass(frozen=True)
class FSub:
    base: object
    index: object

    def __repr__(self):
        return pretty(unflatten(self))


_FLAT_KINDS = (FlatSum, FlatOp, FCmp, FNot, FTern, FSub)
_MIRROR = {">": "<", ">=": "<="}
_AC_IDENT = {"min": V.POS_INF, "max": V.NEG_INF, "&&": True, "||": False, "*": 1}
_AC_ABSORB = {"min": V.NEG_INF, "max": V.POS_INF, "&&": False, "||": True, "*": 0}


def fkey(e):
    if isinstance(e, Const):
        return (0, str(type(e.value).__name__), repr(e.value))
    if isinstance(e, Var):
        return (1, e.kind, e.name)
    if isinstance(e, Field):
        return (2, fkey(e.base), e.name)
    if isinstance(e, FSub):
        return (3, fkey(e.base), fkey(e.index))
    if isinstance(e, Len):
        return (4, fkey(e.base),)
    if isinstance(e, FlatSum):
        return (5, tuple((fkey(t), c) for t, c in e.terms), repr(e.const))
    if isinstance(e, FlatOp):
        return (6, e.op, tuple(fkey(a) for a in e.args))
    if isinstance(e, FCmp):
        return (7, e.op, fkey(e.left), fkey(e.right))
    if isinstance(e, FNot):
        return (8, fkey(e.operand))
    if isinstance(e, FTern):
        return (9, fkey(e.cond), fkey(e.if_true), fkey(e.if_false))
    raise TypeError(f"not a flat node: {e!r}")


def make_sum(terms, const=0):
    """Canonical sum from (node, coeff) pairs; merges duplicates, drops
    zeros, lifts nested sums, collapses singletons."""
    acc = {}
    order = {}
    inf_part = const if isinstance(const, V.Inf) else None
    num_const = 0 if isinstance(const, V.Inf) else const
    for t, c in terms:
        if isinstance(t, FlatSum):
            sub_const = t.const
            if isinstance(sub_const, V.Inf):
                got = sub_const if c > 0 else V.Inf(-sub_const.sign)
                if inf_part is not None and inf_part != got:
                    raise EvalError("cannot add +inf and -inf")
                inf_part = got
            else:
                num_const += c * sub_const
            for st, sc in t.terms:
                k = fkey(st)
                acc[k] = acc.get(k, 0) + c * sc
                order.setdefault(k, st)
            continue
        if isinstance(t, Const):
            if isinstance(t.value, V.Inf):
                got = t.value if c > 0 else V.Inf(-t.value.sign)
                if inf_part is not None and inf_part != got:
                    raise EvalError("cannot add +inf and -inf")
                inf_part = got
            else:
                num_const += c * t.value
            continue
        k = fkey(t)
        acc[k] = acc.get(k, 0) + c
        order.setdefault(k, t)
    parts = tuple(
        sorted(((order[k], c) for k, c in acc.items() if c != 0),
               key=lambda tc: fkey(tc[0]))
    )
    if inf_part is not None:
        # absorbing addition: any finite remainder disappears
        return Const(inf_part)
    if not parts:
        return Const(num_const)
    if len(parts) == 1 and parts[0][1] == 1 and num_const == 0:
        return parts[0][0]
    return FlatSum(parts, num_const)


def make_op(op, args):
    """Canonical n-ary node for *, min, max, &&, ||."""
    flat = []
    for a in args:
        if isinstance(a, FlatOp) and a.op == op:
            flat.extend(a.args)
        else:
            flat.append(a)
    ident = _AC_IDENT[op]
    absorb = _AC_ABSORB.get(op)
    out = []
    for a in flat:
        if isinstance(a, Const):
            if _const_eq(a.value, ident):
                continue
            if op in ("&&", "||") and _const_eq(a.value, absorb):
                return Const(absorb)
            if op in ("min", "max") and isinstance(a.value, V.Inf):
                if _const_eq(a.value, absorb):
                    return Const(absorb)
                continue  # identity infinity
        out.append(a)
    consts = [a for a in out if isinstance(a, Const)]
    if len(consts) > 1 and op in ("min", "max", "*"):
        fn = {"min": V.vmin, "max": V.vmax, "*": V.mul}[op]
        folded = consts[0].value
        for c in consts[1:]:
            folded = fn(folded, c.value)
        out = [a for a in out if not isinstance(a, Const)] + [Const(folded)]
    if op in ("min", "max", "&&", "||"):
        seen = set()
        uniq = []
        for a in out:
            k = fkey(a)
            if k not in seen:
                seen.add(k)
                uniq.append(a)
        out = uniq
    if not out:
        return Const(ident)
    if len(out) == 1:
        return out[0]
    return FlatOp(op, tuple(sorted(out, key=fkey)))


def _const_eq(a, b):
    if isinstance(a, V.Inf) or isinstance(b, V.Inf):
        return isinstance(a, V.Inf) and isinstance(b, V.Inf) and a.sign == b.sign
    return not isinstance(a, bool) ^ isinstance(b, bool) and a == b


def make_cmp(op, l, r):
    if op in _MIRROR:
        op, l, r = _MIRROR[op], r, l
    if op in ("==", "!=") and fkey(l) > fkey(r):
        l, r = r, l
    if isinstance(l, Const) and isinstance(r, Const):
        try:
            return Const(eval_expr(Binary(op, l, r), {}))
        except EvalError:
            pass
    if op in ("<=",) and fkey(l) == fkey(r):
        return Const(True)
    if op == "<=" and isinstance(l, Const) and _const_eq(l.value, V.NEG_INF):
        return Const(True)
    if op == "<=" and isinstance(r, Const) and _const_eq(r.value, V.POS_INF):
        return Const(True)
    if op == "<" and isinstance(l, Const) and _const_eq(l.value, V.POS_INF):
        return Const(False)
    if op == "<" and isinstance(r, Const) and _const_eq(r.value, V.NEG_INF):
        return Const(False)
    if op == "==" and fkey(l) == fkey(r):
        return Const(True)
    return FCmp(op, l, r)


def make_not(x):
    if isinstance(x, Const):
        return Const(not x.value)
    if isinstance(x, FNot):
        return x.operand
    return FNot(x)


def make_tern(c, t, f):
    if isinstance(c, Const):
        return t if c.value else f
    if fkey(t) == fkey(f):
        return t
    return FTern(c, t, f)


def flatten(e):
    """Expression tree -> canonical flat form."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return e
    if isinstance(e, Field):
        return Field(flatten(e.base), e.name)
    if isinstance(e, Subscript):
        return FSub(flatten(e.base), flatten(e.index))
    if isinstance(e, Len):
        return Len(flatten(e.base))
    if isinstance(e, Unary):
        if e.op == "-":
            return make_sum([(flatten(e.operand), -1)])
        return make_not(flatten(e.operand))
    if isinstance(e, Binary):
        op = e.op
        if op == "+":
            return make_sum([(flatten(e.left), 1), (flatten(e.right), 1)])
        if op == "-":
            return make_sum([(flatten(e.left), 1), (flatten(e.right), -1)])
        if op in ("*", "min", "max", "&&", "||"):
            return make_op(op, [flatten(e.left), flatten(e.right)])
        if op == "/":
            return FlatOp("/", (flatten(e.left), flatten(e.right)))
        return make_cmp(op, flatten(e.left), flatten(e.right))
    if isinstance(e, Ternary):
        return make_tern(flatten(e.cond), flatten(e.if_true), flatten(e.if_false))
    if isinstance(e, _FLAT_KINDS):
        return e
    raise TypeError(f"cannot flatten {e!r}")


def unflatten(e):
    """Flat form -> plain expression tree (left-associated chains)."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Field):
        return Field(unflatten(e.base), e.name)
    if isinstance(e, FSub):
        return Subscript(unflatten(e.base), unflatten(e.index))
    if isinstance(e, Len):
        return Len(unflatten(e.base))
    if isinstance(e, FlatSum):
        pos = [(unflatten(t), c) for t, c in e.terms if c > 0]
        neg = [(unflatten(t), -c) for t, c in e.terms if c < 0]
        out = None
        for t, c in pos:
            for _ in range(c):
                out = t if out is None else Binary("+", out, t)
        if out is None:
            if isinstance(e.const, V.Inf) or e.const or not neg:
                out = Const(e.const)
        elif (isinstance(e.const, V.Inf) or e.const != 0):
            out = Binary("+", out, Const(e.const))
        for t, c in neg:
            for _ in range(c):
                out = Unary("-", t) if out is None else Binary("-", out, t)
        return out
    if isinstance(e, FlatOp):
        if e.op == "/":
            return Binary("/", unflatten(e.args[0]), unflatten(e.args[1]))
        out = unflatten(e.args[0])
        for a in e.args[1:]:
            out = Binary(e.op, out, unflatten(a))
        return out
    if isinstance(e, FCmp):
        return Binary(e.op, unflatten(e.left), unflatten(e.right))
    if isinstance(e, FNot):
        return Unary("!", unflatten(e.operand))
    if isinstance(e, FTern):
        return Ternary(unflatten(e.cond), unflatten(e.if_true), unflatten(e.if_false))
    raise TypeError(f"cannot unflatten {e!r}")


def fchildren(e):
    if isinstance(e, (Const, Var)):
        return ()
    if isinstance(e, Field):
        return (e.base,)
    if isinstance(e, FSub):
        return (e.base, e.index)
    if isinstance(e, Len):
        return (e.base,)
    if isinstance(e, FlatSum):
        return tuple(t for t, _ in e.terms)
    if isinstance(e, FlatOp):
        return e.args
    if isinstance(e, FCmp):
        return (e.left, e.right)
    if isinstance(e, FNot):
        return (e.operand,)
    if isinstance(e, FTern):
        return (e.cond, e.if_true, e.if_false)
    raise TypeError(f"not a flat node: {e!r}")


def frebuild(e, kids):
    kids = list(kids)
    if isinstance(e, Field):
        return Field(kids[0], e.name)
    if isinstance(e, FSub):
        return FSub(kids[0], kids[1])
    if isinstance(e, Len):
        return Len(kids[0])
    if isinstance(e, FlatSum):
        return make_sum(
            [(k, c) for k, (_, c) in zip(kids, e.terms)], e.const
        )
    if isinstance(e, FlatOp):
        if e.op == "/":
            return FlatOp("/", tuple(kids))
        return make_op(e.op, kids)
    if isinstance(e, FCmp):
        return make_cmp(e.op, kids[0], kids[1])
    if isinstance(e, FNot):
        return make_not(kids[0])
    if isinstance(e, FTern):
        return make_tern(kids[0], kids[1], kids[2])
    return e


def fwalk(e):
    yield e
    for c in fchildren(e):
        yield from fwalk(c)


def fsize(e):
    """Node count of the corresponding expression tree (approximate for
    coefficient sums)."""
    if isinstance(e, FlatSum):
        n = sum(fsize(t) * abs(c) for t, c in e.terms)
        n += max(0, sum(abs(c) for _, c in e.terms) - 1)
        if isinstance(e.const, V.Inf) or e.const != 0:
            n += 2
        return n
    kids = fchildren(e)
    if not kids:
        return 1
    extra = len(kids) - 1 if isinstance(e, FlatOp) else 1
    return extra + sum(fsize(c) for c in kids)


# ---------------------------------------------------------------------------
# variable classification

def atom_class(e):
    """(has_state, has_input) over the subtree."""
    has_s = has_i = False
    for n in fwalk(e):
        if isinstance(n, Var):
            if n.kind == STATE:
                has_s = True
            elif n.kind == INPUT:
                has_i = True
    return has_s, has_i


def input_parts(e):
    """Maximal pure-input subtrees, with sibling pure-input operands of
    one AC node merged into a single part."""
    has_s, has_i = atom_class(e)
    if not has_i:
        return []
    if not has_s:
        return [e]
    if isinstance(e, FlatSum):
        pure = [(t, c) for t, c in e.terms if atom_class(t) == (False, True)]
        rest = [t for t, c in e.terms if atom_class(t)[0]]
        parts = []
        if pure:
            parts.append(make_sum(pure, e.const if not isinstance(e.const, V.Inf) else 0))
        for t in rest:
            parts.extend(input_parts(t))
        return parts
    if isinstance(e, FlatOp) and e.op != "/":
        pure = [a for a in e.args if atom_class(a) == (False, True)]
        parts = []
        if pure:
            parts.append(make_op(e.op, pure) if len(pure) > 1 else pure[0])
        for a in e.args:
            if atom_class(a)[0]:
                parts.extend(input_parts(a))
        return parts
    parts = []
    for c in fchildren(e):
        parts.extend(input_parts(c))
    return parts


def state_parts(e):
    """Maximal pure-state subtrees (merged at AC nodes)."""
    has_s, has_i = atom_class(e)
    if not has_s:
        return []
    if not has_i:
        return [e]
    if isinstance(e, FlatSum):
        pure = [(t, c) for t, c in e.terms if atom_class(t) == (True, False)]
        parts = []
        if pure:
            parts.append(make_sum(pure))
        for t, _ in e.terms:
            if atom_class(t) == (True, True):
                parts.extend(state_parts(t))
        return parts
    if isinstance(e, FlatOp) and e.op != "/":
        pure = [a for a in e.args if atom_class(a) == (True, False)]
        parts = []
        if pure:
            parts.append(make_op(e.op, pure) if len(pure) > 1 else pure[0])
        for a in e.args:
            if atom_class(a) == (True, True):
                parts.extend(state_parts(a))
        return parts
    parts = []
    for c in fchildren(e):
        parts.extend(state_parts(c))
    return parts


def is_constant_normal(e):
    """Constant normal form: at most one (merged) input-only part; the
    remaining skeleton is state variables, operators, and constants."""
    return len(input_parts(e)) <= 1


# ---------------------------------------------------------------------------
# normal-form report

@dataclass
class Leaf:
    exp_s: Node | None
    exp_i: Node | None
    skeleton: Node

    def __repr__(self):
        return (
            f"Leaf(s={pretty(self.exp_s) if self.exp_s is not None else '-'}, "
            f"i={pretty(self.exp_i) if self.exp_i is not None else '-'})"
        )


@dataclass
class NormalFormReport:
    kind: str  # 'constant' | 'recursive' | 'none'
    vee: str | None
    spine_length: int
    leaves: list
    cost: tuple  # (size, c)

    def __repr__(self):
        return f"NormalFormReport({self.kind}, vee={self.vee}, cost={self.cost})"


S_MARK = Var("_s", STATE)
I_MARK = Var("_i", INPUT)


def _leaf_info(fe):
    ips = input_parts(fe)
    sps = state_parts(fe)
    exp_i = unflatten(ips[0]) if len(ips) == 1 else None
    exp_s = unflatten(sps[0]) if len(sps) == 1 else None
    skel = fe
    subs = {}
    if len(ips) == 1:
        subs[fkey(ips[0])] = I_MARK
    if len(sps) == 1:
        subs[fkey(sps[0])] = S_MARK
    skel = _subst_flat(skel, subs)
    return Leaf(exp_s, exp_i, unflatten(skel))


def _subst_flat(e, subs):
    k = fkey(e)
    if k in subs:
        return subs[k]
    kids = fchildren(e)
    if not kids:
        return e
    return frebuild(e, [_subst_flat(c, subs) for c in kids])


def spine_parts(fe, vee):
    if isinstance(fe, FlatOp) and fe.op == vee:
        return list(fe.args)
    if vee == "+" and isinstance(fe, FlatSum):
        parts = []
        for t, c in fe.terms:
            parts.extend([t] * abs(c) if c > 0 else [make_sum([(t, -1)])] * abs(c))
        if isinstance(fe.const, V.Inf) or fe.const != 0:
            parts.append(Const(fe.const))
        return parts
    return [fe]


def cost_under(fe, vee):
    """Cost relative to a spine operator: (size of non-normal material,
    count of constant-normal leaves)."""
    size = 0
    count = 0
    for part in spine_parts(fe, vee):
        if is_constant_normal(part):
            count += 1
        else:
            size += fsize(part)
    return (size, count)


_VEE_ORDER = ("max", "min", "+", "*", "&&", "||")


def vee_candidates(fe):
    """Spine-operator guesses: operators on the path from the root to
    the deepest state variable, closest to the root first; stable order
    for ties."""
    best_path = []
    best_depth = -1

    def descend(e, path, depth):
        nonlocal best_path, best_depth
        if isinstance(e, Var) and e.kind == STATE:
            if depth > best_depth:
                best_depth = depth
                best_path = list(path)
            return
        op = None
        if isinstance(e, FlatSum):
            op = "+"
        elif isinstance(e, FlatOp) and e.op != "/":
            op = e.op
        for c in fchildren(e):
            descend(c, path + ([op] if op else []), depth + 1)

    descend(fe, [], 0)
    seen = []
    for op in best_path:
        if op not in seen:
            seen.append(op)
    for op in _VEE_ORDER:
        if op not in seen and _op_present(fe, op):
            seen.append(op)
    return seen or ["max"]


def _op_present(fe, op):
    for n in fwalk(fe):
        if op == "+" and isinstance(n, FlatSum):
            return True
        if isinstance(n, FlatOp) and n.op == op:
            return True
    return False


def classify(e) -> NormalFormReport:
    """Detect the largest-spine recursive normal form of an expression."""
    fe = e if isinstance(e, _FLAT_KINDS) else flatten(e)
    best = None
    for vee in vee_candidates(fe):
        size, count = cost_under(fe, vee)
        key = (size, -count)
        if best is None or key < best[0]:
            best = (key, vee, size, count)
    _, vee, size, count = best
    if size == 0 and count >= 2:
        leaves = [_leaf_info(p) for p in spine_parts(fe, vee)]
        return NormalFormReport("recursive", vee, count - 1, leaves, (0, count))
    if is_constant_normal(fe):
        return NormalFormReport("constant", None, 0, [_leaf_info(fe)], (0, 1))
    return NormalFormReport("none", vee, 0, [], (size, count))


# ---------------------------------------------------------------------------
# rewrite rules

@dataclass
class RewriteRule:
    """One algebraic equality, applied modulo AC.

    lhs/rhs document a representative binary instance with metavariables
    (used by the soundness check); ``apply`` proposes rewrites of one
    flat node.
    """

    name: str
    lhs: Node
    rhs: Node
    side_conditions: str = ""

    def apply(self, fe):  # pragma: no cover - overridden per rule
        return []


def _meta(n, typ=INT):
    return Var(n, "meta")


class FactorCommon(RewriteRule):
    """max(A+B, A+C) -> A + max(B, C); likewise for min.  Applied n-ary:
    arguments sharing a common sum part are grouped and factored."""

    def __init__(self):
        A, B, C = _meta("A"), _meta("B"), _meta("C")
        super().__init__(
            "factor-common",
            Binary("max", Binary("+", A, B), Binary("+", A, C)),
            Binary("+", A, Binary("max", B, C)),
        )

    def apply(self, fe):
        if not (isinstance(fe, FlatOp) and fe.op in ("min", "max")):
            return []
        out = []
        args = fe.args
        sums = [dict(_sum_view(a)) for a in args]
        # group by identical pure-state multiset
        groups = {}
        for i, sv in enumerate(sums):
            skey = tuple(sorted(
                (fkey(t), c) for t, c in sv.items()
                if atom_class(t) == (True, False)
            ))
            groups.setdefault(skey, []).append(i)
        for skey, idxs in groups.items():
            if len(idxs) < 2 or not skey:
                continue
            common = {
                k: c for k, c in (
                    (t, sums[idxs[0]][t]) for t in sums[idxs[0]]
                    if atom_class(t) == (True, False)
                )
            }
            if all(all(sums[i].get(t, 0) == c for t, c in common.items())
                   for i in idxs):
                out.append(self._factored(fe, idxs, common))
        # pairwise maximal common part (any atoms)
        for i, j in itertools.combinations(range(len(args)), 2):
            common = {}
            for t, c in sums[i].items():
                cj = sums[j].get(t, 0)
                if c > 0 and cj > 0:
                    common[t] = min(c, cj)
                elif c < 0 and cj < 0:
                    common[t] = max(c, cj)
            if common:
                out.append(self._factored(fe, [i, j], common))
        return [o for o in out if o is not None]

    def _factored(self, fe, idxs, common):
        idxset = set(idxs)
        rests = []
        for i in idxs:
            sv = dict(_sum_view(fe.args[i]))
            const = _sum_const(fe.args[i])
            for t, c in common.items():
                sv[t] = sv.get(t, 0) - c
            rests.append(make_sum(list(sv.items()), const))
        inner = make_op(fe.op, rests)
        factored = make_sum(list(common.items()) + [(inner, 1)])
        others = [a for k, a in enumerate(fe.args) if k not in idxset]
        return make_op(fe.op, others + [factored]) if others else factored


def _sum_view(a):
    if isinstance(a, FlatSum):
        return list(a.terms)
    if isinstance(a, Const):
        return []
    return [(a, 1)]


def _sum_const(a):
    if isinstance(a, FlatSum):
        return a.const
    if isinstance(a, Const) and (V.is_int(a.value) or isinstance(a.value, V.Inf)):
        return a.value
    return 0


class DistributeSum(RewriteRule):
    """(x + max(a, b)) -> max(x+a, x+b); likewise min.  The reverse of
    factoring; phase two uses it to grow the spine."""

    def __init__(self):
        A, B, X = _meta("A"), _meta("B"), _meta("X")
        super().__init__(
            "distribute-sum",
            Binary("+", X, Binary("max", A, B)),
            Binary("max", Binary("+", X, A), Binary("+", X, B)),
        )

    def apply(self, fe):
        if not isinstance(fe, FlatSum):
            return []
        out = []
        for t, c in fe.terms:
            if isinstance(t, FlatOp) and t.op in ("min", "max") and abs(c) == 1:
                rest = [(u, cu) for u, cu in fe.terms if u is not t]
                op = t.op if c == 1 else ("min" if t.op == "max" else "max")
                branches = [
                    make_sum(rest + [(arg, c)], fe.const) for arg in t.args
                ]
                out.append(make_op(op, branches))
        return out


class SplitComparison(RewriteRule):
    """Comparisons against min/max split into conjunctions or
    disjunctions: (max(a,b) <= x) -> (a <= x) && (b <= x), etc."""

    def __init__(self):
        A, B, X = _meta("A"), _meta("B"), _meta("X")
        super().__init__(
            "split-comparison",
            Binary("<=", Binary("max", A, B), X),
            Binary("&&", Binary("<=", A, X), Binary("<=", B, X)),
        )

    def apply(self, fe):
        if not (isinstance(fe, FCmp) and fe.op in ("<", "<=")):
            return []
        out = []
        for side, other, combine_if_max in (
            (fe.left, fe.right, "&&"),
            (fe.right, fe.left, "||"),
        ):
            target = _top_minmax(side)
            if target is None:
                continue
            node, wrap = target
            op = node.op
            # left side max: all must satisfy; left side min: any
            if side is fe.left:
                combine = "&&" if op == "max" else "||"
                parts = [make_cmp(fe.op, wrap(a), fe.right) for a in node.args]
            else:
                combine = "&&" if op == "min" else "||"
                parts = [make_cmp(fe.op, fe.left, wrap(a)) for a in node.args]
            out.append(make_op(combine, parts))
        return out


def _top_minmax(side):
    """A min/max node at the top of a comparison side, optionally under
    a sum; returns (node, wrap) where wrap re-embeds an argument."""
    if isinstance(side, FlatOp) and side.op in ("min", "max"):
        return side, (lambda a: a)
    if isinstance(side, FlatSum):
        for t, c in side.terms:
            if isinstance(t, FlatOp) and t.op in ("min", "max") and abs(c) == 1:
                rest = [(u, cu) for u, cu in side.terms if u is not t]
                const = side.const
                if c == 1:
                    return t, (lambda a, rest=rest, const=const:
                               make_sum(rest + [(a, 1)], const))
                flipped = FlatOp("min" if t.op == "max" else "max", t.args)
                return flipped, (lambda a, rest=rest, const=const:
                                 make_sum(rest + [(a, -1)], const))
    return None


class MergeComparisons(RewriteRule):
    """(x <= a) && (x <= b) -> x <= min(a, b) and the dual groupings;
    pulls repeated state occurrences together."""

    def __init__(self):
        A, B, X = _meta("A"), _meta("B"), _meta("X")
        super().__init__(
            "merge-comparisons",
            Binary("&&", Binary("<=", X, A), Binary("<=", X, B)),
            Binary("<=", X, Binary("min", A, B)),
        )

    def apply(self, fe):
        if not (isinstance(fe, FlatOp) and fe.op in ("&&", "||")):
            return []
        out = []
        for cop in ("<", "<="):
            for side in ("left", "right"):
                groups = {}
                for i, a in enumerate(fe.args):
                    if isinstance(a, FCmp) and a.op == cop:
                        anchor = getattr(a, side)
                        groups.setdefault(fkey(anchor), []).append(i)
                for key, idxs in groups.items():
                    if len(idxs) < 2:
                        continue
                    cmps = [fe.args[i] for i in idxs]
                    anchor = getattr(cmps[0], side)
                    if side == "left":
                        # x <= a_i: && needs all -> min; || -> max
                        inner_op = "min" if fe.op == "&&" else "max"
                        inner = make_op(inner_op, [c.right for c in cmps])
                        merged = [make_cmp(cop, anchor, inner)]
                        # composite step: factor shared sum parts of the
                        # merged arms immediately, so the greedy search
                        # sees the payoff in one move
                        if isinstance(inner, FlatOp):
                            merged += [
                                make_cmp(cop, anchor, v)
                                for v in _FACTOR.apply(inner)
                            ]
                    else:
                        inner_op = "max" if fe.op == "&&" else "min"
                        inner = make_op(inner_op, [c.left for c in cmps])
                        merged = [make_cmp(cop, inner, anchor)]
                        if isinstance(inner, FlatOp):
                            merged += [
                                make_cmp(cop, v, anchor)
                                for v in _FACTOR.apply(inner)
                            ]
                    others = [a for k, a in enumerate(fe.args)
                              if k not in set(idxs)]
                    for m in merged:
                        out.append(make_op(fe.op, others + [m]))
        return out


class FactorTernary(RewriteRule):
    """(c ? A+B : A+C) -> A + (c ? B : C); shared sum parts of the two
    branches move out of the conditional."""

    def __init__(self):
        A, B, C, P = _meta("A"), _meta("B"), _meta("C"), _meta("P", BOOL)
        super().__init__(
            "factor-ternary",
            Ternary(P, Binary("+", A, B), Binary("+", A, C)),
            Binary("+", A, Ternary(P, B, C)),
        )

    def apply(self, fe):
        if not isinstance(fe, FTern):
            return []
        t_terms = dict(_sum_view(fe.if_true))
        f_terms = dict(_sum_view(fe.if_false))
        common = {}
        for t, c in t_terms.items():
            cf = f_terms.get(t, 0)
            if c > 0 and cf > 0:
                common[t] = min(c, cf)
            elif c < 0 and cf < 0:
                common[t] = max(c, cf)
        if not common:
            return []
        tt = dict(t_terms)
        ff = dict(f_terms)
        for t, c in common.items():
            tt[t] = tt.get(t, 0) - c
            ff[t] = ff.get(t, 0) - c
        new_t = make_sum(list(tt.items()), _sum_const(fe.if_true))
        new_f = make_sum(list(ff.items()), _sum_const(fe.if_false))
        inner = make_tern(fe.cond, new_t, new_f)
        return [make_sum(list(common.items()) + [(inner, 1)])]


class DistributeMul(RewriteRule):
    """a * (b + c) -> a*b + a*c."""

    def __init__(self):
        A, B, C = _meta("A"), _meta("B"), _meta("C")
        super().__init__(
            "distribute-mul",
            Binary("*", A, Binary("+", B, C)),
            Binary("+", Binary("*", A, B), Binary("*", A, C)),
        )

    def apply(self, fe):
        if not (isinstance(fe, FlatOp) and fe.op == "*"):
            return []
        out = []
        for i, a in enumerate(fe.args):
            if isinstance(a, FlatSum):
                others = [x for k, x in enumerate(fe.args) if k != i]
                terms = [
                    (make_op("*", others + [t]), c) for t, c in a.terms
                ]
                if isinstance(a.const, V.Inf) or a.const != 0:
                    terms.append((make_op("*", others + [Const(a.const)]), 1))
                out.append(make_sum(terms))
        return out


_FACTOR = FactorCommon()

RULESET = [
    _FACTOR,
    MergeComparisons(),
    SplitComparison(),
    DistributeSum(),
    FactorTernary(),
    DistributeMul(),
]


def distribute_normal(e):
    """Canonical min/max-of-sums shape: sums are pushed below min/max
    until no min/max node sits under a sum, and comparisons against
    min/max are split apart.  Used by recursion discovery so syntactic
    matching is stable across equivalent factored forms."""
    fe = e if isinstance(e, _FLAT_KINDS) else flatten(e)
    expanders = [DistributeSum(), SplitComparison()]
    for _ in range(300):
        target = None
        for path, node in _positions(fe):
            for rule in expanders:
                cands = rule.apply(node)
                if cands:
                    target = (path, cands[0])
                    break
            if target:
                break
        if target is None:
            return fe
        fe = _replace_at(fe, target[0], target[1])
    return fe


def rule_soundness_domain(rule):
    """Tiny value domains per metavariable of the rule templates.

    Domains are finite integers: infinities enter expressions only as
    fold identities (where make_op/make_sum fold them away), never as
    free operands of the patterns.
    """
    metas = sorted(
        {v.name for v in walk(rule.lhs) if isinstance(v, Var) and v.kind == "meta"}
    )
    doms = []
    for m in metas:
        if m == "P":
            doms.append([True, False])
        else:
            doms.append([-2, -1, 0, 1, 2])
    return metas, doms


def check_rule_soundness(rule):
    """Exhaustively evaluate lhs vs rhs of the rule template over tiny
    domains; both sides must agree (same value, or both in error)."""
    metas, doms = rule_soundness_domain(rule)
    for combo in itertools.product(*doms):
        env = dict(zip(metas, combo))
        res = []
        for side in (rule.lhs, rule.rhs):
            try:
                res.append(("ok", eval_expr(side, env)))
            except EvalError:
                res.append(("err", None))
        (ka, va), (kb, vb) = res
        if ka != kb:
            return False
        if ka == "ok" and not V.values_equal(va, vb):
            return False
    return True


# ---------------------------------------------------------------------------
# rewrite search

def _positions(fe):
    """All subterm positions as (path, node); path is a tuple of child
    indexes."""
    out = [((), fe)]
    for i, c in enumerate(fchildren(fe)):
        for path, n in _positions(c):
            out.append(((i,) + path, n))
    return out


def _replace_at(fe, path, new):
    if not path:
        return new
    kids = list(fchildren(fe))
    kids[path[0]] = _replace_at(kids[path[0]], path[1:], new)
    return frebuild(fe, kids)


def _single_rewrites(fe, rules, node_limit):
    """All one-step rewrites of fe, deduplicated, with rule names."""
    out = []
    seen = set()
    for path, node in _positions(fe):
        for rule in rules:
            for replacement in rule.apply(node):
                try:
                    new = _replace_at(fe, path, replacement)
                except EvalError:
                    continue
                k = fkey(new)
                if k in seen or k == fkey(fe):
                    continue
                if fsize(new) > node_limit:
                    continue
                seen.add(k)
                out.append((rule.name, new))
    return out


def phase1_cost(fe):
    """(state occurrences, total depth of state occurrences)."""
    occ = 0
    depth_sum = 0

    def descend(e, d):
        nonlocal occ, depth_sum
        if isinstance(e, Var) and e.kind == STATE:
            occ += 1
            depth_sum += d
            return
        for c in fchildren(e):
            descend(c, d + 1)

    descend(fe, 0)
    return (occ, depth_sum)


@dataclass
class Trace:
    steps: list = field(default_factory=list)

    def add(self, phase, rule, before, after):
        self.steps.append((phase, rule, before, after))

    def lines(self):
        out = []
        for phase, rule, before, after in self.steps:
            out.append(f"[{phase}] {rule}: {before} -> {after}")
        return out


def normalize(e, budget: Budget | None = None, trace: Trace | None = None):
    """Two-phase cost-guided rewrite of an unfolding.

    Returns (expression, NormalFormReport).  Raises
    NormalizationFailure when no recursive normal form is reached
    within the budget.
    """
    budget = budget or Budget()
    trace = trace if trace is not None else Trace()
    fe = flatten(e)
    attempts = 0

    # phase 1: drive state variables up and together
    seen = {fkey(fe)}
    while True:
        cost = phase1_cost(fe)
        candidates = _single_rewrites(fe, RULESET, budget.node_limit)
        attempts += len(candidates)
        if attempts > budget.rewrite_limit:
            break
        best = None
        for rule, cand in candidates:
            ck = fkey(cand)
            if ck in seen:
                continue
            c = phase1_cost(cand)
            if c < cost and (best is None or c < best[0]):
                best = (c, rule, cand)
        if best is None:
            break
        _, rule, fe = best[0], best[1], best[2]
        seen.add(fkey(fe))
        trace.add(1, rule, cost, best[0])

    if is_constant_normal(fe):
        report = classify(fe)
        return unflatten(fe), report

    # phase 2: fix a spine operator and chase cost (size, c)
    for vee in vee_candidates(fe):
        result = _phase2(fe, vee, budget, trace, attempts)
        if result is not None:
            out, report = result
            return unflatten(out), report

    report = classify(fe)
    raise NormalizationFailure(
        f"no recursive normal form within budget (best cost {report.cost})",
        best=unflatten(fe), trace=trace.lines(),
    )


def _phase2(fe, vee, budget, trace, attempts):
    seen = {fkey(fe)}
    current = fe
    while True:
        size, count = cost_under(current, vee)
        if size == 0:
            return current, classify(current)
        candidates = _single_rewrites(current, RULESET, budget.node_limit)
        attempts += len(candidates)
        if attempts > budget.rewrite_limit:
            return None
        best_shrink = None
        best_grow = None
        for rule, cand in candidates:
            if fkey(cand) in seen:
                continue
            csize, ccount = cost_under(cand, vee)
            if csize < size and (best_shrink is None or csize < best_shrink[0]):
                best_shrink = (csize, ccount, rule, cand)
            elif csize == size and ccount > count and (
                best_grow is None or ccount > best_grow[1]
            ):
                best_grow = (csize, ccount, rule, cand)
        chosen = best_shrink or best_grow
        if chosen is None:
            return None
        csize, ccount, rule, current = chosen
        seen.add(fkey(current))
        trace.add(2, f"{rule} (vee={vee})", (size, count), (csize, ccount))


# ---------------------------------------------------------------------------
# semantic equality oracle for rewrites

def _scalar_leaves(e):
    """Leaf value slots of an unfolding: plain variables plus whole
    subscript/field chains (a1[0], a2.rec[1], rec[0]), keyed by their
    printed form."""
    from .expr import children as children_of

    leaves = {}

    def root_of(n):
        while isinstance(n, (Subscript, Field)):
            n = n.base
        return n if isinstance(n, Var) else None

    def visit(n):
        if isinstance(n, Var) and n.kind in (STATE, INPUT):
            leaves[pretty(n)] = (n, n.kind)
            return
        if isinstance(n, (Subscript, Field)):
            root = root_of(n)
            if root is not None and all(
                isinstance(x, (Var, Const, Subscript, Field)) for x in walk(n)
            ):
                leaves[pretty(n)] = (n, root.kind)
                return
        for c in children_of(n):
            visit(c)

    visit(e)
    return leaves


def equivalent_exprs(e1, e2, seed=0, samples=300):
    """Bounded semantic equality of two unfoldings: exhaustive over tiny
    scalar domains when few leaves, sampled otherwise; errors must
    agree."""
    leaves = {}
    leaves.update(_scalar_leaves(e1))
    leaves.update(_scalar_leaves(e2))
    names = sorted(leaves)
    state_dom = [-2, -1, 0, 1, 2]
    input_dom = [-2, -1, 0, 1, 2]

    def domain(name):
        node, kind = leaves[name]
        return state_dom if kind == STATE else input_dom

    def check(assignment):
        subs = {}
        for name, val in assignment.items():
            node, _ = leaves[name]
            subs[node] = Const(val)
        from .expr import subst_exprs

        res = []
        for e in (e1, e2):
            try:
                res.append(("ok", eval_expr(subst_exprs(e, subs), {})))
            except EvalError:
                res.append(("err", None))
        (ka, va), (kb, vb) = res
        if ka != kb:
            return False
        return ka == "err" or V.values_equal(va, vb)

    if len(names) <= 4:
        doms = [domain(n) for n in names]
        for combo in itertools.product(*doms):
            if not check(dict(zip(names, combo))):
                return False
        return True
    rng = random.Random(seed)
    for _ in range(samples):
        assignment = {n: rng.choice(domain(n)) for n in names}
        if not check(assignment):
            return False
    return True


# ---------------------------------------------------------------------------
# symbolic unfolding

def unfold(form: FuncForm, k: int, inst: dict, budget: Budget | None = None,
           from_identity=False):
    """Symbolic state after consuming elements a_1..a_k.

    ``inst`` binds every ambient integer input (and thus all loop
    bounds and sequence-state lengths) to a small concrete value and
    ambient sequences to concrete lengths.  Returns a dict: state name
    -> expression or list of per-cell expressions.

    With ``from_identity`` the fold starts from the declared initial
    state rather than from symbolic state variables.
    """
    budget = budget or Budget()
    env = {}
    const_env = {n: v for n, v in inst.items() if isinstance(v, int)}
    for s in form.states:
        if isinstance(s.typ, SeqType):
            length = eval_expr(s.length, const_env)
            if from_identity:
                init_cells = eval_expr(s.init, const_env)
                env[s.name] = [Const(v) for v in init_cells]
            else:
                env[s.name] = [
                    Subscript(Var(s.name, STATE), Const(j)) for j in range(length)
                ]
        else:
            if from_identity:
                env[s.name] = Const(eval_expr(s.init, const_env))
            else:
                env[s.name] = Var(s.name, STATE)
    for n, v in inst.items():
        if isinstance(v, int):
            env[n] = Const(v)
        else:
            env[n] = v  # symbolic ambient sequence: list of cell exprs

    for t in range(1, k + 1):
        env[ELEM] = elem_symbol(form, t, inst)
        env[form.index] = Const(t - 1)
        _sym_system(form.body, env, budget)
    out = {}
    for s in form.states:
        out[s.name] = env[s.name]
    return out


def elem_symbol(form: FuncForm, t: int, inst: dict):
    """Symbolic t-th element: a record of fields for summarized forms,
    a scalar symbol or cell-symbol list otherwise."""
    base = Var(f"a{t}", INPUT)
    if form.elem_fields is not None:
        rec = {}
        const_env = {n: v for n, v in inst.items() if isinstance(v, int)}
        for f in form.elem_fields:
            if isinstance(f.typ, SeqType):
                length = eval_expr(f.length, const_env)
                rec[f.name] = [
                    Subscript(Field(base, f.name), Const(j)) for j in range(length)
                ]
            else:
                rec[f.name] = Field(base, f.name)
        return rec
    if isinstance(form.elem_type, SeqType):
        length = inst.get("_elem_len")
        if length is None:
            raise UnfoldError("sequence elements need _elem_len in inst")
        return [Subscript(base, Const(j)) for j in range(length)]
    return base


def _sym_system(system, env, budget):
    for eq in system.eqs:
        if isinstance(eq, SimpleEq):
            val = _sym_eval(eq.rhs, env, budget)
            if eq.subs:
                idxs = [_concrete_int(_sym_eval(s, env, budget)) for s in eq.subs]
                target = env[eq.lhs]
                for d, idx in enumerate(idxs):
                    if not isinstance(target, list) or not 0 <= idx < len(target):
                        raise UnfoldError(
                            f"symbolic subscript out of range on {eq.lhs}")
                    if d == len(idxs) - 1:
                        target[idx] = val
                    else:
                        target = target[idx]
            else:
                env[eq.lhs] = val
        else:
            lo = _concrete_int(_sym_eval(eq.lo, env, budget))
            hi = _concrete_int(_sym_eval(eq.hi, env, budget))
            for i in range(lo, hi):
                env[eq.index] = Const(i)
                _sym_system(eq.body, env, budget)


def _concrete_int(e):
    if isinstance(e, Const) and V.is_int(e.value):
        return e.value
    raise UnfoldError(f"bound or index did not reduce to a constant: {e!r}")


def _sym_eval(e, env, budget):
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        v = env.get(e.name)
        if v is None:
            return e
        if isinstance(v, int):
            return Const(v)
        return v
    if isinstance(e, Field):
        base = _sym_eval(e.base, env, budget)
        if isinstance(base, dict):
            return base[e.name]
        return Field(base, e.name)
    if isinstance(e, Subscript):
        base = _sym_eval(e.base, env, budget)
        idx = _sym_eval(e.index, env, budget)
        if isinstance(base, (list, dict)):
            i = _concrete_int(idx)
            if isinstance(base, dict):
                raise UnfoldError("field access expected on record element")
            if not 0 <= i < len(base):
                raise UnfoldError("symbolic subscript out of bounds")
            return base[i]
        return Subscript(base, idx)
    if isinstance(e, Len):
        base = _sym_eval(e.base, env, budget)
        if isinstance(base, list):
            return Const(len(base))
        return Len(base)
    if isinstance(e, Fill):
        n = _concrete_int(_sym_eval(e.length, env, budget))
        v = _sym_eval(e.value, env, budget)
        return [v for _ in range(n)]
    if isinstance(e, Unary):
        return _finish(Unary(e.op, _as_expr(_sym_eval(e.operand, env, budget))), budget)
    if isinstance(e, Binary):
        l = _as_expr(_sym_eval(e.left, env, budget))
        r = _as_expr(_sym_eval(e.right, env, budget))
        return _finish(Binary(e.op, l, r), budget)
    if isinstance(e, Ternary):
        c = _as_expr(_sym_eval(e.cond, env, budget))
        t = _as_expr(_sym_eval(e.if_true, env, budget))
        f = _as_expr(_sym_eval(e.if_false, env, budget))
        return _finish(Ternary(c, t, f), budget)
    if isinstance(e, BigOp):
        lo = _concrete_int(_sym_eval(e.lo, env, budget))
        hi = _concrete_int(_sym_eval(e.hi, env, budget))
        acc = None
        op = {"sum": "+", "max": "max", "min": "min"}[e.op]
        for i in range(lo, hi):
            env2 = dict(env)
            env2[e.index] = Const(i)
            v = _as_expr(_sym_eval(e.body, env2, budget))
            acc = v if acc is None else Binary(op, acc, v)
        if acc is None:
            acc = Const({"sum": 0, "max": V.NEG_INF, "min": V.POS_INF}[e.op])
        return _finish(acc, budget)
    raise UnfoldError(f"cannot unfold {e!r}")


def _as_expr(v):
    if isinstance(v, list):
        raise UnfoldError("whole-sequence value in a scalar position")
    if isinstance(v, dict):
        raise UnfoldError("whole-record value in a scalar position")
    return v


def _finish(e, budget):
    e = simplify(e)
    budget.check_nodes(_quick_size(e))
    return e


def _quick_size(e, limit=60_000):
    n = 0
    stack = [e]
    while stack and n <= limit:
        cur = stack.pop()
        n += 1
        from .expr import children as _ch

        stack.extend(_ch(cur))
    return n
