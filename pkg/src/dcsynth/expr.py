"""Symbolic expression trees.

One expression type serves the whole system: right-hand sides of
recurrence equations, unfoldings over symbolic inputs, rewrite-search
terms, hole-bearing sketch bodies, and join bodies.  Expressions are
immutable and hashable; evaluation happens against an environment of
concrete values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import values as V
from .values import BOOL, INT, EvalError, Inf, SeqType

# variable namespaces
STATE = "state"
INPUT = "input"
INDEX = "index"

NUMERIC_BINOPS = ("+", "-", "*", "/", "min", "max")
COMPARE_OPS = ("<", "<=", ">", ">=", "==", "!=")
BOOL_BINOPS = ("&&", "||")
AC_OPS = ("+", "*", "min", "max", "&&", "||")


class Node:
    __slots__ = ()

    def __add__(self, other):
        return Binary("+", self, wrap(other))

    def __sub__(self, other):
        return Binary("-", self, wrap(other))


def wrap(v):
    return v if isinstance(v, Node) else Const(v)


def _frozen(cls):
    return dataclass(frozen=True, eq=False, repr=False)(cls)


class _HashMixin:
    __slots__ = ()

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or hash(self) != hash(other):
            return False
        return self._key() == other._key()

    def __hash__(self):
        return self._h

    def __repr__(self):
        return pretty(self)


@_frozen
class Const(Node, _HashMixin):
    value: object
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Const", _const_key(self.value))))

    def _key(self):
        return ("Const", _const_key(self.value))


def _const_key(v):
    if isinstance(v, Inf):
        return ("inf", v.sign)
    if isinstance(v, bool):
        return ("bool", v)
    return ("int", v)


@_frozen
class Var(Node, _HashMixin):
    name: str
    kind: str

    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Var", self.name, self.kind)))

    def _key(self):
        return ("Var", self.name, self.kind)


@_frozen
class Field(Node, _HashMixin):
    base: Node
    name: str
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Field", self.base, self.name)))

    def _key(self):
        return ("Field", self.base, self.name)


@_frozen
class Subscript(Node, _HashMixin):
    base: Node
    index: Node
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Sub", self.base, self.index)))

    def _key(self):
        return ("Sub", self.base, self.index)


@_frozen
class Unary(Node, _HashMixin):
    op: str  # '-' | '!'
    operand: Node
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Un", self.op, self.operand)))

    def _key(self):
        return ("Un", self.op, self.operand)


@_frozen
class Binary(Node, _HashMixin):
    op: str
    left: Node
    right: Node
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Bin", self.op, self.left, self.right)))

    def _key(self):
        return ("Bin", self.op, self.left, self.right)


@_frozen
class Ternary(Node, _HashMixin):
    cond: Node
    if_true: Node
    if_false: Node
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_h", hash(("Tern", self.cond, self.if_true, self.if_false))
        )

    def _key(self):
        return ("Tern", self.cond, self.if_true, self.if_false)


@_frozen
class BigOp(Node, _HashMixin):
    """Reduction over a symbolic index range: sum/max/min of body for
    index in lo..hi (hi exclusive)."""

    op: str  # 'sum' | 'max' | 'min'
    index: str
    lo: Node
    hi: Node
    body: Node
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_h", hash(("Big", self.op, self.index, self.lo, self.hi, self.body))
        )

    def _key(self):
        return ("Big", self.op, self.index, self.lo, self.hi, self.body)


@_frozen
class Fill(Node, _HashMixin):
    """A sequence of `length` copies of `value`."""

    length: Node
    value: Node
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Fill", self.length, self.value)))

    def _key(self):
        return ("Fill", self.length, self.value)


@_frozen
class Len(Node, _HashMixin):
    base: Node
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Len", self.base)))

    def _key(self):
        return ("Len", self.base)


@_frozen
class Hole(Node, _HashMixin):
    """A typed sketch hole; never evaluable."""

    hid: int
    hkind: str  # 'R' | 'LR' | 'Rec'
    htype: object  # ScalarType or SeqType
    _h: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "_h", hash(("Hole", self.hid, self.hkind)))

    def _key(self):
        return ("Hole", self.hid, self.hkind)


TRUE = Const(True)
FALSE = Const(False)
ZERO = Const(0)
ONE = Const(1)


def children(e):
    if isinstance(e, (Const, Var, Hole)):
        return ()
    if isinstance(e, Field):
        return (e.base,)
    if isinstance(e, Subscript):
        return (e.base, e.index)
    if isinstance(e, Unary):
        return (e.operand,)
    if isinstance(e, Binary):
        return (e.left, e.right)
    if isinstance(e, Ternary):
        return (e.cond, e.if_true, e.if_false)
    if isinstance(e, BigOp):
        return (e.lo, e.hi, e.body)
    if isinstance(e, Fill):
        return (e.length, e.value)
    if isinstance(e, Len):
        return (e.base,)
    raise TypeError(f"not an expression: {e!r}")


def rebuild(e, kids):
    if isinstance(e, (Const, Var, Hole)):
        return e
    if isinstance(e, Field):
        return Field(kids[0], e.name)
    if isinstance(e, Subscript):
        return Subscript(kids[0], kids[1])
    if isinstance(e, Unary):
        return Unary(e.op, kids[0])
    if isinstance(e, Binary):
        return Binary(e.op, kids[0], kids[1])
    if isinstance(e, Ternary):
        return Ternary(kids[0], kids[1], kids[2])
    if isinstance(e, BigOp):
        return BigOp(e.op, e.index, kids[0], kids[1], kids[2])
    if isinstance(e, Fill):
        return Fill(kids[0], kids[1])
    if isinstance(e, Len):
        return Len(kids[0])
    raise TypeError(f"not an expression: {e!r}")


def walk(e):
    yield e
    for c in children(e):
        yield from walk(c)


def size(e):
    return 1 + sum(size(c) for c in children(e))


def vars_in(e, kind=None):
    out = []
    for n in walk(e):
        if isinstance(n, Var) and (kind is None or n.kind == kind):
            out.append(n)
    return out


def var_names(e, kind=None):
    return {v.name for v in vars_in(e, kind)}


def subst_vars(e, mapping):
    """Replace Var nodes by name (kind-agnostic mapping name -> expr)."""
    if isinstance(e, Var) and e.name in mapping:
        return mapping[e.name]
    kids = children(e)
    if not kids:
        return e
    new = tuple(subst_vars(c, mapping) for c in kids)
    if all(a is b for a, b in zip(new, kids)):
        return e
    return rebuild(e, new)


def subst_exprs(e, mapping):
    """Replace whole subtrees (expression -> expression, exact match)."""
    if e in mapping:
        return mapping[e]
    kids = children(e)
    if not kids:
        return e
    new = tuple(subst_exprs(c, mapping) for c in kids)
    if all(a is b for a, b in zip(new, kids)):
        return e
    return rebuild(e, new)


# ---------------------------------------------------------------------------
# evaluation

_BIN_FUNCS = {
    "+": V.add,
    "-": V.sub,
    "*": V.mul,
    "/": V.div,
    "min": V.vmin,
    "max": V.vmax,
}

_CMP_FUNCS = {
    "<": lambda c: c < 0,
    "<=": lambda c: c <= 0,
    ">": lambda c: c > 0,
    ">=": lambda c: c >= 0,
}


def eval_expr(e, env):
    """Evaluate against env: a mapping from variable name to value.

    Index variables live in the same namespace (callers bind them while
    iterating).  Element states are dicts, read through Field nodes.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise EvalError(f"unbound variable '{e.name}'") from None
    if isinstance(e, Field):
        base = eval_expr(e.base, env)
        if not isinstance(base, dict):
            raise EvalError(f"field access '.{e.name}' on non-record value")
        try:
            return base[e.name]
        except KeyError:
            raise EvalError(f"record has no field '{e.name}'") from None
    if isinstance(e, Subscript):
        base = eval_expr(e.base, env)
        idx = eval_expr(e.index, env)
        if not isinstance(base, list):
            raise EvalError("subscript of a non-sequence value")
        if not V.is_int(idx):
            raise EvalError("subscript index is not an integer")
        if idx < 0 or idx >= len(base):
            raise EvalError(f"subscript out of bounds: index {idx}, length {len(base)}")
        return base[idx]
    if isinstance(e, Unary):
        v = eval_expr(e.operand, env)
        if e.op == "-":
            return V.neg(v)
        if e.op == "!":
            if not isinstance(v, bool):
                raise EvalError("'!' needs a boolean operand")
            return not v
        raise EvalError(f"unknown unary operator {e.op}")
    if isinstance(e, Binary):
        op = e.op
        if op in ("&&", "||"):
            lv = eval_expr(e.left, env)
            if not isinstance(lv, bool):
                raise EvalError(f"'{op}' needs boolean operands")
            # no short-circuit: both sides must be well-defined, so a
            # rewrite cannot turn an erroring expression into a quiet one
            rv = eval_expr(e.right, env)
            if not isinstance(rv, bool):
                raise EvalError(f"'{op}' needs boolean operands")
            return (lv and rv) if op == "&&" else (lv or rv)
        lv = eval_expr(e.left, env)
        rv = eval_expr(e.right, env)
        if op in _BIN_FUNCS:
            return _BIN_FUNCS[op](lv, rv)
        if op in ("==", "!="):
            eq = V.values_equal(lv, rv)
            return eq if op == "==" else not eq
        if op in _CMP_FUNCS:
            return _CMP_FUNCS[op](V.compare(lv, rv))
        raise EvalError(f"unknown operator {op}")
    if isinstance(e, Ternary):
        c = eval_expr(e.cond, env)
        if not isinstance(c, bool):
            raise EvalError("ternary condition is not a boolean")
        return eval_expr(e.if_true if c else e.if_false, env)
    if isinstance(e, BigOp):
        lo = eval_expr(e.lo, env)
        hi = eval_expr(e.hi, env)
        if not (V.is_int(lo) and V.is_int(hi)):
            raise EvalError("BigOp bounds must be integers")
        acc = {"sum": 0, "max": V.NEG_INF, "min": V.POS_INF}[e.op]
        fn = {"sum": V.add, "max": V.vmax, "min": V.vmin}[e.op]
        inner = dict(env)
        for i in range(lo, hi):
            inner[e.index] = i
            acc = fn(acc, eval_expr(e.body, inner))
        return acc
    if isinstance(e, Fill):
        n = eval_expr(e.length, env)
        if not V.is_int(n) or n < 0:
            raise EvalError("fill length must be a nonnegative integer")
        v = eval_expr(e.value, env)
        return [V.copy_value(v) for _ in range(n)]
    if isinstance(e, Len):
        v = eval_expr(e.base, env)
        if not isinstance(v, list):
            raise EvalError("len of a non-sequence value")
        return len(v)
    if isinstance(e, Hole):
        raise EvalError("cannot evaluate a sketch hole")
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# typing

def infer_type(e, env):
    """Best-effort type of an expression; env maps var name -> type.
    Returns None when undetermined."""
    if isinstance(e, Const):
        if isinstance(e.value, bool):
            return BOOL
        return INT
    if isinstance(e, Var):
        if e.kind == INDEX:
            return INT
        return env.get(e.name)
    if isinstance(e, Field):
        fenv = env.get(("fields", _root_name(e.base)))
        if isinstance(fenv, dict):
            return fenv.get(e.name)
        return None
    if isinstance(e, Subscript):
        t = infer_type(e.base, env)
        return t.elem if isinstance(t, SeqType) else None
    if isinstance(e, Unary):
        return BOOL if e.op == "!" else INT
    if isinstance(e, Binary):
        if e.op in COMPARE_OPS or e.op in BOOL_BINOPS:
            return BOOL
        return infer_type(e.left, env) or infer_type(e.right, env)
    if isinstance(e, Ternary):
        return infer_type(e.if_true, env) or infer_type(e.if_false, env)
    if isinstance(e, BigOp):
        return INT
    if isinstance(e, Fill):
        return SeqType(infer_type(e.value, env) or INT)
    if isinstance(e, Len):
        return INT
    if isinstance(e, Hole):
        return e.htype
    return None


def _root_name(e):
    while isinstance(e, (Subscript, Field)):
        e = e.base
    return e.name if isinstance(e, Var) else None


# ---------------------------------------------------------------------------
# constant folding / light simplification

def _is_const(e, v=None):
    return isinstance(e, Const) and (v is None or e.value == v)


def simplify(e):
    kids = tuple(simplify(c) for c in children(e))
    if kids:
        e = rebuild(e, kids)

    if isinstance(e, Unary):
        a = e.operand
        if e.op == "-" and isinstance(a, Const):
            try:
                return Const(V.neg(a.value))
            except EvalError:
                return e
        if e.op == "-" and isinstance(a, Unary) and a.op == "-":
            return a.operand
        if e.op == "!" and isinstance(a, Const) and isinstance(a.value, bool):
            return Const(not a.value)
        if e.op == "!" and isinstance(a, Unary) and a.op == "!":
            return a.operand
        return e

    if isinstance(e, Binary):
        l, r = e.left, e.right
        op = e.op
        if isinstance(l, Const) and isinstance(r, Const):
            try:
                return Const(eval_expr(e, {}))
            except EvalError:
                return e
        if op == "+":
            if _is_const(l, 0):
                return r
            if _is_const(r, 0):
                return l
        if op == "-" and _is_const(r, 0):
            return l
        if op == "*":
            if _is_const(l, 1):
                return r
            if _is_const(r, 1):
                return l
        if op == "max":
            if _is_const(l, V.NEG_INF):
                return r
            if _is_const(r, V.NEG_INF):
                return l
            if l == r:
                return l
        if op == "min":
            if _is_const(l, V.POS_INF):
                return r
            if _is_const(r, V.POS_INF):
                return l
            if l == r:
                return l
        if op == "&&":
            if _is_const(l, True):
                return r
            if _is_const(r, True):
                return l
            if _is_const(l, False) or _is_const(r, False):
                return FALSE
        if op == "||":
            if _is_const(l, False):
                return r
            if _is_const(r, False):
                return l
            if _is_const(l, True) or _is_const(r, True):
                return TRUE
        if op in (">=", "<=") and l == r:
            return TRUE
        if op == ">=" and (_is_const(r, V.NEG_INF) or _is_const(l, V.POS_INF)):
            return TRUE
        if op == "<=" and (_is_const(l, V.NEG_INF) or _is_const(r, V.POS_INF)):
            return TRUE
        if op == ">" and (_is_const(r, V.POS_INF) or _is_const(l, V.NEG_INF)):
            return FALSE
        if op == "<" and (_is_const(l, V.POS_INF) or _is_const(r, V.NEG_INF)):
            return FALSE
        return e

    if isinstance(e, Ternary):
        if _is_const(e.cond, True):
            return e.if_true
        if _is_const(e.cond, False):
            return e.if_false
        if e.if_true == e.if_false:
            return e.if_true
        return e

    return e


# ---------------------------------------------------------------------------
# AC-canonical keys (equality up to associativity/commutativity of
# +, *, min, max, &&, || plus a - b == a + (-b))

_CMP_MIRROR = {">": "<", ">=": "<="}


def ac_key(e):
    if isinstance(e, Const):
        return ("c", _const_key(e.value))
    if isinstance(e, Var):
        return ("v", e.name, e.kind)
    if isinstance(e, Field):
        return ("f", ac_key(e.base), e.name)
    if isinstance(e, Subscript):
        return ("s", ac_key(e.base), ac_key(e.index))
    if isinstance(e, Unary):
        if e.op == "-":
            return _ac_sum_key([(e.operand, -1)])
        return ("u", e.op, ac_key(e.operand))
    if isinstance(e, Binary):
        op = e.op
        if op in ("+", "-"):
            return _ac_sum_key(_sum_terms(e))
        if op in ("*", "min", "max", "&&", "||"):
            parts = sorted(ac_key(t) for t in _flat_terms(e, op))
            return ("ac", op, tuple(parts))
        if op in ("==", "!="):
            a, b = sorted((ac_key(e.left), ac_key(e.right)))
            return ("cmp", op, a, b)
        if op in _CMP_MIRROR:
            return ("cmp", _CMP_MIRROR[op], ac_key(e.right), ac_key(e.left))
        return ("cmp", op, ac_key(e.left), ac_key(e.right))
    if isinstance(e, Ternary):
        return ("t", ac_key(e.cond), ac_key(e.if_true), ac_key(e.if_false))
    if isinstance(e, BigOp):
        return ("b", e.op, e.index, ac_key(e.lo), ac_key(e.hi), ac_key(e.body))
    if isinstance(e, Fill):
        return ("fill", ac_key(e.length), ac_key(e.value))
    if isinstance(e, Len):
        return ("len", ac_key(e.base))
    if isinstance(e, Hole):
        return ("h", e.hid)
    raise TypeError(f"not an expression: {e!r}")


def _flat_terms(e, op):
    if isinstance(e, Binary) and e.op == op:
        return _flat_terms(e.left, op) + _flat_terms(e.right, op)
    return [e]


def _sum_terms(e, sign=1):
    """Flatten +/- (and unary -) into a list of (term, sign)."""
    if isinstance(e, Binary) and e.op == "+":
        return _sum_terms(e.left, sign) + _sum_terms(e.right, sign)
    if isinstance(e, Binary) and e.op == "-":
        return _sum_terms(e.left, sign) + _sum_terms(e.right, -sign)
    if isinstance(e, Unary) and e.op == "-":
        return _sum_terms(e.operand, -sign)
    return [(e, sign)]


def _ac_sum_key(terms):
    const_total = 0
    parts = []
    for t, sign in terms:
        if isinstance(t, Const) and V.is_int(t.value):
            const_total += sign * t.value
        else:
            parts.append((ac_key(t), sign))
    parts.sort()
    if const_total != 0 or not parts:
        parts.append((("c", ("int", const_total)), 1))
    if len(parts) == 1 and parts[0][1] == 1:
        return parts[0][0]
    return ("ac", "+", tuple(parts))


def ac_equal(a, b):
    return ac_key(a) == ac_key(b)


# ---------------------------------------------------------------------------
# pretty-printing in the source-language expression syntax

_PREC = {
    "?:": 1,
    "||": 2,
    "&&": 3,
    "==": 4,
    "!=": 4,
    "<": 5,
    "<=": 5,
    ">": 5,
    ">=": 5,
    "+": 6,
    "-": 6,
    "*": 7,
    "/": 7,
}


def pretty(e, prec=0):
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, Inf):
            return "inf" if v.sign > 0 else "-inf"
        if v < 0 and prec > 6:
            return f"({v})"
        return str(v)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Field):
        return f"{pretty(e.base, 10)}.{e.name}"
    if isinstance(e, Subscript):
        return f"{pretty(e.base, 10)}[{pretty(e.index)}]"
    if isinstance(e, Unary):
        inner = pretty(e.operand, 9)
        return f"{e.op}{inner}"
    if isinstance(e, Binary):
        if e.op in ("min", "max"):
            return f"{e.op}({pretty(e.left)}, {pretty(e.right)})"
        p = _PREC[e.op]
        s = f"{pretty(e.left, p)} {e.op} {pretty(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(e, Ternary):
        s = f"{pretty(e.cond, 2)} ? {pretty(e.if_true)} : {pretty(e.if_false)}"
        return f"({s})" if prec > 1 else s
    if isinstance(e, BigOp):
        word = {"sum": "sum", "max": "bigmax", "min": "bigmin"}[e.op]
        return (
            f"{word}({e.index} in {pretty(e.lo)}..{pretty(e.hi)}, {pretty(e.body)})"
        )
    if isinstance(e, Fill):
        return f"fill({pretty(e.length)}, {pretty(e.value)})"
    if isinstance(e, Len):
        return f"len({pretty(e.base)})"
    if isinstance(e, Hole):
        return f"??{e.hkind}_{e.hid}"
    raise TypeError(f"not an expression: {e!r}")
