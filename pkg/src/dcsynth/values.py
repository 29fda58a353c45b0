"""Runtime values: exact integers, booleans, nested sequences, and the
two infinities used as identities of min/max folds.

Integers are plain Python ints (arbitrary precision), sequences are
lists.  Addition involving an infinity absorbs (max-plus / min-plus
style): ``x + NEG_INF == NEG_INF`` for finite x.  Mixing the two
infinities in one addition is an evaluation error, as is any
multiplication or division by an infinity.
"""

from __future__ import annotations


class EvalError(Exception):
    """Raised for out-of-bounds subscripts, bad infinity arithmetic,
    division by zero, shape mismatches."""


class Inf:
    __slots__ = ("sign",)

    def __init__(self, sign):
        self.sign = sign  # +1 or -1

    def __repr__(self):
        return "+inf" if self.sign > 0 else "-inf"

    def __eq__(self, other):
        return isinstance(other, Inf) and other.sign == self.sign

    def __hash__(self):
        return hash(("Inf", self.sign))


POS_INF = Inf(+1)
NEG_INF = Inf(-1)


def is_int(v):
    # bool is a subclass of int; keep the domains apart.
    return isinstance(v, int) and not isinstance(v, bool)


def is_numeric(v):
    return is_int(v) or isinstance(v, Inf)


def type_name(v):
    if isinstance(v, bool):
        return "bool"
    if is_int(v):
        return "int"
    if isinstance(v, Inf):
        return "int"
    if isinstance(v, list):
        return "seq"
    return type(v).__name__


def _require_numeric(v, op):
    if not is_numeric(v):
        raise EvalError(f"operator '{op}' needs a numeric operand, got {type_name(v)}")


def add(a, b):
    _require_numeric(a, "+")
    _require_numeric(b, "+")
    if isinstance(a, Inf) or isinstance(b, Inf):
        signs = {v.sign for v in (a, b) if isinstance(v, Inf)}
        if len(signs) == 2:
            raise EvalError("cannot add +inf and -inf")
        return POS_INF if signs == {1} else NEG_INF
    return a + b


def neg(a):
    _require_numeric(a, "-")
    if isinstance(a, Inf):
        return NEG_INF if a.sign > 0 else POS_INF
    return -a


def sub(a, b):
    return add(a, neg(b))


def mul(a, b):
    _require_numeric(a, "*")
    _require_numeric(b, "*")
    if isinstance(a, Inf) or isinstance(b, Inf):
        raise EvalError("multiplication by an infinity")
    return a * b


def div(a, b):
    _require_numeric(a, "/")
    _require_numeric(b, "/")
    if isinstance(a, Inf) or isinstance(b, Inf):
        raise EvalError("division by an infinity")
    if b == 0:
        raise EvalError("division by zero")
    # truncation toward zero
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _rank(v):
    if isinstance(v, Inf):
        return v.sign
    return 0


def compare(a, b):
    """Three-way comparison over ints and infinities."""
    _require_numeric(a, "compare")
    _require_numeric(b, "compare")
    ra, rb = _rank(a), _rank(b)
    if ra != rb:
        return -1 if ra < rb else 1
    if ra != 0:  # both the same infinity
        return 0
    return -1 if a < b else (0 if a == b else 1)


def vmin(a, b):
    return a if compare(a, b) <= 0 else b


def vmax(a, b):
    return a if compare(a, b) >= 0 else b


def values_equal(a, b):
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, bool) != isinstance(b, bool):
        return False
    if is_numeric(a) and is_numeric(b):
        return compare(a, b) == 0 and isinstance(a, Inf) == isinstance(b, Inf)
    return a == b


def copy_value(v):
    if isinstance(v, list):
        return [copy_value(x) for x in v]
    return v


def seq_depth(v):
    d = 0
    while isinstance(v, list):
        d += 1
        v = v[0] if v else None
        if v is None:
            break
    return d


class ScalarType:
    __slots__ = ("name",)

    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name

    def __eq__(self, other):
        return isinstance(other, ScalarType) and other.name == self.name

    def __hash__(self):
        return hash(("ScalarType", self.name))


class SeqType:
    __slots__ = ("elem",)

    def __init__(self, elem):
        self.elem = elem

    def __repr__(self):
        return f"seq<{self.elem!r}>"

    def __eq__(self, other):
        return isinstance(other, SeqType) and other.elem == self.elem

    def __hash__(self):
        return hash(("SeqType", self.elem))


INT = ScalarType("int")
BOOL = ScalarType("bool")


def seq_dim(typ):
    d = 0
    while isinstance(typ, SeqType):
        d += 1
        typ = typ.elem
    return d


def check_shape(v, typ):
    """Check a value against a declared type (depth and scalar kind).

    Rows of a nested sequence may differ in length (ragged inputs are
    allowed); only nesting depth and leaf kinds are enforced.
    """
    if isinstance(typ, SeqType):
        if not isinstance(v, list):
            return False
        return all(check_shape(x, typ.elem) for x in v)
    if typ.name == "int":
        return is_numeric(v)
    if typ.name == "bool":
        return isinstance(v, bool)
    return False
