"""Auxiliary-accumulator discovery.

Unfold a function over symbolic elements, normalize each state
variable's unfolding, pull out the input-only expressions the join
would need, and fit them to a recursion scheme (fold over a scalar,
cell-wise zip, scan), reusing existing state where the needed values
are already computed.  The result is a lifted function whose extra
accumulators make join synthesis possible.
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
    children,
    eval_expr,
    pretty,
    rebuild,
    walk,
)
from .funcform import ELEM, ELEM_VAR, FuncForm, StateDecl, inner_loop_form
from .rewrite import (
    Budget,
    NormalizationFailure,
    UnfoldError,
    classify,
    distribute_normal,
    fkey,
    FlatOp,
    FlatSum,
    flatten,
    make_op,
    make_sum,
    normalize,
    unflatten,
    unfold,
)
from .values import BOOL, INT, EvalError, SeqType

GEN_J = Var("_j", INDEX)

_OP_IDENTITY = {
    "+": 0, "min": V.POS_INF, "max": V.NEG_INF,
    "&&": True, "||": False, "*": 1,
}
_OP_WORD = {
    "+": "sum", "min": "min", "max": "max",
    "&&": "all", "||": "any", "*": "prod",
}
_SCHEME_OPS = ("+", "max", "min", "&&", "||", "*")


class LiftFailure(Exception):
    def __init__(self, msg, notes=None):
        super().__init__(msg)
        self.notes = notes or []


@dataclass
class AuxDef:
    """One discovered accumulator: init is the identity of the fold
    operator; the update combines the previous value with a base
    reference (an element field, an existing state variable, or the
    raw element)."""

    name: str
    shape: str  # 'scalar' | 'cell'
    op: str
    base: tuple  # ('field', name) | ('state', name) | ('elem', None)
    scheme: str  # 'fold' | 'zip' | 'scan' | 'map-with-state'
    init_value: object
    u_exprs: dict = field(default_factory=dict)  # k -> generic u_k

    def init_expr(self, length=None):
        if self.shape == "cell":
            return Fill(length, Const(self.init_value))
        return Const(self.init_value)

    def describe(self):
        kind, name = self.base
        src = {"field": f"element field '{name}'",
               "state": f"state variable '{name}'",
               "elem": "the element itself"}[kind]
        return (f"{self.name}: {self.scheme}({self.op}) over {src}, "
                f"init {pretty(Const(self.init_value))}")


@dataclass
class Resolution:
    """How one required input-only family is obtained."""

    u_exprs: dict  # k -> expression
    how: str  # 'existing' | 'aux'
    detail: str  # state var name or aux name

    def describe(self):
        u = self.u_exprs.get(2)
        shown = pretty(u) if u is not None else "?"
        return f"u_k ~ {shown}: {self.how} ({self.detail})"


@dataclass
class LiftResult:
    kind: str  # 'identity' | 'nontrivial' | 'trivial-memoryless'
    #          | 'trivial-homomorphic' | 'failed'
    auxiliary: list
    lifted: FuncForm | None
    resolutions: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    @property
    def failed(self):
        return self.kind == "failed"


# ---------------------------------------------------------------------------
# instantiation helpers

def instantiation(form: FuncForm, m_val: int, elem_len=None):
    """Bind every ambient integer to m_val and every ambient sequence to
    a symbolic sequence of length m_val."""
    inst = {}
    for n, t in form.inputs.items():
        if isinstance(t, SeqType):
            inst[n] = [Subscript(Var(n, INPUT), Const(i)) for i in range(m_val)]
        else:
            inst[n] = m_val
    if elem_len is not None:
        inst["_elem_len"] = elem_len
    return inst


def _sub_consts(e):
    """Constant subscript indexes appearing anywhere in e."""
    out = set()
    for n in walk(e):
        if isinstance(n, Subscript) and isinstance(n.index, Const):
            out.add(n.index.value)
    return out


def _generalize(e, j):
    """Replace subscript constant j with the generic cell index."""

    def go(n):
        if isinstance(n, Subscript) and isinstance(n.index, Const) \
                and n.index.value == j:
            return Subscript(go(n.base), GEN_J)
        kids = children(n)
        if not kids:
            return n
        return rebuild(n, tuple(go(c) for c in kids))

    return go(e)


def _instantiate(e, j):
    def go(n):
        if isinstance(n, Subscript) and n.index == GEN_J:
            return Subscript(go(n.base), Const(j))
        kids = children(n)
        if not kids:
            return n
        return rebuild(n, tuple(go(c) for c in kids))

    return go(e)


def _dnkey(e):
    return fkey(distribute_normal(e))


# ---------------------------------------------------------------------------
# u_k extraction

def extract_required_info(report, k=None):
    """Input-only expressions of a normal form's leaves (the values a
    join would need from the right-hand computation)."""
    if report.kind == "none":
        raise LiftFailure(
            f"no separable normal form (cost {report.cost})")
    seen = set()
    out = []
    for leaf in report.leaves:
        if leaf.exp_i is None:
            continue
        key = _dnkey(leaf.exp_i)
        if key not in seen:
            seen.add(key)
            out.append(leaf.exp_i)
    return out


@dataclass
class _Pool:
    """Extraction results for one instantiation (one m, one k)."""

    mixed: dict = field(default_factory=dict)    # key -> (expr, kind)
    pure: dict = field(default_factory=dict)     # origin var -> (vee, [exprs])

    def families(self):
        return dict(self.mixed)


def _extract_pool(form, k, inst, budget, norm_cache, m_val):
    unf = unfold(form, k, inst, budget)
    pool = _Pool()
    for s in form.states:
        val = unf[s.name]
        cells = val if isinstance(val, list) else [val]
        for j, cell_expr in enumerate(cells):
            ck = ac_key(cell_expr)
            if ck in norm_cache:
                rep = norm_cache[ck]
            else:
                try:
                    _, rep = normalize(cell_expr, budget)
                except NormalizationFailure as exc:
                    raise LiftFailure(
                        f"normalization failed for '{s.name}' at k={k}: {exc}")
            norm_cache[ck] = rep
            if rep.kind == "none":
                raise LiftFailure(
                    f"'{s.name}' has no separable normal form at k={k}")
            pure_here = []
            for leaf in rep.leaves:
                if leaf.exp_i is None:
                    continue
                is_pure = leaf.exp_s is None and _is_input_mark(leaf.skeleton)
                if is_pure:
                    pure_here.append(leaf.exp_i)
                    continue
                _add_family(pool.mixed, leaf.exp_i, m_val)
            if pure_here:
                vee = rep.vee or "+"
                key = (s.name, j)
                pool.pure[key] = (vee, pure_here)
    return pool


def _is_input_mark(skeleton):
    return isinstance(skeleton, Var) and skeleton.name == "_i"


def _add_family(pool, u, m_val):
    subs = _sub_consts(u)
    if len(subs) == 1:
        j = subs.pop()
        gen = _generalize(u, j)
        key = ("cell", _dnkey(gen))
        entry = pool.get(key)
        if entry is None:
            pool[key] = (gen, "cell", {j})
        else:
            entry[2].add(j)
    else:
        key = ("scalar", _dnkey(u))
        pool.setdefault(key, (u, "scalar", set()))


# ---------------------------------------------------------------------------
# recursion discovery

def _x_candidates(form, kind):
    """Base references usable in an accumulator step: element fields,
    existing state values from the identity run, or the element."""
    cands = []
    if form.elem_fields is not None:
        for f in form.elem_fields:
            if isinstance(f.typ, SeqType):
                if kind == "cell":
                    cands.append(("field", f.name))
            elif kind == "scalar":
                cands.append(("field", f.name))
    else:
        if isinstance(form.elem_type, SeqType):
            if kind == "cell":
                cands.append(("elem", None))
        elif kind == "scalar":
            cands.append(("elem", None))
    for s in form.states:
        if isinstance(s.typ, SeqType):
            if kind == "cell":
                cands.append(("state", s.name))
        elif kind == "scalar":
            cands.append(("state", s.name))
    return cands


def _x_value(base, k, id_unfolds, kind):
    """The candidate's expression at step k (generic over the cell)."""
    tag, name = base
    ak = Var(f"a{k}", INPUT)
    if tag == "field":
        e = Field(ak, name)
        return Subscript(e, GEN_J) if kind == "cell" else e
    if tag == "elem":
        return Subscript(ak, GEN_J) if kind == "cell" else ak
    val = id_unfolds[k][name]
    if isinstance(val, list):
        if kind != "cell":
            return None
        gens = set()
        for j, cell in enumerate(val):
            gens.add(_dnkey(_generalize(cell, j)))
        if len(gens) != 1:
            return None
        return _generalize(val[0], 0) if len(val) else None
    if kind == "cell":
        return None
    return val


def _op_parts(e, op):
    fe = distribute_normal(e)
    if op == "+":
        if isinstance(fe, FlatSum):
            return dict(((fkey(t), t), c) for t, c in fe.terms), fe.const
        if isinstance(fe, Const):
            return {}, fe.value
        return {(fkey(fe), fe): 1}, 0
    if isinstance(fe, FlatOp) and fe.op == op:
        parts = {}
        for a in fe.args:
            parts[(fkey(a), a)] = parts.get((fkey(a), a), 0) + 1
        return parts, None
    return {(fkey(fe), fe): 1}, None


def _subtract(u_next, u_prev, op):
    """X with u_next == op(u_prev, X), matching modulo AC; None when
    no such X exists."""
    big, big_const = _op_parts(u_next, op)
    small, small_const = _op_parts(u_prev, op)
    if op == "+":
        rest = dict(big)
        for key, c in small.items():
            have = rest.get(key, 0)
            rest[key] = have - c
        if any(c < 0 for c in rest.values()):
            return None
        const = _num(big_const) - _num(small_const)
        terms = [(node, c) for (kk, node), c in rest.items() if c]
        if not terms and const == 0:
            return None
        return unflatten(make_sum(terms, const))
    rest = dict(big)
    for key, c in small.items():
        have = rest.get(key, 0)
        if have < c:
            return None
        rest[key] = have - c
    remain = []
    for (kk, node), c in rest.items():
        remain.extend([node] * c)
    if not remain:
        return None
    return unflatten(make_op(op, remain))


def _num(c):
    if c is None or isinstance(c, V.Inf):
        return 0
    return c


def discover_recursion(families_by_k, id_unfolds, form, notes):
    """Fit each required family to a recursion scheme.

    families_by_k: k -> {key -> (expr, kind, js)}.  Returns a list of
    (Resolution, AuxDef-or-None); raises LiftFailure when some family
    fits nothing.
    """
    out = []
    fams2 = families_by_k.get(2, {})
    fams1 = families_by_k.get(1, {})
    fams3 = families_by_k.get(3, {})
    used_names = {s.name for s in form.states}

    for key, (u2, kind, js) in fams2.items():
        resolution = _resolve_family(
            u2, kind, fams1, fams3, id_unfolds, form, used_names)
        if resolution is None:
            raise LiftFailure(
                f"no recursion scheme fits u_2 = {pretty(u2)}",
                notes=[pretty(u2)])
        out.append(resolution)
        res, aux = resolution
        if aux is not None:
            used_names.add(aux.name)
    # families that appear only at k=3 signal instability
    for key, (u3, kind, js) in fams3.items():
        if not _reachable(u3, kind, out, id_unfolds, fams2):
            raise LiftFailure(
                f"family at k=3 not produced by any discovered scheme: "
                f"{pretty(u3)}")
    return out


def _reachable(u3, kind, resolutions, id_unfolds, fams2):
    k3 = _dnkey(u3)
    for res, aux in resolutions:
        if 3 in res.u_exprs and _dnkey(res.u_exprs[3]) == k3:
            return True
    # existing-state values need no scheme
    for name, val in id_unfolds[3].items():
        if isinstance(val, list):
            for j, cell in enumerate(val):
                if _dnkey(_generalize(cell, j)) == k3:
                    return True
        elif _dnkey(val) == k3:
            return True
    return False


def _resolve_family(u2, kind, fams1, fams3, id_unfolds, form, used_names):
    # 1) the value is an existing state variable's run from identity
    existing = _match_existing(u2, kind, id_unfolds[2])
    if existing is not None:
        u1 = _match_existing_at(existing, kind, id_unfolds, 1)
        u3 = _match_existing_at(existing, kind, id_unfolds, 3)
        return (
            Resolution({1: u1, 2: u2, 3: u3}, "existing", existing),
            None,
        )

    # 2) a fold/zip step u_k = op(u_{k-1}, X_k)
    u1_candidates = [e for e, kd, _ in fams1.values() if kd == kind]
    for op in _SCHEME_OPS:
        for base in _x_candidates(form, kind):
            x2 = _x_value(base, 2, id_unfolds, kind)
            if x2 is None:
                continue
            for u1 in u1_candidates:
                got = _subtract(u2, u1, op)
                if got is None or _dnkey(got) != _dnkey(x2):
                    continue
                # confirm the base case: op(identity, X_1) == u_1
                x1 = _x_value(base, 1, id_unfolds, kind)
                if x1 is None or _dnkey(x1) != _dnkey(u1):
                    continue
                # confirm at k=3 against the actual family
                x3 = _x_value(base, 3, id_unfolds, kind)
                if x3 is None:
                    continue
                u3_expected = _combine(u2, x3, op)
                u3_match = None
                for e3, kd3, _ in fams3.values():
                    if kd3 == kind and _dnkey(e3) == _dnkey(u3_expected):
                        u3_match = e3
                        break
                if u3_match is None:
                    continue
                aux = _make_aux(op, base, kind, used_names,
                                {1: u1, 2: u2, 3: u3_match})
                res = Resolution({1: u1, 2: u2, 3: u3_match}, "aux", aux.name)
                return (res, aux)

    # 3) map-with-state: u_k is directly a step-k reference
    for base in _x_candidates(form, kind):
        x2 = _x_value(base, 2, id_unfolds, kind)
        x3 = _x_value(base, 3, id_unfolds, kind)
        x1 = _x_value(base, 1, id_unfolds, kind)
        if x2 is None or x3 is None or x1 is None:
            continue
        if _dnkey(x2) != _dnkey(u2):
            continue
        in3 = any(_dnkey(e3) == _dnkey(x3)
                  for e3, kd3, _ in fams3.values() if kd3 == kind)
        if not in3:
            continue
        aux = _make_aux(None, base, kind, used_names,
                        {1: x1, 2: u2, 3: x3}, scheme="map-with-state")
        return (Resolution({1: x1, 2: u2, 3: x3}, "aux", aux.name), aux)

    return None


def _combine(u_prev, x, op):
    return Binary(op, u_prev, x)


def _match_existing(u, kind, id_unfold):
    for name, val in id_unfold.items():
        if isinstance(val, list):
            if kind != "cell" or not val:
                continue
            gens = {_dnkey(_generalize(cell, j)) for j, cell in enumerate(val)}
            if len(gens) == 1 and gens.pop() == _dnkey(u):
                return name
        else:
            if kind == "scalar" and _dnkey(val) == _dnkey(u):
                return name
    return None


def _match_existing_at(name, kind, id_unfolds, k):
    val = id_unfolds[k][name]
    if isinstance(val, list):
        return _generalize(val[0], 0) if val else None
    return val


def _make_aux(op, base, kind, used_names, u_exprs, scheme=None):
    tag, bname = base
    word = _OP_WORD[op] if op else "copy"
    stem = bname if bname else "elem"
    name = f"{word}_{stem}"
    while name in used_names:
        name += "_x"
    if scheme is None:
        scheme = "zip" if kind == "cell" else "fold"
    init = _OP_IDENTITY[op] if op else 0
    return AuxDef(
        name=name,
        shape="cell" if kind == "cell" else "scalar",
        op=op or "max",
        base=base,
        scheme=scheme,
        init_value=init,
        u_exprs=dict(u_exprs),
    )


# ---------------------------------------------------------------------------
# pure-leaf coverage

def _check_pure_pools(pool, id_unfold, k):
    """Pure input-only leaves must be recoverable from existing state:
    the spine combination of each origin's pure leaves (or each leaf
    alone) has to equal some state variable's identity run."""
    id_keys = {}
    for name, val in id_unfold.items():
        if isinstance(val, list):
            for j, cell in enumerate(val):
                id_keys.setdefault(fkey(distribute_normal(cell)), name)
        else:
            id_keys.setdefault(fkey(distribute_normal(val)), name)

    unresolved = []
    for (origin, j), (vee, leaves) in pool.pure.items():
        if len(leaves) == 1:
            combo = flatten(leaves[0])
        elif vee == "+":
            combo = make_sum([(flatten(e), 1) for e in leaves])
        else:
            combo = make_op(vee, [flatten(e) for e in leaves])
        if fkey(distribute_normal(unflatten(combo))) in id_keys:
            continue
        missing = [e for e in leaves
                   if fkey(distribute_normal(e)) not in id_keys]
        if not missing:
            continue
        unresolved.append((origin, vee, missing))
    return unresolved


# ---------------------------------------------------------------------------
# lift drivers

def discover_lift(form: FuncForm, budget: Budget | None = None):
    """Run extraction and discovery on a form; returns (resolutions,
    aux defs, notes).  Raises LiftFailure."""
    budget = budget or Budget()
    notes = []
    results = None
    for m_val in (2, 3):
        elem_len = m_val if isinstance(form.elem_type, SeqType) else None
        inst = instantiation(form, m_val, elem_len)
        id_unfolds = {
            k: unfold(form, k, inst, budget, from_identity=True)
            for k in (1, 2, 3)
        }
        families = {}
        norm_cache = {}
        for k in (1, 2, 3):
            pool = _extract_pool(form, k, inst, budget, norm_cache, m_val)
            families[k] = pool.families()
            # pure input-only leaves not recoverable from existing state
            # become required families too
            for origin, vee, missing in _check_pure_pools(
                pool, id_unfolds[k], k
            ):
                for e in missing:
                    _add_family(families[k], e, m_val)
        resolutions = discover_recursion(families, id_unfolds, form, notes)
        if results is None:
            results = resolutions
        else:
            # the two instantiations must agree on schemes
            prev = {(r.how, r.detail) for r, _ in results}
            now = {(r.how, r.detail) for r, _ in resolutions}
            if prev != now:
                raise LiftFailure(
                    "discovery disagrees across instantiations: "
                    f"{sorted(prev)} vs {sorted(now)}")
    resolutions = results
    auxes = [aux for _, aux in resolutions if aux is not None]
    # deduplicate by definition
    uniq = []
    seen = set()
    for aux in auxes:
        key = (aux.op, aux.base, aux.shape, aux.scheme)
        if key not in seen:
            seen.add(key)
            uniq.append(aux)
    notes.extend(r.describe() for r, _ in resolutions)
    return [r for r, _ in resolutions], uniq, notes


def homomorphism_lift(form: FuncForm, budget: Budget | None = None) -> LiftResult:
    """Lift a (summarized) function toward a homomorphism by adding the
    discovered accumulators to its body."""
    try:
        resolutions, auxes, notes = discover_lift(form, budget)
    except (LiftFailure, UnfoldError, NormalizationFailure, EvalError) as exc:
        return LiftResult("failed", [], None, notes=[str(exc)])
    if not auxes:
        return LiftResult("identity", [], form,
                          resolutions=resolutions, notes=notes)
    lifted = embed_aux(form, auxes)
    return LiftResult("nontrivial", auxes, lifted,
                      resolutions=resolutions, notes=notes)


def memoryless_lift(form: FuncForm, budget: Budget | None = None) -> LiftResult:
    """Lift toward memorylessness: a homomorphism lift of the inner
    loop, embedded back into the outer body (accumulators span outer
    iterations; their identity-run values per element are what the
    join consumes)."""
    try:
        inner = inner_loop_form(form)
        resolutions, auxes, notes = discover_lift(inner, budget)
    except (LiftFailure, UnfoldError, NormalizationFailure, EvalError) as exc:
        return LiftResult("failed", [], None, notes=[str(exc)])
    if not auxes:
        return LiftResult("identity", [], form,
                          resolutions=resolutions, notes=notes)
    if any(aux.shape == "cell" for aux in auxes):
        return LiftResult(
            "failed", [], None,
            notes=["cell-shaped accumulators inside the inner loop are "
                   "not supported"])
    lifted = embed_aux_inner(form, auxes)
    return LiftResult("nontrivial", auxes, lifted,
                      resolutions=resolutions, notes=notes)


def trivial_memoryless_lift(form: FuncForm) -> LiftResult:
    """The fallback lift: remember the last element; the join replays
    the body on it."""
    aux = AuxDef(
        name="last_elem",
        shape="scalar",
        op="max",
        base=("elem", None),
        scheme="map-with-state",
        init_value=0,
    )
    states = list(form.states) + [
        StateDecl("last_elem", form.elem_type or INT, Fill(Const(0), Const(0))
                  if isinstance(form.elem_type, SeqType) else Const(0)),
    ]
    body = EquationSystem(list(form.body.eqs) + [
        SimpleEq("last_elem", (), ELEM_VAR),
    ])
    lifted = FuncForm(
        dim=form.dim, index=form.index, length=form.length,
        split=form.split, elem_type=form.elem_type,
        elem_fields=form.elem_fields, states=states, body=body,
        inputs=dict(form.inputs),
    )
    return LiftResult("trivial-memoryless", [aux], lifted,
                      notes=["kept the last element (identity lift)"])


def trivial_homomorphism_lift(form: FuncForm) -> LiftResult:
    """Keep the whole consumed sequence; the join concatenates and
    replays.  Sound but performs no real parallel work."""
    aux = AuxDef(
        name="kept_input",
        shape="scalar",
        op="max",
        base=("elem", None),
        scheme="map-with-state",
        init_value=0,
    )
    return LiftResult("trivial-homomorphic", [aux], None,
                      notes=["whole-input lift; join replays the function"])


# ---------------------------------------------------------------------------
# embedding

def aux_length_expr(form, aux):
    tag, name = aux.base
    if tag == "state":
        return form.state_decl(name).length
    if tag == "field":
        for f in form.elem_fields:
            if f.name == name:
                return f.length
        raise KeyError(name)
    if isinstance(form.elem_type, SeqType):
        return Len(ELEM_VAR)
    return None


def _base_ref(form, aux, cell_index=None):
    tag, name = aux.base
    if tag == "field":
        e = Field(ELEM_VAR, name)
    elif tag == "state":
        e = Var(name, STATE)
    else:
        e = ELEM_VAR
    if aux.shape == "cell":
        e = Subscript(e, cell_index)
    return e


def aux_update_eq(form, aux, cell_index=None):
    if aux.shape == "cell":
        lhs_sub = (cell_index,)
        prev = Subscript(Var(aux.name, STATE), cell_index)
    else:
        lhs_sub = ()
        prev = Var(aux.name, STATE)
    ref = _base_ref(form, aux, cell_index)
    if aux.scheme == "map-with-state":
        rhs = ref
    else:
        rhs = Binary(aux.op, prev, ref)
    return SimpleEq(aux.name, lhs_sub, rhs)


def _aux_state_decl(form, aux):
    length = aux_length_expr(form, aux)
    if aux.shape == "cell":
        return StateDecl(aux.name, SeqType(_aux_scalar_type(aux)),
                         aux.init_expr(length), length)
    return StateDecl(aux.name, _aux_scalar_type(aux), aux.init_expr())


def _aux_scalar_type(aux):
    return BOOL if aux.op in ("&&", "||") else INT


def embed_aux(form: FuncForm, auxes) -> FuncForm:
    """Append accumulator updates to a (summarized) body."""
    body = EquationSystem([_copy_eq(e) for e in form.body.eqs])
    states = list(form.states)
    for aux in auxes:
        states.append(_aux_state_decl(form, aux))
        if aux.shape == "cell":
            length = aux_length_expr(form, aux)
            loop = _matching_loop(body, length)
            if loop is not None:
                idx = Var(loop.index, INDEX)
                loop.body.eqs.append(aux_update_eq(form, aux, idx))
                loop.modified = tuple(list(loop.modified) + [aux.name])
            else:
                idx = Var("zj", INDEX)
                body.eqs.append(LoopEq(
                    (aux.name,), "zj", Const(0), length,
                    EquationSystem([aux_update_eq(form, aux, idx)])))
        else:
            body.eqs.append(aux_update_eq(form, aux))
    return FuncForm(
        dim=form.dim, index=form.index, length=form.length,
        split=form.split, elem_type=form.elem_type,
        elem_fields=form.elem_fields,
        states=states, body=body, inputs=dict(form.inputs),
    )


def embed_aux_inner(form: FuncForm, auxes) -> FuncForm:
    """Append inner-lift accumulator updates inside the inner loop of
    the original body."""
    body = EquationSystem([_copy_eq(e) for e in form.body.eqs])
    loops = [e for e in body.eqs if isinstance(e, LoopEq)]
    loop = loops[0]
    states = list(form.states)
    inner_index = Var(loop.index, INDEX)
    for aux in auxes:
        states.append(_aux_state_decl(form, aux))
        eq = aux_update_eq(form, aux)
        # inside the outer body the inner element is _a[j]
        eq = SimpleEq(eq.lhs, eq.subs, _replace_elem(eq.rhs, Subscript(ELEM_VAR, inner_index)))
        loop.body.eqs.append(eq)
        loop.modified = tuple(list(loop.modified) + [aux.name])
    return FuncForm(
        dim=form.dim, index=form.index, length=form.length,
        split=form.split, elem_type=form.elem_type,
        elem_fields=form.elem_fields, states=states, body=body,
        inputs=dict(form.inputs),
    )


def _replace_elem(e, rep):
    if e == ELEM_VAR:
        return rep
    kids = children(e)
    if not kids:
        return e
    return rebuild(e, tuple(_replace_elem(c, rep) for c in kids))


def _matching_loop(body, length):
    from .expr import ac_equal

    for e in body.eqs:
        if isinstance(e, LoopEq) and isinstance(e.lo, Const) \
                and e.lo.value == 0 and length is not None \
                and ac_equal(e.hi, length):
            return e
    return None


def _copy_eq(e):
    if isinstance(e, SimpleEq):
        return SimpleEq(e.lhs, e.subs, e.rhs)
    return LoopEq(e.modified, e.index, e.lo, e.hi,
                  EquationSystem([_copy_eq(x) for x in e.body.eqs]))


# ---------------------------------------------------------------------------
# lift verification

def verify_lift(original: FuncForm, lift: LiftResult, element_seqs,
                inputs_list=None):
    """Projection law plus accumulator well-definedness on concrete
    element sequences (each at most length 3 for the u_k comparison)."""
    if lift.lifted is None:
        return True
    inputs_list = inputs_list or [{} for _ in element_seqs]
    for elems, inputs in zip(element_seqs, inputs_list):
        base_inputs = dict(inputs)
        orig = original.run(base_inputs, elems=list(elems))
        got = lift.lifted.run(dict(inputs), elems=list(elems))
        for name in (s.name for s in original.states):
            if not V.values_equal(orig[name], got[name]):
                return False
        k = len(elems)
        if 1 <= k <= 3:
            env = dict(inputs)
            for t, e in enumerate(elems, start=1):
                env[f"a{t}"] = e
            for aux in lift.auxiliary:
                u = aux.u_exprs.get(k)
                if u is None:
                    continue
                if aux.shape == "cell":
                    cells = got[aux.name]
                    for j in range(len(cells)):
                        want = eval_expr(_instantiate(u, j), env)
                        if not V.values_equal(cells[j], want):
                            return False
                else:
                    want = eval_expr(u, env)
                    if not V.values_equal(got[aux.name], want):
                        return False
    return True
