"""Join synthesis: enumerate sketch completions, verify against the
reference semantics, refine with counterexamples.

The state is split into dependency layers and each layer's holes are
solved with earlier layers frozen (incremental synthesis); accepted
joins re-verify against the full sampling budget.  A failed search is
an "unsat within the searched space" verdict, never silence.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

from . import values as V
from .equations import EquationSystem, LoopEq, SimpleEq, eval_system
from .expr import (
    INDEX,
    INPUT,
    STATE,
    Binary,
    Const,
    Fill,
    Hole,
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
    var_names,
    walk,
)
from .funcform import FuncForm
from .sketch import Sketch, SketchError, compile_sketch
from .values import BOOL, EvalError, INT, SeqType


@dataclass
class SynthConfig:
    kappa_max: int = 2
    reps_max: int = 2
    samples: int = 1000
    seed: int = 0
    attempts_per_layer: int = 30_000
    identity_candidates: int = 64
    pool_per_size: int = 4000
    completion_extra_nodes: int = 8
    timeout_s: float | None = None
    jobs: int = 1


class SynthTimeout(Exception):
    pass


@dataclass
class JoinDef:
    """A synthesized join: an equation system over join-locals (state
    names) reading the two argument states as <name>_l / <name>_r."""

    kind: str  # 'parallel' | 'memoryless'
    state_names: list
    body: EquationSystem
    identity: dict | None = None  # state name -> init expression
    replay: bool = False

    def apply(self, left, right, inputs):
        env = {}
        for k, v in inputs.items():
            env[k] = v
        for name in self.state_names:
            env[f"{name}_l"] = V.copy_value(left[name])
            env[f"{name}_r"] = V.copy_value(right[name])
            # locals start from the left state; initializer equations
            # overwrite where the sketch provides one
            env[name] = V.copy_value(left[name])
        eval_system(self.body, env)
        return {name: env[name] for name in self.state_names}

    def format(self):
        return self.body.format()


@dataclass
class JoinResult:
    join: JoinDef | None
    provenance: dict

    @property
    def unsat(self):
        return self.join is None


def freeze(v):
    if isinstance(v, list):
        return tuple(freeze(x) for x in v)
    if isinstance(v, dict):
        return tuple(sorted((k, freeze(x)) for k, x in v.items()))
    if isinstance(v, V.Inf):
        return ("inf", v.sign)
    return v


def states_equal(a, b, names):
    return all(V.values_equal(a[n], b[n]) for n in names)


# ---------------------------------------------------------------------------
# dependency layers

def layer_order(form: FuncForm):
    """State variables in dependency order (readers after the variables
    they read); mutually dependent variables share a layer."""
    names = [s.name for s in form.states]
    deps = {n: set() for n in names}

    def scan(eqs):
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                reads = var_names(eq.rhs, STATE)
                for s in eq.subs:
                    reads |= var_names(s, STATE)
                if eq.lhs in deps:
                    deps[eq.lhs] |= (reads & set(names)) - {eq.lhs}
            else:
                scan(eq.body.eqs)

    scan(form.body.eqs)

    # merge strongly-connected groups, then topologically order
    layers = []
    remaining = list(names)
    placed = set()
    while remaining:
        ready = [n for n in remaining if deps[n] <= placed]
        if ready:
            n = ready[0]
            layers.append([n])
            placed.add(n)
            remaining.remove(n)
            continue
        # find a cycle: walk dependency edges until one repeats
        group = _find_cycle(remaining, deps, placed)
        layers.append(sorted(group, key=remaining.index))
        placed |= set(group)
        remaining = [n for n in remaining if n not in group]
    return layers


def _find_cycle(remaining, deps, placed):
    start = remaining[0]
    seen = [start]
    cur = start
    while True:
        nxt = None
        for d in sorted(deps[cur]):
            if d in remaining and d not in placed:
                nxt = d
                break
        if nxt is None:
            return set(seen)
        if nxt in seen:
            return set(seen[seen.index(nxt):])
        seen.append(nxt)
        cur = nxt


# ---------------------------------------------------------------------------
# grammar pools

_CANON_CMPS = ("<", "<=", "==", "!=")
_NUM_TIERS = (
    None,  # tier 0: operators from the source
    ("+", "-", "min", "max"),
    ("+", "-", "min", "max", "*"),
)


@dataclass
class Grammar:
    num_leaves: list
    bool_leaves: list
    seq_leaves: list
    num_ops: tuple
    cmp_ops: tuple
    bool_ops: tuple = ("&&", "||")
    kappa_max: int = 2

    def __post_init__(self):
        self._pools = {}

    def pool(self, typ, kappa, size):
        """Expressions of exactly `size` nodes and depth <= kappa."""
        key = (typ, kappa, size)
        if key in self._pools:
            return self._pools[key]
        out = []
        seen = set()

        def emit(e):
            k = ac_key(e)
            if k not in seen:
                seen.add(k)
                out.append(e)

        if size == 1:
            for leaf in (self.num_leaves if typ == "num" else
                         self.bool_leaves if typ == "bool" else
                         self.seq_leaves):
                emit(leaf)
        elif kappa > 0:
            if typ == "num":
                for sa in range(1, size - 1):
                    sb = size - 1 - sa
                    for op in self.num_ops:
                        for a in self.pool("num", kappa - 1, sa):
                            for b in self.pool("num", kappa - 1, sb):
                                if op in ("+", "*", "min", "max") \
                                        and ac_key(a) > ac_key(b):
                                    continue
                                emit(Binary(op, a, b))
                if size >= 2:
                    for a in self.pool("num", kappa - 1, size - 1):
                        emit(Unary("-", a))
                for sc in range(1, size - 2):
                    for sa in range(1, size - 1 - sc):
                        sb = size - 1 - sc - sa
                        if sb < 1:
                            continue
                        for c in self.pool("bool", kappa - 1, sc):
                            for a in self.pool("num", kappa - 1, sa):
                                for b in self.pool("num", kappa - 1, sb):
                                    emit(Ternary(c, a, b))
            else:
                for sa in range(1, size - 1):
                    sb = size - 1 - sa
                    for op in self.bool_ops:
                        for a in self.pool("bool", kappa - 1, sa):
                            for b in self.pool("bool", kappa - 1, sb):
                                if ac_key(a) > ac_key(b):
                                    continue
                                emit(Binary(op, a, b))
                    for op in self.cmp_ops:
                        for a in self.pool("num", kappa - 1, sa):
                            for b in self.pool("num", kappa - 1, sb):
                                if op in ("==", "!=") and ac_key(a) > ac_key(b):
                                    continue
                                emit(Binary(op, a, b))
                if size >= 2:
                    for a in self.pool("bool", kappa - 1, size - 1):
                        emit(Unary("!", a))
        out = out[: 64_000]
        self._pools[key] = out
        return out


def _source_affinity(e):
    """(kind, detail) of the subexpression a hole replaced: the search
    tries the decorated counterparts of that variable first."""
    if e is None:
        return ("none", None)
    if isinstance(e, Const):
        return ("const", e.value)
    root = e
    while isinstance(root, (Subscript,)):
        root = root.base
    from .expr import Field as _Field, Len as _Len

    while isinstance(root, (_Field, _Len)):
        root = root.base
    if isinstance(root, Var) and root.kind == STATE:
        return ("state", root.name)
    return ("input", None)


def hole_grammar(sketch, hole, form, aux_names, consts, num_ops, cmp_ops,
                 kappa_max):
    """Leaf sets for one hole, per its kind and position; leaves are
    ordered so completions shaped like the source come first."""
    left = hole.kind in ("LR", "Rec")
    locals_ok = hole.kind == "Rec"
    # the asymmetry law: equations of original variables may not read
    # the left chunk's accumulators (nor the joined accumulator locals)
    restrict_aux = hole.eq_lhs not in aux_names
    affinity, detail = _source_affinity(hole.source)

    num, boolean, seq = [], [], []
    shifted = []  # index-shifted cells come after everything unshifted

    def add(expr, typ):
        if isinstance(typ, SeqType):
            seq.append(expr)
            if hole.in_loop and not isinstance(typ.elem, SeqType):
                j = Var(hole.in_loop, INDEX)
                add(Subscript(expr, j), typ.elem)
                for ej in (Binary("+", j, Const(1)), Binary("-", j, Const(1))):
                    shifted.append((Subscript(expr, ej), typ.elem))
        elif typ == BOOL:
            boolean.append(expr)
        else:
            num.append(expr)

    def leaves_of(s):
        out = []
        is_aux = s.name in aux_names
        blocked = restrict_aux and is_aux
        if locals_ok and not blocked:
            out.append((Var(s.name, STATE), s.typ))
        if left and not blocked:
            out.append((Var(f"{s.name}_l", INPUT), s.typ))
        out.append((Var(f"{s.name}_r", INPUT), s.typ))
        return out

    ordered_states = list(form.states)
    if affinity == "state":
        ordered_states.sort(key=lambda s: s.name != detail)
    const_vals = list(dict.fromkeys(
        ([detail] if affinity == "const" and not isinstance(detail, bool)
         else []) + [c for c in consts]))

    if affinity == "const":
        for c in const_vals:
            add(Const(c), BOOL if isinstance(c, bool) else INT)
    for s in ordered_states:
        for expr, typ in leaves_of(s):
            add(expr, typ)
    if affinity != "const":
        for c in const_vals:
            add(Const(c), BOOL if isinstance(c, bool) else INT)
    for expr, typ in shifted:
        if typ == BOOL:
            boolean.append(expr)
        else:
            num.append(expr)
    boolean.extend([Const(True), Const(False)])

    def dedup(xs):
        seen = set()
        out = []
        for x in xs:
            k = ac_key(x)
            if k not in seen:
                seen.add(k)
                out.append(x)
        return out

    return Grammar(dedup(num), dedup(boolean), dedup(seq), num_ops, cmp_ops,
                   kappa_max=kappa_max)


def source_operators(form):
    ops = set()

    def scan(e):
        for n in walk(e):
            if isinstance(n, Binary):
                ops.add(n.op)
            elif isinstance(n, Unary):
                ops.add(n.op)

    def scan_sys(eqs):
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                scan(eq.rhs)
            else:
                scan_sys(eq.body.eqs)

    scan_sys(form.body.eqs)
    return ops


def source_constants(form):
    consts = set()

    def scan_sys(eqs):
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                for n in walk(eq.rhs):
                    if isinstance(n, Const) and V.is_int(n.value):
                        consts.add(n.value)
            else:
                scan_sys(eq.body.eqs)

    scan_sys(form.body.eqs)
    return consts


# ---------------------------------------------------------------------------
# completion enumeration

def enumerate_completions(sketch, holes, grammars, config, counter,
                          seen=None):
    """Stream completions (dict hole-id -> expression), nondecreasing in
    (kappa, total size, total leaf rank); deduplicated.

    Rank-diagonal order matters: within one size tier, candidates are
    drawn by the sum of per-hole pool positions, so a single unusual
    leaf in one hole does not push the whole tuple to the end of a
    lexicographic product.
    """
    hids = [h.hid for h in holes]
    if not hids:
        yield {}
        return
    if seen is None:
        seen = set()
    max_total = len(hids) + config.completion_extra_nodes
    for kappa in range(config.kappa_max + 1):
        for total in range(len(hids), max_total + 1):
            for combo in _compositions(total, len(hids)):
                pools = []
                ok = True
                for hid, sz in zip(hids, combo):
                    g, typ = grammars[hid]
                    pool = g.pool(typ, kappa, sz)
                    if not pool:
                        ok = False
                        break
                    pools.append(pool)
                if not ok:
                    continue
                for choice in _rank_product(pools):
                    key = tuple(ac_key(e) for e in choice)
                    if key in seen:
                        continue
                    seen.add(key)
                    counter["attempts"] += 1
                    if counter["attempts"] > counter["cap"]:
                        return
                    yield dict(zip(hids, choice))


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _rank_product(pools):
    """Tuples over the pools ordered by the sum of element positions."""
    max_rank = sum(len(p) - 1 for p in pools)
    for rank in range(max_rank + 1):
        yield from _rank_tuples(pools, 0, rank, ())
        if rank > 400:  # diagonals beyond this add little; cap the tail
            break


def _rank_tuples(pools, i, rank, prefix):
    if i == len(pools) - 1:
        if rank < len(pools[i]):
            yield prefix + (pools[i][rank],)
        return
    rest_max = sum(len(p) - 1 for p in pools[i + 1:])
    lo = max(0, rank - rest_max)
    for idx in range(lo, min(rank, len(pools[i]) - 1) + 1):
        yield from _rank_tuples(pools, i + 1, rank - idx, prefix + (pools[i][idx],))


def hole_type_tag(hole):
    if isinstance(hole.typ, SeqType):
        return "seq"
    return "bool" if hole.typ == BOOL else "num"


# ---------------------------------------------------------------------------
# partial join construction

def build_join_body(sketch, assignment, vars_included):
    """Substitute solved holes and keep only the equations of the given
    variables (earlier layers plus the one being solved)."""
    eqs = _build_eqs(sketch.eqs, assignment, vars_included)
    return EquationSystem(eqs)


def _build_eqs(eqs, assignment, vars_included):
    out = []
    for eq in eqs:
        if isinstance(eq, SimpleEq):
            if eq.lhs not in vars_included:
                continue
            rhs = _subst_holes(eq.rhs, assignment)
            if rhs is None:
                continue
            out.append(SimpleEq(eq.lhs, eq.subs, rhs))
        else:
            body = _build_eqs(eq.body.eqs, assignment, vars_included)
            if body:
                out.append(LoopEq(
                    tuple(v for v in eq.modified if v in vars_included),
                    eq.index, eq.lo, eq.hi, EquationSystem(body)))
    return out


def _subst_holes(e, assignment):
    if isinstance(e, Hole):
        return assignment.get(e.hid)
    kids = children(e)
    if not kids:
        return e
    new = []
    for c in kids:
        sub = _subst_holes(c, assignment)
        if sub is None:
            return None
        new.append(sub)
    return rebuild(e, tuple(new))


# ---------------------------------------------------------------------------
# samples

@dataclass
class ParallelSample:
    inputs: dict
    left: dict
    right: dict
    expected: dict
    size: int


@dataclass
class MemorylessSample:
    inputs: dict
    d: dict
    elem: object
    expected: dict
    size: int


def parallel_samples(form, element_seqs, inputs_list, seed, rng_cuts=3):
    """h(x), h(y), h(x•y) triples over sampled element sequences."""
    import random

    rng = random.Random(seed)
    out = []
    for elems, inputs in zip(element_seqs, inputs_list):
        n = len(elems)
        prefixes = form.prefix_states(inputs, elems=elems)
        whole = prefixes[-1]
        if n <= 3:
            cuts = range(n + 1)
        else:
            cuts = sorted({0, n, *(rng.randint(0, n) for _ in range(rng_cuts))})
        for cut in cuts:
            left = prefixes[cut]
            right = form.run(inputs, elems=elems[cut:])
            out.append(ParallelSample(inputs, left, right, whole,
                                      n + _depth_size(elems)))
    out.sort(key=lambda s: s.size)
    return out


def _depth_size(elems):
    total = 0
    for e in elems:
        if isinstance(e, list):
            total += len(e)
        elif isinstance(e, dict):
            total += 1
    return total


def memoryless_samples(form, inputs_list, seed, perturbations=2,
                       max_states=40, max_rows=48):
    """(state, element, expected-step) triples.

    States (reachable prefix states plus random perturbations) and
    elements are pooled per ambient-input group and crossed, so two
    elements with equal inner results meet the same outer states: that
    is what lets the identity-state prefilter detect that no join
    function can exist at all."""
    import random

    rng = random.Random(seed)
    groups = {}
    for inputs in inputs_list:
        elems = inputs[form.split] if form.split else inputs["_elems"]
        ambient = {k: v for k, v in inputs.items() if k != form.split}
        gkey = freeze(ambient)
        g = groups.setdefault(gkey, {"inputs": inputs, "states": {},
                                     "rows": {}})
        prefixes = form.prefix_states(inputs, elems=elems)
        for pos, elem in enumerate(elems):
            g["rows"].setdefault(freeze(elem), elem)
            d = prefixes[pos]
            g["states"].setdefault(freeze(d), d)
            for _ in range(perturbations):
                p = _perturb(d, rng)
                g["states"].setdefault(freeze(p), p)

    out = []
    for gkey, g in groups.items():
        states = list(g["states"].values())[:max_states]
        rows = sorted(g["rows"].values(), key=_size_of)[:max_rows]
        for d in states:
            for elem in rows:
                try:
                    expected = form.step(d, elem, g["inputs"])
                except EvalError:
                    continue
                out.append(MemorylessSample(
                    g["inputs"], d, elem, expected, _size_of(elem)))
    out.sort(key=lambda s: s.size)
    return out


def _size_of(elem):
    if isinstance(elem, list):
        return len(elem)
    return 1


def _perturb(state, rng):
    out = {}
    for k, v in state.items():
        out[k] = _perturb_value(v, rng)
    return out


def _perturb_value(v, rng):
    if isinstance(v, bool):
        return rng.choice([v, not v])
    if isinstance(v, V.Inf):
        return v
    if V.is_int(v):
        return v + rng.choice([-2, -1, 0, 0, 1, 2])
    if isinstance(v, list):
        return [_perturb_value(x, rng) for x in v]
    return v


# ---------------------------------------------------------------------------
# the CEGIS driver

class _Synthesizer:
    def __init__(self, form, kind, config, aux_names=()):
        self.form = form
        self.kind = kind
        self.config = config
        self.aux_names = set(aux_names)
        self.deadline = (
            time.monotonic() + config.timeout_s if config.timeout_s else None
        )
        self.provenance = {
            "kind": kind,
            "kappa_max": config.kappa_max,
            "reps_max": config.reps_max,
            "attempts_per_layer": config.attempts_per_layer,
            "layers": [],
            "operator_tiers_tried": 0,
        }

    def check_time(self):
        if self.deadline and time.monotonic() > self.deadline:
            raise SynthTimeout("synthesis timeout")

    def op_tiers(self):
        base = source_operators(self.form)
        base_num = tuple(o for o in ("+", "-", "*", "min", "max") if o in base)
        base_cmp = tuple(o for o in _CANON_CMPS if o in base
                         or {"<": ">", "<=": ">="}.get(o) in base
                         or {">": "<", ">=": "<="}.get(o) in base)
        tiers = []
        for tier in _NUM_TIERS:
            num = base_num if tier is None else tuple(
                sorted(set(base_num) | set(tier), key=("+", "-", "min", "max", "*").index))
            cmp_ops = base_cmp if tier is None else _CANON_CMPS
            if (num, cmp_ops) not in tiers:
                tiers.append((num, cmp_ops))
        return tiers

    def solve(self, samples, identity=None):
        consts = sorted(source_constants(self.form) | {0, 1, -1})
        for reps in range(1, self.config.reps_max + 1):
            try:
                sketch = compile_sketch(self.form, self.kind, reps)
            except SketchError as exc:
                self.provenance["sketch_error"] = str(exc)
                return None
            seen = {}
            for num_ops, cmp_ops in self.op_tiers():
                self.provenance["operator_tiers_tried"] += 1
                self.check_time()
                join = self._solve_layers(
                    sketch, samples, consts, num_ops, cmp_ops, seen)
                if join is not None:
                    self.provenance["repetitions"] = reps
                    self.provenance["operators"] = list(num_ops)
                    join.identity = identity
                    return join
        return None

    def _solve_layers(self, sketch, samples, consts, num_ops, cmp_ops,
                      seen_by_layer=None):
        layers = layer_order(self.form)
        grammars = {}
        for h in sketch.holes.values():
            g = hole_grammar(sketch, h, self.form, self.aux_names, consts,
                             num_ops, cmp_ops, self.config.kappa_max)
            grammars[h.hid] = (g, hole_type_tag(h))

        assignment = {}
        solved = []
        for layer in layers:
            solved_set = set(solved) | set(layer)
            holes = [h for h in sketch.holes.values() if h.eq_lhs in layer]
            holes.sort(key=lambda h: h.hid)
            counter = {"attempts": 0, "cap": self.config.attempts_per_layer}
            found = None
            cex = list(samples[: 12])
            layer_key = tuple(layer)
            seen = (seen_by_layer.setdefault(layer_key, set())
                    if seen_by_layer is not None else set())
            stream = enumerate_completions(
                sketch, holes, grammars, self.config, counter, seen)
            for cand in stream:
                self.check_time()
                full = dict(assignment)
                full.update(cand)
                body = build_join_body(sketch, full, solved_set)
                if not self._passes(body, cex, solved_set):
                    continue
                bad = self._full_check(body, samples, solved_set)
                if bad is None:
                    found = cand
                    break
                if all(bad is not c for c in cex):
                    cex.append(bad)
                    cex.sort(key=lambda s: s.size)
            self.provenance["layers"].append({
                "vars": list(layer),
                "holes": len(holes),
                "attempts": counter["attempts"],
                "counterexamples": len(cex),
                "solved": found is not None,
            })
            if found is None:
                return None
            assignment.update(found)
            solved.extend(layer)

        body = build_join_body(sketch, assignment, set(solved))
        if self._full_check(body, samples, set(solved)) is not None:
            return None
        return JoinDef(self.kind, list(sketch.state_names), body)

    def _passes(self, body, cex, names):
        for s in cex:
            if not self._check_one(body, s, names):
                return False
        return True

    def _full_check(self, body, samples, names):
        for s in samples:
            if not self._check_one(body, s, names):
                return s
        return None

    def _check_one(self, body, s, names):
        # bind every state's parameters (completions may read the right
        # thread of a variable from a later layer); compare layer vars
        all_names = [st.name for st in self.form.states]
        join = JoinDef(self.kind, all_names, body)
        try:
            if isinstance(s, ParallelSample):
                got = join.apply(s.left, s.right, s.inputs)
            else:
                got = join.apply(s.d, s.right_state, s.inputs)
            return states_equal(got, s.expected, names)
        except EvalError:
            return False


def synthesize_parallel_join(form, element_seqs, inputs_list, config,
                             aux_names=()):
    """Search for the chunk-combining operator of a summarized form."""
    samples = parallel_samples(form, element_seqs, inputs_list, config.seed)
    synth = _Synthesizer(form, "parallel", config, aux_names)
    try:
        join = synth.solve(samples)
    except SynthTimeout:
        synth.provenance["timeout"] = True
        join = None
    synth.provenance["samples"] = len(samples)
    return JoinResult(join, synth.provenance)


def identity_candidates(form, config):
    """Identity-state candidates for the memoryless join, as expressions
    evaluated per input; the declared initial state comes first."""
    declared = {s.name: s.init for s in form.states}
    yield declared
    count = 1
    for s in form.states:
        if s.typ == BOOL:
            opts = [Const(True), Const(False)]
        elif isinstance(s.typ, SeqType):
            opts = [Fill(s.length, Const(c))
                    for c in (0, V.NEG_INF, V.POS_INF, 1)]
        else:
            opts = [Const(c) for c in (0, 1, V.NEG_INF, V.POS_INF)]
        for o in opts:
            if ac_key(o) == ac_key(declared[s.name]):
                continue
            cand = dict(declared)
            cand[s.name] = o
            count += 1
            if count > config.identity_candidates:
                return
            yield cand


def synthesize_memoryless_join(form, inputs_list, config, aux_names=()):
    """Search for the operator merging outer state with one inner
    result, co-enumerating the identity state."""
    raw = memoryless_samples(form, inputs_list, config.seed)
    best_prov = None
    for identity in identity_candidates(form, config):
        samples = []
        feasible = True
        seen_pairs = {}
        for s in raw:
            try:
                id_state = eval_identity(form, identity, s.inputs)
                right = form.step(id_state, s.elem, s.inputs)
            except EvalError:
                feasible = False
                break
            ms = MemorylessSample(s.inputs, s.d, s.elem, s.expected, s.size)
            ms.right_state = right
            samples.append(ms)
            # a join reads only the two states and the ambient inputs:
            # identical views must map to one expected result
            ambient = {k: v for k, v in s.inputs.items() if k != form.split}
            key = (freeze(s.d), freeze(right), freeze(ambient))
            want = freeze(s.expected)
            if seen_pairs.setdefault(key, want) != want:
                feasible = False
                break
        if not feasible:
            continue
        synth = _Synthesizer(form, "memoryless", config, aux_names)
        try:
            join = synth.solve(samples, identity=dict(identity))
        except SynthTimeout:
            synth.provenance["timeout"] = True
            join = None
        synth.provenance["samples"] = len(samples)
        synth.provenance["identity"] = {
            k: pretty(e) for k, e in identity.items()
        }
        best_prov = synth.provenance
        if join is not None:
            return JoinResult(join, synth.provenance)
    return JoinResult(None, best_prov or {"kind": "memoryless",
                                          "identity": None})


def eval_identity(form, identity, inputs):
    env = form.base_env(inputs)
    return {name: eval_expr(e, env) for name, e in identity.items()}
