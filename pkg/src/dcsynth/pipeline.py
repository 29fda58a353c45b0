"""The parallelization pipeline.

memoryless check (join synthesis) -> memoryless lift -> summarize ->
parallel join synthesis -> homomorphism lift -> retry -> map-only
fallback; the resulting plan carries everything needed to run the
divide-and-conquer computation and is validated by simulating random
split trees against the sequential interpreter.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from . import values as V
from .equations import EquationSystem, LoopEq, SimpleEq
from .expr import (
    INDEX,
    INPUT,
    STATE,
    Const,
    Field,
    Fill,
    Node,
    Subscript,
    Var,
    children,
    eval_expr,
    pretty,
    rebuild,
    var_names,
    walk,
)
from .funcform import ELEM, ELEM_VAR, FuncForm, StateDecl, to_functional
from .interp import ShapeSpec, eval_program, select_inputs
from .lang import Program, parse_expr_text
from .lifting import (
    AuxDef,
    LiftResult,
    memoryless_lift,
    trivial_memoryless_lift,
    homomorphism_lift,
)
from .rewrite import Budget
from .synthesis import (
    JoinDef,
    JoinResult,
    SynthConfig,
    eval_identity,
    synthesize_memoryless_join,
    synthesize_parallel_join,
)
from .values import BOOL, EvalError, INT, SeqType


class PipelineError(Exception):
    pass


class SummarizeError(Exception):
    pass


@dataclass
class PlanConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    verify_inputs: int = 10          # random verification inputs
    tiny_cap: int = 250              # exhaustive-tiny bindings kept
    max_random_len: int = 4
    length_hints: dict = field(default_factory=dict)
    values: tuple = (-2, -1, 0, 1, 2)
    ragged: tuple = ()

    def shape_spec(self, prog):
        return ShapeSpec.for_program(
            prog, values=self.values, length_hints=self.length_hints,
            ragged=self.ragged)


@dataclass
class ParallelPlan:
    kind: str                      # 'FullDC' | 'MapOnly' | 'Failed'
    program: Program | None
    form: FuncForm | None          # original functional form
    lifted: FuncForm | None        # with every accumulator embedded
    memoryless_join: JoinDef | None
    memoryless_kind: str | None    # 'direct' | 'lifted' | 'trivial' | 'scalar'
    summarized: FuncForm | None
    summarized_depth: int | None
    aux: list = field(default_factory=list)
    parallel_join: JoinDef | None = None
    identity: dict = field(default_factory=dict)  # name -> init expr
    provenance: dict = field(default_factory=dict)

    @property
    def original_names(self):
        return [s.name for s in self.form.states]

    def aux_count(self):
        return len(self.aux)


# ---------------------------------------------------------------------------
# summarization

def summarize(lifted: FuncForm, join: JoinDef | None) -> FuncForm:
    """The summarized loop: one fold step per abstract element, the
    step being the memoryless join itself.

    State variables whose carried value the step never reads (per-
    iteration scratch like a row sum) are dropped from the summarized
    state: they would otherwise make empty chunks ambiguous and break
    the homomorphism.  Their definitions are inlined into the remaining
    equations, and their final values are recovered from the last
    nonempty chunk when simulating.
    """
    if join is None:  # depth-1 functions summarize to themselves
        return lifted
    body = _join_to_body(join, lifted)
    dead = _droppable_vars(body, [s.name for s in lifted.states])
    while dead:
        inlined, _ = _inline_dead(body, dead)
        if inlined is not None:
            body = inlined
            break
        dead = set(sorted(dead)[:-1])  # retry with fewer dropped vars
    live = [s for s in lifted.states if s.name not in dead]
    fields = [StateDecl(s.name, s.typ, s.init, s.length) for s in lifted.states]
    return FuncForm(
        dim=1 + body.loop_depth(),
        index=lifted.index,
        length=lifted.length,
        split=None,
        elem_type=None,
        elem_fields=fields,
        states=live,
        body=body,
        inputs=dict(lifted.inputs),
    )


def _carried_reads(body):
    """Variables whose previous-iteration value the body can observe
    (read before assignment, including loop wrap-around)."""
    assigned = set()
    needed = set()

    def scan_expr(e):
        for v in var_names(e, STATE):
            if v not in assigned:
                needed.add(v)

    def scan(eqs):
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                scan_expr(eq.rhs)
                for s in eq.subs:
                    scan_expr(s)
                if eq.subs and eq.lhs not in assigned:
                    needed.add(eq.lhs)
                if not eq.subs:
                    assigned.add(eq.lhs)
            else:
                scan(eq.body.eqs)
                scan(eq.body.eqs)  # wrap-around reads

    scan(body.eqs)
    return needed


def _droppable_vars(body, state_names):
    """Scratch variables: carried value never read, scalar, definitions
    read nothing live, and no in-loop self-accumulation (those cannot
    be inlined)."""
    carried = _carried_reads(body)
    seq_assigned = set()
    reads_of = {}
    loop_accum = set()

    def scan(eqs, in_loop):
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                if eq.subs:
                    seq_assigned.add(eq.lhs)
                reads = var_names(eq.rhs, STATE)
                reads_of.setdefault(eq.lhs, set()).update(reads)
                if in_loop and eq.lhs in reads:
                    loop_accum.add(eq.lhs)
            else:
                scan(eq.body.eqs, True)

    scan(body.eqs, False)
    dead = {v for v in state_names
            if v not in carried and v not in seq_assigned
            and v not in loop_accum}
    changed = True
    while changed:
        changed = False
        for v in sorted(dead):
            live_reads = (reads_of.get(v, set()) - dead)
            if live_reads - {v}:
                dead.remove(v)
                changed = True
    return dead


def _inline_dead(body, dead):
    """Substitute the running definitions of dropped scratch variables
    into the remaining equations and delete their own.  Definitions
    mentioning a loop index stay scoped to that loop."""
    from .expr import subst_vars

    def convert(eqs, env, indexes):
        out = []
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                rhs = subst_vars(eq.rhs, env)
                subs = tuple(subst_vars(s, env) for s in eq.subs)
                if eq.lhs in dead and not eq.subs:
                    env[eq.lhs] = rhs
                    continue
                leftovers = var_names(rhs, STATE) & dead
                if leftovers:
                    raise SummarizeError(
                        f"cannot inline scratch variables {sorted(leftovers)}")
                out.append(SimpleEq(eq.lhs, subs, rhs))
            else:
                inner_env = dict(env)
                inner = convert(eq.body.eqs, inner_env,
                                indexes | {eq.index})
                out.append(LoopEq(
                    tuple(v for v in eq.modified if v not in dead),
                    eq.index, eq.lo, eq.hi, EquationSystem(inner)))
                # definitions not mentioning the loop index survive it
                for k, v in inner_env.items():
                    if k in dead and eq.index not in {
                        x.name for x in walk(v) if isinstance(x, Var)
                    }:
                        env[k] = v
        return out

    try:
        return EquationSystem(convert(body.eqs, {}, set())), dead
    except SummarizeError:
        return None, dead


def _join_to_body(join: JoinDef, form: FuncForm) -> EquationSystem:
    """Rename the join's parameters: the left state becomes the loop
    state, the right state the consumed element."""
    assigned = set()
    late_left = set()

    def scan(eqs):
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                for v in var_names(eq.rhs, INPUT):
                    if v.endswith("_l") and v[:-2] in assigned:
                        late_left.add(v[:-2])
                assigned.add(eq.lhs)
            else:
                # two passes over the loop body to catch wrap-around
                # reads (an iteration reading what the last one wrote)
                scan(eq.body.eqs)
                scan(eq.body.eqs)

    scan(join.body.eqs)
    if late_left:
        raise SummarizeError(
            f"join reads entry values after overwriting them: {late_left}")

    mapping = {}
    for name in join.state_names:
        mapping[f"{name}_l"] = Var(name, STATE)
        mapping[f"{name}_r"] = Field(ELEM_VAR, name)

    def rename(e):
        if isinstance(e, Var) and e.name in mapping:
            return mapping[e.name]
        kids = children(e)
        if not kids:
            return e
        return rebuild(e, tuple(rename(c) for c in kids))

    def convert(eqs):
        out = []
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                rhs = rename(eq.rhs)
                if not eq.subs and rhs == Var(eq.lhs, STATE):
                    continue  # identity initializer
                out.append(SimpleEq(eq.lhs, tuple(rename(s) for s in eq.subs),
                                    rhs))
            else:
                out.append(LoopEq(eq.modified, eq.index, rename(eq.lo),
                                  rename(eq.hi),
                                  EquationSystem(convert(eq.body.eqs))))
        return out

    return EquationSystem(convert(join.body.eqs))


# ---------------------------------------------------------------------------
# embedding homomorphism-lift accumulators into the original loop

def embed_hom_aux(lifted: FuncForm, h: FuncForm, auxes) -> FuncForm:
    """The summarized function's new accumulators transfer to the
    original loop: state-based updates run on the loop's own variables,
    field-based updates on iteration-local variables (valid only when
    the variable never reads its previous-iteration value)."""
    from .lifting import aux_update_eq, _aux_state_decl
    from .sketch import _read_before_assign
    from .expr import ac_equal

    body = EquationSystem([_copy_eq(e) for e in lifted.body.eqs])
    states = list(lifted.states)
    carried = _read_before_assign(lifted.body.eqs)
    for aux in auxes:
        tag, base = aux.base
        if tag == "field" and base in carried:
            raise SummarizeError(
                f"accumulator over '{base}' needs its per-element value, "
                "which the original loop does not keep")
        if tag == "elem":
            raise SummarizeError(
                "whole-element accumulators cannot transfer to the loop")
        states.append(_aux_state_decl(h, aux))
        # inside the original loop, both 'field' and 'state' bases refer
        # to the loop's own variable at the end of the iteration
        if aux.shape == "cell":
            length = h.state_decl(base).length if tag != "field" else None
            if length is None:
                for f in h.elem_fields:
                    if f.name == base:
                        length = f.length
            loop = _find_loop(body, length)
            step = SimpleEq(aux.name, None, None)
            if loop is not None:
                idx = Var(loop.index, INDEX)
                loop.body.eqs.append(_cell_update(aux, base, idx))
                loop.modified = tuple(list(loop.modified) + [aux.name])
            else:
                idx = Var("zj", INDEX)
                body.eqs.append(LoopEq(
                    (aux.name,), "zj", Const(0), length,
                    EquationSystem([_cell_update(aux, base, idx)])))
        else:
            body.eqs.append(_scalar_update(aux, base))
    return FuncForm(
        dim=lifted.dim, index=lifted.index, length=lifted.length,
        split=lifted.split, elem_type=lifted.elem_type,
        elem_fields=lifted.elem_fields, states=states, body=body,
        inputs=dict(lifted.inputs),
    )


def _cell_update(aux, base, idx):
    prev = Subscript(Var(aux.name, STATE), idx)
    ref = Subscript(Var(base, STATE), idx)
    from .expr import Binary

    rhs = ref if aux.scheme == "map-with-state" else Binary(aux.op, prev, ref)
    return SimpleEq(aux.name, (idx,), rhs)


def _scalar_update(aux, base):
    from .expr import Binary

    prev = Var(aux.name, STATE)
    ref = Var(base, STATE)
    rhs = ref if aux.scheme == "map-with-state" else Binary(aux.op, prev, ref)
    return SimpleEq(aux.name, (), rhs)


def _find_loop(body, length):
    from .expr import ac_equal

    for e in body.eqs:
        if isinstance(e, LoopEq) and length is not None \
                and isinstance(e.lo, Const) and e.lo.value == 0 \
                and ac_equal(e.hi, length):
            return e
    return None


def _copy_eq(e):
    if isinstance(e, SimpleEq):
        return SimpleEq(e.lhs, e.subs, e.rhs)
    return LoopEq(e.modified, e.index, e.lo, e.hi,
                  EquationSystem([_copy_eq(x) for x in e.body.eqs]))


# ---------------------------------------------------------------------------
# join canonicalization

def _late_left_vars(join):
    assigned = set()
    late = set()

    def scan(eqs):
        for eq in eqs:
            if isinstance(eq, SimpleEq):
                for v in var_names(eq.rhs, INPUT):
                    if v.endswith("_l") and v[:-2] in assigned:
                        late.add(v[:-2])
                assigned.add(eq.lhs)
            else:
                scan(eq.body.eqs)
                scan(eq.body.eqs)

    scan(join.body.eqs)
    return late


def canonicalize_memoryless_join(join, form, inputs_list, config):
    """Rewrite an accepted join into left-canonical shape (locals start
    from the left state) when it reads a left parameter after
    overwriting the local.  The swapped variant is re-verified against
    the samples; the original is kept when the swap does not hold."""
    from .synthesis import eval_identity as _eval_id
    from .synthesis import memoryless_samples as _msamples
    from .expr import subst_vars

    late = _late_left_vars(join)
    if not late:
        return join
    samples = _msamples(form, inputs_list, config.synth.seed)
    current = join
    for v in sorted(late):
        swapped_eqs = []
        swap = {f"{v}_l": Var(f"{v}_r", INPUT), f"{v}_r": Var(f"{v}_l", INPUT)}
        for eq in current.body.eqs:
            swapped_eqs.append(_rename_eq(
                eq, lambda e: subst_vars(e, swap)) if _defines(eq, v) else eq)
        variant = JoinDef(current.kind, list(current.state_names),
                          EquationSystem(swapped_eqs),
                          identity=current.identity, replay=current.replay)
        if v in _late_left_vars(variant):
            continue
        ok = True
        for s in samples:
            try:
                id_state = _eval_id(form, current.identity, s.inputs)
                right = form.step(id_state, s.elem, s.inputs)
                got = variant.apply(s.d, right, s.inputs)
            except EvalError:
                ok = False
                break
            if not all(V.values_equal(got[k], s.expected[k])
                       for k in s.expected):
                ok = False
                break
        if ok:
            current = variant
    return current


def _defines(eq, v):
    if isinstance(eq, SimpleEq):
        return eq.lhs == v
    return v in eq.modified


# ---------------------------------------------------------------------------
# the schema

def parallelize(prog: Program, config: PlanConfig | None = None) -> ParallelPlan:
    config = config or PlanConfig()
    form = to_functional(prog)
    spec = config.shape_spec(prog)
    inputs = select_inputs(spec, seed=config.synth.seed, budget=config.verify_inputs,
                           tiny_cap=config.tiny_cap, max_len=config.max_random_len)
    provenance = {"stages": [], "budgets": {
        "kappa_max": config.synth.kappa_max,
        "reps_max": config.synth.reps_max,
        "attempts_per_layer": config.synth.attempts_per_layer,
        "samples": config.synth.samples,
        "seed": config.synth.seed,
    }}

    aux_all = []
    mem_join = None
    mem_kind = None
    lifted = form

    if form.dim == 1:
        mem_kind = "scalar"
        provenance["stages"].append(
            {"stage": "memoryless", "result": "depth-1, trivially memoryless"})
    else:
        res = synthesize_memoryless_join(form, inputs, config.synth)
        provenance["stages"].append(
            {"stage": "memoryless-join", "unsat": res.unsat,
             "detail": res.provenance})
        if not res.unsat:
            mem_join, mem_kind = res.join, "direct"
            mem_join = canonicalize_memoryless_join(
                mem_join, form, inputs, config)
        else:
            lift = memoryless_lift(form, Budget())
            provenance["stages"].append(
                {"stage": "memoryless-lift", "kind": lift.kind,
                 "aux": [a.name for a in lift.auxiliary],
                 "notes": lift.notes})
            if lift.kind == "nontrivial":
                aux_all.extend(lift.auxiliary)
                lifted = lift.lifted
                res = synthesize_memoryless_join(
                    lifted, inputs, config.synth,
                    aux_names=[a.name for a in lift.auxiliary])
                provenance["stages"].append(
                    {"stage": "memoryless-join-retry", "unsat": res.unsat,
                     "detail": res.provenance})
                if not res.unsat:
                    mem_join, mem_kind = res.join, "lifted"
                    mem_join = canonicalize_memoryless_join(
                        mem_join, lifted, inputs, config)
            if mem_join is None:
                # the always-applicable fallback: remember the element
                triv = trivial_memoryless_lift(form)
                aux_all = list(triv.auxiliary)
                lifted = triv.lifted
                mem_join = trivial_join(form, triv.lifted)
                mem_kind = "trivial"
                provenance["stages"].append(
                    {"stage": "memoryless-trivial", "result": "last element kept"})

    try:
        h = summarize(lifted, mem_join)
    except SummarizeError as exc:
        provenance["stages"].append({"stage": "summarize", "error": str(exc)})
        return ParallelPlan("Failed", prog, form, lifted, mem_join, mem_kind,
                            None, None, aux_all, None, {}, provenance)
    k, n = h.dim, form.dim
    provenance["stages"].append({"stage": "summarize", "depth": k, "n": n})

    elem_seqs, inputs_list = _mapped_elements(lifted, mem_join, inputs, config)
    aux_names = [a.name for a in aux_all]
    res = synthesize_parallel_join(h, elem_seqs, inputs_list, config.synth,
                                   aux_names=aux_names)
    provenance["stages"].append(
        {"stage": "parallel-join", "unsat": res.unsat, "detail": res.provenance})
    par_join = res.join
    h_final = h
    lifted_final = lifted

    if par_join is None:
        hom = homomorphism_lift(h, Budget())
        provenance["stages"].append(
            {"stage": "homomorphism-lift", "kind": hom.kind,
             "aux": [a.name for a in hom.auxiliary], "notes": hom.notes})
        if hom.kind == "nontrivial":
            try:
                lifted2 = embed_hom_aux(lifted, h, hom.auxiliary)
            except SummarizeError as exc:
                provenance["stages"].append(
                    {"stage": "homomorphism-embed", "error": str(exc)})
                lifted2 = None
            if lifted2 is not None:
                h2 = hom.lifted
                elem_seqs2, inputs_list2 = _mapped_elements(
                    lifted2, _extend_join(mem_join, lifted2, hom.auxiliary, h2),
                    inputs, config)
                aux_names2 = aux_names + [a.name for a in hom.auxiliary]
                res2 = synthesize_parallel_join(
                    h2, elem_seqs2, inputs_list2, config.synth,
                    aux_names=aux_names2)
                provenance["stages"].append(
                    {"stage": "parallel-join-retry", "unsat": res2.unsat,
                     "detail": res2.provenance})
                if not res2.unsat:
                    par_join = res2.join
                    h_final = h2
                    lifted_final = lifted2
                    aux_all = aux_all + list(hom.auxiliary)
                    mem_join = _extend_join(mem_join, lifted2, hom.auxiliary, h2)

    identity = {s.name: s.init for s in lifted_final.states}
    if par_join is not None:
        kind = "FullDC"
    elif n > k and mem_join is not None:
        kind = "MapOnly"
        provenance["map_benefit"] = (
            f"inner {n - k} loop level(s) of {n} run as a parallel map")
    else:
        kind = "Failed"
    return ParallelPlan(kind, prog, form, lifted_final, mem_join, mem_kind,
                        h_final, k, aux_all, par_join, identity, provenance)


def trivial_join(form: FuncForm, lifted: FuncForm) -> JoinDef:
    """The constructive join of the trivial memoryless lift: replay the
    body on the remembered element."""
    subst = {ELEM: Var("last_elem_r", INPUT)}

    def rename(e):
        from .expr import subst_vars

        return subst_vars(e, subst)

    eqs = []
    for eq in form.body.eqs:
        eqs.append(_rename_eq(eq, rename))
    eqs.append(SimpleEq("last_elem", (), Var("last_elem_r", INPUT)))
    names = [s.name for s in lifted.states]
    return JoinDef("memoryless", names, EquationSystem(eqs),
                   identity={s.name: s.init for s in lifted.states})


def _rename_eq(eq, rename):
    if isinstance(eq, SimpleEq):
        return SimpleEq(eq.lhs, tuple(rename(s) for s in eq.subs),
                        rename(eq.rhs))
    return LoopEq(eq.modified, eq.index, rename(eq.lo), rename(eq.hi),
                  EquationSystem([_rename_eq(e, rename) for e in eq.body.eqs]))


def _extend_join(mem_join, lifted2, auxes, h2):
    """After a homomorphism lift, the memoryless join also carries the
    new accumulators (fold of the right element into the left value)."""
    if mem_join is None:
        return None
    from .expr import Binary
    from .lifting import aux_update_eq

    eqs = list(mem_join.body.eqs)
    names = list(mem_join.state_names)
    identity = dict(mem_join.identity or {})
    for aux in auxes:
        names.append(aux.name)
        for s in h2.states:
            if s.name == aux.name:
                identity[aux.name] = s.init
        if aux.shape == "cell":
            length = None
            for s in h2.states:
                if s.name == aux.name:
                    length = s.length
            idx = Var("zj", INDEX)
            eqs.append(LoopEq(
                (aux.name,), "zj", Const(0), length,
                EquationSystem([SimpleEq(
                    aux.name, (idx,),
                    _aux_join_rhs(aux, idx))])))
        else:
            eqs.append(SimpleEq(aux.name, (), _aux_join_rhs(aux, None)))
    return JoinDef(mem_join.kind, names, EquationSystem(eqs),
                   identity=identity or None, replay=mem_join.replay)


def _aux_join_rhs(aux, idx):
    """Accumulator component of the memoryless join: combine the left
    accumulator with the element's contribution (its identity-run
    value, i.e. the right-thread base)."""
    from .expr import Binary

    tag, base = aux.base
    left = Var(aux.name, STATE)
    if idx is not None:
        left = Subscript(left, idx)
    right = Var(f"{base}_r" if tag != "elem" else "last_elem_r", INPUT)
    if idx is not None:
        right = Subscript(right, idx)
    if aux.scheme == "map-with-state":
        return right
    return Binary(aux.op, left, right)


def _mapped_elements(lifted, mem_join, inputs, config):
    """Element sequences consumed by the summarized function: the
    per-element results of the (lifted) body run from the identity."""
    elem_seqs = []
    inputs_list = []
    identity = {s.name: s.init for s in lifted.states}
    if mem_join is not None and mem_join.identity:
        identity.update(mem_join.identity)
    for inp in inputs:
        try:
            rows = inp[lifted.split]
            if lifted.dim == 1:
                elem_seqs.append(list(rows))
            else:
                id_state = eval_identity(lifted, identity, inp)
                elems = [lifted.step(id_state, row, inp) for row in rows]
                elem_seqs.append(elems)
            inputs_list.append(inp)
        except EvalError:
            continue
    return elem_seqs, inputs_list


# ---------------------------------------------------------------------------
# divide-and-conquer simulation

@dataclass
class SimLeaf:
    lo: int
    hi: int


@dataclass
class SimNode:
    left: object
    right: object


def tree_leaves(tree):
    if isinstance(tree, SimLeaf):
        return [tree]
    return tree_leaves(tree.left) + tree_leaves(tree.right)


def random_tree(n, rng, style="random"):
    """A binary division of 0..n into contiguous chunks."""
    if style == "singleton" or n == 0:
        return SimLeaf(0, n)
    if style == "empty-bearing":
        cuts = sorted(rng.randint(0, n) for _ in range(rng.randint(1, 3)))
        bounds = [0] + cuts + [n]
        leaves = [SimLeaf(a, b) for a, b in zip(bounds, bounds[1:])]
        return _shape(leaves, rng, "random")
    chunks = rng.randint(1, max(1, min(n, 6)))
    cuts = sorted(rng.sample(range(1, n), min(chunks - 1, n - 1))) if n > 1 else []
    bounds = [0] + cuts + [n]
    leaves = [SimLeaf(a, b) for a, b in zip(bounds, bounds[1:])]
    return _shape(leaves, rng, style)


def _shape(leaves, rng, style):
    if len(leaves) == 1:
        return leaves[0]
    if style == "left-spine":
        tree = leaves[0]
        for leaf in leaves[1:]:
            tree = SimNode(tree, leaf)
        return tree
    if style == "right-spine":
        tree = leaves[-1]
        for leaf in reversed(leaves[:-1]):
            tree = SimNode(leaf, tree)
        return tree
    if style == "balanced":
        def build(ls):
            if len(ls) == 1:
                return ls[0]
            mid = len(ls) // 2
            return SimNode(build(ls[:mid]), build(ls[mid:]))
        return build(leaves)
    # random split point
    def build_r(ls):
        if len(ls) == 1:
            return ls[0]
        mid = rng.randint(1, len(ls) - 1)
        return SimNode(build_r(ls[:mid]), build_r(ls[mid:]))
    return build_r(leaves)


TREE_STYLES = ("random", "left-spine", "right-spine", "balanced",
               "singleton", "empty-bearing")


def sim_trees(n, count, seed):
    rng = random.Random(seed)
    for style in TREE_STYLES:
        yield random_tree(n, rng, style)
    for _ in range(max(0, count - len(TREE_STYLES))):
        yield random_tree(n, rng, rng.choice(TREE_STYLES))


def simulate(plan: ParallelPlan, inputs, tree, order_seed=None):
    """Run the plan's divide-and-conquer evaluation over one split tree
    and project the result to the original state variables."""
    if plan.kind == "Failed":
        raise PipelineError("cannot simulate a failed plan")
    form = plan.lifted
    elems = inputs[form.split]
    if plan.kind == "FullDC":
        leaves = tree_leaves(tree)
        order = list(range(len(leaves)))
        if order_seed is not None:
            random.Random(order_seed).shuffle(order)
        states = {}
        for i in order:  # leaf evaluation order must not matter
            leaf = leaves[i]
            states[i] = form.run(inputs, elems=elems[leaf.lo:leaf.hi])

        live = set(plan.parallel_join.state_names)

        def project(st):
            return {k: st[k] for k in live}

        pos = {id(leaf): i for i, leaf in enumerate(leaves)}

        def solve(t):
            if isinstance(t, SimLeaf):
                return project(states[pos[id(t)]])
            left = solve(t.left)
            right = solve(t.right)
            try:
                return plan.parallel_join.apply(left, right, inputs)
            except EvalError as exc:
                raise PipelineError(f"join failed at an internal node: {exc}")

        final = dict(solve(tree))
        # scratch variables dropped by summarization depend only on the
        # last element: recover them from the last nonempty chunk
        scratch = [s.name for s in form.states if s.name not in live]
        if scratch:
            source = None
            for i, leaf in enumerate(leaves):
                if leaf.hi > leaf.lo:
                    source = states[i]
            if source is None:
                source = form.init_state(form.base_env(inputs))
            for name in scratch:
                final[name] = source[name]
    else:
        # map phase: per-element results, evaluated in any order
        identity = plan.memoryless_join.identity or {
            s.name: s.init for s in form.states}
        id_state = eval_identity(form, identity, inputs)
        order = list(range(len(elems)))
        if order_seed is not None:
            random.Random(order_seed).shuffle(order)
        mapped = {}
        for i in order:
            mapped[i] = form.step(dict(id_state), elems[i], inputs)
        state = form.init_state(form.base_env(inputs))
        for i in range(len(elems)):
            state = plan.memoryless_join.apply(state, mapped[i], inputs)
        final = state
    return {k: final[k] for k in plan.original_names}


def plan_equivalent(plan, inputs, trees, order_seed=0):
    want = eval_program(plan.program, inputs)
    for i, tree in enumerate(trees):
        got = simulate(plan, inputs, tree, order_seed=order_seed + i)
        for k in want:
            if not V.values_equal(got[k], want[k]):
                return False, (tree, k, got[k], want[k])
    return True, None


# ---------------------------------------------------------------------------
# plan documents

PLAN_VERSION = 1


def emit_plan(plan: ParallelPlan) -> dict:
    doc = {
        "version": PLAN_VERSION,
        "kind": plan.kind,
        "provenance": _clean_provenance(plan.provenance),
    }
    if plan.form is not None:
        doc["split_input"] = plan.lifted.split
        doc["index"] = plan.lifted.index
        doc["length"] = pretty(plan.lifted.length)
        doc["inputs"] = {n: _type_text(t) for n, t in plan.lifted.inputs.items()}
        doc["original_state"] = [s.name for s in plan.form.states]
        doc["state_decls"] = [_decl_doc(s) for s in plan.lifted.states]
        doc["map"] = _system_doc(plan.lifted.body)
    if plan.memoryless_join is not None:
        doc["memoryless_join"] = _join_doc(plan.memoryless_join)
        doc["memoryless_kind"] = plan.memoryless_kind
    if plan.summarized is not None:
        doc["summarized_depth"] = plan.summarized_depth
    if plan.parallel_join is not None:
        doc["parallel_join"] = _join_doc(plan.parallel_join)
    doc["aux"] = [
        {
            "name": a.name,
            "shape": a.shape,
            "scheme": a.scheme,
            "op": a.op,
            "base": list(a.base),
            "init": pretty(a.init_expr(Var("m", INPUT)) if a.shape == "cell"
                           else a.init_expr()),
            "u_k": {str(k): pretty(u) for k, u in sorted(a.u_exprs.items())},
        }
        for a in plan.aux
    ]
    doc["identity"] = {k: pretty(e) for k, e in sorted(plan.identity.items())}
    return doc


def _clean_provenance(prov):
    return json.loads(json.dumps(prov, default=str, sort_keys=True))


def _type_text(t):
    if isinstance(t, SeqType):
        return f"seq<{_type_text(t.elem)}>"
    return t.name


def _decl_doc(s):
    out = {"name": s.name, "type": _type_text(s.typ), "init": pretty(s.init)}
    if s.length is not None:
        out["length"] = pretty(s.length)
    return out


def _system_doc(system):
    out = []
    for eq in system.eqs:
        if isinstance(eq, SimpleEq):
            out.append({
                "lhs": eq.lhs,
                "subs": [pretty(s) for s in eq.subs],
                "rhs": pretty(eq.rhs),
            })
        else:
            out.append({
                "loop": {
                    "modified": list(eq.modified),
                    "index": eq.index,
                    "lo": pretty(eq.lo),
                    "hi": pretty(eq.hi),
                    "body": _system_doc(eq.body),
                }
            })
    return out


def _join_doc(join):
    out = {
        "state": list(join.state_names),
        "body": _system_doc(join.body),
    }
    if join.identity:
        out["identity"] = {k: pretty(e) for k, e in sorted(join.identity.items())}
    return out


def save_plan(plan, path):
    with open(path, "w") as f:
        json.dump(emit_plan(plan), f, indent=2, sort_keys=True)
        f.write("\n")


def load_plan(doc, prog: Program) -> ParallelPlan:
    """Rebuild a runnable plan from its document and the source program
    (no re-synthesis)."""
    form = to_functional(prog)
    if doc["kind"] == "Failed":
        return ParallelPlan("Failed", prog, form, None, None, None, None,
                            None, [], None, {}, doc.get("provenance", {}))
    name_kinds = {}
    for n in doc["inputs"]:
        name_kinds[n] = INPUT
    for d in doc["state_decls"]:
        name_kinds[d["name"]] = STATE
    name_kinds[ELEM] = INPUT
    name_kinds[doc["index"]] = INDEX

    states = []
    for d in doc["state_decls"]:
        typ = _parse_type(d["type"])
        init = parse_expr_text(d["init"], name_kinds)
        length = parse_expr_text(d["length"], name_kinds) if "length" in d else None
        states.append(StateDecl(d["name"], typ, init, length))
    inputs = {n: _parse_type(t) for n, t in doc["inputs"].items()}
    split_type = None
    body = _system_from_doc(doc["map"], name_kinds)
    lifted = FuncForm(
        dim=1 + body.loop_depth(),
        index=doc["index"],
        length=parse_expr_text(doc["length"], name_kinds),
        split=doc["split_input"],
        elem_type=prog.inputs[doc["split_input"]].elem,
        elem_fields=None,
        states=states,
        body=body,
        inputs=inputs,
    )
    mem_join = None
    if "memoryless_join" in doc:
        mem_join = _join_from_doc(doc["memoryless_join"], name_kinds,
                                  "memoryless")
    par_join = None
    if "parallel_join" in doc:
        par_join = _join_from_doc(doc["parallel_join"], name_kinds, "parallel")
    identity = {k: parse_expr_text(v, name_kinds)
                for k, v in doc["identity"].items()}
    plan = ParallelPlan(
        doc["kind"], prog, form, lifted, mem_join,
        doc.get("memoryless_kind"), None, doc.get("summarized_depth"),
        [], par_join, identity, doc.get("provenance", {}))
    return plan


def _parse_type(text):
    if text.startswith("seq<"):
        return SeqType(_parse_type(text[4:-1]))
    return INT if text == "int" else BOOL


def _system_from_doc(items, name_kinds):
    eqs = []
    for item in items:
        if "loop" in item:
            lp = item["loop"]
            kinds = dict(name_kinds)
            kinds[lp["index"]] = INDEX
            eqs.append(LoopEq(
                tuple(lp["modified"]), lp["index"],
                parse_expr_text(lp["lo"], kinds),
                parse_expr_text(lp["hi"], kinds),
                _system_from_doc(lp["body"], kinds)))
        else:
            eqs.append(SimpleEq(
                item["lhs"],
                tuple(parse_expr_text(s, name_kinds) for s in item["subs"]),
                parse_expr_text(item["rhs"], name_kinds)))
    return EquationSystem(eqs)


def _join_from_doc(jd, name_kinds, kind):
    kinds = dict(name_kinds)
    for name in jd["state"]:
        kinds[name] = STATE
        kinds[f"{name}_l"] = INPUT
        kinds[f"{name}_r"] = INPUT
    body = _system_from_doc(jd["body"], kinds)
    identity = None
    if "identity" in jd:
        identity = {k: parse_expr_text(v, kinds)
                    for k, v in jd["identity"].items()}
    return JoinDef(kind, list(jd["state"]), body, identity=identity)
