"""Reference interpreter and input sampling.

``eval_program`` executes the statement tree directly; it shares no
code with the equation/functional evaluators, so the two sides make a
genuine differential oracle.
"""

from __future__ import annotations

import itertools
import json
import random

from . import values as V
from .expr import eval_expr
from .lang import Assign, For, If, Program
from .values import EvalError, SeqType, check_shape


def eval_program(prog: Program, inputs: dict) -> dict:
    """Run a program sequentially; returns the final state bindings."""
    check_inputs(prog, inputs)
    env = dict(inputs)
    for name, (_, init) in prog.states.items():
        env[name] = eval_expr(init, {k: inputs[k] for k in prog.inputs})
    _exec_block(prog.body, env)
    return {name: env[name] for name in prog.states}


def check_inputs(prog: Program, inputs: dict):
    for name, typ in prog.inputs.items():
        if name not in inputs:
            raise EvalError(f"missing input '{name}'")
        if not check_shape(inputs[name], typ):
            raise EvalError(f"input '{name}' does not match type {typ!r}")
    extra = set(inputs) - set(prog.inputs)
    if extra:
        raise EvalError(f"unexpected inputs: {sorted(extra)}")


def _exec_block(stmts, env):
    for s in stmts:
        if isinstance(s, Assign):
            val = eval_expr(s.rhs, env)
            if s.subs:
                _assign_cell(env, s, val)
            else:
                env[s.name] = V.copy_value(val) if isinstance(val, list) else val
        elif isinstance(s, If):
            c = eval_expr(s.cond, env)
            if not isinstance(c, bool):
                raise EvalError("if condition is not a boolean")
            _exec_block(s.then if c else s.orelse, env)
        elif isinstance(s, For):
            lo = eval_expr(s.lo, env)
            hi = eval_expr(s.hi, env)
            if not (V.is_int(lo) and V.is_int(hi)):
                raise EvalError("loop bounds must be integers")
            for i in range(lo, hi):
                env[s.index] = i
                _exec_block(s.body, env)
            env.pop(s.index, None)
        else:
            raise EvalError(f"unknown statement {s!r}")


def _assign_cell(env, s, val):
    target = env[s.name]
    idxs = [eval_expr(sub, env) for sub in s.subs]
    for depth, idx in enumerate(idxs):
        if not isinstance(target, list):
            raise EvalError(f"too many subscripts on '{s.name}'")
        if not V.is_int(idx):
            raise EvalError("subscript index is not an integer")
        if idx < 0 or idx >= len(target):
            raise EvalError(
                f"subscript out of bounds on '{s.name}': index {idx}, "
                f"length {len(target)}")
        if depth == len(idxs) - 1:
            target[idx] = val
        else:
            target = target[idx]


# ---------------------------------------------------------------------------
# chunked evaluation

def eval_concat_split(form, inputs, split_points):
    """Per-chunk states of a functional form, each chunk evaluated from
    the initial state on its own."""
    elems = inputs[form.split] if form.split else inputs["_elems"]
    points = [0] + sorted(split_points) + [len(elems)]
    states = []
    for a, b in zip(points, points[1:]):
        if not 0 <= a <= b <= len(elems):
            raise EvalError(f"split point out of range: {a}..{b}")
        states.append(form.run(inputs, elems=elems[a:b]))
    return states


# ---------------------------------------------------------------------------
# input sampling

class ShapeSpec:
    """Dimension and size ranges of one benchmark's inputs.

    ``seq_inputs`` maps each sequence input to its nesting depth;
    ``length_of`` maps scalar inputs that denote lengths to the
    (seq-name, depth) they measure; other scalar ints get values from
    the value domain.  ``values`` is the concrete scalar domain.
    """

    def __init__(self, seq_inputs, length_of=None, scalar_ints=(),
                 values=(-2, -1, 0, 1, 2), max_len=3, ragged=()):
        self.seq_inputs = dict(seq_inputs)
        self.length_of = dict(length_of or {})
        self.scalar_ints = tuple(scalar_ints)
        self.values = tuple(values)
        self.max_len = max_len
        self.ragged = set(ragged)

    @classmethod
    def for_program(cls, prog, values=(-2, -1, 0, 1, 2), max_len=3,
                    length_hints=None, ragged=()):
        seqs = {}
        for name, typ in prog.inputs.items():
            if isinstance(typ, SeqType):
                d = 0
                t = typ
                while isinstance(t, SeqType):
                    d += 1
                    t = t.elem
                seqs[name] = d
        length_of = dict(length_hints or {})
        scalar_ints = [
            n for n, t in prog.inputs.items()
            if not isinstance(t, SeqType) and n not in length_of
        ]
        return cls(seqs, length_of, scalar_ints, values, max_len, ragged)


TINY_MAX_CELLS = 4  # exhaustive value enumeration cap (|values|^cells)


def sample_inputs(spec: ShapeSpec, budget: int, seed: int = 0):
    """Deterministic input stream: exhaustive tiny bindings first, then
    seeded random draws up to ``budget``.

    The exhaustive stage enumerates every shape with side lengths up to
    ``max_len`` and every value assignment from the tiny domain, capped
    at TINY_MAX_CELLS cells per sequence (beyond that the value grid is
    astronomically large; random draws cover it instead).
    """
    yield from exhaustive_tiny(spec)
    rng = random.Random(seed)
    for _ in range(budget):
        yield random_input(spec, rng)


def select_inputs(spec: ShapeSpec, seed: int, budget: int = 0,
                  tiny_cap: int | None = None, max_len: int | None = None):
    """Input set for verification: the exhaustive tiny bindings (shuffled
    and truncated to tiny_cap when given) plus ``budget`` random draws,
    deterministically from the seed."""
    tiny = list(exhaustive_tiny(spec))
    rng = random.Random(seed)
    if tiny_cap is not None and len(tiny) > tiny_cap:
        rng.shuffle(tiny)
        tiny = tiny[:tiny_cap]
    out = tiny
    for _ in range(budget):
        out.append(random_input(spec, rng, max_len=max_len))
    return out


def exhaustive_tiny(spec: ShapeSpec):
    names = sorted(spec.seq_inputs)
    shape_sets = []
    for n in names:
        shape_sets.append(list(_shapes(spec.seq_inputs[n], spec.max_len)))
    for combo in itertools.product(*shape_sets):
        cells = [_cell_count(sh) for sh in combo]
        if sum(cells) > TINY_MAX_CELLS:
            continue
        grids = [
            itertools.product(spec.values, repeat=c) if c else [()]
            for c in cells
        ]
        for values in itertools.product(*grids):
            binding = {}
            for name, shape, vals in zip(names, combo, values):
                binding[name] = _build(shape, list(vals))
            _bind_lengths(spec, binding)
            for scalars in _scalar_grid(spec):
                yield {**binding, **scalars}


def _scalar_grid(spec):
    if not spec.scalar_ints:
        yield {}
        return
    # keep the grid small: three representative values per free scalar
    vals = sorted(set(spec.values))[:3] or (0,)
    for combo in itertools.product(vals, repeat=len(spec.scalar_ints)):
        yield dict(zip(spec.scalar_ints, combo))


def _shapes(depth, max_len):
    """All shape tuples for a nested sequence of the given depth; a zero
    length truncates deeper dimensions."""
    if depth == 0:
        yield ()
        return
    for n in range(max_len + 1):
        if n == 0:
            yield (0,)
            continue
        for rest in _shapes(depth - 1, max_len):
            yield (n,) + rest


def _cell_count(shape):
    total = 1
    for n in shape:
        total *= n
    return total


def _build(shape, flat):
    if len(shape) == 1:
        return [flat.pop(0) for _ in range(shape[0])]
    return [_build(shape[1:], flat) for _ in range(shape[0])]


def _bind_lengths(spec, binding):
    for scalar, (seq, depth) in spec.length_of.items():
        binding[scalar] = _measure(binding[seq], depth)


def _measure(v, depth):
    for _ in range(depth):
        if not isinstance(v, list):
            return 0
        if not v:
            return 0
        v = v[0]
    return len(v) if isinstance(v, list) else 0


def random_input(spec: ShapeSpec, rng, max_len=None):
    max_len = max_len or spec.max_len
    binding = {}
    for name in sorted(spec.seq_inputs):
        depth = spec.seq_inputs[name]
        lens = [rng.randint(0, max_len) for _ in range(depth)]
        binding[name] = _random_seq(lens, spec, rng, name)
    _bind_lengths(spec, binding)
    for scalar in spec.scalar_ints:
        binding[scalar] = rng.choice(spec.values)
    return binding


def _random_seq(lens, spec, rng, name):
    if not lens:
        return rng.choice(spec.values)
    n = lens[0]
    out = []
    for _ in range(n):
        sub = list(lens[1:])
        if name in spec.ragged and sub:
            sub[0] = rng.randint(0, spec.max_len)
        out.append(_random_seq(sub, spec, rng, name))
    return out


# ---------------------------------------------------------------------------
# JSON input documents

def load_input_file(path, prog=None):
    with open(path) as f:
        doc = json.load(f)
    return decode_inputs(doc, prog)


def decode_inputs(doc, prog=None):
    out = {k: _decode_value(v) for k, v in doc.items()}
    if prog is not None:
        check_inputs(prog, out)
    return out


def _decode_value(v):
    if isinstance(v, str):
        if v in ("inf", "+inf"):
            return V.POS_INF
        if v == "-inf":
            return V.NEG_INF
        raise EvalError(f"bad value in input document: {v!r}")
    if isinstance(v, list):
        return [_decode_value(x) for x in v]
    if isinstance(v, bool) or isinstance(v, int):
        return v
    raise EvalError(f"bad value in input document: {v!r}")


def encode_value(v):
    if isinstance(v, V.Inf):
        return "inf" if v.sign > 0 else "-inf"
    if isinstance(v, list):
        return [encode_value(x) for x in v]
    return v
