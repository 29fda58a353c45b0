"""The imperative input language: declarations, statements, parser.

A program declares read-only inputs and initialized state variables,
then runs a block of assignments, conditionals, and counted for-loops.
The exact grammar is documented in docs/dsl.md.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .expr import (
    INDEX,
    INPUT,
    STATE,
    Binary,
    Const,
    Fill,
    Len,
    Node,
    Subscript,
    Ternary,
    Unary,
    Var,
    children,
    rebuild,
    walk,
)
from .values import BOOL, INT, NEG_INF, POS_INF, ScalarType, SeqType, seq_dim


class SourceError(Exception):
    def __init__(self, msg, line=None, col=None):
        self.msg = msg
        self.line = line
        self.col = col
        where = f" at {line}:{col}" if line is not None else ""
        super().__init__(f"{msg}{where}")


class ParseError(SourceError):
    pass


class ValidationError(SourceError):
    pass


# ---------------------------------------------------------------------------
# AST

@dataclass
class Assign:
    name: str
    subs: tuple  # tuple of index expressions, outermost first
    rhs: Node
    line: int = 0

    def target_text(self):
        return self.name + "".join(f"[...]" for _ in self.subs)


@dataclass
class If:
    cond: Node
    then: list
    orelse: list
    line: int = 0


@dataclass
class For:
    index: str
    lo: Node
    hi: Node
    body: list
    line: int = 0


@dataclass
class Program:
    inputs: dict  # name -> type
    states: dict  # name -> (type, init expr)
    body: list
    source_name: str = "<string>"

    @property
    def svar(self):
        return set(self.states)

    @property
    def ivar(self):
        return set(self.inputs)

    def state_type(self, name):
        return self.states[name][0]

    def state_init(self, name):
        return self.states[name][1]


# ---------------------------------------------------------------------------
# tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>:=|\.\.|==|!=|<=|>=|&&|\|\||[-+*/<>!?:;,=(){}\[\]\.])
    """,
    re.VERBOSE,
)

KEYWORDS = {
    "input", "state", "if", "else", "for", "in",
    "true", "false", "inf", "min", "max", "fill", "len",
    "int", "bool", "seq",
}


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text):
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        lexeme = m.group(0)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, lexeme, line, col))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            col = len(lexeme) - lexeme.rfind("\n")
        else:
            col += len(lexeme)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# parser

class _Parser:
    def __init__(self, tokens, name_kinds):
        self.toks = tokens
        self.i = 0
        # name -> STATE | INPUT; loop indexes are tracked in a scope stack
        self.name_kinds = dict(name_kinds)
        self.index_stack = []

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise ParseError(msg, tok.line, tok.col)

    def expect(self, text):
        t = self.peek()
        if t.text != text:
            self.error(f"expected {text!r}, found {t.text!r}")
        return self.next()

    def at(self, text):
        return self.peek().text == text

    def accept(self, text):
        if self.at(text):
            self.next()
            return True
        return False

    # -- types

    def parse_type(self):
        t = self.next()
        if t.text == "int":
            return INT
        if t.text == "bool":
            return BOOL
        if t.text == "seq":
            self.expect("<")
            elem = self.parse_type()
            self.expect(">")
            return SeqType(elem)
        self.error(f"expected a type, found {t.text!r}", t)

    # -- expressions

    def parse_expr(self):
        return self.parse_ternary()

    def parse_ternary(self):
        cond = self.parse_or()
        if self.accept("?"):
            then = self.parse_expr()
            self.expect(":")
            orelse = self.parse_expr()
            return _desugar_minmax(Ternary(cond, then, orelse))
        return cond

    def parse_or(self):
        e = self.parse_and()
        while self.at("||"):
            self.next()
            e = Binary("||", e, self.parse_and())
        return e

    def parse_and(self):
        e = self.parse_cmp()
        while self.at("&&"):
            self.next()
            e = Binary("&&", e, self.parse_cmp())
        return e

    def parse_cmp(self):
        e = self.parse_add()
        if self.peek().text in ("<", "<=", ">", ">=", "==", "!="):
            op = self.next().text
            return Binary(op, e, self.parse_add())
        return e

    def parse_add(self):
        e = self.parse_mul()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            e = Binary(op, e, self.parse_mul())
        return e

    def parse_mul(self):
        e = self.parse_unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            e = Binary(op, e, self.parse_unary())
        return e

    def parse_unary(self):
        if self.accept("-"):
            operand = self.parse_unary()
            if isinstance(operand, Const) and operand.value is POS_INF:
                return Const(NEG_INF)
            return Unary("-", operand)
        if self.accept("!"):
            return Unary("!", self.parse_unary())
        return self.parse_postfix()

    def parse_postfix(self):
        e = self.parse_atom()
        while self.at("["):
            self.next()
            idx = self.parse_expr()
            self.expect("]")
            e = Subscript(e, idx)
        return e

    def parse_atom(self):
        t = self.next()
        if t.kind == "num":
            return Const(int(t.text))
        if t.text == "true":
            return Const(True)
        if t.text == "false":
            return Const(False)
        if t.text == "inf":
            return Const(POS_INF)
        if t.text in ("min", "max"):
            self.expect("(")
            a = self.parse_expr()
            self.expect(",")
            b = self.parse_expr()
            self.expect(")")
            return Binary(t.text, a, b)
        if t.text == "fill":
            self.expect("(")
            n = self.parse_expr()
            self.expect(",")
            v = self.parse_expr()
            self.expect(")")
            return Fill(n, v)
        if t.text == "len":
            self.expect("(")
            e = self.parse_expr()
            self.expect(")")
            return Len(e)
        if t.text == "(":
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.kind == "name" and t.text not in KEYWORDS:
            return self.make_var(t)
        self.error(f"unexpected token {t.text!r}", t)

    def make_var(self, tok):
        name = tok.text
        for idx in reversed(self.index_stack):
            if idx == name:
                return Var(name, INDEX)
        kind = self.name_kinds.get(name)
        if kind is None:
            raise ParseError(f"use of undeclared variable '{name}'", tok.line, tok.col)
        return Var(name, kind)

    # -- statements

    def parse_block(self):
        self.expect("{")
        stmts = []
        while not self.at("}"):
            stmts.append(self.parse_stmt())
        self.expect("}")
        return stmts

    def parse_stmt(self):
        t = self.peek()
        if t.text == "if":
            self.next()
            self.expect("(")
            cond = self.parse_expr()
            self.expect(")")
            then = self.parse_block()
            orelse = self.parse_block() if self.accept("else") else []
            return If(cond, then, orelse, line=t.line)
        if t.text == "for":
            self.next()
            idx = self.next()
            if idx.kind != "name" or idx.text in KEYWORDS:
                self.error("expected a loop index name", idx)
            if idx.text in self.name_kinds or idx.text in self.index_stack:
                self.error(f"loop index '{idx.text}' shadows another variable", idx)
            self.expect("in")
            lo = self.parse_expr()
            self.expect("..")
            hi = self.parse_expr()
            self.index_stack.append(idx.text)
            body = self.parse_block()
            self.index_stack.pop()
            return For(idx.text, lo, hi, body, line=t.line)
        if t.kind == "name" and t.text not in KEYWORDS:
            name_tok = self.next()
            subs = []
            while self.at("["):
                self.next()
                subs.append(self.parse_expr())
                self.expect("]")
            self.expect(":=")
            rhs = self.parse_expr()
            self.expect(";")
            kind = self.name_kinds.get(name_tok.text)
            if kind is None:
                if name_tok.text in self.index_stack:
                    raise ParseError(
                        f"assignment to loop index '{name_tok.text}'",
                        name_tok.line, name_tok.col)
                raise ParseError(
                    f"assignment to undeclared variable '{name_tok.text}'",
                    name_tok.line, name_tok.col)
            if kind == INPUT:
                raise ParseError(
                    f"write to input variable '{name_tok.text}'",
                    name_tok.line, name_tok.col)
            return Assign(name_tok.text, tuple(subs), rhs, line=name_tok.line)
        self.error(f"expected a statement, found {t.text!r}")


def _desugar_minmax(t):
    """Turn comparison-selection ternaries into min/max so the
    normalization rules see them: (a < b ? a : b) becomes min(a, b)."""
    c = t.cond
    if isinstance(c, Binary) and c.op in ("<", "<=", ">", ">="):
        a, b = c.left, c.right
        small_first = c.op in ("<", "<=")
        if (t.if_true, t.if_false) == (a, b):
            return Binary("min" if small_first else "max", a, b)
        if (t.if_true, t.if_false) == (b, a):
            return Binary("max" if small_first else "min", a, b)
    return t


# ---------------------------------------------------------------------------
# top level

def parse(text, source_name="<string>"):
    """Parse and validate a program."""
    tokens = tokenize(text)
    inputs = {}
    states = {}
    i = 0

    # declarations first; the parser needs the state/input split to
    # classify variable occurrences
    decl_parser = _Parser(tokens, {})
    while decl_parser.peek().text in ("input", "state"):
        kw = decl_parser.next()
        name = decl_parser.next()
        if name.kind != "name" or name.text in KEYWORDS:
            decl_parser.error("expected a variable name", name)
        if name.text in inputs or name.text in states:
            decl_parser.error(f"variable '{name.text}' declared twice", name)
        decl_parser.expect(":")
        typ = decl_parser.parse_type()
        if kw.text == "input":
            decl_parser.expect(";")
            inputs[name.text] = typ
            decl_parser.name_kinds[name.text] = INPUT
        else:
            decl_parser.expect("=")
            init = decl_parser.parse_expr()
            decl_parser.expect(";")
            states[name.text] = (typ, init)
            decl_parser.name_kinds[name.text] = STATE

    body = []
    while not decl_parser.at("") and decl_parser.peek().kind != "eof":
        body.append(decl_parser.parse_stmt())

    prog = Program(inputs, states, body, source_name)
    validate(prog)
    return prog


def parse_file(path):
    with open(path) as f:
        return parse(f.read(), source_name=str(path))


def parse_expr_text(text, name_kinds):
    """Parse a standalone expression; name_kinds maps names to var kinds."""
    p = _Parser(tokenize(text), name_kinds)
    e = p.parse_expr()
    if p.peek().kind != "eof":
        p.error("trailing input after expression")
    return e


# ---------------------------------------------------------------------------
# validation

def validate(prog):
    # init expressions may only read inputs
    for name, (typ, init) in prog.states.items():
        for n in walk(init):
            if isinstance(n, Var) and n.kind == STATE:
                raise ValidationError(
                    f"init of '{name}' reads state variable '{n.name}'")
        _check_expr_types(init, prog, {}, f"init of '{name}'")
        it = _expr_type(init, prog, {})
        if it is not None and it != typ and not (
            isinstance(typ, SeqType) and isinstance(it, SeqType)
        ):
            raise ValidationError(f"init of '{name}' has type {it!r}, declared {typ!r}")

    _validate_block(prog.body, prog, {})


def _validate_block(stmts, prog, indexes):
    for s in stmts:
        if isinstance(s, Assign):
            t = prog.state_type(s.name)
            for sub in s.subs:
                if not isinstance(t, SeqType):
                    raise ValidationError(
                        f"too many subscripts on '{s.name}'", s.line)
                _check_expr_types(sub, prog, indexes, "subscript")
                t = t.elem
            _check_expr_types(s.rhs, prog, indexes, f"assignment to '{s.name}'")
            rt = _expr_type(s.rhs, prog, indexes)
            if isinstance(t, ScalarType) and rt is not None and rt != t:
                raise ValidationError(
                    f"assignment to '{s.name}' has type {rt!r}, expected {t!r}",
                    s.line)
        elif isinstance(s, If):
            _check_expr_types(s.cond, prog, indexes, "if condition")
            ct = _expr_type(s.cond, prog, indexes)
            if ct is not None and ct != BOOL:
                raise ValidationError("if condition is not boolean", s.line)
            _validate_block(s.then, prog, indexes)
            _validate_block(s.orelse, prog, indexes)
        elif isinstance(s, For):
            _check_expr_types(s.lo, prog, indexes, "loop bound")
            _check_expr_types(s.hi, prog, indexes, "loop bound")
            inner = dict(indexes)
            inner[s.index] = INT
            _validate_block(s.body, prog, inner)
        else:
            raise ValidationError(f"unknown statement {s!r}")


def _type_env(prog, indexes):
    env = {}
    for n, t in prog.inputs.items():
        env[n] = t
    for n, (t, _) in prog.states.items():
        env[n] = t
    env.update(indexes)
    return env


def _expr_type(e, prog, indexes):
    from .expr import infer_type

    return infer_type(e, _type_env(prog, indexes))


def _check_expr_types(e, prog, indexes, where):
    """Structural checks: subscripting, operand kinds."""
    from .expr import infer_type

    env = _type_env(prog, indexes)

    def check(n):
        t = infer_type(n, env)
        for c in children(n):
            check(c)
        if isinstance(n, Subscript):
            bt = infer_type(n.base, env)
            if bt is not None and not isinstance(bt, SeqType):
                raise ValidationError(f"subscript of non-sequence in {where}")
        if isinstance(n, Binary):
            lt = infer_type(n.left, env)
            rt = infer_type(n.right, env)
            if n.op in ("&&", "||"):
                for side in (lt, rt):
                    if side is not None and side != BOOL:
                        raise ValidationError(
                            f"'{n.op}' applied to non-boolean in {where}")
            elif n.op in ("+", "-", "*", "/", "min", "max", "<", "<=", ">", ">="):
                for side in (lt, rt):
                    if side is not None and side == BOOL:
                        raise ValidationError(
                            f"'{n.op}' applied to a boolean in {where}")
        if isinstance(n, Ternary):
            ct = infer_type(n.cond, env)
            if ct is not None and ct != BOOL:
                raise ValidationError(f"ternary condition not boolean in {where}")
        return t

    check(e)


def program_operators(prog):
    """All operators appearing in the program text (seeds the synthesis
    grammar's operator set)."""
    ops = set()

    def from_expr(e):
        for n in walk(e):
            if isinstance(n, Binary):
                ops.add(n.op)
            elif isinstance(n, Unary):
                ops.add(n.op)

    def from_block(stmts):
        for s in stmts:
            if isinstance(s, Assign):
                from_expr(s.rhs)
                for sub in s.subs:
                    from_expr(sub)
            elif isinstance(s, If):
                from_expr(s.cond)
                from_block(s.then)
                from_block(s.orelse)
            elif isinstance(s, For):
                from_expr(s.lo)
                from_expr(s.hi)
                from_block(s.body)

    for _, (_, init) in prog.states.items():
        from_expr(init)
    from_block(prog.body)
    return ops
