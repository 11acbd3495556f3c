"""Arithmetic expression mini-language applied sample-wise to signals.

Grammar (``^`` is right-associative and binds tighter than unary minus):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | 'x' | func '(' args ')' | '(' expr ')'
    func   := 'abs' | 'sqrt' | 'log' | 'exp' | 'min' | 'max'

so ``2^3^2`` is 512 and ``-2^2`` is -4. ``x`` stands for the sample value;
all arithmetic is float64. ``log``/``sqrt`` outside their domain raise
DomainError with the first offending sample position; division by zero
follows IEEE semantics (inf/nan propagate and are counted).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .data import PortType
from .errors import DomainError, ExprSyntaxError
from .graph import Context, Node, slot
from .registry import register

_UNARY_FUNCS = {"abs", "sqrt", "log", "exp"}
_BINARY_FUNCS = {"min", "max"}
FUNCTIONS = _UNARY_FUNCS | _BINARY_FUNCS


# -- AST ----------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Neg:
    operand: "ExprAst"


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    left: "ExprAst"
    right: "ExprAst"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


ExprAst = Union[Num, Var, Neg, BinOp, Call]


# -- tokenizer -------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
  | (?P<ws>\s+)
""", re.VERBOSE)


@dataclass(frozen=True)
class _Token:
    type: str  # num | ident | op | end
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[i]!r}", position=i)
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(), i))
        i = m.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


# -- parser -----------------------------------------------------------------------


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def cur(self) -> _Token:
        return self.tokens[self.i]

    def eat(self, text: str) -> None:
        if self.cur.text != text:
            raise ExprSyntaxError(
                f"expected {text!r}, got {self.cur.text or 'end of input'!r}",
                position=self.cur.pos)
        self.i += 1

    def parse(self) -> ExprAst:
        node = self.expr()
        if self.cur.type != "end":
            raise ExprSyntaxError(
                f"unexpected {self.cur.text!r}", position=self.cur.pos)
        return node

    def expr(self) -> ExprAst:
        node = self.term()
        while self.cur.text in ("+", "-"):
            op = self.cur.text
            self.i += 1
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> ExprAst:
        node = self.unary()
        while self.cur.text in ("*", "/"):
            op = self.cur.text
            self.i += 1
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> ExprAst:
        if self.cur.text == "-":
            self.i += 1
            return Neg(self.unary())
        return self.power()

    def power(self) -> ExprAst:
        node = self.atom()
        if self.cur.text == "^":
            self.i += 1
            node = BinOp("^", node, self.unary())
        return node

    def atom(self) -> ExprAst:
        tok = self.cur
        if tok.type == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.type == "ident":
            self.i += 1
            if tok.text == "x":
                return Var()
            if tok.text in FUNCTIONS:
                self.eat("(")
                args = [self.expr()]
                while self.cur.text == ",":
                    self.i += 1
                    args.append(self.expr())
                self.eat(")")
                want = 1 if tok.text in _UNARY_FUNCS else 2
                if len(args) != want:
                    raise ExprSyntaxError(
                        f"{tok.text} takes {want} argument(s), got {len(args)}",
                        position=tok.pos)
                return Call(tok.text, tuple(args))
            raise ExprSyntaxError(
                f"unknown name {tok.text!r} (variable is 'x')", position=tok.pos)
        if tok.text == "(":
            self.i += 1
            node = self.expr()
            self.eat(")")
            return node
        raise ExprSyntaxError(
            f"unexpected {tok.text or 'end of input'!r}", position=tok.pos)


def parse_expr(source: str) -> ExprAst:
    return _Parser(source).parse()


# -- pretty printer ---------------------------------------------------------------

_LEVEL_ADD, _LEVEL_MUL, _LEVEL_NEG, _LEVEL_POW, _LEVEL_ATOM = 1, 2, 3, 4, 5


def _level(node: ExprAst) -> int:
    if isinstance(node, BinOp):
        if node.op in "+-":
            return _LEVEL_ADD
        if node.op in "*/":
            return _LEVEL_MUL
        return _LEVEL_POW
    if isinstance(node, Neg):
        return _LEVEL_NEG
    return _LEVEL_ATOM


def _wrap(text: str, need: bool) -> str:
    return f"({text})" if need else text


def to_source(node: ExprAst) -> str:
    """Render an AST back to a string that parses to the same tree."""
    if isinstance(node, Num):
        v = node.value
        if float(v).is_integer() and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_source(node.operand)
        return "-" + _wrap(inner, _level(node.operand) < _LEVEL_NEG)
    if isinstance(node, BinOp):
        lvl = _level(node)
        left = to_source(node.left)
        right = to_source(node.right)
        if node.op == "^":
            # left slot is an atom, right slot is a unary expression
            left = _wrap(left, _level(node.left) < _LEVEL_ATOM)
            right = _wrap(right, _level(node.right) < _LEVEL_NEG)
            return f"{left}^{right}"
        left = _wrap(left, _level(node.left) < lvl)
        right = _wrap(right, _level(node.right) <= lvl)
        return f"{left} {node.op} {right}"
    raise TypeError(f"not an expression node: {node!r}")


# -- evaluation ---------------------------------------------------------------------


def _first_bad(mask) -> int:
    arr = np.asarray(mask)
    if arr.ndim == 0:
        return 0
    return int(np.argmax(arr))


def _eval(node: ExprAst, x: np.ndarray) -> np.ndarray:
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Neg):
        return -_eval(node.operand, x)
    if isinstance(node, BinOp):
        left = _eval(node.left, x)
        right = _eval(node.right, x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if node.op == "+":
                return left + right
            if node.op == "-":
                return left - right
            if node.op == "*":
                return left * right
            if node.op == "/":
                return np.divide(left, right)
            return np.power(left, right)
    if isinstance(node, Call):
        args = [_eval(a, x) for a in node.args]
        if node.func == "abs":
            return np.abs(args[0])
        if node.func == "exp":
            with np.errstate(over="ignore"):
                return np.exp(args[0])
        if node.func == "sqrt":
            bad = np.asarray(args[0]) < 0
            if np.any(bad):
                raise DomainError("sqrt", _first_bad(bad))
            return np.sqrt(args[0])
        if node.func == "log":
            bad = np.asarray(args[0]) <= 0
            if np.any(bad):
                raise DomainError("log", _first_bad(bad))
            with np.errstate(divide="ignore"):
                return np.log(args[0])
        if node.func == "min":
            return np.minimum(args[0], args[1])
        return np.maximum(args[0], args[1])
    raise TypeError(f"not an expression node: {node!r}")


class ExprProgram:
    """A compiled expression, applied elementwise to float64 arrays.

    Stateless across calls except for ``nonfinite_total``, the cumulative
    count of non-finite output samples (inf or nan from divisions etc).
    """

    def __init__(self, source: str):
        self.source = source
        self.ast = parse_expr(source)
        self.nonfinite_total = 0

    def __call__(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.float64)
        out = _eval(self.ast, arr)
        out = np.broadcast_to(np.asarray(out, dtype=np.float64), arr.shape).copy()
        bad = np.count_nonzero(~np.isfinite(out))
        if bad:
            self.nonfinite_total += int(bad)
        return out

    def __repr__(self) -> str:
        return f"ExprProgram({self.source!r})"


def evaluate(source: str, x) -> np.ndarray:
    return ExprProgram(source)(x)


def eval_expression(ast_or_program, chunk):
    """Apply an expression elementwise to a chunk's samples."""
    if isinstance(ast_or_program, ExprProgram):
        program = ast_or_program
    elif isinstance(ast_or_program, str):
        program = ExprProgram(ast_or_program)
    else:
        program = ExprProgram(to_source(ast_or_program))
    return chunk.with_data(program(chunk.data))


@register
class ApplyFunction(Node):
    """Elementwise arithmetic expression over every sample (variable x)."""

    kind = "ApplyFunction"
    input_slots = (slot("in", PortType.SIGNAL),)
    output_type = PortType.SIGNAL

    def __init__(self, name: str, *, expr: str):
        super().__init__(name)
        self.program = ExprProgram(expr)

    def update(self, ctx: Context) -> None:
        for chunk in self.inputs[0]:
            before = self.program.nonfinite_total
            self.out.push(chunk.with_data(self.program(chunk.data)))
            grew = self.program.nonfinite_total - before
            if grew:
                if not self.counters["nonfinite_samples"]:
                    self.log.warning(
                        "expression %r produced non-finite samples", self.program.source)
                self.counters["nonfinite_samples"] += grew

