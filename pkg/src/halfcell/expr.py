"""Arithmetic expressions for problem coefficients.

Coefficients (diffusion matrices, drifts, sources, boundary data, graph
functions) are written as plain strings such as ``"1 + 0.5*sin(2*pi*y1)"``
and evaluated on numpy arrays.  Recognised names:

* variables ``x1..xN`` (slow variable), ``y1..yN`` (fast variable),
  ``p1..pN`` (gradient slots) and ``pn`` (gradient norm),
* the constant ``pi``,
* functions ``sin cos exp sqrt abs floor`` (one argument) and ``min max``
  (two arguments).

Operators are ``+ - * / ^`` with the usual precedence; ``^`` is right
associative and binds tighter than unary minus (``-2^2 == -4``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Expr",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifier",
    "ArityError",
    "EvaluationError",
    "parse",
    "evaluate",
    "to_source",
    "periodicity_defect",
]


class ExprError(ValueError):
    """Base class for expression problems."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownIdentifier(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class EvaluationError(ExprError, ArithmeticError):
    pass


FUNCTIONS = {
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "exp": (1, np.exp),
    "sqrt": (1, np.sqrt),
    "abs": (1, np.abs),
    "floor": (1, np.floor),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
}

_VARIABLE = re.compile(r"^(?:[xyp][1-9][0-9]*|pn)$")


# -- syntax tree ---------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Union[Num, Var, Unary, Binary, Call]


# -- tokenizer -------------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)"
    r"|(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {source[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, source: str):
        self.toks = _tokenize(source)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self) -> _Tok:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok: _Tok | None = None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, tok.line, tok.col)

    def expect(self, text: str) -> _Tok:
        tok = self.peek()
        if tok.text != text:
            what = "end of input" if tok.kind == "eof" else repr(tok.text)
            self.fail(f"expected {text!r}, found {what}")
        return self.take()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek().kind != "eof":
            self.fail(f"unexpected {self.peek().text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.take().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.take().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek().text in ("+", "-"):
            op = self.take().text
            operand = self.unary()
            return operand if op == "+" else Unary("-", operand)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek().text == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self) -> Node:
        tok = self.peek()
        if tok.kind == "num":
            self.take()
            return Num(float(tok.text))
        if tok.text == "(":
            self.take()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "name":
            self.take()
            if self.peek().text == "(":
                return self.call(tok)
            if tok.text == "pi":
                return Num(float(np.pi))
            if tok.text in FUNCTIONS:
                raise ArityError(f"function {tok.text!r} needs arguments", tok.line, tok.col)
            if not _VARIABLE.match(tok.text):
                raise UnknownIdentifier(f"unknown identifier {tok.text!r}", tok.line, tok.col)
            return Var(tok.text)
        what = "end of input" if tok.kind == "eof" else repr(tok.text)
        self.fail(f"unexpected {what}")

    def call(self, name: _Tok) -> Node:
        if name.text not in FUNCTIONS:
            raise UnknownIdentifier(f"unknown function {name.text!r}", name.line, name.col)
        self.expect("(")
        args = [self.expr()]
        while self.peek().text == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        arity = FUNCTIONS[name.text][0]
        if len(args) != arity:
            raise ArityError(
                f"{name.text} takes {arity} argument(s), got {len(args)}", name.line, name.col
            )
        return Call(name.text, tuple(args))


# -- public API --------------------------------------------------------------------


def _free_vars(node: Node, acc: set) -> set:
    if isinstance(node, Var):
        acc.add(node.name)
    elif isinstance(node, Unary):
        _free_vars(node.operand, acc)
    elif isinstance(node, Binary):
        _free_vars(node.left, acc)
        _free_vars(node.right, acc)
    elif isinstance(node, Call):
        for a in node.args:
            _free_vars(a, acc)
    return acc


class Expr:
    """A parsed, immutable expression."""

    __slots__ = ("source", "tree", "variables")

    def __init__(self, source: str, tree: Node):
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "tree", tree)
        object.__setattr__(self, "variables", frozenset(_free_vars(tree, set())))

    def __setattr__(self, name, value):
        raise AttributeError("Expr is immutable")

    def __call__(self, **bindings):
        return evaluate(self, bindings)

    def __repr__(self):
        return f"Expr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, Expr) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def depends_on(self, prefix: str) -> bool:
        return any(v.startswith(prefix) for v in self.variables)


def parse(source) -> Expr:
    """Parse ``source`` into an :class:`Expr`.

    Numbers are accepted as well and become constant expressions.
    """
    if isinstance(source, Expr):
        return source
    if isinstance(source, (int, float, np.floating, np.integer)):
        source = repr(float(source))
    return Expr(source, _Parser(source).parse())


def _eval(node: Node, env: Mapping):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise EvaluationError(f"unbound variable {node.name!r}") from None
    if isinstance(node, Unary):
        return -_eval(node.operand, env)
    if isinstance(node, Call):
        fn = FUNCTIONS[node.name][1]
        return fn(*(_eval(a, env) for a in node.args))
    left = _eval(node.left, env)
    right = _eval(node.right, env)
    op = node.op
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        if np.any(np.asarray(right) == 0):
            raise EvaluationError("division by zero")
        return left / right
    with np.errstate(invalid="ignore"):
        out = np.power(np.asarray(left, dtype=float), right)
    if np.any(np.isnan(out)) and not np.any(np.isnan(left)) and not np.any(np.isnan(right)):
        raise EvaluationError("power of a negative base with a non-integer exponent")
    return out


def evaluate(e: Expr, bindings: Mapping | None = None):
    """Evaluate ``e`` with the given bindings (scalars or broadcastable arrays).

    Returns a float for scalar inputs and an ndarray otherwise.
    """
    env = dict(bindings or {})
    with np.errstate(divide="raise", over="ignore"):
        try:
            out = _eval(e.tree, env)
        except FloatingPointError as exc:
            raise EvaluationError(str(exc)) from None
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}


def to_source(e: Expr | Node) -> str:
    """Render an expression back to text (fully parenthesised binary operations)."""
    node = e.tree if isinstance(e, Expr) else e
    if isinstance(node, Num):
        return repr(node.value) if node.value >= 0 else f"({node.value!r})"
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_source(a) for a in node.args)})"
    return f"({to_source(node.left)} {node.op} {to_source(node.right)})"


def periodicity_defect(e: Expr, dim: int, probes: int = 100, seed: int = 0,
                       prefix: str = "y", extra: Mapping | None = None) -> float:
    """Largest ``|e(y) - e(y + e_k)|`` over random probes and unit shifts.

    A value below ~1e-12 certifies (numerically) that ``e`` is Z^dim
    periodic in the variables ``prefix1..prefix{dim}``.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3.0, 3.0, size=(probes, dim))
    base = {f"{prefix}{k + 1}": pts[:, k] for k in range(dim)}
    base.update(extra or {})
    ref = np.broadcast_to(evaluate(e, base), (probes,))
    worst = 0.0
    for k in range(dim):
        shifted = dict(base)
        shifted[f"{prefix}{k + 1}"] = pts[:, k] + 1.0
        val = np.broadcast_to(evaluate(e, shifted), (probes,))
        worst = max(worst, float(np.max(np.abs(val - ref))))
    return worst
