"""A small arithmetic expression language for model coefficients.

Grammar (standard precedence, ^ binds tightest and associates right):

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := "-" factor | power
    power  := atom ("^" factor)?
    atom   := number | variable | name "(" expr ("," expr)? ")" | "(" expr ")"

Variables are x1..xd (1-based).  Functions: sin, cos, exp, log, sqrt, abs
take one argument; min and max take two.  Numbers accept decimal and
scientific notation.  Parsing reports the byte offset of the first offending
token; printing an AST and reparsing reproduces the AST exactly.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

__all__ = [
    "ExpressionError",
    "Expression",
    "Num",
    "Var",
    "Neg",
    "Bin",
    "Call",
    "parse_expression",
    "unparse",
    "evaluate",
    "compile_expression",
]


class ExpressionError(ValueError):
    """Tokenize/parse/arity failure, carrying the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, as written


@dataclass(frozen=True)
class Neg:
    child: "Expression"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expression", ...]


Expression = Union[Num, Var, Neg, Bin, Call]

_UNARY_FNS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_BINARY_FNS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "min": np.minimum,
    "max": np.maximum,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)
_VAR_RE = re.compile(r"^x([1-9][0-9]*)$")


def _tokenize(src: str) -> list[tuple[str, str, int]]:
    """(kind, text, byte offset) triples; kinds are num/name/op/end."""
    tokens: list[tuple[str, str, int]] = []
    pos = 0
    data = src.encode()
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None or m.end() == m.start():
            # whitespace-only tail is fine; anything else is a lex error
            rest = src[pos:]
            if rest.strip() == "":
                break
            bad = pos + len(rest) - len(rest.lstrip())
            raise ExpressionError(f"unexpected character {src[bad]!r}", len(src[:bad].encode()))
        kind = m.lastgroup or "op"
        tokens.append((kind, m.group(kind), len(src[: m.start(kind)].encode())))
        pos = m.end()
    tokens.append(("end", "", len(data)))
    return tokens


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, text, off = self.peek()
        if kind != "op" or text != op:
            raise ExpressionError(f"expected {op!r}, found {text or 'end of input'!r}", off)
        self.take()

    def parse(self) -> Expression:
        node = self.expr()
        kind, text, off = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected trailing {text!r}", off)
        return node

    def expr(self) -> Expression:
        node = self.term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.factor()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = Bin(op, node, self.factor())
        return node

    def factor(self) -> Expression:
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expression:
        node = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            node = Bin("^", node, self.factor())  # right-assoc, and 2^-3 works
        return node

    def atom(self) -> Expression:
        kind, text, off = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            m = _VAR_RE.match(text)
            if m:
                return Var(int(m.group(1)))
            if text in _UNARY_FNS or text in _BINARY_FNS:
                self.expect_op("(")
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect_op(")")
                want = 1 if text in _UNARY_FNS else 2
                if len(args) != want:
                    raise ExpressionError(f"{text} takes {want} argument(s), got {len(args)}", off)
                return Call(text, tuple(args))
            raise ExpressionError(f"unknown identifier {text!r}", off)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionError(f"expected a value, found {text or 'end of input'!r}", off)


def parse_expression(src: str) -> Expression:
    """Parse source text into an AST; errors carry the byte offset."""
    return _Parser(src).parse()


# precedence levels for printing; higher binds tighter
_LEVEL = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _level(node: Expression) -> int:
    if isinstance(node, Bin):
        return _LEVEL[node.op]
    if isinstance(node, Neg):
        return _LEVEL["neg"]
    return 5


def unparse(node: Expression) -> str:
    """Render an AST to source that reparses to the same AST.

    Parentheses are inserted exactly where the grammar would otherwise
    reassociate: the right operand of -, /, and same-level chains; the left
    operand of ^ (which is right-associative) and anything looser under it.
    """
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        child = unparse(node.child)
        return f"-({child})" if _level(node.child) < 3 else f"-{child}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(unparse(a) for a in node.args)})"
    lvl = _LEVEL[node.op]
    left = unparse(node.left)
    right = unparse(node.right)
    if node.op == "^":
        if _level(node.left) <= lvl:
            left = f"({left})"
        if _level(node.right) < 3:  # unary minus may follow ^ bare
            right = f"({right})"
    else:
        if _level(node.left) < lvl:
            left = f"({left})"
        if _level(node.right) <= lvl:
            right = f"({right})"
    return f"{left} {node.op} {right}" if node.op in "+-" else f"{left}{node.op}{right}"


def max_var_index(node: Expression) -> int:
    """Largest variable index mentioned (0 for constant expressions)."""
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Neg):
        return max_var_index(node.child)
    if isinstance(node, Bin):
        return max(max_var_index(node.left), max_var_index(node.right))
    if isinstance(node, Call):
        return max((max_var_index(a) for a in node.args), default=0)
    return 0


def evaluate(node: Expression, x: np.ndarray) -> np.ndarray:
    """Evaluate on a stacked (..., d) array of points, returning (...).

    Vectorized and silent about domain violations: log of a negative or a
    division by zero yields nan/inf in the affected slots (callers that
    require finite coefficients check downstream).  The variable x_k reads
    component k-1 of the final axis.
    """
    x = np.asarray(x, dtype=float)
    base = np.zeros(x.shape[:-1])
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        return np.asarray(_eval(node, x), dtype=float) + base  # broadcast constants up


def _eval(node: Expression, x: np.ndarray):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.index > x.shape[-1]:
            raise ExpressionError(f"x{node.index} out of range for dimension {x.shape[-1]}")
        return x[..., node.index - 1]
    if isinstance(node, Neg):
        return -_eval(node.child, x)
    if isinstance(node, Call):
        fn = _UNARY_FNS.get(node.name) or _BINARY_FNS[node.name]
        return fn(*(_eval(a, x) for a in node.args))
    a = _eval(node.left, x)
    b = _eval(node.right, x)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return np.power(a, b)


def compile_expression(src: str, dim: int) -> Callable[[np.ndarray], np.ndarray]:
    """Parse and bind to a dimension, returning a batched evaluator.

    Raises ExpressionError if the source mentions a variable beyond x<dim>.
    """
    node = parse_expression(src)
    k = max_var_index(node)
    if k > dim:
        raise ExpressionError(f"expression uses x{k} but the model dimension is {dim}")
    return lambda pts: evaluate(node, pts)
