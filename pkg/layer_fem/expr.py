"""
Expression language for problem coefficients.

Coefficients b(x), c(x), f(x) and semilinear reaction terms f(x, u) are given as
strings over the variables x and u, named parameters (eps by default) and the
constant pi. Strings are parsed into an immutable AST that can be evaluated on
numpy arrays, differentiated symbolically and printed back to a string that
parses to the same tree.

Grammar, loosest binding first::

    sum     := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := primary ('^' unary)?
    primary := number | name | name '(' sum (',' sum)* ')' | '(' sum ')'

so '^' is right-associative and binds tighter than unary minus (-x^2 = -(x^2)).
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from layer_fem.errors import (
    ExprDomainError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownIdentifierError,
)

logger = logging.getLogger(__name__)

# Names understood by every expression.
VARIABLES = ("x", "u")
DEFAULT_PARAMETERS = ("eps",)
CONSTANTS = {"pi": math.pi}

# Function name -> arity.
FUNCTIONS = {
    "exp": 1,
    "ln": 1,
    "sqrt": 1,
    "sin": 1,
    "cos": 1,
    "abs": 1,
    "sign": 1,
    "pow": 2,
}

_UNARY_NUMPY = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
    "sign": np.sign,
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


class Expr:
    """Base class of all expression nodes.

    Nodes are frozen dataclasses compared structurally. The arithmetic operators
    build new trees through the constant-folding constructors below, so
    ``Var("x") * 2 + 1`` is a convenient way to assemble coefficients in code.
    """

    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __pow__(self, other):
        return power(self, as_expr(other))

    def __neg__(self):
        return neg(self)

    def __str__(self):
        return to_string(self)


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Const(Expr):
    name: str


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple


@dataclass(frozen=True)
class Tabulated(Expr):
    """A numerically defined function of one argument.

    ``function`` must be vectorized and expose ``derivative()`` returning the
    next derivative (scipy's PPoly and CubicSpline do).
    """

    name: str
    arg: Expr
    function: Any = field(compare=False, repr=False)


ZERO = Num(0.0)
ONE = Num(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    return Num(float(value))


# ---------------------------------------------------------------------------
# Constructors with literal constant folding
# ---------------------------------------------------------------------------

def _is_num(e, value=None):
    return isinstance(e, Num) and (value is None or e.value == value)


def add(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return BinOp("+", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a, -1.0):
        return neg(b)
    if _is_num(b, -1.0):
        return neg(a)
    return BinOp("*", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_num(a) and _is_num(b) and b.value != 0.0:
        return Num(a.value / b.value)
    if _is_num(b, 1.0):
        return a
    if _is_num(a, 0.0) and _is_num(b) and b.value != 0.0:
        return ZERO
    return BinOp("/", a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def power(a: Expr, n: Expr) -> Expr:
    if _is_num(n, 1.0):
        return a
    if _is_num(n, 0.0):
        return ONE
    if _is_num(a) and _is_num(n):
        if a.value > 0.0 or (float(n.value).is_integer() and (a.value != 0.0 or n.value > 0)):
            return Num(a.value ** n.value)
    return BinOp("^", a, n)


def call(func: str, *args: Expr) -> Expr:
    if all(isinstance(arg, Num) for arg in args):
        try:
            return Num(evaluate(Call(func, tuple(args)), {}))
        except ExprDomainError:
            pass
    return Call(func, tuple(args))


def exp(a):
    return call("exp", as_expr(a))


def ln(a):
    return call("ln", as_expr(a))


def sqrt(a):
    return call("sqrt", as_expr(a))


def sin(a):
    return call("sin", as_expr(a))


def cos(a):
    return call("cos", as_expr(a))


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(source):
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ExprSyntaxError(source, _byte_offset(source, pos), "a number, name, operator or parenthesis")
        kind = match.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, match.group(), pos))
        pos = match.end()
    tokens.append(_Token("end", "", len(source)))
    return tokens


def _byte_offset(source: str, pos: int) -> int:
    return len(source[:pos].encode("utf-8"))


class _Parser:
    """Recursive-descent parser over the token list."""

    def __init__(self, source, names):
        self.source = source
        self.names = frozenset(names)
        self.tokens = _tokenize(source)
        self.index = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.index]

    def _error(self, expected):
        raise ExprSyntaxError(self.source, _byte_offset(self.source, self.current.pos), expected)

    def _accept(self, text):
        if self.current.kind == "op" and self.current.text == text:
            self.index += 1
            return True
        return False

    def _expect(self, text):
        if not self._accept(text):
            self._error(f"'{text}'")

    def parse(self) -> Expr:
        node = self.parse_sum()
        if self.current.kind != "end":
            self._error("an operator or end of input")
        return node

    def parse_sum(self):
        node = self.parse_term()
        while self.current.kind == "op" and self.current.text in "+-":
            op = self.current.text
            self.index += 1
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_unary()
        while self.current.kind == "op" and self.current.text in "*/":
            op = self.current.text
            self.index += 1
            node = BinOp(op, node, self.parse_unary())
        return node

    def parse_unary(self):
        if self._accept("-"):
            return Neg(self.parse_unary())
        if self._accept("+"):
            return self.parse_unary()
        return self.parse_power()

    def parse_power(self):
        base = self.parse_primary()
        if self._accept("^"):
            return BinOp("^", base, self.parse_unary())
        return base

    def parse_primary(self):
        token = self.current
        if token.kind == "number":
            self.index += 1
            return Num(float(token.text))
        if token.kind == "name":
            self.index += 1
            if self._accept("("):
                return self._parse_call(token)
            if token.text in CONSTANTS:
                return Const(token.text)
            if token.text in self.names:
                return Var(token.text)
            raise UnknownIdentifierError(token.text, self.names | set(CONSTANTS))
        if self._accept("("):
            node = self.parse_sum()
            self._expect(")")
            return node
        self._error("a number, name or '('")

    def _parse_call(self, token):
        if token.text not in FUNCTIONS:
            raise UnknownIdentifierError(token.text, set(FUNCTIONS))
        args = [self.parse_sum()]
        while self._accept(","):
            args.append(self.parse_sum())
        arity = FUNCTIONS[token.text]
        if len(args) != arity:
            self._error(f"{arity} argument(s) for {token.text}()")
        self._expect(")")
        return Call(token.text, tuple(args))


def parse(source: str, parameters: Iterable[str] = DEFAULT_PARAMETERS, variables: Iterable[str] = VARIABLES) -> Expr:
    """
    Parses an expression string.

    Args:
        source (str): Expression text, e.g. "-(x+1)*x*(x-0.5)*(x-27/30)^3".
        parameters (iterable of str): Named parameters the expression may use.
        variables (iterable of str): Variable names the expression may use.

    Returns:
        Expr: The parsed tree.

    Raises:
        ExprSyntaxError: On malformed input, with the byte offset of the failure.
        UnknownIdentifierError: On a name that is not a variable, parameter,
            constant or function.
    """
    return _Parser(source, set(variables) | set(parameters)).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

def to_string(e: Expr) -> str:
    """Prints an expression so that parse(to_string(e)) rebuilds the same tree."""
    if isinstance(e, Num):
        text = repr(float(e.value))
        return f"({text})" if e.value < 0 else text
    if isinstance(e, (Const, Var)):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_string(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_string(e.left)} {e.op} {to_string(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_string(arg) for arg in e.args)})"
    if isinstance(e, Tabulated):
        return f"{e.name}({to_string(e.arg)})"
    raise TypeError(f"Not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# Tree utilities
# ---------------------------------------------------------------------------

def free_symbols(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset([e.name])
    if isinstance(e, Neg):
        return free_symbols(e.operand)
    if isinstance(e, BinOp):
        return free_symbols(e.left) | free_symbols(e.right)
    if isinstance(e, Call):
        return frozenset().union(*(free_symbols(arg) for arg in e.args))
    if isinstance(e, Tabulated):
        return free_symbols(e.arg)
    return frozenset()


def substitute(e: Expr, name: str, replacement: Expr) -> Expr:
    """Replaces every occurrence of variable ``name`` with ``replacement``."""
    if isinstance(e, Var):
        return replacement if e.name == name else e
    if isinstance(e, Neg):
        return neg(substitute(e.operand, name, replacement))
    if isinstance(e, BinOp):
        left = substitute(e.left, name, replacement)
        right = substitute(e.right, name, replacement)
        return _BINARY_BUILDERS[e.op](left, right)
    if isinstance(e, Call):
        return call(e.func, *(substitute(arg, name, replacement) for arg in e.args))
    if isinstance(e, Tabulated):
        return Tabulated(e.name, substitute(e.arg, name, replacement), e.function)
    return e


_BINARY_BUILDERS = {"+": add, "-": sub, "*": mul, "/": div, "^": power}


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _first_index(mask):
    hits = np.flatnonzero(mask)
    return int(hits[0]) if hits.size else None


def _domain_check(e, mask, reason):
    if np.any(mask):
        raise ExprDomainError(to_string(e), reason, _first_index(np.atleast_1d(mask)))


def _eval_power(e, base, exponent):
    integral = np.equal(np.mod(exponent, 1.0), 0.0)
    _domain_check(e, (base < 0) & ~integral, "negative base with non-integer exponent")
    _domain_check(e, (base == 0) & (exponent < 0), "division by zero")
    return np.power(base, exponent)


def _eval(e, env):
    if isinstance(e, Num):
        return np.float64(e.value)
    if isinstance(e, Const):
        return np.float64(CONSTANTS[e.name])
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -_eval(e.operand, env)
    if isinstance(e, BinOp):
        left = _eval(e.left, env)
        right = _eval(e.right, env)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if e.op == "/":
            _domain_check(e, np.broadcast_to(right == 0, np.broadcast(left, right).shape), "division by zero")
            return left / right
        left, right = np.broadcast_arrays(left, right)
        return _eval_power(e, left, right)
    if isinstance(e, Call):
        args = [_eval(arg, env) for arg in e.args]
        if e.func in _UNARY_NUMPY:
            return _UNARY_NUMPY[e.func](args[0])
        if e.func == "ln":
            _domain_check(e, args[0] <= 0, "logarithm of a nonpositive number")
            return np.log(args[0])
        if e.func == "sqrt":
            _domain_check(e, args[0] < 0, "square root of a negative number")
            return np.sqrt(args[0])
        base, exponent = np.broadcast_arrays(*args)
        return _eval_power(e, base, exponent)
    if isinstance(e, Tabulated):
        return np.asarray(e.function(_eval(e.arg, env)), dtype=float)
    raise TypeError(f"Not an expression node: {e!r}")


def evaluate(e: Expr, bindings: Mapping[str, Any]):
    """
    Evaluates an expression in IEEE double precision.

    Bindings may be scalars or numpy arrays; the result is broadcast to the
    common shape of the bindings, and a plain float is returned when that shape
    is scalar.

    Raises:
        UnboundVariableError: If a free variable has no binding.
        ExprDomainError: On ln of a nonpositive number, sqrt of a negative
            number, division by zero or a negative base with non-integer exponent.
    """
    missing = free_symbols(e) - set(bindings)
    if missing:
        raise UnboundVariableError(missing)
    env = {name: np.asarray(value, dtype=float) for name, value in bindings.items()}
    shape = np.broadcast_shapes(*(value.shape for value in env.values()))
    with np.errstate(all="ignore"):
        result = np.broadcast_to(np.asarray(_eval(e, env), dtype=float), shape)
    if result.ndim == 0:
        return float(result)
    return np.array(result)


def to_callable(e: Expr, parameters: Mapping[str, float] | None = None) -> Callable:
    """Wraps ``e`` as ``f(x)`` or ``f(x, u)`` with fixed parameter values."""
    fixed = dict(parameters or {})

    def function(x, u=None):
        bindings = dict(fixed, x=x)
        if u is not None:
            bindings["u"] = u
        return evaluate(e, bindings)

    return function


# ---------------------------------------------------------------------------
# Differentiation
# ---------------------------------------------------------------------------

def _integer_literal(e):
    if isinstance(e, Num) and float(e.value).is_integer():
        return int(e.value)
    if isinstance(e, Neg) and isinstance(e.operand, Num) and float(e.operand.value).is_integer():
        return -int(e.operand.value)
    return None


def _differentiate_power(base, exponent, var):
    d_base = differentiate(base, var)
    n = _integer_literal(exponent)
    if n is not None:
        return mul(mul(Num(float(n)), power(base, Num(float(n - 1)))), d_base)
    if var not in free_symbols(exponent):
        # Requires a nonnegative base, checked when the result is evaluated.
        return mul(mul(exponent, power(base, sub(exponent, ONE))), d_base)
    d_exponent = differentiate(exponent, var)
    return mul(
        power(base, exponent),
        add(mul(d_exponent, call("ln", base)), div(mul(exponent, d_base), base)),
    )


def differentiate(e: Expr, var: str) -> Expr:
    """
    Symbolic derivative of ``e`` with respect to the variable ``var``.

    Integer-literal exponents use the power rule; other exponents use
    u^g (g' ln u + g u'/u), which is only defined for a positive base.
    """
    if isinstance(e, (Num, Const)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.operand, var))
    if isinstance(e, BinOp):
        left, right = e.left, e.right
        if e.op == "+":
            return add(differentiate(left, var), differentiate(right, var))
        if e.op == "-":
            return sub(differentiate(left, var), differentiate(right, var))
        if e.op == "*":
            return add(mul(differentiate(left, var), right), mul(left, differentiate(right, var)))
        if e.op == "/":
            numerator = sub(mul(differentiate(left, var), right), mul(left, differentiate(right, var)))
            return div(numerator, power(right, Num(2.0)))
        return _differentiate_power(left, right, var)
    if isinstance(e, Call):
        if e.func == "pow":
            return _differentiate_power(e.args[0], e.args[1], var)
        arg = e.args[0]
        d_arg = differentiate(arg, var)
        if e.func == "exp":
            outer = e
        elif e.func == "ln":
            return div(d_arg, arg)
        elif e.func == "sqrt":
            return div(d_arg, mul(Num(2.0), e))
        elif e.func == "sin":
            outer = call("cos", arg)
        elif e.func == "cos":
            outer = neg(call("sin", arg))
        elif e.func == "abs":
            outer = call("sign", arg)
        else:
            # sign is piecewise constant.
            return ZERO
        return mul(outer, d_arg)
    if isinstance(e, Tabulated):
        derivative = Tabulated(e.name + "'", e.arg, e.function.derivative())
        return mul(derivative, differentiate(e.arg, var))
    raise TypeError(f"Not an expression node: {e!r}")
