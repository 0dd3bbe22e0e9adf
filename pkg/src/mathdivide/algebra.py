"""Arithmetic expression parsing and exact decimal evaluation.

This is the in-process oracle used to cross-check sandboxed code
execution: each subproblem's expression is parsed and evaluated over its
bindings, independently of whatever the generated code computes.

Grammar (operator precedence, high to low):

    ^           right-associative, binds tighter than unary minus
    unary -
    * /         left-associative
    + -         left-associative

Supported atoms are decimal literals, variables, and parenthesized
groups. There are no function calls: grade-school arithmetic does not
need them, and an unsupported token is a useful parse failure (it marks
the expression as something to send back for refinement).

Arithmetic is exact decimal. Division is exact when the quotient
terminates; non-terminating quotients are rounded to 12 fractional
digits, half-even. Exponents must be integers: a literal exponent must
lie in [-6, 6], and a computed exponent (e.g. ``2^(3^2)``) may not
exceed 64 in magnitude. An additional size guard rejects powers whose
result would exceed ~10000 digits so malformed model output cannot
stall the harness.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, Inexact, localcontext
from fractions import Fraction

from .canon import format_decimal

LITERAL_EXPONENT_RANGE = 6
COMPUTED_EXPONENT_RANGE = 64
DIVISION_FRACTIONAL_DIGITS = 12
_MAX_POW_DIGITS = 10_000
_EVAL_PRECISION = 12_000

_VAR_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUM_RE = re.compile(r"\d+(\.\d*)?|\.\d+")


class AlgebraError(Exception):
    """Base class for expression parsing and evaluation failures."""


class ExpressionSyntaxError(AlgebraError):
    def __init__(self, position: int, reason: str):
        super().__init__(f"at {position}: {reason}")
        self.position = position


class UnsupportedToken(AlgebraError):
    def __init__(self, position: int, token: str):
        super().__init__(f"at {position}: unsupported token {token!r}")
        self.position = position
        self.token = token


class UnboundVariable(AlgebraError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


class DivisionByZero(AlgebraError):
    pass


class ExponentOutOfRange(AlgebraError):
    pass


class ValueTooLarge(AlgebraError):
    """An intermediate value exceeded the harness's exactness bounds."""


@dataclass(frozen=True)
class Num:
    value: Decimal


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


Expr = Num | Var | Neg | Bin


_MAX_NESTING = 200


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.pos = 0
        self.depth = 0

    def _descend(self):
        self.depth += 1
        if self.depth > _MAX_NESTING:
            raise ExpressionSyntaxError(self.pos, "expression nested too deeply")

    def _skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def _take(self) -> str:
        ch = self._peek()
        self.pos += 1
        return ch

    def parse(self) -> Expr:
        node = self._expr()
        self._skip_ws()
        if self.pos < len(self.src):
            ch = self.src[self.pos]
            if ch == ")":
                raise ExpressionSyntaxError(self.pos, "unbalanced parenthesis")
            raise UnsupportedToken(self.pos, ch)
        return node

    def _expr(self) -> Expr:
        self._descend()
        try:
            node = self._term()
            while self._peek() in ("+", "-"):
                op = self._take()
                node = Bin(op, node, self._term())
            return node
        finally:
            self.depth -= 1

    def _term(self) -> Expr:
        node = self._unary()
        while self._peek() in ("*", "/"):
            op = self._take()
            node = Bin(op, node, self._unary())
        return node

    def _unary(self) -> Expr:
        self._descend()
        try:
            if self._peek() == "-":
                self._take()
                return Neg(self._unary())
            if self._peek() == "+":
                self._take()
                return self._unary()
            return self._power()
        finally:
            self.depth -= 1

    def _power(self) -> Expr:
        base = self._atom()
        if self._peek() == "^":
            self._take()
            # Right-associative; exponent may carry its own unary minus.
            return Bin("^", base, self._unary())
        return base

    def _atom(self) -> Expr:
        self._skip_ws()
        if self.pos >= len(self.src):
            raise ExpressionSyntaxError(self.pos, "unexpected end of expression")
        ch = self.src[self.pos]
        if ch == "(":
            self.pos += 1
            node = self._expr()
            if self._peek() != ")":
                raise ExpressionSyntaxError(self.pos, "missing closing parenthesis")
            self._take()
            return node
        m = _NUM_RE.match(self.src, self.pos)
        if m:
            self.pos = m.end()
            return Num(Decimal(m.group()))
        m = _VAR_RE.match(self.src, self.pos)
        if m:
            self.pos = m.end()
            return Var(m.group())
        raise UnsupportedToken(self.pos, ch)


def parse_expr(src: str) -> Expr:
    """Parse an expression string into an AST."""
    if not src.strip():
        raise ExpressionSyntaxError(0, "empty expression")
    return _Parser(src).parse()


def free_vars(e: Expr) -> set[str]:
    """The exact set of variable names appearing in the expression."""
    match e:
        case Num():
            return set()
        case Var(name):
            return {name}
        case Neg(operand):
            return free_vars(operand)
        case Bin(_, left, right):
            return free_vars(left) | free_vars(right)
    raise TypeError(f"not an Expr: {e!r}")


def divide(a: Decimal, b: Decimal) -> Decimal:
    """Exact quotient when it terminates, else 12 fractional digits half-even."""
    if b == 0:
        raise DivisionByZero(f"{format(a, 'f')} / 0")
    q = Fraction(a) / Fraction(b)
    den = q.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    with localcontext() as ctx:
        ctx.prec = _EVAL_PRECISION  # scaleb rounds to context precision
        if den == 1:
            digits = max(twos, fives)
            scaled = q * 10**digits
            return Decimal(scaled.numerator).scaleb(-digits)
        # round() on a Fraction is banker's rounding (ties to even).
        scaled_int = round(q * 10**DIVISION_FRACTIONAL_DIGITS)
        return Decimal(scaled_int).scaleb(-DIVISION_FRACTIONAL_DIGITS)


def _exact(operation):
    """Run a decimal operation that must not round; raise if it would."""
    with localcontext() as ctx:
        ctx.prec = _EVAL_PRECISION
        ctx.traps[Inexact] = True
        try:
            return operation()
        except Inexact as exc:
            raise ValueTooLarge("intermediate value exceeds exact-arithmetic bounds") from exc


def _power(base: Decimal, exponent: Expr, env: dict[str, Decimal]) -> Decimal:
    exp_value = _eval(exponent, env)
    if exp_value != exp_value.to_integral_value():
        raise ExponentOutOfRange(f"non-integer exponent {format(exp_value, 'f')}")
    exp = int(exp_value)
    literal = exponent
    if isinstance(literal, Neg) and isinstance(literal.operand, Num):
        literal = literal.operand
    if isinstance(literal, Num) and abs(exp) > LITERAL_EXPONENT_RANGE:
        raise ExponentOutOfRange(f"literal exponent {exp} outside [-6, 6]")
    if abs(exp) > COMPUTED_EXPONENT_RANGE:
        raise ExponentOutOfRange(f"exponent {exp} outside [-64, 64]")
    if exp == 0:
        return Decimal(1)
    if len(base.as_tuple().digits) * abs(exp) > _MAX_POW_DIGITS:
        raise ExponentOutOfRange("power result would be too large")
    if exp > 0:
        return _exact(lambda: base**exp)
    if base == 0:
        raise DivisionByZero("0 raised to a negative exponent")
    positive = _exact(lambda: base ** (-exp))
    return divide(Decimal(1), positive)


def _eval(e: Expr, env: dict[str, Decimal]) -> Decimal:
    match e:
        case Num(value):
            return value
        case Var(name):
            if name not in env:
                raise UnboundVariable(name)
            return env[name]
        case Neg(operand):
            return -_eval(operand, env)
        case Bin("^", left, right):
            return _power(_eval(left, env), right, env)
        case Bin(op, left, right):
            a = _eval(left, env)
            b = _eval(right, env)
            if op == "+":
                return _exact(lambda: a + b)
            if op == "-":
                return _exact(lambda: a - b)
            if op == "*":
                return _exact(lambda: a * b)
            if op == "/":
                return divide(a, b)
    raise TypeError(f"not an Expr: {e!r}")


def eval_expr(e: Expr, env: dict[str, Decimal] | None = None) -> Decimal:
    """Evaluate an expression under the given variable bindings."""
    return _eval(e, dict(env or {}))


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PRECEDENCE = 3


def _node_precedence(e: Expr) -> int:
    match e:
        case Bin(op, _, _):
            return _PRECEDENCE[op]
        case Neg(_):
            return _NEG_PRECEDENCE
        case Num(value) if value < 0:
            # A negative literal prints with a leading minus, so it binds
            # like a negation wherever bracketing is decided.
            return _NEG_PRECEDENCE
        case _:
            return 5


def format_expr(e: Expr, power_op: str = "^") -> str:
    """Render an AST back to source with minimal parentheses.

    ``power_op="**"`` produces a Python expression; the precedence and
    associativity of the five supported operators match Python's, so the
    same bracketing logic serves both renderings.
    """
    match e:
        case Num(value):
            return format_decimal(value)
        case Var(name):
            return name
        case Neg(operand):
            inner = format_expr(operand, power_op)
            if _node_precedence(operand) < _NEG_PRECEDENCE:
                inner = f"({inner})"
            return f"-{inner}"
        case Bin(op, left, right):
            prec = _PRECEDENCE[op]
            lhs = format_expr(left, power_op)
            rhs = format_expr(right, power_op)
            if op == "^":
                # Right-associative: bracket any structured base.
                if _node_precedence(left) <= prec:
                    lhs = f"({lhs})"
                if _node_precedence(right) < _NEG_PRECEDENCE:
                    rhs = f"({rhs})"
            else:
                if _node_precedence(left) < prec:
                    lhs = f"({lhs})"
                if _node_precedence(right) <= prec:
                    rhs = f"({rhs})"
            if op == "^":
                return f"{lhs}{power_op}{rhs}"
            return f"{lhs} {op} {rhs}"
    raise TypeError(f"not an Expr: {e!r}")
