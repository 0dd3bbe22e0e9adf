"""Shared test utilities: solution-document builders, random expression
generators, and the independent brute-force expression evaluator used to
cross-check the production one."""

from __future__ import annotations

import random
import string
from decimal import Decimal, localcontext
from fractions import Fraction

from mathdivide.algebra import (
    Bin,
    DivisionByZero,
    ExponentOutOfRange,
    Expr,
    Neg,
    Num,
    UnboundVariable,
    Var,
)
from mathdivide.response_parser import (
    CodeSnippet,
    NumberOrRef,
    StructuredSolution,
    Subproblem,
)

# --- structured solution documents --------------------------------------


def subproblem_block(
    index: int,
    expression: str,
    bindings: list[tuple[str, object]],
    depends: list[int] | None = None,
    code_body: str | None = None,
    result: object | None = None,
    description: str = "work out one step",
) -> str:
    names = [name for name, _ in bindings]
    rendered_bindings = ", ".join(
        f"{name} = result_of({value[1]})" if isinstance(value, tuple) else f"{name} = {value}"
        for name, value in bindings
    ) or "none"
    deps = depends if depends is not None else sorted(
        {value[1] for _, value in bindings if isinstance(value, tuple)}
    )
    deps_text = f"[{', '.join(str(d) for d in deps)}]" if deps else "none"
    body = code_body if code_body is not None else f"    return {expression.replace('^', '**')}"
    lines = [
        f"### Subproblem {index}: {description}",
        f"Expression: {expression}",
        f"Inputs: {rendered_bindings}",
        f"Depends on: {deps_text}",
        "```python",
        f"def compute_e{index}({', '.join(names)}):",
        body,
        "```",
    ]
    if result is not None:
        lines.append(f"Result: {result}")
    lines.append("")
    return "\n".join(lines)


def solution_doc(blocks: list[str], final: object) -> str:
    return "\n".join(blocks) + f"\n### Final Answer: {final}\n"


def single_step_doc(a: int, b: int, final: object | None = None, expression: str = "a*b") -> str:
    """One-subproblem a*b document; wrong bindings make a wrong answer."""
    value = final if final is not None else a * b
    return solution_doc(
        [subproblem_block(1, expression, [("a", a), ("b", b)], result=value)],
        value,
    )


# --- independent expression evaluator ------------------------------------
# Deliberately written against the documented arithmetic rules rather than
# the production code: values are carried as exact rationals, converted to
# decimals only at the edges.


def _fraction_from_decimal(d: Decimal) -> Fraction:
    sign, digits, exponent = d.as_tuple()
    n = int("".join(map(str, digits)) or "0")
    if sign:
        n = -n
    return Fraction(n, 1) * Fraction(10) ** exponent


def _decimal_from_exact_fraction(f: Fraction) -> Decimal:
    den = f.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    assert den == 1, "fraction does not terminate in decimal"
    digits = max(twos, fives)
    scaled = (f * 10**digits).numerator
    with localcontext() as ctx:
        ctx.prec = max(1, len(str(abs(scaled))))  # scaleb must not round
        return Decimal(scaled).scaleb(-digits)


def _round_half_even(f: Fraction) -> int:
    floor, remainder = divmod(f.numerator, f.denominator)
    doubled = 2 * remainder
    if doubled > f.denominator:
        return floor + 1
    if doubled < f.denominator:
        return floor
    return floor + (floor % 2)


def brute_force_eval(expr: Expr, env: dict[str, Decimal] | None = None) -> Decimal:
    env = env or {}

    def walk(node: Expr) -> Fraction:
        if isinstance(node, Num):
            return _fraction_from_decimal(node.value)
        if isinstance(node, Var):
            if node.name not in env:
                raise UnboundVariable(node.name)
            return _fraction_from_decimal(env[node.name])
        if isinstance(node, Neg):
            return -walk(node.operand)
        assert isinstance(node, Bin)
        if node.op == "^":
            base = walk(node.left)
            exponent = walk(node.right)
            if exponent.denominator != 1:
                raise ExponentOutOfRange("non-integer exponent")
            exp = exponent.numerator
            literal = node.right
            if isinstance(literal, Neg) and isinstance(literal.operand, Num):
                literal = literal.operand
            if isinstance(literal, Num) and abs(exp) > 6:
                raise ExponentOutOfRange("literal exponent outside [-6, 6]")
            if abs(exp) > 64:
                raise ExponentOutOfRange("exponent outside [-64, 64]")
            if exp == 0:
                return Fraction(1)
            if exp < 0:
                if base == 0:
                    raise DivisionByZero("0 to a negative power")
                return divide_rule(Fraction(1), base**-exp)
            return base**exp
        a = walk(node.left)
        b = walk(node.right)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if b == 0:
            raise DivisionByZero("division by zero")
        return divide_rule(a, b)

    def divide_rule(a: Fraction, b: Fraction) -> Fraction:
        q = a / b
        den = q.denominator
        while den % 2 == 0:
            den //= 2
        while den % 5 == 0:
            den //= 5
        if den == 1:
            return q
        return Fraction(_round_half_even(q * 10**12), 10**12)

    return _decimal_from_exact_fraction(walk(expr))


# --- random expression generators ----------------------------------------

VAR_POOL = ("a", "b", "c", "d")


def gen_full_expr(rng: random.Random, depth: int, env: dict[str, Decimal]) -> Expr:
    """Any-shape expression tree; division denominators forced nonzero."""
    if depth == 0 or rng.random() < 0.25:
        if env and rng.random() < 0.4:
            return Var(rng.choice(sorted(env)))
        n = rng.randint(-9, 9)
        return Neg(Num(Decimal(-n))) if n < 0 and rng.random() < 0.5 else Num(Decimal(n))
    op = rng.choice("++--**//^")
    if op == "^":
        base = gen_full_expr(rng, depth - 1, env)
        return Bin("^", base, Num(Decimal(rng.randint(0, 6))))
    left = gen_full_expr(rng, depth - 1, env)
    right = gen_full_expr(rng, depth - 1, env)
    if op == "/":
        for _ in range(20):
            try:
                if brute_force_eval(right, env) != 0:
                    break
            except Exception:
                pass
            right = gen_full_expr(rng, depth - 1, env)
        else:
            right = Num(Decimal(rng.randint(1, 9)))
    return Bin(op, left, right)


def gen_int_expr(rng: random.Random, depth: int, env: dict[str, Decimal]) -> Expr:
    """Integer-valued tree: + - * and small literal powers over int leaves."""
    if depth == 0 or rng.random() < 0.3:
        if env and rng.random() < 0.4:
            return Var(rng.choice(sorted(env)))
        n = rng.randint(-9, 9)
        return Neg(Num(Decimal(-n))) if n < 0 and rng.random() < 0.5 else Num(Decimal(n))
    op = rng.choice("++--**^")
    if op == "^":
        return Bin("^", gen_int_expr(rng, depth - 1, env), Num(Decimal(rng.randint(0, 4))))
    return Bin(op, gen_int_expr(rng, depth - 1, env), gen_int_expr(rng, depth - 1, env))


def gen_float_safe_expr(rng: random.Random, depth: int, env: dict[str, Decimal]) -> Expr:
    """Expression whose decimal and binary-float evaluations stay within
    1e-9 relative of each other: an integer core, with at most one
    division at the root whose quotient is neither tiny nor huge."""
    if rng.random() < 0.5:
        return gen_int_expr(rng, depth, env)
    for _ in range(50):
        numerator = gen_int_expr(rng, depth - 1, env)
        denominator = gen_int_expr(rng, depth - 1, env)
        expr = Bin("/", numerator, denominator)
        try:
            d = brute_force_eval(denominator, env)
            if d == 0:
                continue
            q = abs(brute_force_eval(expr, env))
            if q == 0 or Decimal("0.001") <= q <= Decimal("1e12"):
                return expr
        except Exception:
            continue
    return gen_int_expr(rng, depth, env)


def gen_env(rng: random.Random) -> dict[str, Decimal]:
    names = rng.sample(VAR_POOL, rng.randint(0, len(VAR_POOL)))
    return {name: Decimal(rng.randint(-9, 9)) for name in sorted(names)}


# --- random structured solutions ------------------------------------------


def gen_structured_solution(rng: random.Random) -> StructuredSolution:
    """A random well-formed solution for serializer round-trip checks."""
    k = rng.randint(1, 4)
    subproblems = []
    for index in range(1, k + 1):
        names = rng.sample(string.ascii_lowercase, rng.randint(1, 3))
        bindings = []
        deps = set()
        for name in names:
            if index > 1 and rng.random() < 0.4:
                ref = rng.randint(1, index - 1)
                bindings.append((name, NumberOrRef.result_of(ref)))
                deps.add(ref)
            else:
                bindings.append((name, NumberOrRef.of(Decimal(rng.randint(-99, 99)))))
        expression = names[0] if len(names) == 1 else f"{names[0]} {rng.choice('+-*')} {names[1]}"
        code = CodeSnippet(
            language_tag="python",
            source=f"def compute_e{index}({', '.join(names)}):\n    return {expression}",
            entry_function=f"compute_e{index}",
            parameters=tuple(names),
        )
        subproblems.append(
            Subproblem(
                index=index,
                description=f"step {index} of the computation",
                expression_src=expression,
                code=code,
                bindings=tuple(bindings),
                depends_on=tuple(sorted(deps)),
                claimed_value=Decimal(rng.randint(-999, 999)) if rng.random() < 0.7 else None,
            )
        )
    return StructuredSolution(
        subproblems=tuple(subproblems),
        final_answer_claimed=Decimal(rng.randint(-999, 999)),
    )
