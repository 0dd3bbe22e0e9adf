"""Parse model output into a structured solution.

The prompt's format addendum mandates this layout, which the parser
accepts leniently with respect to surrounding whitespace and keyword
case:

    ### Subproblem <i>: <description>
    Expression: <expr over named variables>
    Inputs: <var> = <number | result_of(<j>)> [, ...]
    Depends on: none | [<j>, ...]
    ```<lang>
    def compute_e<i>(<params>):
        ...
        return result
    ```
    Result: <number>
    [repeat per subproblem]
    ### Final Answer: <number>

Subproblem indices must run 1..k in order; dependencies may only point
at earlier subproblems; the code entry function's parameters must match
the declared inputs in order. Anything else is a typed parse error that
the pipeline turns into a refinement turn. A separate salvage extractor
(`fallback_final_answer`) recovers a bare final answer from free-form
prose when the model ignores the format entirely.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal

from . import algebra
from .canon import format_decimal
from .dataset import UnparseableNumber, normalize_number


class ParseError(Exception):
    """Base class for strict-parse failures."""


class NoSections(ParseError):
    pass


class BadSection(ParseError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"subproblem {index}: {reason}")
        self.index = index
        self.reason = reason


class NoFinalAnswer(ParseError):
    pass


@dataclass(frozen=True)
class NumberOrRef:
    """A binding value: either a literal number or a prior subproblem's result."""

    literal: Decimal | None = None
    ref: int | None = None

    def __post_init__(self):
        if (self.literal is None) == (self.ref is None):
            raise ValueError("exactly one of literal/ref must be set")

    @classmethod
    def of(cls, value: Decimal) -> "NumberOrRef":
        return cls(literal=value)

    @classmethod
    def result_of(cls, index: int) -> "NumberOrRef":
        return cls(ref=index)


@dataclass(frozen=True)
class CodeSnippet:
    language_tag: str
    source: str
    entry_function: str
    parameters: tuple[str, ...]


@dataclass(frozen=True)
class Subproblem:
    index: int
    description: str
    expression_src: str
    code: CodeSnippet
    bindings: tuple[tuple[str, NumberOrRef], ...]  # ordered (name, value) pairs
    depends_on: tuple[int, ...]
    claimed_value: Decimal | None = None

    def binding_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.bindings)


@dataclass(frozen=True)
class StructuredSolution:
    subproblems: tuple[Subproblem, ...]
    final_answer_claimed: Decimal | None
    raw_text: str = field(compare=False, default="")


_HEADER_RE = re.compile(r"^\s*#{2,4}\s*(subproblem\s+(\d+)\s*[:.]?|final\s+answer\s*[:.]?)\s*(.*)$", re.IGNORECASE)
_EXPRESSION_RE = re.compile(r"^\s*expression\s*:\s*(.+?)\s*$", re.IGNORECASE)
_INPUTS_RE = re.compile(r"^\s*inputs?\s*:\s*(.*?)\s*$", re.IGNORECASE)
_DEPENDS_RE = re.compile(r"^\s*depends\s*on\s*:\s*(.*?)\s*$", re.IGNORECASE)
_RESULT_RE = re.compile(r"^\s*result\s*:\s*(.+?)\s*$", re.IGNORECASE)
_FENCE_RE = re.compile(r"^\s*```\s*([A-Za-z0-9_+-]*)\s*$")
_FENCE_END_RE = re.compile(r"^\s*```\s*$")
_REF_RE = re.compile(r"^result_of\s*\(\s*(\d+)\s*\)$", re.IGNORECASE)
_DEF_RE = re.compile(r"^\s*def\s+([A-Za-z_]\w*)\s*\(([^)]*)\)\s*:")
_VARNAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _parse_bindings(index: int, text: str) -> tuple[tuple[str, NumberOrRef], ...]:
    if not text or text.strip().lower() == "none":
        return ()
    bindings: list[tuple[str, NumberOrRef]] = []
    seen: set[str] = set()
    for entry in text.split(","):
        entry = entry.strip()
        if not entry:
            continue
        if "=" not in entry:
            raise BadSection(index, f"malformed input binding {entry!r}")
        name, _, value = entry.partition("=")
        name = name.strip()
        value = value.strip()
        if not _VARNAME_RE.match(name):
            raise BadSection(index, f"invalid variable name {name!r}")
        if name in seen:
            raise BadSection(index, f"duplicate input binding {name!r}")
        seen.add(name)
        ref_match = _REF_RE.match(value)
        if ref_match:
            bindings.append((name, NumberOrRef.result_of(int(ref_match.group(1)))))
            continue
        try:
            bindings.append((name, NumberOrRef.of(normalize_number(value))))
        except UnparseableNumber as exc:
            raise BadSection(index, f"unparseable input value {value!r}") from exc
    return tuple(bindings)


def _parse_depends(index: int, text: str) -> tuple[int, ...]:
    cleaned = text.strip()
    if not cleaned or cleaned.lower() == "none" or cleaned == "[]":
        return ()
    if cleaned.startswith("[") and cleaned.endswith("]"):
        cleaned = cleaned[1:-1]
    deps: list[int] = []
    for part in cleaned.split(","):
        part = part.strip()
        if not part:
            continue
        if not part.isdigit():
            raise BadSection(index, f"malformed dependency {part!r}")
        deps.append(int(part))
    return tuple(deps)


def _parse_code_block(index: int, lines: list[str]) -> CodeSnippet:
    start = None
    language_tag = ""
    for i, line in enumerate(lines):
        m = _FENCE_RE.match(line)
        if m:
            start = i
            language_tag = m.group(1)
            break
    if start is None:
        raise BadSection(index, "missing fenced code block")
    body: list[str] = []
    closed = False
    for line in lines[start + 1:]:
        if _FENCE_END_RE.match(line):
            closed = True
            break
        body.append(line)
    if not closed:
        raise BadSection(index, "unterminated code block")
    source = "\n".join(body)

    expected = f"compute_e{index}"
    defs = [(m.group(1), m.group(2)) for m in (_DEF_RE.match(l) for l in body) if m]
    chosen = next(((n, p) for n, p in defs if n == expected), None)
    if chosen is None and len(defs) == 1:
        chosen = defs[0]
    if chosen is None:
        raise BadSection(index, f"no {expected} definition in code block")
    name, param_src = chosen
    parameters: list[str] = []
    for param in param_src.split(","):
        param = param.strip()
        if not param:
            continue
        if not _VARNAME_RE.match(param):
            raise BadSection(index, f"unsupported parameter {param!r}")
        parameters.append(param)
    return CodeSnippet(
        language_tag=language_tag,
        source=source,
        entry_function=name,
        parameters=tuple(parameters),
    )


def _parse_subproblem(index: int, description: str, lines: list[str]) -> Subproblem:
    expression = None
    inputs_text = None
    depends_text = None
    claimed: Decimal | None = None

    in_code = False
    for line in lines:
        if _FENCE_RE.match(line):
            in_code = not in_code
            continue
        if in_code:
            continue
        if expression is None:
            m = _EXPRESSION_RE.match(line)
            if m:
                expression = m.group(1)
                continue
        if inputs_text is None:
            m = _INPUTS_RE.match(line)
            if m:
                inputs_text = m.group(1)
                continue
        if depends_text is None:
            m = _DEPENDS_RE.match(line)
            if m:
                depends_text = m.group(1)
                continue
        m = _RESULT_RE.match(line)
        if m:
            try:
                claimed = normalize_number(m.group(1))
            except UnparseableNumber:
                claimed = None  # claims are untrusted; a garbled one is just absent

    if expression is None:
        raise BadSection(index, "missing expression line")

    try:
        expr_ast = algebra.parse_expr(expression)
    except algebra.AlgebraError as exc:
        raise BadSection(index, f"unparseable expression: {exc}") from exc

    bindings = _parse_bindings(index, inputs_text or "")
    refs = tuple(v.ref for _, v in bindings if v.ref is not None)
    if depends_text is None:
        depends = tuple(sorted(set(refs)))
    else:
        depends = _parse_depends(index, depends_text)

    for dep in depends:
        if dep >= index:
            raise BadSection(index, f"forward dependency on {dep}")
        if dep < 1:
            raise BadSection(index, f"invalid dependency {dep}")
    for ref in refs:
        if ref >= index:
            raise BadSection(index, f"forward dependency on {ref}")
        if ref not in depends:
            raise BadSection(index, f"input references {ref} not listed in depends on")

    missing = algebra.free_vars(expr_ast) - {name for name, _ in bindings}
    if missing:
        raise BadSection(index, f"expression variables without bindings: {sorted(missing)}")

    code = _parse_code_block(index, lines)
    if code.parameters != tuple(name for name, _ in bindings):
        raise BadSection(index, "code parameters do not match declared inputs")

    return Subproblem(
        index=index,
        description=description.strip(),
        expression_src=expression,
        code=code,
        bindings=bindings,
        depends_on=depends,
        claimed_value=claimed,
    )


def parse_solution(raw: str) -> StructuredSolution:
    """Strict parse of the structured-output grammar.

    Raises NoSections when nothing resembling the format is present,
    BadSection for a malformed subproblem, and NoFinalAnswer when the
    final-answer section is missing or carries no number.
    """
    if not raw.strip():
        raise NoSections("empty response")

    lines = raw.splitlines()
    headers: list[tuple[int, str, int | None, str]] = []  # (line, kind, index, rest)
    in_code = False
    for i, line in enumerate(lines):
        if _FENCE_RE.match(line):
            in_code = not in_code
            continue
        if in_code:
            continue
        m = _HEADER_RE.match(line)
        if m:
            if m.group(2) is not None:
                headers.append((i, "subproblem", int(m.group(2)), m.group(3)))
            else:
                headers.append((i, "final", None, m.group(3)))

    if not headers:
        raise NoSections("no recognizable section headers")

    subproblems: list[Subproblem] = []
    final_answer: Decimal | None = None
    final_seen = False
    expected_index = 1
    for pos, (line_no, kind, index, rest) in enumerate(headers):
        end = headers[pos + 1][0] if pos + 1 < len(headers) else len(lines)
        body = lines[line_no + 1:end]
        if kind == "final":
            final_seen = True
            try:
                final_answer = normalize_number(rest)
            except UnparseableNumber:
                final_answer = None
            continue
        assert index is not None
        if index != expected_index:
            if any(sp.index == index for sp in subproblems):
                raise BadSection(index, "duplicate subproblem index")
            raise BadSection(index, f"expected subproblem {expected_index}")
        expected_index += 1
        subproblems.append(_parse_subproblem(index, rest, body))

    if not final_seen:
        raise NoFinalAnswer("missing final answer section")
    if final_answer is None and not subproblems:
        raise NoFinalAnswer("final answer is not a number")

    return StructuredSolution(
        subproblems=tuple(subproblems),
        final_answer_claimed=final_answer,
        raw_text=raw,
    )


# Matches a standalone number token in prose: optional sign and currency
# marker, digit group with optional thousands separators and fraction,
# optional percent sign. Guarded against digits embedded in words.
_PROSE_NUMBER_RE = re.compile(
    r"(?<![\w.])[-+]?\$?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?%?(?!\w)"
)


def fallback_final_answer(raw: str) -> Decimal | None:
    """Salvage a final answer from free-form text.

    Prefers the first number after the last occurrence of "final answer"
    (any case); otherwise takes the last standalone number; otherwise
    absent.
    """
    marker = raw.lower().rfind("final answer")
    if marker >= 0:
        m = _PROSE_NUMBER_RE.search(raw, marker)
        if m:
            try:
                return normalize_number(m.group())
            except UnparseableNumber:
                pass
    matches = _PROSE_NUMBER_RE.findall(raw)
    for token in reversed(matches):
        try:
            return normalize_number(token)
        except UnparseableNumber:
            continue
    return None


def render_solution(solution: StructuredSolution) -> str:
    """Canonical serializer for the grammar; inverse of parse_solution."""
    parts: list[str] = []
    for sp in solution.subproblems:
        parts.append(f"### Subproblem {sp.index}: {sp.description}")
        parts.append(f"Expression: {sp.expression_src}")
        if sp.bindings:
            rendered = ", ".join(
                f"{name} = {format_decimal(v.literal) if v.literal is not None else f'result_of({v.ref})'}"
                for name, v in sp.bindings
            )
            parts.append(f"Inputs: {rendered}")
        else:
            parts.append("Inputs: none")
        if sp.depends_on:
            parts.append(f"Depends on: [{', '.join(str(d) for d in sp.depends_on)}]")
        else:
            parts.append("Depends on: none")
        parts.append(f"```{sp.code.language_tag}")
        parts.append(sp.code.source)
        parts.append("```")
        if sp.claimed_value is not None:
            parts.append(f"Result: {format_decimal(sp.claimed_value)}")
        parts.append("")
    if solution.final_answer_claimed is not None:
        parts.append(f"### Final Answer: {format_decimal(solution.final_answer_claimed)}")
    return "\n".join(parts)
