"""Prompt assembly.

The initial prompt is a versioned text asset with the problem statement
substituted once, followed (for the decompose-and-verify template) by a
format addendum that mandates the machine-parseable layout the response
parser accepts. Refinement prompts carry human or synthesized feedback
back into the conversation without ever revealing the gold answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Literal

from .response_parser import StructuredSolution

TEMPLATE_IDS = ("mathdivide_v1", "baseline_single_shot")
FORMAT_ADDENDUM_VERSION = "v1"
SECTION_MARKER = "### Subproblem"
CHECK_CALCULATIONS_MESSAGE = "Check the calculations"
FORMAT_REPAIR_MESSAGE = "Re-emit your solution in the required format."
_REEMIT_INSTRUCTION = (
    "Re-emit the complete solution in the required output format, "
    "including every sub-problem and the final answer."
)

RefinementKind = Literal["check_calculations", "flag_subproblem", "custom"]


class PromptingError(Exception):
    pass


class UnknownTemplate(PromptingError):
    pass


class UnknownSubproblemIndex(PromptingError):
    def __init__(self, index: int):
        super().__init__(f"no subproblem with index {index}")
        self.index = index


@dataclass(frozen=True)
class PromptBundle:
    template_id: str
    rendered_text: str
    format_addendum_version: str


@dataclass(frozen=True)
class RefinementPrompt:
    kind: RefinementKind
    flagged_indices: tuple[int, ...] = ()
    message: str = ""

    def __post_init__(self):
        if self.kind not in ("check_calculations", "flag_subproblem", "custom"):
            raise ValueError(f"unknown refinement kind {self.kind!r}")
        if self.kind == "flag_subproblem" and not self.flagged_indices:
            raise ValueError("flag_subproblem requires at least one index")
        if not self.message:
            raise ValueError("refinement message must be non-empty")

    @classmethod
    def check_calculations(cls) -> "RefinementPrompt":
        return cls(kind="check_calculations", message=CHECK_CALCULATIONS_MESSAGE)

    @classmethod
    def flag_subproblem(cls, indices: tuple[int, ...] | list[int]) -> "RefinementPrompt":
        return cls(
            kind="flag_subproblem",
            flagged_indices=tuple(indices),
            message="Re-derive the flagged sub-problems.",
        )

    @classmethod
    def custom(cls, message: str) -> "RefinementPrompt":
        return cls(kind="custom", message=message)


def _load_template(name: str) -> str:
    ref = resources.files(__package__).joinpath("templates", f"{name}.txt")
    try:
        return ref.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise UnknownTemplate(name) from exc


def render_initial_prompt(problem, template_id: str = "mathdivide_v1") -> PromptBundle:
    """Render the first-turn prompt for one problem.

    Accepts a Problem or a bare statement string. The statement is
    substituted verbatim (no escaping); backticks and other markup inside
    the problem text pass through unchanged.
    """
    statement = getattr(problem, "statement", problem)
    if template_id not in TEMPLATE_IDS:
        raise UnknownTemplate(template_id)
    body = _load_template(template_id).replace("{problem}", statement.strip(), 1)
    if template_id == "mathdivide_v1":
        addendum = _load_template(f"format_addendum_{FORMAT_ADDENDUM_VERSION}")
        text = f"{body.rstrip()}\n\n{addendum.rstrip()}\n"
        version = FORMAT_ADDENDUM_VERSION
    else:
        text = body.rstrip() + "\n"
        version = "none"
    return PromptBundle(template_id=template_id, rendered_text=text, format_addendum_version=version)


def render_refinement_prompt(ref: RefinementPrompt, prior_solution: StructuredSolution | None) -> str:
    """Produce the feedback message for the next conversation turn.

    The canonical calculation nudge is sent as exactly its bare message;
    flagged subproblems are named by index and description so the model
    knows precisely which component to re-derive.
    """
    if ref.kind == "check_calculations":
        return CHECK_CALCULATIONS_MESSAGE
    if ref.kind == "custom":
        return f"{ref.message}\n\n{_REEMIT_INSTRUCTION}"

    by_index = {sp.index: sp for sp in (prior_solution.subproblems if prior_solution else ())}
    lines = ["The answer is not correct. These sub-problems were solved incorrectly:"]
    for index in ref.flagged_indices:
        if index not in by_index:
            raise UnknownSubproblemIndex(index)
        lines.append(f"- Subproblem {index}: {by_index[index].description}")
    lines.append(
        "Re-derive the expression and Python code for each sub-problem listed above "
        "and fix its calculation. Keep the sub-problems that are already correct unchanged. "
        + _REEMIT_INSTRUCTION
    )
    return "\n".join(lines)
