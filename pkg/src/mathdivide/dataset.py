"""Benchmark corpus ingestion.

Reads GSM8K-format files (newline-delimited JSON records with ``question``
and ``answer`` fields), extracts the gold answer that follows the dataset's
``####`` delimiter line, and normalizes it to an exact decimal. Corpus
slicing selects contiguous subsets such as the first 250 problems.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation

GOLD_DELIMITER = "####"

# Unit words stripped from the tail of an answer ("72 dollars" -> 72).
# Fixed, conservative list: applied only when what precedes parses cleanly.
UNIT_WORDS = frozenset({
    "dollar", "dollars", "cent", "cents", "egg", "eggs", "minute", "minutes",
    "hour", "hours", "day", "days", "week", "weeks", "year", "years",
    "mile", "miles", "km", "kg", "pound", "pounds", "apple", "apples",
    "item", "items", "unit", "units", "point", "points", "people",
    "student", "students", "cup", "cups", "box", "boxes", "time", "times",
})

_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d+)?|\.\d+)$")


class DatasetError(Exception):
    """Base class for corpus ingestion failures."""


class FileUnreadable(DatasetError):
    pass


class MalformedRecord(DatasetError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class GoldExtractionFailed(DatasetError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class NoDelimiterFound(DatasetError):
    pass


class UnparseableNumber(DatasetError):
    pass


@dataclass(frozen=True)
class Problem:
    """One benchmark item: the word problem plus its gold answer."""

    id: str
    statement: str
    gold_raw: str
    gold_value: Decimal

    def __post_init__(self):
        if not self.statement.strip():
            raise ValueError("problem statement is empty")
        if not self.gold_value.is_finite():
            raise ValueError("gold value must be finite")


@dataclass(frozen=True)
class Corpus:
    """An ordered, immutable slice of problems from one source file."""

    problems: tuple[Problem, ...]
    source_path: str
    offset: int = 0
    limit: int | None = None

    def __post_init__(self):
        ids = [p.id for p in self.problems]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate problem ids in corpus")

    def __len__(self) -> int:
        return len(self.problems)


def normalize_number(text: str) -> Decimal:
    """Parse a number out of loosely formatted answer text.

    Strips surrounding whitespace, thousands-separator commas, a leading
    currency symbol, a trailing percent sign, and a trailing known unit
    word. Percentages are not rescaled: "80%" parses as 80. Fractions
    ("3/4") are out of scope and raise UnparseableNumber.
    """
    s = text.strip()
    if not s:
        raise UnparseableNumber("empty input")

    # Trailing unit word, only when a leading number precedes it.
    parts = s.rsplit(None, 1)
    if len(parts) == 2 and parts[1].lower().rstrip(".") in UNIT_WORDS:
        s = parts[0]

    if s.endswith("%"):
        s = s[:-1].strip()

    sign = ""
    if s[:1] in "+-":
        sign, s = s[0], s[1:].strip()
    if s.startswith("$"):
        s = s[1:].strip()

    s = s.replace(",", "")
    if not _NUMBER_RE.match(sign + s):
        raise UnparseableNumber(f"not a decimal number: {text!r}")
    try:
        return Decimal(sign + s)
    except InvalidOperation as exc:  # pragma: no cover - regex should prevent this
        raise UnparseableNumber(f"not a decimal number: {text!r}") from exc


def extract_gold(answer_text: str, delimiter: str = GOLD_DELIMITER) -> Decimal:
    """Pull the gold answer that follows the final delimiter line.

    GSM8K writes the final answer as a ``#### <number>`` line after the
    worked solution; the delimiter is overridable for other corpora.
    """
    if not answer_text.strip():
        raise UnparseableNumber("empty answer text")
    pos = answer_text.rfind(delimiter)
    if pos < 0:
        raise NoDelimiterFound(f"no {delimiter!r} marker in answer text")
    tail = answer_text[pos + len(delimiter):]
    # Only the delimiter's own line carries the answer.
    tail = tail.splitlines()[0] if tail.splitlines() else ""
    return normalize_number(tail)


def load_corpus(
    path: str,
    offset: int = 0,
    limit: int | None = None,
    delimiter: str = GOLD_DELIMITER,
) -> Corpus:
    """Load records [offset, offset+limit) from a JSONL benchmark file.

    Record order follows the file. Blank lines are skipped. ``limit=None``
    means unbounded.
    """
    if offset < 0:
        raise ValueError("offset must be >= 0")
    if limit is not None and limit < 1:
        raise ValueError("limit must be >= 1 when bounded")

    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc

    problems: list[Problem] = []
    record_index = 0
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            index = record_index
            record_index += 1
            if index < offset:
                continue
            if limit is not None and len(problems) >= limit:
                break
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict) or "question" not in record or "answer" not in record:
                raise MalformedRecord(line_no, "record lacks question/answer fields")
            statement = str(record["question"]).strip()
            if not statement:
                raise MalformedRecord(line_no, "empty question")
            gold_raw = str(record["answer"])
            try:
                gold_value = extract_gold(gold_raw, delimiter=delimiter)
            except DatasetError as exc:
                raise GoldExtractionFailed(line_no, str(exc)) from exc
            problems.append(
                Problem(
                    id=f"p{index:05d}",
                    statement=statement,
                    gold_raw=gold_raw,
                    gold_value=gold_value,
                )
            )

    return Corpus(problems=tuple(problems), source_path=path, offset=offset, limit=limit)
