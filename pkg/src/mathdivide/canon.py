"""Canonical value formatting shared across the harness.

All numeric results are exact decimals. Serialized records must be
byte-stable (same state in, same bytes out), so decimals are rendered
through a single canonical formatter and JSON is always emitted with
sorted keys and fixed separators.
"""

from __future__ import annotations

import json
from decimal import Decimal


def format_decimal(value: Decimal) -> str:
    """Render a decimal in canonical form: plain notation, no trailing zeros.

    ``Decimal("18.0")`` and ``Decimal("1.8E+1")`` both render as ``"18"``.
    """
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def decimal_to_json(value: Decimal | None) -> str | None:
    return None if value is None else format_decimal(value)


def decimal_from_json(value: str | None) -> Decimal | None:
    return None if value is None else Decimal(value)


def canonical_json(obj) -> str:
    """Serialize to canonical JSON: sorted keys, compact separators, newline."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"
