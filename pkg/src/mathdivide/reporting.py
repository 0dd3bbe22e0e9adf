"""Run-level aggregation.

A report is always recomputed from the session list (or the session
files on disk), never read from a cached aggregate. Accuracy follows the
benchmark's formula: problems solved within 3 refinement prompts over
problems fed, as a percentage to two decimal places.

The canonical serialized form excludes wall-clock timing so that two
runs over identical inputs produce byte-identical reports; the full form
adds timing for human consumption.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

from .canon import canonical_json

ACCURACY_REFINEMENT_WINDOW = 3
CROSS_CHECK_KEYS = ("agree", "disagree", "exec_only", "oracle_only", "neither")


@dataclass(frozen=True)
class RunReport:
    run_id: str
    config_snapshot: dict
    totals: dict[str, int]
    accuracy_percent: float
    refinement_histogram: dict[str, int]
    cross_check_stats: dict[str, int]
    wall_time: float
    oracle_only: bool = False

    def to_canonical_dict(self) -> dict:
        """Deterministic content: everything except wall-clock timing."""
        return {
            "run_id": self.run_id,
            "config_snapshot": self.config_snapshot,
            "totals": dict(self.totals),
            "accuracy_percent": self.accuracy_percent,
            "refinement_histogram": dict(self.refinement_histogram),
            "cross_check_stats": dict(self.cross_check_stats),
            "oracle_only": self.oracle_only,
        }

    def to_full_dict(self) -> dict:
        data = self.to_canonical_dict()
        data["wall_time"] = self.wall_time
        return data

    def canonical_json(self) -> str:
        return canonical_json(self.to_canonical_dict())


def accuracy_percent(solved_within_window: int, total: int) -> float:
    """100 * solved / total, rounded half-up to two decimal places."""
    if total == 0:
        return 0.0
    exact = Decimal(100) * Decimal(solved_within_window) / Decimal(total)
    return float(exact.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def build_report(
    run_id: str,
    config_snapshot: dict,
    sessions: list,
    oracle_only: bool = False,
    wall_time: float = 0.0,
) -> RunReport:
    max_refinements = int(config_snapshot.get("max_refinements", ACCURACY_REFINEMENT_WINDOW))
    histogram = {str(i): 0 for i in range(max_refinements + 1)}
    histogram["unsolved"] = 0
    totals = {"problems": len(sessions), "solved": 0, "unsolved": 0, "error": 0, "pending": 0}
    cross_stats = {key: 0 for key in CROSS_CHECK_KEYS}
    solved_within_window = 0

    for session in sessions:
        verdict = session.verdict
        if verdict == "solved":
            totals["solved"] += 1
            if session.refinements_used <= ACCURACY_REFINEMENT_WINDOW:
                solved_within_window += 1
            key = str(session.refinements_used)
            histogram[key] = histogram.get(key, 0) + 1
        elif verdict == "unsolved":
            totals["unsolved"] += 1
            histogram["unsolved"] += 1
        elif verdict == "error":
            totals["error"] += 1
        else:
            totals["pending"] += 1
        for attempt in session.attempts:
            for outcome in attempt.computed.values():
                if outcome.cross_check in cross_stats:
                    cross_stats[outcome.cross_check] += 1

    return RunReport(
        run_id=run_id,
        config_snapshot=config_snapshot,
        totals=totals,
        accuracy_percent=accuracy_percent(solved_within_window, totals["problems"]),
        refinement_histogram=histogram,
        cross_check_stats=cross_stats,
        wall_time=wall_time,
        oracle_only=oracle_only,
    )
