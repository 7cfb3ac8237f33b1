"""Tolerance-based answer grading, accuracy aggregation and error annotation.

The grading rule: answers whose gold magnitude is at least 1 pass within an
absolute deviation of 0.1; smaller gold answers pass within a relative
tolerance of 0.05 (a gold of exactly 0 falls back to an absolute 0.05).
Comparisons run on exact decimals built from the shortest string form, so
boundary cases like a deviation of exactly 0.1 behave as written.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:  # pragma: no cover
    from .refine import RunRecord

ERROR_CATEGORIES = ("principle", "factual", "reasoning", "calculation")

ABSOLUTE_TOLERANCE = Decimal("0.1")
RELATIVE_TOLERANCE = Decimal("0.05")
ZERO_GOLD_TOLERANCE = Decimal("0.05")

FAILURE_KINDS = ("no_answer", "parse_failure", "out_of_tolerance")


def _to_decimal(value: float | int | str | Decimal) -> Decimal:
    if isinstance(value, Decimal):
        result = value
    elif isinstance(value, str):
        result = Decimal(value)
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value: {value}")
        result = Decimal(repr(value))
    else:
        result = Decimal(value)
    if not result.is_finite():
        raise ValueError(f"non-finite value: {value}")
    return result


def grade_answer(pred: float | int | str | Decimal, gold: float | int | str | Decimal) -> bool:
    """Apply the tolerance rule; total on finite inputs."""
    p = _to_decimal(pred)
    g = _to_decimal(gold)
    if abs(g) >= 1:
        return abs(p - g) <= ABSOLUTE_TOLERANCE
    if g == 0:
        return abs(p) <= ZERO_GOLD_TOLERANCE
    return abs(p - g) / abs(g) <= RELATIVE_TOLERANCE


@dataclass(frozen=True)
class GradeResult:
    problem_id: str
    predicted: float | None
    gold: float
    correct: bool
    failure_kind: str | None = None  # no_answer | parse_failure | out_of_tolerance
    dataset: str = "custom"
    method: str = ""
    mode: str = ""

    def __post_init__(self) -> None:
        if self.correct and self.failure_kind is not None:
            raise ValueError("a correct result cannot carry a failure kind")


def _failure_kind_for(record: "RunRecord") -> str:
    failure = record.failure or ""
    if failure.startswith("parse:"):
        return "parse_failure"
    return "no_answer"


def grade_record(record: "RunRecord") -> GradeResult:
    """Re-grade a run record from its stored answer and gold text."""
    if record.final_answer is None or record.failure is not None:
        return GradeResult(
            record.problem_id,
            record.final_answer.value if record.final_answer else None,
            float(record.gold_answer_text),
            False,
            _failure_kind_for(record),
            record.dataset_tag,
            record.method,
            record.mode,
        )
    correct = grade_answer(record.final_answer.value, record.gold_answer_text)
    return GradeResult(
        record.problem_id,
        record.final_answer.value,
        float(record.gold_answer_text),
        correct,
        None if correct else "out_of_tolerance",
        record.dataset_tag,
        record.method,
        record.mode,
    )


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class AccuracyCell:
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total if self.total else 0.0

    @property
    def empty(self) -> bool:
        return self.total == 0


@dataclass(frozen=True)
class AccuracyTable:
    """Accuracy per (method, mode, dataset) cell plus unweighted row averages."""

    cells: dict[tuple[str, str, str], AccuracyCell]

    def rows(self) -> list[tuple[str, str]]:
        return sorted({(method, mode) for method, mode, _ in self.cells})

    def datasets(self) -> list[str]:
        return sorted({dataset for _, _, dataset in self.cells})

    def cell(self, method: str, mode: str, dataset: str) -> AccuracyCell:
        return self.cells.get((method, mode, dataset), AccuracyCell(0, 0))

    def row_average(self, method: str, mode: str) -> float:
        datasets = self.datasets()
        if not datasets:
            return 0.0
        return sum(self.cell(method, mode, d).accuracy for d in datasets) / len(datasets)

    def to_dict(self) -> dict:
        return {
            "datasets": self.datasets(),
            "rows": [
                {
                    "method": method,
                    "mode": mode,
                    "cells": {
                        dataset: {
                            "correct": self.cell(method, mode, dataset).correct,
                            "total": self.cell(method, mode, dataset).total,
                            "accuracy": round(self.cell(method, mode, dataset).accuracy, 2),
                            "empty": self.cell(method, mode, dataset).empty,
                        }
                        for dataset in self.datasets()
                    },
                    "average": round(self.row_average(method, mode), 2),
                }
                for method, mode in self.rows()
            ],
        }

    def render_text(self) -> str:
        """Aligned text table: one row per (method, mode), one column per dataset."""
        datasets = self.datasets()
        header = ["method", "mode"] + datasets + ["Avg."]
        lines = [header]
        for method, mode in self.rows():
            row = [method, mode]
            for dataset in datasets:
                cell = self.cell(method, mode, dataset)
                value = f"{cell.accuracy:.2f}"
                if cell.empty:
                    value += "*"
                row.append(value)
            row.append(f"{self.row_average(method, mode):.2f}")
            lines.append(row)
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        rendered = [
            "  ".join(value.ljust(width) for value, width in zip(line, widths)).rstrip()
            for line in lines
        ]
        rendered.append("(* denominator 0)")
        return "\n".join(rendered)


def aggregate(results: Iterable[GradeResult]) -> AccuracyTable:
    """Count correct/total per (method, mode, dataset); failures count as wrong."""
    counts: dict[tuple[str, str, str], list[int]] = {}
    for result in results:
        key = (result.method, result.mode, result.dataset)
        pair = counts.setdefault(key, [0, 0])
        pair[0] += 1 if result.correct else 0
        pair[1] += 1
    return AccuracyTable({key: AccuracyCell(c, t) for key, (c, t) in counts.items()})


def failure_breakdown(results: Iterable[GradeResult]) -> dict[str, int]:
    breakdown = {kind: 0 for kind in FAILURE_KINDS}
    for result in results:
        if result.failure_kind:
            breakdown[result.failure_kind] += 1
    return breakdown


# ---------------------------------------------------------------------------
# error annotation (categories applied by hand to incorrect runs)


class AnnotationStore:
    """Persisted map of problem id -> (category, note); single-writer guarded."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()
        self._annotations: dict[str, dict] = {}
        if self.path and self.path.exists():
            self._annotations = json.loads(self.path.read_text(encoding="utf-8"))

    def annotate_error(self, record: "RunRecord", category: str, note: str = "") -> None:
        if category not in ERROR_CATEGORIES:
            raise ValueError(f"unknown error category {category!r}")
        if record.correct:
            raise ValueError(f"record {record.problem_id!r} is correct; nothing to annotate")
        with self._lock:
            self._annotations[record.problem_id] = {
                "category": category,
                "note": note,
                "dataset": record.dataset_tag,
                "method": record.method,
                "mode": record.mode,
            }
            if self.path:
                self.path.write_text(
                    json.dumps(self._annotations, indent=2, sort_keys=True, ensure_ascii=False)
                    + "\n",
                    encoding="utf-8",
                )

    def __len__(self) -> int:
        return len(self._annotations)

    def get(self, problem_id: str) -> dict | None:
        return self._annotations.get(problem_id)

    def error_distribution(self) -> dict[str, dict[str, float]]:
        """Per-dataset proportion of each error category among annotated errors."""
        per_dataset: dict[str, dict[str, int]] = {}
        for annotation in self._annotations.values():
            counts = per_dataset.setdefault(
                annotation["dataset"], {category: 0 for category in ERROR_CATEGORIES}
            )
            counts[annotation["category"]] += 1
        distribution: dict[str, dict[str, float]] = {}
        for dataset, counts in sorted(per_dataset.items()):
            total = sum(counts.values())
            distribution[dataset] = {
                category: counts[category] / total for category in ERROR_CATEGORIES
            }
        return distribution
