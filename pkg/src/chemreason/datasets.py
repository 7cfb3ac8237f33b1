"""Problem-set ingestion, solution/no-solution splits and demo sampling.

Canonical record schema: ``{id, problem_text, unit, answer_number, solution?}``.
Files may be JSON arrays or line-delimited JSON; a field-name map adapts other
source schemas.  Problems carrying a solution form the with-solutions split
that demonstrations are drawn from.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .parsing import ReasoningTrace

CANONICAL_FIELDS = ("id", "problem_text", "unit", "answer_number", "solution")


class DatasetError(ValueError):
    """A problem file or record could not be ingested."""


@dataclass(frozen=True)
class Problem:
    """One benchmark item with a numeric gold answer.

    ``gold_answer_text`` preserves the source's original answer string so
    grading can work on exact decimals.
    """

    id: str
    statement: str
    unit: str = ""
    gold_answer: float = 0.0
    gold_answer_text: str = "0"
    solution: str | None = None
    dataset_tag: str = "custom"

    def __post_init__(self) -> None:
        if not math.isfinite(self.gold_answer):
            raise DatasetError(f"problem {self.id!r}: gold answer is not finite")

    @property
    def has_solution(self) -> bool:
        return bool(self.solution and self.solution.strip())

    def to_record(self) -> dict:
        record = {
            "id": self.id,
            "problem_text": self.statement,
            "unit": self.unit,
            "answer_number": self.gold_answer_text,
        }
        if self.has_solution:
            record["solution"] = self.solution
        return record


@dataclass(frozen=True)
class Dataset:
    name: str
    problems_without_solutions: tuple[Problem, ...] = ()
    problems_with_solutions: tuple[Problem, ...] = ()

    def __post_init__(self) -> None:
        ids = [p.id for p in self.all_problems()]
        duplicates = [pid for pid, count in Counter(ids).items() if count > 1]
        if duplicates:
            raise DatasetError(f"duplicate problem ids: {sorted(duplicates)}")
        for problem in self.problems_with_solutions:
            if not problem.has_solution:
                raise DatasetError(
                    f"problem {problem.id!r} is in the with-solutions split but has no solution"
                )
        for problem in self.problems_without_solutions:
            if problem.has_solution:
                raise DatasetError(
                    f"problem {problem.id!r} carries a solution but is in the without-solutions split"
                )

    def all_problems(self) -> tuple[Problem, ...]:
        return self.problems_without_solutions + self.problems_with_solutions

    def __len__(self) -> int:
        return len(self.problems_without_solutions) + len(self.problems_with_solutions)


@dataclass(frozen=True)
class DemoSet:
    """Demonstrations sampled from the with-solutions split."""

    demos: tuple[Problem, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        for demo in self.demos:
            if not demo.has_solution:
                raise DatasetError(f"demo {demo.id!r} has no solution")

    def __len__(self) -> int:
        return len(self.demos)


def _parse_answer(raw: object, index: int) -> tuple[float, str]:
    text = str(raw).strip()
    try:
        value = float(text)
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"record {index}: non-numeric gold answer {raw!r}") from exc
    if not math.isfinite(value):
        raise DatasetError(f"record {index}: gold answer {raw!r} is not finite")
    return value, text


def _read_records(path: Path) -> list[dict]:
    text = path.read_text(encoding="utf-8")
    stripped = text.strip()
    if not stripped:
        return []
    if stripped.startswith("["):
        data = json.loads(stripped)
        if not isinstance(data, list):
            raise DatasetError(f"{path}: expected a JSON array of records")
        return data
    records = []
    for line_no, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: line {line_no + 1} is not valid JSON: {exc}") from exc
    return records


def load_dataset(
    path: str | Path,
    schema_mapping: Mapping[str, str] | None = None,
    name: str | None = None,
) -> Dataset:
    """Load a problem file, splitting on presence of the solution field.

    ``schema_mapping`` maps canonical field names to the source file's field
    names, e.g. ``{"problem_text": "question", "answer_number": "answer"}``.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    mapping = dict(schema_mapping or {})
    unknown = set(mapping) - set(CANONICAL_FIELDS)
    if unknown:
        raise DatasetError(f"schema mapping has unknown canonical fields: {sorted(unknown)}")
    dataset_name = name or path.stem

    def source_key(canonical: str) -> str:
        return mapping.get(canonical, canonical)

    with_solutions: list[Problem] = []
    without_solutions: list[Problem] = []
    for index, record in enumerate(_read_records(path)):
        if not isinstance(record, dict):
            raise DatasetError(f"record {index}: expected an object, got {type(record).__name__}")
        statement = record.get(source_key("problem_text"))
        if statement is None or not str(statement).strip():
            raise DatasetError(f"record {index}: missing field {source_key('problem_text')!r}")
        answer_raw = record.get(source_key("answer_number"))
        if answer_raw is None or (isinstance(answer_raw, str) and not answer_raw.strip()):
            raise DatasetError(f"record {index}: missing field {source_key('answer_number')!r}")
        value, text = _parse_answer(answer_raw, index)
        problem_id = record.get(source_key("id"))
        solution = record.get(source_key("solution"))
        problem = Problem(
            id=str(problem_id) if problem_id is not None else f"{dataset_name}-{index:04d}",
            statement=str(statement),
            unit=str(record.get(source_key("unit"), "") or ""),
            gold_answer=value,
            gold_answer_text=text,
            solution=str(solution) if solution is not None and str(solution).strip() else None,
            dataset_tag=dataset_name,
        )
        (with_solutions if problem.has_solution else without_solutions).append(problem)

    return Dataset(dataset_name, tuple(without_solutions), tuple(with_solutions))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the canonical line-delimited form; inverse of load_dataset."""
    path = Path(path)
    lines = [
        json.dumps(problem.to_record(), ensure_ascii=False, sort_keys=True)
        for problem in dataset.all_problems()
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def sample_demonstrations(dataset: Dataset, k: int, seed: int) -> DemoSet:
    """Draw k distinct demos uniformly without replacement, seed-deterministic."""
    pool = dataset.problems_with_solutions
    if k > len(pool):
        raise DatasetError(
            f"requested {k} demonstrations but only {len(pool)} problems carry solutions"
        )
    rng = random.Random(seed)
    return DemoSet(tuple(rng.sample(pool, k)), seed)


def dataset_stats(
    dataset: Dataset, traces: Sequence[ReasoningTrace] | None = None
) -> dict:
    """Summarize split sizes and, when traces are given, reasoning-step counts."""
    summary: dict = {
        "name": dataset.name,
        "total": len(dataset),
        "without_solutions": len(dataset.problems_without_solutions),
        "with_solutions": len(dataset.problems_with_solutions),
    }
    if traces is not None:
        lengths = [len(trace.steps) for trace in traces]
        histogram = dict(sorted(Counter(lengths).items()))
        summary["step_histogram"] = histogram
        summary["mean_steps"] = sum(lengths) / len(lengths) if lengths else 0.0
    return summary
