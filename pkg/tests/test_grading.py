"""Tolerance-rule tests, oracle equivalence, aggregation and annotation."""

from __future__ import annotations

import random
from decimal import Decimal

import pytest

from chemreason.grading import (
    AccuracyCell,
    AnnotationStore,
    GradeResult,
    aggregate,
    failure_breakdown,
    grade_answer,
    grade_record,
)
from chemreason.refine import RunRecord


def reference_grade(pred: float, gold: float) -> bool:
    """Independent brute-force reading of the tolerance rule, on exact decimals."""
    p = Decimal(repr(pred)) if isinstance(pred, float) else Decimal(pred)
    g = Decimal(repr(gold)) if isinstance(gold, float) else Decimal(gold)
    if abs(g) >= 1:
        deviation = p - g
        if deviation < 0:
            deviation = -deviation
        return deviation <= Decimal("0.1")
    if g == 0:
        return abs(p) <= Decimal("0.05")
    relative = abs(p - g) / abs(g)
    return relative <= Decimal("0.05")


def test_absolute_branch_example():
    assert grade_answer(45.75, 45.7) is True  # |delta| = 0.05 <= 0.1


def test_relative_branch_small_answers():
    # Expected booleans computed with the decimal oracle above:
    # |1.25-1.312|/1.312 = 0.04726 <= 0.05 and |1.26-1.312|/1.312 = 0.03963 <= 0.05.
    assert reference_grade(1.25e-20, 1.312e-20) is True
    assert reference_grade(1.26e-20, 1.312e-20) is True
    assert grade_answer(1.25e-20, 1.312e-20) is True
    assert grade_answer(1.26e-20, 1.312e-20) is True
    # just outside the 5% band
    assert grade_answer(1.24e-20, 1.312e-20) is False


def test_exact_match_is_correct_for_any_finite_gold():
    rng = random.Random(3)
    for _ in range(200):
        gold = rng.uniform(-1e6, 1e6) * 10 ** rng.randint(-25, 6)
        assert grade_answer(gold, gold) is True
    assert grade_answer(0.0, 0.0) is True


def test_boundary_absolute_deviation_exactly_point_one():
    assert grade_answer(2.1, 2.0) is True
    assert grade_answer(2.2, 2.0) is False
    assert grade_answer(-2.1, -2.0) is True


def test_boundary_relative_error_exactly_five_percent():
    assert grade_answer(0.525, 0.5) is True
    assert grade_answer(0.4750, 0.5) is True
    assert grade_answer(0.5251, 0.5) is False


def test_gold_zero_uses_absolute_fallback():
    assert grade_answer(0.05, 0.0) is True
    assert grade_answer(0.051, 0.0) is False
    assert grade_answer(-0.05, 0.0) is True


def test_magnitude_selects_branch_for_negative_gold():
    assert grade_answer(-1.05, -1.0) is True  # |gold| >= 1: absolute branch
    assert grade_answer(-0.94, -0.9) is True  # relative: 0.04/0.9 = 0.0444 <= 0.05
    assert grade_answer(-0.95, -0.9) is False  # relative: 0.05/0.9 = 0.0556 > 0.05
    assert reference_grade(-0.94, -0.9) is True
    assert reference_grade(-0.95, -0.9) is False


def test_non_finite_inputs_rejected():
    with pytest.raises(ValueError):
        grade_answer(float("nan"), 1.0)
    with pytest.raises(ValueError):
        grade_answer(1.0, float("inf"))


def test_oracle_equivalence_random_pairs():
    rng = random.Random(90210)
    for _ in range(2000):
        exponent = rng.randint(-25, 6)
        gold = rng.uniform(-10, 10) * 10**exponent
        if rng.random() < 0.5:
            pred = gold * (1 + rng.uniform(-0.15, 0.15))
        else:
            pred = gold + rng.uniform(-0.5, 0.5)
        assert grade_answer(pred, gold) == reference_grade(pred, gold), (pred, gold)


def make_results(dataset: str, correct: int, total: int) -> list[GradeResult]:
    results = []
    for index in range(total):
        is_correct = index < correct
        results.append(
            GradeResult(
                problem_id=f"{dataset}-{index}",
                predicted=1.0,
                gold=1.0,
                correct=is_correct,
                failure_kind=None if is_correct else "out_of_tolerance",
                dataset=dataset,
                method="structchem",
                mode="few_shot",
            )
        )
    return results


def test_aggregate_reproduces_published_row():
    # 13/34, 21/39, 60/107, 16/49 -> 38.24 / 53.85 / 56.07 / 32.65, average 45.20
    results = (
        make_results("quan", 13, 34)
        + make_results("chemmc", 21, 39)
        + make_results("atkins", 60, 107)
        + make_results("matter", 16, 49)
    )
    table = aggregate(results)
    assert table.cell("structchem", "few_shot", "quan").accuracy == pytest.approx(38.24, abs=0.01)
    assert table.cell("structchem", "few_shot", "chemmc").accuracy == pytest.approx(53.85, abs=0.01)
    assert table.cell("structchem", "few_shot", "atkins").accuracy == pytest.approx(56.07, abs=0.01)
    assert table.cell("structchem", "few_shot", "matter").accuracy == pytest.approx(32.65, abs=0.01)
    assert table.row_average("structchem", "few_shot") == pytest.approx(45.20, abs=0.01)


def test_aggregate_empty_group_flagged():
    table = aggregate([])
    cell = table.cell("structchem", "few_shot", "quan")
    assert cell.total == 0
    assert cell.accuracy == 0.0
    assert cell.empty


def test_aggregate_all_correct():
    table = aggregate(make_results("quan", 5, 5))
    assert table.cell("structchem", "few_shot", "quan").accuracy == 100.0


def test_aggregate_permutation_invariant():
    results = make_results("quan", 3, 7) + make_results("matter", 2, 5)
    rng = random.Random(11)
    shuffled = list(results)
    rng.shuffle(shuffled)
    assert aggregate(results).cells == aggregate(shuffled).cells


def test_failed_runs_count_as_incorrect():
    results = make_results("quan", 2, 4)
    results.append(
        GradeResult("quan-failed", None, 3.0, False, "no_answer", "quan", "structchem", "few_shot")
    )
    table = aggregate(results)
    cell = table.cell("structchem", "few_shot", "quan")
    assert cell.total == 5
    assert cell.correct == 2
    assert failure_breakdown(results) == {
        "no_answer": 1,
        "parse_failure": 0,
        "out_of_tolerance": 2,
    }


def test_accuracy_table_text_rendering():
    table = aggregate(make_results("quan", 13, 34))
    text = table.render_text()
    assert "38.24" in text
    assert "quan" in text
    assert "Avg." in text


def test_grade_result_rejects_correct_with_failure():
    with pytest.raises(ValueError):
        GradeResult("x", 1.0, 1.0, True, "no_answer")


def _record(correct: bool, failure: str | None = None, problem_id: str = "p1") -> RunRecord:
    return RunRecord(
        problem_id=problem_id,
        dataset_tag="quan",
        method="structchem",
        mode="few_shot",
        problem_statement="stmt",
        unit="J",
        gold_answer_text="2.0",
        correct=correct,
        failure=failure,
    )


def test_grade_record_failure_kinds():
    assert grade_record(_record(False, "no_answer")).failure_kind == "no_answer"
    assert grade_record(_record(False, "parse:generate: bad")).failure_kind == "parse_failure"
    assert grade_record(_record(False, "sandbox unavailable")).failure_kind == "no_answer"


def test_annotate_error_and_distribution(tmp_path):
    store = AnnotationStore(tmp_path / "annotations.json")
    wrong_formula = _record(False, None, "p1")
    arithmetic_slip = _record(False, None, "p2")
    store.annotate_error(wrong_formula, "principle", "needs the momentum-wavelength relation")
    store.annotate_error(arithmetic_slip, "calculation", "arithmetic slip in step 3")
    assert len(store) == 2
    distribution = store.error_distribution()
    assert distribution["quan"]["principle"] == 0.5
    assert distribution["quan"]["calculation"] == 0.5
    assert distribution["quan"]["factual"] == 0.0
    # persisted: reload sees the same annotations
    reloaded = AnnotationStore(tmp_path / "annotations.json")
    assert reloaded.get("p1")["category"] == "principle"


def test_annotate_correct_record_rejected(tmp_path):
    store = AnnotationStore(tmp_path / "annotations.json")
    with pytest.raises(ValueError, match="correct"):
        store.annotate_error(_record(True), "principle")


def test_annotate_unknown_category_rejected(tmp_path):
    store = AnnotationStore(tmp_path / "annotations.json")
    with pytest.raises(ValueError, match="category"):
        store.annotate_error(_record(False), "typo")


def test_accuracy_cell_properties():
    assert AccuracyCell(1, 4).accuracy == 25.0
    assert not AccuracyCell(1, 4).empty
