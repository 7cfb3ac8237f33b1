"""Shared fixtures: synthetic problems and scripted completion builders."""

from __future__ import annotations

from chemreason.backend import configure_roles
from chemreason.datasets import Dataset, Problem
from chemreason.parsing import (
    Formula,
    FormulaSet,
    ReasoningTrace,
    format_generation,
    format_review_response,
)

ROLES = configure_roles({"model": "scripted-model"})


def make_problem(
    problem_id: str = "quan-w-0",
    gold: str = "2.45",
    dataset_tag: str = "quan",
    solution: str | None = None,
) -> Problem:
    return Problem(
        id=problem_id,
        statement=f"Synthetic question {problem_id} asking for a number.",
        unit="J",
        gold_answer=float(gold),
        gold_answer_text=gold,
        solution=solution,
        dataset_tag=dataset_tag,
    )


def make_dataset(n_without: int, n_with: int, name: str = "synth") -> Dataset:
    without = tuple(
        make_problem(f"{name}-w-{i}", gold=f"{i + 1}.5", dataset_tag=name)
        for i in range(n_without)
    )
    withs = tuple(
        Problem(
            id=f"{name}-s-{i}",
            statement=f"Solved question {i}.",
            unit="J",
            gold_answer=float(i + 1),
            gold_answer_text=f"{i + 1}",
            solution=f"Apply y = {i + 1}. Conclude.",
            dataset_tag=name,
        )
        for i in range(n_with)
    )
    return Dataset(name, without, withs)


def formula_set(tag: str, confidence: float) -> FormulaSet:
    return FormulaSet(
        (Formula(f"E_{tag} = h * nu", (("h", "the Planck constant"),)),), confidence
    )


def reasoning_trace(tag: str, confidence: float) -> ReasoningTrace:
    return ReasoningTrace(
        (f"Step one for {tag}.", f"Step two for {tag}."), confidence
    )


def generation_response(
    tag: str = "gen", formula_conf: float = 0.6, reasoning_conf: float = 0.6
) -> str:
    return format_generation(formula_set(tag, formula_conf), reasoning_trace(tag, reasoning_conf))


def formula_review(confidence: float, tag: str | None = None, verdict: str = "incorrect") -> str:
    revised = formula_set(tag, confidence) if tag is not None else None
    return format_review_response(verdict, revised, confidence)


def reasoning_review(confidence: float, tag: str | None = None, verdict: str = "incorrect") -> str:
    revised = reasoning_trace(tag, confidence) if tag is not None else None
    return format_review_response(verdict, revised, confidence)


def finalize_response(value: str = "2.45") -> str:
    return f"Collecting the accepted work. The answer is therefore {value}."


def structured_responses(
    formula_confs: list[float],
    reasoning_confs: list[float],
    initial: tuple[float, float] = (0.6, 0.6),
    answer: str = "2.45",
) -> list[str]:
    """One problem's full scripted transcript for the structured method."""
    responses = [generation_response("gen", initial[0], initial[1])]
    responses += [formula_review(conf, tag=f"f{i}") for i, conf in enumerate(formula_confs, 1)]
    responses += [reasoning_review(conf, tag=f"r{i}") for i, conf in enumerate(reasoning_confs, 1)]
    responses.append(finalize_response(answer))
    return responses
