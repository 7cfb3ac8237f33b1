"""Prompt assembly for the structured pipeline and the baseline methods.

Templates are plain text files under ``templates/<method>/<section>.txt``,
one file per (method, section kind), with ``{{problem}}``, ``{{demos}}``,
``{{formulae}}`` and ``{{reasoning}}`` placeholders.  Rendering is pure:
equal inputs produce byte-equal prompts.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .datasets import DemoSet, Problem
from .parsing import (
    Formula,
    FormulaSet,
    ReasoningTrace,
    format_formula_items,
    format_generation,
    format_reasoning_items,
)

SECTION_ORDER = ("general_instruction", "output_format", "demonstrations", "trigger")
BASELINE_METHODS = ("direct", "system", "cot", "pot_code")
STRUCT_TEMPLATES = (
    "struct_generate",
    "struct_review_formulae",
    "struct_review_reasoning",
    "struct_finalize",
)


class PromptError(ValueError):
    """A prompt could not be rendered from the given inputs."""


@dataclass(frozen=True)
class PromptTemplate:
    method: str
    sections: tuple[tuple[str, str], ...]  # (section_kind, text) in SECTION_ORDER


@dataclass(frozen=True)
class RenderedPrompt:
    """Role-tagged messages ready for a chat-completion request."""

    messages: tuple[tuple[str, str], ...]  # (role, text)
    method: str
    problem_id: str

    def __post_init__(self) -> None:
        if not self.messages:
            raise PromptError("rendered prompt has no messages")
        if self.messages[-1][0] != "user":
            raise PromptError("final message must be user-role")

    @property
    def text(self) -> str:
        return "\n\n".join(text for _, text in self.messages)

    def to_dict(self) -> dict:
        return {
            "messages": [{"role": role, "text": text} for role, text in self.messages],
            "method": self.method,
            "problem_id": self.problem_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RenderedPrompt":
        return cls(
            tuple((m["role"], m["text"]) for m in data["messages"]),
            data["method"],
            data["problem_id"],
        )


def _template_root():
    return resources.files("chemreason") / "templates"


@lru_cache(maxsize=None)
def load_template(method: str) -> PromptTemplate:
    directory = _template_root() / method
    sections = []
    for kind in SECTION_ORDER:
        candidate = directory / f"{kind}.txt"
        try:
            text = candidate.read_text(encoding="utf-8")
        except FileNotFoundError:
            continue
        sections.append((kind, text.rstrip("\n")))
    if not sections:
        raise PromptError(f"no template files for method {method!r}")
    return PromptTemplate(method, tuple(sections))


@lru_cache(maxsize=1)
def template_version() -> str:
    """Stable hash of every template file; recorded in run manifests."""
    digest = hashlib.sha256()
    root = _template_root()
    entries = []
    for method_dir in root.iterdir():
        if not method_dir.is_dir():
            continue
        for item in method_dir.iterdir():
            if item.name.endswith(".txt"):
                entries.append((f"{method_dir.name}/{item.name}", item.read_bytes()))
    for name, blob in sorted(entries):
        digest.update(name.encode())
        digest.update(b"\x00")
        digest.update(blob)
    return digest.hexdigest()[:16]


# ---------------------------------------------------------------------------
# demonstration formatting


def _split_solution_steps(solution: str) -> list[str]:
    lines = [line.strip() for line in solution.splitlines() if line.strip()]
    if len(lines) > 1:
        return lines
    sentences = [s.strip() for s in re.split(r"(?<=[.!?])\s+", solution.strip()) if s.strip()]
    return sentences or [solution.strip()]


def recast_solution_as_generation(problem: Problem) -> str:
    """Deterministically reformat a worked solution into the labeled block format.

    Lines containing ``=`` become the formula entries; the remaining text
    becomes numbered reasoning steps.  The output parses back through
    ``parse_generation``.
    """
    if not problem.has_solution:
        raise PromptError(f"problem {problem.id!r} has no solution to recast")
    steps = _split_solution_steps(problem.solution or "")
    equations = [step for step in steps if "=" in step]
    if equations:
        formulae = tuple(Formula(expression) for expression in equations)
    else:
        formulae = (Formula("Quantities defined in the problem statement"),)
    block = format_generation(
        FormulaSet(formulae, 1.0), ReasoningTrace(tuple(steps), 1.0)
    )
    return f"{block}\nThe answer is therefore {problem.gold_answer_text}."


def _format_demos(demos: DemoSet, structured: bool) -> str:
    parts = ["Here are worked examples:"]
    for index, demo in enumerate(demos.demos, start=1):
        if structured:
            body = recast_solution_as_generation(demo)
            parts.append(f"Example {index}:\nProblem: {demo.statement}\nAnswer:\n{body}")
        else:
            parts.append(
                f"Example {index}:\nProblem: {demo.statement}\nSolution: {demo.solution}\n"
                f"The answer is therefore {demo.gold_answer_text}."
            )
    return "\n\n".join(parts)


# ---------------------------------------------------------------------------
# rendering


def _substitute(text: str, values: dict[str, str]) -> str:
    for key, value in values.items():
        text = text.replace("{{" + key + "}}", value)
    return text


def _render(template: PromptTemplate, problem_id: str, values: dict[str, str]) -> RenderedPrompt:
    system_text = ""
    user_parts: list[str] = []
    for kind, raw in template.sections:
        text = _substitute(raw, values).strip()
        if not text:
            continue
        if kind == "general_instruction":
            system_text = text
        else:
            user_parts.append(text)
    messages: list[tuple[str, str]] = []
    if system_text:
        messages.append(("system", system_text))
    messages.append(("user", "\n\n".join(user_parts)))
    return RenderedPrompt(tuple(messages), template.method, problem_id)


def _check_demo_mode(demos: DemoSet | None, mode: str) -> None:
    if mode not in ("zero_shot", "few_shot"):
        raise PromptError(f"unknown mode {mode!r}")
    if mode == "zero_shot" and demos is not None and len(demos) > 0:
        raise PromptError("demonstrations were provided for a zero-shot prompt")
    if mode == "few_shot" and (demos is None or len(demos) == 0):
        raise PromptError("few-shot mode requires demonstrations")


def render_baseline(
    method: str,
    problem: Problem,
    demos: DemoSet | None = None,
    mode: str = "zero_shot",
) -> RenderedPrompt:
    if method not in BASELINE_METHODS:
        raise PromptError(f"unknown baseline method {method!r}")
    _check_demo_mode(demos, mode)
    demo_text = _format_demos(demos, structured=False) if mode == "few_shot" else ""
    return _render(
        load_template(method),
        problem.id,
        {"problem": problem.statement, "demos": demo_text},
    )


def render_struct_generate(
    problem: Problem,
    demos: DemoSet | None = None,
    mode: str = "zero_shot",
) -> RenderedPrompt:
    _check_demo_mode(demos, mode)
    demo_text = _format_demos(demos, structured=True) if mode == "few_shot" else ""
    return _render(
        load_template("struct_generate"),
        problem.id,
        {"problem": problem.statement, "demos": demo_text},
    )


def render_struct_review(
    kind: str,
    problem: Problem,
    formulae: FormulaSet,
    reasoning: ReasoningTrace | None = None,
) -> RenderedPrompt:
    if kind == "formulae":
        template = load_template("struct_review_formulae")
        values = {
            "problem": problem.statement,
            "demos": "",
            "formulae": format_formula_items(formulae),
        }
    elif kind == "reasoning":
        if reasoning is None:
            raise PromptError("reasoning review requires the prior reasoning trace")
        template = load_template("struct_review_reasoning")
        values = {
            "problem": problem.statement,
            "demos": "",
            "formulae": format_formula_items(formulae),
            "reasoning": format_reasoning_items(reasoning),
        }
    else:
        raise PromptError(f"unknown review kind {kind!r}")
    return _render(template, problem.id, values)


def render_struct_finalize(
    problem: Problem, formulae: FormulaSet, reasoning: ReasoningTrace
) -> RenderedPrompt:
    return _render(
        load_template("struct_finalize"),
        problem.id,
        {
            "problem": problem.statement,
            "demos": "",
            "formulae": format_formula_items(formulae),
            "reasoning": format_reasoning_items(reasoning),
        },
    )
