"""Turn raw model completions into typed values.

The labeled block format used here is the single grammar shared with the
prompt templates (see ``templates/*/output_format.txt``): a generation
response carries a ``FORMULAE:`` block, a ``CONFIDENCE_FORMULAE:`` line, a
``REASONING:`` block and a ``CONFIDENCE_REASONING:`` line; a review response
carries ``VERDICT:``, an optional ``REVISED_FORMULAE:`` /
``REVISED_REASONING:`` block and a ``CONFIDENCE:`` line.  Final answers are
read from the last "The answer is therefore ..." sentence.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation

logger = logging.getLogger(__name__)

ANSWER_SENTINEL = "The answer is therefore"

_LABEL_RE = re.compile(
    r"^\s*(FORMULAE|REASONING|CONFIDENCE_FORMULAE|CONFIDENCE_REASONING|"
    r"REVISED_FORMULAE|REVISED_REASONING|VERDICT|CONFIDENCE)\s*:\s*(.*)$",
    re.IGNORECASE,
)
_ITEM_RE = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)\s*$")
_EXPLANATION_RE = re.compile(r"^\s*[-*]\s+([^:]+?)\s*:\s*(.*\S)\s*$")
_SENTINEL_RE = re.compile(r"the\s+answer\s+is\s+therefore\b[:\s]*", re.IGNORECASE)
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)

# Superscript characters used by some completions for powers of ten.
_SUPERSCRIPT_MAP = str.maketrans("⁰¹²³⁴⁵⁶⁷⁸⁹⁻⁺", "0123456789-+")

_NUMBER_RE = re.compile(
    r"([+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)"  # mantissa, possibly already scientific
    r"(?:\s*[×x*]\s*10\s*(?:\^|\*\*)?\s*[{(]?\s*([+-]?\d+)\s*[})]?)?"  # optional ×10^k
)


class ParseError(ValueError):
    """A completion did not match the expected grammar."""

    def __init__(self, message: str, text: str = ""):
        snippet = text.strip().replace("\n", " ")
        if len(snippet) > 120:
            snippet = snippet[:117] + "..."
        if snippet:
            message = f"{message} (in: {snippet!r})"
        super().__init__(message)


class SentinelNotFoundError(ParseError):
    """The answer sentinel sentence is absent from the completion."""


@dataclass(frozen=True)
class Formula:
    """One collected formula plus what each symbol in it stands for."""

    expression: str
    variable_explanations: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class FormulaSet:
    formulae: tuple[Formula, ...]
    confidence: float

    def normalized_text(self) -> str:
        return _normalize(format_formula_items(self))


@dataclass(frozen=True)
class ReasoningTrace:
    steps: tuple[str, ...]
    confidence: float

    def normalized_text(self) -> str:
        return _normalize(format_reasoning_items(self))


@dataclass(frozen=True)
class ReviewOutcome:
    """Reviewer verdict plus the content to carry forward.

    ``revised_content`` always carries the reviewer's own confidence; when the
    verdict is ``correct`` its formulae/steps are copied verbatim from the
    reviewed input.
    """

    verdict: str  # "correct" | "incorrect"
    revised_content: FormulaSet | ReasoningTrace
    confidence: float


@dataclass(frozen=True)
class FinalAnswer:
    value: float
    raw_sentence: str
    unit_text: str | None = None


def _normalize(text: str) -> str:
    return " ".join(text.split())


def clamp_confidence(value: float, context: str = "confidence") -> float:
    """Clamp a parsed confidence into [0, 1], warning when out of range."""
    if value < 0.0 or value > 1.0:
        clamped = min(max(value, 0.0), 1.0)
        logger.warning("%s %s out of range, clamped to %s", context, value, clamped)
        return clamped
    return float(value)


# ---------------------------------------------------------------------------
# serialization (inverse of the parsers below; used for prompts, demos, export)


def format_confidence(value: float) -> str:
    return repr(float(value))


def format_formula_items(formula_set: FormulaSet) -> str:
    lines: list[str] = []
    for index, formula in enumerate(formula_set.formulae, start=1):
        lines.append(f"{index}. {_normalize(formula.expression)}")
        for symbol, explanation in formula.variable_explanations:
            lines.append(f"   - {_normalize(symbol)}: {_normalize(explanation)}")
    return "\n".join(lines)


def format_reasoning_items(trace: ReasoningTrace) -> str:
    return "\n".join(
        f"{index}. {_normalize(step)}" for index, step in enumerate(trace.steps, start=1)
    )


def format_formula_block(formula_set: FormulaSet) -> str:
    return (
        "FORMULAE:\n"
        + format_formula_items(formula_set)
        + "\nCONFIDENCE_FORMULAE: "
        + format_confidence(formula_set.confidence)
    )


def format_reasoning_block(trace: ReasoningTrace) -> str:
    return (
        "REASONING:\n"
        + format_reasoning_items(trace)
        + "\nCONFIDENCE_REASONING: "
        + format_confidence(trace.confidence)
    )


def format_generation(formula_set: FormulaSet, trace: ReasoningTrace) -> str:
    """Render the canonical generation response; parse_generation inverts it."""
    return format_formula_block(formula_set) + "\n" + format_reasoning_block(trace)


def format_review_response(
    verdict: str,
    revised: FormulaSet | ReasoningTrace | None = None,
    confidence: float = 0.0,
) -> str:
    """Render a canonical review response (used for demos and scripted tests)."""
    lines = [f"VERDICT: {verdict}"]
    if revised is not None:
        if isinstance(revised, FormulaSet):
            lines.append("REVISED_FORMULAE:")
            lines.append(format_formula_items(revised))
        else:
            lines.append("REVISED_REASONING:")
            lines.append(format_reasoning_items(revised))
    lines.append(f"CONFIDENCE: {format_confidence(confidence)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# block scanning


def _split_blocks(text: str) -> dict[str, list[str] | str]:
    """Map each label in the text to its inline value or the lines that follow it.

    Only the first occurrence of each label is kept; text before any label is
    ignored.
    """
    block_labels = ("FORMULAE", "REASONING", "REVISED_FORMULAE", "REVISED_REASONING")
    blocks: dict[str, list[str] | str] = {}
    current: list[str] | None = None
    for line in text.splitlines():
        match = _LABEL_RE.match(line)
        if match:
            label = match.group(1).upper()
            inline = match.group(2).strip()
            if label in block_labels:
                if label in blocks:
                    current = None
                else:
                    current = []
                    blocks[label] = current
                    if inline:
                        current.append(inline)
            else:
                blocks.setdefault(label, inline)
                current = None
        elif current is not None:
            current.append(line)
    return blocks


def _parse_formula_lines(lines: list[str], text: str) -> tuple[Formula, ...]:
    formulae: list[Formula] = []
    expression: str | None = None
    explanations: list[tuple[str, str]] = []

    def flush() -> None:
        nonlocal expression, explanations
        if expression is not None:
            formulae.append(Formula(expression, tuple(explanations)))
        expression, explanations = None, []

    for line in lines:
        if not line.strip():
            continue
        item = _ITEM_RE.match(line)
        if item:
            flush()
            expression = item.group(2)
            continue
        explanation = _EXPLANATION_RE.match(line)
        if explanation and expression is not None:
            explanations.append((explanation.group(1), explanation.group(2)))
            continue
        if expression is None:
            expression = line.strip()
        else:
            expression = f"{expression} {line.strip()}"
    flush()
    if not formulae:
        raise ParseError("empty FORMULAE block", text)
    return tuple(formulae)


def _parse_step_lines(lines: list[str], text: str) -> tuple[str, ...]:
    steps: list[str] = []
    for line in lines:
        if not line.strip():
            continue
        item = _ITEM_RE.match(line)
        if item:
            steps.append(item.group(2))
        elif steps:
            steps[-1] = f"{steps[-1]} {line.strip()}"
        else:
            steps.append(line.strip())
    if not steps:
        raise ParseError("empty REASONING block", text)
    return tuple(steps)


def _parse_confidence_value(raw: str | list[str] | None, label: str) -> float | None:
    """Pull a float off a confidence line; None when the line is absent or bare."""
    if raw is None:
        return None
    value_text = raw if isinstance(raw, str) else " ".join(raw)
    match = re.search(r"[+-]?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?", value_text)
    if not match:
        return None
    return clamp_confidence(float(match.group(0)), label)


# ---------------------------------------------------------------------------
# parsers


def parse_generation(text: str) -> tuple[FormulaSet, ReasoningTrace]:
    """Parse a generation response into its formula set and reasoning trace.

    A missing confidence line defaults to 0.0 so the first review iteration
    can always be accepted.
    """
    blocks = _split_blocks(text)
    if "FORMULAE" not in blocks:
        raise ParseError("missing FORMULAE block", text)
    if "REASONING" not in blocks:
        raise ParseError("missing REASONING block", text)
    formulae = _parse_formula_lines(blocks["FORMULAE"], text)  # type: ignore[arg-type]
    steps = _parse_step_lines(blocks["REASONING"], text)  # type: ignore[arg-type]
    formula_conf = _parse_confidence_value(blocks.get("CONFIDENCE_FORMULAE"), "CONFIDENCE_FORMULAE")
    reasoning_conf = _parse_confidence_value(
        blocks.get("CONFIDENCE_REASONING"), "CONFIDENCE_REASONING"
    )
    return (
        FormulaSet(formulae, formula_conf if formula_conf is not None else 0.0),
        ReasoningTrace(steps, reasoning_conf if reasoning_conf is not None else 0.0),
    )


def parse_review(text: str, reviewed: FormulaSet | ReasoningTrace) -> ReviewOutcome:
    """Parse a review response against the content that was under review.

    A ``correct`` verdict forces the revised content to equal the reviewed
    input (the reviewer's revision text, if any, is ignored).
    """
    blocks = _split_blocks(text)
    verdict_raw = blocks.get("VERDICT")
    if verdict_raw is None:
        raise ParseError("missing VERDICT", text)
    verdict_word = str(verdict_raw).strip().strip(".").lower()
    if verdict_word.startswith("incorrect"):
        verdict = "incorrect"
    elif verdict_word.startswith("correct"):
        verdict = "correct"
    else:
        raise ParseError(f"unrecognized verdict {verdict_raw!r}", text)

    confidence = _parse_confidence_value(blocks.get("CONFIDENCE"), "CONFIDENCE")
    if confidence is None:
        raise ParseError("missing CONFIDENCE", text)

    if verdict == "correct":
        revised = replace(reviewed, confidence=confidence)
        return ReviewOutcome("correct", revised, confidence)

    if isinstance(reviewed, FormulaSet):
        lines = blocks.get("REVISED_FORMULAE")
        if lines is None:
            raise ParseError("missing REVISED_FORMULAE block", text)
        revised = FormulaSet(_parse_formula_lines(lines, text), confidence)  # type: ignore[arg-type]
    else:
        lines = blocks.get("REVISED_REASONING")
        if lines is None:
            raise ParseError("missing REVISED_REASONING block", text)
        revised = ReasoningTrace(_parse_step_lines(lines, text), confidence)  # type: ignore[arg-type]
    return ReviewOutcome("incorrect", revised, confidence)


def _prepare_answer_tail(tail: str) -> str:
    tail = tail.replace("\\times", "×").replace("\\cdot", "*")
    tail = tail.replace("$", " ").replace("\\(", " ").replace("\\)", " ")
    tail = tail.translate(_SUPERSCRIPT_MAP)
    return tail


def extract_final_answer(text: str) -> FinalAnswer:
    """Extract the numeric answer following the last answer sentinel.

    Accepts plain decimals, e-notation and ``×10^k`` forms (including LaTeX
    ``\\times10^{k}`` and unicode superscripts); trailing unit text is kept
    separately, never converted.
    """
    matches = list(_SENTINEL_RE.finditer(text))
    if not matches:
        raise SentinelNotFoundError("no answer sentence found", text)
    sentinel = matches[-1]
    line_end = text.find("\n", sentinel.end())
    raw_tail = text[sentinel.end() : line_end if line_end != -1 else len(text)]
    raw_sentence = text[sentinel.start() : sentinel.end()] + raw_tail

    tail = _prepare_answer_tail(raw_tail)
    number = _NUMBER_RE.search(tail)
    if not number:
        raise ParseError("no parseable number after answer sentinel", raw_sentence)
    mantissa, exponent = number.group(1), number.group(2)
    try:
        value_dec = Decimal(mantissa)
        if exponent is not None:
            value_dec = value_dec.scaleb(int(exponent))
        value = float(value_dec)
    except (InvalidOperation, OverflowError) as exc:
        raise ParseError(f"unparseable answer number: {exc}", raw_sentence) from exc

    unit = tail[number.end() :].strip().strip(".,;:)]}")
    unit = unit.strip()
    return FinalAnswer(value, raw_sentence.strip(), unit or None)


def parse_code_block(text: str) -> str:
    """Return the contents of the last triple-backtick fenced block."""
    blocks = _FENCE_RE.findall(text)
    if not blocks:
        raise ParseError("no fenced code block found", text)
    return blocks[-1]
