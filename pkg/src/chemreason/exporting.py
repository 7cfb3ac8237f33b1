"""Fine-tuning corpus emission from finished run records.

Three formats: ``original`` (problem plus the gold answer sentence),
``cot_trace`` (problem plus the raw chain-of-thought completion) and
``structured_trace`` (problem plus the accepted formulae and reasoning blocks
and the final answer sentence, which parses back through the generation
grammar).  Output is line-delimited records after one manifest header line.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .parsing import format_generation
from .refine import RunRecord, STRUCTURED_METHOD

logger = logging.getLogger(__name__)

EXPORT_FORMATS = ("original", "cot_trace", "structured_trace")
CORPUS_SCHEMA = "finetune-corpus-v1"


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class FinetuneExample:
    input_text: str
    target_text: str
    format: str

    def to_dict(self) -> dict:
        return {"input": self.input_text, "target": self.target_text, "format": self.format}


def _example_for(record: RunRecord, corpus_format: str) -> FinetuneExample | None:
    if corpus_format == "original":
        return FinetuneExample(
            record.problem_statement,
            f"The answer is therefore {record.gold_answer_text}.",
            "original",
        )
    if corpus_format == "cot_trace":
        if record.method != "cot" or not record.exchanges:
            return None
        return FinetuneExample(
            record.problem_statement, record.exchanges[0].completion.text, "cot_trace"
        )
    if corpus_format == "structured_trace":
        if record.method != STRUCTURED_METHOD or record.state is None or record.final_answer is None:
            return None
        answer_text = repr(record.final_answer.value)
        body = format_generation(record.state.best_formulae, record.state.best_reasoning)
        return FinetuneExample(
            record.problem_statement,
            f"{body}\nThe answer is therefore {answer_text}.",
            "structured_trace",
        )
    raise ExportError(f"unknown corpus format {corpus_format!r}")


def build_examples(
    records: Sequence[RunRecord], corpus_format: str, only_correct: bool = False
) -> list[FinetuneExample]:
    if corpus_format not in EXPORT_FORMATS:
        raise ExportError(f"unknown corpus format {corpus_format!r}")
    examples = []
    for record in records:
        if only_correct and not record.correct:
            continue
        example = _example_for(record, corpus_format)
        if example is not None:
            examples.append(example)
    return examples


def export_finetune(
    records: Sequence[RunRecord],
    corpus_format: str,
    out_path: str | Path,
    only_correct: bool = False,
    source_run: str = "",
) -> int:
    """Write the corpus file; returns the number of exported examples.

    The first line is a manifest header; each following line is one example.
    Byte-identical given the same records and flags.
    """
    examples = build_examples(records, corpus_format, only_correct)
    header = {
        "schema": CORPUS_SCHEMA,
        "format": corpus_format,
        "only_correct": only_correct,
        "source_run": source_run,
        "source_records": len(records),
        "exported": len(examples),
    }
    lines = [json.dumps(header, sort_keys=True, ensure_ascii=False)]
    lines.extend(
        json.dumps(example.to_dict(), sort_keys=True, ensure_ascii=False) for example in examples
    )
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if not examples:
        logger.warning("empty corpus after filtering (format=%s, only_correct=%s)", corpus_format, only_correct)
    return len(examples)
