"""Confidence-gated iterative review-and-refinement engine and run records.

Per problem the structured method runs: one generation call, a fixed number
of formulae review iterations, the same number of reasoning review
iterations, then one finalize call (2 + 2n backend calls total).  Each review
iteration re-reviews the previous iteration's content; a revision is adopted
only when the reviewer's confidence is not below the running maximum, so the
kept content's confidence never decreases.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .backend import BackendError, Completion, ModelRole
from .datasets import DemoSet, Problem
from .grading import grade_answer
from .parsing import (
    FinalAnswer,
    Formula,
    FormulaSet,
    ParseError,
    ReasoningTrace,
    SentinelNotFoundError,
    extract_final_answer,
    parse_code_block,
    parse_generation,
    parse_review,
)
from .prompts import (
    BASELINE_METHODS,
    RenderedPrompt,
    render_baseline,
    render_struct_finalize,
    render_struct_generate,
    render_struct_review,
    template_version,
)
from .sandbox_client import (
    SandboxProtocolError,
    SandboxResult,
    SandboxUnavailableError,
    execute_script,
)

logger = logging.getLogger(__name__)

STRUCTURED_METHOD = "structchem"
METHODS = BASELINE_METHODS + (STRUCTURED_METHOD,)

RECORD_SCHEMA = "run-record-v1"
MANIFEST_SCHEMA = "run-manifest-v1"


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one run; review_target picks what each iteration re-reviews."""

    max_iterations: int = 3
    demo_count: int = 3
    mode: str = "zero_shot"  # zero_shot | few_shot
    review_target: str = "previous"  # previous | best
    always_accept_revisions: bool = False
    sandbox_runner: str | None = None
    sandbox_timeout_s: float = 20.0
    seed: int = 0
    concurrency: int = 1

    def __post_init__(self) -> None:
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.mode not in ("zero_shot", "few_shot"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.review_target not in ("previous", "best"):
            raise ValueError(f"unknown review_target {self.review_target!r}")

    def to_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations,
            "demo_count": self.demo_count,
            "mode": self.mode,
            "review_target": self.review_target,
            "always_accept_revisions": self.always_accept_revisions,
            "sandbox_timeout_s": self.sandbox_timeout_s,
            "seed": self.seed,
            "concurrency": self.concurrency,
        }


@dataclass(frozen=True)
class IterationLogEntry:
    phase: str  # formulae | reasoning
    index: int  # 1-based iteration number
    confidence: float | None  # reviewer confidence, None when the reply failed to parse
    accepted: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "index": self.index,
            "confidence": self.confidence,
            "accepted": self.accepted,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "IterationLogEntry":
        return cls(data["phase"], data["index"], data["confidence"], data["accepted"], data.get("note", ""))


@dataclass(frozen=True)
class RefinementState:
    best_formulae: FormulaSet
    best_reasoning: ReasoningTrace
    max_formula_confidence: float
    max_reasoning_confidence: float
    iteration_log: tuple[IterationLogEntry, ...] = ()

    def to_dict(self) -> dict:
        return {
            "best_formulae": _formula_set_to_dict(self.best_formulae),
            "best_reasoning": _trace_to_dict(self.best_reasoning),
            "max_formula_confidence": self.max_formula_confidence,
            "max_reasoning_confidence": self.max_reasoning_confidence,
            "iteration_log": [entry.to_dict() for entry in self.iteration_log],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RefinementState":
        return cls(
            _formula_set_from_dict(data["best_formulae"]),
            _trace_from_dict(data["best_reasoning"]),
            data["max_formula_confidence"],
            data["max_reasoning_confidence"],
            tuple(IterationLogEntry.from_dict(e) for e in data["iteration_log"]),
        )


def _formula_set_to_dict(formula_set: FormulaSet) -> dict:
    return {
        "formulae": [
            {"expression": f.expression, "variable_explanations": [list(p) for p in f.variable_explanations]}
            for f in formula_set.formulae
        ],
        "confidence": formula_set.confidence,
    }


def _formula_set_from_dict(data: dict) -> FormulaSet:
    return FormulaSet(
        tuple(
            Formula(f["expression"], tuple((s, e) for s, e in f["variable_explanations"]))
            for f in data["formulae"]
        ),
        data["confidence"],
    )


def _trace_to_dict(trace: ReasoningTrace) -> dict:
    return {"steps": list(trace.steps), "confidence": trace.confidence}


def _trace_from_dict(data: dict) -> ReasoningTrace:
    return ReasoningTrace(tuple(data["steps"]), data["confidence"])


@dataclass(frozen=True)
class PromptExchange:
    purpose: str  # generate | review_formulae_<i> | review_reasoning_<i> | finalize
    prompt: RenderedPrompt
    completion: Completion

    def to_dict(self) -> dict:
        return {
            "purpose": self.purpose,
            "prompt": self.prompt.to_dict(),
            "completion": self.completion.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PromptExchange":
        return cls(
            data["purpose"],
            RenderedPrompt.from_dict(data["prompt"]),
            Completion.from_dict(data["completion"]),
        )


@dataclass
class RunRecord:
    """Full per-problem audit trail: prompts, completions, state, answer, grade."""

    problem_id: str
    dataset_tag: str
    method: str
    mode: str
    problem_statement: str
    unit: str
    gold_answer_text: str
    exchanges: list[PromptExchange] = field(default_factory=list)
    state: RefinementState | None = None
    final_answer: FinalAnswer | None = None
    sandbox: SandboxResult | None = None
    correct: bool = False
    failure: str | None = None
    duration_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "schema": RECORD_SCHEMA,
            "problem_id": self.problem_id,
            "dataset_tag": self.dataset_tag,
            "method": self.method,
            "mode": self.mode,
            "problem_statement": self.problem_statement,
            "unit": self.unit,
            "gold_answer_text": self.gold_answer_text,
            "exchanges": [exchange.to_dict() for exchange in self.exchanges],
            "state": self.state.to_dict() if self.state else None,
            "final_answer": (
                {
                    "value": self.final_answer.value,
                    "raw_sentence": self.final_answer.raw_sentence,
                    "unit_text": self.final_answer.unit_text,
                }
                if self.final_answer
                else None
            ),
            "sandbox": self.sandbox.to_dict() if self.sandbox else None,
            "correct": self.correct,
            "failure": self.failure,
            "duration_s": self.duration_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        answer = data.get("final_answer")
        return cls(
            problem_id=data["problem_id"],
            dataset_tag=data["dataset_tag"],
            method=data["method"],
            mode=data["mode"],
            problem_statement=data["problem_statement"],
            unit=data.get("unit", ""),
            gold_answer_text=data["gold_answer_text"],
            exchanges=[PromptExchange.from_dict(e) for e in data.get("exchanges", [])],
            state=RefinementState.from_dict(data["state"]) if data.get("state") else None,
            final_answer=(
                FinalAnswer(answer["value"], answer["raw_sentence"], answer.get("unit_text"))
                if answer
                else None
            ),
            sandbox=SandboxResult.from_dict(data["sandbox"]) if data.get("sandbox") else None,
            correct=data.get("correct", False),
            failure=data.get("failure"),
            duration_s=data.get("duration_s", 0.0),
        )

    def canonical_dict(self) -> dict:
        """The record without wall-clock fields; byte-stable across replays."""
        data = self.to_dict()
        data.pop("duration_s", None)
        for exchange in data["exchanges"]:
            exchange["completion"].pop("latency_s", None)
        if data.get("sandbox"):
            data["sandbox"].pop("elapsed_s", None)
        return data


class PipelineRunner:
    """Runs one configured method over problems, producing RunRecords.

    A runner holds one client (live or scripted) and one role table; each
    problem's calls are issued strictly sequentially.
    """

    def __init__(
        self,
        client,
        roles: dict[str, ModelRole],
        config: PipelineConfig,
        demos: DemoSet | None = None,
    ):
        if config.mode == "few_shot" and (demos is None or len(demos) == 0):
            raise ValueError("few_shot mode requires demonstrations")
        self.client = client
        self.roles = roles
        self.config = config
        self.demos = demos if config.mode == "few_shot" else None

    # -- structured method -------------------------------------------------

    def run_structured(self, problem: Problem) -> RunRecord:
        record = self._new_record(problem, STRUCTURED_METHOD)
        started = time.monotonic()
        try:
            prompt = render_struct_generate(problem, self.demos, self.config.mode)
            completion = self._call("generator", prompt, record, "generate")
            try:
                formulae, reasoning = parse_generation(completion.text)
            except ParseError as exc:
                return self._finish(record, started, failure=f"parse:generate: {exc}")

            best_formulae, max_f, formula_log = self.review_loop(
                "formulae", problem, formulae, record
            )
            best_reasoning, max_r, reasoning_log = self.review_loop(
                "reasoning", problem, reasoning, record, accepted_formulae=best_formulae
            )
            record.state = RefinementState(
                best_formulae,
                best_reasoning,
                max_f,
                max_r,
                tuple(formula_log + reasoning_log),
            )

            final_prompt = render_struct_finalize(problem, best_formulae, best_reasoning)
            final_completion = self._call("finalizer", final_prompt, record, "finalize")
            return self._grade_text_answer(record, started, final_completion.text, problem)
        except BackendError as exc:
            return self._finish(record, started, failure=f"backend: {exc}")

    def review_loop(
        self,
        phase: str,
        problem: Problem,
        initial: FormulaSet | ReasoningTrace,
        record: RunRecord,
        accepted_formulae: FormulaSet | None = None,
    ) -> tuple[FormulaSet | ReasoningTrace, float, list[IterationLogEntry]]:
        """Run exactly max_iterations reviews of one phase.

        Iteration i always reviews the previous iteration's content (or the
        best-so-far under ``review_target="best"``); acceptance updates the
        kept content and the running maximum confidence.
        """
        best = initial
        max_confidence = initial.confidence
        chain = initial
        log: list[IterationLogEntry] = []
        for index in range(1, self.config.max_iterations + 1):
            if phase == "formulae":
                prompt = render_struct_review("formulae", problem, chain)  # type: ignore[arg-type]
            else:
                prompt = render_struct_review(
                    "reasoning", problem, accepted_formulae, chain  # type: ignore[arg-type]
                )
            completion = self._call("reviewer", prompt, record, f"review_{phase}_{index}")
            try:
                outcome = parse_review(completion.text, chain)
            except ParseError as exc:
                logger.warning("%s review %d unparseable, skipped: %s", phase, index, exc)
                log.append(IterationLogEntry(phase, index, None, False, f"parse_failure: {exc}"))
                continue
            accepted = (
                self.config.always_accept_revisions or outcome.confidence >= max_confidence
            )
            if accepted:
                best = outcome.revised_content
                max_confidence = max(max_confidence, outcome.confidence)
            log.append(IterationLogEntry(phase, index, outcome.confidence, accepted))
            chain = outcome.revised_content if self.config.review_target == "previous" else best
        return best, max_confidence, log

    # -- baselines ----------------------------------------------------------

    def run_baseline(self, problem: Problem, method: str) -> RunRecord:
        if method not in BASELINE_METHODS:
            raise ValueError(f"unknown baseline method {method!r}")
        record = self._new_record(problem, method)
        started = time.monotonic()
        try:
            prompt = render_baseline(method, problem, self.demos, self.config.mode)
            completion = self._call("generator", prompt, record, "generate")
        except BackendError as exc:
            return self._finish(record, started, failure=f"backend: {exc}")
        if method == "pot_code":
            return self._grade_code_answer(record, started, completion.text, problem)
        return self._grade_text_answer(record, started, completion.text, problem)

    def run(self, problem: Problem, method: str) -> RunRecord:
        if method == STRUCTURED_METHOD:
            return self.run_structured(problem)
        return self.run_baseline(problem, method)

    # -- internals ----------------------------------------------------------

    def _new_record(self, problem: Problem, method: str) -> RunRecord:
        return RunRecord(
            problem_id=problem.id,
            dataset_tag=problem.dataset_tag,
            method=method,
            mode=self.config.mode,
            problem_statement=problem.statement,
            unit=problem.unit,
            gold_answer_text=problem.gold_answer_text,
        )

    def _call(
        self, role_name: str, prompt: RenderedPrompt, record: RunRecord, purpose: str
    ) -> Completion:
        completion = self.client.complete(self.roles[role_name], prompt)
        record.exchanges.append(PromptExchange(purpose, prompt, completion))
        return completion

    def _grade_text_answer(
        self, record: RunRecord, started: float, text: str, problem: Problem
    ) -> RunRecord:
        try:
            answer = extract_final_answer(text)
        except SentinelNotFoundError:
            return self._finish(record, started, failure="no_answer")
        except ParseError as exc:
            return self._finish(record, started, failure=f"parse:final_answer: {exc}")
        record.final_answer = answer
        record.correct = grade_answer(answer.value, problem.gold_answer_text)
        return self._finish(record, started)

    def _grade_code_answer(
        self, record: RunRecord, started: float, text: str, problem: Problem
    ) -> RunRecord:
        try:
            source = parse_code_block(text)
        except ParseError as exc:
            return self._finish(record, started, failure=f"parse:code_block: {exc}")
        try:
            result = execute_script(
                source, self.config.sandbox_timeout_s, self.config.sandbox_runner
            )
        except SandboxUnavailableError:
            return self._finish(record, started, failure="sandbox unavailable")
        except SandboxProtocolError as exc:
            return self._finish(record, started, failure=f"sandbox: {exc}")
        record.sandbox = result
        if not result.exit_ok or result.extracted_value is None:
            return self._finish(record, started, failure="no_answer")
        last_line = result.stdout.strip().splitlines()[-1] if result.stdout.strip() else ""
        record.final_answer = FinalAnswer(float(result.extracted_value), last_line, None)
        record.correct = grade_answer(record.final_answer.value, problem.gold_answer_text)
        return self._finish(record, started)

    @staticmethod
    def _finish(record: RunRecord, started: float, failure: str | None = None) -> RunRecord:
        if failure is not None:
            record.failure = failure
            record.correct = False
        record.duration_s = time.monotonic() - started
        return record


def run_problems(
    problems: Sequence[Problem],
    run_one: Callable[[Problem], RunRecord],
    concurrency: int = 1,
) -> list[RunRecord]:
    """Run problems (possibly concurrently), preserving input order."""
    if concurrency <= 1:
        return [run_one(problem) for problem in problems]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(run_one, problems))


# ---------------------------------------------------------------------------
# run directory persistence (single writer, after the run phase completes)


def build_manifest(
    dataset_name: str,
    method: str,
    config: PipelineConfig,
    roles: dict[str, ModelRole],
    demo_ids: Sequence[str] = (),
    problem_count: int = 0,
) -> dict:
    return {
        "schema": MANIFEST_SCHEMA,
        "dataset": dataset_name,
        "method": method,
        "config": config.to_dict(),
        "models": {name: role.model_name for name, role in roles.items()},
        "temperatures": {name: role.temperature for name, role in roles.items()},
        "demo_ids": list(demo_ids),
        "problem_count": problem_count,
        "template_version": template_version(),
    }


def write_run(records: Sequence[RunRecord], out_dir: str | Path, manifest: dict) -> Path:
    out = Path(out_dir)
    (out / "records").mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    for record in records:
        path = out / "records" / f"{record.problem_id}.json"
        path.write_text(
            json.dumps(record.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    return out


def read_run(out_dir: str | Path) -> tuple[dict, list[RunRecord]]:
    out = Path(out_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    records = []
    for path in sorted((out / "records").glob("*.json")):
        records.append(RunRecord.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    return manifest, records
