"""Engine tests: gate behavior, call budget, phase ordering, baselines."""

from __future__ import annotations

import json
import stat

from chemreason.backend import ScriptedOracle, TransportError
from chemreason.refine import (
    PipelineConfig,
    PipelineRunner,
    RunRecord,
    run_problems,
)
from conftest import (
    ROLES,
    finalize_response,
    formula_review,
    generation_response,
    make_problem,
    reasoning_review,
    structured_responses,
)

PROBLEM = make_problem()


def run_structured(responses: list[str], **config_kwargs) -> RunRecord:
    oracle = ScriptedOracle(responses=responses)
    runner = PipelineRunner(oracle, ROLES, PipelineConfig(**config_kwargs))
    return runner.run_structured(PROBLEM)


def accepted_iterations(record: RunRecord, phase: str) -> list[int]:
    return [
        entry.index
        for entry in record.state.iteration_log
        if entry.phase == phase and entry.accepted
    ]


def test_zero_iterations_uses_initial_generation():
    record = run_structured(
        [generation_response("gen", 0.6, 0.6), finalize_response("2.45")], max_iterations=0
    )
    assert len(record.exchanges) == 2
    assert [exchange.purpose for exchange in record.exchanges] == ["generate", "finalize"]
    assert record.state.best_formulae.formulae[0].expression == "E_gen = h * nu"
    assert record.state.iteration_log == ()
    assert record.correct is True


def test_gate_accepts_only_non_decreasing_confidences():
    # reviewer confidences 0.5, 0.9, 0.7 against initial 0.6: accept only i=2
    record = run_structured(
        structured_responses([0.5, 0.9, 0.7], [0.9, 0.9, 0.9]), max_iterations=3
    )
    assert accepted_iterations(record, "formulae") == [2]
    assert record.state.best_formulae.formulae[0].expression == "E_f2 = h * nu"
    assert record.state.max_formula_confidence == 0.9


def test_gate_tie_is_accepted():
    # confidence equal to the running max is adopted (strict less-than skips)
    record = run_structured(structured_responses([0.6], [0.7]), max_iterations=1)
    assert accepted_iterations(record, "formulae") == [1]
    assert record.state.best_formulae.formulae[0].expression == "E_f1 = h * nu"
    assert record.state.max_formula_confidence == 0.6


def test_correct_verdicts_keep_content_and_raise_max():
    responses = [
        generation_response("gen", 0.5, 0.9),
        formula_review(0.8, verdict="correct"),
        formula_review(0.9, verdict="correct"),
        reasoning_review(0.1, tag="ignored"),
        reasoning_review(0.2, tag="ignored"),
        finalize_response(),
    ]
    record = run_structured(responses, max_iterations=2)
    assert record.state.best_formulae.formulae[0].expression == "E_gen = h * nu"
    assert record.state.max_formula_confidence == 0.9
    assert accepted_iterations(record, "formulae") == [1, 2]


def test_high_initial_confidence_survives_all_reviews():
    record = run_structured(
        structured_responses([0.5, 0.6, 0.7], [0.1, 0.1, 0.1], initial=(0.95, 0.95)),
        max_iterations=3,
    )
    assert accepted_iterations(record, "formulae") == []
    assert accepted_iterations(record, "reasoning") == []
    assert record.state.best_formulae.formulae[0].expression == "E_gen = h * nu"
    assert record.state.best_reasoning.steps[0] == "Step one for gen."
    assert record.state.max_formula_confidence == 0.95


def test_single_confident_revision_is_adopted():
    record = run_structured(structured_responses([1.0], [1.0]), max_iterations=1)
    assert record.state.best_formulae.formulae[0].expression == "E_f1 = h * nu"
    assert record.state.best_reasoning.steps[0] == "Step one for r1."


def test_call_budget_is_two_plus_two_n():
    for n in (0, 1, 3):
        record = run_structured(
            structured_responses([0.5] * n, [0.5] * n), max_iterations=n
        )
        assert len(record.exchanges) == 2 + 2 * n


def test_phase_ordering_in_log_and_exchanges():
    record = run_structured(structured_responses([0.5, 0.6], [0.7, 0.8]), max_iterations=2)
    phases = [entry.phase for entry in record.state.iteration_log]
    assert phases == ["formulae", "formulae", "reasoning", "reasoning"]
    purposes = [exchange.purpose for exchange in record.exchanges]
    assert purposes == [
        "generate",
        "review_formulae_1",
        "review_formulae_2",
        "review_reasoning_1",
        "review_reasoning_2",
        "finalize",
    ]


def test_accepted_max_sequence_is_non_decreasing():
    record = run_structured(
        structured_responses([0.5, 0.9, 0.7, 0.95], [0.4, 0.4, 0.95, 0.99]), max_iterations=4
    )
    for phase in ("formulae", "reasoning"):
        running = 0.6
        for entry in record.state.iteration_log:
            if entry.phase != phase:
                continue
            if entry.accepted:
                assert entry.confidence >= running
                running = max(running, entry.confidence)


def test_reasoning_reviews_embed_accepted_formulae():
    # formulae loop accepts the revision at i=1; every reasoning review prompt
    # must embed that accepted revision, not the initial generation's formulae.
    record = run_structured(structured_responses([0.9], [0.5]), max_iterations=1)
    reasoning_prompt = next(
        exchange.prompt
        for exchange in record.exchanges
        if exchange.purpose == "review_reasoning_1"
    )
    assert "E_f1 = h * nu" in reasoning_prompt.text
    assert "E_gen = h * nu" not in reasoning_prompt.text


def test_review_chain_reviews_previous_iteration_output():
    # default review_target="previous": iteration 2 reviews iteration 1's
    # revision even though the gate rejected it
    record = run_structured(structured_responses([0.5, 0.55], [0.9, 0.9]), max_iterations=2)
    second_prompt = next(
        exchange.prompt
        for exchange in record.exchanges
        if exchange.purpose == "review_formulae_2"
    )
    assert "E_f1 = h * nu" in second_prompt.text
    assert accepted_iterations(record, "formulae") == []


def test_review_target_best_reviews_kept_content():
    record = run_structured(
        structured_responses([0.5, 0.55], [0.9, 0.9]),
        max_iterations=2,
        review_target="best",
    )
    second_prompt = next(
        exchange.prompt
        for exchange in record.exchanges
        if exchange.purpose == "review_formulae_2"
    )
    # iteration 1 was rejected, so the kept content is still the initial one
    assert "E_gen = h * nu" in second_prompt.text


def test_always_accept_revisions_adopts_every_revision():
    record = run_structured(
        structured_responses([0.5, 0.4, 0.3], [0.2, 0.1, 0.05]),
        max_iterations=3,
        always_accept_revisions=True,
    )
    assert accepted_iterations(record, "formulae") == [1, 2, 3]
    assert accepted_iterations(record, "reasoning") == [1, 2, 3]
    assert record.state.best_formulae.formulae[0].expression == "E_f3 = h * nu"
    assert record.state.best_reasoning.steps[0] == "Step one for r3."
    # running max never decreases even though lower scores were adopted
    assert record.state.max_formula_confidence == 0.6


def test_unparseable_review_is_skipped_not_fatal():
    responses = [
        generation_response("gen", 0.6, 0.6),
        "I cannot review this.",  # no VERDICT -> skipped
        formula_review(0.9, tag="f2"),
        reasoning_review(0.9, tag="r1"),
        reasoning_review(0.1, tag="r2"),
        finalize_response(),
    ]
    record = run_structured(responses, max_iterations=2)
    assert len(record.exchanges) == 2 + 2 * 2  # budget unchanged by the skip
    log = record.state.iteration_log
    assert log[0].accepted is False
    assert log[0].confidence is None
    assert "parse_failure" in log[0].note
    assert accepted_iterations(record, "formulae") == [2]
    assert record.failure is None


def test_generation_parse_failure_marks_run_failed():
    oracle = ScriptedOracle(responses=["no blocks at all"])
    runner = PipelineRunner(oracle, ROLES, PipelineConfig(max_iterations=2))
    record = runner.run_structured(PROBLEM)
    assert record.failure.startswith("parse:generate")
    assert record.correct is False
    assert record.state is None
    assert len(record.exchanges) == 1


def test_backend_failure_marks_run_failed():
    class FailingClient:
        def complete(self, role, prompt):
            raise TransportError("endpoint unreachable")

    runner = PipelineRunner(FailingClient(), ROLES, PipelineConfig(max_iterations=1))
    record = runner.run_structured(PROBLEM)
    assert record.failure.startswith("backend:")
    assert record.correct is False


def test_unparseable_final_answer_marks_no_answer():
    responses = [generation_response(), "I decline to state a number."]
    record = run_structured(responses, max_iterations=0)
    assert record.failure == "no_answer"
    assert record.correct is False


def test_grading_of_final_answer_against_gold():
    correct = run_structured(structured_responses([], [], answer="2.449"), max_iterations=0)
    assert correct.correct is True  # relative branch not hit: |2.45| >= 1, delta 0.001
    wrong = run_structured(structured_responses([], [], answer="9.99"), max_iterations=0)
    assert wrong.correct is False
    assert wrong.failure is None  # answered but out of tolerance


def test_run_record_round_trip_and_canonical_dict():
    record = run_structured(structured_responses([0.9], [0.9]), max_iterations=1)
    data = record.to_dict()
    reloaded = RunRecord.from_dict(json.loads(json.dumps(data)))
    assert reloaded.to_dict() == data
    canonical = record.canonical_dict()
    assert "duration_s" not in canonical
    assert all("latency_s" not in e["completion"] for e in canonical["exchanges"])


def test_scripted_runs_are_deterministic():
    first = run_structured(structured_responses([0.5, 0.9], [0.4, 0.95]), max_iterations=2)
    second = run_structured(structured_responses([0.5, 0.9], [0.4, 0.95]), max_iterations=2)
    assert first.canonical_dict() == second.canonical_dict()


# -- baselines ----------------------------------------------------------------


def test_direct_baseline_single_call():
    oracle = ScriptedOracle(responses=["The answer is therefore 2.45."])
    runner = PipelineRunner(oracle, ROLES, PipelineConfig())
    record = runner.run_baseline(PROBLEM, "direct")
    assert len(record.exchanges) == 1
    assert record.correct is True
    assert record.method == "direct"


def test_cot_few_shot_embeds_demos():
    from chemreason.datasets import sample_demonstrations
    from conftest import make_dataset

    dataset = make_dataset(2, 3)
    demos = sample_demonstrations(dataset, 3, seed=1)
    oracle = ScriptedOracle(responses=["The answer is therefore 1.5."])
    runner = PipelineRunner(
        oracle, ROLES, PipelineConfig(mode="few_shot", demo_count=3), demos
    )
    record = runner.run_baseline(dataset.problems_without_solutions[0], "cot")
    assert len(record.exchanges) == 1
    prompt_text = record.exchanges[0].prompt.text
    for demo in demos.demos:
        assert demo.statement in prompt_text


def test_pot_code_without_sandbox_reports_unavailable(monkeypatch, tmp_path):
    monkeypatch.delenv("POT_SANDBOX_RUNNER", raising=False)
    monkeypatch.chdir(tmp_path)  # no sandbox/dist/runner.js here
    oracle = ScriptedOracle(responses=["```python\nprint(2.45)\n```"])
    runner = PipelineRunner(oracle, ROLES, PipelineConfig())
    record = runner.run_baseline(PROBLEM, "pot_code")
    assert record.failure == "sandbox unavailable"
    assert record.correct is False


def make_stub_runner(tmp_path, record_json: str) -> str:
    """A stand-in runner executable that prints a fixed result record."""
    record_path = tmp_path / "record.json"
    record_path.write_text(record_json + "\n", encoding="utf-8")
    script = tmp_path / "stub_runner.sh"
    script.write_text(f"#!/bin/sh\ncat {record_path}\n", encoding="utf-8")
    script.chmod(script.stat().st_mode | stat.S_IXUSR)
    return str(script)


def test_pot_code_with_stub_runner(tmp_path):
    record_json = json.dumps(
        {
            "schema": "pot-sandbox-result-v1",
            "stdout": "2.45\n",
            "stderr": "",
            "exit_ok": True,
            "exit_code": 0,
            "timed_out": False,
            "elapsed_s": 0.01,
            "extracted_value": 2.45,
        }
    )
    runner_cmd = make_stub_runner(tmp_path, record_json)
    oracle = ScriptedOracle(responses=["```python\nprint(2.45)\n```"])
    runner = PipelineRunner(oracle, ROLES, PipelineConfig(sandbox_runner=runner_cmd))
    record = runner.run_baseline(PROBLEM, "pot_code")
    assert record.failure is None
    assert record.sandbox.extracted_value == 2.45
    assert record.correct is True


def test_pot_code_without_code_block_is_parse_failure():
    oracle = ScriptedOracle(responses=["no code here"])
    runner = PipelineRunner(oracle, ROLES, PipelineConfig())
    record = runner.run_baseline(PROBLEM, "pot_code")
    assert record.failure.startswith("parse:code_block")


def test_run_problems_preserves_order_and_supports_concurrency():
    problems = [make_problem(f"p-{i}", gold="1.0") for i in range(6)]

    def run_one(problem):
        oracle = ScriptedOracle(responses=["The answer is therefore 1.0."])
        runner = PipelineRunner(oracle, ROLES, PipelineConfig())
        return runner.run_baseline(problem, "direct")

    sequential = run_problems(problems, run_one, concurrency=1)
    concurrent = run_problems(problems, run_one, concurrency=4)
    assert [r.problem_id for r in sequential] == [p.id for p in problems]
    assert [r.problem_id for r in concurrent] == [p.id for p in problems]
