"""Command-line driver: run, oracle, grade, report, export.

``run`` executes a method over a dataset against a live endpoint; ``oracle``
does the same against a scripted-response file (deterministic, for tests and
demos).  ``grade`` re-grades stored run records, ``report`` emits accuracy
tables plus error-distribution and step-histogram reports, and ``export``
writes fine-tuning corpora.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backend import BackendError, HttpChatClient, ScriptedOracle, configure_roles
from .datasets import (
    DatasetError,
    dataset_stats,
    load_dataset,
    sample_demonstrations,
)
from .exporting import EXPORT_FORMATS, ExportError, export_finetune
from .grading import AnnotationStore, aggregate, failure_breakdown, grade_record
from .refine import (
    METHODS,
    PipelineConfig,
    PipelineRunner,
    build_manifest,
    read_run,
    run_problems,
    write_run,
)

logger = logging.getLogger(__name__)


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dataset", required=True, help="problem file (JSON array or JSONL)")
    parser.add_argument("--field-map", default=None, help="JSON canonical->source field map")
    parser.add_argument("--method", choices=METHODS, default=None)
    parser.add_argument("--mode", choices=["zero_shot", "few_shot"], default=None)
    parser.add_argument("--k", type=int, default=None, help="demonstration count")
    parser.add_argument("--n", type=int, default=None, help="review iterations per phase")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", required=True, help="run output directory")
    parser.add_argument("--limit", type=int, default=None, help="run only the first N problems")
    parser.add_argument("--review-target", choices=["previous", "best"], default=None)
    parser.add_argument("--always-accept-revisions", action="store_true", default=None)
    parser.add_argument("--concurrency", type=int, default=None)
    parser.add_argument("--sandbox-runner", default=None, help="pot_code sandbox runner command")
    parser.add_argument("--sandbox-timeout", type=float, default=None)
    parser.add_argument("--model", default=None, help="model name for all roles")
    parser.add_argument("--generator-model", default=None)
    parser.add_argument("--reviewer-model", default=None)
    parser.add_argument("--finalizer-model", default=None)
    parser.add_argument("--temperature", type=float, default=None)
    parser.add_argument("--config", default=None, help="JSON config file merged under flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chemreason")
    parser.add_argument("-v", "--verbose", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="run a method against a live endpoint")
    _add_run_options(run_parser)
    run_parser.add_argument("--base-url", default=None, help="chat-completions base URL")
    run_parser.add_argument("--api-key-env", default=None, help="env var holding the credential")

    oracle_parser = subparsers.add_parser("oracle", help="run against a scripted-oracle file")
    _add_run_options(oracle_parser)
    oracle_parser.add_argument("--oracle-file", required=True)

    grade_parser = subparsers.add_parser("grade", help="re-grade stored run records")
    grade_parser.add_argument("--run-dir", required=True)

    report_parser = subparsers.add_parser("report", help="emit accuracy and analysis reports")
    report_parser.add_argument("--run-dir", required=True)
    report_parser.add_argument("--annotations", default=None, help="error-annotation store file")
    report_parser.add_argument("--dataset", default=None, help="include split stats for this file")
    report_parser.add_argument("--field-map", default=None)

    export_parser = subparsers.add_parser("export", help="write a fine-tuning corpus")
    export_parser.add_argument("--run-dir", required=True)
    export_parser.add_argument("--format", choices=EXPORT_FORMATS, required=True)
    export_parser.add_argument("--only-correct", action="store_true")
    export_parser.add_argument("--out", default=None, help="corpus file path")

    return parser


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _merged(args: argparse.Namespace, config: dict, key: str, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    return config.get(key, default)


def _parse_field_map(raw: str | None) -> dict | None:
    if not raw:
        return None
    candidate = Path(raw)
    if candidate.exists():
        return json.loads(candidate.read_text(encoding="utf-8"))
    return json.loads(raw)


def _pipeline_config(args: argparse.Namespace, config: dict) -> PipelineConfig:
    return PipelineConfig(
        max_iterations=_merged(args, config, "n", 3),
        demo_count=_merged(args, config, "k", 3),
        mode=_merged(args, config, "mode", "zero_shot"),
        review_target=_merged(args, config, "review_target", "previous"),
        always_accept_revisions=bool(_merged(args, config, "always_accept_revisions", False)),
        sandbox_runner=_merged(args, config, "sandbox_runner", None),
        sandbox_timeout_s=_merged(args, config, "sandbox_timeout", 20.0),
        seed=_merged(args, config, "seed", 0),
        concurrency=_merged(args, config, "concurrency", 1),
    )


def _role_config(args: argparse.Namespace, config: dict) -> dict:
    temperature = _merged(args, config, "temperature", 0.0)
    roles: dict = {}
    for role, key in (
        ("generator", "generator_model"),
        ("reviewer", "reviewer_model"),
        ("finalizer", "finalizer_model"),
    ):
        model = _merged(args, config, key, None)
        if model:
            roles[role] = {"model": model, "temperature": temperature}
    if not roles:
        model = _merged(args, config, "model", "gpt-4")
        return {"model": model, "temperature": temperature}
    return roles


def _execute_run(args: argparse.Namespace, client) -> int:
    config_file = _load_config_file(args.config)
    pipeline_config = _pipeline_config(args, config_file)
    method = _merged(args, config_file, "method", "structchem")
    dataset = load_dataset(args.dataset, _parse_field_map(args.field_map))
    roles = configure_roles(_role_config(args, config_file))

    demos = None
    if pipeline_config.mode == "few_shot":
        demos = sample_demonstrations(dataset, pipeline_config.demo_count, pipeline_config.seed)
    problems = list(dataset.all_problems())
    limit = _merged(args, config_file, "limit", None)
    if limit is not None:
        problems = problems[: int(limit)]

    runner = PipelineRunner(client, roles, pipeline_config, demos)
    records = run_problems(
        problems, lambda problem: runner.run(problem, method), pipeline_config.concurrency
    )
    manifest = build_manifest(
        dataset.name,
        method,
        pipeline_config,
        roles,
        [demo.id for demo in demos.demos] if demos else [],
        len(problems),
    )
    out = write_run(records, args.out, manifest)
    correct = sum(1 for record in records if record.correct)
    failed = sum(1 for record in records if record.failure is not None)
    print(f"{len(records)} problems -> {out} ({correct} correct, {failed} failed)")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config_file = _load_config_file(args.config)
    base_url = _merged(args, config_file, "base_url", None)
    if not base_url:
        print("error: --base-url is required for live runs", file=sys.stderr)
        return 2
    client = HttpChatClient(
        base_url,
        api_key_env=_merged(args, config_file, "api_key_env", "OPENAI_API_KEY"),
        max_in_flight=int(_merged(args, config_file, "concurrency", 4)),
    )
    try:
        return _execute_run(args, client)
    finally:
        client.close()


def _cmd_oracle(args: argparse.Namespace) -> int:
    client = ScriptedOracle.from_file(args.oracle_file)
    return _execute_run(args, client)


def _cmd_grade(args: argparse.Namespace) -> int:
    manifest, records = read_run(args.run_dir)
    results = [grade_record(record) for record in records]
    for record, result in zip(records, results):
        record.correct = result.correct
    write_run(records, args.run_dir, manifest)
    correct = sum(1 for result in results if result.correct)
    print(f"re-graded {len(results)} records: {correct} correct")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    _, records = read_run(run_dir)
    results = [grade_record(record) for record in records]
    table = aggregate(results)

    reports = run_dir / "reports"
    reports.mkdir(exist_ok=True)
    (reports / "accuracy.json").write_text(
        json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (reports / "accuracy.txt").write_text(table.render_text() + "\n", encoding="utf-8")
    (reports / "failures.json").write_text(
        json.dumps(failure_breakdown(results), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    step_counts: dict[str, dict[int, int]] = {}
    for record in records:
        if record.state is not None:
            histogram = step_counts.setdefault(record.dataset_tag, {})
            length = len(record.state.best_reasoning.steps)
            histogram[length] = histogram.get(length, 0) + 1
    (reports / "steps.json").write_text(
        json.dumps(
            {
                dataset: {
                    "histogram": {str(k): v for k, v in sorted(hist.items())},
                    "mean_steps": sum(k * v for k, v in hist.items()) / sum(hist.values()),
                }
                for dataset, hist in sorted(step_counts.items())
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )

    if args.annotations:
        store = AnnotationStore(args.annotations)
        (reports / "error_distribution.json").write_text(
            json.dumps(store.error_distribution(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    if args.dataset:
        dataset = load_dataset(args.dataset, _parse_field_map(args.field_map))
        (reports / "dataset_stats.json").write_text(
            json.dumps(dataset_stats(dataset), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    print(table.render_text())
    print(f"reports written to {reports}")
    return 0


def _cmd_export(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    _, records = read_run(run_dir)
    out_path = Path(args.out) if args.out else run_dir / "corpora" / f"{args.format}.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    exported = export_finetune(
        records, args.format, out_path, only_correct=args.only_correct, source_run=str(run_dir)
    )
    print(f"exported {exported} examples -> {out_path}")
    return 0


COMMANDS = {
    "run": _cmd_run,
    "oracle": _cmd_oracle,
    "grade": _cmd_grade,
    "report": _cmd_report,
    "export": _cmd_export,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (DatasetError, ExportError, BackendError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
