"""Structured reasoning pipeline, baselines and grading harness for numeric chemistry problems."""

from .backend import (
    Completion,
    HttpChatClient,
    ModelRole,
    ScriptedOracle,
    configure_roles,
    prompt_fingerprint,
)
from .datasets import (
    Dataset,
    DatasetError,
    DemoSet,
    Problem,
    dataset_stats,
    load_dataset,
    sample_demonstrations,
    save_dataset,
)
from .exporting import FinetuneExample, build_examples, export_finetune
from .grading import (
    AccuracyTable,
    AnnotationStore,
    GradeResult,
    aggregate,
    grade_answer,
    grade_record,
)
from .parsing import (
    FinalAnswer,
    Formula,
    FormulaSet,
    ParseError,
    ReasoningTrace,
    ReviewOutcome,
    extract_final_answer,
    format_generation,
    parse_code_block,
    parse_generation,
    parse_review,
)
from .prompts import (
    RenderedPrompt,
    render_baseline,
    render_struct_finalize,
    render_struct_generate,
    render_struct_review,
)
from .refine import (
    PipelineConfig,
    PipelineRunner,
    RefinementState,
    RunRecord,
    STRUCTURED_METHOD,
    run_problems,
)
from .sandbox_client import SandboxResult, SandboxUnavailableError, execute_script

__version__ = "0.1.0"

__all__ = [
    "AccuracyTable",
    "AnnotationStore",
    "Completion",
    "Dataset",
    "DatasetError",
    "DemoSet",
    "FinalAnswer",
    "FinetuneExample",
    "Formula",
    "FormulaSet",
    "GradeResult",
    "HttpChatClient",
    "ModelRole",
    "ParseError",
    "PipelineConfig",
    "PipelineRunner",
    "Problem",
    "ReasoningTrace",
    "RefinementState",
    "RenderedPrompt",
    "ReviewOutcome",
    "RunRecord",
    "STRUCTURED_METHOD",
    "SandboxResult",
    "SandboxUnavailableError",
    "ScriptedOracle",
    "aggregate",
    "build_examples",
    "configure_roles",
    "dataset_stats",
    "execute_script",
    "export_finetune",
    "extract_final_answer",
    "format_generation",
    "grade_answer",
    "grade_record",
    "load_dataset",
    "parse_code_block",
    "parse_generation",
    "parse_review",
    "prompt_fingerprint",
    "render_baseline",
    "render_struct_finalize",
    "render_struct_generate",
    "render_struct_review",
    "run_problems",
    "sample_demonstrations",
    "save_dataset",
]
