"""Client for the external code-execution sandbox used by the pot_code method.

The sandbox is a separate runner executable invoked as
``<runner> --source <file> --timeout <secs>``; it prints exactly one JSON
result record on stdout:

    {"schema": "pot-sandbox-result-v1", "stdout": str, "stderr": str,
     "exit_ok": bool, "exit_code": int|null, "timed_out": bool,
     "elapsed_s": number, "extracted_value": number|null}

The runner location is taken from the explicit argument, the
``POT_SANDBOX_RUNNER`` environment variable, or ``sandbox/dist/runner.js``
relative to the current directory (run with node).  When none resolve, the
caller reports "sandbox unavailable" instead of failing.
"""

from __future__ import annotations

import json
import os
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

RESULT_SCHEMA = "pot-sandbox-result-v1"
RUNNER_ENV_VAR = "POT_SANDBOX_RUNNER"
DEFAULT_TIMEOUT_S = 20.0


class SandboxUnavailableError(RuntimeError):
    """No sandbox runner executable could be located."""


class SandboxProtocolError(RuntimeError):
    """The runner produced output that is not a valid result record."""


@dataclass(frozen=True)
class SandboxResult:
    stdout: str
    stderr: str
    exit_ok: bool
    elapsed_s: float
    extracted_value: float | None = None
    timed_out: bool = False

    def to_dict(self) -> dict:
        return {
            "stdout": self.stdout,
            "stderr": self.stderr,
            "exit_ok": self.exit_ok,
            "elapsed_s": self.elapsed_s,
            "extracted_value": self.extracted_value,
            "timed_out": self.timed_out,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SandboxResult":
        return cls(
            data.get("stdout", ""),
            data.get("stderr", ""),
            bool(data.get("exit_ok")),
            float(data.get("elapsed_s", 0.0)),
            data.get("extracted_value"),
            bool(data.get("timed_out", False)),
        )


def resolve_runner(runner: str | None = None) -> list[str]:
    """Resolve the runner command; raises SandboxUnavailableError when absent."""
    spec = runner or os.environ.get(RUNNER_ENV_VAR, "").strip()
    if spec:
        argv = shlex.split(spec)
        head = Path(argv[0])
        if not (head.exists() or shutil.which(argv[0])):
            raise SandboxUnavailableError(f"sandbox runner not found: {argv[0]}")
        return argv
    default = Path("sandbox/dist/runner.js")
    if default.exists() and shutil.which("node"):
        return ["node", str(default)]
    raise SandboxUnavailableError(
        f"no sandbox runner configured (set {RUNNER_ENV_VAR} or pass --sandbox-runner)"
    )


def execute_script(
    source: str,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    runner: str | None = None,
) -> SandboxResult:
    """Run script source through the sandbox runner and parse its result record."""
    if not source.strip():
        raise ValueError("empty script source")
    argv = resolve_runner(runner)
    with tempfile.TemporaryDirectory(prefix="pot-src-") as tmp:
        source_path = Path(tmp) / "script.py"
        source_path.write_text(source, encoding="utf-8")
        try:
            proc = subprocess.run(
                argv + ["--source", str(source_path), "--timeout", str(timeout_s)],
                capture_output=True,
                text=True,
                timeout=timeout_s + 10.0,
            )
        except subprocess.TimeoutExpired as exc:
            raise SandboxProtocolError(f"sandbox runner itself timed out: {exc}") from exc
    if proc.returncode != 0:
        raise SandboxProtocolError(
            f"sandbox runner exited {proc.returncode}: {proc.stderr.strip()[:200]}"
        )
    line = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else ""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SandboxProtocolError(f"runner emitted invalid record: {line[:200]!r}") from exc
    if record.get("schema") != RESULT_SCHEMA:
        raise SandboxProtocolError(f"unexpected record schema: {record.get('schema')!r}")
    return SandboxResult.from_dict(record)
