// Isolated subprocess execution for model-generated Python scripts.
//
// Each execution gets a fresh throwaway temp directory as its working
// directory, a stripped environment with proxy variables pointed at a dead
// end (environment-level network denial, not a security boundary against
// adversarial code), a wall-clock timeout and an output-size cap.

import { spawn } from "node:child_process";
import { mkdtemp, rm, writeFile } from "node:fs/promises";
import os from "node:os";
import path from "node:path";

export const RESULT_SCHEMA = "pot-sandbox-result-v1";
export const MAX_OUTPUT_BYTES = 1_000_000;

export interface SandboxResult {
  schema: typeof RESULT_SCHEMA;
  stdout: string;
  stderr: string;
  exit_ok: boolean;
  exit_code: number | null;
  timed_out: boolean;
  elapsed_s: number;
  extracted_value: number | null;
}

const ANSWER_LINE = /^ANSWER:\s*(.+)$/gim;
const NUMBER_TOKEN = /[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?/g;

/** Prefer the last "ANSWER: x" line; fall back to the last numeric token. */
export function extractValue(stdout: string): number | null {
  let sentinel: string | null = null;
  for (const match of stdout.matchAll(ANSWER_LINE)) {
    sentinel = match[1];
  }
  const haystack = sentinel ?? stdout;
  let last: string | null = null;
  for (const match of haystack.matchAll(NUMBER_TOKEN)) {
    last = match[0];
  }
  if (last === null) {
    return null;
  }
  const value = Number(last);
  return Number.isFinite(value) ? value : null;
}

function sandboxEnv(tmpDir: string): NodeJS.ProcessEnv {
  // Point proxy-aware clients at a closed port; drop inherited credentials.
  const blocked = "http://127.0.0.1:1";
  return {
    PATH: process.env.PATH ?? "/usr/bin:/bin",
    HOME: tmpDir,
    TMPDIR: tmpDir,
    PYTHONUNBUFFERED: "1",
    PYTHONDONTWRITEBYTECODE: "1",
    http_proxy: blocked,
    https_proxy: blocked,
    HTTP_PROXY: blocked,
    HTTPS_PROXY: blocked,
    no_proxy: "",
    NO_PROXY: "",
  };
}

export async function executeScript(
  source: string,
  timeoutSecs: number,
  pythonBin = "python3",
): Promise<SandboxResult> {
  if (!source.trim()) {
    throw new Error("empty script source");
  }
  const started = process.hrtime.bigint();
  const tmpDir = await mkdtemp(path.join(os.tmpdir(), "pot-sandbox-"));
  try {
    const scriptPath = path.join(tmpDir, "script.py");
    await writeFile(scriptPath, source, "utf8");

    return await new Promise<SandboxResult>((resolve) => {
      const child = spawn(pythonBin, [scriptPath], {
        cwd: tmpDir,
        env: sandboxEnv(tmpDir),
        stdio: ["ignore", "pipe", "pipe"],
      });

      let stdout = "";
      let stderr = "";
      let killed = false;
      let timedOut = false;

      const kill = (reason: "timeout" | "output") => {
        killed = true;
        if (reason === "timeout") {
          timedOut = true;
        }
        child.kill("SIGKILL");
      };

      const timer = setTimeout(() => kill("timeout"), timeoutSecs * 1000);

      child.stdout.on("data", (chunk: Buffer) => {
        stdout += chunk.toString();
        if (stdout.length > MAX_OUTPUT_BYTES) {
          kill("output");
        }
      });
      child.stderr.on("data", (chunk: Buffer) => {
        stderr += chunk.toString();
        if (stderr.length > MAX_OUTPUT_BYTES) {
          kill("output");
        }
      });

      const finish = (exitCode: number | null, spawnError?: Error) => {
        clearTimeout(timer);
        if (spawnError) {
          stderr = stderr || String(spawnError);
        }
        const elapsed = Number(process.hrtime.bigint() - started) / 1e9;
        const exitOk = !killed && !spawnError && exitCode === 0;
        resolve({
          schema: RESULT_SCHEMA,
          stdout: stdout.slice(0, MAX_OUTPUT_BYTES),
          stderr: stderr.slice(0, MAX_OUTPUT_BYTES),
          exit_ok: exitOk,
          exit_code: exitCode,
          timed_out: timedOut,
          elapsed_s: elapsed,
          extracted_value: exitOk ? extractValue(stdout) : null,
        });
      };

      child.on("error", (error) => finish(null, error));
      child.on("close", (code) => finish(code));
    });
  } finally {
    await rm(tmpDir, { recursive: true, force: true }).catch(() => {
      // best-effort cleanup of the throwaway directory
    });
  }
}
