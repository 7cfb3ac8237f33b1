#!/usr/bin/env node
// CLI entry point: run one script through the sandbox and print exactly one
// JSON result record on stdout.
//
//   runner --source <file> --timeout <secs>
//
// Exit code 0 means a record was produced (even for failing scripts); nonzero
// is reserved for usage errors.

import { readFile } from "node:fs/promises";
import { parseArgs } from "node:util";
import { executeScript } from "./sandbox.js";

async function main(): Promise<number> {
  let values: { source?: string; timeout?: string };
  try {
    ({ values } = parseArgs({
      options: {
        source: { type: "string" },
        timeout: { type: "string", default: "20" },
      },
    }));
  } catch (error) {
    console.error(`usage error: ${String(error)}`);
    return 2;
  }
  if (!values.source) {
    console.error("usage: runner --source <file> --timeout <secs>");
    return 2;
  }
  const timeoutSecs = Number(values.timeout);
  if (!Number.isFinite(timeoutSecs) || timeoutSecs <= 0) {
    console.error(`invalid --timeout value: ${values.timeout}`);
    return 2;
  }

  let source: string;
  try {
    source = await readFile(values.source, "utf8");
  } catch (error) {
    console.error(`cannot read source file: ${String(error)}`);
    return 2;
  }

  const result = await executeScript(source, timeoutSecs);
  process.stdout.write(JSON.stringify(result) + "\n");
  return 0;
}

main().then(
  (code) => process.exit(code),
  (error) => {
    console.error(String(error));
    process.exit(1);
  },
);
