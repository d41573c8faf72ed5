import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import type { ServerMsg } from "../src/protocol.js";

export interface FixtureEntry {
  dir: "s2c" | "c2s";
  msg: ServerMsg & Record<string, unknown>;
}

// a recorded bridge session: every message of a full interactive trial,
// in arrival order, including two rejected clicks (see scripts/record_bridge_session.py)
export function loadSession(): FixtureEntry[] {
  const here = dirname(fileURLToPath(import.meta.url));
  const text = readFileSync(join(here, "fixtures", "session.jsonl"), "utf8");
  return text
    .trim()
    .split("\n")
    .map((line) => JSON.parse(line) as FixtureEntry);
}
