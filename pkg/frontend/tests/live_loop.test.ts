// Drives a real bridge server end to end: connect, click both goals through
// the same gate the UI uses, wait for DONE, then check the report panel
// against the record the server wrote to disk.

import { spawn, type ChildProcess } from "node:child_process";
import { existsSync, readFileSync } from "node:fs";
import { mkdtemp } from "node:fs/promises";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, expect, test } from "vitest";
import WebSocket from "ws";

import { BridgeClient, type WsLike } from "../src/client.js";
import type { Pt, TrialRecordJson } from "../src/protocol.js";
import { buildReport } from "../src/report.js";
import {
  applyMessage,
  clickGate,
  clickMessage,
  initialViewState,
} from "../src/view_state.js";

let proc: ChildProcess;
let outDir: string;
let port: number;

beforeAll(async () => {
  outDir = await mkdtemp(join(tmpdir(), "octnav-ui-"));
  proc = spawn(
    "python3",
    [
      "-u",
      "-m",
      "octnav.cli",
      "serve",
      "--port",
      "0",
      "--speed",
      "2000",
      "--frame-stride",
      "25",
      "--seed",
      "5",
      "--out",
      outDir,
    ],
    { stdio: ["ignore", "pipe", "pipe"] },
  );
  let stderr = "";
  proc.stderr!.on("data", (d) => (stderr += String(d)));
  port = await new Promise<number>((resolve, reject) => {
    let stdout = "";
    const timer = setTimeout(
      () => reject(new Error(`server never announced a port\n${stderr}`)),
      30_000,
    );
    proc.stdout!.on("data", (d) => {
      stdout += String(d);
      const m = stdout.match(/ws:\/\/[\d.]+:(\d+)/);
      if (m) {
        clearTimeout(timer);
        resolve(Number(m[1]));
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`server exited early (${code})\n${stderr}`));
    });
  });
});

afterAll(() => {
  proc?.kill();
});

test("clicked goals drive a live trial to DONE and the report matches the record", async () => {
  let view = initialViewState();
  let started = false;
  let blockedEarly = false;
  let ilmClicked = false;
  let subClicked = false;

  let resolveDone!: () => void;
  const done = new Promise<void>((r) => (resolveDone = r));

  const step = () => {
    if (!started && view.state !== null) {
      started = client.send({ kind: "start" });
    }
    // a bscan click before the surface must be blocked locally, nothing sent
    if (!blockedEarly && (view.phase === "BOOTSTRAP" || view.phase === "AWAIT_ILM_GOAL")) {
      const gate = clickGate(view, "bscan", [256, 600]);
      expect(gate.ok).toBe(false);
      if (!gate.ok) {
        expect(gate.reason).toBe("subretinal goal is only accepted at the surface");
      }
      blockedEarly = true;
    }
    if (!ilmClicked && view.goalIlmPx === null) {
      const xy: Pt = [400, 320];
      if (clickGate(view, "microscope", xy).ok) {
        ilmClicked = client.send(clickMessage("microscope", xy));
      }
    }
    if (!subClicked && view.goalSubretinalPx === null && view.state?.tip_oct_px) {
      const tip = view.state.tip_oct_px;
      const xy: Pt = [Math.round(tip[0]), Math.round(tip[1]) + 40];
      if (clickGate(view, "bscan", xy).ok) {
        subClicked = client.send(clickMessage("bscan", xy));
      }
    }
    if (view.report !== null) resolveDone();
  };

  const client = new BridgeClient({
    url: `ws://127.0.0.1:${port}`,
    reconnect: false,
    makeSocket: (url) => new WebSocket(url) as unknown as WsLike,
    onMessage: (msg) => {
      view = applyMessage(view, msg);
      step();
    },
    onStatus: (st) => {
      view = { ...view, connection: st };
    },
  });
  client.connect();
  await done;
  client.close();

  expect(blockedEarly).toBe(true);
  expect(ilmClicked).toBe(true);
  expect(subClicked).toBe(true);
  expect(view.phase).toBe("DONE");
  expect(view.running).toBe(false);
  expect(view.report!.status).toBe("done");
  expect(view.goalIlmPx).toEqual([400, 320]);
  expect(Object.keys(view.durationsS)).toContain("ALIGN_XY");
  expect(view.microscope).not.toBeNull();
  expect(view.bscan).not.toBeNull();

  // the server writes the same record next to its other outputs
  const recordPath = join(outDir, "interactive_record.json");
  const written = await new Promise<TrialRecordJson>((resolve, reject) => {
    const t0 = Date.now();
    const poll = () => {
      if (existsSync(recordPath)) {
        try {
          resolve(JSON.parse(readFileSync(recordPath, "utf8")));
          return;
        } catch {
          // mid-write, retry
        }
      }
      if (Date.now() - t0 > 15_000) reject(new Error("record never written"));
      else setTimeout(poll, 100);
    };
    poll();
  });

  // report panel rows vs the on-disk record: key sets and values, exactly
  const panel = buildReport(view.report!);
  const disk = buildReport(written);
  expect(panel.map((r) => r.key)).toEqual(disk.map((r) => r.key));
  for (let i = 0; i < panel.length; i++) {
    expect(panel[i].value).toBe(disk[i].value);
  }
  expect(Object.keys(view.report!.metrics).sort()).toEqual(Object.keys(written.metrics).sort());
});
