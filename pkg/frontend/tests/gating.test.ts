import { expect, test } from "vitest";

import type { ClickRejectedMsg, GoalAckMsg, Pt, ServerMsg } from "../src/protocol.js";
import { applyMessage, clickGate, initialViewState } from "../src/view_state.js";
import { loadSession } from "./fixture.js";

// The client's gate must agree with the server verdict for every click the
// recorded session carries, acks and rejections alike.
test("click gating matches the server on the recorded session", () => {
  const session = loadSession();
  let s = initialViewState();
  let checked = 0;
  let rejections = 0;

  for (let i = 0; i < session.length; i++) {
    const entry = session[i];
    if (entry.dir === "s2c") {
      s = applyMessage(s, entry.msg);
      continue;
    }
    const kind = entry.msg.kind as string;
    if (kind !== "click_ilm_goal" && kind !== "click_subretinal_goal") continue;

    const panel = kind === "click_ilm_goal" ? "microscope" : "bscan";
    const goal = kind === "click_ilm_goal" ? "ilm" : "subretinal";
    const xy: Pt =
      panel === "microscope"
        ? [entry.msg.x as number, entry.msg.y as number]
        : [entry.msg.col as number, entry.msg.row as number];

    // the server's answer is the next ack/rejection for this goal
    const verdict = session
      .slice(i + 1)
      .find(
        (e) =>
          e.dir === "s2c" &&
          (e.msg.kind === "goal_ack" || e.msg.kind === "click_rejected") &&
          (e.msg as GoalAckMsg | ClickRejectedMsg).goal === goal,
      )!.msg as ServerMsg;

    const gate = clickGate(s, panel, xy);
    expect(gate.ok).toBe(verdict.kind === "goal_ack");
    if (!gate.ok) {
      rejections += 1;
      expect((verdict as ClickRejectedMsg).reason).toBe(gate.reason);
    }
    checked += 1;
  }

  expect(checked).toBeGreaterThanOrEqual(4);
  expect(rejections).toBe(2); // both rejection paths exercised
});
