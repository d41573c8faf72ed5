// Single source of display truth: a reducer over server messages.
// Goals shown on screen always come from the server (ack or state echo),
// never from the optimistic local click.

import type {
  BscanFrameMsg,
  ClientMsg,
  MicroscopeFrameMsg,
  Pt,
  ServerMsg,
  StateMsg,
  TrialRecordJson,
} from "./protocol.js";

export type Panel = "microscope" | "bscan";

export interface Toast {
  text: string;
  phase: string;
  seq: number;
}

export interface OverlayToggles {
  detections: boolean;
  scanLine: boolean;
  goals: boolean;
}

export interface ViewState {
  connection: "connecting" | "open" | "closed";
  seq: number; // highest applied server seq
  phase: string;
  running: boolean;
  simTimeS: number;
  state: StateMsg | null;
  microscope: MicroscopeFrameMsg | null;
  bscan: BscanFrameMsg | null;
  goalIlmPx: Pt | null;
  goalSubretinalPx: Pt | null;
  durationsS: Record<string, number>;
  rcmHistory: number[]; // recent rcm_error_um samples for the sparkline
  toasts: Toast[];
  report: TrialRecordJson | null;
  lastError: string | null;
  overlays: OverlayToggles;
}

export function initialViewState(): ViewState {
  return {
    connection: "connecting",
    seq: 0,
    phase: "",
    running: false,
    simTimeS: 0,
    state: null,
    microscope: null,
    bscan: null,
    goalIlmPx: null,
    goalSubretinalPx: null,
    durationsS: {},
    rcmHistory: [],
    toasts: [],
    report: null,
    lastError: null,
    overlays: { detections: true, scanLine: true, goals: true },
  };
}

const RCM_HISTORY_MAX = 300;

export function applyMessage(s: ViewState, msg: ServerMsg): ViewState {
  // stale or replayed messages (reconnects re-broadcast state) are no-ops
  if (typeof msg.seq !== "number" || msg.seq <= s.seq) return s;
  switch (msg.kind) {
    case "state": {
      const next: ViewState = {
        ...s,
        seq: msg.seq,
        state: msg,
        phase: msg.phase,
        running: msg.running,
        simTimeS: msg.sim_time_s,
        goalIlmPx: msg.goal_ilm_px,
        goalSubretinalPx: msg.goal_subretinal_px,
        durationsS: msg.durations_s,
      };
      if (msg.rcm_error_um !== null) {
        next.rcmHistory = [...s.rcmHistory.slice(1 - RCM_HISTORY_MAX), msg.rcm_error_um];
      }
      return next;
    }
    case "microscope_frame":
      return { ...s, seq: msg.seq, microscope: msg };
    case "bscan_frame":
      return { ...s, seq: msg.seq, bscan: msg };
    case "goal_ack":
      return msg.goal === "ilm"
        ? { ...s, seq: msg.seq, goalIlmPx: msg.px }
        : { ...s, seq: msg.seq, goalSubretinalPx: msg.px };
    case "click_rejected": {
      const toast = {
        text: `${msg.goal} click rejected: ${msg.reason}`,
        phase: msg.phase,
        seq: msg.seq,
      };
      return { ...s, seq: msg.seq, toasts: [...s.toasts.slice(-9), toast] };
    }
    case "trial_done":
      return { ...s, seq: msg.seq, report: msg.record };
    case "error":
      return { ...s, seq: msg.seq, lastError: msg.message };
    default:
      return s; // unknown kinds ignored
  }
}

export type GateResult = { ok: true } | { ok: false; reason: string };

// Mirrors the server's click gating so disabled clicks match rejections.
export function clickGate(s: ViewState, panel: Panel, frameXY: Pt): GateResult {
  if (panel === "microscope") {
    if (s.phase === "BOOTSTRAP" || s.phase === "AWAIT_ILM_GOAL") return { ok: true };
    return { ok: false, reason: "microscope goal already set or trial finished" };
  }
  if (s.phase !== "AWAIT_SUBRETINAL_GOAL") {
    return { ok: false, reason: "subretinal goal is only accepted at the surface" };
  }
  const tip = s.state?.tip_oct_px ?? null;
  if (tip !== null && frameXY[1] < tip[1]) {
    return { ok: false, reason: "goal sits above the needle tip" };
  }
  return { ok: true };
}

export function clickMessage(panel: Panel, frameXY: Pt): ClientMsg {
  return panel === "microscope"
    ? { kind: "click_ilm_goal", x: frameXY[0], y: frameXY[1] }
    : { kind: "click_subretinal_goal", col: frameXY[0], row: frameXY[1] };
}
