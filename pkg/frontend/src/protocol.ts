// Wire protocol of the simulator bridge: one JSON object per websocket text
// frame, every server message stamped with a strictly increasing seq.
// Broadcasts are identical on every connection; click rejections and errors
// go only to the sender but draw from the same counter.

export const UM_PER_MICROSCOPE_PX = 13.6;
export const UM_PER_BSCAN_ROW = 2.6;
export const UM_PER_BSCAN_COL = 5.3;

export type Pt = [number, number];

export interface StateMsg {
  kind: "state";
  seq: number;
  phase: string;
  running: boolean;
  sim_time_s: number;
  tip_rgb_px: Pt | null;
  tip_oct_px: Pt | null;
  rcm_error_um: number | null;
  goal_ilm_px: Pt | null;
  goal_subretinal_px: Pt | null;
  durations_s: Record<string, number>;
}

export interface MicroscopeAnnotations {
  tip_px: Pt;
  base_px: Pt;
  valid: boolean;
}

export interface BscanAnnotations extends MicroscopeAnnotations {
  ilm_rows: number[];
  rpe_rows: number[];
}

export interface MicroscopeFrameMsg {
  kind: "microscope_frame";
  seq: number;
  tick: number;
  sim_time_s: number;
  png: string; // base64
  width: number;
  height: number;
  annotations: MicroscopeAnnotations;
}

export interface BscanFrameMsg {
  kind: "bscan_frame";
  seq: number;
  tick: number;
  sim_time_s: number;
  png: string;
  width: number;
  height: number;
  line_center_px: Pt; // scan line on the microscope view
  line_tangent_px: Pt;
  annotations: BscanAnnotations;
}

export interface GoalAckMsg {
  kind: "goal_ack";
  seq: number;
  goal: "ilm" | "subretinal";
  px: Pt;
}

export interface ClickRejectedMsg {
  kind: "click_rejected";
  seq: number;
  goal: "ilm" | "subretinal";
  reason: string;
  phase: string;
}

export interface TrialRecordJson {
  status: string;
  abort_cause?: string | null;
  metrics: Record<string, number>;
  [extra: string]: unknown;
}

export interface TrialDoneMsg {
  kind: "trial_done";
  seq: number;
  status: string;
  record: TrialRecordJson;
}

export interface ErrorMsg {
  kind: "error";
  seq: number;
  message: string;
}

export type ServerMsg =
  | StateMsg
  | MicroscopeFrameMsg
  | BscanFrameMsg
  | GoalAckMsg
  | ClickRejectedMsg
  | TrialDoneMsg
  | ErrorMsg;

export type ClientMsg =
  | { kind: "start" }
  | { kind: "pause" }
  | { kind: "reset"; config?: Record<string, unknown> }
  | { kind: "click_ilm_goal"; x: number; y: number }
  | { kind: "click_subretinal_goal"; col: number; row: number };
