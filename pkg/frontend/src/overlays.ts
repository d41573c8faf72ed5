// Overlay geometry is computed as a plain model (testable) and painted by a
// thin canvas painter. All positions are canvas pixels after the panel
// transform; um labels come from the fixed instrument conversion factors.

import {
  UM_PER_BSCAN_ROW,
  UM_PER_MICROSCOPE_PX,
  type Pt,
} from "./protocol.js";
import { frameToCanvas, type PanelTransform } from "./transform.js";
import type { ViewState } from "./view_state.js";

export const STALE_AFTER_S = 1.0; // sim seconds before a panel dims

export interface Marker {
  kind: "tip" | "base" | "goal" | "ilm_projection";
  at: Pt;
}

export interface PolyLine {
  kind: "shaft" | "scan" | "ilm" | "rpe";
  points: Pt[];
}

export interface ScaleBar {
  from: Pt;
  to: Pt;
  labelUm: number;
}

export interface OverlayModel {
  markers: Marker[];
  lines: PolyLine[];
  scaleBar: ScaleBar | null;
  stale: boolean;
  placeholder: boolean;
}

function empty(): OverlayModel {
  return { markers: [], lines: [], scaleBar: null, stale: false, placeholder: true };
}

export function microscopeOverlay(s: ViewState, t: PanelTransform): OverlayModel {
  const frame = s.microscope;
  if (frame === null) return empty();
  const model = empty();
  model.placeholder = false;
  model.stale = s.simTimeS - frame.sim_time_s > STALE_AFTER_S;
  const ann = frame.annotations;
  if (s.overlays.detections && ann.valid) {
    model.markers.push({ kind: "tip", at: frameToCanvas(t, ann.tip_px[0], ann.tip_px[1]) });
    model.markers.push({ kind: "base", at: frameToCanvas(t, ann.base_px[0], ann.base_px[1]) });
    model.lines.push({
      kind: "shaft",
      points: [
        frameToCanvas(t, ann.base_px[0], ann.base_px[1]),
        frameToCanvas(t, ann.tip_px[0], ann.tip_px[1]),
      ],
    });
  }
  if (s.overlays.scanLine && s.bscan !== null) {
    const c = s.bscan.line_center_px;
    const v = s.bscan.line_tangent_px;
    model.lines.push({
      kind: "scan",
      points: [
        frameToCanvas(t, c[0] - v[0], c[1] - v[1]),
        frameToCanvas(t, c[0] + v[0], c[1] + v[1]),
      ],
    });
  }
  if (s.overlays.goals && s.goalIlmPx !== null) {
    model.markers.push({ kind: "goal", at: frameToCanvas(t, s.goalIlmPx[0], s.goalIlmPx[1]) });
  }
  // 500 um horizontal bar, bottom-left of the image area
  const barPx = 500 / UM_PER_MICROSCOPE_PX;
  const from = frameToCanvas(t, 10, frame.height - 14);
  model.scaleBar = { from, to: [from[0] + barPx * t.scale, from[1]], labelUm: 500 };
  return model;
}

export function bscanOverlay(s: ViewState, t: PanelTransform): OverlayModel {
  const frame = s.bscan;
  if (frame === null) return empty();
  const model = empty();
  model.placeholder = false;
  model.stale = s.simTimeS - frame.sim_time_s > STALE_AFTER_S;
  const ann = frame.annotations;
  if (s.overlays.detections) {
    const layer = (kind: "ilm" | "rpe", rows: number[]) => {
      const pts: Pt[] = [];
      for (let col = 0; col < rows.length; col++) {
        pts.push(frameToCanvas(t, col, rows[col]));
      }
      model.lines.push({ kind, points: pts });
    };
    layer("ilm", ann.ilm_rows);
    layer("rpe", ann.rpe_rows);
    if (ann.valid) {
      model.markers.push({ kind: "tip", at: frameToCanvas(t, ann.tip_px[0], ann.tip_px[1]) });
      model.markers.push({ kind: "base", at: frameToCanvas(t, ann.base_px[0], ann.base_px[1]) });
      // where the tip lands on the surface if lowered straight down
      const col = Math.min(ann.ilm_rows.length - 1, Math.max(0, Math.round(ann.tip_px[0])));
      model.markers.push({
        kind: "ilm_projection",
        at: frameToCanvas(t, ann.tip_px[0], ann.ilm_rows[col]),
      });
    }
  }
  if (s.overlays.goals && s.goalSubretinalPx !== null) {
    model.markers.push({
      kind: "goal",
      at: frameToCanvas(t, s.goalSubretinalPx[0], s.goalSubretinalPx[1]),
    });
  }
  // 100 um vertical bar (depth axis), bottom-left
  const barPx = 100 / UM_PER_BSCAN_ROW;
  const from = frameToCanvas(t, 10, frame.height - 14);
  model.scaleBar = { from, to: [from[0], from[1] - barPx * t.scale], labelUm: 100 };
  return model;
}

const MARKER_COLORS: Record<Marker["kind"], string> = {
  tip: "#67e8f9",
  base: "#38bdf8",
  goal: "#fbbf24",
  ilm_projection: "#a3e635",
};

const LINE_COLORS: Record<PolyLine["kind"], string> = {
  shaft: "rgba(56, 189, 248, 0.6)",
  scan: "rgba(244, 114, 182, 0.8)",
  ilm: "rgba(163, 230, 53, 0.7)",
  rpe: "rgba(251, 146, 60, 0.7)",
};

export function drawOverlay(ctx: CanvasRenderingContext2D, model: OverlayModel): void {
  for (const line of model.lines) {
    ctx.strokeStyle = LINE_COLORS[line.kind];
    ctx.lineWidth = line.kind === "shaft" ? 2 : 1;
    ctx.beginPath();
    line.points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.stroke();
  }
  for (const m of model.markers) {
    const [x, y] = m.at;
    ctx.strokeStyle = MARKER_COLORS[m.kind];
    ctx.lineWidth = 2;
    if (m.kind === "goal") {
      ctx.beginPath();
      ctx.arc(x, y, 7, 0, Math.PI * 2);
      ctx.stroke();
    }
    ctx.beginPath();
    ctx.moveTo(x - 6, y);
    ctx.lineTo(x + 6, y);
    ctx.moveTo(x, y - 6);
    ctx.lineTo(x, y + 6);
    ctx.stroke();
  }
  if (model.scaleBar !== null) {
    const { from, to, labelUm } = model.scaleBar;
    ctx.strokeStyle = "#e2e8f0";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(from[0], from[1]);
    ctx.lineTo(to[0], to[1]);
    ctx.stroke();
    ctx.fillStyle = "#e2e8f0";
    ctx.font = "11px sans-serif";
    ctx.fillText(`${labelUm} um`, Math.min(from[0], to[0]), Math.max(from[1], to[1]) - 4);
  }
  if (model.stale) {
    ctx.fillStyle = "rgba(15, 23, 42, 0.55)";
    ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
    ctx.fillStyle = "#f87171";
    ctx.font = "12px sans-serif";
    ctx.fillText("stale", 8, 16);
  }
  if (model.placeholder) {
    ctx.fillStyle = "#0f172a";
    ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
    ctx.fillStyle = "#64748b";
    ctx.font = "13px sans-serif";
    ctx.fillText("waiting for frames", 10, 22);
  }
}
