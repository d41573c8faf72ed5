// Letterboxed fit of a frame into a canvas and the canvas <-> frame pixel
// mapping. Clicks land in frame pixels; overlays go the other way.

import type { Pt } from "./protocol.js";

export interface PanelTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
  frameW: number;
  frameH: number;
}

export function fitTransform(
  frameW: number,
  frameH: number,
  canvasW: number,
  canvasH: number,
): PanelTransform {
  if (frameW <= 0 || frameH <= 0 || canvasW <= 0 || canvasH <= 0) {
    throw new Error("degenerate panel size");
  }
  const scale = Math.min(canvasW / frameW, canvasH / frameH);
  return {
    scale,
    offsetX: (canvasW - frameW * scale) / 2,
    offsetY: (canvasH - frameH * scale) / 2,
    frameW,
    frameH,
  };
}

export function frameToCanvas(t: PanelTransform, fx: number, fy: number): Pt {
  return [fx * t.scale + t.offsetX, fy * t.scale + t.offsetY];
}

// null for clicks in the letterbox margin or outside the image
export function canvasToFrame(t: PanelTransform, cx: number, cy: number): Pt | null {
  const fx = (cx - t.offsetX) / t.scale;
  const fy = (cy - t.offsetY) / t.scale;
  if (fx < 0 || fy < 0 || fx >= t.frameW || fy >= t.frameH) return null;
  return [fx, fy];
}
