import { expect, test } from "vitest";

import { canvasToFrame, fitTransform, frameToCanvas } from "../src/transform.js";

test("exact halving canvas keeps round trips exact", () => {
  const t = fitTransform(640, 480, 320, 240); // scale 0.5, no letterbox
  expect(t.scale).toBe(0.5);
  expect(t.offsetX).toBe(0);
  expect(t.offsetY).toBe(0);
  expect(canvasToFrame(t, 10, 7)).toEqual([20, 14]);
  const back = frameToCanvas(t, 20, 14);
  expect(back).toEqual([10, 7]);
});

test("letterbox centers the image and rejects margin clicks", () => {
  const t = fitTransform(512, 1024, 400, 400);
  expect(t.scale).toBe(400 / 1024);
  expect(t.offsetX).toBe(100);
  expect(t.offsetY).toBe(0);
  expect(canvasToFrame(t, 50, 200)).toBeNull(); // left margin
  expect(canvasToFrame(t, 350, 200)).toBeNull(); // right margin
  expect(canvasToFrame(t, 399.9, 200)).toBeNull();
  const inside = canvasToFrame(t, 200, 200);
  expect(inside).not.toBeNull();
});

test("integer canvas clicks survive the round trip with 0 px error", () => {
  const cases: Array<[number, number, number, number]> = [
    [640, 480, 640, 480],
    [640, 480, 320, 240],
    [512, 1024, 384, 768],
    [512, 1024, 333, 517], // awkward scale
    [640, 480, 1000, 1000],
  ];
  for (const [fw, fh, cw, ch] of cases) {
    const t = fitTransform(fw, fh, cw, ch);
    for (let cx = Math.ceil(t.offsetX); cx < cw - t.offsetX - 1; cx += 7) {
      for (let cy = Math.ceil(t.offsetY); cy < ch - t.offsetY - 1; cy += 11) {
        const f = canvasToFrame(t, cx, cy);
        expect(f).not.toBeNull();
        const [bx, by] = frameToCanvas(t, f![0], f![1]);
        expect(Math.abs(bx - cx)).toBeLessThan(1e-9);
        expect(Math.abs(by - cy)).toBeLessThan(1e-9);
        expect(Math.round(bx)).toBe(cx);
        expect(Math.round(by)).toBe(cy);
      }
    }
  }
});

test("frame pixels survive the reverse trip", () => {
  const t = fitTransform(512, 1024, 384, 768); // scale 0.75
  for (let col = 0; col < 512; col += 13) {
    for (let row = 0; row < 1024; row += 37) {
      const [cx, cy] = frameToCanvas(t, col, row);
      const back = canvasToFrame(t, cx, cy);
      expect(back).not.toBeNull();
      expect(Math.abs(back![0] - col)).toBeLessThan(1e-9);
      expect(Math.abs(back![1] - row)).toBeLessThan(1e-9);
    }
  }
});

test("degenerate sizes are refused", () => {
  expect(() => fitTransform(0, 480, 100, 100)).toThrow();
  expect(() => fitTransform(640, 480, 100, 0)).toThrow();
});
