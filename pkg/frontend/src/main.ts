// Browser entry point: wires the bridge client, the view-state reducer, and
// the two canvas panels together.

import { BridgeClient } from "./client.js";
import { bscanOverlay, drawOverlay, microscopeOverlay } from "./overlays.js";
import type { Pt, ServerMsg } from "./protocol.js";
import { buildReport, formatValue } from "./report.js";
import { canvasToFrame, fitTransform } from "./transform.js";
import {
  applyMessage,
  clickGate,
  clickMessage,
  initialViewState,
  type Panel,
  type ViewState,
} from "./view_state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

const microCanvas = el<HTMLCanvasElement>("microscope");
const bscanCanvas = el<HTMLCanvasElement>("bscan");
const sparkCanvas = el<HTMLCanvasElement>("sparkline");
const statusLine = el<HTMLDivElement>("status");
const toastsBox = el<HTMLDivElement>("toasts");
const reportBox = el<HTMLDivElement>("report");
const urlInput = el<HTMLInputElement>("url");
const seedInput = el<HTMLInputElement>("seed");

let view: ViewState = initialViewState();
const images: Record<Panel, { img: HTMLImageElement; seq: number }> = {
  microscope: { img: new Image(), seq: -1 },
  bscan: { img: new Image(), seq: -1 },
};

function onMessage(msg: ServerMsg): void {
  view = applyMessage(view, msg);
  if (msg.kind === "microscope_frame" || msg.kind === "bscan_frame") {
    const panel: Panel = msg.kind === "microscope_frame" ? "microscope" : "bscan";
    if (msg.seq > images[panel].seq) {
      images[panel].seq = msg.seq;
      images[panel].img.src = `data:image/png;base64,${msg.png}`;
    }
  }
}

let client = makeClient(urlInput.value);

function makeClient(url: string): BridgeClient {
  const c = new BridgeClient({
    url,
    onMessage,
    onStatus: (status) => {
      view = { ...view, connection: status };
    },
  });
  c.connect();
  return c;
}

el<HTMLButtonElement>("btn-connect").addEventListener("click", () => {
  client.close();
  view = initialViewState();
  images.microscope.seq = -1;
  images.bscan.seq = -1;
  client = makeClient(urlInput.value);
});

el<HTMLButtonElement>("btn-start").addEventListener("click", () => {
  client.send({ kind: "start" });
});
el<HTMLButtonElement>("btn-pause").addEventListener("click", () => {
  client.send({ kind: "pause" });
});
el<HTMLButtonElement>("btn-reset").addEventListener("click", () => {
  const seed = seedInput.valueAsNumber;
  const config = Number.isFinite(seed) ? { master_seed: seed } : {};
  client.send({ kind: "reset", config });
});

for (const name of ["detections", "scanLine", "goals"] as const) {
  const box = el<HTMLInputElement>(`chk-${name.toLowerCase()}`);
  box.checked = view.overlays[name];
  box.addEventListener("change", () => {
    view = { ...view, overlays: { ...view.overlays, [name]: box.checked } };
  });
}

function panelClick(panel: Panel, canvas: HTMLCanvasElement, ev: MouseEvent): void {
  const frame = panel === "microscope" ? view.microscope : view.bscan;
  if (frame === null) return;
  const rect = canvas.getBoundingClientRect();
  const t = fitTransform(frame.width, frame.height, canvas.width, canvas.height);
  const xy = canvasToFrame(
    t,
    ((ev.clientX - rect.left) * canvas.width) / rect.width,
    ((ev.clientY - rect.top) * canvas.height) / rect.height,
  );
  if (xy === null) return;
  const gate = clickGate(view, panel, xy);
  if (!gate.ok) {
    localToast(`${panel === "microscope" ? "ilm" : "subretinal"} click blocked: ${gate.reason}`);
    return;
  }
  client.send(clickMessage(panel, xy));
}

microCanvas.addEventListener("click", (ev) => panelClick("microscope", microCanvas, ev));
bscanCanvas.addEventListener("click", (ev) => panelClick("bscan", bscanCanvas, ev));

const localToasts: string[] = [];
function localToast(text: string): void {
  localToasts.push(text);
  if (localToasts.length > 4) localToasts.shift();
}

function drawPanel(panel: Panel, canvas: HTMLCanvasElement): void {
  const ctx = canvas.getContext("2d");
  if (ctx === null) return;
  ctx.fillStyle = "#020617";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const frame = panel === "microscope" ? view.microscope : view.bscan;
  if (frame !== null) {
    const t = fitTransform(frame.width, frame.height, canvas.width, canvas.height);
    const img = images[panel].img;
    if (img.complete && img.naturalWidth > 0) {
      ctx.drawImage(img, t.offsetX, t.offsetY, frame.width * t.scale, frame.height * t.scale);
    }
    const model =
      panel === "microscope" ? microscopeOverlay(view, t) : bscanOverlay(view, t);
    drawOverlay(ctx, model);
  } else {
    drawOverlay(ctx, {
      markers: [],
      lines: [],
      scaleBar: null,
      stale: false,
      placeholder: true,
    });
  }
}

function drawSparkline(): void {
  const ctx = sparkCanvas.getContext("2d");
  if (ctx === null) return;
  const w = sparkCanvas.width;
  const h = sparkCanvas.height;
  ctx.fillStyle = "#0f172a";
  ctx.fillRect(0, 0, w, h);
  const hist = view.rcmHistory;
  if (hist.length < 2) return;
  const max = Math.max(10, ...hist);
  ctx.strokeStyle = "#f472b6";
  ctx.lineWidth = 1;
  ctx.beginPath();
  hist.forEach((v, i) => {
    const x = (i / (hist.length - 1)) * (w - 2) + 1;
    const y = h - 2 - (v / max) * (h - 4);
    i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#94a3b8";
  ctx.font = "9px sans-serif";
  ctx.fillText(`rcm ${hist[hist.length - 1].toFixed(1)} um (max ${max.toFixed(0)})`, 4, 10);
}

function renderStatus(): void {
  const rcm = view.state?.rcm_error_um;
  const parts = [
    `conn: ${view.connection}`,
    `phase: ${view.phase || "-"}`,
    `t=${view.simTimeS.toFixed(2)} s`,
    rcm !== null && rcm !== undefined ? `rcm ${rcm.toFixed(2)} um` : "",
    view.lastError !== null ? `error: ${view.lastError}` : "",
  ];
  statusLine.textContent = parts.filter(Boolean).join("   ");
  const durations = Object.entries(view.durationsS)
    .map(([k, v]) => `${k} ${v.toFixed(2)}s`)
    .join("  ");
  el<HTMLDivElement>("durations").textContent = durations;
}

function renderToasts(): void {
  const serverToasts = view.toasts.slice(-4).map((t) => `[${t.phase}] ${t.text}`);
  toastsBox.innerHTML = "";
  for (const text of [...serverToasts, ...localToasts]) {
    const div = document.createElement("div");
    div.className = "toast";
    div.textContent = text;
    toastsBox.appendChild(div);
  }
}

let renderedReportSeq = -1;
function renderReport(): void {
  if (view.report === null) {
    if (renderedReportSeq !== -1) {
      reportBox.innerHTML = "";
      renderedReportSeq = -1;
    }
    return;
  }
  if (renderedReportSeq === view.seq) return;
  renderedReportSeq = view.seq;
  const table = document.createElement("table");
  for (const row of buildReport(view.report)) {
    const tr = document.createElement("tr");
    const k = document.createElement("td");
    k.textContent = row.key;
    const v = document.createElement("td");
    v.textContent = formatValue(row.value);
    tr.append(k, v);
    table.appendChild(tr);
  }
  reportBox.innerHTML = "<h3>trial report</h3>";
  reportBox.appendChild(table);
}

function frameLoop(): void {
  drawPanel("microscope", microCanvas);
  drawPanel("bscan", bscanCanvas);
  drawSparkline();
  renderStatus();
  renderToasts();
  renderReport();
  requestAnimationFrame(frameLoop);
}

requestAnimationFrame(frameLoop);
