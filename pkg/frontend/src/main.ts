/** Browser entry point: session grid on the left, live preview on the right. */

import { ApiClient } from "./api.js";
import { FrameStream } from "./frame-stream.js";
import { buildGridView, formatEta, formatRate, GridViewModel } from "./grid-view.js";
import { PreviewController } from "./preview.js";
import { SessionPoller } from "./session-poller.js";
import { DEFAULT_STEERING, KeyboardSteering } from "./steering.js";
import type { Cell } from "./types.js";

const CELL_PX = 26;
const PREVIEW = { width: 640, height: 480, hfov: 60 };

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function main(): void {
  const base = window.location.origin;
  const api = new ApiClient(base);
  const poller = new SessionPoller(api, 2000);

  const canvas = el<HTMLCanvasElement>("grid");
  const ctx = canvas.getContext("2d")!;
  const banner = el<HTMLDivElement>("banner");
  const stats = el<HTMLDivElement>("stats");
  const captureBtn = el<HTMLButtonElement>("capture");
  const warnBox = el<HTMLDivElement>("warnings");
  const previewImg = el<HTMLImageElement>("preview");
  const previewInfo = el<HTMLDivElement>("preview-info");

  let cursor: Cell | null = null;
  let view: GridViewModel | null = null;

  function redraw(): void {
    if (!poller.snapshot) return;
    view = buildGridView(poller.snapshot, cursor, (c) => poller.statusOf(c));
    const { minI, minJ, maxI, maxJ } = view.bounds;
    canvas.width = (maxI - minI + 1) * CELL_PX + 1;
    canvas.height = (maxJ - minJ + 1) * CELL_PX + 1;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    for (const cell of view.cells) {
      const x = (cell.cell[0] - minI) * CELL_PX;
      // j grows upward in world space: draw bottom-up
      const y = (maxJ - cell.cell[1]) * CELL_PX;
      ctx.fillStyle = cell.color;
      ctx.fillRect(x + 1, y + 1, CELL_PX - 2, CELL_PX - 2);
      if (cell.selected) {
        ctx.strokeStyle = "#1a73e8";
        ctx.lineWidth = 2;
        ctx.strokeRect(x + 1, y + 1, CELL_PX - 2, CELL_PX - 2);
      }
    }
    const captured = view.counts.captured ?? 0;
    const total = view.cells.length;
    stats.textContent =
      `${captured}/${total} captured (${(view.progress * 100).toFixed(1)}%) · ` +
      `rate ${formatRate(view.ratePerMin)} · ETA ${formatEta(view.etaMin)}`;
    const selStatus = cursor ? poller.statusOf(cursor) : undefined;
    captureBtn.disabled = !poller.online || !cursor ||
      (selStatus !== "planned" && selStatus !== "failed");
    captureBtn.textContent = selStatus === "failed" ? "Retry capture" : "Capture";
  }

  canvas.addEventListener("click", (ev) => {
    if (!view || !poller.snapshot) return;
    const rect = canvas.getBoundingClientRect();
    const { minI, maxJ } = view.bounds;
    const i = Math.floor((ev.clientX - rect.left) / CELL_PX) + minI;
    const j = maxJ - Math.floor((ev.clientY - rect.top) / CELL_PX);
    if (`${i},${j}` in poller.snapshot.cells) {
      cursor = [i, j];
      redraw();
    }
  });

  canvas.addEventListener("dblclick", () => {
    if (cursor && poller.snapshot) {
      steering.jumpTo(
        cursor[0] * poller.snapshot.cell_size_m,
        cursor[1] * poller.snapshot.cell_size_m,
      );
    }
  });

  captureBtn.addEventListener("click", () => {
    if (cursor) void poller.trigger(cursor).then(redraw);
  });

  poller.onEvent((ev) => {
    if (ev.kind === "offline") {
      banner.textContent = "service unreachable — retrying";
      banner.style.display = "block";
      captureBtn.disabled = true;
    } else if (ev.kind === "online") {
      banner.style.display = "none";
    } else if (ev.kind === "warning" || ev.kind === "error") {
      const div = document.createElement("div");
      div.className = ev.kind;
      div.textContent = ev.message;
      warnBox.prepend(div);
      while (warnBox.children.length > 5) warnBox.lastChild?.remove();
    }
    redraw();
  });

  // ---- preview pane ----
  const wsUrl = base.replace(/^http/, "ws") + "/stream";
  const stream = new FrameStream(wsUrl, PREVIEW, (url) => new WebSocket(url));
  const steering = new KeyboardSteering(DEFAULT_STEERING);
  const preview = new PreviewController(stream, steering);
  let blobUrl: string | null = null;

  preview.onUpdate((state, frame) => {
    if (frame) {
      if (blobUrl) URL.revokeObjectURL(blobUrl);
      const type = frame.header.encode === "jpeg" ? "image/jpeg" : "image/png";
      blobUrl = URL.createObjectURL(new Blob([frame.payload.slice()], { type }));
      previewImg.src = blobUrl;
    }
    const latency =
      state.lastFrameLatencyMs === null ? "" : ` · ${state.lastFrameLatencyMs.toFixed(0)} ms`;
    previewInfo.innerHTML =
      `<span class="dot ${state.connection}"></span> ${state.connection}` +
      (state.sourcePanoId ? ` · pano ${state.sourcePanoId}` : "") +
      (state.stalled ? ' · <span class="stall">STALL</span>' : "") +
      latency;
  });

  window.addEventListener("keydown", (ev) => {
    if (ev.repeat) return;
    steering.keyDown(ev.key);
  });
  window.addEventListener("keyup", (ev) => steering.keyUp(ev.key));

  poller.start();
  preview.start();
}

main();
