/**
 * DOM wiring for the console. All math and mask algebra live on the
 * server or in the shared preset module; this layer only renders state
 * and forwards actions.
 */

import { ApiClient } from "./api.js";
import { brush, maskFromRegions, MaskGrid, toPgmBytes } from "./mask.js";
import { CODES } from "./presets.js";
import { ConsoleSession } from "./session.js";
import type { AnonymizeParams } from "./types.js";

const api = new ApiClient("");
const session = new ConsoleSession(api);

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let freehand: MaskGrid | null = null;
let brushValue = 1;

function readParams(): AnonymizeParams {
  return {
    lambda_id: parseFloat(($("lambda-id") as unknown as HTMLInputElement).value),
    lambda_cfg: parseFloat(($("lambda-cfg") as unknown as HTMLInputElement).value),
    lambda_img: parseFloat(($("lambda-img") as unknown as HTMLInputElement).value),
    t_skip: parseInt(($("t-skip") as unknown as HTMLInputElement).value, 10),
    mask_start: parseInt(($("mask-start") as unknown as HTMLInputElement).value, 10),
    seed: parseInt(($("seed") as unknown as HTMLInputElement).value, 10),
  };
}

function renderStatus(text: string): void {
  $("status").textContent = text;
}

function renderWarning(): void {
  const badge = $("warning-badge");
  badge.textContent = session.state.warning ?? "";
  badge.style.display = session.state.warning ? "inline-block" : "none";
  const gate = session.canSubmit();
  ($("submit") as unknown as HTMLButtonElement).disabled = !gate.ok;
}

function renderOverlay(): void {
  const seg = session.state.segmentation;
  if (!seg) return;
  const canvas = $("overlay") as unknown as HTMLCanvasElement;
  canvas.width = seg.width;
  canvas.height = seg.height;
  const ctx = canvas.getContext("2d")!;
  const mask = freehand ?? maskFromRegions(seg.labels, session.state.regionSets);
  const img = ctx.createImageData(seg.width, seg.height);
  for (let i = 0; i < mask.values.length; i++) {
    img.data[4 * i] = 255;
    img.data[4 * i + 3] = Math.round(mask.values[i] * 160);
  }
  ctx.putImageData(img, 0, 0);
}

function renderHistory(): void {
  const list = $("history");
  list.innerHTML = "";
  for (const entry of session.history) {
    const item = document.createElement("li");
    const dist = entry.identityDistance?.toFixed(4) ?? "n/a";
    item.textContent =
      `id-dist ${dist} | lambda_id=${entry.config.lambda_id} ` +
      `cfg=${entry.config.lambda_cfg} t_skip=${entry.config.t_skip} ` +
      `mask=${JSON.stringify(entry.config.mask)}`;
    list.appendChild(item);
  }
  const preview = $("result") as unknown as HTMLImageElement;
  if (session.state.lastResult?.imageUrl) {
    preview.src = session.state.lastResult.imageUrl;
    preview.style.opacity = session.state.lastResultStale ? "0.4" : "1.0";
  }
}

function renderFieldErrors(): void {
  for (const field of ["lambda-id", "lambda-cfg", "lambda-img", "t-skip",
                       "mask-start", "seed"]) {
    const key = field.replace(/-/g, "_") as keyof AnonymizeParams;
    const input = $(field) as unknown as HTMLInputElement;
    input.classList.toggle("invalid", session.state.fieldErrors[key] !== undefined);
    input.title = session.state.fieldErrors[key] ?? "";
  }
}

async function onUpload(file: File): Promise<void> {
  renderStatus("uploading...");
  await session.uploadImage(new Uint8Array(await file.arrayBuffer()));
  await session.fetchSegmentation();
  renderStatus("segmented; invert next");
  renderOverlay();
  renderWarning();
}

async function onInvert(): Promise<void> {
  renderStatus("inverting...");
  const steps = parseInt(($("steps") as unknown as HTMLInputElement).value, 10);
  const seed = parseInt(($("seed") as unknown as HTMLInputElement).value, 10);
  const backend = ($("backend") as unknown as HTMLSelectElement).value;
  await session.invert({ steps, seed, backend });
  renderStatus(`inverted (T=${steps}); adjust parameters and submit`);
  renderWarning();
}

async function onSubmit(): Promise<void> {
  renderStatus("anonymizing...");
  renderHistory();
  try {
    const entry = await session.submitAnonymize(readParams());
    renderStatus(`done; identity distance ${entry.identityDistance?.toFixed(4)}`);
  } catch (err) {
    renderStatus(`error: ${(err as Error).message}`);
  }
  renderFieldErrors();
  renderHistory();
  renderWarning();
}

function exportMask(): void {
  const seg = session.state.segmentation;
  if (!seg) return;
  const mask = freehand ?? maskFromRegions(seg.labels, session.state.regionSets);
  const blob = new Blob([toPgmBytes(mask).slice().buffer as ArrayBuffer],
                        { type: "image/x-portable-graymap" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "mask.pgm";
  link.click();
}

function exportManifests(): void {
  const blob = new Blob([JSON.stringify(session.exportManifests(), null, 2)],
                        { type: "application/json" });
  const link = document.createElement("a");
  link.href = URL.createObjectURL(blob);
  link.download = "session-manifests.json";
  link.click();
}

function wireRegions(): void {
  const panel = $("regions");
  for (const [name, code] of Object.entries(CODES)) {
    if (name === "background" || name === "hair") continue;
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = true; // checked = anonymize
    box.addEventListener("change", () => {
      session.toggleRegion(code);
      freehand = null;
      renderOverlay();
      renderWarning();
    });
    label.appendChild(box);
    label.appendChild(document.createTextNode(name.replace("_", " ")));
    panel.appendChild(label);
  }
}

function wireBrush(): void {
  const canvas = $("overlay") as unknown as HTMLCanvasElement;
  let painting = false;
  canvas.addEventListener("mousedown", (ev) => {
    const seg = session.state.segmentation;
    if (!seg) return;
    painting = true;
    if (!freehand) freehand = maskFromRegions(seg.labels, session.state.regionSets);
    brushValue = ev.shiftKey ? 0 : 1;
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (!painting || !freehand) return;
    const rect = canvas.getBoundingClientRect();
    const x = ((ev.clientX - rect.left) / rect.width) * freehand.width;
    const y = ((ev.clientY - rect.top) / rect.height) * freehand.height;
    brush(freehand, y, x, 2.5, brushValue);
    renderOverlay();
  });
  window.addEventListener("mouseup", () => { painting = false; });
}

export function boot(): void {
  wireRegions();
  wireBrush();
  ($("file") as unknown as HTMLInputElement).addEventListener("change", (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (file) void onUpload(file);
  });
  $("invert").addEventListener("click", () => void onInvert());
  $("submit").addEventListener("click", () => void onSubmit());
  $("export-mask").addEventListener("click", exportMask);
  $("export-manifests").addEventListener("click", exportManifests);
  renderWarning();
}

if (typeof document !== "undefined" && document.getElementById("file")) {
  boot();
}
