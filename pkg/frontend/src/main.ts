// DOM wiring for the annotator. All label logic lives in the service;
// this file only binds buttons/sliders to the controller and renders
// whatever state comes back.

import { ApiClient } from "./api.js";
import { colorsForMode } from "./color.js";
import type { ColorMode } from "./color.js";
import { AnnotatorController } from "./controller.js";
import { selectByLasso } from "./lasso.js";
import type { Vec2 } from "./lasso.js";
import type { ClusterParams } from "./state.js";
import { PointCloudViewer } from "./viewer.js";

const api = new ApiClient("");
const controller = new AnnotatorController(api);

const el = (id: string): HTMLElement => {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
};

const viewer = new PointCloudViewer(el("viewport"));
let lasso: Vec2[] | null = null;

function drawState(): void {
  const s = controller.current;
  el("scene-name").textContent = s.scene ?? "(no scene)";
  (el("frame-slider") as HTMLInputElement).max = String(Math.max(0, s.frameCount - 1));
  (el("frame-slider") as HTMLInputElement).value = String(s.t);
  el("frame-label").textContent = `t = ${s.t} / ${Math.max(0, s.frameCount - 1)}  (tau = ${s.tau})`;
  el("selection-label").textContent = `${s.selection.size} point(s) selected`;
  el("run-btn").toggleAttribute("disabled", !s.locked || s.proposal.kind === "running");
  el("accept-btn").toggleAttribute("disabled", s.proposal.kind !== "ready");
  el("reject-btn").toggleAttribute("disabled", s.proposal.kind !== "ready");
  const phase = s.proposal;
  el("proposal-label").textContent =
    phase.kind === "none"
      ? "no proposal"
      : phase.kind === "running"
        ? "clustering..."
        : phase.kind === "ready"
          ? `proposal ready: ${phase.summary.instances} instances`
          : `accepted: ${phase.summary.instances} instances`;
  if (s.window && viewer.available) {
    viewer.setColors(colorsForMode(s.colorMode, s.window));
  }
}

async function refreshMetrics(): Promise<void> {
  const metrics = await controller.metrics();
  el("metrics-panel").textContent = metrics
    ? Object.entries(metrics)
        .filter(([k]) => ["AS", "MOTSA", "MOTSP", "SMOTSA"].includes(k))
        .map(([k, v]) => `${k} ${(v as number * 100).toFixed(2)}`)
        .join("   ")
    : "no ground truth";
}

async function refreshSceneList(): Promise<void> {
  const list = el("scene-list");
  list.textContent = "";
  for (const info of await controller.loadScenes()) {
    const row = document.createElement("button");
    row.className = "scene-row";
    row.textContent = `${info.id} (${info.frames} frames, ${info.status})`;
    row.addEventListener("click", async () => {
      await controller.openScene(info);
      const s = controller.current;
      if (s.window && viewer.available) {
        viewer.setWindow(s.window, colorsForMode(s.colorMode, s.window));
      }
      drawState();
      await refreshMetrics();
    });
    list.appendChild(row);
  }
}

function bindParam(id: string, key: keyof ClusterParams): void {
  const input = el(id) as HTMLInputElement;
  input.addEventListener("input", () => {
    controller.setParam(key, Number(input.value));
    el(`${id}-val`).textContent = input.value;
    // no network call until the explicit Run button
  });
}

function currentWindowReload(): Promise<unknown> {
  return controller.refreshWindow().then((data) => {
    if (viewer.available) viewer.setWindow(data, colorsForMode(controller.current.colorMode, data));
    drawState();
  });
}

function setupUi(): void {
  bindParam("eps", "eps");
  bindParam("min-pts", "min_pts");
  bindParam("assoc-dist", "assoc_dist");
  bindParam("static-band", "static_band");

  (el("frame-slider") as HTMLInputElement).addEventListener("change", async (e) => {
    await controller.setFrame(Number((e.target as HTMLInputElement).value));
    await currentWindowReload();
  });
  (el("tau-input") as HTMLInputElement).addEventListener("change", async (e) => {
    await controller.setTau(Number((e.target as HTMLInputElement).value));
    await currentWindowReload();
  });

  for (const mode of ["velocity-hue", "instance", "dynamic-mask"] as ColorMode[]) {
    el(`mode-${mode}`).addEventListener("click", () => {
      controller.setColorMode(mode);
      drawState();
    });
  }

  el("run-btn").addEventListener("click", async () => {
    drawState();
    await controller.runClustering((el("verify-check") as HTMLInputElement).checked);
    drawState();
  });
  el("accept-btn").addEventListener("click", async () => {
    await controller.acceptProposal();
    await currentWindowReload();
    await refreshMetrics();
  });
  el("reject-btn").addEventListener("click", () => {
    controller.rejectProposal();
    drawState();
  });
  el("save-btn").addEventListener("click", async () => {
    await controller.save();
    await refreshSceneList();
  });
  el("split-btn").addEventListener("click", async () => {
    const s = controller.current;
    if (!s.window || s.selection.size === 0) return;
    const first = [...s.selection][0];
    const idx = s.window.point_ids.indexOf(first);
    const fromId = s.window.labels[idx];
    const newId = s.window.labels.reduce((a, b) => Math.max(a, b), 0) + 1;
    await controller.splitSelection(fromId, newId);
    await currentWindowReload();
    await refreshMetrics();
  });
  el("merge-btn").addEventListener("click", async () => {
    const a = Number((el("merge-a") as HTMLInputElement).value);
    const b = Number((el("merge-b") as HTMLInputElement).value);
    await controller.mergeSelectedInto(a, b);
    await currentWindowReload();
    await refreshMetrics();
  });
  el("reassign-btn").addEventListener("click", async () => {
    const target = Number((el("reassign-id") as HTMLInputElement).value);
    await controller.reassignSelection(target);
    await currentWindowReload();
    await refreshMetrics();
  });

  window.addEventListener("keydown", async (e) => {
    if ((e.ctrlKey || e.metaKey) && e.key.toLowerCase() === "z") {
      e.preventDefault();
      await controller.undo();
      await currentWindowReload();
      await refreshMetrics();
    }
  });

  // shift-drag lasso selection over the viewport
  const viewport = el("viewport");
  viewport.addEventListener("pointerdown", (e) => {
    if (!e.shiftKey) return;
    lasso = [{ x: e.offsetX, y: e.offsetY }];
  });
  viewport.addEventListener("pointermove", (e) => {
    if (lasso && e.shiftKey) lasso.push({ x: e.offsetX, y: e.offsetY });
  });
  viewport.addEventListener("pointerup", () => {
    const s = controller.current;
    if (lasso && lasso.length >= 3 && s.window) {
      const hits = selectByLasso(viewer.projectedPoints(), lasso);
      controller.select(hits.map((i) => s.window!.point_ids[i]));
      drawState();
    }
    lasso = null;
  });

  controller.subscribe(() => void 0); // state changes redraw via call sites
}

setupUi();
void refreshSceneList();
