// View state and its transitions. Pure data + reducer-style helpers so
// the interaction rules are unit-testable without a DOM:
//  - slider changes never trigger work by themselves,
//  - a pending proposal never touches working labels until accepted,
//  - color mode switches never mutate labels,
//  - selection is always a subset of loaded point ids.

import type { ProposalSummary, WindowData } from "./api.js";
import type { ColorMode } from "./color.js";

export interface ClusterParams {
  eps: number;
  min_pts: number;
  assoc_dist: number;
  tau: number;
  static_band: number;
}

export const DEFAULT_PARAMS: ClusterParams = {
  eps: 1.2,
  min_pts: 20,
  assoc_dist: 1.0,
  tau: 4,
  static_band: 0.2,
};

export type ProposalPhase =
  | { kind: "none" }
  | { kind: "running" }
  | { kind: "ready"; jobId: string; summary: ProposalSummary }
  | { kind: "accepted"; summary: ProposalSummary };

export interface ViewState {
  scene: string | null;
  t: number;
  tau: number;
  frameCount: number;
  colorMode: ColorMode;
  params: ClusterParams;
  paramsDirty: boolean; // sliders moved since the last run
  selection: Set<number>; // point ids, subset of the loaded window
  window: WindowData | null;
  proposal: ProposalPhase;
  locked: boolean;
}

export function initialState(): ViewState {
  return {
    scene: null,
    t: 0,
    tau: DEFAULT_PARAMS.tau,
    frameCount: 0,
    colorMode: "velocity-hue",
    params: { ...DEFAULT_PARAMS },
    paramsDirty: false,
    selection: new Set(),
    window: null,
    proposal: { kind: "none" },
    locked: false,
  };
}

export function selectScene(state: ViewState, scene: string, frameCount: number): ViewState {
  return {
    ...initialState(),
    scene,
    frameCount,
    colorMode: state.colorMode,
    params: { ...state.params },
  };
}

export function setFrame(state: ViewState, t: number): ViewState {
  const clamped = Math.max(0, Math.min(state.frameCount - 1, Math.round(t)));
  return { ...state, t: clamped, selection: new Set() };
}

export function setTau(state: ViewState, tau: number): ViewState {
  return { ...state, tau: Math.max(1, Math.round(tau)), selection: new Set() };
}

export function setColorMode(state: ViewState, mode: ColorMode): ViewState {
  return { ...state, colorMode: mode }; // labels untouched by construction
}

export function setParam(state: ViewState, key: keyof ClusterParams, value: number): ViewState {
  // Moving a slider only marks the params dirty; clustering runs on an
  // explicit action, never on drag.
  return { ...state, params: { ...state.params, [key]: value }, paramsDirty: true };
}

export function windowLoaded(state: ViewState, data: WindowData): ViewState {
  const loaded = new Set(data.point_ids);
  const selection = new Set([...state.selection].filter((pid) => loaded.has(pid)));
  return { ...state, window: data, selection };
}

export function setSelection(state: ViewState, pointIds: number[]): ViewState {
  if (!state.window) return { ...state, selection: new Set() };
  const loaded = new Set(state.window.point_ids);
  const filtered = pointIds.filter((pid) => loaded.has(pid));
  return { ...state, selection: new Set(filtered) };
}

export function proposalRunning(state: ViewState): ViewState {
  return { ...state, proposal: { kind: "running" }, paramsDirty: false };
}

export function proposalReady(state: ViewState, jobId: string, summary: ProposalSummary): ViewState {
  return { ...state, proposal: { kind: "ready", jobId, summary } };
}

export function proposalAccepted(state: ViewState, summary: ProposalSummary): ViewState {
  return { ...state, proposal: { kind: "accepted", summary } };
}

export function proposalRejected(state: ViewState): ViewState {
  // rejecting is a pure client-side state change: nothing was written
  return { ...state, proposal: { kind: "none" } };
}

/** Optimistic relabeling of the loaded window; returns the rollback. */
export function applyOptimisticLabels(
  state: ViewState,
  pointIds: number[],
  newId: number,
): { state: ViewState; rollback: (s: ViewState) => ViewState } {
  if (!state.window) return { state, rollback: (s) => s };
  const idx = new Map(state.window.point_ids.map((pid, i) => [pid, i]));
  const before = state.window.labels.slice();
  const labels = state.window.labels.slice();
  for (const pid of pointIds) {
    const i = idx.get(pid);
    if (i !== undefined) labels[i] = newId;
  }
  const next = { ...state, window: { ...state.window, labels } };
  const rollback = (s: ViewState): ViewState =>
    s.window ? { ...s, window: { ...s.window, labels: before } } : s;
  return { state: next, rollback };
}
