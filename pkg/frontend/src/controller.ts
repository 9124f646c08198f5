// Glue between view state and the service client. main.ts binds DOM
// events to these methods; the end-to-end test drives them directly,
// exactly as the buttons would.

import { ApiClient } from "./api.js";
import type { EditRequest, SceneInfo, WindowData } from "./api.js";
import * as state from "./state.js";
import type { ViewState } from "./state.js";

export type Listener = (s: ViewState) => void;

export class AnnotatorController {
  private state: ViewState = state.initialState();
  private listeners: Listener[] = [];
  private editCounter = 0;
  // idempotency tokens must be unique across controller instances
  private readonly editPrefix = `ui-${Math.random().toString(36).slice(2, 10)}`;

  constructor(readonly api: ApiClient) {}

  get current(): ViewState {
    return this.state;
  }

  subscribe(fn: Listener): void {
    this.listeners.push(fn);
  }

  private commit(next: ViewState): void {
    this.state = next;
    for (const fn of this.listeners) fn(next);
  }

  async loadScenes(): Promise<SceneInfo[]> {
    return this.api.listScenes();
  }

  async openScene(info: SceneInfo): Promise<void> {
    this.commit(state.selectScene(this.state, info.id, info.frames));
    await this.api.acquireLock(info.id);
    this.commit({ ...this.state, locked: true });
    await this.refreshWindow();
  }

  async refreshWindow(): Promise<WindowData> {
    const s = this.state;
    if (!s.scene) throw new Error("no scene open");
    const data = await this.api.getWindow(s.scene, s.t, s.tau);
    this.commit(state.windowLoaded(this.state, data));
    return data;
  }

  async setFrame(t: number): Promise<void> {
    this.commit(state.setFrame(this.state, t));
    await this.refreshWindow();
  }

  async setTau(tau: number): Promise<void> {
    this.commit(state.setTau(this.state, tau));
    await this.refreshWindow();
  }

  setColorMode(mode: Parameters<typeof state.setColorMode>[1]): void {
    this.commit(state.setColorMode(this.state, mode));
  }

  setParam(key: Parameters<typeof state.setParam>[1], value: number): void {
    // no network call here: clustering runs only from runClustering()
    this.commit(state.setParam(this.state, key, value));
  }

  select(pointIds: number[]): void {
    this.commit(state.setSelection(this.state, pointIds));
  }

  async runClustering(verify = false): Promise<void> {
    const s = this.state;
    if (!s.scene) throw new Error("no scene open");
    this.commit(state.proposalRunning(this.state));
    const { jobId, result } = await this.api.recluster(s.scene, {
      ...s.params,
      verify,
    });
    this.commit(state.proposalReady(this.state, jobId, result.proposal));
  }

  async acceptProposal(): Promise<void> {
    const s = this.state;
    if (!s.scene || s.proposal.kind !== "ready") throw new Error("no proposal to accept");
    const out = await this.api.accept(s.scene, s.proposal.jobId);
    this.commit(state.proposalAccepted(this.state, out.summary));
    await this.refreshWindow();
  }

  rejectProposal(): void {
    this.commit(state.proposalRejected(this.state));
  }

  /** Apply a label edit optimistically, reconcile with the service; on
   * rejection the optimistic change rolls back and the error rethrows. */
  private async editWithRollback(edit: EditRequest, touched: number[], newId: number): Promise<void> {
    const s = this.state;
    if (!s.scene) throw new Error("no scene open");
    const { state: optimistic, rollback } = state.applyOptimisticLabels(s, touched, newId);
    this.commit(optimistic);
    try {
      await this.api.edit(s.scene, { ...edit, edit_token: `${this.editPrefix}-${++this.editCounter}` });
    } catch (err) {
      this.commit(rollback(this.state));
      throw err;
    }
    await this.refreshWindow(); // the service answer wins over the echo
  }

  async mergeSelectedInto(targetId: number, sourceId: number): Promise<void> {
    const touched = this.pointsOfInstance(sourceId);
    await this.editWithRollback({ kind: "merge", id_a: targetId, id_b: sourceId }, touched, targetId);
  }

  async splitSelection(fromId: number, newId: number): Promise<void> {
    const pointIds = [...this.state.selection];
    if (pointIds.length === 0) throw new Error("split needs a selection");
    await this.editWithRollback(
      { kind: "split", id: fromId, point_ids: pointIds, new_id: newId },
      pointIds,
      newId,
    );
  }

  async reassignSelection(targetId: number): Promise<void> {
    const pointIds = [...this.state.selection];
    if (pointIds.length === 0) throw new Error("reassign needs a selection");
    await this.editWithRollback({ kind: "reassign", id: targetId, point_ids: pointIds }, pointIds, targetId);
  }

  async undo(): Promise<void> {
    const s = this.state;
    if (!s.scene) throw new Error("no scene open");
    await this.api.undo(s.scene);
    await this.refreshWindow();
  }

  async save(): Promise<void> {
    const s = this.state;
    if (!s.scene) throw new Error("no scene open");
    await this.api.save(s.scene);
  }

  async metrics(): Promise<Record<string, number> | null> {
    const s = this.state;
    if (!s.scene) return null;
    try {
      return await this.api.metrics(s.scene);
    } catch {
      return null; // scenes without ground truth have no metrics
    }
  }

  private pointsOfInstance(id: number): number[] {
    const w = this.state.window;
    if (!w) return [];
    return w.point_ids.filter((_, i) => w.labels[i] === id);
  }
}
