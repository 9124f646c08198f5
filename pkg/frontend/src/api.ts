// Typed client for the annotation service. Every label state the UI
// shows comes from these calls; the UI never computes labels itself.

export interface SceneInfo {
  id: string;
  frames: number;
  status: "labeled" | "unlabeled";
  has_ground_truth: boolean;
}

export interface WindowData {
  scene: string;
  t: number;
  tau: number;
  frame_range: [number, number];
  count: number;
  total_points: number;
  decimation_stride: number;
  positions: number[][];
  velocities: number[];
  frame_index: number[];
  point_ids: number[];
  labels: number[];
  dynamic: number[];
  hue: { v_min: number; v_max: number; convention: string };
}

export interface ReclusterParams {
  eps?: number;
  min_pts?: number;
  assoc_dist?: number;
  tau?: number;
  static_band?: number;
  verify?: boolean;
}

export interface InstanceSummary {
  id: number;
  points: number;
  frames: number;
}

export interface ProposalSummary {
  instances: number;
  labeled_points: number;
  per_instance: InstanceSummary[];
}

export interface ReclusterResult {
  status: string;
  proposal: ProposalSummary;
  params: Record<string, number>;
  metrics_vs_current: Record<string, unknown> | null;
  verify_disagreements?: unknown[];
}

export interface EditRequest {
  kind: "merge" | "split" | "reassign" | "delete";
  id?: number;
  id_a?: number;
  id_b?: number;
  new_id?: number;
  point_ids?: number[];
  edit_token?: string;
}

export interface EditResponse {
  applied: string;
  changed_points: number;
  summary: ProposalSummary;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  private lockToken: string | null = null;

  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  get hasLock(): boolean {
    return this.lockToken !== null;
  }

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const headers: Record<string, string> = {
      "content-type": "application/json",
      ...((init.headers as Record<string, string>) ?? {}),
    };
    if (this.lockToken) headers["x-lock-token"] = this.lockToken;
    const resp = await this.fetchImpl(this.base + path, { ...init, headers });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const body = await resp.json();
        detail = (body as { detail?: string }).detail ?? detail;
      } catch {
        // body was not JSON; keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  listScenes(): Promise<SceneInfo[]> {
    return this.request("/api/v1/scenes");
  }

  getWindow(scene: string, t: number, tau: number): Promise<WindowData> {
    return this.request(`/api/v1/scenes/${scene}/window?t=${t}&tau=${tau}`);
  }

  async acquireLock(scene: string, client = "annotator-ui"): Promise<void> {
    const out = await this.request<{ token: string }>(`/api/v1/scenes/${scene}/lock`, {
      method: "POST",
      body: JSON.stringify({ client }),
    });
    this.lockToken = out.token;
  }

  async releaseLock(scene: string): Promise<void> {
    await this.request(`/api/v1/scenes/${scene}/lock`, { method: "DELETE" });
    this.lockToken = null;
  }

  async recluster(
    scene: string,
    params: ReclusterParams,
    pollMs = 100,
    maxWaitMs = 120000,
  ): Promise<{ jobId: string; result: ReclusterResult }> {
    const { job_id } = await this.request<{ job_id: string }>(
      `/api/v1/scenes/${scene}/recluster`,
      { method: "POST", body: JSON.stringify(params) },
    );
    const deadline = Date.now() + maxWaitMs;
    for (;;) {
      const status = await this.request<ReclusterResult>(
        `/api/v1/scenes/${scene}/jobs/${job_id}`,
      );
      if (status.status === "done") return { jobId: job_id, result: status };
      if (status.status === "error")
        throw new ApiError(500, `re-clustering failed: ${JSON.stringify(status)}`);
      if (Date.now() > deadline) throw new ApiError(504, "re-clustering timed out");
      await new Promise((r) => setTimeout(r, pollMs));
    }
  }

  accept(scene: string, jobId: string): Promise<{ accepted: boolean; summary: ProposalSummary }> {
    return this.request(`/api/v1/scenes/${scene}/accept`, {
      method: "POST",
      body: JSON.stringify({ job_id: jobId }),
    });
  }

  edit(scene: string, edit: EditRequest): Promise<EditResponse> {
    return this.request(`/api/v1/scenes/${scene}/edits`, {
      method: "POST",
      body: JSON.stringify(edit),
    });
  }

  undo(scene: string): Promise<{ undone_points: number; summary: ProposalSummary }> {
    return this.request(`/api/v1/scenes/${scene}/undo`, { method: "POST" });
  }

  save(scene: string): Promise<{ saved: boolean; frames: number }> {
    return this.request(`/api/v1/scenes/${scene}/save`, { method: "POST" });
  }

  metrics(scene: string): Promise<Record<string, number>> {
    return this.request(`/api/v1/scenes/${scene}/metrics`);
  }
}
