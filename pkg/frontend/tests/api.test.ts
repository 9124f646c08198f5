import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("lists scenes", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse([{ id: "a", frames: 3 }]));
    const api = new ApiClient("", fetchImpl);
    const scenes = await api.listScenes();
    expect(scenes[0].id).toBe("a");
    expect(fetchImpl).toHaveBeenCalledWith("/api/v1/scenes", expect.anything());
  });

  it("attaches the lock token to every call after acquire", async () => {
    const calls: RequestInit[] = [];
    const fetchImpl = vi.fn(async (_url: string, init?: RequestInit) => {
      calls.push(init!);
      if (calls.length === 1) return jsonResponse({ token: "tok-123" });
      return jsonResponse({ saved: true, frames: 2 });
    });
    const api = new ApiClient("", fetchImpl);
    await api.acquireLock("scene");
    expect(api.hasLock).toBe(true);
    await api.save("scene");
    const headers = calls[1].headers as Record<string, string>;
    expect(headers["x-lock-token"]).toBe("tok-123");
  });

  it("raises ApiError with the service detail", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse({ detail: "scene locked" }, 409));
    const api = new ApiClient("", fetchImpl);
    await expect(api.acquireLock("scene")).rejects.toThrowError(/scene locked/);
    await expect(api.acquireLock("scene")).rejects.toBeInstanceOf(ApiError);
  });

  it("polls recluster jobs to completion", async () => {
    let polls = 0;
    const fetchImpl = vi.fn(async (url: string) => {
      if (url.endsWith("/recluster")) return jsonResponse({ job_id: "j1" });
      polls += 1;
      if (polls < 3) return jsonResponse({ status: "running" });
      return jsonResponse({ status: "done", proposal: { instances: 2 } });
    });
    const api = new ApiClient("", fetchImpl);
    const { jobId, result } = await api.recluster("scene", { eps: 1.2 }, 1);
    expect(jobId).toBe("j1");
    expect(result.proposal.instances).toBe(2);
    expect(polls).toBe(3);
  });

  it("propagates recluster job failures", async () => {
    const fetchImpl = vi.fn(async (url: string) => {
      if (url.endsWith("/recluster")) return jsonResponse({ job_id: "j2" });
      return jsonResponse({ status: "error", error: "boom" });
    });
    const api = new ApiClient("", fetchImpl);
    await expect(api.recluster("scene", {}, 1)).rejects.toThrowError(/failed/);
  });
});
