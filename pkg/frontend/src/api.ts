/**
 * Thin typed client for the annotation service.
 *
 * Errors keep the HTTP status and the server's detail string so the UI can
 * render rejections inline (409 means the task went stale and should be
 * refreshed; 404 from /tasks/next means the queue is empty).
 */

import type {
  AnnotationBody,
  AnnotationTask,
  BlindJudgmentTask,
  JudgmentVerdict,
  ProgressCounts,
  Winner,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const text = await response.text();
    if (!response.ok) {
      let detail = text;
      try {
        detail = (JSON.parse(text) as { detail?: string }).detail ?? text;
      } catch {
        // non-JSON error body; keep raw text
      }
      throw new ApiError(response.status, detail);
    }
    return JSON.parse(text) as T;
  }

  nextAnnotationTask(): Promise<AnnotationTask> {
    return this.request("/tasks/next?kind=annotation");
  }

  nextJudgmentTask(): Promise<BlindJudgmentTask> {
    return this.request("/tasks/next?kind=judgment");
  }

  getTask(taskId: string): Promise<AnnotationTask | BlindJudgmentTask> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}`);
  }

  submitAnnotation(taskId: string, body: AnnotationBody): Promise<{ stored: AnnotationBody }> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/annotation`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  submitJudgment(taskId: string, winner: Winner): Promise<{ verdict: JudgmentVerdict }> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/judgment`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ winner }),
    });
  }

  skipTask(taskId: string): Promise<{ status: string }> {
    return this.request(`/tasks/${encodeURIComponent(taskId)}/skip`, { method: "POST" });
  }

  progress(): Promise<ProgressCounts> {
    return this.request("/progress");
  }
}
