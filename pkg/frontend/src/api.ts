/**
 * Thin typed client for the review service.
 *
 * The console holds no authoritative state: every view is rebuilt from
 * these endpoints. All mutating requests carry a client-generated
 * feedback_id so retries and double-clicks collapse into one effective
 * refinement server-side. No request ever includes the gold answer.
 */

import type {
  PendingItem,
  RefineAck,
  RefineRequest,
  RunReport,
  RunSummary,
  SessionDetail,
  SessionSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly reason: string,
  ) {
    super(`HTTP ${status}: ${reason}`);
  }
}

export function freshFeedbackId(): string {
  if (typeof crypto !== "undefined" && "randomUUID" in crypto) {
    return crypto.randomUUID();
  }
  return `fb-${Date.now()}-${Math.floor(Math.random() * 1e9)}`;
}

async function parseError(response: Response): Promise<ApiError> {
  let reason = response.statusText;
  try {
    const body = await response.json();
    if (body && typeof body.error === "string") reason = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(response.status, reason);
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  listRuns(): Promise<RunSummary[]> {
    return this.get("/api/runs");
  }

  getRun(runId: string): Promise<RunReport> {
    return this.get(`/api/runs/${encodeURIComponent(runId)}`);
  }

  listSessions(runId: string, verdict?: string): Promise<SessionSummary[]> {
    const query = verdict ? `?verdict=${encodeURIComponent(verdict)}` : "";
    return this.get(`/api/runs/${encodeURIComponent(runId)}/sessions${query}`);
  }

  getSession(sessionId: string): Promise<SessionDetail> {
    return this.get(`/api/sessions/${encodeURIComponent(sessionId)}`);
  }

  pendingFeedback(): Promise<PendingItem[]> {
    return this.get("/api/feedback/pending");
  }

  health(): Promise<{ status: string; interpreter_available: boolean }> {
    return this.get("/api/health");
  }

  async refine(sessionId: string, request: RefineRequest): Promise<RefineAck> {
    const response = await fetch(
      `${this.baseUrl}/api/sessions/${encodeURIComponent(sessionId)}/refine`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(request),
      },
    );
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as RefineAck;
  }
}
