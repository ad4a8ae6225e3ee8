import type { AnswerBody, ApiError, QueryBody, Recommendation, BeliefSummary, SessionConfig, Snapshot } from "./types.js";

// Human-readable text for every error code the server can return; unknown
// codes fall back to the raw message so nothing fails silently.
export const ERROR_TEXT: Record<string, string> = {
  not_found: "This session no longer exists. Start a new one.",
  conflict: "That request conflicts with the session state.",
  no_pending_query: "There is no open question right now.",
  invalid_response: "That answer does not match the current question.",
  invalid_config: "The session configuration was rejected.",
  config: "The server is not configured correctly.",
};

export function errorMessage(err: ApiError): string {
  return ERROR_TEXT[err.error] ?? err.message ?? "Unexpected server error.";
}

async function request<T>(fetchFn: typeof fetch, url: string, init?: RequestInit): Promise<T> {
  let res: Response;
  try {
    res = await fetchFn(url, init);
  } catch (e) {
    throw { error: "network", message: "Cannot reach the service.", status: 0 } satisfies ApiError;
  }
  let body: unknown = null;
  try {
    body = await res.json();
  } catch {
    body = null;
  }
  if (!res.ok) {
    const b = (body ?? {}) as { error?: string; message?: string };
    throw {
      error: b.error ?? `http_${res.status}`,
      message: b.message ?? res.statusText,
      status: res.status,
    } satisfies ApiError;
  }
  return body as T;
}

export interface CreateResult {
  session_id: string;
  recommendations: Recommendation[];
  belief: BeliefSummary;
}

export interface SubmitResult {
  belief: BeliefSummary;
  recommendations: Recommendation[];
  history_length: number;
  mean_shift: number;
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  createSession(config: SessionConfig): Promise<CreateResult> {
    return request<CreateResult>(this.fetchFn, `${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(config),
    });
  }

  nextQuery(sessionId: string): Promise<{ query: QueryBody; k: number }> {
    return request(this.fetchFn, `${this.base}/sessions/${sessionId}/query`);
  }

  submitResponse(sessionId: string, answer: AnswerBody): Promise<SubmitResult> {
    return request<SubmitResult>(this.fetchFn, `${this.base}/sessions/${sessionId}/response`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(answer),
    });
  }

  getState(sessionId: string): Promise<Snapshot> {
    return request<Snapshot>(this.fetchFn, `${this.base}/sessions/${sessionId}`);
  }
}
