// Thin typed client over the service endpoints (docs/api.md). No retries,
// no caching: the console shows exactly what the engine said.

import type {
  AnalyticsSummary,
  ChatResponse,
  ConfigDocument,
  ControlLevel,
} from "./types.js";

export class ApiClientError extends Error {
  constructor(
    readonly status: number,
    readonly label: string,
    detail: string,
  ) {
    super(detail);
  }
}

async function parse<T>(response: Response): Promise<T> {
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiClientError(
      response.status,
      (body as { error?: string }).error ?? "error",
      (body as { detail?: string }).detail ?? response.statusText,
    );
  }
  return body as T;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private token: string = "",
  ) {}

  setToken(token: string): void {
    this.token = token;
  }

  private headers(withAuth = false): Record<string, string> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (withAuth && this.token) headers.authorization = `Bearer ${this.token}`;
    return headers;
  }

  chat(message: string, sessionId?: string): Promise<ChatResponse> {
    return fetch(`${this.baseUrl}/chat`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(
        sessionId ? { message, session_id: sessionId } : { message },
      ),
    }).then((r) => parse<ChatResponse>(r));
  }

  getConfig(): Promise<{ config: ConfigDocument } & ControlLevel> {
    return fetch(`${this.baseUrl}/config`).then((r) =>
      parse<{ config: ConfigDocument } & ControlLevel>(r),
    );
  }

  putConfig(config: ConfigDocument): Promise<ControlLevel> {
    return fetch(`${this.baseUrl}/config`, {
      method: "PUT",
      headers: this.headers(true),
      body: JSON.stringify(config),
    }).then((r) => parse<ControlLevel>(r));
  }

  postRating(
    sessionId: string,
    turnId: number,
    verdict: "good" | "bad",
  ): Promise<{ recorded: boolean }> {
    return fetch(`${this.baseUrl}/ratings`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({
        session_id: sessionId,
        turn_id: turnId,
        rater: "client_editor",
        verdict,
      }),
    }).then((r) => parse<{ recorded: boolean }>(r));
  }

  getAnalytics(): Promise<AnalyticsSummary> {
    return fetch(`${this.baseUrl}/analytics`).then((r) =>
      parse<AnalyticsSummary>(r),
    );
  }

  annotateDocument(
    docId: string,
    key: string,
    value: string,
  ): Promise<{ id: string; revision: number }> {
    return fetch(`${this.baseUrl}/documents/${encodeURIComponent(docId)}/annotations`, {
      method: "PATCH",
      headers: this.headers(true),
      body: JSON.stringify({ key, value }),
    }).then((r) => parse<{ id: string; revision: number }>(r));
  }
}
