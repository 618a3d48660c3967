import type { SessionInfo, StudyReport, SubmitAck } from "./types";

export class ApiError extends Error {
  constructor(public status: number, public detail: unknown) {
    super(`API error ${status}: ${JSON.stringify(detail)}`);
  }
}

type FetchLike = typeof fetch;

/** Typed client for the study service HTTP API. */
export class StudyApi {
  constructor(
    private base: string,
    private fetchFn: FetchLike = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.base}${path}`, init);
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, body.detail ?? body);
    }
    return body as T;
  }

  createSession(seed?: number): Promise<SessionInfo> {
    return this.request<SessionInfo>("/api/session", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(seed === undefined ? {} : { seed }),
    });
  }

  markTeachingViewed(sessionId: string, index: number): Promise<{ teaching_complete: boolean }> {
    return this.request(`/api/session/${sessionId}/teaching/${index}`, { method: "POST" });
  }

  clipUrl(clipId: string, sessionId: string): string {
    return `${this.base}/api/clip/${clipId}?session=${encodeURIComponent(sessionId)}`;
  }

  submitTranscription(
    sessionId: string,
    item: number,
    message: string,
    confidence: number,
  ): Promise<SubmitAck> {
    return this.request<SubmitAck>("/api/transcription", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ session_id: sessionId, item, message, confidence }),
    });
  }

  report(): Promise<StudyReport> {
    return this.request<StudyReport>("/api/report");
  }
}
