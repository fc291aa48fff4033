/**
 * Typed client for the screening service HTTP API. Every console action
 * maps to exactly one of these calls; the console never computes scores
 * locally.
 */

export interface SegmentSummary {
  onset_s: number;
  offset_s: number;
  duration_s: number;
}

export interface UploadResult {
  segments: SegmentSummary[];
  advisory: "retry" | null;
  state: string;
}

export interface ScoreResult {
  score: number;
  threshold: number;
  decision: "refer" | "no-refer";
  task: string;
  model_id: string;
}

export interface Demographics {
  age: number;
  gender: "male" | "female";
  bmi: number;
  symptom: boolean;
}

export type FieldErrors = Partial<Record<keyof Demographics, string>>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: unknown,
  ) {
    super(`service replied ${status}`);
  }
}

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export class ScreeningApi {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    const body = await res.json();
    if (!res.ok) {
      throw new ApiError(res.status, (body as { detail?: unknown }).detail);
    }
    return body;
  }

  async createSession(): Promise<string> {
    const body = (await this.request("/sessions", { method: "POST" })) as {
      session_id: string;
    };
    return body.session_id;
  }

  async uploadRecording(
    sessionId: string,
    wavBytes: ArrayBuffer,
  ): Promise<UploadResult> {
    return (await this.request(`/sessions/${sessionId}/recordings`, {
      method: "POST",
      headers: { "Content-Type": "audio/wav" },
      body: wavBytes,
    })) as UploadResult;
  }

  async putDemographics(
    sessionId: string,
    demographics: Demographics,
  ): Promise<{ state: string }> {
    return (await this.request(`/sessions/${sessionId}/demographics`, {
      method: "PUT",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(demographics),
    })) as { state: string };
  }

  async score(
    sessionId: string,
    task: string,
    threshold?: number,
  ): Promise<ScoreResult> {
    const params = new URLSearchParams({ task });
    if (threshold !== undefined) params.set("threshold", String(threshold));
    return (await this.request(
      `/sessions/${sessionId}/score?${params.toString()}`,
      { method: "POST" },
    )) as ScoreResult;
  }

  async close(sessionId: string): Promise<{ state: string }> {
    return (await this.request(`/sessions/${sessionId}/close`, {
      method: "POST",
    })) as { state: string };
  }
}
