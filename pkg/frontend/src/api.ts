/** Typed client for the edit service's three endpoints. */

export interface EditRequest {
  source: string;
  mask: string;
  reference: string;
  scale: number;
  steps: number;
  seed: number;
}

export interface EditResponse {
  result: string;
  timing_ms: number;
  model_id: string;
}

export interface ServiceConfig {
  max_side: number;
  default_scale: number;
  default_steps: number;
  min_steps: number;
  max_steps: number;
}

export interface HealthStatus {
  status: string;
  model?: string;
}

export class ApiError extends Error {
  readonly status: number;
  readonly field?: string;

  constructor(status: number, message: string, field?: string) {
    super(message);
    this.status = status;
    this.field = field;
  }
}

type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private baseUrl: string;
  private fetchFn: FetchFn;

  constructor(baseUrl = "", fetchFn: FetchFn = (...args) => globalThis.fetch(...args)) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    let body: unknown = null;
    try {
      body = await response.json();
    } catch {
      // non-JSON body falls through to the status check
    }
    if (!response.ok) {
      const err = (body ?? {}) as { error?: string; field?: string };
      throw new ApiError(response.status, err.error ?? `request failed (${response.status})`, err.field);
    }
    return body as T;
  }

  getConfig(): Promise<ServiceConfig> {
    return this.request<ServiceConfig>("/api/config");
  }

  getHealth(): Promise<HealthStatus> {
    return this.request<HealthStatus>("/api/health");
  }

  postEdit(req: EditRequest): Promise<EditResponse> {
    return this.request<EditResponse>("/api/edit", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }
}
