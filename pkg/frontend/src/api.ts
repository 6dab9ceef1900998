/** Typed client for the session service. The console renders only what
 * these endpoints return; it never derives statistics of its own. */

export interface EigEstimate {
  value: number;
  std_error: number;
}

export interface BeliefSummary {
  mean: number[];
  std: number[];
}

export interface SessionBody {
  session_id: string;
  status: "awaiting_outcome" | "finished";
  step: number;
  T: number;
  model: string;
  strategy: string;
  proposed_design: number[] | null;
  eig_estimate: EigEstimate | null;
  belief: BeliefSummary;
  transcript?: TranscriptRow[];
}

export interface TranscriptRow {
  t: number;
  xi: number[];
  y: number;
  eig_estimate: number;
  eig_std_error: number;
  belief_mean: number[];
  belief_std: number[];
  wall_ms: number;
}

export interface ModelInfo {
  id: string;
  outcome_kind: "continuous" | "finite";
  n_outcomes: number | null;
  theta_dim: number;
  design_dim: number;
  params_schema: Record<string, string>;
  defaults: Record<string, unknown>;
}

export interface ModelCatalog {
  models: ModelInfo[];
  strategies: string[];
}

export interface CreateSessionRequest {
  model: string;
  params?: Record<string, unknown>;
  strategy: string;
  T: number;
  seed: number;
  checkpoint?: string;
}

/** Server-reported failure; message comes through verbatim for display. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    const body = await response.json().catch(() => null);
    if (!response.ok) {
      const code = body?.code ?? "http_error";
      const message = body?.message ?? body?.detail?.[0]?.msg ?? `HTTP ${response.status}`;
      throw new ApiError(response.status, code, String(message));
    }
    return body as T;
  }

  listModels(): Promise<ModelCatalog> {
    return this.request<ModelCatalog>("/v1/models");
  }

  createSession(req: CreateSessionRequest): Promise<SessionBody> {
    return this.request<SessionBody>("/v1/sessions", {
      method: "POST",
      body: JSON.stringify(req),
    });
  }

  postOutcome(sessionId: string, outcome: number): Promise<SessionBody> {
    return this.request<SessionBody>(`/v1/sessions/${sessionId}/outcome`, {
      method: "POST",
      body: JSON.stringify({ outcome }),
    });
  }

  getSession(sessionId: string): Promise<SessionBody> {
    return this.request<SessionBody>(`/v1/sessions/${sessionId}`);
  }
}
