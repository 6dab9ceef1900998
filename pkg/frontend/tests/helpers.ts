import { Client, ModelInfo, SessionBody } from "../src/api.js";

export const probitModel: ModelInfo = {
  id: "probit",
  outcome_kind: "finite",
  n_outcomes: 2,
  theta_dim: 1,
  design_dim: 1,
  params_schema: {},
  defaults: {},
};

export const lgModel: ModelInfo = {
  id: "lg",
  outcome_kind: "continuous",
  n_outcomes: null,
  theta_dim: 1,
  design_dim: 1,
  params_schema: {},
  defaults: {},
};

export function sessionBody(overrides: Partial<SessionBody> = {}): SessionBody {
  return {
    session_id: "abcdef1234567890",
    status: "awaiting_outcome",
    step: 0,
    T: 4,
    model: "probit",
    strategy: "greedy-grid",
    proposed_design: [0.0],
    eig_estimate: { value: 0.35, std_error: 0.01 },
    belief: { mean: [0.0], std: [2.0] },
    ...overrides,
  };
}

/** A scripted in-memory server implementing just enough of the protocol. */
export class FakeServer {
  steps: SessionBody[] = [];
  posted: number[] = [];
  failNext: { status: number; code: string; message: string } | null = null;

  constructor(private readonly horizon = 4) {
    for (let t = 1; t <= horizon; t++) {
      this.steps.push(
        sessionBody({
          step: t,
          status: t === horizon ? "finished" : "awaiting_outcome",
          proposed_design: t === horizon ? null : [t * 0.5],
          eig_estimate: t === horizon ? null : { value: 0.3 - 0.05 * t, std_error: 0.01 },
          belief: { mean: [0.1 * t], std: [2.0 / (t + 1)] },
        }),
      );
    }
  }

  client(): Client {
    const fetchFn = async (url: string, init?: RequestInit): Promise<Response> => {
      const respond = (status: number, body: unknown) =>
        new Response(JSON.stringify(body), { status, headers: { "content-type": "application/json" } });
      if (this.failNext) {
        const fail = this.failNext;
        this.failNext = null;
        return respond(fail.status, { code: fail.code, message: fail.message });
      }
      if (url.endsWith("/v1/models")) {
        return respond(200, { models: [probitModel, lgModel], strategies: ["greedy-grid", "greedy-sga", "policy"] });
      }
      if (url.endsWith("/v1/sessions") && init?.method === "POST") {
        return respond(201, sessionBody());
      }
      if (url.endsWith("/outcome")) {
        const body = JSON.parse(String(init?.body ?? "{}"));
        this.posted.push(body.outcome);
        const step = this.steps[this.posted.length - 1];
        return step ? respond(200, step) : respond(409, { code: "wrong_status", message: "finished" });
      }
      return respond(404, { code: "unknown", message: "not found" });
    };
    return new Client("http://fake", fetchFn);
  }
}
