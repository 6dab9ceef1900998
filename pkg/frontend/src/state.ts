/** Session state machine, DOM-free so the invariants are unit-testable.
 *
 * One in-flight request at a time, no optimistic updates: every row in the
 * history comes straight from a server response. Submission is possible
 * exactly when the server last said "awaiting_outcome" and nothing is in
 * flight.
 */

import { ApiError, Client, EigEstimate, ModelInfo, SessionBody } from "./api.js";

export type Phase =
  | "configuring"
  | "creating"
  | "awaiting_outcome"
  | "submitting"
  | "finished"
  | "error";

export interface HistoryRow {
  t: number;
  xi: number[];
  y: number;
  eig_estimate: number;
  eig_std_error: number;
  belief_mean: number[];
  belief_std: number[];
}

export interface ViewState {
  phase: Phase;
  model: ModelInfo | null;
  session: SessionBody | null;
  history: HistoryRow[];
  error: string | null;
  inputError: string | null;
}

export class SessionController {
  state: ViewState = {
    phase: "configuring",
    model: null,
    session: null,
    history: [],
    error: null,
    inputError: null,
  };

  private listeners: Array<(s: ViewState) => void> = [];

  constructor(private readonly client: Client) {}

  subscribe(listener: (s: ViewState) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  get canSubmit(): boolean {
    return this.state.phase === "awaiting_outcome";
  }

  /** Sum of the per-step estimates, for the finished card only; the
   * addends are server numbers. */
  get cumulativeEig(): number {
    return this.state.history.reduce((acc, row) => acc + row.eig_estimate, 0);
  }

  async start(model: ModelInfo, request: Parameters<Client["createSession"]>[0]): Promise<void> {
    if (this.state.phase === "creating" || this.state.phase === "submitting") return;
    this.state = { ...this.state, phase: "creating", model, error: null, inputError: null };
    this.emit();
    try {
      const session = await this.client.createSession(request);
      this.state = {
        ...this.state,
        phase: session.status === "finished" ? "finished" : "awaiting_outcome",
        session,
        history: [],
      };
    } catch (err) {
      this.state = {
        ...this.state,
        phase: "error",
        session: null,
        error: err instanceof Error ? err.message : String(err),
      };
    }
    this.emit();
  }

  async submit(outcome: number): Promise<void> {
    if (!this.canSubmit || !this.state.session) return; // double-click guard
    const before = this.state.session;
    this.state = { ...this.state, phase: "submitting", inputError: null };
    this.emit();
    try {
      const after = await this.client.postOutcome(before.session_id, outcome);
      const row: HistoryRow = {
        t: after.step,
        xi: before.proposed_design ?? [],
        y: outcome,
        eig_estimate: before.eig_estimate?.value ?? 0,
        eig_std_error: before.eig_estimate?.std_error ?? 0,
        belief_mean: after.belief.mean,
        belief_std: after.belief.std,
      };
      this.state = {
        ...this.state,
        phase: after.status === "finished" ? "finished" : "awaiting_outcome",
        session: after,
        history: [...this.state.history, row],
      };
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        // bad outcome: stay on the same step, show the message inline
        this.state = { ...this.state, phase: "awaiting_outcome", inputError: err.message };
      } else if (err instanceof ApiError && err.status === 409) {
        await this.refresh();
        return;
      } else {
        this.state = {
          ...this.state,
          phase: "error",
          error: err instanceof Error ? err.message : String(err),
        };
      }
    }
    this.emit();
  }

  /** Re-sync with the server (conflict recovery); the server is the source
   * of truth for both status and history. */
  async refresh(): Promise<void> {
    if (!this.state.session) return;
    try {
      const session = await this.client.getSession(this.state.session.session_id);
      const rows = (session.transcript ?? []).map((r) => ({
        t: r.t,
        xi: r.xi,
        y: r.y,
        eig_estimate: r.eig_estimate,
        eig_std_error: r.eig_std_error,
        belief_mean: r.belief_mean,
        belief_std: r.belief_std,
      }));
      this.state = {
        ...this.state,
        phase: session.status === "finished" ? "finished" : "awaiting_outcome",
        session,
        history: rows,
      };
    } catch (err) {
      this.state = {
        ...this.state,
        phase: "error",
        error: err instanceof Error ? err.message : String(err),
      };
    }
    this.emit();
  }
}
