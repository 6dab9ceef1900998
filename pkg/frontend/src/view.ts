/** DOM rendering for the one-screen console.
 *
 * The submit control is enabled exactly when the controller says outcomes
 * are accepted; everything shown is a server number formatted for reading.
 */

import { ModelInfo } from "./api.js";
import { beliefBandSvg, eigBarsSvg } from "./charts.js";
import { SessionController, ViewState } from "./state.js";

function fmt(x: number): string {
  return Number.isInteger(x) ? String(x) : x.toFixed(4);
}

function vec(xs: number[]): string {
  return xs.map(fmt).join(", ");
}

export function renderSession(root: HTMLElement, controller: SessionController): void {
  const state = controller.state;
  const model = state.model;
  root.innerHTML = "";
  if (state.phase === "configuring") return;

  if (state.error) {
    const banner = el("div", "banner error");
    banner.textContent = state.error;
    const retry = el("button", "retry");
    retry.textContent = "Dismiss";
    retry.addEventListener("click", () => {
      controller.state = { ...controller.state, phase: "configuring", error: null };
      renderSession(root, controller);
    });
    banner.appendChild(retry);
    root.appendChild(banner);
    return;
  }

  const session = state.session;
  if (!session || !model) return;

  const header = el("div", "session-header");
  header.textContent =
    `session ${session.session_id.slice(0, 8)} | model ${session.model} | ` +
    `strategy ${session.strategy} | step ${session.step} of ${session.T}`;
  root.appendChild(header);

  if (session.status === "awaiting_outcome" && session.proposed_design) {
    const card = el("div", "design-card");
    const title = el("div", "design-title");
    title.textContent = "Run this measurement:";
    const value = el("div", "design-value");
    value.id = "proposed-design";
    value.textContent = vec(session.proposed_design);
    card.append(title, value);
    if (session.eig_estimate) {
      const eig = el("div", "design-eig");
      eig.textContent =
        `expected gain ${fmt(session.eig_estimate.value)} ` +
        `± ${fmt(session.eig_estimate.std_error)} nats`;
      card.appendChild(eig);
    }
    card.appendChild(outcomeControls(model, controller));
    if (state.inputError) {
      const note = el("div", "input-error");
      note.id = "input-error";
      note.textContent = state.inputError;
      card.appendChild(note);
    }
    root.appendChild(card);
  }

  if (session.status === "finished") {
    const card = el("div", "finished-card");
    const title = el("div", "finished-title");
    title.textContent = `Finished after ${session.T} steps`;
    const total = el("div", "finished-total");
    total.id = "cumulative-eig";
    total.textContent = `cumulative EIG estimate: ${fmt(controller.cumulativeEig)} nats`;
    const download = el("a", "download") as HTMLAnchorElement;
    download.id = "download-transcript";
    download.textContent = "Download transcript (JSON)";
    download.download = `session_${session.session_id}.json`;
    download.href =
      "data:application/json;charset=utf-8," +
      encodeURIComponent(JSON.stringify(state.history, null, 2));
    card.append(title, total, download);
    root.appendChild(card);
  }

  root.appendChild(historyTable(state));

  const charts = el("div", "charts");
  const beliefTitle = el("div", "chart-title");
  beliefTitle.textContent = "belief mean ± std (first dimension)";
  const belief = el("div", "belief-chart");
  belief.innerHTML = beliefBandSvg(
    state.history.map((r) => r.belief_mean[0] ?? 0),
    state.history.map((r) => r.belief_std[0] ?? 0),
  );
  const eigTitle = el("div", "chart-title");
  eigTitle.textContent = "incremental EIG estimate per step";
  const eig = el("div", "eig-chart");
  eig.innerHTML = eigBarsSvg(state.history.map((r) => r.eig_estimate));
  charts.append(beliefTitle, belief, eigTitle, eig);
  root.appendChild(charts);
}

function outcomeControls(model: ModelInfo, controller: SessionController): HTMLElement {
  const wrap = el("div", "outcome-controls");
  const disabled = !controller.canSubmit;
  if (model.outcome_kind === "finite") {
    // one button per outcome; binary sets read as no/yes
    const labels = model.n_outcomes === 2 ? ["No (0)", "Yes (1)"] : [];
    for (let k = 0; k < (model.n_outcomes ?? 0); k++) {
      const button = el("button", "outcome-button") as HTMLButtonElement;
      button.dataset.outcome = String(k);
      button.textContent = labels[k] ?? `outcome ${k}`;
      button.disabled = disabled;
      button.addEventListener("click", () => void controller.submit(k));
      wrap.appendChild(button);
    }
  } else {
    const input = el("input", "outcome-input") as HTMLInputElement;
    input.type = "number";
    input.step = "any";
    input.id = "outcome-input";
    input.placeholder = "observed outcome";
    input.disabled = disabled;
    const submit = el("button", "outcome-submit") as HTMLButtonElement;
    submit.id = "outcome-submit";
    submit.textContent = "Submit outcome";
    submit.disabled = disabled;
    submit.addEventListener("click", () => {
      const value = Number(input.value);
      if (input.value.trim() === "" || Number.isNaN(value)) return;
      void controller.submit(value);
    });
    wrap.append(input, submit);
  }
  return wrap;
}

function historyTable(state: ViewState): HTMLElement {
  const table = el("table", "history") as HTMLTableElement;
  table.id = "history-table";
  const head = table.createTHead().insertRow();
  for (const label of ["t", "design", "outcome", "EIG est.", "std err", "belief mean", "belief std"]) {
    const cell = document.createElement("th");
    cell.textContent = label;
    head.appendChild(cell);
  }
  const body = table.createTBody();
  for (const row of state.history) {
    const tr = body.insertRow();
    tr.insertCell().textContent = String(row.t);
    tr.insertCell().textContent = vec(row.xi);
    tr.insertCell().textContent = fmt(row.y);
    tr.insertCell().textContent = fmt(row.eig_estimate);
    tr.insertCell().textContent = fmt(row.eig_std_error);
    tr.insertCell().textContent = vec(row.belief_mean);
    tr.insertCell().textContent = vec(row.belief_std);
  }
  return table;
}

function el(tag: string, className: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  return node;
}
