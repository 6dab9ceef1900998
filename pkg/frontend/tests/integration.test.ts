/** End-to-end: the real DOM app driven against a live service process.
 *
 * Covers the scripted T=4 threshold session: the rendered history table
 * must equal the server transcript field for field, and the submit
 * controls must never be enabled outside the awaiting_outcome status.
 */

import { ChildProcess, spawn } from "node:child_process";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { Client } from "../src/api.js";
import { SessionController } from "../src/state.js";
import { renderSession } from "../src/view.js";

const PORT = 8731;
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess;

async function waitForService(): Promise<void> {
  const deadline = Date.now() + 60_000;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/v1/models`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  service = spawn(
    "python3",
    [
      "-c",
      "from eiglab.service import create_app; import uvicorn; " +
        `uvicorn.run(create_app(), host='127.0.0.1', port=${PORT}, log_level='error')`,
    ],
    { stdio: "ignore" },
  );
  await waitForService();
});

afterAll(() => {
  service?.kill();
});

function fmt(x: number): string {
  return Number.isInteger(x) ? String(x) : x.toFixed(4);
}

describe("live probit session", () => {
  it("runs T=4 and matches the server transcript field for field", async () => {
    document.body.innerHTML = '<div id="root"></div>';
    const root = document.getElementById("root")!;
    const client = new Client(BASE);
    const catalog = await client.listModels();
    const probit = catalog.models.find((m) => m.id === "probit")!;
    expect(probit.outcome_kind).toBe("finite");

    const controller = new SessionController(client);
    const enablementViolations: string[] = [];
    controller.subscribe(() => {
      renderSession(root, controller);
      const awaiting = controller.state.session?.status === "awaiting_outcome"
        && controller.state.phase === "awaiting_outcome";
      for (const button of root.querySelectorAll<HTMLButtonElement>(".outcome-button")) {
        if (!button.disabled && !awaiting) {
          enablementViolations.push(`enabled while ${controller.state.phase}`);
        }
      }
    });

    await controller.start(probit, { model: "probit", strategy: "greedy-grid", T: 4, seed: 97 });
    expect(controller.state.phase).toBe("awaiting_outcome");

    const outcomes = [1, 0, 1, 1];
    for (const y of outcomes) {
      const button = root.querySelector<HTMLButtonElement>(
        `.outcome-button[data-outcome='${y}']`,
      )!;
      expect(button.disabled).toBe(false);
      button.click();
      // the click handler posts; wait for the controller to settle
      while (controller.state.phase === "submitting" || controller.state.phase === "awaiting_outcome"
             && controller.state.history.length < outcomes.indexOf(y) + 1) {
        await new Promise((resolve) => setTimeout(resolve, 20));
        if (controller.state.phase === "error") break;
      }
    }
    expect(controller.state.phase).toBe("finished");
    expect(enablementViolations).toEqual([]);

    const serverView = await client.getSession(controller.state.session!.session_id);
    const transcript = serverView.transcript!;
    expect(transcript).toHaveLength(4);

    const rows = [...root.querySelectorAll("#history-table tbody tr")].map((tr) =>
      [...tr.querySelectorAll("td")].map((td) => td.textContent),
    );
    expect(rows).toHaveLength(4);
    transcript.forEach((record, i) => {
      const cells = rows[i]!;
      expect(cells[0]).toBe(String(record.t));
      expect(cells[1]).toBe(record.xi.map(fmt).join(", "));
      expect(cells[2]).toBe(fmt(record.y));
      expect(cells[3]).toBe(fmt(record.eig_estimate));
      expect(cells[4]).toBe(fmt(record.eig_std_error));
      expect(cells[5]).toBe(record.belief_mean.map(fmt).join(", "));
      expect(cells[6]).toBe(record.belief_std.map(fmt).join(", "));
    });

    // finished card is rendered with the download link
    expect(root.querySelector("#download-transcript")).not.toBeNull();
    expect(root.querySelectorAll(".outcome-button")).toHaveLength(0);
  });

  it("a second identical session replays the same designs", async () => {
    const client = new Client(BASE);

    async function run(): Promise<number[][]> {
      const body = await client.createSession({
        model: "probit", strategy: "greedy-grid", T: 3, seed: 4242,
      });
      const designs = [body.proposed_design!];
      for (const y of [1, 1, 0]) {
        const next = await client.postOutcome(body.session_id, y);
        if (next.proposed_design) designs.push(next.proposed_design);
      }
      return designs;
    }

    expect(await run()).toEqual(await run());
  });
});
