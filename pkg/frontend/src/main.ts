/** Boot: configuration form, then the live session screen. */

import { Client, ModelCatalog, ModelInfo } from "./api.js";
import { SessionController } from "./state.js";
import { renderSession } from "./view.js";

const DEFAULT_BASE = "http://127.0.0.1:8000";

export async function boot(root: HTMLElement): Promise<void> {
  const form = document.createElement("div");
  form.className = "config-form";
  form.innerHTML = `
    <label>service <input id="base-url" value="${DEFAULT_BASE}"></label>
    <label>model <select id="model-select"></select></label>
    <label>strategy <select id="strategy-select"></select></label>
    <label>steps <input id="t-input" type="number" value="4" min="1"></label>
    <label>seed <input id="seed-input" type="number" value="1"></label>
    <button id="start-button">Start session</button>
    <div id="config-error" class="banner error" hidden></div>
  `;
  const screen = document.createElement("div");
  screen.className = "session-screen";
  screen.id = "session-screen";
  root.append(form, screen);

  const baseInput = form.querySelector<HTMLInputElement>("#base-url")!;
  const modelSelect = form.querySelector<HTMLSelectElement>("#model-select")!;
  const strategySelect = form.querySelector<HTMLSelectElement>("#strategy-select")!;
  const tInput = form.querySelector<HTMLInputElement>("#t-input")!;
  const seedInput = form.querySelector<HTMLInputElement>("#seed-input")!;
  const startButton = form.querySelector<HTMLButtonElement>("#start-button")!;
  const configError = form.querySelector<HTMLElement>("#config-error")!;

  let catalog: ModelCatalog | null = null;

  async function loadCatalog(): Promise<void> {
    configError.hidden = true;
    try {
      catalog = await new Client(baseInput.value).listModels();
      modelSelect.innerHTML = catalog.models
        .map((m) => `<option value="${m.id}">${m.id}</option>`)
        .join("");
      strategySelect.innerHTML = catalog.strategies
        .filter((s) => s !== "policy") // needs a server-side checkpoint path
        .map((s) => `<option value="${s}">${s}</option>`)
        .join("");
    } catch (err) {
      catalog = null;
      configError.hidden = false;
      configError.textContent = `service unreachable: ${err instanceof Error ? err.message : err}`;
    }
  }

  await loadCatalog();
  baseInput.addEventListener("change", () => void loadCatalog());

  startButton.addEventListener("click", async () => {
    if (!catalog) {
      await loadCatalog();
      if (!catalog) return; // banner already shown; nothing was created
    }
    const model = catalog.models.find((m: ModelInfo) => m.id === modelSelect.value);
    if (!model) return;
    const controller = new SessionController(new Client(baseInput.value));
    controller.subscribe(() => {
      renderSession(screen, controller);
      if (controller.state.session) {
        window.location.hash = controller.state.session.session_id;
      }
    });
    await controller.start(model, {
      model: model.id,
      strategy: strategySelect.value,
      T: Number(tInput.value),
      seed: Number(seedInput.value),
    });
  });
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  void boot(document.getElementById("app")!);
}
