/** DOM wiring: one delegated click listener, input listeners, rendering.
 *
 * Slider drags are handled without a full re-render (replacing a range
 * input mid-drag would break the drag): on input we update the affected
 * panels in place, and only the commit on release triggers the metrics
 * fetch and a normal render cycle.
 */

import { Client } from "./api.js";
import { trivialNodes } from "./model.js";
import { renderApp, renderMetricsReadout, renderTreePanel } from "./render.js";
import { Store } from "./state.js";

const root = document.getElementById("app")!;

const store = new Store(new Client(), (state) => {
  root.innerHTML = renderApp(state);
});

function patch(id: string, html: string): void {
  const el = document.getElementById(id);
  if (el) el.innerHTML = html;
}

function setText(id: string, text: string): void {
  const el = document.getElementById(id);
  if (el) el.textContent = text;
}

root.addEventListener("click", (event) => {
  const target = (event.target as HTMLElement).closest("[data-action]");
  if (!(target instanceof HTMLElement)) return;
  const nodeId = target.dataset.node ?? "";
  switch (target.dataset.action) {
    case "fold":
      store.toggleFold(nodeId);
      break;
    case "collapse":
      void store.submitAction("collapse", { nodeId });
      break;
    case "rebuild":
      void store.submitAction("rebuild", { nodeId, advice: store.state.advice });
      break;
    case "remove-trivial":
      void store.submitAction("remove_trivial", { epsilon: store.state.epsilon });
      break;
    case "qa":
      store.setQaTarget(nodeId);
      document.getElementById("qa-question")?.focus();
      break;
    case "ask-qa":
      void store.runQa();
      break;
    case "samples":
      void store.loadSamples(nodeId);
      break;
    case "refresh":
      void store.refresh();
      break;
    case "retry":
      void store.retry();
      break;
    case "set-sensitivity":
      store.setSensitivity(Number(target.dataset.value));
      break;
  }
});

root.addEventListener("input", (event) => {
  const el = event.target;
  if (el instanceof HTMLInputElement && el.id === "sensitivity") {
    store.setSensitivityQuiet(Number(el.value));
    setText("sensitivity-value", Number(el.value).toFixed(3));
    patch("tree-panel", renderTreePanel(store.state));
    patch("readout", renderMetricsReadout(store.state.metrics));
  } else if (el instanceof HTMLInputElement && el.id === "epsilon") {
    store.setEpsilonQuiet(Number(el.value));
    setText("epsilon-value", Number(el.value).toFixed(3));
    setText("prune-count", `${flaggedCount()} splits flagged`);
    patch("tree-panel", renderTreePanel(store.state));
  } else if (el instanceof HTMLTextAreaElement && el.id === "advice") {
    store.setAdvice(el.value);
  } else if (el instanceof HTMLInputElement && el.id === "qa-question") {
    store.setQaQuestion(el.value);
  }
});

root.addEventListener("change", (event) => {
  const el = event.target;
  if (el instanceof HTMLSelectElement && el.id === "run-picker") {
    void store.selectRun(el.value);
  } else if (el instanceof HTMLInputElement && el.id === "sensitivity") {
    store.setSensitivity(Number(el.value));
  } else if (el instanceof HTMLInputElement && el.id === "epsilon") {
    store.setEpsilon(Number(el.value));
  }
});

function flaggedCount(): number {
  const tree = store.state.tree;
  return tree ? trivialNodes(tree.root, store.state.epsilon).size : 0;
}

void store.loadRuns();
