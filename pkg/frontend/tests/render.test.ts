import { describe, expect, it } from "vitest";

import { nodeCount } from "../src/model.js";
import {
  escapeHtml,
  renderApp,
  renderAuditPanel,
  renderBanners,
  renderMetricsReadout,
  renderSensitivityPanel,
  renderTopbar,
  renderTreePanel,
} from "../src/render.js";
import { AppState } from "../src/state.js";
import { AuditRecord, MetricsDoc } from "../src/types.js";
import { fixtureTree } from "./fakes.js";

function metricsDoc(): MetricsDoc {
  return {
    run_id: "demo",
    version: 3,
    sensitivity: 0.75,
    leaf_ratios: [0, 0.25, 1],
    accuracy: 0.875,
    precision: 1,
    recall: 0.75,
    fbeta: 0.9375,
    beta: 0.5,
    counts: { tp: 3, fp: 0, tn: 4, fn: 1 },
  };
}

function baseState(overrides: Partial<AppState> = {}): AppState {
  return {
    runs: [
      { run_id: "demo", version: 3, task: "find converting users", node_count: 5, leaf_count: 3, depth: 2 },
    ],
    runId: "demo",
    tree: fixtureTree(),
    version: 3,
    servedSensitivity: 0.75,
    sensitivity: 0.75,
    metrics: metricsDoc(),
    audit: [],
    epsilon: 0.005,
    folded: new Set(),
    conflict: null,
    offline: false,
    error: null,
    notice: null,
    qa: null,
    qaTarget: null,
    qaQuestion: "",
    advice: "",
    samples: null,
    busy: false,
    ...overrides,
  };
}

describe("tree panel", () => {
  it("renders one block per served node", () => {
    const state = baseState();
    const html = renderTreePanel(state);
    const blocks = html.match(/class="node /g) ?? [];
    expect(blocks.length).toBe(nodeCount(state.tree!.root));
    expect(blocks.length).toBe(state.runs[0].node_count);
  });

  it("shows question text, kind badge, counts, and weighted gini on splits", () => {
    const html = renderTreePanel(baseState());
    expect(html).toContain("is region equal to 'US'?");
    expect(html).toContain('kind-inference">INFERENCE<');
    expect(html).toContain('kind-code">CODE<');
    expect(html).toContain("4+ / 4-");
    expect(html).toContain("weighted gini 0.375");
  });

  it("shows counts, ratio, and the class at the current sensitivity on leaves", () => {
    const html = renderTreePanel(baseState({ sensitivity: 0.2 }));
    expect(html).toContain("ratio 0.250");
    expect(html).toContain('<div class="node leaf pos" data-node="r.no">');
  });

  it("flips a leaf's class when the slider crosses its ratio", () => {
    const below = renderTreePanel(baseState({ sensitivity: 0.2 }));
    expect(below).toContain('<div class="node leaf pos" data-node="r.no">');
    const above = renderTreePanel(baseState({ sensitivity: 0.3 }));
    expect(above).toContain('<div class="node leaf neg" data-node="r.no">');
  });

  it("hides a folded branch without touching the document", () => {
    const state = baseState({ folded: new Set(["r.yes"]) });
    const html = renderTreePanel(state);
    expect(html).toContain("2 nodes hidden");
    expect(html).not.toContain('data-node="r.yes.yes"');
    // the children are still in the document, only the rendering skips them
    expect(nodeCount(state.tree!.root)).toBe(5);
    const unfolded = renderTreePanel(baseState());
    expect(unfolded).toContain('data-node="r.yes.yes"');
  });

  it("highlights splits the prune preview would fold at this epsilon", () => {
    const none = renderTreePanel(baseState({ epsilon: 0.005 }));
    expect(none).not.toContain("trivial");
    const some = renderTreePanel(baseState({ epsilon: 0.2 }));
    expect(some).toContain('<div class="node internal trivial" data-node="r">');
    expect(some).toContain('<div class="node internal" data-node="r.yes">');
  });
});

describe("sensitivity panel", () => {
  it("marks the slider position selected at the served optimum", () => {
    const html = renderSensitivityPanel(baseState());
    expect(html).toContain(">selected</span>");
    expect(html).not.toContain("jump to selected");
  });

  it("offers a jump back when the slider has moved off the optimum", () => {
    const html = renderSensitivityPanel(baseState({ sensitivity: 0.3 }));
    expect(html).not.toContain(">selected</span>");
    expect(html).toContain("jump to selected (0.750)");
    expect(html).toContain('data-value="0.75"');
  });

  it("renders the served grid of leaf ratios as clickable marks", () => {
    const html = renderSensitivityPanel(baseState());
    expect(html).toContain('data-action="set-sensitivity" data-value="0.25"');
    expect(html).toContain(">0.250</button>");
  });
});

describe("metrics readout", () => {
  it("prints the served numbers in column order at the measured value", () => {
    const html = renderMetricsReadout(metricsDoc());
    const order = ["accuracy", "precision", "recall", "f0.5"].map((k) => html.indexOf(k));
    expect(order.every((i) => i >= 0)).toBe(true);
    expect([...order].sort((a, b) => a - b)).toEqual(order);
    expect(html).toContain("0.875");
    expect(html).toContain("tp 3 fp 0 tn 4 fn 1");
    expect(html).toContain("measured at sensitivity 0.750");
  });
});

describe("banners", () => {
  it("shows the retry banner while the service is unreachable", () => {
    const html = renderBanners(baseState({ offline: true }));
    expect(html).toContain("service unreachable");
    expect(html).toContain('data-action="retry"');
  });

  it("surfaces a version conflict verbatim with a refresh prompt", () => {
    const raw = '{"error": "version conflict", "current_version": 7}';
    const html = renderBanners(baseState({ conflict: raw }));
    expect(html).toContain(escapeHtml(raw));
    expect(html).toContain('data-action="refresh"');
  });
});

describe("audit view", () => {
  it("shows rebuild advice as typed, plus the expansion when it differs", () => {
    const records: AuditRecord[] = [
      {
        seq: 1,
        action: "rebuild",
        base_version: 2,
        new_version: 3,
        node_id: "r.no",
        args: { advice: "Split by lifecycle stage first." },
        detail: { advice_raw: "split by stage", nodes_before: 1, nodes_after: 3 },
        at: "2026-08-14T12:00:00Z",
      },
    ];
    const html = renderAuditPanel(records);
    expect(html).toContain("advice: split by stage");
    expect(html).toContain("expanded: Split by lifecycle stage first.");
    expect(html).toContain("v2 &rarr; v3");
  });

  it("summarizes probes and folds", () => {
    const records: AuditRecord[] = [
      {
        seq: 1,
        action: "qa",
        base_version: 1,
        new_version: 1,
        node_id: "r",
        args: { question: "is stage equal to 'late'?" },
        detail: { yes: 4, no: 4, unknown: 0, failures: 0 },
        at: "2026-08-14T12:00:00Z",
      },
      {
        seq: 2,
        action: "remove_trivial",
        base_version: 1,
        new_version: 2,
        node_id: null,
        args: { epsilon: 0.2 },
        detail: { collapsed: ["r"] },
        at: "2026-08-14T12:00:01Z",
      },
    ];
    const html = renderAuditPanel(records);
    expect(html).toContain("asked: is stage equal to 'late'?");
    expect(html).toContain("epsilon 0.2, folded r");
  });
});

describe("top bar and full page", () => {
  it("shows the version badge", () => {
    const html = renderTopbar(baseState());
    expect(html).toContain('id="version-badge"');
    expect(html).toContain(">v3</span>");
  });

  it("assembles every panel", () => {
    const html = renderApp(baseState());
    for (const id of [
      "topbar",
      "banners",
      "tree-panel",
      "sense-panel",
      "readout",
      "prune-panel",
      "advice-panel",
      "qa-panel",
      "audit-panel",
    ]) {
      expect(html).toContain(`id="${id}"`);
    }
  });
});

describe("escaping", () => {
  it("neutralizes markup in served text", () => {
    expect(escapeHtml(`<script>alert("x")</script>`)).toBe(
      "&lt;script&gt;alert(&quot;x&quot;)&lt;/script&gt;",
    );
  });
});
