/** HTML generation for the console.
 *
 * Everything here is a pure function from state to a string, so rendering
 * is testable without a browser.  main.ts owns the DOM and event wiring.
 * Interactive elements carry data-action (and usually data-node)
 * attributes for one delegated click handler.
 */

import { giniGain, isLeaf, leafClass, nodeCount, subtreeSize, trivialNodes } from "./model.js";
import { AppState } from "./state.js";
import { AuditRecord, MetricsDoc, NodeDoc, QaResponse, SamplesResponse } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fmt(x: number, digits = 3): string {
  return x.toFixed(digits);
}

function counts(node: NodeDoc): string {
  return `<span class="counts">${node.counts.pos}+ / ${node.counts.neg}-</span>`;
}

function renderLeaf(node: NodeDoc, state: AppState): string {
  const positive = leafClass(node, state.sensitivity) === 1;
  const cls = positive ? "pos" : "neg";
  const id = escapeHtml(node.id);
  return (
    `<div class="node leaf ${cls}" data-node="${id}">` +
    counts(node) +
    `<span class="ratio">ratio ${fmt(node.ratio)}</span>` +
    `<span class="verdict">${positive ? "positive" : "negative"}</span>` +
    `<span class="ops">` +
    `<button data-action="qa" data-node="${id}">qa</button>` +
    `<button data-action="samples" data-node="${id}">samples</button>` +
    `</span>` +
    `</div>`
  );
}

function renderInternal(node: NodeDoc, state: AppState, trivial: Set<string>): string {
  const id = escapeHtml(node.id);
  const q = node.question!;
  const folded = state.folded.has(node.id);
  const classes = ["node", "internal"];
  if (trivial.has(node.id)) classes.push("trivial");
  if (folded) classes.push("folded");
  const gain = giniGain(node);
  const head =
    `<div class="head">` +
    `<button class="fold" data-action="fold" data-node="${id}" title="fold or unfold">` +
    (folded ? "+" : "&minus;") +
    `</button>` +
    `<span class="kind kind-${q.kind.toLowerCase()}">${q.kind}</span>` +
    `<span class="question">${escapeHtml(q.text)}</span>` +
    counts(node) +
    `<span class="wgini">weighted gini ${fmt(node.weighted_gini ?? 0)}</span>` +
    `<span class="gain">gain ${gain === null ? "?" : fmt(gain)}</span>` +
    `<span class="ops">` +
    `<button data-action="collapse" data-node="${id}">collapse</button>` +
    `<button data-action="rebuild" data-node="${id}">rebuild</button>` +
    `<button data-action="qa" data-node="${id}">qa</button>` +
    `</span>` +
    `</div>`;
  let body: string;
  if (folded) {
    body = `<div class="foldnote">${subtreeSize(node) - 1} nodes hidden</div>`;
  } else {
    const items = node.children!
      .map(
        (c) =>
          `<li><span class="branch">${escapeHtml(c.branch)}</span>` +
          renderNodeBlock(c.node, state, trivial) +
          `</li>`,
      )
      .join("");
    body = `<ul class="children">${items}</ul>`;
  }
  return `<div class="${classes.join(" ")}" data-node="${id}">${head}${body}</div>`;
}

export function renderNodeBlock(node: NodeDoc, state: AppState, trivial: Set<string>): string {
  return isLeaf(node) ? renderLeaf(node, state) : renderInternal(node, state, trivial);
}

export function renderTreePanel(state: AppState): string {
  if (!state.tree) return `<p class="empty">no tree loaded</p>`;
  const trivial = trivialNodes(state.tree.root, state.epsilon);
  return (
    `<header class="treeheader">` +
    `<span class="treemeta">${nodeCount(state.tree.root)} nodes</span>` +
    `<span class="treemeta">task: ${escapeHtml(state.tree.task)}</span>` +
    `</header>` +
    renderNodeBlock(state.tree.root, state, trivial)
  );
}

export function renderMetricsReadout(m: MetricsDoc | null): string {
  if (!m) return `<p class="empty">metrics unavailable</p>`;
  return (
    `<dl class="metrics">` +
    `<dt>accuracy</dt><dd>${fmt(m.accuracy)}</dd>` +
    `<dt>precision</dt><dd>${fmt(m.precision)}</dd>` +
    `<dt>recall</dt><dd>${fmt(m.recall)}</dd>` +
    `<dt>f${m.beta}</dt><dd>${fmt(m.fbeta)}</dd>` +
    `<dt>counts</dt>` +
    `<dd>tp ${m.counts.tp} fp ${m.counts.fp} tn ${m.counts.tn} fn ${m.counts.fn}</dd>` +
    `</dl>` +
    `<p class="measured">measured at sensitivity ${fmt(m.sensitivity)}</p>`
  );
}

export function renderSensitivityPanel(state: AppState): string {
  const atOptimum = state.sensitivity === state.servedSensitivity;
  const marker = atOptimum
    ? `<span class="selected-marker" id="selected-marker">selected</span>`
    : `<button class="jump" data-action="set-sensitivity"` +
      ` data-value="${state.servedSensitivity}">` +
      `jump to selected (${fmt(state.servedSensitivity)})</button>`;
  const marks = (state.metrics?.leaf_ratios ?? [])
    .map((r) => {
      const current = r === state.sensitivity ? " current" : "";
      return (
        `<button class="mark${current}" data-action="set-sensitivity"` +
        ` data-value="${r}">${fmt(r)}</button>`
      );
    })
    .join(" ");
  return (
    `<h2>sensitivity</h2>` +
    `<div class="sliderline">` +
    `<input type="range" id="sensitivity" min="0" max="1" step="0.001"` +
    ` value="${state.sensitivity}">` +
    `<span class="value" id="sensitivity-value">${fmt(state.sensitivity)}</span>` +
    marker +
    `</div>` +
    `<div class="grid">leaf ratios: ${marks}</div>`
  );
}

export function renderPrunePanel(state: AppState): string {
  const flagged = state.tree ? trivialNodes(state.tree.root, state.epsilon) : new Set();
  return (
    `<h2>prune preview</h2>` +
    `<div class="sliderline">` +
    `<input type="range" id="epsilon" min="0" max="0.5" step="0.005"` +
    ` value="${state.epsilon}">` +
    `<span class="value" id="epsilon-value">${fmt(state.epsilon)}</span>` +
    `</div>` +
    `<p class="prunecount" id="prune-count">${flagged.size} splits flagged</p>` +
    `<button data-action="remove-trivial">fold trivial splits</button>`
  );
}

export function renderQaPanel(state: AppState): string {
  const target = state.qaTarget
    ? `<code>${escapeHtml(state.qaTarget)}</code>`
    : `<em>pick a node with its qa button</em>`;
  let results = "";
  if (state.qa) results = renderQaResults(state.qa);
  return (
    `<h2>probe a question</h2>` +
    `<p class="qatarget">node: ${target}</p>` +
    `<input type="text" id="qa-question" placeholder="is stage equal to 'late'?"` +
    ` value="${escapeHtml(state.qaQuestion)}">` +
    `<button data-action="ask-qa"${state.qaTarget ? "" : " disabled"}>ask</button>` +
    results
  );
}

function renderQaResults(qa: QaResponse): string {
  const examples = qa.examples
    .map(([sid, verdict]) => `<li><code>${escapeHtml(sid)}</code> ${escapeHtml(verdict)}</li>`)
    .join("");
  return (
    `<div class="qaresults">` +
    `<p>${escapeHtml(qa.question)} at <code>${escapeHtml(qa.node_id)}</code>:` +
    ` yes ${qa.yes}, no ${qa.no}, unknown ${qa.unknown},` +
    ` failures ${qa.failures} (of ${qa.total})</p>` +
    `<ul class="qaexamples">${examples}</ul>` +
    `</div>`
  );
}

export function renderAdvicePanel(state: AppState): string {
  return (
    `<h2>rebuild advice</h2>` +
    `<textarea id="advice" rows="3"` +
    ` placeholder="guidance for the next rebuild, e.g. split by region first"` +
    `>${escapeHtml(state.advice)}</textarea>` +
    `<p class="hint">sent with the next rebuild button you press</p>`
  );
}

export function renderAuditPanel(records: AuditRecord[]): string {
  if (!records.length) return `<h2>audit</h2><p class="empty">no refinements yet</p>`;
  const rows = records
    .map((r) => {
      const extras: string[] = [];
      if (typeof r.detail.advice_raw === "string" && r.detail.advice_raw) {
        extras.push(`<div class="advice">advice: ${escapeHtml(r.detail.advice_raw)}</div>`);
        if (typeof r.args.advice === "string" && r.args.advice !== r.detail.advice_raw) {
          extras.push(`<div class="advice">expanded: ${escapeHtml(r.args.advice)}</div>`);
        }
      }
      if (r.action === "remove_trivial") {
        const folded = Array.isArray(r.detail.collapsed) ? r.detail.collapsed : [];
        extras.push(
          `<div class="detail">epsilon ${r.args.epsilon},` +
            ` folded ${folded.map((n) => escapeHtml(String(n))).join(", ") || "nothing"}</div>`,
        );
      }
      if (r.action === "collapse") {
        extras.push(`<div class="detail">removed ${r.detail.removed_nodes} nodes</div>`);
      }
      if (r.action === "qa") {
        extras.push(
          `<div class="detail">asked: ${escapeHtml(String(r.args.question ?? ""))}` +
            ` (yes ${r.detail.yes}, no ${r.detail.no}, unknown ${r.detail.unknown})</div>`,
        );
      }
      return (
        `<li class="audit-${escapeHtml(r.action)}">` +
        `<span class="seq">#${r.seq}</span> ` +
        `<strong>${escapeHtml(r.action)}</strong>` +
        ` v${r.base_version} &rarr; v${r.new_version}` +
        (r.node_id ? ` at <code>${escapeHtml(r.node_id)}</code>` : "") +
        ` <span class="at">${escapeHtml(r.at)}</span>` +
        extras.join("") +
        `</li>`
      );
    })
    .join("");
  return `<h2>audit</h2><ul class="audit">${rows}</ul>`;
}

export function renderSamplesPanel(samples: SamplesResponse | null): string {
  if (!samples) return "";
  const shown = samples.samples.slice(0, 20);
  const rows = shown
    .map((s) => {
      const feats = Object.entries(s.features)
        .map(([k, v]) => `${escapeHtml(k)}=${escapeHtml(v)}`)
        .join(", ");
      return (
        `<li><code>${escapeHtml(s.id)}</code>` +
        ` <span class="label label-${s.label}">${s.label ? "pos" : "neg"}</span>` +
        ` ${feats}</li>`
      );
    })
    .join("");
  const more =
    samples.samples.length > shown.length
      ? `<p class="hint">and ${samples.samples.length - shown.length} more</p>`
      : "";
  return (
    `<h2>samples at <code>${escapeHtml(samples.node_id)}</code></h2>` +
    `<p>${samples.pos}+ / ${samples.neg}- (ratio ${fmt(samples.ratio)})</p>` +
    `<ul class="samples">${rows}</ul>` +
    more
  );
}

export function renderBanners(state: AppState): string {
  const parts: string[] = [];
  if (state.offline) {
    parts.push(
      `<div class="banner offline">service unreachable` +
        ` <button data-action="retry">retry</button></div>`,
    );
  }
  if (state.conflict) {
    parts.push(
      `<div class="banner conflict">` +
        `<strong>edit rejected, someone got there first</strong>` +
        `<pre>${escapeHtml(state.conflict)}</pre>` +
        `<button data-action="refresh">refresh to latest</button>` +
        `</div>`,
    );
  }
  if (state.error) {
    parts.push(`<div class="banner error">${escapeHtml(state.error)}</div>`);
  }
  if (state.notice) {
    parts.push(`<div class="banner notice">${escapeHtml(state.notice)}</div>`);
  }
  return parts.join("");
}

export function renderTopbar(state: AppState): string {
  const options = state.runs
    .map((r) => {
      const selected = r.run_id === state.runId ? " selected" : "";
      return `<option value="${escapeHtml(r.run_id)}"${selected}>` +
        `${escapeHtml(r.run_id)} (${r.node_count} nodes)</option>`;
    })
    .join("");
  return (
    `<h1>asktree console</h1>` +
    `<select id="run-picker">${options}</select>` +
    `<span class="badge" id="version-badge">v${state.version}</span>` +
    (state.busy ? `<span class="busy">working&hellip;</span>` : "")
  );
}

export function renderApp(state: AppState): string {
  return (
    `<div id="topbar">${renderTopbar(state)}</div>` +
    `<div id="banners">${renderBanners(state)}</div>` +
    `<div id="main">` +
    `<section id="tree-panel">${renderTreePanel(state)}</section>` +
    `<aside id="side">` +
    `<section class="panel" id="sense-panel">${renderSensitivityPanel(state)}</section>` +
    `<section class="panel" id="readout">${renderMetricsReadout(state.metrics)}</section>` +
    `<section class="panel" id="prune-panel">${renderPrunePanel(state)}</section>` +
    `<section class="panel" id="advice-panel">${renderAdvicePanel(state)}</section>` +
    `<section class="panel" id="qa-panel">${renderQaPanel(state)}</section>` +
    `<section class="panel" id="samples-panel">${renderSamplesPanel(state.samples)}</section>` +
    `<section class="panel" id="audit-panel">${renderAuditPanel(state.audit)}</section>` +
    `</aside>` +
    `</div>`
  );
}
