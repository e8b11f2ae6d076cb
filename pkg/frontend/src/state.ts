/** Console state and the operations that change it.
 *
 * Served documents are never edited locally: every tree mutation goes
 * through POST /runs/{id}/actions with the version we believe is current,
 * and a success refetches the tree, metrics, and audit log.  The browser
 * owns presentation state only: which branches are folded away (their data
 * stays in the document, so unfolding needs no request), slider positions,
 * and draft text.
 */

import { ApiError, Client } from "./api.js";
import {
  ActionName,
  ActionResponse,
  AuditRecord,
  MetricsDoc,
  QaResponse,
  RunSummary,
  SamplesResponse,
  TreeDoc,
} from "./types.js";

export const DEFAULT_EPSILON = 0.005;

export interface AppState {
  runs: RunSummary[];
  runId: string | null;
  tree: TreeDoc | null;
  version: number;
  /** Threshold picked at training time; the slider marks it "selected". */
  servedSensitivity: number;
  /** Current slider position; leaf classes are colored against this. */
  sensitivity: number;
  metrics: MetricsDoc | null;
  audit: AuditRecord[];
  epsilon: number;
  folded: Set<string>;
  /** Verbatim body of the last version conflict, shown until a refresh. */
  conflict: string | null;
  /** True after a transport failure; the retry banner is up. */
  offline: boolean;
  error: string | null;
  notice: string | null;
  qa: QaResponse | null;
  qaTarget: string | null;
  qaQuestion: string;
  advice: string;
  samples: SamplesResponse | null;
  busy: boolean;
}

function initialState(): AppState {
  return {
    runs: [],
    runId: null,
    tree: null,
    version: 0,
    servedSensitivity: 0.5,
    sensitivity: 0.5,
    metrics: null,
    audit: [],
    epsilon: DEFAULT_EPSILON,
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
  };
}

function describeAction(body: ActionResponse): string {
  const d = body.detail;
  if (!body.changed) {
    return `${body.action} changed nothing, still version ${body.version}`;
  }
  if (body.action === "collapse") {
    return `collapsed ${d.removed_nodes} nodes away, now version ${body.version}`;
  }
  if (body.action === "remove_trivial") {
    const folded = Array.isArray(d.collapsed) ? d.collapsed.length : 0;
    return `folded ${folded} trivial splits, now version ${body.version}`;
  }
  return `rebuilt subtree (${d.nodes_before} -> ${d.nodes_after} nodes), now version ${body.version}`;
}

export class Store {
  state: AppState = initialState();

  constructor(
    private readonly client: Client,
    private readonly onChange: (state: AppState) => void = () => {},
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  private markFailure(err: unknown): void {
    if (err instanceof ApiError) {
      this.state.error = `${err.status}: ${err.message}`;
    } else {
      this.state.offline = true;
    }
  }

  async loadRuns(): Promise<void> {
    try {
      this.state.runs = await this.client.listRuns();
      this.state.offline = false;
    } catch (err) {
      this.markFailure(err);
      this.emit();
      return;
    }
    const first = this.state.runs[0];
    if (!this.state.runId && first) {
      await this.selectRun(first.run_id);
      return;
    }
    this.emit();
  }

  async selectRun(runId: string): Promise<void> {
    this.state.runId = runId;
    this.state.folded = new Set();
    this.state.qa = null;
    this.state.qaTarget = null;
    this.state.samples = null;
    this.state.notice = null;
    await this.refresh(true);
  }

  /** Refetch tree, metrics, and audit for the current run. */
  async refresh(resetSensitivity = false): Promise<void> {
    const runId = this.state.runId;
    if (!runId) return;
    this.state.conflict = null;
    try {
      const [treeRes, audit, stored] = await Promise.all([
        this.client.getTree(runId),
        this.client.getAudit(runId),
        this.client.getMetrics(runId),
      ]);
      this.state.tree = treeRes.tree;
      this.state.version = treeRes.latest_version;
      this.state.audit = audit.records;
      this.state.servedSensitivity = stored.sensitivity;
      if (resetSensitivity || this.state.sensitivity === stored.sensitivity) {
        this.state.sensitivity = stored.sensitivity;
        this.state.metrics = stored;
      } else {
        this.state.metrics = await this.client.getMetrics(runId, this.state.sensitivity);
      }
      this.state.offline = false;
      this.state.error = null;
    } catch (err) {
      this.markFailure(err);
    }
    this.emit();
  }

  /** POST a mutation using the version currently on screen as the guard. */
  async submitAction(
    action: ActionName,
    opts: { nodeId?: string; advice?: string; epsilon?: number } = {},
  ): Promise<void> {
    const runId = this.state.runId;
    if (!runId || this.state.busy) return;
    this.state.busy = true;
    this.state.conflict = null;
    this.state.error = null;
    this.emit();
    try {
      const result = await this.client.postAction(runId, {
        action,
        base_version: this.state.version,
        node_id: opts.nodeId,
        advice: opts.advice,
        epsilon: opts.epsilon,
      });
      if (result.ok) {
        this.state.notice = describeAction(result.body);
        await this.refresh();
      } else {
        this.state.conflict = result.raw;
      }
    } catch (err) {
      this.markFailure(err);
    }
    this.state.busy = false;
    this.emit();
  }

  async runQa(): Promise<void> {
    const runId = this.state.runId;
    const nodeId = this.state.qaTarget;
    const question = this.state.qaQuestion.trim();
    if (!runId || !nodeId || !question || this.state.busy) return;
    this.state.busy = true;
    this.state.error = null;
    this.emit();
    try {
      this.state.qa = await this.client.postQa(runId, nodeId, question);
      // qa appends an audit record without touching the tree version
      this.state.audit = (await this.client.getAudit(runId)).records;
    } catch (err) {
      this.markFailure(err);
    }
    this.state.busy = false;
    this.emit();
  }

  async loadSamples(nodeId: string): Promise<void> {
    const runId = this.state.runId;
    if (!runId) return;
    try {
      this.state.samples = await this.client.getSamples(runId, nodeId);
    } catch (err) {
      this.markFailure(err);
    }
    this.emit();
  }

  async retry(): Promise<void> {
    this.state.offline = false;
    this.emit();
    if (this.state.runId) await this.refresh();
    else await this.loadRuns();
  }

  /** Fold or unfold a branch; pure presentation, nothing is fetched. */
  toggleFold(nodeId: string): void {
    if (this.state.folded.has(nodeId)) this.state.folded.delete(nodeId);
    else this.state.folded.add(nodeId);
    this.emit();
  }

  setSensitivityQuiet(value: number): void {
    this.state.sensitivity = value;
  }

  setSensitivity(value: number): void {
    this.state.sensitivity = value;
    this.emit();
    void this.fetchMetricsAt(value);
  }

  private async fetchMetricsAt(value: number): Promise<void> {
    const runId = this.state.runId;
    if (!runId) return;
    try {
      const doc = await this.client.getMetrics(runId, value);
      // a newer slider position wins over a slow response
      if (this.state.sensitivity !== value) return;
      this.state.metrics = doc;
      this.state.offline = false;
    } catch (err) {
      this.markFailure(err);
    }
    this.emit();
  }

  setEpsilonQuiet(value: number): void {
    this.state.epsilon = value;
  }

  setEpsilon(value: number): void {
    this.state.epsilon = value;
    this.emit();
  }

  setQaTarget(nodeId: string): void {
    this.state.qaTarget = nodeId;
    this.emit();
  }

  setQaQuestion(text: string): void {
    this.state.qaQuestion = text;
  }

  setAdvice(text: string): void {
    this.state.advice = text;
  }
}
