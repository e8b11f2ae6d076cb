/** Shapes of the JSON documents the tree service serves.
 *
 * These mirror the wire format exactly, snake_case keys included, so a
 * response can be used as-is without a mapping layer.
 */

export type QuestionKind = "INFERENCE" | "CODE" | "CLUSTERING";

export interface QuestionDoc {
  kind: QuestionKind;
  text: string;
  feature: string;
  expression?: string;
  grouping?: Record<string, string>;
}

export interface ClassCounts {
  neg: number;
  pos: number;
}

/** One node of a served tree; split fields are present only on internals. */
export interface NodeDoc {
  id: string;
  depth: number;
  counts: ClassCounts;
  gini: number;
  ratio: number;
  sample_ids?: string[];
  question?: QuestionDoc;
  weighted_gini?: number;
  gain?: number;
  children?: { branch: string; node: NodeDoc }[];
}

export interface TreeDoc {
  format_version: number;
  version: number;
  task: string;
  schema_fingerprint: string;
  params: Record<string, unknown>;
  insights: string;
  root: NodeDoc;
}

export interface RunSummary {
  run_id: string;
  version: number;
  task: string;
  node_count: number;
  leaf_count: number;
  depth: number;
}

export interface TreeResponse {
  run_id: string;
  version: number;
  latest_version: number;
  tree: TreeDoc;
}

export interface ConfusionCounts {
  tp: number;
  fp: number;
  tn: number;
  fn: number;
}

export interface MetricsDoc {
  run_id: string;
  version: number;
  sensitivity: number;
  leaf_ratios: number[];
  accuracy: number;
  precision: number;
  recall: number;
  fbeta: number;
  beta: number;
  counts: ConfusionCounts;
}

/** Metrics block embedded in an action response (no run_id or grid). */
export interface ActionMetrics {
  sensitivity: number;
  accuracy: number;
  precision: number;
  recall: number;
  fbeta: number;
  beta: number;
  counts: ConfusionCounts;
}

export type ActionName = "collapse" | "rebuild" | "remove_trivial";

export interface ActionRequest {
  action: ActionName;
  base_version: number;
  node_id?: string;
  advice?: string;
  epsilon?: number;
}

export interface ActionResponse {
  run_id: string;
  action: string;
  version: number;
  changed: boolean;
  detail: Record<string, unknown>;
  metrics: ActionMetrics;
  tree: TreeDoc;
}

/** Body of a 409 when base_version no longer matches the stored tree. */
export interface ConflictBody {
  error: string;
  run_id: string;
  base_version: number;
  current_version: number;
}

export interface AuditRecord {
  seq: number;
  action: string;
  base_version: number;
  new_version: number;
  node_id: string | null;
  args: Record<string, unknown>;
  detail: Record<string, unknown>;
  at: string;
}

export interface AuditResponse {
  run_id: string;
  version: number;
  records: AuditRecord[];
}

export interface QaResponse {
  run_id: string;
  version: number;
  node_id: string;
  question: string;
  yes: number;
  no: number;
  unknown: number;
  failures: number;
  total: number;
  examples: [string, string][];
}

export interface SampleRow {
  id: string;
  label: number;
  features: Record<string, string>;
}

export interface SamplesResponse {
  run_id: string;
  version: number;
  node_id: string;
  total: number;
  pos: number;
  neg: number;
  ratio: number;
  samples: SampleRow[];
}
