/** Typed client for the tree service.
 *
 * Every request goes through one injectable fetch function so tests can
 * stub the transport.  A 409 from the actions endpoint is an expected
 * outcome (someone else edited first), so postAction returns a
 * discriminated result carrying the conflict body verbatim instead of
 * throwing; everything else non-2xx raises ApiError with the served
 * detail message.  Transport failures propagate as whatever fetch threw,
 * which the caller treats as "service unreachable".
 */

import {
  ActionRequest,
  ActionResponse,
  AuditResponse,
  ConflictBody,
  MetricsDoc,
  QaResponse,
  RunSummary,
  SamplesResponse,
  TreeResponse,
} from "./types.js";

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type ActionResult =
  | { ok: true; body: ActionResponse }
  | { ok: false; conflict: ConflictBody; raw: string };

async function errorDetail(res: Response): Promise<string> {
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") return body.detail;
    return JSON.stringify(body);
  } catch {
    return res.statusText || `HTTP ${res.status}`;
  }
}

export class Client {
  constructor(
    private readonly fetchFn: FetchFn = (input, init) => globalThis.fetch(input, init),
    private readonly base: string = "",
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, payload: unknown): Promise<T> {
    const res = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return (await res.json()) as T;
  }

  async listRuns(): Promise<RunSummary[]> {
    const body = await this.getJson<{ runs: RunSummary[] }>("/runs");
    return body.runs;
  }

  getTree(runId: string, version?: number): Promise<TreeResponse> {
    const query = version === undefined ? "" : `?version=${version}`;
    return this.getJson(`/runs/${encodeURIComponent(runId)}/tree${query}`);
  }

  getMetrics(runId: string, sensitivity?: number, beta?: number): Promise<MetricsDoc> {
    const params = new URLSearchParams();
    if (sensitivity !== undefined) params.set("sensitivity", String(sensitivity));
    if (beta !== undefined) params.set("beta", String(beta));
    const query = params.toString();
    return this.getJson(
      `/runs/${encodeURIComponent(runId)}/metrics${query ? `?${query}` : ""}`,
    );
  }

  getAudit(runId: string): Promise<AuditResponse> {
    return this.getJson(`/runs/${encodeURIComponent(runId)}/audit`);
  }

  getSamples(runId: string, nodeId: string): Promise<SamplesResponse> {
    return this.getJson(
      `/runs/${encodeURIComponent(runId)}/nodes/${encodeURIComponent(nodeId)}/samples`,
    );
  }

  /** Submit a mutation; the base_version in the request is the CAS guard. */
  async postAction(runId: string, body: ActionRequest): Promise<ActionResult> {
    const res = await this.fetchFn(`${this.base}/runs/${encodeURIComponent(runId)}/actions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (res.status === 409) {
      const raw = await res.text();
      try {
        return { ok: false, conflict: JSON.parse(raw) as ConflictBody, raw };
      } catch {
        throw new ApiError(409, raw);
      }
    }
    if (!res.ok) throw new ApiError(res.status, await errorDetail(res));
    return { ok: true, body: (await res.json()) as ActionResponse };
  }

  postQa(runId: string, nodeId: string, question: string): Promise<QaResponse> {
    return this.postJson(`/runs/${encodeURIComponent(runId)}/qa`, {
      node_id: nodeId,
      question,
    });
  }
}
