import { describe, expect, it } from "vitest";

import { ApiError, Client } from "../src/api.js";
import { makeFakeService } from "./fakes.js";

describe("client requests", () => {
  it("lists runs", async () => {
    const fake = makeFakeService();
    const runs = await new Client(fake.fetchFn).listRuns();
    expect(runs).toHaveLength(1);
    expect(runs[0].run_id).toBe("demo");
    expect(runs[0].node_count).toBe(5);
    expect(runs[0].depth).toBe(2);
  });

  it("fetches the tree with its latest version", async () => {
    const fake = makeFakeService();
    const res = await new Client(fake.fetchFn).getTree("demo");
    expect(res.latest_version).toBe(1);
    expect(res.tree.root.id).toBe("r");
    expect(fake.calls).toContain("GET /runs/demo/tree");
  });

  it("passes sensitivity and beta through as query params", async () => {
    const fake = makeFakeService();
    const doc = await new Client(fake.fetchFn).getMetrics("demo", 0.25, 0.5);
    expect(fake.calls).toContain("GET /runs/demo/metrics?sensitivity=0.25&beta=0.5");
    expect(doc.sensitivity).toBe(0.25);
  });

  it("raises ApiError with the served detail on a 4xx", async () => {
    const fake = makeFakeService();
    const client = new Client(fake.fetchFn);
    await expect(client.postAction("demo", {
      action: "collapse",
      base_version: 1,
      node_id: "r.no",
    })).rejects.toThrow("cannot collapse a leaf");
    await expect(client.getTree("missing")).rejects.toMatchObject({ status: 404 });
  });

  it("lets transport failures through untouched", async () => {
    const client = new Client(() => Promise.reject(new TypeError("fetch failed")));
    await expect(client.listRuns()).rejects.toThrow(TypeError);
  });
});

describe("action submission", () => {
  it("returns the response body on success", async () => {
    const fake = makeFakeService();
    const result = await new Client(fake.fetchFn).postAction("demo", {
      action: "collapse",
      base_version: 1,
      node_id: "r.yes",
    });
    expect(result.ok).toBe(true);
    if (result.ok) {
      expect(result.body.version).toBe(2);
      expect(result.body.changed).toBe(true);
      expect(result.body.detail.removed_nodes).toBe(2);
    }
  });

  it("returns a stale-version conflict verbatim instead of throwing", async () => {
    const fake = makeFakeService();
    const result = await new Client(fake.fetchFn).postAction("demo", {
      action: "collapse",
      base_version: 99,
      node_id: "r.yes",
    });
    expect(result.ok).toBe(false);
    if (!result.ok) {
      expect(result.conflict.current_version).toBe(1);
      expect(result.conflict.base_version).toBe(99);
      expect(result.raw).toBe(
        JSON.stringify({
          error: "version conflict",
          run_id: "demo",
          base_version: 99,
          current_version: 1,
        }),
      );
    }
  });

  it("treats a non-json 409 as an error, not a conflict", async () => {
    const client = new Client(async () => new Response("gateway says no", { status: 409 }));
    await expect(
      client.postAction("demo", { action: "collapse", base_version: 1, node_id: "r" }),
    ).rejects.toBeInstanceOf(ApiError);
  });
});
