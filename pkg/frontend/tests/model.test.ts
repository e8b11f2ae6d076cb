import { describe, expect, it } from "vitest";

import {
  gini,
  giniGain,
  indexNodes,
  isLeaf,
  leafClass,
  nodeCount,
  trivialNodes,
  walk,
} from "../src/model.js";
import { NodeDoc } from "../src/types.js";
import { fixtureRoot } from "./fakes.js";

describe("walking", () => {
  it("visits all five fixture nodes in preorder", () => {
    const ids = walk(fixtureRoot()).map((n) => n.id);
    expect(ids).toEqual(["r", "r.yes", "r.yes.yes", "r.yes.no", "r.no"]);
    expect(nodeCount(fixtureRoot())).toBe(5);
  });

  it("indexes nodes by id", () => {
    const index = indexNodes(fixtureRoot());
    expect(index.get("r.no")?.counts).toEqual({ neg: 3, pos: 1 });
    expect(index.has("nope")).toBe(false);
  });

  it("tells leaves from splits", () => {
    const index = indexNodes(fixtureRoot());
    expect(isLeaf(index.get("r")!)).toBe(false);
    expect(isLeaf(index.get("r.no")!)).toBe(true);
  });
});

describe("gini arithmetic", () => {
  it("matches hand-computed impurity", () => {
    expect(gini({ neg: 4, pos: 4 })).toBeCloseTo(0.5, 12);
    expect(gini({ neg: 1, pos: 3 })).toBeCloseTo(0.375, 12);
    expect(gini({ neg: 0, pos: 3 })).toBe(0);
    expect(gini({ neg: 0, pos: 0 })).toBe(0);
  });

  it("matches hand-computed split gains", () => {
    const index = indexNodes(fixtureRoot());
    // root: 0.5 - (4/8 * 0.375 + 4/8 * 0.375) = 0.125
    expect(giniGain(index.get("r")!)).toBeCloseTo(0.125, 12);
    // inner: 0.375 - 0 = 0.375
    expect(giniGain(index.get("r.yes")!)).toBeCloseTo(0.375, 12);
    expect(giniGain(index.get("r.no")!)).toBeNull();
  });
});

describe("leaf class at a sensitivity", () => {
  it("is positive exactly when ratio reaches the threshold", () => {
    const leaf = indexNodes(fixtureRoot()).get("r.no")!; // ratio 0.25
    expect(leafClass(leaf, 0)).toBe(1);
    expect(leafClass(leaf, 0.25)).toBe(1);
    expect(leafClass(leaf, 0.250001)).toBe(0);
    expect(leafClass(leaf, 1)).toBe(0);
  });
});

describe("trivial split preview", () => {
  it("flags nothing on the fixture at epsilon 0", () => {
    expect(trivialNodes(fixtureRoot(), 0).size).toBe(0);
  });

  it("flags splits as epsilon passes their gain", () => {
    expect([...trivialNodes(fixtureRoot(), 0.125)]).toEqual([]);
    expect([...trivialNodes(fixtureRoot(), 0.2)]).toEqual(["r"]);
    expect([...trivialNodes(fixtureRoot(), 0.4)].sort()).toEqual(["r", "r.yes"]);
  });

  it("flags equal-ratio splits even at epsilon 0", () => {
    const even: NodeDoc = {
      id: "z",
      depth: 0,
      counts: { neg: 3, pos: 3 },
      gini: 0.5,
      ratio: 0.5,
      question: { kind: "INFERENCE", text: "does it matter?", feature: "x" },
      children: [
        {
          branch: "yes",
          node: { id: "z.yes", depth: 1, counts: { neg: 1, pos: 1 }, gini: 0.5, ratio: 0.5 },
        },
        {
          branch: "no",
          node: { id: "z.no", depth: 1, counts: { neg: 2, pos: 2 }, gini: 0.5, ratio: 0.5 },
        },
      ],
    };
    expect([...trivialNodes(even, 0)]).toEqual(["z"]);
  });
});
