/** Pure helpers over served tree documents.
 *
 * The Gini numbers here are the one thing the console computes instead of
 * reading off a response: the prune preview re-scores every split as the
 * epsilon slider moves, and a round trip per tick would be absurd.  The
 * rule mirrors the service's collapse-trivial action: a split folds when
 * its gain from the stored counts falls below epsilon, or when every child
 * carries the same positive ratio.
 */

import { ClassCounts, NodeDoc } from "./types.js";

export function isLeaf(node: NodeDoc): boolean {
  return !node.children || node.children.length === 0;
}

/** Preorder walk, children in served branch order. */
export function walk(root: NodeDoc): NodeDoc[] {
  const out: NodeDoc[] = [];
  const stack = [root];
  while (stack.length) {
    const node = stack.pop()!;
    out.push(node);
    const children = node.children ?? [];
    for (let i = children.length - 1; i >= 0; i--) stack.push(children[i].node);
  }
  return out;
}

export function nodeCount(root: NodeDoc): number {
  return walk(root).length;
}

export function subtreeSize(node: NodeDoc): number {
  return nodeCount(node);
}

export function indexNodes(root: NodeDoc): Map<string, NodeDoc> {
  return new Map(walk(root).map((n) => [n.id, n]));
}

/** Class a leaf predicts at a sensitivity threshold: positive when ratio >= it. */
export function leafClass(node: NodeDoc, sensitivity: number): 0 | 1 {
  return node.ratio >= sensitivity ? 1 : 0;
}

export function gini(counts: ClassCounts): number {
  const total = counts.neg + counts.pos;
  if (total === 0) return 0;
  const p = counts.pos / total;
  const q = counts.neg / total;
  return 1 - p * p - q * q;
}

/** Split gain recomputed from the served child counts; null for leaves. */
export function giniGain(node: NodeDoc): number | null {
  if (isLeaf(node)) return null;
  const children = node.children!.map((c) => c.node);
  const included = children.reduce((sum, c) => sum + c.counts.neg + c.counts.pos, 0);
  if (included === 0) return 0;
  let weighted = 0;
  for (const child of children) {
    const total = child.counts.neg + child.counts.pos;
    weighted += (total / included) * gini(child.counts);
  }
  return gini(node.counts) - weighted;
}

function ratiosAllEqual(children: NodeDoc[]): boolean {
  // Cross-multiplied so 1/3 and 2/6 compare equal, like the exact
  // fractions the service uses.
  const first = children[0].counts;
  const firstTotal = first.neg + first.pos;
  return children.every((c) => {
    const total = c.counts.neg + c.counts.pos;
    return c.counts.pos * firstTotal === first.pos * total;
  });
}

/** Ids of splits the collapse-trivial action would fold at this epsilon. */
export function trivialNodes(root: NodeDoc, epsilon: number): Set<string> {
  const out = new Set<string>();
  for (const node of walk(root)) {
    if (isLeaf(node)) continue;
    const children = node.children!.map((c) => c.node);
    if (giniGain(node)! < epsilon || ratiosAllEqual(children)) out.add(node.id);
  }
  return out;
}
