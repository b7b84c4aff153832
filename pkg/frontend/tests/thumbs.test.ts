// Thumbnail fetch planning: only visible, in-range, missing steps.

import { describe, expect, it } from "vitest";
import { reduce } from "../src/store.js";
import type { ApiEvent } from "../src/store.js";
import { planThumbFetches } from "../src/thumbs.js";
import type { StateView } from "../src/types.js";

function view(step: number): StateView {
  return {
    step,
    png_b64: `png${step}`,
    breakdown: { spa: 0, exp: 0, tva: 0, crl: 0, total: 0 },
    mean_reward: 0,
    metadata: {
      step,
      rf_applied: false,
      weights: { spa: 1, exp: 100, tva: 200, crl: 20 },
    },
  };
}

describe("planThumbFetches", () => {
  it("requests only missing slots that are visible and within history", () => {
    const log: ApiEvent[] = [
      { kind: "created", sessionId: "s1", state: view(0) },
      { kind: "stepped", state: view(1) },
      { kind: "stepped", state: view(2) },
      { kind: "rewound", state: view(1) },
    ];
    // drop slot 0 to fake a reloaded client with sparse history
    const state = reduce(log);
    const sparse = { ...state, history: state.history.slice() };
    sparse.history[0] = undefined;
    expect(planThumbFetches(sparse, [0, 1, 2, 5, -1, 0])).toEqual([0]);
  });

  it("returns nothing when every visible step is present", () => {
    const state = reduce([
      { kind: "created", sessionId: "s1", state: view(0) },
      { kind: "stepped", state: view(1) },
    ]);
    expect(planThumbFetches(state, [0, 1])).toEqual([]);
  });
});
