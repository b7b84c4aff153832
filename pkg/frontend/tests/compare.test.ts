// Compare-panel geometry: shared uniform zoom, divider extremes, gating.

import { describe, expect, it } from "vitest";
import { compareLayout, pngDataUrl, selectPair } from "../src/compare.js";
import { reduce } from "../src/store.js";
import type { ApiEvent } from "../src/store.js";
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

const log: ApiEvent[] = [
  { kind: "created", sessionId: "s1", state: view(0) },
  { kind: "stepped", state: view(1) },
  { kind: "stepped", state: view(2) },
];

describe("selectPair", () => {
  it("returns both fetched views, including a self-pair", () => {
    const state = reduce(log);
    expect(selectPair(state, 0, 2)?.a.png_b64).toBe("png0");
    expect(selectPair(state, 0, 2)?.b.png_b64).toBe("png2");
    const self = selectPair(state, 0, 0);
    expect(self?.a).toEqual(self?.b); // identical halves
  });

  it("disables the control when either step is missing", () => {
    const state = reduce(log);
    expect(selectPair(state, 0, 3)).toBeNull();
    expect(selectPair(state, -1, 0)).toBeNull();
  });
});

describe("compareLayout", () => {
  it("applies one shared fit-to-pane zoom to both images", () => {
    const layout = compareLayout(128, 96, 640, 640, 0.5);
    expect(layout.zoom).toBe(5); // min(640/128, 640/96) = 5
    expect(layout.width).toBe(640);
    expect(layout.height).toBe(480);
  });

  it("shows exactly one image at the divider extremes", () => {
    expect(compareLayout(10, 10, 100, 100, 0).clipTop).toBe("inset(0 100% 0 0)");
    expect(compareLayout(10, 10, 100, 100, 1).clipTop).toBe("inset(0 0% 0 0)");
  });

  it("clamps the divider into [0, 1]", () => {
    expect(compareLayout(10, 10, 100, 100, -5).clipTop).toBe("inset(0 100% 0 0)");
    expect(compareLayout(10, 10, 100, 100, 7).clipTop).toBe("inset(0 0% 0 0)");
  });

  it("rejects degenerate image sizes", () => {
    expect(() => compareLayout(0, 10, 100, 100, 0.5)).toThrow();
  });
});

describe("pngDataUrl", () => {
  it("wraps the server payload verbatim", () => {
    expect(pngDataUrl(view(3))).toBe("data:image/png;base64,png3");
  });
});
