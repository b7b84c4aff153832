// Weight sliders: validation clamps negatives at the input, and rapid slider
// movement collapses into exactly one PUT per settle window.

import type { Weights } from "./types.js";

export function clampWeights(weights: Weights): Weights {
  return {
    spa: Math.max(0, weights.spa),
    exp: Math.max(0, weights.exp),
    tva: Math.max(0, weights.tva),
    crl: Math.max(0, weights.crl),
  };
}

export interface Timers {
  set: (fn: () => void, ms: number) => ReturnType<typeof setTimeout>;
  clear: (handle: ReturnType<typeof setTimeout>) => void;
}

const realTimers: Timers = {
  set: (fn, ms) => setTimeout(fn, ms),
  clear: (handle) => clearTimeout(handle),
};

export class WeightPanel {
  private pending: Weights | null = null;
  private handle: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly emit: (weights: Weights) => void,
    private readonly settleMs: number = 250,
    private readonly timers: Timers = realTimers,
  ) {}

  /** Called on every slider movement; emits once after the dust settles. */
  change(weights: Weights): void {
    this.pending = clampWeights(weights);
    if (this.handle !== null) this.timers.clear(this.handle);
    this.handle = this.timers.set(() => this.flush(), this.settleMs);
  }

  flush(): void {
    if (this.handle !== null) {
      this.timers.clear(this.handle);
      this.handle = null;
    }
    if (this.pending !== null) {
      const out = this.pending;
      this.pending = null;
      this.emit(out);
    }
  }
}
