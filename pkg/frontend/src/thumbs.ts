// Lazy thumbnail planning: the strip shows every step in history, but PNGs
// are only fetched for steps actually on screen and not already in the log.

import type { ViewState } from "./store.js";

export function planThumbFetches(
  state: ViewState,
  visibleSteps: readonly number[],
): number[] {
  const wanted: number[] = [];
  for (const step of visibleSteps) {
    if (step < 0 || step > state.step) continue; // beyond history
    if (state.history[step] !== undefined) continue; // already present
    if (wanted.includes(step)) continue;
    wanted.push(step);
  }
  return wanted;
}
