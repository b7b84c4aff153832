// Geometry for the side-by-side compare panel: two stacked <img> elements
// showing server PNGs verbatim, one clipped at a draggable divider. The only
// transform either image sees is one shared uniform zoom — no resampling,
// no per-pane scaling, no pixel math.

import type { StateView } from "./types.js";
import type { ViewState } from "./store.js";

export interface ComparePair {
  a: StateView;
  b: StateView;
}

/** Both steps must exist in history; otherwise the control is disabled. */
export function selectPair(
  state: ViewState,
  stepA: number,
  stepB: number,
): ComparePair | null {
  const a = state.history[stepA];
  const b = state.history[stepB];
  if (!a || !b) return null;
  return { a, b };
}

export interface CompareLayout {
  zoom: number; // shared uniform scale, fit-to-pane
  width: number; // displayed size in CSS pixels (both images)
  height: number;
  // clip-path inset for the top (left-hand) image; the bottom image is full
  clipTop: string;
}

export function compareLayout(
  imageWidth: number,
  imageHeight: number,
  paneWidth: number,
  paneHeight: number,
  divider: number, // 0..1, fraction of the width showing image A
): CompareLayout {
  if (imageWidth <= 0 || imageHeight <= 0) {
    throw new Error(`image size ${imageWidth}x${imageHeight}`);
  }
  const d = Math.min(1, Math.max(0, divider));
  const zoom = Math.min(paneWidth / imageWidth, paneHeight / imageHeight);
  const rightCut = (1 - d) * 100;
  return {
    zoom,
    width: imageWidth * zoom,
    height: imageHeight * zoom,
    clipTop: `inset(0 ${rightCut}% 0 0)`,
  };
}

export function pngDataUrl(view: StateView): string {
  return `data:image/png;base64,${view.png_b64}`;
}
