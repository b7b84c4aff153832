// DOM wiring for the studio shell. All state flows store -> render; the DOM
// handlers only call controller methods and never touch the view directly.

import { StudioApi } from "./api.js";
import { compareLayout, pngDataUrl, selectPair } from "./compare.js";
import { SessionController } from "./controller.js";
import type { ViewState } from "./store.js";
import { planThumbFetches } from "./thumbs.js";
import type { Weights } from "./types.js";
import { WeightPanel } from "./weights.js";

const API_BASE = (window as { RELIGHT_API?: string }).RELIGHT_API ?? "";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function renderToast(state: ViewState): void {
  const toast = el<HTMLDivElement>("toast");
  toast.textContent = state.toast ?? "";
  toast.style.display = state.toast ? "block" : "none";
}

function renderBreakdown(state: ViewState): void {
  const view = state.history[state.step];
  const table = el<HTMLTableSectionElement>("breakdown");
  if (!view) {
    table.innerHTML = "";
    return;
  }
  const rows = Object.entries(view.breakdown)
    .map(([name, value]) => `<tr><td>${name}</td><td>${value.toFixed(4)}</td></tr>`)
    .join("");
  table.innerHTML =
    rows + `<tr><td>mean reward</td><td>${view.mean_reward.toFixed(4)}</td></tr>`;
}

function renderThumbs(state: ViewState, controller: SessionController): void {
  const strip = el<HTMLDivElement>("thumbs");
  strip.innerHTML = "";
  const visible: number[] = [];
  for (let k = 0; k <= state.step; k++) visible.push(k);
  for (const k of visible) {
    const view = state.history[k];
    const cell = document.createElement("button");
    cell.className = "thumb";
    cell.textContent = `s${k}`;
    if (view) {
      const img = document.createElement("img");
      img.src = pngDataUrl(view);
      img.alt = `step ${k}`;
      cell.prepend(img);
    }
    cell.addEventListener("click", () => {
      selectA = selectB;
      selectB = k;
      renderCompare(state);
    });
    strip.appendChild(cell);
  }
  for (const k of planThumbFetches(state, visible)) void controller.fetchState(k);
}

let selectA = 0;
let selectB = 0;
let divider = 0.5;

function renderCompare(state: ViewState): void {
  const pane = el<HTMLDivElement>("compare");
  const pair = selectPair(state, selectA, selectB);
  const status = el<HTMLDivElement>("compare-label");
  if (!pair) {
    status.textContent = "select two fetched steps to compare";
    return;
  }
  status.textContent = `step ${selectA} vs step ${selectB}`;
  const below = el<HTMLImageElement>("compare-b");
  const above = el<HTMLImageElement>("compare-a");
  below.src = pngDataUrl(pair.b);
  above.src = pngDataUrl(pair.a);
  const probe = new Image();
  probe.onload = () => {
    const layout = compareLayout(
      probe.naturalWidth,
      probe.naturalHeight,
      pane.clientWidth,
      pane.clientHeight,
      divider,
    );
    for (const img of [below, above]) {
      img.style.width = `${layout.width}px`;
      img.style.height = `${layout.height}px`;
    }
    above.style.clipPath = layout.clipTop;
  };
  probe.src = pngDataUrl(pair.a);
}

function currentWeights(): Weights {
  return {
    spa: Number(el<HTMLInputElement>("w-spa").value),
    exp: Number(el<HTMLInputElement>("w-exp").value),
    tva: Number(el<HTMLInputElement>("w-tva").value),
    crl: Number(el<HTMLInputElement>("w-crl").value),
  };
}

export function boot(): void {
  const api = new StudioApi(API_BASE);
  const controller = new SessionController(api);
  const panel = new WeightPanel((weights) => void controller.reweight(weights));

  controller.store.subscribe((state) => {
    renderToast(state);
    renderBreakdown(state);
    renderThumbs(state, controller);
    renderCompare(state);
    el<HTMLSpanElement>("step-label").textContent = `step ${state.step}`;
  });

  void api.listCheckpoints().then((checkpoints) => {
    const select = el<HTMLSelectElement>("checkpoint");
    for (const ck of checkpoints) {
      const option = document.createElement("option");
      option.value = ck.id;
      option.textContent = `${ck.id} (${ck.layers} layers)`;
      select.appendChild(option);
    }
  });

  el<HTMLFormElement>("create-form").addEventListener("submit", (ev) => {
    ev.preventDefault();
    const file = el<HTMLInputElement>("image").files?.[0];
    if (!file) return;
    const checkpoint = el<HTMLSelectElement>("checkpoint").value;
    const sampled = el<HTMLInputElement>("sampled").checked;
    const seedRaw = el<HTMLInputElement>("seed").value;
    void controller.create(
      file,
      file.name,
      checkpoint,
      sampled ? "sampled" : "greedy",
      sampled && seedRaw !== "" ? Number(seedRaw) : undefined,
    );
  });

  el<HTMLButtonElement>("forward").addEventListener("click", () => {
    void controller.forward(el<HTMLInputElement>("apply-rf").checked);
  });
  el<HTMLButtonElement>("back").addEventListener("click", () => {
    const to = Math.max(0, controller.store.state.step - 1);
    void controller.rewind(to);
  });

  for (const id of ["w-spa", "w-exp", "w-tva", "w-crl"]) {
    el<HTMLInputElement>(id).addEventListener("input", () =>
      panel.change(currentWeights()),
    );
  }

  const pane = el<HTMLDivElement>("compare");
  pane.addEventListener("pointermove", (ev) => {
    if (ev.buttons !== 1) return;
    const rect = pane.getBoundingClientRect();
    divider = (ev.clientX - rect.left) / rect.width;
    renderCompare(controller.store.state);
  });
}

boot();
