// Typed client for the session service. Every displayed pixel and number the
// studio shows comes back through this module untouched; there is no image
// processing on the client side.

import type { CheckpointInfo, StateView, Weights } from "./types.js";

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type Fetcher = (url: string, init?: RequestInit) => Promise<Response>;

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (response.ok) {
    return (await response.json()) as T;
  }
  let code = "unknown";
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the fallback
  }
  throw new ApiError(response.status, code, message);
}

export interface CreateSessionResult {
  id: string;
  state: StateView;
}

export class StudioApi {
  constructor(
    private readonly base: string,
    private readonly fetcher: Fetcher = (url, init) => fetch(url, init),
  ) {}

  listCheckpoints(): Promise<CheckpointInfo[]> {
    return this.request<CheckpointInfo[]>("GET", "/checkpoints");
  }

  async createSession(
    image: Blob,
    filename: string,
    checkpoint: string,
    mode?: "greedy" | "sampled",
    seed?: number,
  ): Promise<CreateSessionResult> {
    const form = new FormData();
    form.append("image", image, filename);
    form.append("checkpoint", checkpoint);
    if (mode !== undefined) form.append("mode", mode);
    if (seed !== undefined) form.append("seed", String(seed));
    const response = await this.fetcher(`${this.base}/sessions`, {
      method: "POST",
      body: form,
    });
    return parseOrThrow<CreateSessionResult>(response);
  }

  step(sessionId: string, applyRf: boolean): Promise<StateView> {
    return this.request<StateView>("POST", `/sessions/${sessionId}/step`, {
      apply_rf: applyRf,
    });
  }

  rewind(sessionId: string, toStep: number): Promise<StateView> {
    return this.request<StateView>("POST", `/sessions/${sessionId}/rewind`, {
      to_step: toStep,
    });
  }

  async putWeights(sessionId: string, weights: Weights): Promise<Weights> {
    const body = await this.request<{ weights: Weights }>(
      "PUT",
      `/sessions/${sessionId}/weights`,
      weights,
    );
    return body.weights;
  }

  getState(sessionId: string, step: number): Promise<StateView> {
    return this.request<StateView>("GET", `/sessions/${sessionId}/state/${step}`);
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetcher(`${this.base}${path}`, init);
    return parseOrThrow<T>(response);
  }
}
