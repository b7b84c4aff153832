// Orchestration: API calls feed the response log; the view never updates from
// anything else. Mutations are serialized per session through the queue, so
// a double-clicked Step can never interleave with a rewind.

import { ApiError, StudioApi } from "./api.js";
import { MutationQueue } from "./queue.js";
import { SessionStore } from "./store.js";
import type { Weights } from "./types.js";

export class SessionController {
  readonly store = new SessionStore();
  private readonly queue = new MutationQueue();

  constructor(private readonly api: StudioApi) {}

  private fail(error: unknown): void {
    if (error instanceof ApiError) {
      this.store.append({ kind: "failed", code: error.code, message: error.message });
    } else {
      const message = error instanceof Error ? error.message : String(error);
      this.store.append({ kind: "failed", code: "transport", message });
    }
  }

  async create(
    image: Blob,
    filename: string,
    checkpoint: string,
    mode?: "greedy" | "sampled",
    seed?: number,
  ): Promise<void> {
    try {
      const body = await this.queue.run(() =>
        this.api.createSession(image, filename, checkpoint, mode, seed),
      );
      this.store.append({ kind: "created", sessionId: body.id, state: body.state });
    } catch (error) {
      this.fail(error);
    }
  }

  private get sessionId(): string {
    const id = this.store.state.sessionId;
    if (id === null) throw new Error("no live session");
    return id;
  }

  async forward(applyRf: boolean): Promise<void> {
    try {
      const state = await this.queue.run(() => this.api.step(this.sessionId, applyRf));
      this.store.append({ kind: "stepped", state });
    } catch (error) {
      this.fail(error);
    }
  }

  async rewind(toStep: number): Promise<void> {
    try {
      const state = await this.queue.run(() => this.api.rewind(this.sessionId, toStep));
      this.store.append({ kind: "rewound", state });
    } catch (error) {
      this.fail(error);
    }
  }

  async reweight(weights: Weights): Promise<void> {
    try {
      const applied = await this.queue.run(() =>
        this.api.putWeights(this.sessionId, weights),
      );
      this.store.append({ kind: "reweighted", weights: applied });
    } catch (error) {
      this.fail(error);
    }
  }

  /** Read path: bypasses the mutation queue, backfills the log on arrival. */
  async fetchState(step: number): Promise<void> {
    try {
      const state = await this.api.getState(this.sessionId, step);
      this.store.append({ kind: "fetched", state });
    } catch (error) {
      this.fail(error);
    }
  }
}
