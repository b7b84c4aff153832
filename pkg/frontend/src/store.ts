// Session state as a pure function of the API response log. Every event is
// an API response (or error); replaying the same log always rebuilds the
// same view, and nothing in here ever synthesizes image data.

import type { StateView, Weights } from "./types.js";

export type ApiEvent =
  | { kind: "created"; sessionId: string; state: StateView }
  | { kind: "stepped"; state: StateView }
  | { kind: "rewound"; state: StateView }
  | { kind: "reweighted"; weights: Weights }
  | { kind: "fetched"; state: StateView }
  | { kind: "failed"; code: string; message: string };

export interface ViewState {
  sessionId: string | null;
  step: number;
  // index k holds the server's view of state k; slots above the cursor are
  // dropped on rewind (the server is the single source of truth), and slots
  // below it may be empty until a lazy fetch backfills them.
  history: (StateView | undefined)[];
  weights: Weights | null;
  toast: string | null;
}

export function initialState(): ViewState {
  return { sessionId: null, step: 0, history: [], weights: null, toast: null };
}

export function applyEvent(state: ViewState, event: ApiEvent): ViewState {
  switch (event.kind) {
    case "created": {
      const history: (StateView | undefined)[] = [];
      history[event.state.step] = event.state;
      return {
        sessionId: event.sessionId,
        step: event.state.step,
        history,
        weights: event.state.metadata.weights,
        toast: null,
      };
    }
    case "stepped": {
      const history = state.history.slice();
      history[event.state.step] = event.state;
      return {
        ...state,
        step: event.state.step,
        history,
        weights: event.state.metadata.weights,
        toast: null,
      };
    }
    case "rewound": {
      const history = state.history.slice(0, event.state.step + 1);
      history[event.state.step] = event.state;
      return { ...state, step: event.state.step, history, toast: null };
    }
    case "reweighted":
      return { ...state, weights: event.weights, toast: null };
    case "fetched": {
      if (event.state.step > state.step) return state; // stale read past cursor
      const history = state.history.slice();
      history[event.state.step] = event.state;
      return { ...state, history, toast: null };
    }
    case "failed":
      // the view's session data is untouched; only the toast surfaces
      return { ...state, toast: event.message };
  }
}

export function reduce(events: readonly ApiEvent[]): ViewState {
  let state = initialState();
  for (const event of events) state = applyEvent(state, event);
  return state;
}

export class SessionStore {
  private log: ApiEvent[] = [];
  private listeners: ((state: ViewState) => void)[] = [];
  private current: ViewState = initialState();

  get state(): ViewState {
    return this.current;
  }

  get events(): readonly ApiEvent[] {
    return this.log;
  }

  append(event: ApiEvent): ViewState {
    this.log.push(event);
    this.current = applyEvent(this.current, event);
    for (const listener of this.listeners) listener(this.current);
    return this.current;
  }

  subscribe(listener: (state: ViewState) => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }
}
