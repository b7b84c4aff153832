// Transport-level contract: URLs, methods, bodies, error surfacing, and the
// no-client-image-math invariant (payload bytes pass through untouched).

import { describe, expect, it } from "vitest";
import { ApiError, StudioApi } from "../src/api.js";
import type { StateView } from "../src/types.js";

interface Captured {
  url: string;
  init?: RequestInit;
}

function stubView(step: number, png = "cGl4ZWxz"): StateView {
  return {
    step,
    png_b64: png,
    breakdown: { spa: 0, exp: 1, tva: 0, crl: 0, total: 100 },
    mean_reward: -100,
    metadata: {
      step,
      rf_applied: false,
      weights: { spa: 1, exp: 100, tva: 200, crl: 20 },
    },
  };
}

function apiWith(
  status: number,
  body: unknown,
): { api: StudioApi; calls: Captured[] } {
  const calls: Captured[] = [];
  const api = new StudioApi("http://svc", async (url, init) => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  });
  return { api, calls };
}

describe("StudioApi", () => {
  it("lists checkpoints with GET /checkpoints", async () => {
    const { api, calls } = apiWith(200, [
      { id: "demo", layers: 3, hidden: 8, actions: 27 },
    ]);
    const checkpoints = await api.listCheckpoints();
    expect(calls[0]?.url).toBe("http://svc/checkpoints");
    expect(calls[0]?.init?.method).toBe("GET");
    expect(checkpoints[0]?.id).toBe("demo");
  });

  it("creates sessions with multipart image + checkpoint fields", async () => {
    const { api, calls } = apiWith(201, { id: "s1", state: stubView(0) });
    const blob = new Blob([new Uint8Array([1, 2, 3])], { type: "image/png" });
    const result = await api.createSession(blob, "in.png", "demo", "sampled", 11);
    expect(calls[0]?.url).toBe("http://svc/sessions");
    expect(calls[0]?.init?.method).toBe("POST");
    const form = calls[0]?.init?.body as FormData;
    expect(form.get("checkpoint")).toBe("demo");
    expect(form.get("mode")).toBe("sampled");
    expect(form.get("seed")).toBe("11");
    expect((form.get("image") as File).name).toBe("in.png");
    expect(result.id).toBe("s1");
  });

  it("steps with a JSON apply_rf body", async () => {
    const { api, calls } = apiWith(200, stubView(1));
    await api.step("s1", true);
    expect(calls[0]?.url).toBe("http://svc/sessions/s1/step");
    expect(JSON.parse(calls[0]?.init?.body as string)).toEqual({ apply_rf: true });
  });

  it("rewinds with to_step", async () => {
    const { api, calls } = apiWith(200, stubView(1));
    await api.rewind("s1", 1);
    expect(calls[0]?.url).toBe("http://svc/sessions/s1/rewind");
    expect(JSON.parse(calls[0]?.init?.body as string)).toEqual({ to_step: 1 });
  });

  it("puts the full weights object and unwraps the echo", async () => {
    const weights = { spa: 2, exp: 50, tva: 100, crl: 10 };
    const { api, calls } = apiWith(200, { weights });
    const applied = await api.putWeights("s1", weights);
    expect(calls[0]?.url).toBe("http://svc/sessions/s1/weights");
    expect(calls[0]?.init?.method).toBe("PUT");
    expect(JSON.parse(calls[0]?.init?.body as string)).toEqual(weights);
    expect(applied).toEqual(weights);
  });

  it("reads stored states with GET /state/{k}", async () => {
    const { api, calls } = apiWith(200, stubView(2));
    const view = await api.getState("s1", 2);
    expect(calls[0]?.url).toBe("http://svc/sessions/s1/state/2");
    expect(view.step).toBe(2);
  });

  it("passes image payloads through byte-for-byte (no client image math)", async () => {
    const png = "AAAABBBBCCCCxyz+/=";
    const { api } = apiWith(200, stubView(1, png));
    const view = await api.step("s1", false);
    expect(view.png_b64).toBe(png);
  });

  it("surfaces the service error shape as a typed ApiError", async () => {
    const { api } = apiWith(400, { code: "bad_weights", message: "negative weight" });
    const error = await api.putWeights("s1", { spa: 1, exp: 1, tva: 1, crl: 1 }).catch(
      (e: unknown) => e,
    );
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).status).toBe(400);
    expect((error as ApiError).code).toBe("bad_weights");
    expect((error as ApiError).message).toBe("negative weight");
  });

  it("falls back to HTTP status for non-JSON error bodies", async () => {
    const api = new StudioApi(
      "http://svc",
      async () => new Response("boom", { status: 502 }),
    );
    const error = await api.step("s1", false).catch((e: unknown) => e);
    expect((error as ApiError).code).toBe("unknown");
    expect((error as ApiError).status).toBe(502);
  });
});
