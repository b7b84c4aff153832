// Mutation serialization: never two in flight, failures don't wedge the line.

import { describe, expect, it } from "vitest";
import { MutationQueue } from "../src/queue.js";

function gate<T>(): { promise: Promise<T>; resolve: (v: T) => void; reject: (e: unknown) => void } {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

describe("MutationQueue", () => {
  it("does not start the second task until the first settles", async () => {
    const queue = new MutationQueue();
    const order: string[] = [];
    const first = gate<void>();

    const p1 = queue.run(async () => {
      order.push("start1");
      await first.promise;
      order.push("end1");
    });
    const p2 = queue.run(async () => {
      order.push("start2");
    });

    await new Promise((r) => setTimeout(r, 0));
    expect(order).toEqual(["start1"]); // second queued, not started
    first.resolve();
    await Promise.all([p1, p2]);
    expect(order).toEqual(["start1", "end1", "start2"]);
  });

  it("runs queued work even when the previous task rejected", async () => {
    const queue = new MutationQueue();
    const boom = queue.run(async () => {
      throw new Error("step failed");
    });
    await expect(boom).rejects.toThrow("step failed");
    const ok = await queue.run(async () => "recovered");
    expect(ok).toBe("recovered");
  });

  it("returns each task's own result", async () => {
    const queue = new MutationQueue();
    const results = await Promise.all([
      queue.run(async () => 1),
      queue.run(async () => 2),
      queue.run(async () => 3),
    ]);
    expect(results).toEqual([1, 2, 3]);
  });
});
