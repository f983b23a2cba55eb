import { describe, expect, it, vi } from "vitest";

import { FeedbackApi } from "../src/api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("FeedbackApi", () => {
  it("lists pending query ids", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse({ pending: ["a", "b"] }));
    const api = new FeedbackApi("", fetchImpl);
    expect(await api.pendingQueries()).toEqual(["a", "b"]);
    expect(fetchImpl).toHaveBeenCalledWith("/api/queries");
  });

  it("fetches a query payload by id", async () => {
    const payload = { query_id: "q1", segments: [[0, 4]] };
    const fetchImpl = vi.fn(async (url: string) => {
      expect(url).toBe("/api/queries/q1");
      return jsonResponse(payload);
    });
    const api = new FeedbackApi("", fetchImpl);
    expect(await api.fetchQuery("q1")).toEqual(payload);
  });

  it("posts labels and reports acceptance", async () => {
    const fetchImpl = vi.fn(async (url: string, init?: RequestInit) => {
      expect(url).toBe("/api/queries/q1/labels");
      expect(JSON.parse(String(init?.body))).toEqual({ labels: [1, 0, 1] });
      return jsonResponse({ accepted: true });
    });
    const api = new FeedbackApi("", fetchImpl);
    const result = await api.submitLabels("q1", [1, 0, 1]);
    expect(result).toEqual({ accepted: true, alreadyAnswered: false });
  });

  it("treats a 409 as already answered (idempotent resubmission)", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse({ detail: "duplicate" }, 409));
    const api = new FeedbackApi("", fetchImpl);
    const result = await api.submitLabels("q1", [1]);
    expect(result).toEqual({ accepted: true, alreadyAnswered: true });
  });

  it("retries submission after a network failure", async () => {
    let calls = 0;
    const fetchImpl = vi.fn(async () => {
      calls += 1;
      if (calls === 1) throw new TypeError("network down");
      return jsonResponse({ accepted: true });
    });
    const api = new FeedbackApi("", fetchImpl);
    const result = await api.submitLabels("q1", [0], 3, 1);
    expect(result.accepted).toBe(true);
    expect(calls).toBe(2);
  });

  it("gives up after exhausting retries", async () => {
    const fetchImpl = vi.fn(async () => {
      throw new TypeError("network down");
    });
    const api = new FeedbackApi("", fetchImpl);
    await expect(api.submitLabels("q1", [0], 1, 1)).rejects.toThrow(/failed after 2 attempts/);
  });

  it("surfaces a 422 as an error (no silent label loss)", async () => {
    const fetchImpl = vi.fn(async () => jsonResponse({ detail: "expected 3 labels" }, 422));
    const api = new FeedbackApi("", fetchImpl);
    await expect(api.submitLabels("q1", [1])).rejects.toThrow(/rejected \(422\)/);
  });
});
