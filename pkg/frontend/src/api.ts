// Thin client over the feedback service. Submission retries on network
// failure; the query id makes retries idempotent, so a 409 after a dropped
// acknowledgment counts as success.

import type { PendingResponse, QueryPayload, SafetyLabel, StatusResponse } from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface SubmitResult {
  accepted: boolean;
  alreadyAnswered: boolean;
}

export class FeedbackApi {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  async status(): Promise<StatusResponse> {
    return this.getJson(`${this.base}/api/status`);
  }

  async pendingQueries(): Promise<string[]> {
    const body = (await this.getJson(`${this.base}/api/queries`)) as PendingResponse;
    return body.pending;
  }

  async fetchQuery(queryId: string): Promise<QueryPayload> {
    return this.getJson(`${this.base}/api/queries/${encodeURIComponent(queryId)}`);
  }

  async submitLabels(
    queryId: string,
    labels: SafetyLabel[],
    retries = 3,
    backoffMs = 500,
  ): Promise<SubmitResult> {
    let lastError: unknown = null;
    for (let attempt = 0; attempt <= retries; attempt++) {
      let resp: Response;
      try {
        resp = await this.fetchImpl(
          `${this.base}/api/queries/${encodeURIComponent(queryId)}/labels`,
          {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ labels }),
          },
        );
      } catch (err) {
        lastError = err;
        await sleep(backoffMs * (attempt + 1));
        continue;
      }
      if (resp.status === 200) return { accepted: true, alreadyAnswered: false };
      if (resp.status === 409) return { accepted: true, alreadyAnswered: true };
      throw new Error(`label submission rejected (${resp.status}): ${await resp.text()}`);
    }
    throw new Error(`label submission failed after ${retries + 1} attempts: ${lastError}`);
  }

  private async getJson(url: string): Promise<any> {
    const resp = await this.fetchImpl(url);
    if (!resp.ok) throw new Error(`GET ${url} failed (${resp.status})`);
    return resp.json();
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
