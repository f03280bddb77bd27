// Client for the harmonization service. One generate request in flight at a
// time; callers see a typed ok/error result instead of thrown fetch errors.

import {
  HarmonizeRequestBody,
  HarmonizeResponseBody,
  ModelInfo,
  ServiceError,
} from "./types";

export type HarmonizeOutcome =
  | { ok: true; data: HarmonizeResponseBody }
  | { ok: false; status: number; error: ServiceError };

export class ServiceClient {
  private baseUrl: string;
  private inFlight = false;

  constructor(baseUrl = "") {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  get busy(): boolean {
    return this.inFlight;
  }

  async health(): Promise<{ status: string; version: string }> {
    const response = await fetch(`${this.baseUrl}/api/v1/health`);
    return (await response.json()) as { status: string; version: string };
  }

  async models(): Promise<ModelInfo[]> {
    const response = await fetch(`${this.baseUrl}/api/v1/models`);
    const payload = (await response.json()) as { models: ModelInfo[] };
    return payload.models;
  }

  async harmonize(body: HarmonizeRequestBody): Promise<HarmonizeOutcome> {
    if (this.inFlight) {
      return {
        ok: false,
        status: 0,
        error: { error: "busy", detail: "a generate request is already in flight" },
      };
    }
    this.inFlight = true;
    try {
      const response = await fetch(`${this.baseUrl}/api/v1/harmonize`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
      const payload = (await response.json()) as unknown;
      if (response.status === 200) {
        return { ok: true, data: payload as HarmonizeResponseBody };
      }
      return { ok: false, status: response.status, error: payload as ServiceError };
    } catch (err) {
      return {
        ok: false,
        status: 0,
        error: { error: "network", detail: (err as Error).message },
      };
    } finally {
      this.inFlight = false;
    }
  }
}
