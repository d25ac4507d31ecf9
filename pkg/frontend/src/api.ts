/** Thin client for the capture endpoints; all session mutations go
 * through here and nowhere else. */

import type { Cell, SessionSnapshot } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface TriggerResult {
  ok: boolean;
  status: number;
  commandId?: string;
  detail?: string;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (...a) => fetch(...a),
  ) {}

  async getSession(): Promise<SessionSnapshot> {
    const resp = await this.fetchFn(`${this.baseUrl}/capture/session`);
    if (!resp.ok) throw new Error(`session fetch failed: ${resp.status}`);
    return (await resp.json()) as SessionSnapshot;
  }

  async plan(cells: Cell[]): Promise<{ added: number }> {
    const resp = await this.fetchFn(`${this.baseUrl}/capture/plan`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ cells }),
    });
    if (!resp.ok) throw new Error(`plan failed: ${resp.status}`);
    return (await resp.json()) as { added: number };
  }

  /** 409 (already captured / in flight) and 502 (camera unreachable) come
   * back as a non-ok result rather than an exception: the grid shows them
   * as warnings without corrupting state. */
  async trigger(cell: Cell): Promise<TriggerResult> {
    const resp = await this.fetchFn(`${this.baseUrl}/capture/trigger`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ cell }),
    });
    const body = (await resp.json().catch(() => ({}))) as Record<string, unknown>;
    if (resp.ok) {
      return { ok: true, status: resp.status, commandId: String(body["command_id"] ?? "") };
    }
    return { ok: false, status: resp.status, detail: String(body["detail"] ?? "") };
  }

  async mark(cell: Cell, file: string): Promise<void> {
    const resp = await this.fetchFn(`${this.baseUrl}/capture/mark`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ cell, file }),
    });
    if (!resp.ok) throw new Error(`mark failed: ${resp.status}`);
  }

  async datasetInfo(): Promise<Record<string, unknown> | null> {
    const resp = await this.fetchFn(`${this.baseUrl}/dataset/info`);
    if (!resp.ok) return null;
    return (await resp.json()) as Record<string, unknown>;
  }
}
