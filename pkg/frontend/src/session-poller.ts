/** Keeps a local mirror of the capture session by polling the service.
 *
 * Capture cadence is tens of seconds per photo, so a 2 s poll is plenty.
 * A trigger marks the cell in_flight optimistically; every successful
 * refresh replaces local state wholesale with the server payload, so the
 * mirror can never drift for longer than one poll cycle.
 */

import { ApiClient } from "./api.js";
import type { Cell, CellStatus, SessionSnapshot } from "./types.js";
import { cellKey } from "./types.js";

export type PollerEvent =
  | { kind: "session"; snapshot: SessionSnapshot }
  | { kind: "warning"; message: string }
  | { kind: "error"; message: string }
  | { kind: "offline" }
  | { kind: "online" };

export class SessionPoller {
  snapshot: SessionSnapshot | null = null;
  online = false;
  private announcedOffline = false;
  private optimistic = new Map<string, CellStatus>();
  private listeners: Array<(ev: PollerEvent) => void> = [];
  private timer: ReturnType<typeof setTimeout> | null = null;
  private stopped = true;

  constructor(
    private readonly api: ApiClient,
    private readonly intervalMs: number = 2000,
  ) {}

  onEvent(listener: (ev: PollerEvent) => void): void {
    this.listeners.push(listener);
  }

  start(): void {
    this.stopped = false;
    void this.cycle();
  }

  stop(): void {
    this.stopped = true;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  /** Effective status of a cell: server truth overlaid with any optimistic
   * mark made since the last refresh. */
  statusOf(cell: Cell): CellStatus | undefined {
    const key = cellKey(cell);
    return this.optimistic.get(key) ?? this.snapshot?.cells[key]?.status;
  }

  async refresh(): Promise<void> {
    try {
      const snapshot = await this.api.getSession();
      this.snapshot = snapshot;
      this.optimistic.clear(); // server payload is the truth
      this.announcedOffline = false;
      if (!this.online) {
        this.online = true;
        this.emit({ kind: "online" });
      }
      this.emit({ kind: "session", snapshot });
    } catch {
      this.online = false;
      if (!this.announcedOffline) {
        this.announcedOffline = true;
        this.emit({ kind: "offline" });
      }
    }
  }

  /** Trigger a capture; failed cells are re-triggered (the service retries
   * them), conflicts surface as warnings and never touch local state. */
  async trigger(cell: Cell): Promise<boolean> {
    const result = await this.api.trigger(cell).catch((e) => ({
      ok: false,
      status: 0,
      detail: String(e),
    }));
    if (result.ok) {
      this.optimistic.set(cellKey(cell), "in_flight");
      if (this.snapshot) this.emit({ kind: "session", snapshot: this.snapshot });
      return true;
    }
    if (result.status === 409) {
      this.emit({ kind: "warning", message: `cell ${cellKey(cell)}: ${result.detail}` });
    } else {
      this.emit({ kind: "error", message: `trigger failed (${result.status}): ${result.detail}` });
    }
    return false;
  }

  private async cycle(): Promise<void> {
    if (this.stopped) return;
    await this.refresh();
    if (this.stopped) return;
    this.timer = setTimeout(() => void this.cycle(), this.intervalMs);
  }

  private emit(ev: PollerEvent): void {
    for (const l of this.listeners) l(ev);
  }
}
