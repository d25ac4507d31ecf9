/** WebSocket frame stream: handshake, binary frame parsing, reconnect.
 *
 * A binary frame is a 4-byte big-endian header length, a JSON header,
 * then the encoded image payload. The server applies latest-wins to
 * pose requests; the client additionally drops anything out of order so
 * the displayed frame always matches the newest request it has seen.
 */

import type { FrameHeader, PoseMessage, StreamHandshake } from "./types.js";

/** Structural subset of the browser WebSocket, also satisfied by test
 * doubles. Handler parameter types are `any` so the native socket's
 * `this`-bound event signatures remain assignable. */
export interface WebSocketLike {
  binaryType: string;
  readyState: number;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onopen: ((ev: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onmessage: ((ev: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onclose: ((ev: any) => void) | null;
  // eslint-disable-next-line @typescript-eslint/no-explicit-any
  onerror: ((ev: any) => void) | null;
  send(data: string): void;
  close(): void;
}

export type StreamStatus = "connecting" | "open" | "reconnecting" | "closed";

export interface ParsedFrame {
  header: FrameHeader;
  payload: Uint8Array;
}

export function parseFrameMessage(buf: ArrayBuffer): ParsedFrame {
  const view = new DataView(buf);
  const headerLen = view.getUint32(0, false);
  const headerBytes = new Uint8Array(buf, 4, headerLen);
  const header = JSON.parse(new TextDecoder().decode(headerBytes)) as FrameHeader;
  return { header, payload: new Uint8Array(buf, 4 + headerLen) };
}

const DEFAULT_BACKOFF_MS = [250, 500, 1000, 2000, 5000];

export class FrameStream {
  status: StreamStatus = "closed";
  lastError: string | null = null;
  private ws: WebSocketLike | null = null;
  private frameListeners: Array<(f: ParsedFrame) => void> = [];
  private statusListeners: Array<(s: StreamStatus) => void> = [];
  private lastSeq = 0;
  private attempts = 0;
  private closedByUser = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly url: string,
    private readonly handshake: StreamHandshake,
    private readonly wsFactory: (url: string) => WebSocketLike,
    private readonly backoffMs: number[] = DEFAULT_BACKOFF_MS,
  ) {}

  onFrame(listener: (f: ParsedFrame) => void): void {
    this.frameListeners.push(listener);
  }

  onStatus(listener: (s: StreamStatus) => void): void {
    this.statusListeners.push(listener);
  }

  connect(): void {
    this.closedByUser = false;
    this.open();
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) clearTimeout(this.reconnectTimer);
    this.ws?.close();
    this.setStatus("closed");
  }

  /** Sends a pose message; silently dropped while disconnected (pose state
   * lives with the steering, so nothing is lost across reconnects). */
  send(pose: PoseMessage): boolean {
    if (this.ws === null || this.status !== "open") return false;
    this.ws.send(JSON.stringify(pose));
    return true;
  }

  private open(): void {
    this.setStatus(this.attempts === 0 ? "connecting" : "reconnecting");
    const ws = this.wsFactory(this.url);
    this.ws = ws;
    ws.binaryType = "arraybuffer";
    ws.onopen = (): void => {
      this.attempts = 0;
      // t must be strictly increasing per connection; seq restarts too
      this.lastSeq = 0;
      ws.send(JSON.stringify(this.handshake));
      this.setStatus("open");
    };
    ws.onmessage = (ev: { data: unknown }) => {
      if (typeof ev.data === "string") {
        try {
          const doc = JSON.parse(ev.data) as { error?: string };
          if (doc.error) this.lastError = doc.error;
        } catch {
          this.lastError = ev.data;
        }
        return;
      }
      const frame = parseFrameMessage(ev.data as ArrayBuffer);
      if (frame.header.seq <= this.lastSeq) return; // stale
      this.lastSeq = frame.header.seq;
      for (const l of this.frameListeners) l(frame);
    };
    ws.onclose = () => {
      if (this.closedByUser) return;
      const delay = this.backoffMs[Math.min(this.attempts, this.backoffMs.length - 1)];
      this.attempts += 1;
      this.setStatus("reconnecting");
      this.reconnectTimer = setTimeout(() => this.open(), delay);
    };
    ws.onerror = () => {
      // onclose follows; nothing else to do
    };
  }

  private setStatus(s: StreamStatus): void {
    if (s === this.status) return;
    this.status = s;
    for (const l of this.statusListeners) l(s);
  }
}
