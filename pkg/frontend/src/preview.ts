/** Glue between steering and the frame stream, plus display state. */

import { FrameStream, ParsedFrame, StreamStatus } from "./frame-stream.js";
import { KeyboardSteering } from "./steering.js";

export interface PreviewState {
  connection: StreamStatus;
  sourcePanoId: string | null;
  stalled: boolean;
  overlayMissing: boolean | null;
  lastFrameLatencyMs: number | null;
  frames: number;
}

export class PreviewController {
  state: PreviewState = {
    connection: "closed",
    sourcePanoId: null,
    stalled: false,
    overlayMissing: null,
    lastFrameLatencyMs: null,
    frames: 0,
  };
  private listeners: Array<(s: PreviewState, f: ParsedFrame | null) => void> = [];
  private sentAt = new Map<number, number>();

  constructor(
    private readonly stream: FrameStream,
    private readonly steering: KeyboardSteering,
    private readonly now: () => number = () => performance.now(),
  ) {
    steering.onPose((msg) => {
      if (this.stream.send(msg)) {
        this.sentAt.set(msg.t, this.now());
        if (this.sentAt.size > 256) {
          const oldest = this.sentAt.keys().next().value as number;
          this.sentAt.delete(oldest);
        }
      }
    });
    stream.onStatus((s) => {
      this.state.connection = s;
      this.notify(null);
    });
    stream.onFrame((frame) => {
      const sent = this.sentAt.get(frame.header.t);
      this.sentAt.delete(frame.header.t);
      this.state = {
        ...this.state,
        sourcePanoId: frame.header.source_pano_id,
        stalled: frame.header.stalled,
        overlayMissing: frame.header.overlay_missing ?? null,
        lastFrameLatencyMs: sent === undefined ? null : this.now() - sent,
        frames: this.state.frames + 1,
      };
      this.notify(frame);
    });
  }

  onUpdate(listener: (s: PreviewState, f: ParsedFrame | null) => void): void {
    this.listeners.push(listener);
  }

  start(): void {
    this.stream.connect();
    this.steering.start();
  }

  stop(): void {
    this.steering.stop();
    this.stream.close();
  }

  private notify(frame: ParsedFrame | null): void {
    for (const l of this.listeners) l(this.state, frame);
  }
}
