/** Wire types of the simulator service this console talks to. */

export type CellStatus = "planned" | "in_flight" | "captured" | "failed";

export interface CellState {
  status: CellStatus;
  file: string | null;
  captured_at: string | null;
  error: string | null;
}

/** Payload of GET /capture/session. Cell keys are "i,j". */
export interface SessionSnapshot {
  version: number;
  cell_size_m: number;
  started_at: string;
  history: string[];
  cells: Record<string, CellState>;
  counts: Record<CellStatus, number>;
  rate_per_min: number | null;
  eta_min: number | null;
  progress: number;
}

/** JSON header of a binary stream frame. */
export interface FrameHeader {
  seq: number;
  t: number;
  source_pano_id: string;
  stalled: boolean;
  encode: "png" | "jpeg";
  overlay_missing?: boolean;
}

/** Client -> server pose message on WS /stream. */
export interface PoseMessage {
  t: number;
  x: number;
  y: number;
  z: number;
  yaw: number;
  pitch: number;
  roll: number;
  vx: number;
  vy: number;
  want_frame: boolean;
}

export interface StreamHandshake {
  width: number;
  height: number;
  hfov: number;
  encode?: "png" | "jpeg";
  interp?: boolean;
  lambda?: number;
}

export type Cell = [number, number];

export function cellKey(cell: Cell): string {
  return `${cell[0]},${cell[1]}`;
}

export function parseCellKey(key: string): Cell {
  const [i, j] = key.split(",").map(Number);
  return [i, j];
}
