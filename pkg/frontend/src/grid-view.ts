/** Pure presentation model for the session grid. */

import type { Cell, CellStatus, SessionSnapshot } from "./types.js";
import { cellKey, parseCellKey } from "./types.js";

export const STATUS_COLORS: Record<CellStatus, string> = {
  planned: "#9aa0a6",
  in_flight: "#f9ab00",
  captured: "#34a853",
  failed: "#ea4335",
};

export interface GridCellView {
  cell: Cell;
  status: CellStatus;
  color: string;
  selected: boolean;
  error: string | null;
}

export interface GridViewModel {
  cells: GridCellView[];
  bounds: { minI: number; minJ: number; maxI: number; maxJ: number };
  counts: Record<CellStatus, number>;
  progress: number;
  ratePerMin: number | null;
  etaMin: number | null;
  cursor: Cell | null;
}

export function buildGridView(
  snapshot: SessionSnapshot,
  cursor: Cell | null,
  statusOverride?: (cell: Cell) => CellStatus | undefined,
): GridViewModel {
  const cells: GridCellView[] = [];
  let minI = Infinity, minJ = Infinity, maxI = -Infinity, maxJ = -Infinity;
  for (const [key, state] of Object.entries(snapshot.cells)) {
    const cell = parseCellKey(key);
    const status = statusOverride?.(cell) ?? state.status;
    minI = Math.min(minI, cell[0]);
    maxI = Math.max(maxI, cell[0]);
    minJ = Math.min(minJ, cell[1]);
    maxJ = Math.max(maxJ, cell[1]);
    cells.push({
      cell,
      status,
      color: STATUS_COLORS[status],
      selected: cursor !== null && cellKey(cursor) === key,
      error: state.error,
    });
  }
  cells.sort((a, b) => a.cell[1] - b.cell[1] || a.cell[0] - b.cell[0]);
  return {
    cells,
    bounds: cells.length
      ? { minI, minJ, maxI, maxJ }
      : { minI: 0, minJ: 0, maxI: 0, maxJ: 0 },
    counts: snapshot.counts,
    progress: snapshot.progress,
    ratePerMin: snapshot.rate_per_min,
    etaMin: snapshot.eta_min,
    cursor,
  };
}

export function formatEta(etaMin: number | null): string {
  if (etaMin === null || !isFinite(etaMin)) return "—";
  if (etaMin < 1) return "<1 min";
  const h = Math.floor(etaMin / 60);
  const m = Math.round(etaMin % 60);
  return h > 0 ? `${h} h ${m} min` : `${m} min`;
}

export function formatRate(ratePerMin: number | null): string {
  return ratePerMin === null ? "—" : `${ratePerMin.toFixed(2)}/min`;
}
