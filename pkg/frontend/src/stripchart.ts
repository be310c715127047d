// Live capacitance strip chart: one polyline per scan line, the current
// line highlighted. Point layout is a pure function for testability.

import { TracePoint } from "./state.js";

export interface ChartLayout {
  points: { x: number; y: number }[][];
  vmin: number;
  vmax: number;
}

export function layoutTraces(
  traces: TracePoint[][],
  width: number,
  height: number,
  pad = 24,
): ChartLayout {
  let vmin = Infinity;
  let vmax = -Infinity;
  let maxAlong = 1;
  for (const trace of traces) {
    for (const p of trace) {
      vmin = Math.min(vmin, p.calibratedPf);
      vmax = Math.max(vmax, p.calibratedPf);
      maxAlong = Math.max(maxAlong, p.alongTrackMm);
    }
  }
  if (!isFinite(vmin)) {
    vmin = 0;
    vmax = 1;
  }
  if (vmax - vmin < 1e-6) vmax = vmin + 1e-6;
  const points = traces.map((trace) =>
    trace.map((p) => ({
      x: pad + (p.alongTrackMm / maxAlong) * (width - 2 * pad),
      y: height - pad - ((p.calibratedPf - vmin) / (vmax - vmin)) * (height - 2 * pad),
    })),
  );
  return { points, vmin, vmax };
}

export class StripChart {
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext("2d")!;
  }

  draw(traces: Map<number, TracePoint[]>, currentLine: number | null) {
    const { width, height } = this.canvas;
    const ctx = this.ctx;
    ctx.fillStyle = "#141a20";
    ctx.fillRect(0, 0, width, height);

    const ids = [...traces.keys()].sort((a, b) => a - b);
    const layout = layoutTraces(ids.map((id) => traces.get(id)!), width, height);
    ctx.strokeStyle = "#33404d";
    ctx.strokeRect(24, 24, width - 48, height - 48);
    ctx.fillStyle = "#8aa";
    ctx.font = "11px sans-serif";
    ctx.fillText(`${layout.vmax.toFixed(4)} pF`, 4, 20);
    ctx.fillText(`${layout.vmin.toFixed(4)} pF`, 4, height - 8);

    ids.forEach((id, i) => {
      const pts = layout.points[i];
      if (!pts.length) return;
      ctx.strokeStyle = id === currentLine ? "#4dd0e1" : `hsl(${(id * 57) % 360} 50% 55%)`;
      ctx.lineWidth = id === currentLine ? 2 : 1;
      ctx.beginPath();
      pts.forEach((p, j) => (j === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
      ctx.stroke();
      for (const p of pts) {
        ctx.fillStyle = ctx.strokeStyle as string;
        ctx.fillRect(p.x - 1.5, p.y - 1.5, 3, 3);
      }
    });
  }
}
