// Heatmap canvas painter: pure RGBA rendering lives in colormap.ts so
// tests can compare buffers against server-rendered PNGs byte-for-byte.

import { renderHeatmapRGBA } from "./colormap.js";
import { DetectionDoc } from "./protocol.js";
import { HeatmapState } from "./state.js";

export const HEATMAP_SCALE = 4;

export function heatmapRGBA(heatmap: HeatmapState, scale = HEATMAP_SCALE) {
  const [vmin, rawVmax] = heatmap.valueRange;
  // the server's renderer widens a degenerate range the same way
  const vmax = rawVmax > vmin ? rawVmax : vmin + 1.0;
  return renderHeatmapRGBA(heatmap.rows, vmin, vmax, scale);
}

export class HeatmapView {
  private ctx: CanvasRenderingContext2D;

  constructor(private canvas: HTMLCanvasElement) {
    this.ctx = canvas.getContext("2d")!;
  }

  draw(heatmap: HeatmapState | null, detections: DetectionDoc[]) {
    if (!heatmap) {
      this.canvas.width = 320;
      this.canvas.height = 60;
      this.ctx.fillStyle = "#202830";
      this.ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
      this.ctx.fillStyle = "#8aa";
      this.ctx.fillText("no image yet - finish a scan line", 10, 32);
      return;
    }
    const { width, height, data } = heatmapRGBA(heatmap);
    this.canvas.width = width;
    this.canvas.height = height;
    this.ctx.putImageData(new ImageData(data, width, height), 0, 0);

    // detection overlay, image frame -> pixels
    const sx = HEATMAP_SCALE / heatmap.xPitchMm;
    const sy = HEATMAP_SCALE / heatmap.yPitchMm;
    this.ctx.lineWidth = 2;
    this.ctx.font = "12px sans-serif";
    for (const det of detections) {
      const [x0, y0, x1, y1] = det.bbox_mm;
      const px = (x0 - heatmap.originMm[0]) * sx;
      const py = (y0 - heatmap.originMm[1]) * sy;
      const color = det.klass === "metal" ? "#ff5252" : det.klass === "wood" ? "#ffb74d" : "#eeeeee";
      this.ctx.strokeStyle = color;
      this.ctx.strokeRect(px, py, (x1 - x0) * sx, (y1 - y0) * sy);
      this.ctx.fillStyle = color;
      this.ctx.fillText(
        `${det.klass} ${det.yaw_deg.toFixed(0)}°`,
        px + 4,
        Math.max(py - 4, 12),
      );
    }
  }
}
