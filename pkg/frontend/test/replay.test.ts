// The console is a pure view of the message log: replaying a recorded
// session must reproduce the heatmap pixel-for-pixel against the PNG the
// batch pipeline rendered for the same session, and tick arithmetic must
// match the encoder.

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { PNG } from "pngjs";
import { describe, expect, it } from "vitest";

import { HEATMAP_SCALE, heatmapRGBA } from "../src/heatmap.js";
import { ServerMessage } from "../src/protocol.js";
import { replay, tracePoints } from "../src/state.js";

const FIXTURES = join(__dirname, "fixtures");

function loadLog(name: string): ServerMessage[] {
  return JSON.parse(readFileSync(join(FIXTURES, name), "utf-8"));
}

describe("fig9 session replay", () => {
  const state = replay(loadLog("fig9_log.json"));

  it("accumulates five full scan lines", () => {
    expect(state.traces.size).toBe(5);
    for (const [, points] of state.traces) {
      expect(points.length).toBe(23);
    }
  });

  it("renders the heatmap pixel-equal to the batch pipeline PNG", () => {
    expect(state.heatmap).not.toBeNull();
    const meta = JSON.parse(
      readFileSync(join(FIXTURES, "fig9_cli.meta.json"), "utf-8"),
    );
    expect(meta.scale).toBe(HEATMAP_SCALE);
    // live color scale is the server-declared value range; it must agree
    // with the exported image's recorded mapping
    expect(state.heatmap!.valueRange[0]).toBeCloseTo(meta.vmin, 12);
    expect(state.heatmap!.valueRange[1]).toBeCloseTo(meta.vmax, 12);

    const rendered = heatmapRGBA(state.heatmap!, meta.scale);
    const png = PNG.sync.read(readFileSync(join(FIXTURES, "fig9_cli.png")));
    expect(rendered.width).toBe(png.width);
    expect(rendered.height).toBe(png.height);
    expect(rendered.data.length).toBe(png.data.length);
    let mismatches = 0;
    for (let i = 0; i < rendered.data.length; i++) {
      if (rendered.data[i] !== png.data[i]) mismatches++;
    }
    expect(mismatches).toBe(0);
  });

  it("carries the detection overlay inside the image frame", () => {
    expect(state.detections.length).toBe(1);
    const det = state.detections[0];
    expect(det.klass.length).toBeGreaterThan(0);
    const hm = state.heatmap!;
    const [x0, y0, x1, y1] = det.bbox_mm;
    // overlay rectangle in pixels must land inside the rendered canvas
    const sx = HEATMAP_SCALE / hm.xPitchMm;
    const sy = HEATMAP_SCALE / hm.yPitchMm;
    const px0 = (x0 - hm.originMm[0]) * sx;
    const py0 = (y0 - hm.originMm[1]) * sy;
    const px1 = (x1 - hm.originMm[0]) * sx;
    const py1 = (y1 - hm.originMm[1]) * sy;
    // bboxes hug cell areas, so they may overhang the canvas by half a
    // cell on each side; anything further means a frame mismatch
    const slack = HEATMAP_SCALE;
    expect(px0).toBeGreaterThanOrEqual(-slack);
    expect(py0).toBeGreaterThanOrEqual(-slack);
    expect(px1).toBeLessThanOrEqual(hm.shape[1] * HEATMAP_SCALE + slack);
    expect(py1).toBeLessThanOrEqual(hm.shape[0] * HEATMAP_SCALE + slack);
    // the stud lies along the cross-track axis
    const yawFrom90 = Math.abs(det.yaw_deg - 90);
    expect(yawFrom90).toBeLessThanOrEqual(10);
  });

  it("replays deterministically", () => {
    const again = replay(loadLog("fig9_log.json"));
    expect(again.heatmap!.rows).toEqual(state.heatmap!.rows);
    expect(again.detections).toEqual(state.detections);
  });
});

describe("drag arithmetic", () => {
  it("a 115 mm drag yields exactly 10 strip-chart points", () => {
    const state = replay(loadLog("drag115_log.json"));
    const points = tracePoints(state, 0);
    expect(points.length).toBe(10);
    // encoder pitch between consecutive points
    const spacing = points[1].alongTrackMm - points[0].alongTrackMm;
    expect(spacing).toBeCloseTo(11.486, 3);
  });
});
