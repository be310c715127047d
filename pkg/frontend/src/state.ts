// The console's view state is a pure fold over the server message log:
// no client-side physics, so replaying a recorded log reproduces the
// display exactly.

import {
  DetectionDoc,
  SceneSummary,
  ServerMessage,
} from "./protocol.js";

export interface HeatmapState {
  originMm: [number, number];
  xPitchMm: number;
  yPitchMm: number;
  shape: [number, number];
  valueRange: [number, number];
  rows: number[][]; // shape[0] rows of shape[1] values
}

export interface TracePoint {
  tick: number;
  alongTrackMm: number;
  calibratedPf: number;
  flags: number;
}

export interface ViewState {
  scene: SceneSummary | null;
  revealHidden: boolean;
  headMm: [number, number] | null;
  traces: Map<number, TracePoint[]>;
  currentLine: number | null;
  heatmap: HeatmapState | null;
  detections: DetectionDoc[];
  lastError: string | null;
  sessionDocument: string | null;
  serverSeed: number | null;
}

export function initialState(): ViewState {
  return {
    scene: null,
    revealHidden: true,
    headMm: null,
    traces: new Map(),
    currentLine: null,
    heatmap: null,
    detections: [],
    lastError: null,
    sessionDocument: null,
    serverSeed: null,
  };
}

/** Apply one server message; mutates and returns the state. */
export function applyMessage(state: ViewState, msg: ServerMessage): ViewState {
  switch (msg.type) {
    case "hello":
      state.serverSeed = msg.seed;
      if (msg.scene) state.scene = msg.scene;
      return state;
    case "scene_ok":
      state.scene = msg.scene;
      state.traces = new Map();
      state.heatmap = null;
      state.detections = [];
      state.currentLine = null;
      return state;
    case "scene_error":
      state.lastError = `scene rejected: ${msg.violations.join("; ")}`;
      return state;
    case "line_ok":
      state.currentLine = msg.line_id;
      state.traces.set(msg.line_id, []);
      return state;
    case "sample": {
      const trace = state.traces.get(msg.line_id) ?? [];
      trace.push({
        tick: msg.tick,
        alongTrackMm: msg.along_track_mm,
        calibratedPf: msg.calibrated_pf,
        flags: msg.flags,
      });
      state.traces.set(msg.line_id, trace);
      return state;
    }
    case "line_done":
      state.currentLine = null;
      return state;
    case "image_update": {
      // rows the server did not resend are unchanged *by index*; that
      // holds exactly when the origin and column count are unchanged
      // (the server re-sends every row otherwise)
      const prev = state.heatmap;
      const keep =
        prev !== null &&
        prev.shape[1] === msg.shape[1] &&
        prev.originMm[0] === msg.origin_mm[0] &&
        prev.originMm[1] === msg.origin_mm[1];
      const rows: number[][] = [];
      for (let r = 0; r < msg.shape[0]; r++) {
        rows.push(
          keep && r < prev!.rows.length
            ? prev!.rows[r]
            : new Array(msg.shape[1]).fill(0),
        );
      }
      for (const row of msg.rows) {
        rows[row.index] = row.values.slice();
      }
      state.heatmap = {
        originMm: msg.origin_mm,
        xPitchMm: msg.x_pitch_mm,
        yPitchMm: msg.y_pitch_mm,
        shape: msg.shape,
        valueRange: msg.value_range,
        rows,
      };
      return state;
    }
    case "detections":
      state.detections = msg.detections;
      return state;
    case "session":
      state.sessionDocument = msg.document;
      return state;
    case "error":
      state.lastError = `${msg.code}: ${msg.detail}`;
      return state;
    default:
      return state;
  }
}

/** Replay a recorded server-message log from scratch. */
export function replay(log: ServerMessage[]): ViewState {
  const state = initialState();
  for (const msg of log) applyMessage(state, msg);
  return state;
}

/** Strip-chart points for one line, in acquisition order. */
export function tracePoints(state: ViewState, lineId: number): TracePoint[] {
  return state.traces.get(lineId) ?? [];
}
