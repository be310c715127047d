// Live-session protocol message types (docs/live_protocol.md, v1).

export const PROTOCOL_VERSION = 1;

export interface MaterialDoc {
  name: string;
  relative_permittivity?: number;
  is_conductor?: boolean;
}

export interface ObjectDoc {
  shape: "box" | "cylinder";
  position_mm: [number, number, number];
  yaw_deg?: number;
  material: MaterialDoc | string;
  width_mm?: number;
  length_mm?: number;
  height_mm?: number;
  radius_mm?: number;
}

export interface SceneDoc {
  extents_mm: [number, number, number];
  voxel_size_mm: number;
  ambient: MaterialDoc | string;
  layers: { material: MaterialDoc | string; thickness_mm: number }[];
  objects: ObjectDoc[];
}

export interface SceneSummary {
  extents_mm: [number, number, number];
  voxel_size_mm: number;
  digest: string;
  head_bounds_mm: [number, number, number, number];
  tick_distance_mm: number;
  background_c_pf: number;
  scene_doc: SceneDoc;
}

export interface HelloMsg {
  type: "hello";
  versions: number[];
  seed: number;
  phase: string;
  scene: SceneSummary | null;
}

export interface SceneOkMsg {
  type: "scene_ok";
  scene: SceneSummary;
}

export interface SceneErrorMsg {
  type: "scene_error";
  violations: string[];
}

export interface LineOkMsg {
  type: "line_ok";
  line_id: number;
}

export interface SampleMsg {
  type: "sample";
  line_id: number;
  tick: number;
  along_track_mm: number;
  raw_pf: number;
  capdac_pf: number;
  calibrated_pf: number;
  flags: number;
}

export interface LineDoneMsg {
  type: "line_done";
  line_id: number;
  n_samples: number;
}

export interface ImageUpdateMsg {
  type: "image_update";
  origin_mm: [number, number];
  x_pitch_mm: number;
  y_pitch_mm: number;
  shape: [number, number];
  value_range: [number, number];
  rows: { index: number; values: number[] }[];
}

export interface DetectionDoc {
  centroid_mm: [number, number];
  yaw_deg: number;
  bbox_mm: [number, number, number, number];
  peak_anomaly_pf: number;
  area_mm2: number;
  klass: string;
}

export interface DetectionsMsg {
  type: "detections";
  detections: DetectionDoc[];
}

export interface SessionMsg {
  type: "session";
  document: string;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  detail: string;
}

export type ServerMessage =
  | HelloMsg
  | SceneOkMsg
  | SceneErrorMsg
  | LineOkMsg
  | SampleMsg
  | LineDoneMsg
  | ImageUpdateMsg
  | DetectionsMsg
  | SessionMsg
  | ErrorMsg;

export type ClientMessage =
  | { type: "hello"; protocol_version: number }
  | { type: "load_scene"; preset?: string; scene?: SceneDoc }
  | { type: "begin_line"; origin: [number, number]; direction: [number, number] }
  | { type: "move_head"; x: number; y: number }
  | { type: "end_line" }
  | { type: "detect" }
  | { type: "export" };
