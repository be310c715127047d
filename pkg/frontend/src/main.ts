// Operator console: connect, edit or load a scene, drag the head to
// scan, watch the strip chart and the accumulating subsurface image,
// run detection, export the session.

import { LiveClient } from "./client.js";
import { HeatmapView } from "./heatmap.js";
import { SceneEditor, Tool, drawObjectOutlines } from "./sceneEditor.js";
import { applyMessage, initialState, tracePoints } from "./state.js";
import { StripChart } from "./stripchart.js";
import { ServerMessage } from "./protocol.js";

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

const state = initialState();
const editor = new SceneEditor();
const client = new LiveClient();

const surface = $<HTMLCanvasElement>("surface");
const surfaceCtx = surface.getContext("2d")!;
const chart = new StripChart($<HTMLCanvasElement>("stripchart"));
const heatmap = new HeatmapView($<HTMLCanvasElement>("heatmap"));
const banner = $<HTMLDivElement>("banner");
const status = $<HTMLDivElement>("status");

let pxPerMm = 2.0;
let scanning = false;
let lineY = 0;
let redrawQueued = false;

function queueRedraw() {
  // decouple rendering from message ingestion; one redraw per frame
  if (redrawQueued) return;
  redrawQueued = true;
  requestAnimationFrame(() => {
    redrawQueued = false;
    redraw();
  });
}

function sceneExtents(): [number, number] {
  if (state.scene) return [state.scene.extents_mm[0], state.scene.extents_mm[1]];
  return [editor.extents[0], editor.extents[1]];
}

function redraw() {
  const [ex, ey] = sceneExtents();
  pxPerMm = Math.min(640 / ex, 520 / ey);
  surface.width = Math.round(ex * pxPerMm);
  surface.height = Math.round(ey * pxPerMm);

  surfaceCtx.fillStyle = "#2b2420";
  surfaceCtx.fillRect(0, 0, surface.width, surface.height);
  surfaceCtx.strokeStyle = "#555";
  surfaceCtx.strokeRect(0, 0, surface.width, surface.height);

  const revealBox = $<HTMLInputElement>("reveal");
  state.revealHidden = revealBox.checked;

  if (state.scene && state.revealHidden) {
    drawObjectOutlines(surfaceCtx, state.scene, pxPerMm, null);
  } else if (!state.scene) {
    // editing locally: show the draft objects
    drawObjectOutlines(
      surfaceCtx,
      {
        extents_mm: [...editor.extents],
        voxel_size_mm: 2,
        digest: "",
        head_bounds_mm: [0, ex, 0, ey],
        tick_distance_mm: 11.486,
        background_c_pf: 0,
        scene_doc: editor.toSceneDoc(),
      },
      pxPerMm,
      editor.selected,
    );
  }

  // scan head
  if (state.headMm && state.scene) {
    const [hx, hy] = state.headMm;
    surfaceCtx.fillStyle = scanning ? "#4dd0e1" : "#90a4ae";
    surfaceCtx.beginPath();
    surfaceCtx.arc(hx * pxPerMm, hy * pxPerMm, 8, 0, 2 * Math.PI);
    surfaceCtx.fill();
  }

  chart.draw(state.traces, state.currentLine);
  heatmap.draw(state.heatmap, state.detections);

  const parts = [];
  if (state.scene) parts.push(`scene ${state.scene.extents_mm.join("x")} mm, background ${state.scene.background_c_pf.toFixed(3)} pF`);
  if (state.lastError) parts.push(`last error: ${state.lastError}`);
  status.textContent = parts.join(" | ");
}

client.onStatus = (connected, detail) => {
  banner.textContent = detail;
  banner.className = connected ? "banner ok" : "banner bad";
  queueRedraw();
};

client.onMessage = (msg: ServerMessage) => {
  applyMessage(state, msg);
  queueRedraw();
};

// --- surface interaction: editing when unlocked, scanning when locked ---

function eventMm(ev: MouseEvent): [number, number] {
  const rect = surface.getBoundingClientRect();
  return [(ev.clientX - rect.left) / pxPerMm, (ev.clientY - rect.top) / pxPerMm];
}

surface.addEventListener("mousedown", (ev) => {
  const [x, y] = eventMm(ev);
  if (!editor.locked && !state.scene) {
    editor.click(x, y);
    queueRedraw();
    return;
  }
  if (!state.scene || !client.connected) return;
  scanning = true;
  lineY = y;
  state.headMm = [x, y];
  client.send({ type: "begin_line", origin: [x, y], direction: [1, 0] });
});

surface.addEventListener("mousemove", (ev) => {
  const [x, y] = eventMm(ev);
  if (!editor.locked && !state.scene && ev.buttons) {
    editor.drag(x, y);
    queueRedraw();
    return;
  }
  if (!scanning) return;
  state.headMm = [x, lineY];
  client.send({ type: "move_head", x, y: lineY });
  queueRedraw();
});

window.addEventListener("mouseup", () => {
  if (scanning) {
    scanning = false;
    client.send({ type: "end_line" });
  }
});

window.addEventListener("keydown", (ev) => {
  if (ev.key === "r") editor.rotateSelected(15);
  if (ev.key === "Delete" || ev.key === "Backspace") editor.deleteSelected();
  queueRedraw();
});

// --- controls ---

$<HTMLButtonElement>("connect").addEventListener("click", () => {
  client.connect($<HTMLInputElement>("server-url").value);
});

$<HTMLSelectElement>("tool").addEventListener("change", (ev) => {
  editor.tool = (ev.target as HTMLSelectElement).value as Tool;
});

$<HTMLSelectElement>("layer").addEventListener("change", (ev) => {
  editor.layerKey = (ev.target as HTMLSelectElement).value;
  queueRedraw();
});

$<HTMLButtonElement>("hide-scene").addEventListener("click", () => {
  // lock edits, send the scene, and begin the blind-scan exercise
  editor.locked = true;
  $<HTMLInputElement>("reveal").checked = false;
  client.send({ type: "load_scene", scene: editor.toSceneDoc() });
});

$<HTMLButtonElement>("load-preset").addEventListener("click", () => {
  const preset = $<HTMLSelectElement>("preset").value;
  client.send({ type: "load_scene", preset });
});

$<HTMLButtonElement>("detect").addEventListener("click", () => {
  client.send({ type: "detect" });
});

$<HTMLButtonElement>("export").addEventListener("click", () => {
  client.send({ type: "export" });
  const save = () => {
    if (!state.sessionDocument) {
      setTimeout(save, 150);
      return;
    }
    const blob = new Blob([state.sessionDocument], { type: "text/csv" });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "session.csv";
    a.click();
    URL.revokeObjectURL(a.href);
    state.sessionDocument = null;
  };
  save();
});

$<HTMLInputElement>("reveal").addEventListener("change", queueRedraw);

queueRedraw();
