// Top-view scene editor: place, drag, and rotate bars/studs/pipes on a
// layered surface, then hide them and scan blind. Edits build a scene
// document; the server owns all physics.

import { ObjectDoc, SceneDoc, SceneSummary } from "./protocol.js";

export type Tool = "metal_bar" | "wood_stud" | "pipe" | "move";

interface EditorObject {
  doc: ObjectDoc;
}

const LAYER_PRESETS: Record<string, { material: string; thickness_mm: number }> = {
  plywood_25: { material: "plywood", thickness_mm: 25.0 },
  concrete_35: { material: "concrete", thickness_mm: 35.0 },
  drywall_13: { material: "drywall", thickness_mm: 13.0 },
};

function makeObject(tool: Tool, x: number, y: number, depth: number): ObjectDoc {
  if (tool === "pipe") {
    return {
      shape: "cylinder",
      radius_mm: 8.0,
      length_mm: 160.0,
      position_mm: [x, y, depth + 10.0],
      yaw_deg: 90.0,
      material: "steel",
    };
  }
  return {
    shape: "box",
    width_mm: tool === "wood_stud" ? 45.0 : 30.0,
    length_mm: 160.0,
    height_mm: tool === "wood_stud" ? 45.0 : 20.0,
    position_mm: [x, y, depth + (tool === "wood_stud" ? 24.0 : 12.0)],
    yaw_deg: 90.0,
    material: tool === "wood_stud" ? "wood" : "steel",
  };
}

export class SceneEditor {
  objects: EditorObject[] = [];
  layerKey = "plywood_25";
  extents: [number, number, number] = [320.0, 280.0, 80.0];
  locked = false; // "hide scene" starts the blind exercise
  tool: Tool = "metal_bar";
  selected: number | null = null;

  get layerDepth(): number {
    return LAYER_PRESETS[this.layerKey].thickness_mm;
  }

  toSceneDoc(): SceneDoc {
    const layer = LAYER_PRESETS[this.layerKey];
    return {
      extents_mm: this.extents,
      voxel_size_mm: 2.0,
      ambient: "air",
      layers: [{ material: layer.material, thickness_mm: layer.thickness_mm }],
      objects: this.objects.map((o) => o.doc),
    };
  }

  /** Click in scene mm coordinates: place with the active tool or select. */
  click(x: number, y: number): void {
    if (this.locked) return;
    if (this.tool === "move") {
      this.selected = this.hit(x, y);
      return;
    }
    this.objects.push({ doc: makeObject(this.tool, x, y, this.layerDepth) });
    this.selected = this.objects.length - 1;
  }

  drag(x: number, y: number): void {
    if (this.locked || this.selected === null) return;
    const doc = this.objects[this.selected].doc;
    doc.position_mm = [x, y, doc.position_mm[2]];
  }

  rotateSelected(deltaDeg: number): void {
    if (this.locked || this.selected === null) return;
    const doc = this.objects[this.selected].doc;
    doc.yaw_deg = (((doc.yaw_deg ?? 0) + deltaDeg) % 180 + 180) % 180;
  }

  deleteSelected(): void {
    if (this.locked || this.selected === null) return;
    this.objects.splice(this.selected, 1);
    this.selected = null;
  }

  hit(x: number, y: number): number | null {
    for (let i = this.objects.length - 1; i >= 0; i--) {
      const doc = this.objects[i].doc;
      const [cx, cy] = doc.position_mm;
      const yaw = ((doc.yaw_deg ?? 0) * Math.PI) / 180;
      const dx = (x - cx) * Math.cos(yaw) + (y - cy) * Math.sin(yaw);
      const dy = -(x - cx) * Math.sin(yaw) + (y - cy) * Math.cos(yaw);
      const halfL = (doc.length_mm ?? 0) / 2;
      const halfW = doc.shape === "box" ? (doc.width_mm ?? 0) / 2 : doc.radius_mm ?? 0;
      if (Math.abs(dx) <= halfL && Math.abs(dy) <= halfW) return i;
    }
    return null;
  }
}

/** Draw object outlines (truth overlay) into a top-view canvas context. */
export function drawObjectOutlines(
  ctx: CanvasRenderingContext2D,
  scene: SceneSummary,
  pxPerMm: number,
  highlight: number | null = null,
) {
  scene.scene_doc.objects.forEach((doc, i) => {
    const [cx, cy] = doc.position_mm;
    const yaw = (((doc.yaw_deg ?? 0) * Math.PI) / 180);
    const halfL = (doc.length_mm ?? 0) / 2;
    const halfW = doc.shape === "box" ? (doc.width_mm ?? 0) / 2 : doc.radius_mm ?? 0;
    const mat = typeof doc.material === "string" ? doc.material : doc.material.name;
    ctx.save();
    ctx.translate(cx * pxPerMm, cy * pxPerMm);
    ctx.rotate(yaw);
    ctx.strokeStyle = mat === "steel" ? "#ff8a80" : "#ffd180";
    ctx.setLineDash([6, 4]);
    ctx.lineWidth = i === highlight ? 3 : 1.5;
    ctx.strokeRect(-halfL * pxPerMm, -halfW * pxPerMm, 2 * halfL * pxPerMm, 2 * halfW * pxPerMm);
    ctx.restore();
  });
}
