// Canvas annotation tool: collect clicks into a geofence polygon or a
// track polyline.  Drafts render dashed; only server-confirmed geometry is
// drawn solid (the server echo is the source of truth).

import type { Point } from "./types.js";
import { validateGeofence, validateTrack } from "./validation.js";

export type Tool = "none" | "geofence" | "track";

export class AnnotationLayer {
  tool: Tool = "none";
  draft: Point[] = [];
  confirmedFence: Point[] | null = null;
  confirmedTrack: Point[] | null = null;

  beginTool(tool: Tool): void {
    this.tool = tool;
    this.draft = [];
  }

  addPoint(p: Point): void {
    if (this.tool === "none") return;
    this.draft.push([Math.round(p[0]), Math.round(p[1])]);
  }

  undo(): void {
    this.draft.pop();
  }

  draftError(): string | null {
    if (this.tool === "geofence") return validateGeofence(this.draft);
    if (this.tool === "track") return validateTrack(this.draft);
    return null;
  }

  takeDraft(): Point[] {
    const pts = this.draft;
    this.draft = [];
    this.tool = "none";
    return pts;
  }

  render(ctx: CanvasRenderingContext2D): void {
    if (this.confirmedFence) {
      this.path(ctx, this.confirmedFence, true);
      ctx.strokeStyle = "#3fa34d";
      ctx.setLineDash([]);
      ctx.lineWidth = 2.5;
      ctx.stroke();
    }
    if (this.confirmedTrack) {
      this.path(ctx, this.confirmedTrack, false);
      ctx.strokeStyle = "#3d6fd1";
      ctx.setLineDash([]);
      ctx.lineWidth = 2.5;
      ctx.stroke();
      for (const [u, v] of this.confirmedTrack) {
        ctx.beginPath();
        ctx.arc(u, v, 4, 0, Math.PI * 2);
        ctx.fillStyle = "#3d6fd1";
        ctx.fill();
      }
    }
    if (this.draft.length) {
      this.path(ctx, this.draft, this.tool === "geofence");
      ctx.strokeStyle = this.tool === "geofence" ? "#7bd389" : "#7fa8ff";
      ctx.setLineDash([6, 4]);
      ctx.lineWidth = 1.5;
      ctx.stroke();
      ctx.setLineDash([]);
      for (const [u, v] of this.draft) {
        ctx.beginPath();
        ctx.arc(u, v, 3, 0, Math.PI * 2);
        ctx.fillStyle = "#ffffff";
        ctx.fill();
      }
    }
  }

  private path(ctx: CanvasRenderingContext2D, pts: Point[], close: boolean): void {
    ctx.beginPath();
    pts.forEach(([u, v], i) => (i === 0 ? ctx.moveTo(u, v) : ctx.lineTo(u, v)));
    if (close && pts.length > 2) ctx.closePath();
  }
}
