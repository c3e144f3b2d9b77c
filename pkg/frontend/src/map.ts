// Flat-ENU plan view: glyphs from received position records only, trails,
// and a scale bar. The projection math is pure and unit-tested; drawing
// degrades to a no-op where canvas 2D is unavailable (tests).

import { SIDE_COLORS, type TrailPoint, type TrailStore } from "./state";

export interface Viewport {
  cx: number;
  cy: number;
  metersPerPx: number;
}

export function fitViewport(
  points: { x: number; y: number }[],
  width: number,
  height: number,
  marginFrac = 0.12,
): Viewport {
  if (points.length === 0) return { cx: 0, cy: 0, metersPerPx: 10 };
  let minX = Infinity, maxX = -Infinity, minY = Infinity, maxY = -Infinity;
  for (const p of points) {
    if (p.x < minX) minX = p.x;
    if (p.x > maxX) maxX = p.x;
    if (p.y < minY) minY = p.y;
    if (p.y > maxY) maxY = p.y;
  }
  const spanX = Math.max(maxX - minX, 1);
  const spanY = Math.max(maxY - minY, 1);
  const usableW = width * (1 - 2 * marginFrac);
  const usableH = height * (1 - 2 * marginFrac);
  return {
    cx: (minX + maxX) / 2,
    cy: (minY + maxY) / 2,
    metersPerPx: Math.max(spanX / usableW, spanY / usableH),
  };
}

export function worldToScreen(
  x: number,
  y: number,
  vp: Viewport,
  width: number,
  height: number,
): { sx: number; sy: number } {
  // ENU: x east (right), y north (up); screen y grows downward
  return {
    sx: width / 2 + (x - vp.cx) / vp.metersPerPx,
    sy: height / 2 - (y - vp.cy) / vp.metersPerPx,
  };
}

export function scaleBarMeters(vp: Viewport, targetPx = 120): { meters: number; px: number; label: string } {
  const raw = vp.metersPerPx * targetPx;
  const mag = Math.pow(10, Math.floor(Math.log10(raw)));
  let nice = mag;
  for (const mult of [1, 2, 5, 10]) {
    if (mag * mult <= raw) nice = mag * mult;
  }
  const label = nice >= 1000 ? `${nice / 1000} km` : `${nice} m`;
  return { meters: nice, px: nice / vp.metersPerPx, label };
}

export class MapRenderer {
  private ctx: CanvasRenderingContext2D | null;

  constructor(private canvas: HTMLCanvasElement) {
    let ctx: CanvasRenderingContext2D | null = null;
    try {
      ctx = canvas.getContext("2d");
    } catch {
      ctx = null; // headless test environments have no canvas backend
    }
    this.ctx = ctx;
  }

  draw(
    trails: TrailStore,
    sides: Map<string, string>,
    sideOf: (id: string, sides: Map<string, string>) => string,
    selected: string | null,
    banner: string | null,
  ): void {
    const ctx = this.ctx;
    if (!ctx) return;
    const { width, height } = this.canvas;
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, width, height);

    const all: TrailPoint[] = [];
    for (const id of trails.agents()) {
      for (const p of trails.trails.get(id) ?? []) all.push(p);
    }
    const vp = fitViewport(all, width, height);

    for (const id of trails.agents()) {
      const trail = trails.trails.get(id) ?? [];
      const color = SIDE_COLORS[sideOf(id, sides)] ?? SIDE_COLORS.NEUTRAL;
      ctx.strokeStyle = color + "55";
      ctx.lineWidth = 1;
      ctx.beginPath();
      trail.forEach((p, i) => {
        const { sx, sy } = worldToScreen(p.x, p.y, vp, width, height);
        if (i === 0) ctx.moveTo(sx, sy);
        else ctx.lineTo(sx, sy);
      });
      ctx.stroke();

      const last = trail[trail.length - 1];
      if (!last) continue;
      const { sx, sy } = worldToScreen(last.x, last.y, vp, width, height);
      ctx.save();
      ctx.translate(sx, sy);
      ctx.rotate(-last.heading + Math.PI / 2);
      ctx.fillStyle = color;
      ctx.beginPath();
      ctx.moveTo(0, -7);
      ctx.lineTo(5, 7);
      ctx.lineTo(-5, 7);
      ctx.closePath();
      ctx.fill();
      ctx.restore();
      if (id === selected) {
        ctx.strokeStyle = "#ffffff";
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        ctx.arc(sx, sy, 11, 0, 2 * Math.PI);
        ctx.stroke();
      }
    }

    const bar = scaleBarMeters(vp);
    ctx.strokeStyle = "#e8e9ec";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(16, height - 16);
    ctx.lineTo(16 + bar.px, height - 16);
    ctx.stroke();
    ctx.fillStyle = "#e8e9ec";
    ctx.font = "12px sans-serif";
    ctx.fillText(bar.label, 16, height - 22);

    if (banner) {
      ctx.fillStyle = "#20262f";
      ctx.fillRect(width / 2 - 90, 12, 180, 28);
      ctx.fillStyle = "#ffd479";
      ctx.textAlign = "center";
      ctx.fillText(banner, width / 2, 30);
      ctx.textAlign = "left";
    }
  }

  hitTest(
    trails: TrailStore,
    px: number,
    py: number,
  ): string | null {
    const all: TrailPoint[] = [];
    for (const id of trails.agents()) for (const p of trails.trails.get(id) ?? []) all.push(p);
    const vp = fitViewport(all, this.canvas.width, this.canvas.height);
    let best: string | null = null;
    let bestDist = 14; // px pick radius
    for (const id of trails.agents()) {
      const last = trails.latest(id);
      if (!last) continue;
      const { sx, sy } = worldToScreen(last.x, last.y, vp, this.canvas.width, this.canvas.height);
      const d = Math.hypot(sx - px, sy - py);
      if (d < bestDist) {
        bestDist = d;
        best = id;
      }
    }
    return best;
  }
}
