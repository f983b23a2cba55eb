// Scene reconstruction and top-down rendering. Frames are a pure function of
// the payload, so replaying the same payload always yields the identical
// frame sequence; the clock just indexes into them at an adjustable rate.

import type { DriverMeta, GridworldMeta, QueryPayload, RenderMeta } from "./types.js";

export interface VehiclePose {
  x: number;
  y: number;
  phi: number;
  v: number;
}

export interface DriverFrame {
  kind: "driver";
  t: number;
  vehicles: VehiclePose[]; // ego first
}

export interface GridFrame {
  kind: "gridworld";
  t: number;
  cell: [number, number];
}

export type Frame = DriverFrame | GridFrame;

export function isDriverMeta(meta: QueryPayload["meta"]): meta is DriverMeta {
  return (meta as RenderMeta).env === "driver";
}

export function isGridworldMeta(meta: QueryPayload["meta"]): meta is GridworldMeta {
  return (meta as RenderMeta).env === "gridworld";
}

/** Decode every transition's state vector into a drawable frame. */
export function framesOf(payload: QueryPayload): Frame[] {
  const meta = payload.meta;
  if (isDriverMeta(meta)) {
    return payload.transitions.map((tr) => {
      const vehicles: VehiclePose[] = [];
      for (let i = 0; i + 3 < tr.state.length; i += 4) {
        vehicles.push({ x: tr.state[i], y: tr.state[i + 1], phi: tr.state[i + 2], v: tr.state[i + 3] });
      }
      if (vehicles.length !== meta.n_vehicles) {
        throw new Error(`expected ${meta.n_vehicles} vehicle poses, decoded ${vehicles.length}`);
      }
      return { kind: "driver", t: tr.t, vehicles };
    });
  }
  if (isGridworldMeta(meta)) {
    return payload.transitions.map((tr) => {
      const onehot = tr.state.slice(0, meta.obs_cells);
      const idx = onehot.indexOf(Math.max(...onehot));
      return {
        kind: "gridworld",
        t: tr.t,
        cell: [idx % meta.width, Math.floor(idx / meta.width)],
      };
    });
  }
  throw new Error("payload carries no renderable scene metadata");
}

/** Frame scheduler: advances by whole ticks, deterministic for a given
 * sequence of tick() calls. */
export class PlaybackClock {
  frame = 0;
  playing = false;
  speed = 1; // frames advanced per tick
  constructor(readonly frameCount: number) {}

  tick(): number {
    if (this.playing) {
      this.frame = Math.min(this.frame + this.speed, this.frameCount - 1);
      if (this.frame === this.frameCount - 1) this.playing = false;
    }
    return this.frame;
  }

  seek(frame: number): void {
    this.frame = Math.min(Math.max(frame, 0), this.frameCount - 1);
  }

  restart(): void {
    this.frame = 0;
    this.playing = true;
  }
}

// Minimal structural slice of CanvasRenderingContext2D so tests can record
// draw calls without a DOM.
export interface DrawContext {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  rotate(rad: number): void;
}

export interface Viewport {
  width: number;
  height: number;
}

const ROAD_COLOR = "#2b2b33";
const LANE_LINE = "#8a8a96";
const EGO_COLOR = "#f5f5f5";
const OTHER_COLOR = "#d9772e";
const CAR_LENGTH = 0.08;
const CAR_WIDTH = 0.035;

export function drawDriverFrame(
  ctx: DrawContext,
  view: Viewport,
  meta: DriverMeta,
  frame: DriverFrame,
): void {
  const roadHalf = (meta.n_lanes * meta.lane_width) / 2;
  const margin = meta.lane_width; // off-road strip shown on each side
  const worldWidth = 2 * (roadHalf + margin);
  const sx = view.width / worldWidth;
  const sy = view.height / meta.road_top;
  const toPx = (x: number, y: number): [number, number] => [
    (x + roadHalf + margin) * sx,
    view.height - y * sy,
  ];

  ctx.fillStyle = "#171719";
  ctx.fillRect(0, 0, view.width, view.height);
  const [roadLeft] = toPx(-roadHalf, 0);
  const [roadRight] = toPx(roadHalf, 0);
  ctx.fillStyle = ROAD_COLOR;
  ctx.fillRect(roadLeft, 0, roadRight - roadLeft, view.height);
  ctx.strokeStyle = LANE_LINE;
  ctx.lineWidth = 1;
  for (let lane = 1; lane < meta.n_lanes; lane++) {
    const [lx] = toPx(-roadHalf + lane * meta.lane_width, 0);
    ctx.beginPath();
    ctx.moveTo(lx, 0);
    ctx.lineTo(lx, view.height);
    ctx.stroke();
  }

  frame.vehicles.forEach((veh, i) => {
    const [px, py] = toPx(veh.x, veh.y);
    ctx.save();
    ctx.translate(px, py);
    // phi = pi/2 points up the road; canvas y grows downward
    ctx.rotate(Math.PI / 2 - veh.phi);
    ctx.fillStyle = i === 0 ? EGO_COLOR : OTHER_COLOR;
    ctx.fillRect(
      (-CAR_WIDTH / 2) * sx,
      (-CAR_LENGTH / 2) * sy,
      CAR_WIDTH * sx,
      CAR_LENGTH * sy,
    );
    ctx.restore();
  });
}

const GRID_BG = "#171719";
const GRID_LINE = "#3a3a44";
const PATH_COLOR = "#5a8fd9";
const AGENT_COLOR = "#f5f5f5";
const GOAL_COLOR = "#47b26b";

export function drawGridworldFrame(
  ctx: DrawContext,
  view: Viewport,
  meta: GridworldMeta,
  frames: GridFrame[],
  current: number,
): void {
  const cw = view.width / meta.width;
  const ch = view.height / meta.height;
  const toPx = (col: number, row: number): [number, number] => [
    col * cw,
    view.height - (row + 1) * ch,
  ];

  ctx.fillStyle = GRID_BG;
  ctx.fillRect(0, 0, view.width, view.height);
  ctx.strokeStyle = GRID_LINE;
  ctx.lineWidth = 1;
  for (let c = 0; c < meta.width; c++) {
    for (let r = 0; r < meta.height; r++) {
      const [x, y] = toPx(c, r);
      ctx.strokeRect(x, y, cw, ch);
    }
  }
  const [gx, gy] = toPx(meta.goal[0], meta.goal[1]);
  ctx.fillStyle = GOAL_COLOR;
  ctx.fillRect(gx + cw * 0.2, gy + ch * 0.2, cw * 0.6, ch * 0.6);

  // visited path up to the cursor
  ctx.fillStyle = PATH_COLOR;
  for (let t = 0; t < current; t++) {
    const [x, y] = toPx(frames[t].cell[0], frames[t].cell[1]);
    ctx.fillRect(x + cw * 0.35, y + ch * 0.35, cw * 0.3, ch * 0.3);
  }
  const [ax, ay] = toPx(frames[current].cell[0], frames[current].cell[1]);
  ctx.fillStyle = AGENT_COLOR;
  ctx.fillRect(ax + cw * 0.15, ay + ch * 0.15, cw * 0.7, ch * 0.7);
}
