// Evaluator console: poll for pending queries, play each trajectory back,
// collect one safe/unsafe label per segment, submit, advance. Keyboard
// first: space play/pause, arrows step, s/u label, r replay, enter submit.
// The UI shows no rewards and no inferred costs while labeling.

import { FeedbackApi } from "./api.js";
import { LabelingSession } from "./labeling.js";
import {
  DriverFrame,
  Frame,
  GridFrame,
  PlaybackClock,
  drawDriverFrame,
  drawGridworldFrame,
  framesOf,
  isDriverMeta,
  isGridworldMeta,
} from "./playback.js";
import type { QueryPayload } from "./types.js";

const TICK_MS = 80;
const POLL_MS = 2000;

class App {
  private api = new FeedbackApi("");
  private session: LabelingSession | null = null;
  private frames: Frame[] = [];
  private clock: PlaybackClock | null = null;
  private submitting = false;

  private canvas = document.getElementById("scene") as HTMLCanvasElement;
  private ctx = this.canvas.getContext("2d")!;
  private statusEl = document.getElementById("status")!;
  private segmentsEl = document.getElementById("segments")!;
  private queueEl = document.getElementById("queue")!;
  private errorEl = document.getElementById("error")!;

  async start(): Promise<void> {
    document.addEventListener("keydown", (ev) => this.onKey(ev));
    setInterval(() => this.renderTick(), TICK_MS);
    await this.pollLoop();
  }

  private async pollLoop(): Promise<void> {
    for (;;) {
      try {
        if (this.session === null) {
          const pending = await this.api.pendingQueries();
          this.queueEl.textContent = `${pending.length} pending`;
          if (pending.length > 0) {
            await this.loadQuery(pending[0]);
          } else {
            this.statusEl.textContent = "waiting for the next round…";
          }
        }
        this.errorEl.textContent = "";
      } catch (err) {
        this.errorEl.textContent = String(err);
      }
      await new Promise((resolve) => setTimeout(resolve, POLL_MS));
    }
  }

  private async loadQuery(queryId: string): Promise<void> {
    const payload: QueryPayload = await this.api.fetchQuery(queryId);
    this.session = new LabelingSession(payload);
    this.frames = framesOf(payload);
    this.clock = new PlaybackClock(this.frames.length);
    this.clock.playing = true; // full playback first, then per-segment review
    this.statusEl.textContent = `query ${queryId} — round ${payload.round}`;
    this.renderSegments();
  }

  private onKey(ev: KeyboardEvent): void {
    if (!this.session || !this.clock) return;
    switch (ev.key) {
      case " ":
        this.clock.playing = !this.clock.playing;
        ev.preventDefault();
        break;
      case "ArrowRight":
        this.clock.playing = false;
        this.clock.seek(this.clock.frame + 1);
        break;
      case "ArrowLeft":
        this.clock.playing = false;
        this.clock.seek(this.clock.frame - 1);
        break;
      case "ArrowUp":
        this.clock.speed = Math.min(this.clock.speed * 2, 16);
        break;
      case "ArrowDown":
        this.clock.speed = Math.max(this.clock.speed / 2, 0.25);
        break;
      case "r":
        this.clock.restart();
        break;
      case "s":
        this.labelCurrent(1);
        break;
      case "u":
        this.labelCurrent(0);
        break;
      case "Enter":
        void this.submit();
        break;
    }
  }

  private labelCurrent(label: 0 | 1): void {
    if (!this.session || !this.clock) return;
    this.session.cursor = this.clock.frame;
    this.session.labelCurrent(label);
    this.clock.seek(this.session.cursor);
    this.renderSegments();
  }

  private async submit(): Promise<void> {
    if (!this.session || this.submitting) return;
    if (!this.session.canSubmit) {
      // client-side block: every segment needs a label before any request
      this.errorEl.textContent = `label segments ${this.session
        .unlabeledSegments()
        .map((i) => i + 1)
        .join(", ")} first`;
      return;
    }
    this.submitting = true;
    try {
      await this.api.submitLabels(this.session.payload.query_id, this.session.labelsForSubmit());
      this.session = null;
      this.frames = [];
      this.clock = null;
    } catch (err) {
      this.errorEl.textContent = String(err);
    } finally {
      this.submitting = false;
    }
  }

  private renderSegments(): void {
    if (!this.session) {
      this.segmentsEl.textContent = "";
      return;
    }
    const parts = this.session.payload.segments.map(([s, e], i) => {
      const label = this.session!.labelOf(i);
      const mark = label === null ? "·" : label === 1 ? "safe" : "UNSAFE";
      const active = this.clock && this.session!.segmentAt(this.clock.frame) === i;
      return `<span class="seg ${active ? "active" : ""} ${label === null ? "" : label === 1 ? "safe" : "unsafe"}">[${s}–${e}] ${mark}</span>`;
    });
    this.segmentsEl.innerHTML = parts.join(" ");
  }

  private renderTick(): void {
    if (!this.session || !this.clock) return;
    const frame = this.frames[Math.floor(this.clock.tick())];
    const meta = this.session.payload.meta;
    const view = { width: this.canvas.width, height: this.canvas.height };
    if (isDriverMeta(meta)) {
      drawDriverFrame(this.ctx, view, meta, frame as DriverFrame);
    } else if (isGridworldMeta(meta)) {
      drawGridworldFrame(
        this.ctx,
        view,
        meta,
        this.frames as GridFrame[],
        Math.floor(this.clock.frame),
      );
    }
    this.renderSegments();
  }
}

new App().start();
