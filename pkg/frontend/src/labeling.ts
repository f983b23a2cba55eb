// Labeling state for one query: the playback cursor plus one pending label
// slot per segment. Submission stays blocked until every segment has a
// label; there is deliberately no skip action.

import type { QueryPayload, SafetyLabel } from "./types.js";

export class LabelingSession {
  readonly payload: QueryPayload;
  private labels: (SafetyLabel | null)[];
  cursor = 0;

  constructor(payload: QueryPayload) {
    validatePayload(payload);
    this.payload = payload;
    this.labels = payload.segments.map(() => null);
  }

  get length(): number {
    return this.payload.transitions.length;
  }

  get segmentCount(): number {
    return this.payload.segments.length;
  }

  /** Index of the segment containing timestep t. */
  segmentAt(t: number): number {
    const idx = this.payload.segments.findIndex(([s, e]) => t >= s && t <= e);
    if (idx < 0) throw new Error(`timestep ${t} outside every segment`);
    return idx;
  }

  get currentSegment(): number {
    return this.segmentAt(this.cursor);
  }

  labelOf(segment: number): SafetyLabel | null {
    return this.labels[segment];
  }

  setLabel(segment: number, label: SafetyLabel): void {
    if (segment < 0 || segment >= this.labels.length) {
      throw new Error(`segment index ${segment} out of range`);
    }
    this.labels[segment] = label;
  }

  /** Label the segment under the cursor and advance to the next segment. */
  labelCurrent(label: SafetyLabel): void {
    const seg = this.currentSegment;
    this.setLabel(seg, label);
    const [, end] = this.payload.segments[seg];
    if (end + 1 < this.length) this.cursor = end + 1;
  }

  step(delta: number): void {
    this.cursor = Math.min(Math.max(this.cursor + delta, 0), this.length - 1);
  }

  unlabeledSegments(): number[] {
    return this.labels.flatMap((l, i) => (l === null ? [i] : []));
  }

  allLabeled(): boolean {
    return this.labels.every((l) => l !== null);
  }

  get canSubmit(): boolean {
    return this.allLabeled();
  }

  /** Labels ready for submission; throws while any segment is unlabeled. */
  labelsForSubmit(): SafetyLabel[] {
    if (!this.allLabeled()) {
      throw new Error(
        `cannot submit: segments ${this.unlabeledSegments().join(", ")} unlabeled`,
      );
    }
    return this.labels.map((l) => l as SafetyLabel);
  }
}

export function validatePayload(payload: QueryPayload): void {
  const n = payload.transitions.length;
  if (n === 0) throw new Error("payload has no transitions");
  payload.transitions.forEach((tr, i) => {
    if (tr.t !== i) throw new Error(`transition ${i} has timestep ${tr.t}`);
  });
  const covered: number[] = [];
  for (const [start, end] of payload.segments) {
    if (start > end || start < 0 || end >= n) {
      throw new Error(`segment [${start}, ${end}] out of bounds`);
    }
    for (let t = start; t <= end; t++) covered.push(t);
  }
  covered.sort((a, b) => a - b);
  if (covered.length !== n || covered.some((t, i) => t !== i)) {
    throw new Error("segments do not partition the trajectory");
  }
}
