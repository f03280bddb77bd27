// Canvas piano roll: time left-to-right, pitch bottom-to-top, one color per
// part. Draws the loaded score, the service's result layer, pin locks, the
// marginal heatmap overlay, the failing position, and the playback cursor.

import { EditorState, displayedScore, effectivePins, orderOf } from "./state";
import { ScoreDocument } from "./types";

export interface DrawingContext {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  globalAlpha: number;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillText(text: string, x: number, y: number): void;
}

export const PART_COLORS = ["#4e79a7", "#f28e2b", "#59a14f", "#b07aa1",
                            "#e15759", "#76b7b2", "#edc948", "#9c755f"];
export const RESULT_COLOR = "#222222";
export const PIN_COLOR = "#d62728";
export const FAILURE_COLOR = "rgba(214, 39, 40, 0.35)";
export const HEAT_COLOR = "#3b6ea5";
export const CURSOR_COLOR = "#111111";
export const GRID_COLOR = "#e0e0e0";

export interface Layout {
  minPitch: number;
  maxPitch: number;
  totalTicks: number;
  width: number;
  height: number;
}

export function partColor(part: number): string {
  return PART_COLORS[(part - 1) % PART_COLORS.length];
}

export function computeLayout(score: ScoreDocument, width: number, height: number,
                              alphabet?: number[]): Layout {
  const pitches: number[] = alphabet ? [...alphabet] : [];
  for (const note of score.notes) {
    if (note.pitch !== null) pitches.push(note.pitch);
  }
  if (pitches.length === 0) pitches.push(60);
  const minPitch = Math.min(...pitches) - 1;
  const maxPitch = Math.max(...pitches) + 1;
  const totalTicks = Math.max(
    1, ...score.notes.map((n) => n.onset + n.duration));
  return { minPitch, maxPitch, totalTicks, width, height };
}

export function xOf(layout: Layout, ticks: number): number {
  return (ticks / layout.totalTicks) * layout.width;
}

export function yOf(layout: Layout, pitch: number): number {
  const span = layout.maxPitch - layout.minPitch + 1;
  return layout.height - ((pitch - layout.minPitch + 1) / span) * layout.height;
}

export function rowHeight(layout: Layout): number {
  return layout.height / (layout.maxPitch - layout.minPitch + 1);
}

function drawGrid(ctx: DrawingContext, layout: Layout, tpq: number): void {
  ctx.strokeStyle = GRID_COLOR;
  ctx.lineWidth = 1;
  for (let tick = 0; tick <= layout.totalTicks; tick += tpq) {
    ctx.beginPath();
    ctx.moveTo(xOf(layout, tick), 0);
    ctx.lineTo(xOf(layout, tick), layout.height);
    ctx.stroke();
  }
}

function drawHeatmap(ctx: DrawingContext, layout: Layout, state: EditorState): void {
  const score = state.score;
  const response = state.response;
  if (!score || !response) return;
  const { alphabet, note_ids, columns } = response.heatmap;
  ctx.fillStyle = HEAT_COLOR;
  for (let pos = 0; pos < note_ids.length; pos++) {
    const note = score.notes[note_ids[pos]];
    if (!note) continue;
    const x = xOf(layout, note.onset);
    const w = xOf(layout, note.onset + note.duration) - x;
    const column = columns[pos];
    for (let tokenIndex = 0; tokenIndex < alphabet.length; tokenIndex++) {
      const mass = column[tokenIndex];
      if (mass < 0.01) continue;
      ctx.globalAlpha = Math.min(0.85, mass);
      ctx.fillRect(x, yOf(layout, alphabet[tokenIndex]), w, rowHeight(layout));
    }
  }
  ctx.globalAlpha = 1;
}

function drawNotes(ctx: DrawingContext, layout: Layout, state: EditorState): void {
  const base = state.score;
  const shown = displayedScore(state);
  if (!base || !shown) return;
  const pins = effectivePins(state);
  shown.notes.forEach((note, id) => {
    const x = xOf(layout, note.onset);
    const w = Math.max(1, xOf(layout, note.onset + note.duration) - x - 1);
    const h = Math.max(2, rowHeight(layout) - 1);
    const original = base.notes[id];
    if (note.pitch !== null) {
      const generated = original.pitch === null || state.response !== null;
      ctx.fillStyle = generated && original.pitch !== note.pitch
        ? RESULT_COLOR
        : partColor(note.part);
      ctx.fillRect(x, yOf(layout, note.pitch), w, h);
    } else {
      // free note: hollow slot at the middle of the lane
      ctx.strokeStyle = partColor(note.part);
      ctx.lineWidth = 1;
      ctx.strokeRect(x, layout.height / 2 - 2, w, 4);
    }
    if (pins.has(id)) {
      const pitch = pins.get(id)!;
      ctx.strokeStyle = PIN_COLOR;
      ctx.lineWidth = 2;
      ctx.strokeRect(x, yOf(layout, pitch), w, h);
    }
  });
}

function drawFailure(ctx: DrawingContext, layout: Layout, state: EditorState): void {
  if (state.failureNoteId === null || !state.score) return;
  const note = state.score.notes[state.failureNoteId];
  if (!note) return;
  const x = xOf(layout, note.onset);
  const w = Math.max(2, xOf(layout, note.onset + note.duration) - x);
  ctx.fillStyle = FAILURE_COLOR;
  ctx.fillRect(x, 0, w, layout.height);
}

function drawCursor(ctx: DrawingContext, layout: Layout, cursorTicks: number | null): void {
  if (cursorTicks === null) return;
  ctx.strokeStyle = CURSOR_COLOR;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.moveTo(xOf(layout, cursorTicks), 0);
  ctx.lineTo(xOf(layout, cursorTicks), layout.height);
  ctx.stroke();
}

/** Full redraw; pure function of (state, cursor, canvas size). */
export function render(ctx: DrawingContext, state: EditorState,
                       width: number, height: number,
                       cursorTicks: number | null = null): Layout | null {
  ctx.clearRect(0, 0, width, height);
  if (!state.score) return null;
  const layout = computeLayout(state.score, width, height,
                               state.response?.heatmap.alphabet);
  drawGrid(ctx, layout, state.score.ticks_per_quarter);
  drawHeatmap(ctx, layout, state);
  drawNotes(ctx, layout, state);
  drawFailure(ctx, layout, state);
  drawCursor(ctx, layout, cursorTicks);
  return layout;
}

/** Hit test for click-to-pin: note id at canvas coordinates, or null. */
export function noteAt(layout: Layout, score: ScoreDocument,
                       x: number, y: number): number | null {
  const order = orderOf(score);
  for (let k = order.length - 1; k >= 0; k--) {
    const id = order[k];
    const note = score.notes[id];
    if (note.pitch === null) continue;
    const nx = xOf(layout, note.onset);
    const nw = xOf(layout, note.onset + note.duration) - nx;
    const ny = yOf(layout, note.pitch);
    if (x >= nx && x <= nx + nw && y >= ny && y <= ny + rowHeight(layout)) {
      return id;
    }
  }
  return null;
}
