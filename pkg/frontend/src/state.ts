// Editor state and its pure transitions. Timing data is never touched:
// only pitch pins and request parameters leave this layer.

import {
  ConstraintDocument,
  HarmonizeRequestBody,
  HarmonizeResponseBody,
  MAX_NOTES,
  MAX_PATHS,
  MAX_WORK,
  Method,
  ScoreDocument,
  ServiceError,
} from "./types";

export interface EditorState {
  score: ScoreDocument | null;
  /** manual pins: note id -> pinned pitch (kept separate from part fixes
   * so fixing then unfixing a part restores the original pin set) */
  pins: Map<number, number>;
  fixedParts: Set<number>;
  method: Method;
  paths: number;
  seed: number;
  model: string | null;
  response: HarmonizeResponseBody | null;
  /** note id of the position the service reported unsatisfiable */
  failureNoteId: number | null;
  error: string | null;
  busy: boolean;
}

export function createState(): EditorState {
  return {
    score: null,
    pins: new Map(),
    fixedParts: new Set(),
    method: "smc",
    paths: 512,
    seed: 1,
    model: null,
    response: null,
    failureNoteId: null,
    error: null,
    busy: false,
  };
}

export function validateScore(doc: unknown): ScoreDocument {
  if (typeof doc !== "object" || doc === null) {
    throw new Error("score document must be an object");
  }
  const raw = doc as Record<string, unknown>;
  if (typeof raw.ticks_per_quarter !== "number" || raw.ticks_per_quarter < 1) {
    throw new Error("missing or invalid field 'ticks_per_quarter'");
  }
  if (!Array.isArray(raw.parts)) {
    throw new Error("missing field 'parts'");
  }
  if (!Array.isArray(raw.notes)) {
    throw new Error("missing field 'notes'");
  }
  const partIds = new Set<number>();
  for (const part of raw.parts) {
    const p = part as Record<string, unknown>;
    if (typeof p.id !== "number" || typeof p.name !== "string") {
      throw new Error("each part needs an integer 'id' and a string 'name'");
    }
    partIds.add(p.id);
  }
  const seen = new Set<string>();
  const notes = raw.notes.map((note, index) => {
    const n = note as Record<string, unknown>;
    if (typeof n.part !== "number" || !partIds.has(n.part)) {
      throw new Error(`notes[${index}]: unknown part`);
    }
    if (typeof n.onset !== "number" || n.onset < 0) {
      throw new Error(`notes[${index}]: invalid onset`);
    }
    if (typeof n.duration !== "number" || n.duration < 1) {
      throw new Error(`notes[${index}]: invalid duration`);
    }
    const pitch = n.pitch === undefined || n.pitch === null ? null : n.pitch;
    if (pitch !== null && (typeof pitch !== "number" || pitch < 0 || pitch > 127)) {
      throw new Error(`notes[${index}]: invalid pitch`);
    }
    const slot = n.chord_slot === undefined ? 0 : n.chord_slot;
    if (typeof slot !== "number" || slot < 0) {
      throw new Error(`notes[${index}]: invalid chord_slot`);
    }
    const key = `${n.onset}:${n.part}:${slot}`;
    if (seen.has(key)) {
      throw new Error(`notes[${index}]: duplicate (part, onset, chord_slot)`);
    }
    seen.add(key);
    return {
      part: n.part,
      onset: n.onset,
      duration: n.duration,
      pitch: pitch as number | null,
      chord_slot: slot,
    };
  });
  return {
    ticks_per_quarter: raw.ticks_per_quarter,
    parts: raw.parts.map((p) => {
      const q = p as { id: number; name: string };
      return { id: q.id, name: q.name };
    }),
    notes,
  };
}

/** Parse and adopt a score; on failure the previous state survives with an
 * error banner. */
export function loadScore(state: EditorState, text: string): EditorState {
  let score: ScoreDocument;
  try {
    score = validateScore(JSON.parse(text));
  } catch (err) {
    return { ...state, error: `could not load score: ${(err as Error).message}` };
  }
  if (score.notes.length > MAX_NOTES) {
    return { ...state, error: `score has ${score.notes.length} notes; cap is ${MAX_NOTES}` };
  }
  return {
    ...createState(),
    method: state.method,
    paths: state.paths,
    seed: state.seed,
    model: state.model,
    score,
  };
}

/** Generation order of note ids: sort by (onset, part, chord_slot); never
 * reads pitch, matching the engine's ordering. */
export function orderOf(score: ScoreDocument): number[] {
  const ids = score.notes.map((_, i) => i);
  ids.sort((a, b) => {
    const na = score.notes[a];
    const nb = score.notes[b];
    return na.onset - nb.onset || na.part - nb.part || na.chord_slot - nb.chord_slot;
  });
  return ids;
}

/** Effective pin set: manual pins plus every pitched note of a fixed part. */
export function effectivePins(state: EditorState): Map<number, number> {
  const out = new Map(state.pins);
  if (!state.score) return out;
  state.score.notes.forEach((note, id) => {
    if (state.fixedParts.has(note.part) && note.pitch !== null) {
      out.set(id, note.pitch);
    }
  });
  return out;
}

export function pinCount(state: EditorState): number {
  return effectivePins(state).size;
}

/** Pin an unpinned note (free notes need an explicit pitch) or unpin it. */
export function togglePin(state: EditorState, noteId: number, pitch?: number): EditorState {
  if (!state.score || noteId < 0 || noteId >= state.score.notes.length) {
    return { ...state, error: `no note with id ${noteId}` };
  }
  const pins = new Map(state.pins);
  if (pins.has(noteId)) {
    pins.delete(noteId);
  } else {
    const note = state.score.notes[noteId];
    const target = pitch ?? note.pitch;
    if (target === null || target === undefined) {
      return { ...state, error: "pinning a free note needs a pitch" };
    }
    pins.set(noteId, target);
  }
  return { ...state, pins, error: null };
}

export function fixPart(state: EditorState, part: number): EditorState {
  const fixedParts = new Set(state.fixedParts);
  fixedParts.add(part);
  return { ...state, fixedParts, error: null };
}

export function unfixPart(state: EditorState, part: number): EditorState {
  const fixedParts = new Set(state.fixedParts);
  fixedParts.delete(part);
  return { ...state, fixedParts, error: null };
}

export function setMethod(state: EditorState, method: Method): EditorState {
  return { ...state, method };
}

export function setPaths(state: EditorState, paths: number): EditorState {
  if (!Number.isInteger(paths) || paths < 1 || paths > MAX_PATHS) {
    return { ...state, error: `paths must be an integer in 1..${MAX_PATHS}` };
  }
  if (state.score && state.score.notes.length * paths > MAX_WORK) {
    return { ...state, error: `notes x paths exceeds the service cap ${MAX_WORK}` };
  }
  return { ...state, paths, error: null };
}

export function setSeed(state: EditorState, seed: number): EditorState {
  if (!Number.isInteger(seed)) {
    return { ...state, error: "seed must be an integer" };
  }
  return { ...state, seed, error: null };
}

/** Request body for /api/v1/harmonize: the loaded score verbatim (timing
 * untouched), the fixed parts, manual pins as a constraint clause, and the
 * generation parameters. Nothing else leaves the editor. */
export function buildRequest(state: EditorState): HarmonizeRequestBody {
  if (!state.score) {
    throw new Error("no score loaded");
  }
  const manualPins: Record<string, number> = {};
  for (const [noteId, pitch] of state.pins) {
    if (!state.fixedParts.has(state.score.notes[noteId].part)) {
      manualPins[String(noteId)] = pitch;
    }
  }
  const constraints: ConstraintDocument | null =
    Object.keys(manualPins).length > 0 ? { pinned_notes: manualPins } : null;
  return {
    score: state.score,
    constraints,
    fixed_parts: [...state.fixedParts].sort((a, b) => a - b),
    method: state.method,
    paths: state.paths,
    seed: state.seed,
    model: state.model,
  };
}

/** Adopt a service response verbatim: the displayed result is the returned
 * best score, never client-side synthesis. */
export function applyResponse(state: EditorState, response: HarmonizeResponseBody): EditorState {
  return { ...state, response, failureNoteId: null, error: null, busy: false };
}

export function applyFailure(state: EditorState, status: number, error: ServiceError): EditorState {
  let failureNoteId: number | null = null;
  if (status === 422 && state.score && error.position != null) {
    const order = orderOf(state.score);
    const index = error.position - 1;
    if (index >= 0 && index < order.length) {
      failureNoteId = order[index];
    }
  }
  return {
    ...state,
    failureNoteId,
    error: `${error.error}: ${error.detail}`,
    busy: false,
  };
}

/** The score currently rendered: the service's best result when present,
 * the loaded score otherwise. */
export function displayedScore(state: EditorState): ScoreDocument | null {
  if (state.response && state.response.results.length > 0) {
    return state.response.results[0].score;
  }
  return state.score;
}

export function nextSeed(state: EditorState): EditorState {
  return { ...state, seed: state.seed + 1 };
}
