// Score builders shared by the frontend tests.

import { NoteDocument, ScoreDocument } from "../src/types";

export function gridScore(parts: number, steps: number, tpq = 480,
                          pitchAt?: (part: number, t: number) => number | null): ScoreDocument {
  const notes: NoteDocument[] = [];
  for (let t = 0; t < steps; t++) {
    for (let part = 1; part <= parts; part++) {
      notes.push({
        part,
        onset: t * tpq,
        duration: tpq,
        pitch: pitchAt ? pitchAt(part, t) : 48 + 4 * part + (t % 5),
        chord_slot: 0,
      });
    }
  }
  return {
    ticks_per_quarter: tpq,
    parts: Array.from({ length: parts }, (_, i) => ({ id: i + 1, name: `part${i + 1}` })),
    notes,
  };
}

/** One part with two simultaneous notes (a chord) plus a later note. */
export function chordScore(): ScoreDocument {
  return {
    ticks_per_quarter: 480,
    parts: [{ id: 1, name: "piano" }],
    notes: [
      { part: 1, onset: 0, duration: 960, pitch: 60, chord_slot: 0 },
      { part: 1, onset: 0, duration: 960, pitch: 64, chord_slot: 1 },
      { part: 1, onset: 960, duration: 480, pitch: 62, chord_slot: 0 },
    ],
  };
}
