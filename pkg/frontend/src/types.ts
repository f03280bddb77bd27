// Wire types mirroring the service's score, constraint, and harmonize schemas.

export interface NoteDocument {
  part: number;
  onset: number;
  duration: number;
  pitch: number | null;
  chord_slot: number;
}

export interface PartDocument {
  id: number;
  name: string;
}

export interface ScoreDocument {
  ticks_per_quarter: number;
  parts: PartDocument[];
  notes: NoteDocument[];
}

export interface ConstraintDocument {
  pinned_notes?: Record<string, number>;
  allowed_pitches?: Record<string, number[]>;
  pitch_range?: Record<string, [number, number]>;
  no_repeat_parts?: number[];
  no_unison?: boolean;
}

export type Method = "smc" | "beam";

export interface HarmonizeRequestBody {
  score: ScoreDocument;
  constraints: ConstraintDocument | null;
  fixed_parts: number[];
  method: Method;
  paths: number;
  seed: number;
  model: string | null;
}

export interface HeatmapGrid {
  alphabet: number[];
  note_ids: number[];
  pinned_positions: number[];
  columns: number[][];
}

export interface HarmonizeMetrics {
  method: string;
  paths: number;
  best_log_prob: number;
  mean_logp_note: number;
  mean_log_filtering: number | null;
  num_results: number;
}

export interface HarmonizeResponseBody {
  seed: number;
  method: string;
  paths: number;
  results: { score: ScoreDocument; log_prob: number }[];
  metrics: HarmonizeMetrics;
  filtering: Record<string, number>;
  heatmap: HeatmapGrid;
}

export interface ServiceError {
  error: string;
  detail: string;
  position?: number | null;
}

export interface ModelInfo {
  name: string;
  kind: string;
  alphabet_size: number;
}

// caps mirrored from the service so the UI rejects bad requests up front
export const MAX_PATHS = 8192;
export const MAX_NOTES = 2000;
export const MAX_WORK = 4_000_000;
