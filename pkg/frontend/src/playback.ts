// Web Audio playback of a score: every pitched note is scheduled on the
// audio clock honoring its onset and duration in ticks. The tempo control
// rescales wall-clock seconds per tick only; tick data is never modified.

import { ScoreDocument } from "./types";

export interface GainParamLike {
  value: number;
  setValueAtTime?(value: number, when: number): void;
  linearRampToValueAtTime?(value: number, when: number): void;
}

export interface GainNodeLike {
  gain: GainParamLike;
  connect(target: unknown): void;
}

export interface OscillatorLike {
  type: string;
  frequency: { value: number };
  connect(target: unknown): void;
  start(when: number): void;
  stop(when: number): void;
}

export interface AudioContextLike {
  currentTime: number;
  destination: unknown;
  createOscillator(): OscillatorLike;
  createGain(): GainNodeLike;
  suspend(): Promise<void>;
  resume(): Promise<void>;
}

interface ScheduledNote {
  onset: number;
  duration: number;
  pitch: number;
}

export function midiToHz(pitch: number): number {
  return 440 * Math.pow(2, (pitch - 69) / 12);
}

export type PlayerStatus = "stopped" | "playing" | "paused";

export class Player {
  private ctx: AudioContextLike;
  private notes: ScheduledNote[] = [];
  private ticksPerQuarter = 480;
  private bpm: number;
  private status: PlayerStatus = "stopped";
  private startCtxTime = 0;
  private startTick = 0;
  private live: OscillatorLike[] = [];

  constructor(ctx: AudioContextLike, bpm = 100) {
    this.ctx = ctx;
    this.bpm = bpm;
  }

  get state(): PlayerStatus {
    return this.status;
  }

  get tempo(): number {
    return this.bpm;
  }

  secondsPerTick(): number {
    return 60 / (this.bpm * this.ticksPerQuarter);
  }

  load(score: ScoreDocument): void {
    this.stop();
    this.ticksPerQuarter = score.ticks_per_quarter;
    this.notes = score.notes
      .filter((n) => n.pitch !== null)
      .map((n) => ({ onset: n.onset, duration: n.duration, pitch: n.pitch as number }));
  }

  totalTicks(): number {
    return this.notes.reduce((acc, n) => Math.max(acc, n.onset + n.duration), 0);
  }

  /** Position on the tick axis; frozen while paused, 0 when stopped. */
  cursorTicks(): number {
    if (this.status === "stopped") return 0;
    const elapsed = this.ctx.currentTime - this.startCtxTime;
    const tick = this.startTick + elapsed / this.secondsPerTick();
    return Math.min(tick, this.totalTicks());
  }

  private scheduleFrom(fromTick: number): void {
    const spt = this.secondsPerTick();
    const now = this.ctx.currentTime;
    for (const note of this.notes) {
      const end = note.onset + note.duration;
      if (end <= fromTick) continue;
      const startAt = now + Math.max(0, note.onset - fromTick) * spt;
      const stopAt = now + (end - fromTick) * spt;
      const osc = this.ctx.createOscillator();
      osc.type = "triangle";
      osc.frequency.value = midiToHz(note.pitch);
      const gain = this.ctx.createGain();
      gain.gain.value = 0.12;
      if (gain.gain.setValueAtTime && gain.gain.linearRampToValueAtTime) {
        gain.gain.setValueAtTime(0.12, startAt);
        gain.gain.linearRampToValueAtTime(0.0001, stopAt);
      }
      osc.connect(gain);
      gain.connect(this.ctx.destination);
      osc.start(startAt);
      osc.stop(stopAt);
      this.live.push(osc);
    }
    this.startCtxTime = now;
    this.startTick = fromTick;
  }

  play(): void {
    if (this.status === "playing") return;
    if (this.status === "paused") {
      void this.ctx.resume();
      this.status = "playing";
      return;
    }
    if (this.notes.length === 0) return;
    this.scheduleFrom(0);
    this.status = "playing";
  }

  pause(): void {
    if (this.status !== "playing") return;
    void this.ctx.suspend();
    this.status = "paused";
  }

  stop(): void {
    for (const osc of this.live) {
      try {
        osc.stop(this.ctx.currentTime);
      } catch {
        // already stopped
      }
    }
    this.live = [];
    if (this.status === "paused") {
      void this.ctx.resume();
    }
    this.status = "stopped";
    this.startTick = 0;
  }

  /** Change playback speed; the piece's tick data is untouched. While
   * playing, rescheduling continues from the current position. */
  setTempo(bpm: number): void {
    if (bpm <= 0 || !Number.isFinite(bpm)) return;
    if (this.status === "playing") {
      const at = this.cursorTicks();
      for (const osc of this.live) {
        try {
          osc.stop(this.ctx.currentTime);
        } catch {
          // already stopped
        }
      }
      this.live = [];
      this.bpm = bpm;
      this.scheduleFrom(at);
    } else {
      this.bpm = bpm;
    }
  }
}
