"""Symbolic scores with fixed rhythm and their reduction to ordered sequences.

A score is a set of note events with integer tick timing. Pitch may be left
free (``None``) for notes that are to be generated. Ordering events by the
pitch-blind key (onset, part, chord_slot) turns a score into a sequence
modeling problem; per-position timing features carry the rhythm into the
model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ScoreParseError, ScoreValidationError

MIN_PITCH = 0
MAX_PITCH = 127

#: Number of entries in the per-position timing feature vector.
FEATURE_DIM = 4

#: Version tag for the feature vector layout; stored in model files.
FEATURE_VERSION = 1


@dataclass(frozen=True)
class NoteEvent:
    """One note: fixed timing, possibly free pitch.

    ``chord_slot`` disambiguates simultaneous notes within one part.
    """

    part: int
    onset: int
    duration: int
    pitch: int | None = None
    chord_slot: int = 0

    def __post_init__(self):
        if self.part < 1:
            raise ScoreValidationError(f"part must be >= 1, got {self.part}")
        if self.onset < 0:
            raise ScoreValidationError(f"onset must be >= 0, got {self.onset}")
        if self.duration < 1:
            raise ScoreValidationError(f"duration must be >= 1, got {self.duration}")
        if self.chord_slot < 0:
            raise ScoreValidationError(f"chord_slot must be >= 0, got {self.chord_slot}")
        if self.pitch is not None and not MIN_PITCH <= self.pitch <= MAX_PITCH:
            raise ScoreValidationError(f"pitch out of range 0..127: {self.pitch}")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.onset, self.part, self.chord_slot)


@dataclass(frozen=True)
class Score:
    """Immutable score: declared parts plus note events."""

    ticks_per_quarter: int
    parts: tuple[tuple[int, str], ...]
    notes: tuple[NoteEvent, ...]

    def __post_init__(self):
        if self.ticks_per_quarter < 1:
            raise ScoreValidationError("ticks_per_quarter must be >= 1")
        part_ids = {pid for pid, _ in self.parts}
        if len(part_ids) != len(self.parts):
            raise ScoreValidationError("duplicate part id")
        seen: set[tuple[int, int, int]] = set()
        for note in self.notes:
            if note.part not in part_ids:
                raise ScoreValidationError(f"note references undeclared part {note.part}")
            if note.key in seen:
                raise ScoreValidationError(
                    f"duplicate (part, onset, chord_slot) = {note.key}"
                )
            seen.add(note.key)

    @property
    def n(self) -> int:
        return len(self.notes)

    def part_ids(self) -> tuple[int, ...]:
        return tuple(pid for pid, _ in self.parts)

    def with_pitches(self, pitches: Sequence[int | None]) -> "Score":
        """Return a copy whose i-th note carries ``pitches[i]``; timing unchanged."""
        if len(pitches) != self.n:
            raise ScoreValidationError("pitch list length differs from note count")
        notes = tuple(
            replace(note, pitch=p) for note, p in zip(self.notes, pitches)
        )
        return Score(self.ticks_per_quarter, self.parts, notes)


@dataclass(frozen=True)
class OrderedSequence:
    """A score flattened to generation order.

    ``order[p]`` is the note index occupying position p (0-based here;
    public position arguments are 1-based). The ordering key never reads
    pitch, so the permutation is identical whether pitches are free or
    concrete. ``features`` holds one row per position:
    (duration in quarters, inter-onset gap in quarters, beat phase, part).
    """

    order: tuple[int, ...]
    features: np.ndarray
    onsets: np.ndarray
    durations: np.ndarray
    parts: np.ndarray
    pitches: tuple[int | None, ...]

    @property
    def n(self) -> int:
        return len(self.order)


def order_events(score: Score) -> OrderedSequence:
    """Sort events by (onset, part, chord_slot) and derive timing features."""
    idx = sorted(range(score.n), key=lambda i: score.notes[i].key)
    tpq = float(score.ticks_per_quarter)
    n = score.n
    onsets = np.array([score.notes[i].onset for i in idx], dtype=np.int64)
    durations = np.array([score.notes[i].duration for i in idx], dtype=np.int64)
    parts = np.array([score.notes[i].part for i in idx], dtype=np.int64)
    features = np.zeros((n, FEATURE_DIM), dtype=np.float64)
    for p in range(n):
        gap = 0.0 if p == 0 else (onsets[p] - onsets[p - 1]) / tpq
        features[p] = (
            durations[p] / tpq,
            gap,
            (onsets[p] % score.ticks_per_quarter) / tpq,
            float(parts[p]),
        )
    return OrderedSequence(
        order=tuple(idx),
        features=features,
        onsets=onsets,
        durations=durations,
        parts=parts,
        pitches=tuple(score.notes[i].pitch for i in idx),
    )


def timing_features(seq: OrderedSequence, i: int) -> tuple[float, float, float, int]:
    """Feature vector at 1-based position ``i``."""
    if not 1 <= i <= seq.n:
        raise IndexError(f"position {i} outside 1..{seq.n}")
    row = seq.features[i - 1]
    return (float(row[0]), float(row[1]), float(row[2]), int(row[3]))


# --- score document (JSON) -------------------------------------------------

def _require(obj: dict, name: str, kind, where: str):
    if name not in obj:
        raise ScoreParseError(f"{where}: missing field '{name}'", field=name)
    value = obj[name]
    if kind is int and isinstance(value, bool):
        raise ScoreParseError(f"{where}: field '{name}' must be an integer", field=name)
    if not isinstance(value, kind):
        raise ScoreParseError(
            f"{where}: field '{name}' has wrong type {type(value).__name__}", field=name
        )
    return value


def parse_score(data: bytes | str) -> Score:
    """Parse a score document. Unknown fields are ignored."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ScoreParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScoreParseError("top level must be an object")
    tpq = _require(doc, "ticks_per_quarter", int, "score")
    raw_parts = _require(doc, "parts", list, "score")
    parts = []
    for k, p in enumerate(raw_parts):
        if not isinstance(p, dict):
            raise ScoreParseError(f"parts[{k}] must be an object", field="parts")
        parts.append((_require(p, "id", int, f"parts[{k}]"),
                      _require(p, "name", str, f"parts[{k}]")))
    raw_notes = _require(doc, "notes", list, "score")
    notes = []
    for k, note in enumerate(raw_notes):
        if not isinstance(note, dict):
            raise ScoreParseError(f"notes[{k}] must be an object", field="notes")
        where = f"notes[{k}]"
        pitch = note.get("pitch")
        if pitch is not None and (isinstance(pitch, bool) or not isinstance(pitch, int)):
            raise ScoreParseError(f"{where}: field 'pitch' must be an integer or null",
                                  field="pitch")
        slot = note.get("chord_slot", 0)
        if isinstance(slot, bool) or not isinstance(slot, int):
            raise ScoreParseError(f"{where}: field 'chord_slot' must be an integer",
                                  field="chord_slot")
        try:
            notes.append(NoteEvent(
                part=_require(note, "part", int, where),
                onset=_require(note, "onset", int, where),
                duration=_require(note, "duration", int, where),
                pitch=pitch,
                chord_slot=slot,
            ))
        except ScoreValidationError as exc:
            raise ScoreParseError(f"{where}: {exc}") from exc
    try:
        return Score(ticks_per_quarter=tpq, parts=tuple(parts), notes=tuple(notes))
    except ScoreValidationError:
        raise


def score_to_document(score: Score) -> dict:
    return {
        "ticks_per_quarter": score.ticks_per_quarter,
        "parts": [{"id": pid, "name": name} for pid, name in score.parts],
        "notes": [
            {
                "part": note.part,
                "onset": note.onset,
                "duration": note.duration,
                "pitch": note.pitch,
                "chord_slot": note.chord_slot,
            }
            for note in score.notes
        ],
    }


def serialize_score(score: Score) -> str:
    return json.dumps(score_to_document(score), indent=2) + "\n"


# --- Standard MIDI File export / restricted import -------------------------

def _vlq(value: int) -> bytes:
    """Variable-length quantity encoding."""
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    return bytes(reversed(out))


def score_to_midi(score: Score, velocity: int = 80) -> bytes:
    """Render as SMF format 1, one track per part. Free-pitch notes are skipped."""
    tracks = []
    for pid, name in score.parts:
        events: list[tuple[int, int, bytes]] = []
        channel = (pid - 1) % 16
        for note in score.notes:
            if note.part != pid or note.pitch is None:
                continue
            events.append((note.onset, 1, bytes([0x90 | channel, note.pitch, velocity])))
            events.append((note.onset + note.duration, 0, bytes([0x80 | channel, note.pitch, 0])))
        events.sort(key=lambda e: (e[0], e[1]))
        data = bytearray()
        data += _vlq(0) + bytes([0xFF, 0x03, len(name)]) + name.encode("ascii", "replace")
        clock = 0
        for tick, _, msg in events:
            data += _vlq(tick - clock) + msg
            clock = tick
        data += _vlq(0) + bytes([0xFF, 0x2F, 0x00])
        tracks.append(bytes(data))
    out = bytearray()
    out += b"MThd" + struct.pack(">IHHH", 6, 1, len(tracks), score.ticks_per_quarter)
    for t in tracks:
        out += b"MTrk" + struct.pack(">I", len(t)) + t
    return bytes(out)


def score_from_midi(data: bytes) -> Score:
    """Import an SMF whose tracks contain no overlapping notes.

    Each track becomes one part; a note-on while another note sounds on the
    same track is rejected.
    """
    if data[:4] != b"MThd":
        raise ScoreParseError("not a standard MIDI file")
    hlen, fmt, ntrk, division = struct.unpack(">IHHH", data[4:14])
    if division & 0x8000:
        raise ScoreParseError("SMPTE time division unsupported")
    pos = 8 + hlen
    parts: list[tuple[int, str]] = []
    notes: list[NoteEvent] = []
    for track_index in range(ntrk):
        if data[pos:pos + 4] != b"MTrk":
            raise ScoreParseError(f"track {track_index}: missing MTrk header")
        (length,) = struct.unpack(">I", data[pos + 4:pos + 8])
        chunk = data[pos + 8:pos + 8 + length]
        pos += 8 + length
        part_id = track_index + 1
        name = f"part{part_id}"
        clock = 0
        i = 0
        running = 0
        sounding: dict[int, int] = {}
        emitted = False
        while i < len(chunk):
            delta = 0
            while True:
                byte = chunk[i]
                i += 1
                delta = (delta << 7) | (byte & 0x7F)
                if not byte & 0x80:
                    break
            clock += delta
            status = chunk[i]
            if status & 0x80:
                i += 1
                running = status
            else:
                status = running
            kind = status & 0xF0
            if status == 0xFF:
                meta = chunk[i]
                i += 1
                mlen = 0
                while True:
                    byte = chunk[i]
                    i += 1
                    mlen = (mlen << 7) | (byte & 0x7F)
                    if not byte & 0x80:
                        break
                if meta == 0x03:
                    name = chunk[i:i + mlen].decode("ascii", "replace")
                i += mlen
            elif status in (0xF0, 0xF7):
                slen = 0
                while True:
                    byte = chunk[i]
                    i += 1
                    slen = (slen << 7) | (byte & 0x7F)
                    if not byte & 0x80:
                        break
                i += slen
            elif kind in (0x80, 0x90):
                pitch, vel = chunk[i], chunk[i + 1]
                i += 2
                if kind == 0x90 and vel > 0:
                    if sounding:
                        raise ScoreParseError(
                            f"track {track_index}: overlapping notes at tick {clock}"
                        )
                    sounding[pitch] = clock
                else:
                    if pitch in sounding:
                        start = sounding.pop(pitch)
                        notes.append(NoteEvent(
                            part=part_id, onset=start,
                            duration=max(1, clock - start), pitch=pitch,
                        ))
                        emitted = True
            elif kind in (0xA0, 0xB0, 0xE0):
                i += 2
            elif kind in (0xC0, 0xD0):
                i += 1
            else:
                raise ScoreParseError(f"track {track_index}: unsupported status {status:#x}")
        if emitted or ntrk == 1:
            parts.append((part_id, name))
    used = {note.part for note in notes}
    parts = [p for p in parts if p[0] in used] or parts[:1]
    return Score(ticks_per_quarter=division, parts=tuple(parts), notes=tuple(notes))
