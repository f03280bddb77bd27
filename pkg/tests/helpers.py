"""Shared builders for test scores, models, and small-language enumeration."""

from __future__ import annotations

import numpy as np

from ccomp.constraints import PrefixConstraint
from ccomp.errors import UnsatisfiableConstraintError
from ccomp.model import NGramModel
from ccomp.score import NoteEvent, Score, order_events


def linear_score(n: int, tpq: int = 480, part: int = 1,
                 pitches: list[int | None] | None = None) -> Score:
    """n sequential quarter notes in one part."""
    if pitches is None:
        pitches = [None] * n
    notes = tuple(
        NoteEvent(part=part, onset=i * tpq, duration=tpq, pitch=pitches[i])
        for i in range(n)
    )
    return Score(ticks_per_quarter=tpq, parts=((part, "p"),), notes=notes)


def grid_score(num_parts: int, steps: int, tpq: int = 480,
               pitches: dict[tuple[int, int], int] | None = None) -> Score:
    """num_parts x steps grid of simultaneous quarter notes."""
    pitches = pitches or {}
    notes = []
    for t in range(steps):
        for p in range(1, num_parts + 1):
            notes.append(NoteEvent(part=p, onset=t * tpq, duration=tpq,
                                   pitch=pitches.get((p, t))))
    parts = tuple((p, f"part{p}") for p in range(1, num_parts + 1))
    return Score(ticks_per_quarter=tpq, parts=parts, notes=tuple(notes))


def random_bigram(vocab: int, seed: int, smoothing: float = 0.5,
                  alphabet: list[int] | None = None) -> NGramModel:
    rng = np.random.default_rng(seed)
    counts = {(): rng.random(vocab) * 10.0}
    for a in range(vocab):
        counts[(a,)] = rng.random(vocab) * 10.0
    if alphabet is None:
        alphabet = list(range(60, 60 + vocab))
    return NGramModel(order=2, smoothing=smoothing, alphabet=alphabet, counts=counts)


def enumerate_language(constraint: PrefixConstraint, vocab: int, n: int) -> set[tuple[int, ...]]:
    """All length-n token sequences accepted by walking allowed sets."""
    try:
        init = constraint.init_state(n)
    except UnsatisfiableConstraintError:
        return set()
    out: set[tuple[int, ...]] = set()

    def walk(prefix: tuple[int, ...], state):
        if len(prefix) == n:
            out.add(prefix)
            return
        i = len(prefix) + 1
        mask = constraint.allowed(state, i)
        for token in np.flatnonzero(mask):
            nxt = constraint.step(state, int(token), i)
            if nxt is not None:
                walk(prefix + (int(token),), nxt)

    walk((), init)
    return out


# --- chorale-like testbed ---------------------------------------------------
#
# Four voices realize a persistent triad whose root occasionally jumps; each
# voice sits near the middle of its register with noise. A bigram fit on
# interleaved sequences from this process inherits the chord persistence, so
# conditioning on fixed voices is informative.

_PART_RANGES = {1: (43, 55), 2: (50, 62), 3: (55, 67), 4: (62, 74)}


def _chord_tones(root: int, lo: int, hi: int) -> list[int]:
    classes = {root % 12, (root + 4) % 12, (root + 7) % 12}
    return [p for p in range(lo, hi + 1) if p % 12 in classes]


def chorale_alphabet() -> list[int]:
    lo = min(r[0] for r in _PART_RANGES.values())
    hi = max(r[1] for r in _PART_RANGES.values())
    return list(range(lo, hi + 1))


def make_chorale_score(seed: int, steps: int = 12, tpq: int = 480,
                       stay: float = 0.7) -> Score:
    rng = np.random.default_rng(seed)
    root = int(rng.integers(12))
    pitches: dict[tuple[int, int], int] = {}
    for t in range(steps):
        if rng.random() > stay:
            root = int(rng.integers(12))
        for part in (1, 2, 3, 4):
            tones = _chord_tones(root, *_PART_RANGES[part])
            idx = int(np.clip(round((len(tones) - 1) / 2 + rng.normal(0, 1.0)),
                              0, len(tones) - 1))
            pitches[(part, t)] = tones[idx]
    return grid_score(4, steps, tpq=tpq, pitches=pitches)


def make_chorale_corpus(seed: int, pieces: int = 8, steps: int = 16):
    """Pitch sequences (in generation order) from seeded chorale scores."""
    sequences = []
    for k in range(pieces):
        score = make_chorale_score(seed * 1000 + k, steps=steps)
        seq = order_events(score)
        sequences.append([int(p) for p in seq.pitches])
    return sequences


def sample_pitch_sequence(model, length: int, seed: int) -> list[int]:
    """Ancestral sample of pitches from a fitted model (no constraint)."""
    rng = np.random.default_rng(seed)
    state = model.initial_state()
    out = []
    for _ in range(length):
        probs = model.predict(state)
        token = int(rng.choice(len(probs), p=probs))
        out.append(int(model.alphabet[token]))
        state = model.advance(state, token, None)
    return out


def sample_score_from_model(model, steps: int, seed: int, tpq: int = 480) -> Score:
    """A 4-part score whose pitches are one ancestral model sample."""
    pitches = sample_pitch_sequence(model, 4 * steps, seed)
    grid = {}
    k = 0
    for t in range(steps):
        for part in (1, 2, 3, 4):
            grid[(part, t)] = pitches[k]
            k += 1
    return grid_score(4, steps, tpq=tpq, pitches=grid)
