#!/usr/bin/env python3
"""Generate the demo score and demo model used by the UI and `ccomp serve`.

Writes demo/score.json (a 4-part chorale-like piece with concrete pitches)
and demo/models/chorale.json (a bigram fitted on a small generated corpus).
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from ccomp.model import fit_ngram, save_model
from ccomp.score import NoteEvent, Score, order_events, serialize_score

PART_RANGES = {1: (43, 55), 2: (50, 62), 3: (55, 67), 4: (62, 74)}


def chord_tones(root: int, lo: int, hi: int) -> list[int]:
    classes = {root % 12, (root + 4) % 12, (root + 7) % 12}
    return [p for p in range(lo, hi + 1) if p % 12 in classes]


def make_piece(seed: int, steps: int, tpq: int = 480) -> Score:
    rng = np.random.default_rng(seed)
    root = int(rng.integers(12))
    notes = []
    for t in range(steps):
        if rng.random() > 0.7:
            root = int(rng.integers(12))
        for part in (1, 2, 3, 4):
            tones = chord_tones(root, *PART_RANGES[part])
            idx = int(np.clip(round((len(tones) - 1) / 2 + rng.normal(0, 1.0)),
                              0, len(tones) - 1))
            notes.append(NoteEvent(part=part, onset=t * tpq, duration=tpq,
                                   pitch=tones[idx]))
    parts = tuple((p, name) for p, name in
                  ((1, "bass"), (2, "tenor"), (3, "alto"), (4, "soprano")))
    return Score(ticks_per_quarter=tpq, parts=parts, notes=tuple(notes))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="demo")
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    out = Path(args.out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)

    corpus = [make_piece(args.seed * 1000 + k, steps=20) for k in range(16)]
    sequences = [[int(p) for p in order_events(piece).pitches] for piece in corpus]
    lo = min(r[0] for r in PART_RANGES.values())
    hi = max(r[1] for r in PART_RANGES.values())
    model = fit_ngram(sequences, order=2, smoothing=0.05,
                      alphabet=list(range(lo, hi + 1)))
    save_model(model, out / "models" / "chorale.json")

    demo = make_piece(args.seed + 77, steps=8)
    (out / "score.json").write_text(serialize_score(demo))
    print(f"wrote {out / 'score.json'} and {out / 'models' / 'chorale.json'}")


if __name__ == "__main__":
    main()
