"""Deterministic width-S search for the most probable feasible sequences.

Every entry is expanded by every admissible token each step; the S highest
cumulative log probabilities survive, ties broken by lexicographic token
order. At full width this is exhaustive search, at width 1 it is greedy
decoding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .constraints import PrefixConstraint
from .errors import UnsatisfiableConstraintError
from .model import CausalModel
from .score import OrderedSequence


@dataclass(frozen=True)
class BeamStepRecord:
    step: int
    width: int
    best_log_prob: float
    marginal: np.ndarray
    filtering: float | None = None


@dataclass
class BeamResult:
    """Ranked feasible sequences with their cumulative log probabilities."""

    entries: list[tuple[tuple[int, ...], float]]
    step_records: list[BeamStepRecord]
    filtering: dict[int, float]
    marginals: np.ndarray

    @property
    def best(self) -> tuple[tuple[int, ...], float]:
        return self.entries[0]

    def to_records(self) -> list[dict]:
        out = []
        for rec in self.step_records:
            out.append({
                "method": "beam",
                "step": rec.step,
                "width": rec.width,
                "best_log_prob": rec.best_log_prob,
                "filtering": rec.filtering,
                "marginal": [float(x) for x in rec.marginal],
            })
        return out


def run_constrained_beam(model: CausalModel, constraint: PrefixConstraint,
                         seq: OrderedSequence, width: int,
                         pinned: Mapping[int, int] | None = None) -> BeamResult:
    """Expand, score, keep top ``width``; outputs sorted best-first.

    ``pinned`` positions get the heuristic filtering analogue recorded:
    the unweighted mean over current entries of the model probability of
    the pinned token.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    pinned = dict(pinned) if pinned else {}
    n = seq.n
    v = model.vocab_size

    mstates = model.initial_state_batch(1)
    cbatch = constraint.init_batch(n, 1)
    prefixes = np.zeros((1, 0), dtype=np.int64)
    logps = np.zeros(1, dtype=np.float64)
    step_records: list[BeamStepRecord] = []
    filtering: dict[int, float] = {}

    for i in range(1, n + 1):
        feats = seq.features[i - 1]
        dists = model.predict_batch(mstates, feats)
        mask = constraint.allowed_batch(cbatch, i)

        if i in pinned:
            filtering[i] = float(dists[:, pinned[i]].mean())

        with np.errstate(divide="ignore"):
            cand = logps[:, None] + np.log(np.where(mask, dists, 1.0))
        flat_ok = mask.ravel()
        if not flat_ok.any():
            raise UnsatisfiableConstraintError(
                f"beam exhausted at position {i}", position=i)
        flat_logp = cand.ravel()[flat_ok]
        parents = np.repeat(np.arange(len(logps)), v)[flat_ok]
        tokens = np.tile(np.arange(v), len(logps))[flat_ok]

        # survivors: highest log prob, ties by lexicographic prefix order
        # (parents are kept in lexicographic order, so (parent, token) is
        # the lexicographic order of the extended prefixes)
        order = np.lexsort((tokens, parents, -flat_logp))
        keep = order[:min(width, len(order))]
        keep = keep[np.lexsort((tokens[keep], parents[keep]))]

        parent_idx = parents[keep]
        new_tokens = tokens[keep]
        prefixes = np.concatenate(
            [prefixes[parent_idx], new_tokens[:, None]], axis=1)
        logps = flat_logp[keep]
        mstates = model.gather(mstates, parent_idx)
        mstates = model.advance_batch(mstates, new_tokens, feats)
        cbatch = constraint.gather(cbatch, parent_idx)
        cbatch = constraint.step_batch(cbatch, new_tokens, i)

        counts = np.bincount(new_tokens, minlength=v).astype(np.float64)
        step_records.append(BeamStepRecord(
            step=i, width=len(logps),
            best_log_prob=float(logps.max()),
            marginal=counts / counts.sum(),
            filtering=filtering.get(i),
        ))

    final_order = np.lexsort(
        tuple(prefixes[:, j] for j in range(n - 1, -1, -1)) + (-logps,))
    entries = [
        (tuple(int(t) for t in prefixes[k]), float(logps[k])) for k in final_order
    ]
    marginals = np.zeros((n, v))
    for j in range(n):
        counts = np.bincount(prefixes[:, j], minlength=v).astype(np.float64)
        marginals[j] = counts / counts.sum()
    return BeamResult(entries=entries, step_records=step_records,
                      filtering=filtering, marginals=marginals)
