"""Harmonization pipeline: fix voices, build the constraint set, run a
sampler, and score the results.

The default constraint set pins every note of the fixed parts and forbids
unison among simultaneously sounding notes of one part; further clauses
(explicit pins, per-note allowed sets, per-part pitch ranges, per-part
no-repeat) are opt-in via a constraint document.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .beam import run_constrained_beam
from .constraints import (
    NoUnisonConstraint,
    PartNoRepeatConstraint,
    PrefixConstraint,
    build_unary,
    conjoin,
)
from .errors import (
    ModelMismatchError,
    ScoreParseError,
    UnsatisfiableConstraintError,
)
from .model import CausalModel, token_sequence_log_prob
from .score import OrderedSequence, Score, order_events
from .smc import PosteriorEstimate, run_constrained_smc

METHODS = ("smc", "beam")


@dataclass(frozen=True)
class ConstraintSpec:
    """Parsed constraint document; all clauses are optional.

    ``pinned_notes`` and ``allowed_pitches`` are keyed by note id (index in
    the score's note list). ``pitch_range`` maps part id to an inclusive
    pitch interval.
    """

    pinned_notes: dict[int, int] = field(default_factory=dict)
    allowed_pitches: dict[int, tuple[int, ...]] = field(default_factory=dict)
    pitch_range: dict[int, tuple[int, int]] = field(default_factory=dict)
    no_repeat_parts: tuple[int, ...] = ()
    no_unison: bool | None = None

    @classmethod
    def from_document(cls, doc: dict) -> "ConstraintSpec":
        def int_keys(name):
            raw = doc.get(name) or {}
            if not isinstance(raw, dict):
                raise ScoreParseError(f"'{name}' must be an object", field=name)
            try:
                return {int(k): v for k, v in raw.items()}
            except ValueError as exc:
                raise ScoreParseError(f"'{name}' keys must be integers", field=name) from exc

        no_unison = doc.get("no_unison")
        if no_unison is not None and not isinstance(no_unison, bool):
            raise ScoreParseError("'no_unison' must be a boolean", field="no_unison")
        return cls(
            pinned_notes={k: int(v) for k, v in int_keys("pinned_notes").items()},
            allowed_pitches={k: tuple(int(p) for p in v)
                             for k, v in int_keys("allowed_pitches").items()},
            pitch_range={k: (int(v[0]), int(v[1]))
                         for k, v in int_keys("pitch_range").items()},
            no_repeat_parts=tuple(int(p) for p in doc.get("no_repeat_parts") or ()),
            no_unison=no_unison,
        )

    @classmethod
    def parse(cls, data: bytes | str) -> "ConstraintSpec":
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ScoreParseError(f"constraint file is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ScoreParseError("constraint document must be an object")
        return cls.from_document(doc)


@dataclass(frozen=True)
class HarmonizationRequest:
    score: Score
    fixed_parts: frozenset[int] = frozenset()
    extra: ConstraintSpec | None = None
    method: str = "smc"
    paths: int = 512
    seed: int = 0
    resample_policy: str = "always"
    max_outputs: int = 10

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        unknown = self.fixed_parts - set(self.score.part_ids())
        if unknown:
            raise ModelMismatchError(f"fixed parts not in score: {sorted(unknown)}")


@dataclass
class HarmonizationResult:
    scores: list[Score]
    log_probs: list[float]
    filtering: dict[int, float]
    mean_log_filtering: float | None
    marginals: np.ndarray
    alphabet: tuple[int, ...]
    order: tuple[int, ...]
    pinned_positions: tuple[int, ...]
    diagnostics: list[dict]
    seed: int
    method: str
    paths: int
    wall_ms: float

    @property
    def best_score(self) -> Score:
        return self.scores[0]

    @property
    def best_log_prob(self) -> float:
        return self.log_probs[0]


def compile_constraints(seq: OrderedSequence, score: Score, model: CausalModel,
                        fixed_parts: frozenset[int],
                        extra: ConstraintSpec | None) -> tuple[PrefixConstraint, dict[int, int]]:
    """Turn the request into (conjoined constraint, pinned position map).

    Raises ``UnsatisfiableConstraintError`` naming the earliest failing
    position whenever a clause leaves a note with no admissible pitch, or
    two pins collide with the unison rule.
    """
    extra = extra or ConstraintSpec()
    v = model.vocab_size
    n = seq.n
    note_to_pos = {note_idx: pos + 1 for pos, note_idx in enumerate(seq.order)}

    pinned: dict[int, int] = {}
    for pos in range(1, n + 1):
        note = score.notes[seq.order[pos - 1]]
        if note.part in fixed_parts:
            if note.pitch is None:
                raise ModelMismatchError(
                    f"fixed part {note.part} contains a free pitch (note {seq.order[pos - 1]})")
            pinned[pos] = model.token_of(note.pitch)
    for note_id, pitch in extra.pinned_notes.items():
        if note_id not in note_to_pos:
            raise ScoreParseError(f"pinned note id {note_id} not in score",
                                  field="pinned_notes")
        pos = note_to_pos[note_id]
        token = model.token_of(pitch)
        if pos in pinned and pinned[pos] != token:
            raise UnsatisfiableConstraintError(
                f"note {note_id} pinned to two different pitches", position=pos)
        pinned[pos] = token

    sets: list[set[int]] = [set(range(v)) for _ in range(n)]
    restricted = False
    for pos, token in pinned.items():
        sets[pos - 1] = {token}
        restricted = True
    for note_id, pitches in extra.allowed_pitches.items():
        if note_id not in note_to_pos:
            raise ScoreParseError(f"allowed-set note id {note_id} not in score",
                                  field="allowed_pitches")
        pos = note_to_pos[note_id]
        tokens = {model.token_of(p) for p in pitches}
        sets[pos - 1] &= tokens
        restricted = True
    for part, (lo, hi) in extra.pitch_range.items():
        tokens = {t for t, p in enumerate(model.alphabet) if lo <= p <= hi}
        for pos in range(1, n + 1):
            if seq.parts[pos - 1] == part:
                sets[pos - 1] &= tokens
                restricted = True
    for pos in range(1, n + 1):
        if not sets[pos - 1]:
            raise UnsatisfiableConstraintError(
                f"no admissible pitch at position {pos}", position=pos)

    components: list[PrefixConstraint] = []
    if restricted:
        components.append(build_unary(sets, v))
    use_no_unison = True if extra.no_unison is None else extra.no_unison
    if use_no_unison:
        no_unison = NoUnisonConstraint(seq, v)
        # static pin conflict check: two pins on overlapping same-part notes
        for pos, token in sorted(pinned.items()):
            for j in no_unison.overlap_prev[pos]:
                if pinned.get(j) == token:
                    raise UnsatisfiableConstraintError(
                        f"pinned pitch at position {pos} collides with a "
                        f"sounding pin at position {j} (unison)", position=pos)
        if not no_unison.vacuous:
            components.append(no_unison)
    for part in extra.no_repeat_parts:
        components.append(PartNoRepeatConstraint(seq, part, v))
    constraint = conjoin(components, alphabet_size=v)
    return constraint, pinned


def _rebuild_score(score: Score, seq: OrderedSequence, model: CausalModel,
                   tokens: Sequence[int], fixed_parts: frozenset[int]) -> Score:
    pitches: list[int | None] = [note.pitch for note in score.notes]
    for pos, token in enumerate(tokens):
        note_idx = seq.order[pos]
        if score.notes[note_idx].part in fixed_parts:
            continue
        pitches[note_idx] = model.pitch_of(int(token))
    return score.with_pitches(pitches)


def harmonize(request: HarmonizationRequest, model: CausalModel) -> HarmonizationResult:
    """Run the requested sampler under the compiled constraint set."""
    started = time.perf_counter()
    score = request.score
    seq = order_events(score)
    constraint, pinned = compile_constraints(
        seq, score, model, request.fixed_parts, request.extra)

    if request.method == "smc":
        estimate = run_constrained_smc(
            model, constraint, seq, request.paths, request.seed,
            resample_policy=request.resample_policy, pinned=pinned)
        ranked = _rank_smc_samples(model, seq, estimate, request.max_outputs)
        filtering = estimate.filtering
        marginals = estimate.marginals
        diagnostics = estimate.to_records()
    else:
        result = run_constrained_beam(model, constraint, seq, request.paths,
                                      pinned=pinned)
        ranked = result.entries[:request.max_outputs]
        filtering = result.filtering
        marginals = result.marginals
        diagnostics = result.to_records()

    scores = [_rebuild_score(score, seq, model, tokens, request.fixed_parts)
              for tokens, _ in ranked]
    log_probs = [lp for _, lp in ranked]
    mean_log_filtering = (
        sum(math.log(x) for x in filtering.values()) / len(filtering)
        if filtering else None
    )
    wall_ms = (time.perf_counter() - started) * 1000.0
    return HarmonizationResult(
        scores=scores, log_probs=log_probs, filtering=dict(sorted(filtering.items())),
        mean_log_filtering=mean_log_filtering, marginals=marginals,
        alphabet=model.alphabet, order=seq.order,
        pinned_positions=tuple(sorted(pinned)), diagnostics=diagnostics,
        seed=request.seed, method=request.method, paths=request.paths,
        wall_ms=wall_ms,
    )


def _rank_smc_samples(model: CausalModel, seq: OrderedSequence,
                      estimate: PosteriorEstimate,
                      max_outputs: int) -> list[tuple[tuple[int, ...], float]]:
    """Distinct final particles ordered by model log probability."""
    unique = sorted(set(estimate.samples))
    scored = [
        (tokens, token_sequence_log_prob(model, seq.features, tokens))
        for tokens in unique
    ]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:max_outputs]


def evaluate_harmonization(result: HarmonizationResult, model: CausalModel) -> dict:
    """Fig-of-merit report: nats per note of the best sequence, and the mean
    log filtering probability over pinned positions."""
    if not result.scores:
        raise ValueError("empty harmonization result")
    n = len(result.order)
    return {
        "method": result.method,
        "paths": result.paths,
        "best_log_prob": result.best_log_prob,
        "mean_logp_note": result.best_log_prob / n if n else 0.0,
        "mean_log_filtering": result.mean_log_filtering,
        "num_results": len(result.scores),
        "wall_ms": result.wall_ms,
    }


def sweep_fixed_subsets(score: Score, m: int, method: str, paths: int, seed: int,
                        model: CausalModel,
                        extra: ConstraintSpec | None = None) -> dict:
    """Harmonize with every C(4, m) choice of fixed parts; aggregate metrics."""
    part_ids = score.part_ids()
    if len(part_ids) != 4:
        raise ValueError(f"sweep requires exactly 4 parts, found {len(part_ids)}")
    if not 0 <= m <= 4:
        raise ValueError("m must be between 0 and 4")
    rows = []
    for subset in itertools.combinations(sorted(part_ids), m):
        request = HarmonizationRequest(
            score=score, fixed_parts=frozenset(subset), extra=extra,
            method=method, paths=paths, seed=seed)
        result = harmonize(request, model)
        metrics = evaluate_harmonization(result, model)
        rows.append({
            "subset": list(subset),
            "mean_logp_note": metrics["mean_logp_note"],
            "mean_log_filtering": metrics["mean_log_filtering"],
            "wall_ms": metrics["wall_ms"],
        })

    def aggregate(key):
        values = [r[key] for r in rows if r[key] is not None]
        if not values:
            return {"mean": None, "stderr": None}
        mean = sum(values) / len(values)
        if len(values) > 1:
            var = sum((x - mean) ** 2 for x in values) / (len(values) - 1)
            stderr = math.sqrt(var / len(values))
        else:
            stderr = 0.0
        return {"mean": mean, "stderr": stderr}

    return {
        "method": method, "paths": paths, "m": m, "seed": seed,
        "rows": rows,
        "aggregate": {
            "mean_logp_note": aggregate("mean_logp_note"),
            "mean_log_filtering": aggregate("mean_log_filtering"),
        },
    }


def format_sweep_table(report: dict) -> str:
    """Tabular text: one row per run."""
    lines = ["method\tpaths\tm\tsubset\tmean_logp_note\tmean_log_filtering\twall_ms"]
    for row in report["rows"]:
        filt = row["mean_log_filtering"]
        lines.append("\t".join([
            report["method"], str(report["paths"]), str(report["m"]),
            ",".join(str(p) for p in row["subset"]) or "-",
            f"{row['mean_logp_note']:.6f}",
            "-" if filt is None else f"{filt:.6f}",
            f"{row['wall_ms']:.1f}",
        ]))
    agg = report["aggregate"]

    def fmt(entry):
        if entry["mean"] is None:
            return "-"
        return f"{entry['mean']:.6f} +/- {entry['stderr']:.6f}"

    lines.append(f"# aggregate mean_logp_note: {fmt(agg['mean_logp_note'])}")
    lines.append(f"# aggregate mean_log_filtering: {fmt(agg['mean_log_filtering'])}")
    return "\n".join(lines) + "\n"


def marginal_heatmap(result: HarmonizationResult) -> dict:
    """Per-position distribution grid (Fig-2-style): columns sum to one.

    SMC columns are the weighted empirical marginals of the final ensemble;
    beam columns are unweighted frequencies over the retained paths. Pinned
    positions are point masses by construction.
    """
    return {
        "alphabet": list(result.alphabet),
        "note_ids": list(result.order),
        "pinned_positions": list(result.pinned_positions),
        "columns": [[float(x) for x in row] for row in result.marginals],
    }
