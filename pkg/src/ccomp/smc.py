"""Sequential Monte Carlo over constrained causal sequences.

The sampler grows all particles position by position: propose from the
model conditional renormalized over admissible tokens, weight each particle
by the admissible probability mass, then duplicate/delete particles by
systematic resampling. With no constraint active the weights are one and
the particles are plain ancestral samples; with only pinned positions the
weights reduce to the model probability of the pinned token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .constraints import PrefixConstraint
from .errors import DeadEndError, ZeroWeightError
from .model import CausalModel
from .rng import RunRng
from .score import OrderedSequence

RESAMPLE_POLICIES = ("always", "ess", "never")


@dataclass
class Particle:
    """Single-particle view used by the scalar proposal step."""

    prefix: tuple[int, ...]
    model_state: object
    constraint_state: object
    log_weight: float = 0.0


@dataclass(frozen=True)
class StepRecord:
    step: int
    ess: float
    weight_mean: float
    weight_min: float
    weight_max: float
    resampled: bool
    marginal: np.ndarray
    filtering: float | None = None


@dataclass
class PosteriorEstimate:
    """Weighted empirical measure over complete feasible sequences.

    ``pinned_probs[i]`` records, per particle, the model probability of the
    pinned token at step i given that particle's history (the Eq-5 weight).
    """

    samples: list[tuple[int, ...]]
    weights: np.ndarray
    step_records: list[StepRecord]
    step_weights: list[np.ndarray]
    filtering: dict[int, float]
    pinned_probs: dict[int, np.ndarray]
    marginals: np.ndarray
    seed: int
    num_particles: int

    def to_records(self) -> list[dict]:
        """Line-oriented diagnostics (one record per step) for export."""
        out = []
        for rec in self.step_records:
            out.append({
                "method": "smc",
                "step": rec.step,
                "ess": rec.ess,
                "weight_mean": rec.weight_mean,
                "weight_min": rec.weight_min,
                "weight_max": rec.weight_max,
                "resampled": rec.resampled,
                "filtering": rec.filtering,
                "marginal": [float(x) for x in rec.marginal],
            })
        return out


def effective_sample_size(weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2, in [1, S]."""
    weights = np.asarray(weights, dtype=np.float64)
    total_sq = weights.sum() ** 2
    denom = (weights ** 2).sum()
    if denom == 0.0:
        raise ZeroWeightError(step=0)
    return float(total_sq / denom)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator,
                        count: int | None = None) -> np.ndarray:
    """Low-variance resampling from one stratified uniform draw.

    Draws ``count`` indices (default: one per weight). Copy counts are
    always floor(count*w) or ceil(count*w) of the normalized weights, and
    their expectation is exact. Invariant under positive rescaling of the
    weights.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    total = weights.sum()
    if total <= 0:
        raise ZeroWeightError(step=0)
    if count is None:
        count = len(weights)
    cum = np.cumsum(weights / total)
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    points = (u + np.arange(count)) / count
    indices = np.searchsorted(cum, points, side="left")
    return np.minimum(indices, len(weights) - 1).astype(np.int64)


def incremental_weight(z_q: float) -> float:
    """The admissible-mass normalizer is the step weight (constants drop out)."""
    return z_q


def propose_token(model: CausalModel, particle: Particle, constraint: PrefixConstraint,
                  i: int, rng: np.random.Generator,
                  features=None) -> tuple[int, float]:
    """Draw token i from the constrained proposal; returns (token, Z_q).

    Z_q is the total model probability of admissible continuations, i.e.
    the incremental weight of the particle.
    """
    dist = model.predict(particle.model_state, features)
    mask = constraint.allowed(particle.constraint_state, i)
    if mask.all():
        z_q = 1.0
        masked = dist
    else:
        masked = np.where(mask, dist, 0.0)
        z_q = float(masked.sum())
        if z_q <= 0.0:
            raise DeadEndError(i)
    cum = np.cumsum(masked)
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    token = int(np.searchsorted(cum, u * cum[-1], side="left"))
    return min(token, model.vocab_size - 1), z_q


def _sample_rows(masked: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row of a matrix of unnormalized masses."""
    cum = np.cumsum(masked, axis=1)
    targets = u * cum[:, -1]
    tokens = (cum < targets[:, None]).sum(axis=1)
    return np.minimum(tokens, masked.shape[1] - 1)


def run_constrained_smc(model: CausalModel, constraint: PrefixConstraint,
                        seq: OrderedSequence, num_particles: int, seed: int,
                        resample_policy: str = "always",
                        pinned: Mapping[int, int] | None = None) -> PosteriorEstimate:
    """Algorithm: propose, append, weight, resample, for each position.

    ``resample_policy``: "always" resamples every step, "ess" when the
    effective sample size drops below half the ensemble, "never" only keeps
    running weights. Particles that dead-end (possible only under direct
    callback rules) get weight zero and are culled by an immediate
    resample; if every particle dies the constraint is unsatisfiable and
    the run aborts.
    """
    if num_particles < 1:
        raise ValueError("need at least one particle")
    if resample_policy not in RESAMPLE_POLICIES:
        raise ValueError(f"unknown resample policy {resample_policy!r}")
    pinned = dict(pinned) if pinned else {}
    n = seq.n
    v = model.vocab_size
    s = num_particles
    rng = RunRng(seed)

    mstates = model.initial_state_batch(s)
    cbatch = constraint.init_batch(n, s)
    prefixes = np.zeros((s, n), dtype=np.int64)
    running = np.ones(s, dtype=np.float64)
    step_records: list[StepRecord] = []
    step_weights: list[np.ndarray] = []
    filtering: dict[int, float] = {}
    pinned_probs: dict[int, np.ndarray] = {}

    for i in range(1, n + 1):
        feats = seq.features[i - 1]
        dists = model.predict_batch(mstates, feats)
        mask = constraint.allowed_batch(cbatch, i)

        if i in pinned:
            hist = running / running.sum()
            pinned_probs[i] = dists[:, pinned[i]].copy()
            filtering[i] = float(np.dot(hist, pinned_probs[i]))

        masked = np.where(mask, dists, 0.0)
        full = mask.all(axis=1)
        z_raw = masked.sum(axis=1)
        z_q = np.where(full, 1.0, z_raw)
        dead = z_raw <= 0.0
        if dead.all():
            raise ZeroWeightError(step=i)
        z_q = np.where(dead, 0.0, z_q)

        u = rng.proposal_uniforms(i, s)
        tokens = _sample_rows(masked, u)
        if dead.any():
            tokens[dead] = 0
        # guard against float rounding landing on a masked token
        chosen_ok = mask[np.arange(s), tokens] | dead
        if not chosen_ok.all():
            for j in np.flatnonzero(~chosen_ok):
                tokens[j] = int(np.flatnonzero(mask[j])[-1])

        prefixes[:, i - 1] = tokens
        mstates = model.advance_batch(mstates, tokens, feats)
        cbatch = constraint.step_batch(cbatch, tokens, i)

        w_step = z_q
        step_weights.append(w_step.copy())
        running = running * w_step
        total = running.sum()
        if total <= 0.0:
            raise ZeroWeightError(step=i)
        norm = running / total
        ess = 1.0 / float((norm ** 2).sum())
        marginal = np.bincount(tokens, weights=norm, minlength=v)

        do_resample = (
            resample_policy == "always"
            or (resample_policy == "ess" and ess < s / 2)
            or bool(dead.any())
        )
        if do_resample:
            indices = systematic_resample(running, rng.resample_generator(i))
            prefixes = prefixes[indices]
            mstates = model.gather(mstates, indices)
            cbatch = constraint.gather(cbatch, indices)
            running = np.ones(s, dtype=np.float64)

        step_records.append(StepRecord(
            step=i, ess=ess,
            weight_mean=float(w_step.mean()),
            weight_min=float(w_step.min()),
            weight_max=float(w_step.max()),
            resampled=do_resample,
            marginal=marginal,
            filtering=filtering.get(i),
        ))

    weights = running / running.sum()
    marginals = np.zeros((n, v))
    for j in range(n):
        marginals[j] = np.bincount(prefixes[:, j], weights=weights, minlength=v)
    samples = [tuple(int(t) for t in row) for row in prefixes]
    return PosteriorEstimate(
        samples=samples, weights=weights, step_records=step_records,
        step_weights=step_weights, filtering=filtering,
        pinned_probs=pinned_probs, marginals=marginals,
        seed=seed, num_particles=s,
    )


def filtering_probability(estimate: PosteriorEstimate,
                          positions: Sequence[int]) -> tuple[dict[int, float], float]:
    """Per-position filtering values of pinned positions plus their mean log."""
    values = {}
    for pos in positions:
        if pos not in estimate.filtering:
            raise KeyError(f"position {pos} was not pinned in this run")
        values[pos] = estimate.filtering[pos]
    mean_log = (
        sum(math.log(x) for x in values.values()) / len(values) if values else 0.0
    )
    return values, mean_log


def posterior_distribution(estimate: PosteriorEstimate) -> dict[tuple[int, ...], float]:
    """Collapse the weighted samples into a distribution over sequences."""
    out: dict[tuple[int, ...], float] = {}
    for sample, w in zip(estimate.samples, estimate.weights):
        out[sample] = out.get(sample, 0.0) + float(w)
    return out
