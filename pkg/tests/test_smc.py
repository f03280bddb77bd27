import math

import numpy as np
import pytest

from ccomp.constraints import (
    NoUnisonConstraint,
    build_no_repeat,
    build_unary,
    conjoin,
    identity_constraint,
    verify_sequence,
)
from ccomp.errors import DeadEndError, UnsatisfiableConstraintError, ZeroWeightError
from ccomp.model import NGramModel, token_sequence_log_prob
from ccomp.oracle import enumerate_exact_posterior, total_variation
from ccomp.score import NoteEvent, Score, order_events
from ccomp.smc import (
    Particle,
    PosteriorEstimate,
    effective_sample_size,
    filtering_probability,
    incremental_weight,
    posterior_distribution,
    propose_token,
    run_constrained_smc,
    systematic_resample,
)

from helpers import linear_score, random_bigram


def iid_model(probs: dict[int, float]) -> NGramModel:
    v = len(probs)
    counts = {(): np.array([probs[t] for t in range(v)]) * 1000.0}
    return NGramModel(order=1, smoothing=0.0, alphabet=list(range(60, 60 + v)),
                      counts=counts)


# --- propose_token ----------------------------------------------------------

def test_propose_renormalizes_over_allowed():
    model = iid_model({0: 0.2, 1: 0.3, 2: 0.5})
    constraint = build_unary([{0, 2}], 3)
    particle = Particle(prefix=(), model_state=model.initial_state(),
                        constraint_state=constraint.init_state(1))
    rng = np.random.default_rng(0)
    draws = [propose_token(model, particle, constraint, 1, rng) for _ in range(4000)]
    for _, z in draws:
        assert z == pytest.approx(0.7)
    tokens = np.array([t for t, _ in draws])
    assert set(tokens.tolist()) == {0, 2}
    freq_a = (tokens == 0).mean()
    # 3-sigma binomial band around 2/7
    p = 2 / 7
    sigma = math.sqrt(p * (1 - p) / len(draws))
    assert abs(freq_a - p) < 3 * sigma


def test_propose_unconstrained_z_is_exactly_one():
    model = random_bigram(4, seed=0)
    constraint = identity_constraint(4)
    particle = Particle(prefix=(), model_state=model.initial_state(),
                        constraint_state=constraint.init_state(3))
    _, z = propose_token(model, particle, constraint, 1, np.random.default_rng(1))
    assert z == 1.0


def test_propose_pinned_returns_model_prob():
    model = iid_model({0: 0.2, 1: 0.3, 2: 0.5})
    constraint = build_unary([{1}], 3)
    particle = Particle(prefix=(), model_state=model.initial_state(),
                        constraint_state=constraint.init_state(1))
    token, z = propose_token(model, particle, constraint, 1, np.random.default_rng(2))
    assert token == 1
    assert z == pytest.approx(0.3)


def test_propose_dead_end_raises():
    seq = order_events(Score(480, ((1, "p"),), (
        NoteEvent(part=1, onset=0, duration=960, chord_slot=0),
        NoteEvent(part=1, onset=0, duration=960, chord_slot=1),
    )))
    model = iid_model({0: 1.0})
    constraint = NoUnisonConstraint(seq, 1)
    state = constraint.init_state(2)
    state = constraint.step(state, 0, 1)
    particle = Particle(prefix=(0,), model_state=model.initial_state(),
                        constraint_state=state)
    with pytest.raises(DeadEndError):
        propose_token(model, particle, constraint, 2, np.random.default_rng(0))


# --- incremental weight -----------------------------------------------------

def test_incremental_weight_is_z():
    assert incremental_weight(0.25) == 0.25
    assert incremental_weight(1.0) == 1.0


def test_weight_recursion_equals_gamma_over_q():
    """Product of recorded step weights equals gamma_n / q on a replayed path."""
    v, n = 3, 3
    model = random_bigram(v, seed=8)
    constraint = conjoin([build_unary([{0, 1}, set(range(v)), {2}], v),
                          build_no_repeat(v)])
    seq = order_events(linear_score(n))
    est = run_constrained_smc(model, constraint, seq, num_particles=16, seed=3,
                              resample_policy="never")
    for s_idx, tokens in enumerate(est.samples):
        recorded = math.prod(float(w[s_idx]) for w in est.step_weights)
        # gamma = prod f_i * h_i (h == 1 along a feasible path)
        gamma = math.exp(token_sequence_log_prob(model, seq.features, tokens))
        # q = prod f_i h_i / Z_i, evaluated independently by scalar replay
        q = gamma
        state = model.initial_state()
        cstate = constraint.init_state(n)
        for i, tok in enumerate(tokens, start=1):
            dist = model.predict(state, seq.features[i - 1])
            mask = constraint.allowed(cstate, i)
            z = 1.0 if mask.all() else float(np.where(mask, dist, 0.0).sum())
            q /= z
            state = model.advance(state, tok, seq.features[i - 1])
            cstate = constraint.step(cstate, tok, i)
        assert recorded == pytest.approx(gamma / q, rel=1e-12)


# --- systematic resampling --------------------------------------------------

def test_resample_exact_integer_expectations():
    for seed in range(50):
        idx = systematic_resample(np.array([0.5, 0.5]), np.random.default_rng(seed))
        assert np.bincount(idx, minlength=2).tolist() == [1, 1]


def test_resample_three_one_split():
    for seed in range(100):
        idx = systematic_resample(np.array([0.75, 0.25]),
                                  np.random.default_rng(seed), count=4)
        assert np.bincount(idx, minlength=2).tolist() == [3, 1]


def test_resample_scale_invariance():
    w = np.array([0.1, 2.0, 0.4, 1.5])
    for seed in (0, 7, 42):
        a = systematic_resample(w, np.random.default_rng(seed))
        b = systematic_resample(123.0 * w, np.random.default_rng(seed))
        assert np.array_equal(a, b)


def test_resample_floor_ceil_property():
    rng = np.random.default_rng(5)
    for _ in range(500):
        size = int(rng.integers(2, 8))
        w = rng.random(size)
        idx = systematic_resample(w, np.random.default_rng(int(rng.integers(1e9))))
        counts = np.bincount(idx, minlength=size)
        expect = size * w / w.sum()
        assert (counts >= np.floor(expect) - 1e-9).all()
        assert (counts <= np.ceil(expect) + 1e-9).all()


def test_resample_zero_weights_error():
    with pytest.raises(ZeroWeightError):
        systematic_resample(np.zeros(4), np.random.default_rng(0))
    with pytest.raises(ValueError):
        systematic_resample(np.array([0.5, -0.1]), np.random.default_rng(0))


# --- effective sample size --------------------------------------------------

def test_ess_examples():
    assert effective_sample_size(np.ones(7)) == pytest.approx(7.0)
    assert effective_sample_size(np.array([0.0, 3.0, 0.0])) == pytest.approx(1.0)
    assert effective_sample_size(np.array([2.0, 1.0, 1.0])) == pytest.approx(16 / 6)
    with pytest.raises(ZeroWeightError):
        effective_sample_size(np.zeros(3))


# --- run_constrained_smc ----------------------------------------------------

def test_unconstrained_reduction_iid_frequencies():
    probs = {0: 0.5, 1: 0.3, 2: 0.2}
    model = iid_model(probs)
    seq = order_events(linear_score(4))
    est = run_constrained_smc(model, identity_constraint(3), seq,
                              num_particles=10_000, seed=11,
                              resample_policy="never")
    assert all(float(w[0]) == 1.0 for w in est.step_weights)
    tokens = np.array(est.samples)
    for t, p in probs.items():
        freq = (tokens == t).mean()
        sigma = math.sqrt(p * (1 - p) / tokens.size)
        assert abs(freq - p) < 3 * sigma


def test_posterior_matches_enumeration():
    v, n = 3, 5
    model = random_bigram(v, seed=21)
    sets = [set(range(v)) for _ in range(n)]
    sets[2] = {1}
    constraint = build_unary(sets, v)
    seq = order_events(linear_score(n))
    est = run_constrained_smc(model, constraint, seq, num_particles=10_000, seed=5)
    enum = enumerate_exact_posterior(model, constraint, n)
    tv = total_variation(posterior_distribution(est), enum.probs)
    assert tv <= 0.05
    for sample in est.samples:
        assert verify_sequence(constraint, sample, n)


def test_posterior_tv_decreases_with_particles():
    v, n = 3, 5
    model = random_bigram(v, seed=33)
    constraint = conjoin([build_unary(
        [set(range(v)), {0, 2}, set(range(v)), {1, 2}, set(range(v))], v),
        build_no_repeat(v)])
    enum = enumerate_exact_posterior(model, constraint, n)
    seq = order_events(linear_score(n))
    tvs = []
    for particles in (100, 1000, 10_000):
        est = run_constrained_smc(model, constraint, seq, particles, seed=17)
        tvs.append(total_variation(posterior_distribution(est), enum.probs))
    assert tvs[2] < tvs[0]
    assert tvs[1] < tvs[0] * 1.5


def test_unsatisfiable_errors_before_sampling():
    v, n = 2, 3
    model = random_bigram(v, seed=0)
    unary = build_unary([{0}, {0}, {1}], v)
    constraint = conjoin([unary, build_no_repeat(v)])
    seq = order_events(linear_score(n))
    with pytest.raises(UnsatisfiableConstraintError):
        run_constrained_smc(model, constraint, seq, 10, seed=0)


def test_unary_only_weights_reduce_to_f():
    v, n = 3, 6
    model = random_bigram(v, seed=51)
    pins = {2: 1, 5: 0}
    sets = [set(range(v)) if i + 1 not in pins else {pins[i + 1]} for i in range(n)]
    constraint = build_unary(sets, v)
    seq = order_events(linear_score(n))
    est = run_constrained_smc(model, constraint, seq, num_particles=64, seed=9)
    for i in range(1, n + 1):
        w = est.step_weights[i - 1]
        if i not in pins:
            assert (w == 1.0).all()
    # pinned steps: exactly the model conditional of the pinned token
    for s_idx, tokens in enumerate(est.samples):
        assert verify_sequence(constraint, tokens, n)


def test_pinned_weights_are_exact_model_probs():
    """Replay ancestry-free: run with a single particle so the history is known."""
    v, n = 3, 4
    model = random_bigram(v, seed=87)
    pins = {3: 2}
    sets = [set(range(v)) if i + 1 not in pins else {pins[i + 1]} for i in range(n)]
    constraint = build_unary(sets, v)
    seq = order_events(linear_score(n))
    est = run_constrained_smc(model, constraint, seq, num_particles=1, seed=2)
    tokens = est.samples[0]
    state = model.initial_state()
    for i, tok in enumerate(tokens, start=1):
        expected = 1.0 if i not in pins else float(
            model.predict(state, seq.features[i - 1])[pins[i]])
        assert float(est.step_weights[i - 1][0]) == expected
        state = model.advance(state, tok, seq.features[i - 1])


def test_filtering_probability_single_particle():
    v = 2
    model = iid_model({0: 0.8, 1: 0.2})
    constraint = build_unary([{0}], v)
    seq = order_events(linear_score(1))
    est = run_constrained_smc(model, constraint, seq, num_particles=1, seed=0,
                              pinned={1: 0})
    values, mean_log = filtering_probability(est, [1])
    assert values[1] == pytest.approx(0.8)
    assert mean_log == pytest.approx(math.log(0.8))


def test_filtering_probability_is_weighted_mean():
    est = PosteriorEstimate(
        samples=[(0,), (1,)], weights=np.array([0.5, 0.5]),
        step_records=[], step_weights=[], filtering={2: 0.8},
        pinned_probs={2: np.array([0.6, 1.0])},
        marginals=np.zeros((1, 2)), seed=0, num_particles=2)
    values, _ = filtering_probability(est, [2])
    assert values[2] == 0.8
    with pytest.raises(KeyError):
        filtering_probability(est, [1])


def test_dead_particles_absorbed_by_resampling():
    """Callback dead-ends get weight zero; survivors carry the estimate."""
    v, n = 3, 3
    # all three notes sound together in one part: positions 2 and 3 must differ
    # from every sounding predecessor
    notes = tuple(NoteEvent(part=1, onset=0, duration=960, chord_slot=k)
                  for k in range(3))
    score = Score(480, ((1, "p"),), notes)
    seq = order_events(score)
    no_unison = NoUnisonConstraint(seq, v)
    # unary clause the FSM lookahead cannot see through the callback:
    # position 3 only admits tokens {0, 1}
    unary = build_unary([set(range(v)), set(range(v)), {0, 1}], v)
    constraint = conjoin([unary, no_unison])
    model = iid_model({0: 1 / 3, 1: 1 / 3, 2: 1 / 3})
    est = run_constrained_smc(model, constraint, seq, num_particles=512, seed=13)
    # particles that chose {0,1} at positions 1-2 died at 3; output must be clean
    for tokens in est.samples:
        assert verify_sequence(constraint, tokens, n)
        assert tokens[2] in (0, 1)
    assert est.weights.sum() == pytest.approx(1.0)


def test_all_particles_dead_raises_zero_weight():
    v = 1
    notes = (NoteEvent(part=1, onset=0, duration=960, chord_slot=0),
             NoteEvent(part=1, onset=0, duration=960, chord_slot=1))
    score = Score(480, ((1, "p"),), notes)
    seq = order_events(score)
    constraint = NoUnisonConstraint(seq, v)
    model = iid_model({0: 1.0})
    with pytest.raises(ZeroWeightError) as err:
        run_constrained_smc(model, constraint, seq, num_particles=8, seed=0)
    assert err.value.step == 2


def test_run_is_deterministic_given_seed():
    v, n = 3, 5
    model = random_bigram(v, seed=3)
    constraint = build_no_repeat(v)
    seq = order_events(linear_score(n))
    a = run_constrained_smc(model, constraint, seq, 256, seed=42)
    b = run_constrained_smc(model, constraint, seq, 256, seed=42)
    assert a.samples == b.samples
    assert np.array_equal(a.weights, b.weights)


def test_marginals_columns_sum_to_one():
    v, n = 3, 4
    model = random_bigram(v, seed=14)
    constraint = build_no_repeat(v)
    seq = order_events(linear_score(n))
    est = run_constrained_smc(model, constraint, seq, 128, seed=1)
    assert np.allclose(est.marginals.sum(axis=1), 1.0, atol=1e-9)
    for rec in est.step_records:
        assert rec.marginal.sum() == pytest.approx(1.0, abs=1e-9)


def test_resample_policies_run_and_agree_on_support():
    v, n = 3, 5
    model = random_bigram(v, seed=6)
    constraint = build_no_repeat(v)
    seq = order_events(linear_score(n))
    for policy in ("always", "ess", "never"):
        est = run_constrained_smc(model, constraint, seq, 200, seed=4,
                                  resample_policy=policy)
        for tokens in est.samples:
            assert verify_sequence(constraint, tokens, n)
