"""Exact references for testing the samplers.

Two independent routes: brute-force enumeration of every feasible sequence
(any model), and dynamic programming over the product of FSM state and
k-gram context (Markov models only). Both are test equipment with hard
instance caps, never production paths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .constraints import Fsm, PrefixConstraint, co_reachability
from .errors import CapExceededError, ModelMismatchError, UnsatisfiableConstraintError
from .model import CausalModel, NGramModel
from .rng import open_uniforms

ENUMERATION_CAP = 1_000_000
DP_CELL_CAP = 20_000_000


@dataclass(frozen=True)
class ExactPosterior:
    """Exact conditional distribution over feasible sequences.

    ``partition`` is the total model probability of the feasible set.
    """

    probs: dict[tuple[int, ...], float]
    partition: float


def enumerate_exact_posterior(model: CausalModel, constraint: PrefixConstraint,
                              n: int, features: np.ndarray | None = None) -> ExactPosterior:
    """Evaluate the model on every feasible length-n sequence.

    An unsatisfiable constraint yields an empty posterior with partition 0.
    """
    v = model.vocab_size
    if v ** n > ENUMERATION_CAP:
        raise CapExceededError(f"|alphabet|^n = {v}^{n} exceeds {ENUMERATION_CAP}")
    if features is None:
        features = np.zeros((n, 4))
    out: dict[tuple[int, ...], float] = {}

    def walk(prefix: tuple[int, ...], mstate, cstate, prob: float):
        i = len(prefix)
        if i == n:
            out[prefix] = prob
            return
        dist = model.predict(mstate, features[i])
        mask = constraint.allowed(cstate, i + 1)
        for token in np.flatnonzero(mask):
            token = int(token)
            nxt = constraint.step(cstate, token, i + 1)
            if nxt is None:
                continue
            walk(prefix + (token,),
                 model.advance(mstate, token, features[i]),
                 nxt, prob * float(dist[token]))

    try:
        initial_cstate = constraint.init_state(n)
    except UnsatisfiableConstraintError:
        return ExactPosterior(probs={}, partition=0.0)
    walk((), model.initial_state(), initial_cstate, 1.0)
    partition = sum(out.values())
    if partition > 0:
        probs = {seq: p / partition for seq, p in out.items()}
    else:
        probs = {}
    return ExactPosterior(probs=probs, partition=partition)


class MarkovFsmExact:
    """Exact constrained inference for a k-gram model under an FSM.

    Backward pass over the product of FSM state and model context yields
    the per-step conditionals of the constrained process; forward sampling
    from them is exact. The forward pass gives the exact filtering
    distribution of histories, matching what the particle ensemble targets
    (prefixes that are realizable and completable).
    """

    def __init__(self, model: NGramModel, fsm: Fsm, n: int):
        if not isinstance(model, NGramModel):
            raise ModelMismatchError("exact DP requires a k-gram model")
        if fsm.alphabet_size != model.vocab_size:
            raise ModelMismatchError("FSM alphabet differs from model alphabet")
        self.model = model
        self.fsm = fsm
        self.n = n
        v = model.vocab_size
        k = model.order
        ctx_len = k - 1
        ctx_count = (v + 1) ** ctx_len
        cells = fsm.num_states * ctx_count * max(n, 1) * v
        if cells > DP_CELL_CAP:
            raise CapExceededError(f"DP size {cells} exceeds {DP_CELL_CAP}")
        self.v = v
        self.ctx_len = ctx_len
        self.ctx_count = ctx_count

        # context id: base-(v+1) digits, most recent token last, pad value v in front
        def decode(cid: int) -> list[int]:
            digits = []
            for _ in range(ctx_len):
                digits.append(cid % (v + 1))
                cid //= v + 1
            return digits[::-1]

        def encode(digits: Sequence[int]) -> int:
            cid = 0
            for d in digits:
                cid = cid * (v + 1) + d
            return cid

        self._initial_ctx = encode([v] * ctx_len)
        next_ctx = np.zeros((ctx_count, v), dtype=np.int64)
        rows = np.zeros((ctx_count, v), dtype=np.float64)
        for cid in range(ctx_count):
            digits = decode(cid)
            context = tuple(d for d in digits if d < v)
            rows[cid] = model.predict(context)
            for a in range(v):
                next_ctx[cid, a] = encode((digits + [a])[1:]) if ctx_len else 0
        self._rows = rows
        self._next_ctx = next_ctx

        reach = co_reachability(fsm, n).reach
        trans = fsm.transitions
        valid = trans >= 0
        q = fsm.num_states

        # backward: beta[i][q, c] with per-step max-normalization
        beta = np.zeros((q, ctx_count))
        beta[fsm.accepting, :] = 1.0
        log_scale = 0.0
        self._cond: list[np.ndarray] = [np.empty(0)] * n
        betas = [beta]
        for i in range(n, 0, -1):
            gathered = beta[np.where(valid, trans, 0)[:, None, :],
                            next_ctx[None, :, :]]
            numer = np.where(valid[:, None, :], rows[None, :, :] * gathered, 0.0)
            cond = numer.copy()
            totals = cond.sum(axis=2, keepdims=True)
            np.divide(cond, totals, out=cond, where=totals > 0)
            self._cond[i - 1] = cond
            beta = numer.sum(axis=2)
            m = beta.max()
            if m > 0:
                beta = beta / m
                log_scale += float(np.log(m))
            betas.append(beta)
        self._log_partition = (
            float(np.log(betas[-1][fsm.initial, self._initial_ctx])) + log_scale
            if betas[-1][fsm.initial, self._initial_ctx] > 0 else -np.inf
        )

        # forward: normalized distribution over (q, c) histories before each step
        alpha = np.zeros((q, ctx_count))
        alpha[fsm.initial, self._initial_ctx] = 1.0
        self._alphas = [alpha]
        flat_next = (np.where(valid, trans, 0)[:, None, :] * ctx_count
                     + next_ctx[None, :, :])
        for i in range(1, n + 1):
            step_ok = valid & reach[np.where(valid, trans, 0), n - i]
            flow = alpha[:, :, None] * rows[None, :, :]
            flow = np.where(step_ok[:, None, :], flow, 0.0)
            new = np.zeros(q * ctx_count)
            np.add.at(new, flat_next.ravel(), flow.ravel())
            new = new.reshape(q, ctx_count)
            total = new.sum()
            if total > 0:
                new = new / total
            alpha = new
            self._alphas.append(alpha)

    @property
    def log_partition(self) -> float:
        return self._log_partition

    def feasible(self) -> bool:
        return np.isfinite(self._log_partition)

    def step_conditional(self, i: int, history: Sequence[int]) -> np.ndarray:
        """Exact conditional of token i (1-based) given a feasible history."""
        q = self.fsm.initial
        cid = self._initial_ctx
        for token in history:
            q = int(self.fsm.transitions[q, token])
            cid = int(self._next_ctx[cid, token])
        return self._cond[i - 1][q, cid]

    def filtering(self, pinned: Mapping[int, int]) -> dict[int, float]:
        """Exact value of the filtering quantity at each pinned position."""
        out = {}
        for i, token in sorted(pinned.items()):
            alpha = self._alphas[i - 1]
            out[i] = float((alpha.sum(axis=0) * self._rows[:, token]).sum())
        return out

    def sample(self, seed: int, count: int) -> np.ndarray:
        """Draw exact samples from the constrained distribution."""
        if not self.feasible():
            raise ModelMismatchError("constraint is unsatisfiable; nothing to sample")
        rng = np.random.default_rng(seed)
        qs = np.full(count, self.fsm.initial, dtype=np.int64)
        cids = np.full(count, self._initial_ctx, dtype=np.int64)
        out = np.zeros((count, self.n), dtype=np.int64)
        trans = self.fsm.transitions
        for i in range(self.n):
            cond = self._cond[i][qs, cids]
            cum = np.cumsum(cond, axis=1)
            u = open_uniforms(rng, count)
            tokens = (cum < (u * cum[:, -1])[:, None]).sum(axis=1)
            tokens = np.minimum(tokens, self.v - 1)
            out[:, i] = tokens
            qs = trans[qs, tokens]
            cids = self._next_ctx[cids, tokens]
        return out

    def posterior_of(self, tokens: Sequence[int]) -> float:
        """Probability of one sequence under the exact constrained distribution."""
        q = self.fsm.initial
        cid = self._initial_ctx
        prob = 1.0
        for i, token in enumerate(tokens, start=1):
            value = float(self._cond[i - 1][q, cid, token])
            if value == 0.0:
                return 0.0
            prob *= value
            q = int(self.fsm.transitions[q, token])
            cid = int(self._next_ctx[cid, token])
        return prob


def markov_fsm_exact(model: NGramModel, fsm: Fsm, n: int) -> MarkovFsmExact:
    return MarkovFsmExact(model, fsm, n)


def total_variation(p: Mapping, q: Mapping) -> float:
    support = set(p) | set(q)
    return 0.5 * sum(abs(p.get(x, 0.0) - q.get(x, 0.0)) for x in support)
