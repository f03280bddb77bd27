"""Hard sequence constraints: finite state machines and direct prefix rules.

A constraint decides, per position, which tokens may extend a prefix. For
FSM-backed constraints the decision includes exact dead-end pruning: a token
is allowed at position i only if the successor state can still reach an
accepting state in exactly the remaining number of steps (co-reachability).
Direct callback constraints check one step ahead only.

Constraint states are small immutable values owned per particle; constraints
themselves are shared read-only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import UnsatisfiableConstraintError
from .score import OrderedSequence


@dataclass(frozen=True)
class Fsm:
    """Deterministic machine; absent transitions encode rejection.

    ``transitions[q, a]`` is the successor state or -1 when undefined.
    """

    transitions: np.ndarray
    initial: int
    accepting: np.ndarray

    def __post_init__(self):
        q, v = self.transitions.shape
        if not 0 <= self.initial < q:
            raise ValueError("initial state outside state set")
        if self.accepting.shape != (q,):
            raise ValueError("accepting flags must cover the state set")

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def alphabet_size(self) -> int:
        return self.transitions.shape[1]


def fsm_step(fsm: Fsm, state: int, token: int) -> int | None:
    """Successor of ``state`` on ``token``, or None when undefined."""
    nxt = int(fsm.transitions[state, token])
    return None if nxt < 0 else nxt


@dataclass(frozen=True)
class CoReachTable:
    """``reach[q, r]`` is true iff an accepting state is reachable from q in exactly r steps."""

    reach: np.ndarray
    horizon: int


def co_reachability(fsm: Fsm, n: int) -> CoReachTable:
    if n < 0:
        raise ValueError("horizon must be >= 0")
    q = fsm.num_states
    reach = np.zeros((q, n + 1), dtype=bool)
    reach[:, 0] = fsm.accepting
    valid = fsm.transitions >= 0
    nxt = np.where(valid, fsm.transitions, 0)
    for r in range(1, n + 1):
        reach[:, r] = (valid & reach[nxt, r - 1]).any(axis=1)
    return CoReachTable(reach=reach, horizon=n)


def _first_dead_position(fsm: Fsm, table: CoReachTable, n: int) -> int:
    """Smallest 1-based position at which no feasible prefix can continue."""
    frontier = np.zeros(fsm.num_states, dtype=bool)
    frontier[fsm.initial] = True
    valid = fsm.transitions >= 0
    nxt = np.where(valid, fsm.transitions, 0)
    for i in range(1, n + 1):
        new = np.zeros(fsm.num_states, dtype=bool)
        ok = valid[frontier] & table.reach[nxt[frontier], n - i]
        targets = nxt[frontier]
        if ok.any():
            new[np.unique(targets[ok])] = True
        if not new.any():
            return i
        frontier = new
    return n


class PrefixConstraint:
    """Contract: per-prefix state plus the set of admissible next tokens.

    Positions are 1-based. ``step`` returns None for an inadmissible token.
    ``allowed`` returns a boolean mask over the token alphabet. The batched
    variants operate on one state per particle; defaults delegate to the
    scalar API.
    """

    alphabet_size: int

    def init_state(self, n: int):
        raise NotImplementedError

    def step(self, cstate, token: int, i: int):
        raise NotImplementedError

    def allowed(self, cstate, i: int) -> np.ndarray:
        raise NotImplementedError

    def init_batch(self, n: int, count: int):
        return [self.init_state(n) for _ in range(count)]

    def allowed_batch(self, batch, i: int) -> np.ndarray:
        return np.stack([
            self.allowed(s, i) if s is not None else np.zeros(self.alphabet_size, dtype=bool)
            for s in batch
        ])

    def step_batch(self, batch, tokens: np.ndarray, i: int):
        return [None if s is None else self.step(s, int(t), i)
                for s, t in zip(batch, tokens)]

    def gather(self, batch, indices: np.ndarray):
        return [batch[j] for j in indices]


def allowed_tokens(constraint: PrefixConstraint, cstate, i: int) -> np.ndarray:
    """Indices of the tokens admissible at position ``i``; empty means dead end."""
    return np.flatnonzero(constraint.allowed(cstate, i))


class FsmConstraint(PrefixConstraint):
    """Language membership with exact completion lookahead.

    A token is admissible at position i iff the transition is defined and
    the successor can reach acceptance in exactly n - i further steps. A
    prefix grown through ``allowed`` therefore never dead-ends, and the
    final step lands on an accepting state.
    """

    def __init__(self, fsm: Fsm):
        self.fsm = fsm
        self.alphabet_size = fsm.alphabet_size
        self._tables: dict[int, CoReachTable] = {}

    def table(self, n: int) -> CoReachTable:
        table = self._tables.get(n)
        if table is None:
            table = co_reachability(self.fsm, n)
            self._tables[n] = table
        return table

    def init_state(self, n: int) -> tuple[int, int]:
        table = self.table(n)
        if not table.reach[self.fsm.initial, n]:
            raise UnsatisfiableConstraintError(
                f"no accepted sequence of length {n}",
                position=_first_dead_position(self.fsm, table, n),
            )
        return (self.fsm.initial, n)

    def step(self, cstate: tuple[int, int], token: int, i: int):
        q, n = cstate
        nxt = int(self.fsm.transitions[q, token])
        if nxt < 0 or not self.table(n).reach[nxt, n - i]:
            return None
        return (nxt, n)

    def allowed(self, cstate: tuple[int, int], i: int) -> np.ndarray:
        q, n = cstate
        row = self.fsm.transitions[q]
        valid = row >= 0
        return valid & self.table(n).reach[np.where(valid, row, 0), n - i]

    def _mask_table(self, n: int, i: int) -> np.ndarray:
        valid = self.fsm.transitions >= 0
        nxt = np.where(valid, self.fsm.transitions, 0)
        return valid & self.table(n).reach[nxt, n - i]

    def init_batch(self, n: int, count: int):
        self.init_state(n)
        return (np.full(count, self.fsm.initial, dtype=np.int64), n)

    def allowed_batch(self, batch, i: int) -> np.ndarray:
        states, n = batch
        masks = self._mask_table(n, i)[np.clip(states, 0, None)]
        masks[states < 0] = False
        return masks

    def step_batch(self, batch, tokens: np.ndarray, i: int):
        states, n = batch
        nxt = self.fsm.transitions[np.clip(states, 0, None), tokens]
        reach = self.table(n).reach[np.clip(nxt, 0, None), n - i]
        nxt = np.where((states >= 0) & (nxt >= 0) & reach, nxt, -1)
        return (nxt, n)

    def gather(self, batch, indices: np.ndarray):
        states, n = batch
        return (states[indices], n)


def identity_constraint(alphabet_size: int) -> FsmConstraint:
    """Accepts every sequence; the unit of conjunction."""
    transitions = np.zeros((1, alphabet_size), dtype=np.int64)
    return FsmConstraint(Fsm(transitions=transitions, initial=0,
                             accepting=np.array([True])))


def build_unary(sets: Sequence[Iterable[int]], alphabet_size: int) -> FsmConstraint:
    """Accept exactly the sequences with the i-th token drawn from ``sets[i]``.

    Chain machine with n + 1 states; an empty set is unsatisfiable at build
    time.
    """
    n = len(sets)
    transitions = np.full((n + 1, alphabet_size), -1, dtype=np.int64)
    for i, allowed in enumerate(sets):
        tokens = sorted(set(int(a) for a in allowed))
        if not tokens:
            raise UnsatisfiableConstraintError(
                f"empty allowed set at position {i + 1}", position=i + 1)
        if tokens[0] < 0 or tokens[-1] >= alphabet_size:
            raise ValueError("token outside alphabet")
        transitions[i, tokens] = i + 1
    accepting = np.zeros(n + 1, dtype=bool)
    accepting[n] = True
    return FsmConstraint(Fsm(transitions=transitions, initial=0, accepting=accepting))


def build_no_repeat(alphabet_size: int) -> FsmConstraint:
    """Prohibit equal consecutive tokens: one state per token plus the start state."""
    transitions = np.full((alphabet_size + 1, alphabet_size), -1, dtype=np.int64)
    transitions[0, :] = np.arange(1, alphabet_size + 1)
    for x in range(alphabet_size):
        row = np.arange(1, alphabet_size + 1)
        row[x] = -1
        transitions[1 + x, :] = row
    accepting = np.ones(alphabet_size + 1, dtype=bool)
    return FsmConstraint(Fsm(transitions=transitions, initial=0, accepting=accepting))


def product_fsm(a: Fsm, b: Fsm) -> Fsm:
    """Intersection machine over the reachable pair states."""
    if a.alphabet_size != b.alphabet_size:
        raise ValueError("alphabet mismatch")
    v = a.alphabet_size
    index: dict[tuple[int, int], int] = {(a.initial, b.initial): 0}
    pairs: list[tuple[int, int]] = [(a.initial, b.initial)]
    rows: list[np.ndarray] = []
    k = 0
    while k < len(pairs):
        qa, qb = pairs[k]
        row = np.full(v, -1, dtype=np.int64)
        for tok in range(v):
            na = a.transitions[qa, tok]
            nb = b.transitions[qb, tok]
            if na < 0 or nb < 0:
                continue
            key = (int(na), int(nb))
            target = index.get(key)
            if target is None:
                target = len(pairs)
                index[key] = target
                pairs.append(key)
            row[tok] = target
        rows.append(row)
        k += 1
    transitions = np.stack(rows)
    accepting = np.array([bool(a.accepting[qa] and b.accepting[qb]) for qa, qb in pairs])
    return Fsm(transitions=transitions, initial=0, accepting=accepting)


class NoUnisonConstraint(PrefixConstraint):
    """Forbid a pitch already sounding in the same part.

    A token at position i is inadmissible iff some earlier position j in
    the same part is still sounding at i's onset (onset_j <= onset_i <
    onset_j + duration_j) and was assigned the same token. Direct rule, no
    lookahead: a dead end is possible only when the alphabet is no larger
    than the number of simultaneous same-part notes.
    """

    def __init__(self, seq: OrderedSequence, alphabet_size: int):
        self.alphabet_size = alphabet_size
        n = seq.n
        self.overlap_prev: list[tuple[int, ...]] = [()] * (n + 1)
        remember: set[int] = set()
        for i in range(1, n + 1):
            prev = []
            for j in range(1, i):
                if (seq.parts[j - 1] == seq.parts[i - 1]
                        and seq.onsets[j - 1] <= seq.onsets[i - 1]
                        < seq.onsets[j - 1] + seq.durations[j - 1]):
                    prev.append(j)
            self.overlap_prev[i] = tuple(prev)
            remember.update(prev)
        self._remember = frozenset(remember)

    def init_state(self, n: int) -> tuple:
        return ()

    def step(self, cstate: tuple, token: int, i: int):
        if not self.allowed(cstate, i)[token]:
            return None
        if i in self._remember:
            return cstate + ((i, token),)
        return cstate

    def allowed(self, cstate: tuple, i: int) -> np.ndarray:
        mask = np.ones(self.alphabet_size, dtype=bool)
        for j in self.overlap_prev[i]:
            for pos, token in cstate:
                if pos == j:
                    mask[token] = False
                    break
        return mask

    @property
    def vacuous(self) -> bool:
        return not self._remember

    # positions without overlaps dominate; only the others pay the per-state loop
    def init_batch(self, n: int, count: int):
        return [()] * count

    def allowed_batch(self, batch, i: int) -> np.ndarray:
        if not self.overlap_prev[i]:
            return np.ones((len(batch), self.alphabet_size), dtype=bool)
        return np.stack([self.allowed(s, i) for s in batch])

    def step_batch(self, batch, tokens: np.ndarray, i: int):
        if i not in self._remember:
            return batch
        return [s + ((i, int(t)),) for s, t in zip(batch, tokens)]


def build_no_unison(seq: OrderedSequence, alphabet_size: int) -> NoUnisonConstraint:
    return NoUnisonConstraint(seq, alphabet_size)


class PartNoRepeatConstraint(PrefixConstraint):
    """Within one part, consecutive events must differ in pitch."""

    def __init__(self, seq: OrderedSequence, part: int, alphabet_size: int):
        self.alphabet_size = alphabet_size
        self.positions = frozenset(
            i for i in range(1, seq.n + 1) if seq.parts[i - 1] == part
        )

    def init_state(self, n: int) -> int:
        return -1

    def step(self, cstate: int, token: int, i: int):
        if i not in self.positions:
            return cstate
        if token == cstate:
            return None
        return token

    def allowed(self, cstate: int, i: int) -> np.ndarray:
        mask = np.ones(self.alphabet_size, dtype=bool)
        if i in self.positions and cstate >= 0:
            mask[cstate] = False
        return mask

    def init_batch(self, n: int, count: int) -> np.ndarray:
        return np.full(count, -1, dtype=np.int64)

    def allowed_batch(self, batch: np.ndarray, i: int) -> np.ndarray:
        mask = np.ones((len(batch), self.alphabet_size), dtype=bool)
        if i in self.positions:
            live = batch >= 0
            mask[np.flatnonzero(live), batch[live]] = False
        return mask

    def step_batch(self, batch: np.ndarray, tokens: np.ndarray, i: int) -> np.ndarray:
        if i not in self.positions:
            return batch
        return tokens.astype(np.int64)

    def gather(self, batch: np.ndarray, indices: np.ndarray) -> np.ndarray:
        return batch[indices]


class ConjoinedConstraint(PrefixConstraint):
    """Intersection of constituents; state is the tuple of their states."""

    def __init__(self, components: Sequence[PrefixConstraint]):
        if not components:
            raise ValueError("need at least one component")
        sizes = {c.alphabet_size for c in components}
        if len(sizes) != 1:
            raise ValueError("alphabet size mismatch among components")
        self.components = tuple(components)
        self.alphabet_size = sizes.pop()

    def init_state(self, n: int) -> tuple:
        return tuple(c.init_state(n) for c in self.components)

    def step(self, cstate: tuple, token: int, i: int):
        out = []
        for c, s in zip(self.components, cstate):
            nxt = c.step(s, token, i)
            if nxt is None:
                return None
            out.append(nxt)
        return tuple(out)

    def allowed(self, cstate: tuple, i: int) -> np.ndarray:
        mask = self.components[0].allowed(cstate[0], i)
        for c, s in zip(self.components[1:], cstate[1:]):
            mask = mask & c.allowed(s, i)
        return mask

    def init_batch(self, n: int, count: int):
        return tuple(c.init_batch(n, count) for c in self.components)

    def allowed_batch(self, batch, i: int) -> np.ndarray:
        mask = self.components[0].allowed_batch(batch[0], i)
        for c, b in zip(self.components[1:], batch[1:]):
            mask = mask & c.allowed_batch(b, i)
        return mask

    def step_batch(self, batch, tokens: np.ndarray, i: int):
        return tuple(c.step_batch(b, tokens, i) for c, b in zip(self.components, batch))

    def gather(self, batch, indices: np.ndarray):
        return tuple(c.gather(b, indices) for c, b in zip(self.components, batch))


def conjoin(constraints: Sequence[PrefixConstraint],
            alphabet_size: int | None = None) -> PrefixConstraint:
    """Conjunction: FSM constituents fold into one product machine (so
    lookahead stays exact across them), callback constituents run in parallel.
    """
    constraints = list(constraints)
    if not constraints:
        if alphabet_size is None:
            raise ValueError("alphabet_size required for an empty conjunction")
        return identity_constraint(alphabet_size)
    if len(constraints) == 1:
        return constraints[0]
    fsms: list[Fsm] = []
    callbacks: list[PrefixConstraint] = []
    for c in constraints:
        if isinstance(c, ConjoinedConstraint):
            for sub in c.components:
                if isinstance(sub, FsmConstraint):
                    fsms.append(sub.fsm)
                else:
                    callbacks.append(sub)
        elif isinstance(c, FsmConstraint):
            fsms.append(c.fsm)
        else:
            callbacks.append(c)
    components: list[PrefixConstraint] = []
    if fsms:
        machine = fsms[0]
        for other in fsms[1:]:
            machine = product_fsm(machine, other)
        components.append(FsmConstraint(machine))
    components.extend(callbacks)
    if len(components) == 1:
        return components[0]
    return ConjoinedConstraint(components)


def verify_sequence(constraint: PrefixConstraint, tokens: Sequence[int],
                    n: int | None = None) -> bool:
    """Independent replay: every step admissible and every state transition defined."""
    if n is None:
        n = len(tokens)
    if len(tokens) != n:
        return False
    try:
        state = constraint.init_state(n)
    except UnsatisfiableConstraintError:
        return False
    for i, token in enumerate(tokens, start=1):
        if not constraint.allowed(state, i)[token]:
            return False
        state = constraint.step(state, int(token), i)
        if state is None:
            return False
    return True
