"""Causal sequence models over a pitch alphabet.

A model exposes the per-step conditionals of a causal factorization through
an incremental, opaque state: ``predict`` returns the distribution of the
next token given the state, ``advance`` folds a token into the state. Both
run in time independent of the prefix length. Tokens are indices into the
model's pitch alphabet.

Batched variants operate on one state per particle and are what the
samplers use; the scalar API is the contract.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ModelMismatchError, ScoreParseError
from .score import FEATURE_VERSION, OrderedSequence

MODEL_FORMAT_VERSION = 1


def encode_f32(arr: np.ndarray) -> dict:
    """Little-endian float32 array as a base64 payload with declared shape."""
    a = np.ascontiguousarray(arr, dtype="<f4")
    return {"dtype": "float32", "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_f32(payload: dict) -> np.ndarray:
    raw = base64.b64decode(payload["data"])
    arr = np.frombuffer(raw, dtype="<f4").reshape(payload["shape"])
    return arr.astype(np.float64)


class CausalModel:
    """Contract shared by every sequence model."""

    alphabet: tuple[int, ...]

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet)

    def token_of(self, pitch: int) -> int:
        try:
            return self._pitch_to_token[pitch]
        except KeyError:
            raise ModelMismatchError(f"pitch {pitch} not in model alphabet") from None

    def pitch_of(self, token: int) -> int:
        return self.alphabet[token]

    def _index_alphabet(self):
        self._pitch_to_token = {p: t for t, p in enumerate(self.alphabet)}

    # scalar contract
    def initial_state(self):
        raise NotImplementedError

    def predict(self, state, features) -> np.ndarray:
        raise NotImplementedError

    def advance(self, state, token: int, features):
        raise NotImplementedError

    # batched layer; defaults delegate to the scalar API
    def initial_state_batch(self, count: int):
        return [self.initial_state() for _ in range(count)]

    def predict_batch(self, states, features) -> np.ndarray:
        return np.stack([self.predict(s, features) for s in states])

    def advance_batch(self, states, tokens: np.ndarray, features):
        return [self.advance(s, int(t), features) for s, t in zip(states, tokens)]

    def gather(self, states, indices: np.ndarray):
        return [states[i] for i in indices]


class NGramModel(CausalModel):
    """k-gram model with Laplace smoothing.

    The state is the tuple of up to k-1 most recent tokens. Predictions read
    only that context: (count + alpha) / (total + alpha * |alphabet|). An
    unseen context with alpha = 0 falls back to the uniform distribution.
    """

    kind = "ngram"

    def __init__(self, order: int, smoothing: float, alphabet: Sequence[int],
                 counts: dict[tuple[int, ...], np.ndarray] | None = None):
        if order < 1:
            raise ValueError("order must be >= 1")
        if smoothing < 0:
            raise ValueError("smoothing must be >= 0")
        self.order = order
        self.smoothing = float(smoothing)
        self.alphabet = tuple(int(p) for p in alphabet)
        self._index_alphabet()
        self.counts: dict[tuple[int, ...], np.ndarray] = counts if counts is not None else {}
        self._rows: dict[tuple[int, ...], np.ndarray] = {}
        self._uniform = np.full(self.vocab_size, 1.0 / self.vocab_size)

    def context_of(self, tokens: Sequence[int]) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        return tuple(tokens[-(self.order - 1):])

    def _row(self, context: tuple[int, ...]) -> np.ndarray:
        row = self._rows.get(context)
        if row is None:
            counts = self.counts.get(context)
            if counts is None:
                counts = np.zeros(self.vocab_size)
            denom = counts.sum() + self.smoothing * self.vocab_size
            if denom == 0.0:
                row = self._uniform
            else:
                row = (counts + self.smoothing) / denom
            self._rows[context] = row
        return row

    def initial_state(self) -> tuple[int, ...]:
        return ()

    def predict(self, state: tuple[int, ...], features=None) -> np.ndarray:
        return self._row(state)

    def advance(self, state: tuple[int, ...], token: int, features=None) -> tuple[int, ...]:
        if not 0 <= token < self.vocab_size:
            raise ModelMismatchError(f"token {token} outside alphabet of size {self.vocab_size}")
        if self.order == 1:
            return ()
        return (state + (token,))[-(self.order - 1):]

    # batched layer: states as an int matrix (count, k-1); -1 marks "not yet seen"
    def initial_state_batch(self, count: int) -> np.ndarray:
        return np.full((count, max(self.order - 1, 0)), -1, dtype=np.int64)

    def _state_tuple(self, row: np.ndarray) -> tuple[int, ...]:
        return tuple(int(t) for t in row if t >= 0)

    def predict_batch(self, states: np.ndarray, features=None) -> np.ndarray:
        count = states.shape[0]
        if states.shape[1] == 0:
            return np.broadcast_to(self._row(()), (count, self.vocab_size)).copy()
        uniq, inverse = np.unique(states, axis=0, return_inverse=True)
        rows = np.stack([self._row(self._state_tuple(u)) for u in uniq])
        return rows[inverse]

    def advance_batch(self, states: np.ndarray, tokens: np.ndarray, features=None) -> np.ndarray:
        if states.shape[1] == 0:
            return states
        return np.concatenate([states[:, 1:], tokens.reshape(-1, 1)], axis=1)

    def gather(self, states: np.ndarray, indices: np.ndarray) -> np.ndarray:
        return states[indices]

    def to_document(self) -> dict:
        contexts = sorted(self.counts.keys())
        table = np.zeros((len(contexts), self.vocab_size))
        for i, ctx in enumerate(contexts):
            table[i] = self.counts[ctx]
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "alphabet": list(self.alphabet),
            "feature_version": FEATURE_VERSION,
            "hyperparameters": {"order": self.order, "smoothing": self.smoothing},
            "parameters": {
                "contexts": [list(c) for c in contexts],
                "counts": encode_f32(table),
            },
        }

    @classmethod
    def from_document(cls, doc: dict) -> "NGramModel":
        hp = doc["hyperparameters"]
        table = decode_f32(doc["parameters"]["counts"])
        counts = {
            tuple(int(t) for t in ctx): table[i]
            for i, ctx in enumerate(doc["parameters"]["contexts"])
        }
        return cls(order=int(hp["order"]), smoothing=float(hp["smoothing"]),
                   alphabet=doc["alphabet"], counts=counts)


def fit_ngram(sequences: Iterable[Sequence[int]], order: int, smoothing: float,
              alphabet: Sequence[int] | None = None) -> NGramModel:
    """Count k-gram occurrences over pitch sequences.

    ``smoothing`` must be positive for generative use; zero is allowed so
    tests can check raw count arithmetic.
    """
    sequences = [list(s) for s in sequences]
    if alphabet is None:
        pitches = sorted({p for s in sequences for p in s})
        if not pitches:
            raise ValueError("empty corpus and no alphabet given")
        alphabet = pitches
    if not sequences and smoothing == 0:
        raise ValueError("empty corpus requires smoothing > 0")
    model = NGramModel(order=order, smoothing=smoothing, alphabet=alphabet)
    for seq in sequences:
        tokens = [model.token_of(p) for p in seq]
        for i, tok in enumerate(tokens):
            ctx = model.context_of(tokens[:i])
            row = model.counts.get(ctx)
            if row is None:
                row = np.zeros(model.vocab_size)
                model.counts[ctx] = row
            row[tok] += 1.0
    return model


def sequence_log_prob(model: CausalModel, seq: OrderedSequence,
                      pitches: Sequence[int] | None = None) -> float:
    """Sum of per-step log conditionals, in nats. Requires concrete pitches."""
    if pitches is None:
        pitches = seq.pitches
    if len(pitches) != seq.n:
        raise ValueError("pitch list length differs from sequence length")
    state = model.initial_state()
    total = 0.0
    for i in range(seq.n):
        pitch = pitches[i]
        if pitch is None:
            raise ModelMismatchError(f"free pitch at position {i + 1}")
        token = model.token_of(pitch)
        probs = model.predict(state, seq.features[i])
        total += float(np.log(probs[token]))
        state = model.advance(state, token, seq.features[i])
    return total


def token_sequence_log_prob(model: CausalModel, features: np.ndarray,
                            tokens: Sequence[int]) -> float:
    """As ``sequence_log_prob`` but over token indices directly."""
    state = model.initial_state()
    total = 0.0
    for i, token in enumerate(tokens):
        probs = model.predict(state, features[i])
        total += float(np.log(probs[token]))
        state = model.advance(state, int(token), features[i])
    return total


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_document()) + "\n")


def load_model(path: str | Path):
    from .recurrent import RecurrentModel

    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScoreParseError(f"model file is not valid JSON: {exc}") from exc
    kind = doc.get("kind")
    if kind == "ngram":
        return NGramModel.from_document(doc)
    if kind == "recurrent":
        return RecurrentModel.from_document(doc)
    raise ScoreParseError(f"unknown model kind {kind!r}", field="kind")
