"""A small gated recurrent sequence model, trained by backpropagation.

This exists to exercise the non-Markov code path: the hidden state is a
fixed-size vector, so prediction and state update cost the same at every
prefix length. One gated layer, token embeddings, a linear projection of
the timing features into the output logits. All math is float64 numpy;
gradients are exact (they are checked against finite differences in the
test suite).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ModelMismatchError, TrainingDivergedError
from .model import CausalModel, MODEL_FORMAT_VERSION, decode_f32, encode_f32
from .score import FEATURE_DIM, FEATURE_VERSION

_PARAM_NAMES = ("emb", "Wz", "Wr", "Wh", "Uz", "Ur", "Uh",
                "bz", "br", "bh", "Wout", "Wfeat", "bout")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def init_params(vocab_size: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d_in = hidden + FEATURE_DIM

    def mat(rows, cols, fan):
        lim = 1.0 / np.sqrt(fan)
        return rng.uniform(-lim, lim, size=(rows, cols))

    return {
        "emb": mat(vocab_size, hidden, hidden),
        "Wz": mat(hidden, d_in, d_in),
        "Wr": mat(hidden, d_in, d_in),
        "Wh": mat(hidden, d_in, d_in),
        "Uz": mat(hidden, hidden, hidden),
        "Ur": mat(hidden, hidden, hidden),
        "Uh": mat(hidden, hidden, hidden),
        "bz": np.zeros(hidden),
        "br": np.zeros(hidden),
        "bh": np.zeros(hidden),
        "Wout": mat(vocab_size, hidden, hidden),
        "Wfeat": mat(vocab_size, FEATURE_DIM, FEATURE_DIM),
        "bout": np.zeros(vocab_size),
    }


class RecurrentModel(CausalModel):
    """Gated recurrent model; state is the hidden activation vector."""

    kind = "recurrent"

    def __init__(self, alphabet: Sequence[int], hidden: int, params: dict[str, np.ndarray],
                 loss_history: Sequence[float] = ()):
        self.alphabet = tuple(int(p) for p in alphabet)
        self._index_alphabet()
        self.hidden = hidden
        self.params = params
        self.loss_history = tuple(float(x) for x in loss_history)

    def _features(self, features) -> np.ndarray:
        if features is None:
            return np.zeros(FEATURE_DIM)
        return np.asarray(features, dtype=np.float64)

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.hidden)

    def predict(self, state: np.ndarray, features=None) -> np.ndarray:
        if state.shape != (self.hidden,):
            raise ModelMismatchError(f"state shape {state.shape} does not match hidden={self.hidden}")
        p = self.params
        feat = self._features(features)
        logits = p["Wout"] @ state + p["Wfeat"] @ feat + p["bout"]
        return _softmax(logits)

    def advance(self, state: np.ndarray, token: int, features=None) -> np.ndarray:
        if not 0 <= token < self.vocab_size:
            raise ModelMismatchError(f"token {token} outside alphabet of size {self.vocab_size}")
        p = self.params
        feat = self._features(features)
        x = np.concatenate([p["emb"][token], feat])
        z = _sigmoid(p["Wz"] @ x + p["Uz"] @ state + p["bz"])
        r = _sigmoid(p["Wr"] @ x + p["Ur"] @ state + p["br"])
        c = np.tanh(p["Wh"] @ x + p["Uh"] @ (r * state) + p["bh"])
        return (1.0 - z) * state + z * c

    def initial_state_batch(self, count: int) -> np.ndarray:
        return np.zeros((count, self.hidden))

    def predict_batch(self, states: np.ndarray, features=None) -> np.ndarray:
        p = self.params
        feat = self._features(features)
        logits = states @ p["Wout"].T + (p["Wfeat"] @ feat + p["bout"])
        return _softmax(logits)

    def advance_batch(self, states: np.ndarray, tokens: np.ndarray, features=None) -> np.ndarray:
        p = self.params
        feat = self._features(features)
        count = states.shape[0]
        x = np.concatenate([p["emb"][tokens], np.broadcast_to(feat, (count, FEATURE_DIM))], axis=1)
        z = _sigmoid(x @ p["Wz"].T + states @ p["Uz"].T + p["bz"])
        r = _sigmoid(x @ p["Wr"].T + states @ p["Ur"].T + p["br"])
        c = np.tanh(x @ p["Wh"].T + (r * states) @ p["Uh"].T + p["bh"])
        return (1.0 - z) * states + z * c

    def gather(self, states: np.ndarray, indices: np.ndarray) -> np.ndarray:
        return states[indices]

    def to_document(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": self.kind,
            "alphabet": list(self.alphabet),
            "feature_version": FEATURE_VERSION,
            "hyperparameters": {"hidden": self.hidden},
            "parameters": {name: encode_f32(self.params[name]) for name in _PARAM_NAMES},
        }

    @classmethod
    def from_document(cls, doc: dict) -> "RecurrentModel":
        params = {name: decode_f32(doc["parameters"][name]) for name in _PARAM_NAMES}
        return cls(alphabet=doc["alphabet"], hidden=int(doc["hyperparameters"]["hidden"]),
                   params=params)


def loss_and_grads(params: dict[str, np.ndarray],
                   batch: list[tuple[np.ndarray, Sequence[int]]],
                   hidden: int) -> tuple[float, dict[str, np.ndarray]]:
    """Mean negative log likelihood per token and its exact gradients.

    ``batch`` items are (features row-per-position, token indices).
    """
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    total_nll = 0.0
    total_tokens = 0
    emb, Wz, Wr, Wh = params["emb"], params["Wz"], params["Wr"], params["Wh"]
    Uz, Ur, Uh = params["Uz"], params["Ur"], params["Uh"]
    bz, br, bh = params["bz"], params["br"], params["bh"]
    Wout, Wfeat, bout = params["Wout"], params["Wfeat"], params["bout"]

    for features, tokens in batch:
        n = len(tokens)
        if n == 0:
            continue
        total_tokens += n
        feats = np.asarray(features, dtype=np.float64)
        h = np.zeros(hidden)
        cache = []
        dlogits_steps = []
        # forward: predict position i from h_{i-1}, then fold token i in
        for i in range(n):
            feat = feats[i]
            logits = Wout @ h + Wfeat @ feat + bout
            probs = _softmax(logits)
            total_nll -= float(np.log(probs[tokens[i]]))
            dl = probs.copy()
            dl[tokens[i]] -= 1.0
            dlogits_steps.append(dl)
            grads["Wout"] += np.outer(dl, h)
            grads["Wfeat"] += np.outer(dl, feat)
            grads["bout"] += dl
            if i < n - 1:
                x = np.concatenate([emb[tokens[i]], feat])
                z = _sigmoid(Wz @ x + Uz @ h + bz)
                r = _sigmoid(Wr @ x + Ur @ h + br)
                c = np.tanh(Wh @ x + Uh @ (r * h) + bh)
                h_new = (1.0 - z) * h + z * c
                cache.append((h, x, z, r, c, tokens[i], feat))
                h = h_new
        # backward through the recurrence
        dh = Wout.T @ dlogits_steps[n - 1] if n >= 1 else np.zeros(hidden)
        for i in range(n - 2, -1, -1):
            h_prev, x, z, r, c, token, feat = cache[i]
            dz = dh * (c - h_prev)
            dc = dh * z
            dh_prev = dh * (1.0 - z)
            da_c = dc * (1.0 - c * c)
            grads["Wh"] += np.outer(da_c, x)
            grads["Uh"] += np.outer(da_c, r * h_prev)
            grads["bh"] += da_c
            drh = Uh.T @ da_c
            dr = drh * h_prev
            dh_prev += drh * r
            da_r = dr * r * (1.0 - r)
            grads["Wr"] += np.outer(da_r, x)
            grads["Ur"] += np.outer(da_r, h_prev)
            grads["br"] += da_r
            dh_prev += Ur.T @ da_r
            da_z = dz * z * (1.0 - z)
            grads["Wz"] += np.outer(da_z, x)
            grads["Uz"] += np.outer(da_z, h_prev)
            grads["bz"] += da_z
            dh_prev += Uz.T @ da_z
            dx = Wz.T @ da_z + Wr.T @ da_r + Wh.T @ da_c
            grads["emb"][token] += dx[:hidden]
            dh = dh_prev + Wout.T @ dlogits_steps[i]

    if total_tokens == 0:
        raise ValueError("batch contains no tokens")
    loss = total_nll / total_tokens
    for name in grads:
        grads[name] /= total_tokens
    return loss, grads


def train_recurrent(corpus: list[tuple[np.ndarray, Sequence[int]]],
                    alphabet: Sequence[int],
                    hidden: int = 64,
                    epochs: int = 100,
                    learning_rate: float = 0.05,
                    seed: int = 0) -> RecurrentModel:
    """Fit the recurrent model by full-batch Adam.

    ``corpus`` items are (timing features, pitch sequence). Deterministic
    given ``seed``; aborts if the loss becomes non-finite.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    alphabet = tuple(int(p) for p in alphabet)
    index = {p: t for t, p in enumerate(alphabet)}
    batch = []
    for features, pitches in corpus:
        try:
            tokens = [index[int(p)] for p in pitches]
        except KeyError as exc:
            raise ModelMismatchError(f"corpus pitch {exc.args[0]} not in alphabet") from None
        batch.append((np.asarray(features, dtype=np.float64), tokens))

    rng = np.random.default_rng(seed)
    params = init_params(len(alphabet), hidden, rng)
    history: list[float] = []

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(val) for k, val in params.items()}
    for epoch in range(epochs):
        loss, grads = loss_and_grads(params, batch, hidden)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        history.append(loss)
        t = epoch + 1
        for name in params:
            m[name] = beta1 * m[name] + (1 - beta1) * grads[name]
            v[name] = beta2 * v[name] + (1 - beta2) * grads[name] ** 2
            mhat = m[name] / (1 - beta1 ** t)
            vhat = v[name] / (1 - beta2 ** t)
            params[name] -= learning_rate * mhat / (np.sqrt(vhat) + eps)

    if epochs > 0:
        final_loss, _ = loss_and_grads(params, batch, hidden)
        if not np.isfinite(final_loss):
            raise TrainingDivergedError(epochs, final_loss)
        history.append(final_loss)
    return RecurrentModel(alphabet=alphabet, hidden=hidden, params=params,
                          loss_history=history)
