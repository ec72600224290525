"""Single-layer attention model on one-hot (position, token, previous-token) embeddings.

Row layout of an embedding column (0-based):

* ``t - 1``            position ``t``          (``L`` rows)
* ``L + z - 1``        current token ``z``      (``N`` rows)
* ``L + N + z - 1``    previous token ``z``     (``N`` rows, all zero at ``t = 1``)

Two code paths compute the same forward pass: a dense one that materialises
``X`` (``embed`` and friends, used as the reference) and an index-gather one
over a ``SequenceBatch`` (``batch_*``), which never builds ``X``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datagen import SamplerConfig, SequenceBatch, TokenSequence


def pos_row(t, L: int, N: int):
    return t - 1


def tok_row(z, L: int, N: int):
    return L + z - 1


def prev_row(z, L: int, N: int):
    return L + N + z - 1


@dataclass
class ModelParams:
    W_KQ: np.ndarray
    W_V: np.ndarray
    N_trg: int
    L: int

    def __post_init__(self):
        self.W_KQ = np.asarray(self.W_KQ, dtype=np.float64)
        self.W_V = np.asarray(self.W_V, dtype=np.float64)
        N = self.W_V.shape[0]
        D = self.L + 2 * N
        if self.W_KQ.shape != (D, D) or self.W_V.shape != (N, D):
            raise ValueError(f"shapes W_KQ{self.W_KQ.shape}, W_V{self.W_V.shape} do not match D = L + 2N = {D}")
        if not (np.isfinite(self.W_KQ).all() and np.isfinite(self.W_V).all()):
            raise ValueError("non-finite parameter entries")

    @property
    def N(self) -> int:
        return self.W_V.shape[0]

    @property
    def D(self) -> int:
        return self.L + 2 * self.N

    @property
    def cfg(self) -> SamplerConfig:
        return SamplerConfig(self.N, self.N_trg, self.L)

    @classmethod
    def zeros(cls, cfg: SamplerConfig) -> "ModelParams":
        return cls(np.zeros((cfg.D, cfg.D)), np.zeros((cfg.N, cfg.D)), cfg.N_trg, cfg.L)


@dataclass
class EmbeddedSequence:
    X: np.ndarray  # (D, upto)
    source: TokenSequence
    L: int
    N: int

    @property
    def T(self) -> int:
        return self.X.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.X.mean(axis=1)


def embed(seq: TokenSequence, cfg: SamplerConfig, upto: int | None = None) -> EmbeddedSequence:
    """Columns ``x_1..x_upto``; ``upto`` defaults to the query position ``T``."""
    upto = seq.T if upto is None else upto
    if not 1 <= upto <= len(seq.tokens):
        raise IndexError(f"upto={upto} outside 1..{len(seq.tokens)}")
    if upto > cfg.L:
        raise IndexError(f"position {upto} exceeds L={cfg.L}")
    L, N = cfg.L, cfg.N
    X = np.zeros((cfg.D, upto))
    for t in range(1, upto + 1):
        X[pos_row(t, L, N), t - 1] = 1.0
        X[tok_row(seq.at(t), L, N), t - 1] = 1.0
        if t >= 2:
            X[prev_row(seq.at(t - 1), L, N), t - 1] = 1.0
    return EmbeddedSequence(X, seq, L, N)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    e = np.exp(v - m)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    return v - m - np.log(np.exp(v - m).sum(axis=axis, keepdims=True))


def attention_logits(X: EmbeddedSequence, params: ModelParams) -> np.ndarray:
    return X.X.T @ (params.W_KQ @ X.X[:, -1])


def attention_weights(X: EmbeddedSequence, params: ModelParams) -> np.ndarray:
    return softmax(attention_logits(X, params))


def forward_logits(X: EmbeddedSequence, params: ModelParams) -> np.ndarray:
    return params.W_V @ (X.X @ attention_weights(X, params))


def predict_distribution(X: EmbeddedSequence, params: ModelParams) -> np.ndarray:
    return softmax(forward_logits(X, params))


def predict_token(X: EmbeddedSequence, params: ModelParams) -> int:
    """Most likely next token (1-indexed); ties go to the smallest id."""
    return int(np.argmax(predict_distribution(X, params))) + 1


def cross_entropy(X: EmbeddedSequence, params: ModelParams, target: int) -> float:
    return float(-log_softmax(forward_logits(X, params))[target - 1])


# ---------------------------------------------------------------------------
# batched index path


def _rows(batch: SequenceBatch, L: int, N: int):
    """Per-position row indices ``(pos, tok, prev)``, each ``(M, Tmax)``.

    ``prev`` is -1 where there is no previous token (``t = 1``) or past ``T``.
    Padded positions past ``T`` point at row 0 and must be masked by callers.
    """
    Tm = batch.Tmax
    M = len(batch)
    t = np.broadcast_to(np.arange(1, Tm + 1), (M, Tm))
    z = batch.tokens[:, :Tm]
    zp = np.concatenate([np.zeros((M, 1), dtype=np.int64), batch.tokens[:, : Tm - 1]], axis=1)
    mask = batch.mask
    pos = np.where(mask, t - 1, 0)
    tok = np.where(mask, L + z - 1, 0)
    prev = np.where(mask & (zp > 0), L + N + zp - 1, -1)
    return pos, tok, prev


def _gather3(vecs: np.ndarray, pos, tok, prev) -> np.ndarray:
    """``x_t . vecs[i]`` for every row ``i`` and position ``t``; vecs is ``(M, D)``."""
    M = vecs.shape[0]
    r = np.arange(M)[:, None]
    out = vecs[r, pos] + vecs[r, tok]
    has_prev = prev >= 0
    out = out + np.where(has_prev, vecs[r, np.where(has_prev, prev, 0)], 0.0)
    return out


def query_rows(batch: SequenceBatch, L: int, N: int):
    """Row indices of the three ones in each ``x_T``."""
    idx = np.arange(len(batch))
    T = batch.T
    return T - 1, L + batch.tokens[idx, T - 1] - 1, L + N + batch.tokens[idx, T - 2] - 1


def batch_attention_logits(params: ModelParams, batch: SequenceBatch) -> np.ndarray:
    """``(M, Tmax)`` logits ``x_t^T W_KQ x_T``; entries past ``T`` are ``-inf``."""
    L, N = params.L, params.N
    qp, qt, qv = query_rows(batch, L, N)
    r = params.W_KQ[:, qp].T + params.W_KQ[:, qt].T + params.W_KQ[:, qv].T  # (M, D)
    pos, tok, prev = _rows(batch, L, N)
    s = _gather3(r, pos, tok, prev)
    return np.where(batch.mask, s, -np.inf)


def batch_attention(params: ModelParams, batch: SequenceBatch) -> np.ndarray:
    return softmax(batch_attention_logits(params, batch), axis=1)


def context_vectors(attn: np.ndarray, batch: SequenceBatch, L: int, N: int) -> np.ndarray:
    """``X a`` per row as a dense ``(M, D)`` array."""
    M = len(batch)
    D = L + 2 * N
    pos, tok, prev = _rows(batch, L, N)
    a = np.where(batch.mask, attn, 0.0)
    out = np.zeros((M, D))
    r = np.broadcast_to(np.arange(M)[:, None], pos.shape)
    np.add.at(out, (r, pos), a)
    np.add.at(out, (r, tok), a)
    has_prev = prev >= 0
    np.add.at(out, (r[has_prev], prev[has_prev]), a[has_prev])
    return out


def batch_forward_logits(params: ModelParams, batch: SequenceBatch) -> np.ndarray:
    h = context_vectors(batch_attention(params, batch), batch, params.L, params.N)
    return h @ params.W_V.T


def batch_predict(params: ModelParams, batch: SequenceBatch) -> np.ndarray:
    """Predicted tokens (1-indexed, smallest id on ties) for every row."""
    return np.argmax(softmax(batch_forward_logits(params, batch), axis=1), axis=1) + 1
