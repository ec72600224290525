"""Two-stage one-step training from zero initialisation.

Stage one takes a single gradient step on ``W_V`` with ``W_KQ = 0``; stage two
takes a single step on ``W_KQ`` with ``W_V`` frozen at the stage-one value.
At ``W_KQ = 0`` attention is uniform, so both gradients have closed forms:

    grad W_V  = (u - e_y) xbar^T                           (u = 1/N everywhere)
    grad W_KQ = [ (1/T) sum_t c_t (x_t - xbar) ] x_T^T,    c_t = (p - e_y)^T W_V x_t

with ``p = softmax(W_V xbar)``. No autodiff anywhere; the finite-difference
oracle lives in the tests.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .datagen import (
    STREAM_KQ,
    STREAM_V,
    LengthDistribution,
    SamplerConfig,
    SequenceBatch,
    train_dataset,
)
from .model import (
    EmbeddedSequence,
    ModelParams,
    _gather3,
    _rows,
    context_vectors,
    query_rows,
    softmax,
)


@dataclass(frozen=True)
class TrainConfig:
    eta_V: float = 1e3
    eta_KQ: float = 1e4
    M_V: int = 4096
    M_KQ: int = 4096
    seed: int = 0
    reuse: bool = False  # both stages on the same M_V + M_KQ sequences

    def __post_init__(self):
        if self.eta_V < 0 or self.eta_KQ < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.M_V < 1 or self.M_KQ < 1:
            raise ValueError("sample counts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def grad_wv_sample(X: EmbeddedSequence, target: int) -> np.ndarray:
    u = np.full(X.N, 1.0 / X.N)
    u[target - 1] -= 1.0
    return np.outer(u, X.mean)


def grad_wkq_sample(X: EmbeddedSequence, target: int, W_V1: np.ndarray) -> np.ndarray:
    xbar = X.mean
    g = softmax(W_V1 @ xbar)
    g[target - 1] -= 1.0
    c = X.X.T @ (W_V1.T @ g)
    a = X.X @ c / X.T - c.mean() * xbar
    return np.outer(a, X.X[:, -1])


def _uniform_means(batch: SequenceBatch, L: int, N: int) -> np.ndarray:
    w = batch.mask / batch.T[:, None]
    return context_vectors(w, batch, L, N)


def mean_grad_wv(batch: SequenceBatch, N: int, L: int) -> np.ndarray:
    """Average of ``grad_wv_sample`` over the batch (at zero parameters)."""
    xbar = _uniform_means(batch, L, N)
    M = len(batch)
    per_class = np.zeros((N, xbar.shape[1]))
    np.add.at(per_class, batch.target - 1, xbar)
    total = per_class.sum(axis=0)
    return (np.outer(np.full(N, 1.0 / N), total) - per_class) / M


def mean_grad_wkq(batch: SequenceBatch, W_V1: np.ndarray, L: int, *, linearize: bool = False) -> np.ndarray:
    """Average of ``grad_wkq_sample`` over the batch.

    ``linearize=True`` replaces the stage-one prediction ``p`` by the uniform
    vector, which is the quantity the population oracle evaluates exactly.
    """
    N = W_V1.shape[0]
    D = L + 2 * N
    M = len(batch)
    xbar = _uniform_means(batch, L, N)
    if linearize:
        g = np.full((M, N), 1.0 / N)
    else:
        g = softmax(xbar @ W_V1.T, axis=1)
    g[np.arange(M), batch.target - 1] -= 1.0
    v = g @ W_V1
    pos, tok, prev = _rows(batch, L, N)
    c = np.where(batch.mask, _gather3(v, pos, tok, prev), 0.0)
    cw = c / batch.T[:, None]
    a = context_vectors(cw, batch, L, N) - cw.sum(axis=1)[:, None] * xbar
    # G^T accumulated row-wise: column j of G gets a_i whenever x_T(i) has a one at j.
    GT = np.zeros((D, D))
    for rows in query_rows(batch, L, N):
        np.add.at(GT, rows, a)
    return GT.T / M


def one_step(batch_v: SequenceBatch, batch_kq: SequenceBatch, cfg: SamplerConfig,
             eta_V: float, eta_KQ: float, *, linearize: bool = False) -> ModelParams:
    W_V1 = -eta_V * mean_grad_wv(batch_v, cfg.N, cfg.L)
    W_KQ1 = -eta_KQ * mean_grad_wkq(batch_kq, W_V1, cfg.L, linearize=linearize)
    # + 0.0 clears -0.0 entries so checkpoints are byte-stable
    return ModelParams(W_KQ1 + 0.0, W_V1 + 0.0, cfg.N_trg, cfg.L)


def training_batches(cfg: SamplerConfig, dist: LengthDistribution, tc: TrainConfig) -> tuple[SequenceBatch, SequenceBatch]:
    if tc.reuse:
        seqs = train_dataset(cfg, dist, tc.M_V + tc.M_KQ, tc.seed, STREAM_V)
        b = SequenceBatch.from_sequences(seqs)
        return b, b
    bv = SequenceBatch.from_sequences(train_dataset(cfg, dist, tc.M_V, tc.seed, STREAM_V))
    bkq = SequenceBatch.from_sequences(train_dataset(cfg, dist, tc.M_KQ, tc.seed, STREAM_KQ))
    return bv, bkq


def run_algorithm1(cfg: SamplerConfig, dist: LengthDistribution, tc: TrainConfig) -> ModelParams:
    """One step on ``W_V``, then one step on ``W_KQ``; a pure function of its inputs."""
    dist.check_fits(cfg.L)
    bv, bkq = training_batches(cfg, dist, tc)
    return one_step(bv, bkq, cfg, tc.eta_V, tc.eta_KQ)
