"""Central finite differences of the cross-entropy loss, the reference the closed forms are checked against."""

import numpy as np

from trigcopy.datagen import SamplerConfig, sample_general_sequence
from trigcopy.model import ModelParams, cross_entropy, embed

EPS = 1e-5


def fd_grad(loss, W: np.ndarray, eps: float = EPS) -> np.ndarray:
    G = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        old = W[idx]
        W[idx] = old + eps
        up = loss(W)
        W[idx] = old - eps
        down = loss(W)
        W[idx] = old
        G[idx] = (up - down) / (2 * eps)
    return G


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_instance(rng: np.random.Generator):
    """Small config (N <= 8, T <= 9), one sequence and a random value matrix."""
    N = int(rng.integers(3, 9))
    n = int(rng.integers(1, N - 1))
    cfg = SamplerConfig(N, n, 11)
    ell1 = int(rng.integers(1, 6))
    ell2 = int(rng.integers(1, 7 - ell1))
    seq = sample_general_sequence(cfg, ell1, ell2, rng)
    W_V1 = rng.standard_normal((cfg.N, cfg.D))
    return cfg, seq, W_V1


def fd_wv(cfg, seq):
    X = embed(seq, cfg)
    Z = np.zeros((cfg.D, cfg.D))
    return fd_grad(lambda W: cross_entropy(X, ModelParams(Z, W, cfg.N_trg, cfg.L), seq.output),
                   np.zeros((cfg.N, cfg.D)))


def fd_wkq(cfg, seq, W_V1):
    X = embed(seq, cfg)
    return fd_grad(lambda W: cross_entropy(X, ModelParams(W, W_V1, cfg.N_trg, cfg.L), seq.output),
                   np.zeros((cfg.D, cfg.D)))
