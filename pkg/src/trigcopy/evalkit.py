"""OOD metrics, the mechanism probe on ``W_KQ`` and heatmap export."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datagen import (
    STREAM_IND,
    STREAM_OOD,
    LengthDistribution,
    SamplerConfig,
    SequenceBatch,
    ood_dataset,
    seq_length,
    train_dataset,
)
from .model import ModelParams, batch_attention, batch_predict

EVAL_CHUNK = 4096


def _predict(params: ModelParams, seqs) -> tuple[np.ndarray, SequenceBatch]:
    batch = SequenceBatch.from_sequences(seqs)
    preds = np.concatenate([
        batch_predict(params, SequenceBatch.from_sequences(seqs[i:i + EVAL_CHUNK]))
        for i in range(0, len(seqs), EVAL_CHUNK)
    ])
    return preds, batch


def pseudo_position(ell1, ell2):
    """Where a shortcut fitted on equal halves looks: ``(ell1 + ell2) / 2 + 2``."""
    return (np.asarray(ell1) + np.asarray(ell2)) // 2 + 2


@dataclass
class MetricsRecord:
    ood_accuracy: float
    pseudo_rate: float
    leftmost_rate: float
    n_samples: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("ood_accuracy", "pseudo_rate", "leftmost_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def eval_ood(params: ModelParams, cfg: SamplerConfig, ell_min: int, ell_max: int, n: int, seed: int) -> MetricsRecord:
    """Accuracy plus the two shortcut error rates on ``n`` OOD draws.

    Pseudo target: the token at ``(ell1 + ell2) / 2 + 2``, where a positional
    shortcut trained on equal halves would look. Leftmost target: the token at
    ``ell_min + 2``. A prediction may count toward several rates at once.
    """
    seqs = ood_dataset(cfg, ell_min, ell_max, n, seed, STREAM_OOD)
    preds, batch = _predict(params, seqs)
    correct = preds == batch.target
    pseudo = preds == batch.token_at(pseudo_position(batch.ell1, batch.ell2))
    leftmost = preds == batch.token_at(np.full(len(batch), ell_min + 2))
    return MetricsRecord(
        float(correct.mean()),
        float(pseudo.mean()),
        float(leftmost.mean()),
        n,
        {"ell_min": ell_min, "ell_max": ell_max, "N": cfg.N, "N_trg": cfg.N_trg, "L": cfg.L, "seed": seed},
    )


def eval_in_distribution(params: ModelParams, cfg: SamplerConfig, dist: LengthDistribution, n: int, seed: int) -> float:
    seqs = train_dataset(cfg, dist, n, seed, STREAM_IND)
    preds, batch = _predict(params, seqs)
    return float((preds == batch.target).mean())


def ideal_induction_params(cfg: SamplerConfig, scale: float = 50.0) -> ModelParams:
    """Hand-built induction head: attend where the previous token is the query trigger, copy that token."""
    L, N = cfg.L, cfg.N
    p = ModelParams.zeros(cfg)
    for w in range(1, cfg.N_trg + 1):
        p.W_KQ[L + N + w - 1, L + w - 1] = scale
    p.W_V[:, L:L + N] = scale * np.eye(N)
    return p


# ---------------------------------------------------------------------------
# mechanism probe


@dataclass
class MechanismProbe:
    induction_strength: float
    positional_strengths: dict[int, float]
    dominant: str  # "positional" or "induction"
    attention_induction: float | None = None
    attention_positional: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["positional_strengths"] = {str(k): v for k, v in self.positional_strengths.items()}
        return d


def probe_mechanism(params: ModelParams, cfg: SamplerConfig, dist: LengthDistribution,
                    *, attention_samples: int = 0, seed: int = 0) -> MechanismProbe:
    """Compare the induction entries of ``W_KQ`` with its shortcut entries.

    Induction strength is the mean of ``W_KQ[prev w, tok w]`` over triggers;
    positional strength for ``ell`` is ``W_KQ[pos ell+2, pos T(ell)]``. Ties go
    to ``positional``. With ``attention_samples > 0`` a secondary statistic is
    added: the attention that in-distribution queries put on the output key
    when ``W_KQ`` is cut down to the previous-token x token block, and to the
    position x position block.
    """
    L, N = cfg.L, cfg.N
    W = params.W_KQ
    ind = float(np.mean([W[L + N + w - 1, L + w - 1] for w in range(1, cfg.N_trg + 1)]))
    pos = {int(ell): float(W[ell + 1, seq_length(ell) - 1]) for ell, m in zip(dist.support, dist.masses) if m > 0}
    dominant = "induction" if ind > max(pos.values()) else "positional"
    probe = MechanismProbe(ind, pos, dominant)
    if attention_samples:
        probe.attention_induction, probe.attention_positional = _attention_split(params, cfg, dist, attention_samples, seed)
    return probe


def _attention_split(params, cfg, dist, n, seed) -> tuple[float, float]:
    """Mean attention on the output key ``ell1 + 2`` under each block alone."""
    L, N = cfg.L, cfg.N
    batch = SequenceBatch.from_sequences(train_dataset(cfg, dist, n, seed, STREAM_IND))
    r = np.arange(len(batch))
    out = []
    for rows, cols in ((slice(L + N, L + 2 * N), slice(L, L + N)), (slice(0, L), slice(0, L))):
        W = np.zeros_like(params.W_KQ)
        W[rows, cols] = params.W_KQ[rows, cols]
        attn = batch_attention(ModelParams(W, params.W_V, params.N_trg, params.L), batch)
        out.append(float(attn[r, batch.ell1 + 1].mean()))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# heatmaps

BLOCKS = ("position", "token", "prev", "full")


def block_slice(name: str, cfg: SamplerConfig) -> slice:
    L, N = cfg.L, cfg.N
    table = {
        "position": slice(0, L),
        "token": slice(L, L + N),
        "prev": slice(L + N, L + 2 * N),
        "full": slice(0, L + 2 * N),
    }
    if name not in table:
        raise KeyError(f"unknown block {name!r}; choose from {BLOCKS}")
    return table[name]


def heatmap_block(params: ModelParams, rows: str, cols: str) -> np.ndarray:
    cfg = params.cfg
    return params.W_KQ[block_slice(rows, cfg), block_slice(cols, cfg)]


def write_grid(path: str | Path, M: np.ndarray) -> None:
    """Whitespace-separated rows with 17 significant digits (exact float64 round trip)."""
    with open(path, "w") as fh:
        for row in np.atleast_2d(M):
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def read_grid(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        return np.array([[float(x) for x in line.split()] for line in fh if line.strip()])


def write_pgm(path: str | Path, M: np.ndarray) -> None:
    """Binary 8-bit PGM. Min-max normalised: min -> 0 (black), max -> 255; constant input -> 0."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    lo, hi = float(M.min()), float(M.max())
    img = np.zeros(M.shape) if hi == lo else (M - lo) / (hi - lo)
    pix = np.round(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{M.shape[1]} {M.shape[0]}\n255\n".encode())
        fh.write(pix.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def export_heatmap(params: ModelParams, rows: str, cols: str, out_dir: str | Path, *,
                   stem: str = "wkq", image: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    M = heatmap_block(params, rows, cols)
    base = out_dir / f"{stem}_{rows}x{cols}"
    paths = [base.with_suffix(".txt")]
    write_grid(paths[0], M)
    if image:
        paths.append(base.with_suffix(".pgm"))
        write_pgm(paths[1], M)
    return paths
