"""Trigger-output sequences: length distributions, samplers and batching.

Token ids are 1-indexed everywhere: triggers are ``1..N_trg`` and every other
token (outputs and irrelevant filler) lives in ``N_trg+1..N``. Positions are
1-indexed as well, so for a sequence with subtext lengths ``(ell1, ell2)`` the
first trigger sits at ``ell1 + 1``, its output at ``ell1 + 2``, the query
trigger at ``T = ell1 + ell2 + 3`` and the target at ``T + 1``.

Randomness
----------
Every sequence owns an independent generator derived from
``SeedSequence(seed, spawn_key=(stream, index))``, so any dataset can be
rebuilt from ``(seed, stream, index)`` alone. Within one sequence the draws
are consumed in a fixed order:

1. lengths -- one ``random()`` for a pretraining length, or two ``integers``
   calls (``ell`` then the first-subtext offset) for an OOD sequence;
2. the trigger, one ``integers`` call;
3. the output followed by the ``ell1 + ell2`` irrelevant tokens, one
   ``integers`` call of size ``1 + ell1 + ell2``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational, Real
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

# Named substreams; trainer and evaluator never share one.
STREAM_V = 0
STREAM_KQ = 1
STREAM_OOD = 2
STREAM_IND = 3
STREAM_EXPORT = 4

MASS_TOL = 1e-12


class LengthOverflowError(ValueError):
    """Sequence would not fit in the configured maximum length ``L``."""


class InvalidRangeError(ValueError):
    """Bad ``(ell_min, ell_max)`` window for the OOD sampler."""


class ScalingAssumptionWarning(UserWarning):
    """Configuration leaves the regime the asymptotic analysis assumes."""


def seq_length(ell: int) -> int:
    """Position of the second trigger for equal subtexts: ``T(ell) = 2 ell + 3``."""
    return 2 * ell + 3


@dataclass(frozen=True)
class LengthDistribution:
    """Discrete distribution over subtext lengths.

    ``masses`` may hold floats or exact ``Fraction`` values; the exact form is
    preserved so ratios built from it (e.g. the max-sum ratio) stay rational.
    """

    support: tuple[int, ...]
    masses: tuple[Real, ...]

    def __post_init__(self):
        support = tuple(int(s) for s in self.support)
        masses = tuple(self.masses)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "masses", masses)
        if not support:
            raise ValueError("empty support")
        if len(support) != len(masses):
            raise ValueError("support and masses differ in length")
        if any(s < 1 for s in support):
            raise ValueError(f"support entries must be >= 1, got {support}")
        if any(b <= a for a, b in zip(support, support[1:])):
            raise ValueError(f"support must be strictly increasing, got {support}")
        if any(m < 0 for m in masses):
            raise ValueError("masses must be nonnegative")
        if abs(float(sum(masses)) - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {float(sum(masses))!r}, not 1")

    @classmethod
    def point(cls, ell: int) -> "LengthDistribution":
        return cls((ell,), (Fraction(1),))

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "LengthDistribution":
        """Uniform on the integer window ``[lo, hi]`` (inclusive)."""
        if hi < lo:
            raise ValueError(f"empty window [{lo}, {hi}]")
        k = hi - lo + 1
        return cls(tuple(range(lo, hi + 1)), (Fraction(1, k),) * k)

    @classmethod
    def from_mapping(cls, masses: dict[int, Real]) -> "LengthDistribution":
        items = sorted(masses.items())
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    @property
    def probs(self) -> np.ndarray:
        return np.array([float(m) for m in self.masses])

    @property
    def is_exact(self) -> bool:
        return all(isinstance(m, Rational) for m in self.masses)

    @property
    def max_ell(self) -> int:
        return max(s for s, m in zip(self.support, self.masses) if m > 0)

    @property
    def min_ell(self) -> int:
        return min(s for s, m in zip(self.support, self.masses) if m > 0)

    def vector(self, U: int) -> np.ndarray:
        """Masses laid out on ``1..U`` (zero where ``ell`` is absent)."""
        out = np.zeros(U)
        for s, m in zip(self.support, self.masses):
            if s > U:
                if m > 0:
                    raise ValueError(f"mass at ell={s} beyond U={U}")
                continue
            out[s - 1] = float(m)
        return out

    def check_fits(self, L: int) -> None:
        for s in self.support:
            if 2 * s + 4 > L - 1:
                raise LengthOverflowError(
                    f"ell={s} needs T+1 = {2 * s + 4} <= L-1 = {L - 1}; raise L to >= {2 * s + 5}"
                )

    def to_dict(self) -> dict:
        return {"support": list(self.support), "masses": [_mass_repr(m) for m in self.masses]}

    @classmethod
    def from_dict(cls, d: dict) -> "LengthDistribution":
        return cls(tuple(d["support"]), tuple(_mass_parse(m) for m in d["masses"]))


def _mass_repr(m):
    if isinstance(m, Fraction):
        return str(m) if m.denominator != 1 else int(m)
    return float(m)


def _mass_parse(m):
    if isinstance(m, str):
        return Fraction(m)
    if isinstance(m, int):
        return Fraction(m)
    return float(m)


@dataclass(frozen=True)
class SamplerConfig:
    N: int
    N_trg: int
    L: int

    def __post_init__(self):
        if not 1 <= self.N_trg < self.N:
            raise ValueError(f"need 1 <= N_trg < N, got N_trg={self.N_trg}, N={self.N}")
        if self.L < 7:
            raise ValueError(f"L={self.L} too short for any sequence (need L >= 7)")

    @property
    def D(self) -> int:
        return self.L + 2 * self.N

    @property
    def n_other(self) -> int:
        return self.N - self.N_trg

    def validate(self, dist: LengthDistribution | None = None, *, warn: bool = True) -> list[str]:
        """Raise on hard violations, warn (and return messages) on soft ones."""
        notes = []
        if self.N_trg >= self.N ** (1 / 3):
            notes.append(
                f"N_trg={self.N_trg} >= N^(1/3)={self.N ** (1 / 3):.3g}: trigger count outside the small-N_trg regime"
            )
        if dist is not None:
            if self.L < 2 * dist.min_ell + 5:
                raise LengthOverflowError(f"L={self.L} < 2*min(support)+5")
            dist.check_fits(self.L)
            small = [s for s, m in zip(dist.support, dist.masses) if m > 0 and s < 4]
            if small:
                notes.append(f"lengths {small} are below 4")
        if warn:
            for msg in notes:
                warnings.warn(msg, ScalingAssumptionWarning, stacklevel=2)
        return notes


@dataclass(frozen=True)
class TokenSequence:
    """One sampled ``z_{1:T+1}``; ``tokens[T]`` (0-based) is the target."""

    tokens: tuple[int, ...]
    ell1: int
    ell2: int
    trigger: int
    output: int

    @property
    def T(self) -> int:
        return self.ell1 + self.ell2 + 3

    def at(self, pos: int) -> int:
        """Token at 1-indexed position ``pos``."""
        return self.tokens[pos - 1]

    def check(self, cfg: SamplerConfig) -> None:
        T = self.T
        z = self.tokens
        if len(z) != T + 1:
            raise AssertionError(f"length {len(z)} != T+1 = {T + 1}")
        if not 1 <= self.trigger <= cfg.N_trg:
            raise AssertionError("trigger out of range")
        if not cfg.N_trg < self.output <= cfg.N:
            raise AssertionError("output out of range")
        fixed = {self.ell1 + 1: self.trigger, self.ell1 + 2: self.output, T: self.trigger, T + 1: self.output}
        for pos, tok in fixed.items():
            if z[pos - 1] != tok:
                raise AssertionError(f"position {pos} holds {z[pos - 1]}, expected {tok}")
        for pos in range(1, T + 2):
            if pos not in fixed and not cfg.N_trg < z[pos - 1] <= cfg.N:
                raise AssertionError(f"irrelevant token {z[pos - 1]} at {pos} out of range")

    def to_dict(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "ell1": self.ell1,
            "ell2": self.ell2,
            "trigger": self.trigger,
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TokenSequence":
        return cls(tuple(int(t) for t in d["tokens"]), int(d["ell1"]), int(d["ell2"]), int(d["trigger"]), int(d["output"]))


def sequence_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))


def _draw_ell(dist: LengthDistribution, rng: np.random.Generator) -> int:
    cdf = np.cumsum(dist.probs)
    i = int(np.searchsorted(cdf, rng.random(), side="right"))
    # guard against float cdf ending a hair below 1
    i = min(i, len(dist.support) - 1)
    while dist.masses[i] == 0:
        i -= 1
    return dist.support[i]


def sample_length(dist: LengthDistribution, rng: np.random.Generator) -> int:
    return _draw_ell(dist, rng)


def _build(cfg: SamplerConfig, ell1: int, ell2: int, rng: np.random.Generator) -> TokenSequence:
    trigger = int(rng.integers(1, cfg.N_trg + 1))
    rest = rng.integers(cfg.N_trg + 1, cfg.N + 1, size=1 + ell1 + ell2)
    output = int(rest[0])
    filler = [int(x) for x in rest[1:]]
    tokens = tuple(filler[:ell1] + [trigger, output] + filler[ell1:] + [trigger, output])
    return TokenSequence(tokens, ell1, ell2, trigger, output)


def sample_general_sequence(cfg: SamplerConfig, ell1: int, ell2: int, rng: np.random.Generator) -> TokenSequence:
    if ell1 < 1 or ell2 < 1:
        raise ValueError(f"subtext lengths must be >= 1, got ({ell1}, {ell2})")
    if ell1 + ell2 + 4 > cfg.L - 1:
        raise LengthOverflowError(f"(ell1, ell2)=({ell1}, {ell2}) needs T+1={ell1 + ell2 + 4} > L-1={cfg.L - 1}")
    return _build(cfg, ell1, ell2, rng)


def sample_train_sequence(cfg: SamplerConfig, ell: int, rng: np.random.Generator) -> TokenSequence:
    if 2 * ell + 4 > cfg.L - 1:
        raise LengthOverflowError(f"ell={ell} needs T+1={2 * ell + 4} > L-1={cfg.L - 1}")
    return sample_general_sequence(cfg, ell, ell, rng)


def sample_ood_sequence(cfg: SamplerConfig, ell_min: int, ell_max: int, rng: np.random.Generator) -> TokenSequence:
    """``ell ~ U[ell_min+1, ell_max]``, ``ell1 ~ U({1..2ell-1} minus {ell})``, ``ell2 = 2ell - ell1``."""
    if ell_min + 1 > ell_max:
        raise InvalidRangeError(f"need ell_min + 1 <= ell_max, got ({ell_min}, {ell_max})")
    ell = int(rng.integers(ell_min + 1, ell_max + 1))
    r = int(rng.integers(1, 2 * ell - 1))  # 1..2ell-2, then skip ell
    ell1 = r if r < ell else r + 1
    return sample_general_sequence(cfg, ell1, 2 * ell - ell1, rng)


def adversarial_sequence(cfg: SamplerConfig, ell1: int, ell2: int, *, trigger: int = 1,
                         output: int | None = None, filler: int | None = None) -> TokenSequence:
    """``[u]*ell1 + [w, v] + [u]*ell2 + [w, v]`` with one repeated filler ``u != v``."""
    if ell1 < 1 or ell2 < 1:
        raise ValueError("subtext lengths must be >= 1")
    if ell1 + ell2 + 4 > cfg.L - 1:
        raise LengthOverflowError(f"(ell1, ell2)=({ell1}, {ell2}) does not fit L={cfg.L}")
    if cfg.n_other < 2:
        raise ValueError("need at least two non-trigger tokens")
    u = cfg.N_trg + 1 if filler is None else filler
    v = cfg.N_trg + 2 if output is None else output
    if u == v or u <= cfg.N_trg or v <= cfg.N_trg or not 1 <= trigger <= cfg.N_trg:
        raise ValueError("filler and output must be distinct non-trigger tokens")
    tokens = (u,) * ell1 + (trigger, v) + (u,) * ell2 + (trigger, v)
    return TokenSequence(tokens, ell1, ell2, trigger, v)


def train_dataset(cfg: SamplerConfig, dist: LengthDistribution, n: int, seed: int,
                  stream: int = STREAM_V, start: int = 0) -> list[TokenSequence]:
    out = []
    for i in range(start, start + n):
        rng = sequence_rng(seed, stream, i)
        out.append(sample_train_sequence(cfg, _draw_ell(dist, rng), rng))
    return out


def ood_dataset(cfg: SamplerConfig, ell_min: int, ell_max: int, n: int, seed: int,
                stream: int = STREAM_OOD) -> list[TokenSequence]:
    if ell_min + 1 > ell_max:
        raise InvalidRangeError(f"need ell_min + 1 <= ell_max, got ({ell_min}, {ell_max})")
    return [sample_ood_sequence(cfg, ell_min, ell_max, sequence_rng(seed, stream, i)) for i in range(n)]


@dataclass
class SequenceBatch:
    """Padded array view of many sequences for the vectorised code paths.

    ``tokens`` is ``(M, Tmax + 1)`` with zeros past each row's end, so column
    ``t - 1`` holds position ``t``. ``T`` is the query position per row.
    """

    tokens: np.ndarray
    T: np.ndarray
    ell1: np.ndarray
    ell2: np.ndarray
    trigger: np.ndarray
    output: np.ndarray
    _mask: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_sequences(cls, seqs: Sequence[TokenSequence]) -> "SequenceBatch":
        if not seqs:
            raise ValueError("empty batch")
        T = np.array([s.T for s in seqs], dtype=np.int64)
        tokens = np.zeros((len(seqs), int(T.max()) + 1), dtype=np.int64)
        for i, s in enumerate(seqs):
            tokens[i, : len(s.tokens)] = s.tokens
        return cls(
            tokens=tokens,
            T=T,
            ell1=np.array([s.ell1 for s in seqs], dtype=np.int64),
            ell2=np.array([s.ell2 for s in seqs], dtype=np.int64),
            trigger=np.array([s.trigger for s in seqs], dtype=np.int64),
            output=np.array([s.output for s in seqs], dtype=np.int64),
        )

    def __len__(self) -> int:
        return len(self.T)

    @property
    def Tmax(self) -> int:
        return int(self.T.max())

    @property
    def mask(self) -> np.ndarray:
        """``(M, Tmax)`` boolean, True for positions ``1..T`` of each row."""
        if self._mask is None:
            self._mask = np.arange(1, self.Tmax + 1)[None, :] <= self.T[:, None]
        return self._mask

    @property
    def target(self) -> np.ndarray:
        return self.tokens[np.arange(len(self)), self.T]

    def token_at(self, pos: np.ndarray) -> np.ndarray:
        """Token at per-row 1-indexed position ``pos``."""
        return self.tokens[np.arange(len(self)), np.asarray(pos) - 1]


def write_jsonl(path: str | Path, seqs: Iterable[TokenSequence], meta: dict | None = None) -> None:
    """One JSON object per line; an optional leading ``{"meta": ...}`` line."""
    with open(path, "w") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for s in seqs:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> tuple[list[TokenSequence], dict | None]:
    seqs, meta = [], None
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "meta" in rec:
                meta = rec["meta"]
            else:
                seqs.append(TokenSequence.from_dict(rec))
    return seqs, meta
