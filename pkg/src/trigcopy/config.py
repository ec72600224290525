"""Experiment configuration: nested dataclasses read from and written to JSON.

A config file only needs the fields it overrides; everything else takes the
defaults below (equal 4096/4096 split of 8192 training sequences, 1024 test
sequences, eta_V = 1e3, eta_KQ = 1e4).

Distribution specs accept ``{"family": "point", "ell": 3}``,
``{"family": "uniform", "lo": 3, "hi": 8}``,
``{"family": "optimal", "N_trg": 4, "U": 4}`` or an explicit
``{"support": [...], "masses": [...]}`` (masses may be strings like "1/3").
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datagen import LengthDistribution, SamplerConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def build_dist(spec: dict) -> LengthDistribution:
    spec = dict(spec)
    family = spec.pop("family", None)
    try:
        if family is None:
            return LengthDistribution.from_dict(spec)
        if family == "point":
            return LengthDistribution.point(int(spec["ell"]))
        if family == "uniform":
            return LengthDistribution.uniform(int(spec["lo"]), int(spec["hi"]))
        if family == "optimal":
            from .diversity import optimal_distribution

            return optimal_distribution(int(spec["N_trg"]), spec.get("U"))
    except KeyError as e:
        raise ConfigError(f"dist family {family!r} is missing field {e}") from None
    raise ConfigError(f"unknown dist family {family!r}; use point, uniform, optimal or support/masses")


@dataclass
class EvalConfig:
    ell_min: int = 3
    ell_max: int = 15
    n_test: int = 1024


@dataclass
class SweepConfig:
    ell_min: list[int] = field(default_factory=lambda: [3])
    ell_max: list[int] = field(default_factory=lambda: [4, 8, 12, 15])
    N_trg: list[int] = field(default_factory=lambda: [4, 8])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])

    def cells(self) -> list[tuple[int, int, int, int]]:
        """``(N_trg, ell_min, ell_max, seed)`` in canonical order, ``ell_min < ell_max`` only."""
        return [
            (n, lo, hi, s)
            for n in sorted(self.N_trg)
            for lo in sorted(self.ell_min)
            for hi in sorted(self.ell_max)
            if lo < hi
            for s in sorted(self.seeds)
        ]


@dataclass
class ExperimentConfig:
    N: int = 32
    N_trg: int = 2
    L: int = 40
    dist: dict = field(default_factory=lambda: {"family": "uniform", "lo": 3, "hi": 8})
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @property
    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.N, self.N_trg, self.L)

    def length_dist(self) -> LengthDistribution:
        return build_dist(self.dist)

    def validate(self, *, eval_block: bool = True, sweep_block: bool = True) -> "ExperimentConfig":
        """Check the model section, plus the eval and sweep sections unless switched off."""
        try:
            cfg = self.sampler
            dist = self.length_dist()
            cfg.validate(dist, warn=False)
        except ValueError as e:
            raise ConfigError(f"invalid config: {e}") from None
        if eval_block:
            if self.eval.ell_min + 1 > self.eval.ell_max:
                raise ConfigError(f"eval needs ell_min + 1 <= ell_max, got {self.eval.ell_min}, {self.eval.ell_max}")
            if 2 * self.eval.ell_max + 4 > self.L - 1:
                raise ConfigError(f"eval ell_max={self.eval.ell_max} does not fit L={self.L}; raise L")
            if self.eval.n_test < 1:
                raise ConfigError("eval.n_test must be positive")
        if sweep_block:
            if 2 * max(self.sweep.ell_max) + 4 > self.L - 1:
                raise ConfigError(f"sweep ell_max={max(self.sweep.ell_max)} does not fit L={self.L}; raise L")
            for n in self.sweep.N_trg:
                if not 1 <= n < self.N - 1:
                    raise ConfigError(f"sweep N_trg={n} needs 1 <= N_trg < N - 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}; valid keys: {sorted(known)}")
        try:
            train = TrainConfig(**d.pop("train", {}))
            ev = EvalConfig(**d.pop("eval", {}))
            sw = SweepConfig(**d.pop("sweep", {}))
        except TypeError as e:
            raise ConfigError(str(e)) from None
        return cls(train=train, eval=ev, sweep=sw, **d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        train_kw = {k: kw.pop(k) for k in list(kw) if k in {f.name for f in fields(TrainConfig)}}
        out = replace(self, **kw)
        if train_kw:
            out = replace(out, train=replace(out.train, **train_kw))
        return out
