"""Max-sum ratio, the diversity-constrained pretraining LP and its verification.

The LP over length distributions ``q`` on ``1..U``::

    minimise    sum_ell q_ell ell^2
    subject to  N_trg * q_k / k <= sum_ell q_ell / ell     (k = 1..U)
                sum_ell q_ell = 1,  q >= 0

The first family is the max-sum-ratio bound ``R(q) <= 1/N_trg`` written
linearly. Its solution puts mass proportional to ``ell`` on ``1..N_trg``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .datagen import LengthDistribution, seq_length

KKT_TOL = 1e-9
MAX_GRID_POINTS = 20_000_000


class InvalidInstanceError(ValueError):
    pass


class GridTooLargeError(RuntimeError):
    pass


@dataclass(frozen=True)
class LpInstance:
    U: int
    N_trg: int

    def __post_init__(self):
        if self.N_trg < 1:
            raise InvalidInstanceError(f"N_trg must be >= 1, got {self.N_trg}")
        if self.U < self.N_trg:
            raise InvalidInstanceError(f"U = {self.U} < N_trg = {self.N_trg}: no feasible distribution")

    @property
    def weights(self) -> np.ndarray:
        return np.arange(1, self.U + 1, dtype=float) ** 2

    def objective(self, q: LengthDistribution) -> Fraction | float:
        terms = [m * s * s for s, m in zip(q.support, q.masses)]
        return sum(terms, Fraction(0)) if q.is_exact else float(sum(terms))

    def is_feasible(self, q: LengthDistribution, tol: float = KKT_TOL) -> bool:
        v = q.vector(self.U)
        inv = v / np.arange(1, self.U + 1)
        return bool(self.N_trg * inv.max() <= inv.sum() + tol and abs(v.sum() - 1) <= tol and (v >= -tol).all())


# ---------------------------------------------------------------------------
# max-sum ratio


def _weight(ell: int, weighting: str) -> int:
    if weighting == "ell":
        return ell
    if weighting == "T":
        return seq_length(ell)
    raise ValueError(f"weighting must be 'ell' or 'T', got {weighting!r}")


def max_sum_ratio_exact(dist: LengthDistribution, weighting: str = "ell") -> Fraction:
    if not dist.is_exact:
        raise TypeError("exact ratio needs rational masses")
    terms = [Fraction(m) / _weight(s, weighting) for s, m in zip(dist.support, dist.masses)]
    return max(terms) / sum(terms)


def max_sum_ratio(dist: LengthDistribution, weighting: str = "ell") -> float:
    """``max q/ell / sum q/ell``; ``weighting='T'`` uses ``T(ell) = 2 ell + 3`` instead."""
    if dist.is_exact:
        return float(max_sum_ratio_exact(dist, weighting))
    terms = [float(m) / _weight(s, weighting) for s, m in zip(dist.support, dist.masses)]
    return max(terms) / sum(terms)


def uniform_window_ratio_exact(ell0: int, K: int) -> Fraction:
    if ell0 < 1 or K < 1:
        raise ValueError(f"need ell0 >= 1 and K >= 1, got ({ell0}, {K})")
    return max_sum_ratio_exact(LengthDistribution.uniform(ell0, ell0 + K - 1))


def uniform_window_ratio(ell0: int, K: int) -> float:
    """Max-sum ratio of the uniform window ``{ell0, ..., ell0 + K - 1}``."""
    return float(uniform_window_ratio_exact(ell0, K))


# ---------------------------------------------------------------------------
# closed-form optimum


def optimal_distribution(N_trg: int, U: int | None = None) -> LengthDistribution:
    """``q_ell = ell / Z`` on ``1..N_trg`` (``Z = N_trg (N_trg + 1) / 2``), zero up to ``U``."""
    U = N_trg if U is None else U
    LpInstance(U, N_trg)
    Z = N_trg * (N_trg + 1) // 2
    return LengthDistribution(
        tuple(range(1, U + 1)),
        tuple(Fraction(ell, Z) if ell <= N_trg else Fraction(0) for ell in range(1, U + 1)),
    )


def optimal_objective(N_trg: int) -> Fraction:
    # sum ell^3 / Z = Z
    return Fraction(N_trg * (N_trg + 1), 2)


# ---------------------------------------------------------------------------
# brute force


@dataclass
class BruteForceResult:
    best_q: LengthDistribution | None
    best_objective: Fraction | None
    n_points: int
    n_feasible: int

    def to_dict(self) -> dict:
        return {
            "best_q": None if self.best_q is None else [str(m) for m in self.best_q.masses],
            "best_objective": None if self.best_objective is None else str(self.best_objective),
            "n_points": self.n_points,
            "n_feasible": self.n_feasible,
        }


@lru_cache(maxsize=None)
def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of length ``parts`` summing to ``total``.

    Rows are in reverse-lexicographic order (largest first coordinate first).
    The cached arrays are shared, so they are marked read-only.
    """
    if parts == 1:
        out = np.array([[total]], dtype=np.int64)
    else:
        blocks = []
        for first in range(total, -1, -1):
            rest = _compositions(total - first, parts - 1)
            blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
        out = np.concatenate(blocks)
    out.setflags(write=False)
    return out


def brute_force_lp(inst: LpInstance, resolution: int) -> BruteForceResult:
    """Exhaustive search over ``q = c / resolution`` with integer ``c``; exact arithmetic.

    The max-sum constraint is scaled by ``lcm(1..U)`` so feasibility is an
    integer comparison. Ties keep the first point in enumeration order.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    U = inst.U
    n_points = math.comb(resolution + U - 1, U - 1)
    if n_points > MAX_GRID_POINTS:
        raise GridTooLargeError(f"{n_points} grid points exceeds the limit of {MAX_GRID_POINTS}")
    C = _compositions(resolution, U)
    ell = np.arange(1, U + 1, dtype=np.int64)
    lcm = math.lcm(*range(1, U + 1))
    scaled = C * (lcm // ell)
    feasible = inst.N_trg * scaled.max(axis=1) <= scaled.sum(axis=1)
    n_feasible = int(feasible.sum())
    if not n_feasible:
        return BruteForceResult(None, None, n_points, 0)
    cost = C @ (ell * ell)
    cost = np.where(feasible, cost, np.iinfo(np.int64).max)
    i = int(np.argmin(cost))
    best = LengthDistribution(tuple(range(1, U + 1)), tuple(Fraction(int(c), resolution) for c in C[i]))
    return BruteForceResult(best, Fraction(int(cost[i]), resolution), n_points, n_feasible)


# ---------------------------------------------------------------------------
# KKT


@dataclass
class KKTResult:
    satisfied: bool
    lam: np.ndarray
    mu: np.ndarray
    nu: float
    conditions: dict[str, bool] = field(default_factory=dict)
    residual: float = 0.0

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "lambda": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "nu": self.nu,
            "conditions": dict(self.conditions),
            "stationarity_residual": self.residual,
        }


def closed_form_multipliers(N_trg: int, U: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Multipliers certifying ``optimal_distribution``; note ``nu = -Z``."""
    n = N_trg
    Z = n * (n + 1) / 2
    lam_bar = n**3 / 2 - n**2 / 2 + 1
    ell = np.arange(1, U + 1, dtype=float)
    lam = np.where(ell <= n, lam_bar - ell**3 + Z * ell, 0.0)
    mu = np.where(ell > n, ell**2 - Z - lam_bar / ell, 0.0)
    return lam, mu, -Z


def check_kkt(inst: LpInstance, q: LengthDistribution, tol: float = KKT_TOL) -> KKTResult:
    """Build multipliers from the active sets of ``q`` and test all six KKT conditions.

    Stationarity, per ``ell``::

        ell^2 + (lam_ell - sum(lam) / N_trg) / ell - mu_ell + nu = 0

    ``lam`` is zero off the tight max-sum constraints and ``mu`` zero on the
    support. The remaining system is solved in the least-squares sense; when it
    has the uniform-shift null direction, ``lam`` is shifted so its smallest
    active entry is 1.
    """
    U, n = inst.U, inst.N_trg
    v = q.vector(U)
    ell = np.arange(1, U + 1, dtype=float)
    inv = v / ell
    S = inv.sum()
    slack = S / n - inv  # >= 0 when feasible
    tight = np.abs(slack) <= tol
    positive = v > tol
    A = np.flatnonzero(tight)
    Z = np.flatnonzero(~positive)

    # unknowns: lam_A, nu, mu_Z
    k = len(A) + 1 + len(Z)
    M = np.zeros((U, k))
    M[A, np.arange(len(A))] += 1.0 / ell[A]
    M[:, : len(A)] -= (1.0 / n) / ell[:, None]
    M[:, len(A)] = 1.0
    M[Z, len(A) + 1 + np.arange(len(Z))] = -1.0
    rhs = -(ell**2)
    x, *_ = np.linalg.lstsq(M, rhs, rcond=None)

    if len(A):
        d = np.zeros(k)
        d[: len(A)] = 1.0
        d[len(A) + 1:] = -(len(A) / n) / ell[Z]
        if np.abs(M @ d).max() <= 1e-12:
            x = x + (1.0 - x[: len(A)].min()) * d

    lam = np.zeros(U)
    lam[A] = x[: len(A)]
    nu = float(x[len(A)])
    mu = np.zeros(U)
    mu[Z] = x[len(A) + 1:]
    resid = ell**2 + (lam - lam.sum() / n) / ell - mu + nu
    scale = max(1.0, float(np.abs(ell**2).max()))
    conditions = {
        "stationarity": bool(np.abs(resid).max() <= tol * scale),
        "comp_lambda": bool(np.abs(lam * slack).max() <= tol * scale),
        "comp_mu": bool(np.abs(mu * v).max() <= tol * scale),
        "primal_maxsum": bool((slack >= -tol).all()),
        "primal_simplex": bool(abs(v.sum() - 1.0) <= tol and (v >= -tol).all()),
        "dual_sign": bool((lam >= -1e-12).all() and (mu >= -1e-12).all()),
    }
    return KKTResult(all(conditions.values()), lam, mu, nu, conditions, float(np.abs(resid).max()))


def lp_report(N_trg: int, U: int, resolution: int | None = None) -> dict:
    inst = LpInstance(U, N_trg)
    q = optimal_distribution(N_trg, U)
    kkt = check_kkt(inst, q)
    out = {
        "N_trg": N_trg,
        "U": U,
        "optimal_q": [str(m) for m in q.masses],
        "objective": str(inst.objective(q)),
        "max_sum_ratio": str(max_sum_ratio_exact(q)),
        "kkt": kkt.to_dict(),
    }
    if resolution is not None:
        bf = brute_force_lp(inst, resolution)
        out["brute_force"] = bf.to_dict()
        out["brute_force_below_closed_form"] = (
            bf.best_objective is not None and float(bf.best_objective) < float(inst.objective(q)) - KKT_TOL
        )
    return out
