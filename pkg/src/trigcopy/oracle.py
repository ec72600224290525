"""Population-limit (infinite data) one-step weights and OOD certification.

Conventions: ``eta_tilde_V = eta_V / N`` is the rescaled value step, and the
key-query closed forms are reported per ``eta_tilde = eta_tilde_V * eta_KQ *
E[1/T]``. Sequence lengths convert through ``T(ell) = 2 ell + 3`` only.

``population_wv`` is exact. ``population_wkq`` keeps the dominant terms and
drops an additive matrix whose entries are ``eta_tilde * O(N_trg / N)``; the
size of that bound is returned alongside. ``population_wkq_linear`` is the
exact expectation of the stage-two gradient with the stage-one prediction
frozen at uniform, which is what finite-sample runs converge to as the value
step goes to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .datagen import LengthDistribution, SamplerConfig, TokenSequence, adversarial_sequence, seq_length


@dataclass(frozen=True)
class PopulationStats:
    expected_inv_T: float
    expected_inv_T2: float
    alpha: np.ndarray  # alpha[t-1] = E[1{t <= T} / T], t = 1..L
    per_ell_terms: dict[int, float]  # ell -> q_ell / T(ell)

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[t - 1]) if 1 <= t <= len(self.alpha) else 0.0


def _exact(dist: LengthDistribution):
    if dist.is_exact:
        return list(zip(dist.support, dist.masses))
    return [(s, Fraction(float(m))) for s, m in zip(dist.support, dist.masses)]


def population_stats(dist: LengthDistribution, L: int | None = None) -> PopulationStats:
    pairs = _exact(dist)
    L = max(seq_length(s) for s, _ in pairs) if L is None else L
    e1 = sum(m / seq_length(s) for s, m in pairs)
    e2 = sum(m / seq_length(s) ** 2 for s, m in pairs)
    alpha = np.array([float(sum(m / seq_length(s) for s, m in pairs if t <= seq_length(s))) for t in range(1, L + 1)])
    per_ell = {s: float(m / seq_length(s)) for s, m in pairs}
    return PopulationStats(float(e1), float(e2), alpha, per_ell)


def population_wv(dist: LengthDistribution, cfg: SamplerConfig, eta_tilde_V: float) -> np.ndarray:
    """Value matrix after one population step of size ``N * eta_tilde_V`` from zero."""
    N, n, L = cfg.N, cfg.N_trg, cfg.L
    m = N - n
    st = population_stats(dist, L)
    E = st.expected_inv_T
    W = np.zeros((N, cfg.D))
    trig = slice(0, n)
    other = slice(n, N)

    # position block
    W[trig, :L] = -st.alpha[None, :]
    W[other, :L] = st.alpha[None, :] * n / m

    diag_other = (n + E * (N * (N - 1) - n * (N + 2))) / m**2
    off_other = (n - E * (N + 2 * n)) / m**2
    for block, trig_scale in ((slice(L, L + N), 2.0), (slice(L + N, L + 2 * N), 1.0)):
        B = np.zeros((N, N))
        B[trig, trig] = -trig_scale * E / n
        B[trig, other] = -(1 - 2 * E) / m
        B[other, trig] = trig_scale * E / m
        B[other, other] = off_other
        idx = np.arange(n, N)
        B[idx, idx] = diag_other
        W[:, block] = B
    return eta_tilde_V * W


@dataclass
class KQOracle:
    matrix: np.ndarray
    error_bound: float  # entrywise size of the dropped terms, eta_tilde * N_trg / N
    eta_tilde: float


def population_wkq(dist: LengthDistribution, cfg: SamplerConfig, eta_tilde: float,
                   trigger: int | None = None, *, corrected: bool = False) -> KQOracle:
    """Dominant terms of the one-step key-query matrix.

    Positional part: ``sum_ell q_ell [T^-1 (p_{ell+2} + p_{ell+3}) - 2 T^-2 1_{1:T}
    minus those two rows]`` against column ``p_T``; induction part:
    ``E[1/T] / N_trg`` at (previous-token ``w``, token ``w``). ``trigger``
    restricts the trigger average to that single summand.

    ``corrected=True`` subtracts the ``2 T^-2`` that the centring term
    ``-cbar xbar`` also removes from the two shortcut rows and the induction
    entry; only then is the remainder ``O(N_trg / N)`` rather than ``O(1/T)``.
    """
    N, n, L = cfg.N, cfg.N_trg, cfg.L
    W = np.zeros((cfg.D, cfg.D))
    triggers = range(1, n + 1) if trigger is None else (trigger,)
    for ell, q in zip(dist.support, dist.probs):
        if q == 0:
            continue
        T = seq_length(ell)
        if T > L:
            raise ValueError(f"T({ell}) = {T} exceeds L = {L}")
        rows = np.zeros(cfg.D)
        rows[:T] = -2.0 / T**2
        rows[ell + 1] = rows[ell + 2] = 0.0
        lead = 1.0 / T - (2.0 / T**2 if corrected else 0.0)
        rows[ell + 1] += lead
        rows[ell + 2] += lead
        for w in triggers:
            col = rows.copy()
            col[L + w - 1] = -4.0 / T**2
            col[L + N + w - 1] = lead
            W[:, T - 1] += q * col / n
            W[:, L + w - 1] += q * col / n
    return KQOracle(eta_tilde * W, abs(eta_tilde) * n / N, eta_tilde)


def eta_tilde_from(dist: LengthDistribution, cfg: SamplerConfig, eta_V: float, eta_KQ: float) -> float:
    return eta_V / cfg.N * eta_KQ * population_stats(dist, cfg.L).expected_inv_T


# ---------------------------------------------------------------------------
# exact expectation of the linearised stage-two gradient


def _conditional_Mv(v: np.ndarray, Pi: np.ndarray, L: int, N: int) -> np.ndarray:
    """``E[(1/T) sum_t c_t (x_t - xbar)]`` with ``c_t = v . x_t``.

    ``Pi`` is ``(B, T, N)``: for each of ``B`` conditioning events, the
    (independent) token distribution at positions ``1..T``. Returns ``(B, D)``.
    """
    B, T, _ = Pi.shape
    vp, vt, vq = v[:L], v[L:L + N], v[L + N:]
    prev = np.concatenate([np.zeros((B, 1, N)), Pi[:, :-1]], axis=1)  # dist of z_{t-1}
    c = vp[None, :T] + Pi @ vt + prev @ vq  # (B, T)

    def cov_sum(P, h):
        # sum_s [h * pi_s - (h . pi_s) pi_s]
        return (P * h).sum(axis=1) - np.einsum("bs,bsn->bn", P @ h, P)

    out = np.zeros((B, L + 2 * N))
    out[:, :T] = c
    out[:, L:L + N] = np.einsum("bt,btn->bn", c, Pi) + cov_sum(Pi, vt)
    out[:, L + N:] = np.einsum("bt,btn->bn", c, prev) + cov_sum(Pi[:, :-1], vq)
    A = out / T

    mu = np.zeros((B, L + 2 * N))
    mu[:, :T] = 1.0
    mu[:, L:L + N] = Pi.sum(axis=1)
    mu[:, L + N:] = Pi[:, :-1].sum(axis=1)
    mu /= T
    Bterm = (mu @ v)[:, None] * mu
    # x-bar covariance: z_s enters as token at t = s and as previous token at t = s + 1
    cov = np.zeros_like(mu)
    last = Pi[:, -1]
    inner = Pi[:, :-1]
    h = vt + vq
    cov_tok_inner = (inner * h).sum(axis=1) - np.einsum("bs,bsn->bn", inner @ h, inner)
    cov_tok_last = last * vt - (last @ vt)[:, None] * last
    cov[:, L:L + N] = cov_tok_inner + cov_tok_last
    cov[:, L + N:] = cov_tok_inner
    Bterm += cov / T**2
    return A - Bterm


def expected_wkq_gradient(dist: LengthDistribution, cfg: SamplerConfig, W_V: np.ndarray) -> np.ndarray:
    """Exact ``E[grad_KQ]`` at ``W_KQ = 0`` with the prediction held at uniform."""
    N, n, L = cfg.N, cfg.N_trg, cfg.L
    m = N - n
    D = cfg.D
    G = np.zeros((D, D))
    uni = np.zeros(N)
    uni[n:] = 1.0 / m
    for ell, q in zip(dist.support, dist.probs):
        if q == 0:
            continue
        T = seq_length(ell)
        base = np.tile(uni, (T, 1))
        for w in range(1, n + 1):
            base[ell] = 0.0
            base[ell, w - 1] = 1.0  # position ell + 1
            base[T - 1] = 0.0
            base[T - 1, w - 1] = 1.0
            for o in range(n + 1, N + 1):
                g = np.full(N, 1.0 / N)
                g[o - 1] -= 1.0
                v = W_V.T @ g
                Pi = np.repeat(base[None], m, axis=0)
                Pi[:, ell + 1] = 0.0
                Pi[:, ell + 1, o - 1] = 1.0  # output at ell + 2
                Pi[:, T - 2] = 0.0
                Pi[np.arange(m), T - 2, np.arange(n, N)] = 1.0  # z_{T-1} = j
                a = _conditional_Mv(v, Pi, L, N)  # (m, D), one row per j
                wgt = q / (n * m * m)
                s = a.sum(axis=0) * wgt
                G[:, T - 1] += s
                G[:, L + w - 1] += s
                G[:, L + N + n:] += a.T * wgt
    return G


def population_wkq_linear(dist: LengthDistribution, cfg: SamplerConfig, eta_V: float, eta_KQ: float) -> np.ndarray:
    W_V = population_wv(dist, cfg, eta_V / cfg.N)
    return -eta_KQ * expected_wkq_gradient(dist, cfg, W_V)


# ---------------------------------------------------------------------------
# attention logits and certification


@dataclass(frozen=True)
class ScoreTerms:
    """Distribution-dependent pieces of the attention score, built once per ``dist``."""

    n: int
    q: np.ndarray  # q[ell] for ell = 0..L, zero off the support
    e1: float  # E[1/T]
    e2: float  # E[1/T^2]
    e2_upto: np.ndarray  # e2_upto[t] = E[1{t <= T} / T^2] for t = 0..L
    corrected: bool

    @classmethod
    def build(cls, dist: LengthDistribution, cfg: SamplerConfig, corrected: bool = False) -> "ScoreTerms":
        L = cfg.L
        st = population_stats(dist, L)
        q = np.zeros(L + 1)
        for ell, m in zip(dist.support, dist.probs):
            if ell <= L:
                q[ell] = m
        T = 2.0 * np.arange(L + 1) + 3
        t = np.arange(L + 1)
        e2_upto = ((q / T**2)[None, :] * (t[:, None] <= T[None, :])).sum(axis=1)
        return cls(cfg.N_trg, q, st.expected_inv_T, st.expected_inv_T2, e2_upto, corrected)

    def lead(self, T):
        """Shortcut-row coefficient: ``1/T + 2/T^2``, or ``1/T`` when corrected."""
        return 1.0 / T + (0.0 if self.corrected else 2.0) / T**2

    def induction(self, T):
        return 1.0 / T - (2.0 / T**2 if self.corrected else 0.0)

    def _shifted(self, k: np.ndarray) -> np.ndarray:
        ok = (k >= 1) & (k < len(self.q))
        kk = np.where(ok, k, 1)
        return np.where(ok, self.lead(2.0 * kk + 3) * self.q[kk], 0.0)

    def scores(self, test_seq: TokenSequence) -> np.ndarray:
        Ts = test_seq.T
        n = self.n
        z = np.asarray(test_seq.tokens[:Ts])
        zp = np.concatenate([[0], z[:-1]])
        w_star = z[-1]
        t = np.arange(1, Ts + 1)
        trig_t = (z >= 1) & (z <= n)
        trig_p = (zp >= 1) & (zp <= n)

        s = np.zeros(Ts)
        ell_s, odd = divmod(Ts - 3, 2)
        if not odd and ell_s < len(self.q) and self.q[ell_s]:
            q_s = self.q[ell_s]
            hit = (t == ell_s + 2).astype(float) + (t == ell_s + 3)
            s += q_s * (self.lead(Ts) * hit - 2 / Ts**2)
            s += q_s / n * (trig_p * self.induction(Ts) - 4 * trig_t / Ts**2)

        e_ind = self.e1 - (2 * self.e2 if self.corrected else 0.0)
        e2_upto = self.e2_upto[np.minimum(t, len(self.e2_upto) - 1)]
        s += (self._shifted(t - 2) + self._shifted(t - 3)
              + e_ind * (zp == w_star)
              - 2 * e2_upto
              - 4 * self.e2 * (z == w_star)) / n
        return s


class UndefinedPosition(IndexError):
    """Attention score requested outside ``1..T*``."""


def attention_logits_closed_form(test_seq: TokenSequence, dist: LengthDistribution, cfg: SamplerConfig,
                                 *, corrected: bool = False) -> np.ndarray:
    """Leading-order ``x_t^T W_KQ x_{T*}`` per unit ``eta_tilde`` for ``t = 1..T*``.

    Sum of the test-length terms (weight ``q*`` of the training length whose
    ``T`` equals the test ``T*``) and the expectation terms over training
    lengths; agrees with ``population_wkq`` under the same ``corrected`` flag.
    """
    return ScoreTerms.build(dist, cfg, corrected).scores(test_seq)


def attention_logit_closed_form(test_seq: TokenSequence, dist: LengthDistribution, cfg: SamplerConfig, t: int,
                                *, corrected: bool = False) -> float:
    if not 1 <= t <= test_seq.T:
        raise UndefinedPosition(f"position {t} outside 1..{test_seq.T}")
    return float(attention_logits_closed_form(test_seq, dist, cfg, corrected=corrected)[t - 1])


@dataclass
class Certificate:
    generalizes: bool
    witness: TokenSequence | None
    margin: float  # worst factor-two margin, in units of the induction strength
    gap: float  # worst plain dominance gap, same units
    worst_pair: tuple[int, int]
    n_pairs: int
    failing_pairs: list[tuple[int, int]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "generalizes": self.generalizes,
            "margin": self.margin,
            "gap": self.gap,
            "worst_pair": list(self.worst_pair),
            "n_pairs": self.n_pairs,
            "n_failing": len(self.failing_pairs),
            "witness": None if self.witness is None else self.witness.to_dict(),
        }


def admissible_pairs(cfg: SamplerConfig):
    for total in range(2, cfg.L - 4):
        for ell1 in range(1, total):
            yield ell1, total - ell1


def certify_ood(dist: LengthDistribution, cfg: SamplerConfig, *, corrected: bool = False) -> Certificate:
    """Scan every admissible ``(ell1, ell2)`` on the repeated-filler test pattern.

    A pair passes when the logit at the first output position ``ell1 + 2``
    beats every other position; ``generalizes`` requires every pair to pass.
    The factor-two margin ``s_target - 2 max_other`` is reported as the
    robustness figure, normalised by the induction strength ``E[1/T] / N_trg``.
    """
    terms = ScoreTerms.build(dist, cfg, corrected)
    unit = terms.e1 / cfg.N_trg
    corner_ref = max(zip(dist.support, dist.probs), key=lambda sm: sm[1] / sm[0])[0]
    corner = {corner_ref - 1, corner_ref, corner_ref + 1, corner_ref + 2}
    worst_gap, worst_margin, worst_pair = np.inf, np.inf, (0, 0)
    failing = []
    n_pairs = 0
    for ell1, ell2 in admissible_pairs(cfg):
        n_pairs += 1
        seq = adversarial_sequence(cfg, ell1, ell2)
        s = terms.scores(seq)
        tgt = ell1 + 1
        others = np.delete(s, tgt)
        gap = (s[tgt] - others.max()) / unit
        margin = (s[tgt] - 2 * max(others.max(), 0.0)) / unit
        if gap <= 0:
            failing.append((gap, ell1 in corner, ell1, ell2))
        if gap < worst_gap:
            worst_gap, worst_pair = gap, (ell1, ell2)
        worst_margin = min(worst_margin, margin)
    witness = None
    if failing:
        # most violated first, preferring pairs away from the shortcut's own window
        _, _, e1, e2 = min(failing, key=lambda f: (f[1], f[0], f[2]))
        witness = adversarial_sequence(cfg, e1, e2)
    return Certificate(
        generalizes=not failing,
        witness=witness,
        margin=float(worst_margin),
        gap=float(worst_gap),
        worst_pair=worst_pair,
        n_pairs=n_pairs,
        failing_pairs=[(f[2], f[3]) for f in failing],
    )
