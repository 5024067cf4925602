"""Projection estimators with a Lepski choice of the resolution level."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .sequence_model import (
    BesovBall,
    CoeffField,
    ball_distance,
    field_size,
    norm_exponent,
    seq_norm_array,
    simulate_batch,
    weighted_level_norms,
)


@dataclass(frozen=True)
class LepskiConfig:
    """Selector settings.

    Attributes
    ----------
    p : float
        Integrability of the loss.
    n : float
        Sample size.
    j_max : int, optional
        Finest candidate level; ``ceil(log2 n)`` when omitted.
    D_prime : float
        Constant in the band ``4 (D' + 1) 2**(l/2) / sqrt(n)``.
    norm_mode : str
        ``"0pp"`` or ``"0p2"``.
    """

    p: float
    n: float
    j_max: int | None = None
    D_prime: float = 1.0
    norm_mode: str = "0pp"

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 2 <= self.p < math.inf:
            raise ValueError(f"need 2 <= p < inf, got {self.p}")
        if not self.D_prime > 0:
            raise ValueError(f"D' must be positive, got {self.D_prime}")
        if self.level_max < 1:
            raise ValueError(f"j_max must be >= 1, got {self.level_max}")
        norm_exponent(self.p, self.norm_mode)

    @property
    def level_max(self) -> int:
        if self.j_max is not None:
            return int(self.j_max)
        return max(1, math.ceil(math.log2(self.n) - 1e-9))

    @property
    def h(self) -> float:
        return norm_exponent(self.p, self.norm_mode)

    def band(self, l) -> np.ndarray:
        return 4 * (self.D_prime + 1) * 2.0 ** (np.asarray(l) / 2) / math.sqrt(self.n)


def lepski_select_array(arr: np.ndarray, cfg: LepskiConfig) -> np.ndarray:
    """Selected level for each row of a stack of flat fields.

    Level ``j`` qualifies when for every ``j < l <= j_max``
    ``||P_j f - P_l f|| = (sum_{m=j+1}^{l} w_m**h)**(1/h) <= band(l)``,
    where ``w_m = 2**(m (1/2 - 1/p)) |a_hat_m|_p``. The smallest qualifying
    level is returned; ``j_max`` always qualifies.
    """
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    J = cfg.level_max
    if arr.shape[-1] < field_size(J):
        raise ValueError(f"observation must reach level j_max={J}")
    w = weighted_level_norms(arr[:, : field_size(J)], 0.0, cfg.p, J)
    h = cfg.h
    band = cfg.band(np.arange(J + 1))
    out = np.full(arr.shape[0], J, dtype=np.int64)
    # walk down from j_max: once a level fails, every coarser level fails too
    alive = np.ones(arr.shape[0], dtype=bool)
    for j in range(J - 1, -1, -1):
        tail = w[:, j + 1 :]
        scale = np.maximum(tail.max(axis=1), 1e-300)
        if math.isinf(h):
            dist = np.maximum.accumulate(tail, axis=1)
        else:
            dist = scale[:, None] * np.cumsum((tail / scale[:, None]) ** h, axis=1) ** (1 / h)
        ok = np.all(dist <= band[j + 1 :], axis=1)
        alive &= ok
        out[alive] = j
        if not alive.any():
            break
    return out


def lepski_select(obs: CoeffField, cfg: LepskiConfig) -> int:
    """Lepski resolution level for one observation."""
    if obs.L < cfg.level_max:
        raise ValueError(f"observation reaches level {obs.L}, selector needs j_max={cfg.level_max}")
    return int(lepski_select_array(obs.data, cfg)[0])


def qualifying_levels(obs: CoeffField, cfg: LepskiConfig) -> list[bool]:
    """Whether each level ``0..j_max`` satisfies the selector's condition (diagnostic)."""
    J = cfg.level_max
    w = weighted_level_norms(obs.data[: field_size(J)], 0.0, cfg.p, J)
    h = cfg.h
    res = []
    for j in range(J + 1):
        ok = True
        for l in range(j + 1, J + 1):
            d = np.max(w[j + 1 : l + 1]) if math.isinf(h) else np.sum(w[j + 1 : l + 1] ** h) ** (1 / h)
            ok &= bool(d <= cfg.band(l))
        res.append(ok)
    return res


def adaptive_estimate(obs: CoeffField, cfg: LepskiConfig) -> CoeffField:
    """Observation truncated at the Lepski level."""
    j = lepski_select(obs, cfg)
    data = np.zeros_like(obs.data)
    data[: field_size(j)] = obs.data[: field_size(j)]
    return CoeffField(data)


def estimation_loss_array(arr: np.ndarray, truth: CoeffField, cfg: LepskiConfig) -> tuple[np.ndarray, np.ndarray]:
    """Selected levels and losses ``||f_tilde - f||`` (configured sequence norm) for a stack.

    The truth is zero-padded to the observation depth; the loss covers every
    level of either field.
    """
    arr = np.atleast_2d(arr)
    jhat = lepski_select_array(arr, cfg)
    L = max(truth.L, cfg.level_max)
    f = truth.padded(L).data
    est = np.zeros((arr.shape[0], f.size))
    width = min(arr.shape[1], f.size)
    est[:, :width] = arr[:, :width]
    idx = np.arange(f.size)
    est[idx[None, :] >= (2 ** (jhat[:, None] + 1) - 1)] = 0.0
    return jhat, seq_norm_array(est - f, cfg.p, cfg.h)


def oracle_jstar(truth: CoeffField, n: float, *, r: float, B: float, eps: float | None = None,
                 D_p: float = 1.0, C_p: float = 1.0, p: float = 2.0, max_level: int = 200) -> int:
    """Smallest ``j`` with ``D_p 2**(j/2) / sqrt(n) >= 2 eps + C_p B 2**(-j r)``.

    The stochastic term grows and the approximation term decays in ``j``, so
    this is the level where estimation error starts to dominate bias.
    ``eps`` defaults to the distance of ``truth`` from ``Sigma(r, B)`` (its
    full ``||.||_{0,p,p}`` norm when ``B = 0``).
    """
    if B < 0 or n <= 0 or r <= 0:
        raise ValueError("need B >= 0, n > 0, r > 0")
    if eps is None:
        eps = _default_eps(truth, r, B, p)
    for j in range(max_level + 1):
        if D_p * 2.0 ** (j / 2) / math.sqrt(n) >= 2 * eps + C_p * B * 2.0 ** (-j * r):
            return j
    raise ArithmeticError("no crossing below max_level")


def _default_eps(truth: CoeffField, r: float, B: float, p: float) -> float:
    if B == 0:
        return float(seq_norm_array(truth.data, p, p))
    return ball_distance(truth, BesovBall(r, p, B))


def fit_risk_constant(
    truths: Sequence[CoeffField],
    n_values: Sequence[float],
    r: float | Sequence[float],
    cfg_factory: Callable[[float], LepskiConfig],
    replications: int = 200,
    seed: int = 0,
) -> float:
    """Largest ``mean loss * n**(r/(2r+1))`` over truths and sample sizes.

    ``r`` may be one value or one per truth. Seeds ``(seed, i_truth, i_n, rep)``.
    """
    rs = [r] * len(truths) if np.isscalar(r) else list(r)
    best = 0.0
    for it, (truth, rr) in enumerate(zip(truths, rs)):
        for k, n in enumerate(n_values):
            cfg = cfg_factory(n)
            L = max(cfg.level_max, truth.L)
            seeds = [(seed, it, k, i) for i in range(replications)]
            arr = simulate_batch(truth.padded(L), n, seeds)
            _, loss = estimation_loss_array(arr, truth, cfg)
            best = max(best, float(loss.mean()) * n ** (rr / (2 * rr + 1)))
    return best
