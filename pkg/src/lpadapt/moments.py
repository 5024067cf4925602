"""Gaussian absolute moments and bias-corrected power estimators.

For an observation ``a_hat = a + g / sqrt(n)`` with ``g ~ N(0, 1)`` the plain
power ``|a_hat|**p`` overestimates ``|a|**p``. The estimators here remove the
noise contribution: for even ``u`` the correction is exact (unbiased), for
other ``p`` only the leading terms are removed.

The even-integer floor used throughout is nonstandard: ``even_floor(p)`` is
``p`` when ``p`` is an even integer and otherwise the largest even integer
strictly below ``p`` (so ``even_floor(3) == 2``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate

from .sequence_model import BesovBall, CoeffField, ball_distance, level_slice, norm_exponent


def gaussian_abs_moment(u: float) -> float:
    """``E|G|**u`` for a standard normal ``G``.

    Parameters
    ----------
    u : float
        Non-negative exponent.

    Returns
    -------
    float
        ``2**(u/2) * Gamma((u+1)/2) / sqrt(pi)``.
    """
    if u < 0 or not math.isfinite(u):
        raise ValueError(f"moment order must be a finite non-negative number, got {u}")
    if is_even_integer(u):
        # (u-1)!! exactly, avoiding rounding in the Gamma route
        return float(math.prod(range(1, int(u), 2)))
    return math.exp(0.5 * u * math.log(2.0) + math.lgamma(0.5 * (u + 1)) - 0.5 * math.log(math.pi))


def gaussian_abs_moment_quad(u: float) -> float:
    """Quadrature evaluation of ``E|G|**u`` (used as a cross-check)."""
    val, _ = integrate.quad(
        lambda x: x**u * math.exp(-0.5 * x * x), 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200
    )
    return 2.0 * val / math.sqrt(2.0 * math.pi)


def real_binomial(p: float, u: int) -> float:
    """Generalized binomial coefficient ``p (p-1) ... (p-u+1) / u!``."""
    if u < 0 or int(u) != u:
        raise ValueError(f"lower index must be a non-negative integer, got {u}")
    out = 1.0
    for i in range(int(u)):
        out *= (p - i) / (i + 1)
    return out


def is_even_integer(p: float) -> bool:
    return float(p).is_integer() and int(p) % 2 == 0


def even_floor(p: float) -> int:
    """``p`` for even integers, else the largest even integer strictly below ``p``."""
    if is_even_integer(p):
        return int(p)
    k = math.floor(p)
    if k == p:  # odd integer
        k -= 1
    return k - 1 if k % 2 else k


@dataclass(frozen=True)
class MomentTable:
    """Cached moments ``m_u**u`` and real binomials needed for one exponent ``p``."""

    p: float
    moments: dict = field(default_factory=dict)
    binomials: dict = field(default_factory=dict)

    @classmethod
    def build(cls, p: float, check: bool = True) -> "MomentTable":
        fp = even_floor(p)
        orders = set(range(0, fp + 1, 2)) | {p, p - fp} | {p - u for u in range(0, fp + 1, 2)}
        moments = {u: gaussian_abs_moment(u) for u in sorted(orders)}
        if check:
            for u, v in moments.items():
                q = gaussian_abs_moment_quad(u) if u > 0 else 1.0
                if abs(q - v) > 1e-10 * max(1.0, v):
                    raise ArithmeticError(f"moment m_{u} closed form {v} disagrees with quadrature {q}")
        binomials = {u: real_binomial(p, u) for u in range(0, fp + 1)}
        return cls(p=p, moments=moments, binomials=binomials)


@lru_cache(maxsize=64)
def moment_table(p: float) -> MomentTable:
    return MomentTable.build(p)


@lru_cache(maxsize=64)
def _even_coefficients(u: int, n: float) -> tuple:
    """Power-series coefficients of ``F_u`` in ``a_hat`` (ascending degree).

    Unrolling the recursion once per ``(u, n)`` keeps batch evaluation to a
    single polynomial evaluation.
    """
    polys = {0: np.array([1.0])}
    for v in range(2, u + 1, 2):
        coef = np.zeros(v + 1)
        coef[v] = 1.0
        for i in range(0, v - 1, 2):
            c = math.comb(v, i) * gaussian_abs_moment(v - i) / n ** ((v - i) / 2)
            coef[: i + 1] -= c * polys[i]
        polys[v] = coef
    return tuple(polys[u])


def _check_n(n: float) -> None:
    if not n > 0:
        raise ValueError(f"sample size must be positive, got {n}")


def fhat_even(u: int, a_hat, n: float):
    """Unbiased estimator of ``a**u`` from ``a_hat ~ N(a, 1/n)``, even ``u``.

    Defined by ``F_0 = 1`` and
    ``F_u = a_hat**u - sum_{i even, i <= u-2} C(u, i) m_{u-i}**(u-i) n**(-(u-i)/2) F_i``.
    Accepts scalars or arrays.
    """
    if int(u) != u or u < 0 or int(u) % 2:
        raise ValueError(f"u must be a non-negative even integer, got {u}")
    _check_n(n)
    coef = _even_coefficients(int(u), float(n))
    out = np.polynomial.polynomial.polyval(np.asarray(a_hat, dtype=np.float64), coef)
    return float(out) if np.ndim(out) == 0 else out


def fhat_p(p: float, a_hat, n: float):
    """Bias-corrected estimator of ``|a|**p`` for real ``p >= 2``.

    Even ``p`` delegates to :func:`fhat_even`. Otherwise
    ``|a_hat|**p - sum_{u even <= floor_e(p)-2} Cp^u m_{p-u}**(p-u) n**(-(p-u)/2) F_u``,
    where ``floor_e`` is :func:`even_floor`.
    """
    if not p >= 2 or not math.isfinite(p):
        raise ValueError(f"p must be finite and >= 2, got {p}")
    _check_n(n)
    if is_even_integer(p):
        return fhat_even(int(p), a_hat, n)
    x = np.asarray(a_hat, dtype=np.float64)
    out = np.abs(x) ** p
    fp = even_floor(p)
    for u in range(0, fp - 1, 2):
        c = real_binomial(p, u) * gaussian_abs_moment(p - u) / n ** ((p - u) / 2)
        out = out - c * fhat_even(u, x, n)
    return float(out) if np.ndim(out) == 0 else out


def fhat_split_product(p: float, a_hats: Sequence[float]) -> float:
    """Estimator of ``|a|**p`` from independent copies of ``a_hat``.

    With ``k = even_floor(p)`` the first ``k`` copies enter as a plain product
    (unbiased for ``a**k``) and, for non-even ``p``, one further copy enters
    as ``|a_hat|**(p - k)``.
    """
    k = even_floor(p)
    need = k + (0 if is_even_integer(p) else 1)
    vals = np.asarray(a_hats, dtype=np.float64)
    if vals.shape[-1] != need:
        raise ValueError(f"p={p} needs {need} independent estimates, got {vals.shape[-1]}")
    out = np.prod(vals[..., :k], axis=-1)
    if need > k:
        out = out * np.abs(vals[..., k]) ** (p - k)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class LevelStatistic:
    """Level statistic ``T_n(l)`` and its per-coefficient terms."""

    l: int
    value: float
    contributions: np.ndarray


def level_weight(l: int, p: float) -> float:
    return 2.0 ** (l * p * (0.5 - 1.0 / p))


def level_statistic(obs: CoeffField, l: int, p: float, n: float) -> LevelStatistic:
    """``T_n(l) = 2**(l p (1/2 - 1/p)) sum_k F_p(a_hat_{l,k})``."""
    contrib = level_weight(l, p) * np.asarray(fhat_p(p, obs.level(l), n)).reshape(-1)
    return LevelStatistic(l=l, value=float(contrib.sum()), contributions=contrib)


def level_statistics_array(arr: np.ndarray, levels: Sequence[int], p: float, n: float) -> np.ndarray:
    """``T_n(l)`` for each of ``levels`` over a stack of flat fields; shape ``(..., len(levels))``."""
    arr = np.asarray(arr, dtype=np.float64)
    out = np.empty(arr.shape[:-1] + (len(levels),))
    for i, l in enumerate(levels):
        out[..., i] = level_weight(l, p) * np.sum(fhat_p(p, arr[..., level_slice(l)], n), axis=-1)
    return out


def infimum_statistic(obs: CoeffField, ball: BesovBall, j_s: int, norm_mode: str = "0pp") -> float:
    """Distance of the levels ``<= j_s`` of ``obs`` to ``ball`` in the configured sequence norm."""
    return ball_distance(obs, ball, j_s, norm_exponent(ball.p, norm_mode))
