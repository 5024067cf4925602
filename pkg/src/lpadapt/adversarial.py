"""Sparse priors that make a rough alternative nearly indistinguishable from zero.

At the fine level ``j`` (with ``2**j`` close to ``n**(1/(2t+1-1/p))``) each
coefficient is switched on independently with probability ``q = 2**(-j/2)``
and then equals ``upsilon * a`` with ``a = n**(-1/2)``. The likelihood ratio
of the mixture against the null ``f = 0`` has the closed form

``Z(x) = prod_k [(1 - q) + q exp(n upsilon a x_k - n (upsilon a)**2 / 2)]``

and ``E_0 (Z - 1)**2`` stays below ``4 upsilon**2``, which bounds the sum of
errors of any test of ``f = 0`` against the prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sequence_model import CoeffField, SeedLike, field_size, level_slice
from .testing import TestConfig, dyadic_resolution, test_decisions


@dataclass(frozen=True)
class AdversarialSpec:
    """Prior parameters; ``upsilon = 0`` is accepted as a degenerate diagnostic case."""

    upsilon: float
    t: float
    p: float
    n: float

    def __post_init__(self):
        if not 0 <= self.upsilon < 1:
            raise ValueError(f"upsilon must lie in [0, 1), got {self.upsilon}")
        if not self.n > 0:
            raise ValueError(f"n must be positive, got {self.n}")
        if not self.t > 0 or not 2 <= self.p < math.inf:
            raise ValueError("need t > 0 and 2 <= p < inf")

    @property
    def j(self) -> int:
        return dyadic_resolution(self.n, 2 * self.t + 1 - 1 / self.p)

    @property
    def a(self) -> float:
        return 1.0 / math.sqrt(self.n)

    @property
    def q(self) -> float:
        return 2.0 ** (-self.j / 2)

    @property
    def amplitude(self) -> float:
        return self.upsilon * self.a

    @property
    def dyadic_residual(self) -> float:
        """``log2(a) - log2(2**(-j (t + 1/2 - 1/(2p))))``: the cost of rounding ``j``."""
        return math.log2(self.a) + self.j * (self.t + 0.5 - 1 / (2 * self.p))

    def support_range(self) -> tuple[int, int]:
        half = 2.0 ** (self.j / 2)
        return math.ceil(half / 2), math.floor(1.5 * half)


def _embed(level_values: np.ndarray, j: int, L: int | None) -> CoeffField:
    L = j if L is None else L
    if L < j:
        raise ValueError(f"cutoff {L} below the prior level {j}")
    data = np.zeros(field_size(L))
    data[level_slice(j)] = level_values
    return CoeffField(data)


def sample_prior(spec: AdversarialSpec, seed: SeedLike = None, L: int | None = None) -> CoeffField:
    """One draw from the sparse Bernoulli prior, supported on level ``j``."""
    rng = np.random.default_rng(seed)
    on = rng.random(2**spec.j) < spec.q
    return _embed(spec.amplitude * on, spec.j, L)


def sample_deterministic_I(spec: AdversarialSpec, seed: SeedLike = None, S: int | None = None,
                           L: int | None = None) -> CoeffField:
    """Alternative with exactly ``S`` active coefficients of size ``upsilon * a``.

    ``S`` is uniform on ``[ceil(2**(j/2)/2), floor(1.5 * 2**(j/2))]`` unless
    given; the support is a uniform random subset of level ``j``.
    """
    lo, hi = spec.support_range()
    if lo > hi:
        raise ValueError(f"no admissible support size at j={spec.j}")
    rng = np.random.default_rng(seed)
    if S is None:
        S = int(rng.integers(lo, hi + 1))
    if not 0 <= S <= 2**spec.j:
        raise ValueError(f"support size {S} outside 0..{2**spec.j}")
    vals = np.zeros(2**spec.j)
    vals[rng.choice(2**spec.j, size=S, replace=False)] = spec.amplitude
    return _embed(vals, spec.j, L)


def log_likelihood_ratio(x: np.ndarray, spec: AdversarialSpec) -> np.ndarray:
    """``log Z`` over the last axis (length ``2**j``), computed in log space."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 2**spec.j:
        raise ValueError(f"expected {2**spec.j} level-{spec.j} coefficients, got {x.shape[-1]}")
    if spec.upsilon == 0:
        return np.zeros(x.shape[:-1])
    b = spec.amplitude
    expo = spec.n * b * x - spec.n * b * b / 2
    q = spec.q
    terms = np.logaddexp(math.log1p(-q), math.log(q) + expo) if q < 1 else expo
    return terms.sum(axis=-1)


def likelihood_ratio_Z(x, spec: AdversarialSpec):
    """Closed-form likelihood ratio of the prior mixture against ``f = 0``."""
    out = np.exp(log_likelihood_ratio(x, spec))
    return float(out) if np.ndim(out) == 0 else out


def exact_Z_second_moment(spec: AdversarialSpec) -> float:
    """``E_0 (Z - 1)**2 = (1 + (exp(n upsilon**2 a**2) - 1) q**2)**(2**j) - 1``."""
    u = spec.n * spec.amplitude**2
    return math.expm1(2**spec.j * math.log1p(math.expm1(u) * spec.q**2))


@dataclass(frozen=True)
class ZMomentResult:
    estimate: float
    stderr: float
    bound: float
    within: bool


def verify_Z_moment(spec: AdversarialSpec, replications: int = 10_000, seed: SeedLike = 0) -> ZMomentResult:
    """Monte Carlo estimate of ``E_0 (Z - 1)**2`` and comparison with ``4 upsilon**2``."""
    if replications < 10_000:
        raise ValueError(f"need at least 10^4 replications, got {replications}")
    bound = 4 * spec.upsilon**2
    if spec.upsilon == 0:
        return ZMomentResult(0.0, 0.0, 0.0, True)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((replications, 2**spec.j)) / math.sqrt(spec.n)
    vals = np.expm1(log_likelihood_ratio(x, spec)) ** 2
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(replications))
    return ZMomentResult(est, se, bound, est <= bound + 3 * se)


@dataclass(frozen=True)
class ErrorSum:
    type_one: float
    type_two: float
    total: float
    stderr: float


def lower_bound_errors(cfg: TestConfig, spec: AdversarialSpec, replications: int, seed: int = 0) -> ErrorSum:
    """Type-I error at ``f = 0`` plus type-II error over alternatives drawn from ``I``.

    Replication ``i`` of the alternative draws a fresh support with seed
    ``(seed, 1, i)`` and noise with ``(seed, 2, i)``; the null uses ``(seed, 0, i)``.
    """
    L = max(cfg.j, spec.j)
    size = field_size(L)
    null = np.empty((replications, size))
    alt = np.empty((replications, size))
    scale = 1.0 / math.sqrt(cfg.n)
    for i in range(replications):
        null[i] = np.random.default_rng((seed, 0, i)).standard_normal(size) * scale
        f = sample_deterministic_I(spec, (seed, 1, i), L=L).data
        alt[i] = f + np.random.default_rng((seed, 2, i)).standard_normal(size) * scale
    t1 = float(np.mean(test_decisions(null, cfg)))
    t2 = float(np.mean(1 - test_decisions(alt, cfg)))
    se = math.sqrt((t1 * (1 - t1) + t2 * (1 - t2)) / replications)
    return ErrorSum(t1, t2, t1 + t2, se)
