"""The composite test of ``f in Sigma(s, B)`` against separated alternatives.

The test combines two kinds of evidence:

* for every level ``l`` between ``j_s`` and ``j`` the bias-corrected level
  statistic ``T_n(l)`` is compared with ``t_n(l)**p``;
* the distance ``T~_n`` of the coarse projection (levels ``<= j_s``) of the
  observation to the null ball is compared with ``t~_n``.

Replacing ``s`` by any ``r`` in ``[t, s]`` gives the family ``Psi_n(r)``;
with a suitable ``E2`` its decisions are nondecreasing in ``r`` and the
switch point ``r_hat`` estimates the smoothness of the signal.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .moments import even_floor, gaussian_abs_moment, level_statistics_array
from .sequence_model import (
    BesovBall,
    CoeffField,
    SeedLike,
    ball_distance_array,
    field_size,
    level_slice,
    make_truth,
    norm_exponent,
    simulate_batch,
)

CONFIG_FIELDS = ("n", "s", "t", "p", "B", "alpha", "E1", "E2", "Cprime", "norm_mode")

CALIBRATION_GRID = tuple(2.0**k for k in range(-2, 9))

# guard against log2 landing a hair below an integer
_FLOOR_EPS = 1e-9


class ResolutionError(ValueError):
    """The observation does not reach the levels the test needs to read."""


class CalibrationError(RuntimeError):
    """No grid constant achieves the requested level; ``diagnostics`` holds the search."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def dyadic_resolution(n: float, denom: float) -> int:
    """``floor(log2(n) / denom)``, clipped at 0."""
    return max(0, math.floor(math.log2(n) / denom + _FLOOR_EPS))


@dataclass(frozen=True)
class TestConfig:
    """Parameters and calibration constants of the test ``Psi_n``."""

    __test__ = False  # keep pytest from collecting this class

    n: float
    s: float
    t: float
    p: float
    B: float
    alpha: float
    E1: float = 1.0
    E2: float = 1.0
    Cprime: float = 1.0
    norm_mode: str = "0pp"

    def __post_init__(self):
        if not self.n > 0:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 0.5 <= self.t < self.s:
            raise ValueError(f"need 1/2 <= t < s, got t={self.t}, s={self.s}")
        if not (2 <= self.p < math.inf):
            raise ValueError(f"need 2 <= p < inf, got {self.p}")
        if not self.B > 0:
            raise ValueError(f"B must be positive, got {self.B}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if min(self.E1, self.E2, self.Cprime) < 0:
            raise ValueError("calibration constants must be non-negative")
        norm_exponent(self.p, self.norm_mode)
        if self.j_s > self.j:
            raise ValueError(f"coarse level j_s={self.j_s} exceeds fine level j={self.j}")

    @property
    def j_s(self) -> int:
        return self.resolution(self.s)

    @property
    def j(self) -> int:
        return dyadic_resolution(self.n, 2 * self.t + 1 - 1 / self.p)

    @property
    def delta(self) -> float:
        return self.alpha / 4

    @property
    def h(self) -> float:
        return norm_exponent(self.p, self.norm_mode)

    def resolution(self, r: float) -> int:
        """``j_r = floor(log2 n / (2r + 1))``."""
        return dyadic_resolution(self.n, 2 * r + 1)

    def ball(self, r: float | None = None) -> BesovBall:
        return BesovBall(self.s if r is None else r, self.p, self.B)

    def replace(self, **changes) -> "TestConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k) for k in CONFIG_FIELDS})

    @classmethod
    def from_dict(cls, doc: dict) -> "TestConfig":
        extra = set(doc) - set(CONFIG_FIELDS)
        missing = set(CONFIG_FIELDS) - set(doc)
        if extra or missing:
            raise ValueError(f"config fields mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "TestConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Thresholds:
    r: float
    j_r: int
    levels: np.ndarray
    t_n: np.ndarray
    t_tilde: float
    rho: float


def _level_threshold_units(cfg: TestConfig, levels: np.ndarray, r: float) -> np.ndarray:
    """``t_n(l) / E1``."""
    p, n, j = cfg.p, cfg.n, cfg.j
    fp = even_floor(p)
    l = levels.astype(np.float64)
    term1 = 2.0 ** (-l * r * (p - 1) / p) * (2.0 ** (l * (1 - 1 / p)) / n) ** (1 / (2 * p))
    term2 = 2.0 ** (-fp * l * r / p) * (2.0**l / n) ** ((p - fp) / (2 * p))
    term3 = 2.0 ** (-l * r)
    term4 = np.sqrt(2.0 ** ((p - 1) * (j + l) / (2 * p)) / n)
    return term1 + term2 + term3 + term4


def _check_r(cfg: TestConfig, r: float) -> float:
    tol = 1e-12 * max(1.0, cfg.s)
    if not cfg.t - tol <= r <= cfg.s + tol:
        raise ValueError(f"r={r} outside [t, s] = [{cfg.t}, {cfg.s}]")
    return min(max(r, cfg.t), cfg.s)


def thresholds(cfg: TestConfig, r: float | None = None) -> Thresholds:
    """Level thresholds ``t_n(l)`` for ``j_r <= l <= j``, ``t~_n`` and ``rho_n``.

    ``r`` defaults to ``s``; other values give the thresholds of ``Psi_n(r)``.
    """
    r = cfg.s if r is None else _check_r(cfg, r)
    j_r = cfg.resolution(r)
    levels = np.arange(j_r, cfg.j + 1)
    t_n = cfg.E1 * _level_threshold_units(cfg, levels, r)
    t_tilde = cfg.E2 * math.sqrt(2.0**j_r / cfg.n)
    rho = 4 * ((cfg.B + 1) * cfg.Cprime * 2.0 ** (-cfg.j * cfg.t) + 2 * t_n.sum() + 2 * t_tilde)
    return Thresholds(r=r, j_r=j_r, levels=levels, t_n=t_n, t_tilde=t_tilde, rho=float(rho))


@dataclass(frozen=True)
class TestOutcome:
    """Decision of ``Psi_n`` together with every comparison it made."""

    __test__ = False

    decision: int
    level_flags: tuple
    infimum_flag: bool
    T_values: np.ndarray
    T_tilde: float
    thresholds: Thresholds = field(repr=False)


def _statistics(arr: np.ndarray, cfg: TestConfig, th: Thresholds) -> tuple[np.ndarray, np.ndarray]:
    T = level_statistics_array(arr, th.levels, cfg.p, cfg.n)
    T_tilde = ball_distance_array(arr, cfg.ball(th.r), th.j_r, cfg.h)
    return T, T_tilde


def test_components(arr: np.ndarray, cfg: TestConfig, r: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Rejection indicators of the level part and the infimum part over a stack of fields."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape[-1] < field_size(cfg.j):
        raise ResolutionError(f"observation must reach level j={cfg.j}")
    th = thresholds(cfg, r)
    T, T_tilde = _statistics(arr, cfg, th)
    return np.any(T > th.t_n**cfg.p, axis=-1), T_tilde > th.t_tilde


def test_decisions(arr: np.ndarray, cfg: TestConfig, r: float | None = None) -> np.ndarray:
    """Vectorized ``Psi_n(r)`` decisions (0/1 integers) for a stack of flat fields."""
    lev, inf = test_components(arr, cfg, r)
    return (lev | inf).astype(np.int8)


test_components.__test__ = False
test_decisions.__test__ = False


def run_test(obs: CoeffField, cfg: TestConfig, r: float | None = None) -> TestOutcome:
    """Run ``Psi_n`` (or ``Psi_n(r)``) on one observation."""
    if obs.L < cfg.j:
        raise ResolutionError(f"observation reaches level {obs.L}, the test reads up to j={cfg.j}")
    th = thresholds(cfg, r)
    T, T_tilde = _statistics(obs.data, cfg, th)
    flags = tuple(bool(x) for x in T > th.t_n**cfg.p)
    inf_flag = bool(T_tilde > th.t_tilde)
    return TestOutcome(
        decision=int(inf_flag or any(flags)),
        level_flags=flags,
        infimum_flag=inf_flag,
        T_values=T,
        T_tilde=float(T_tilde),
        thresholds=th,
    )


run_test.__test__ = False


def test_family_at(obs: CoeffField, cfg: TestConfig, r: float) -> TestOutcome:
    """``Psi_n(r)``: the test with ``s`` replaced by ``r`` in ``[t, s]``."""
    return run_test(obs, cfg, _check_r(cfg, r))


test_family_at.__test__ = False


def rhat_grid(cfg: TestConfig, grid_resolution: int) -> np.ndarray:
    if grid_resolution < 2:
        raise ValueError(f"grid resolution must be >= 2, got {grid_resolution}")
    return cfg.t + np.arange(grid_resolution + 1) * (cfg.s - cfg.t) / grid_resolution


def estimate_rhat(obs: CoeffField, cfg: TestConfig, grid_resolution: int = 32) -> float:
    """Smallest grid point ``r`` with ``Psi_n(r) = 1``, by bisection; ``s`` if none.

    Relies on ``r -> Psi_n(r)`` being nondecreasing, see :func:`family_e2_floor`.
    """
    grid = rhat_grid(cfg, grid_resolution)
    decide = lambda i: test_family_at(obs, cfg, float(grid[i])).decision  # noqa: E731
    if decide(0):
        return float(grid[0])
    hi = len(grid) - 1
    if not decide(hi):
        return float(cfg.s)
    lo = 0  # invariant: decide(lo) == 0, decide(hi) == 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if decide(mid):
            hi = mid
        else:
            lo = mid
    return float(grid[hi])


def estimate_rhat_scan(obs: CoeffField, cfg: TestConfig, grid_resolution: int = 32) -> float:
    """Linear-scan counterpart of :func:`estimate_rhat`."""
    for r in rhat_grid(cfg, grid_resolution):
        if test_family_at(obs, cfg, float(r)).decision:
            return float(r)
    return float(cfg.s)


def estimate_rhat_array(arr: np.ndarray, cfg: TestConfig, grid_resolution: int = 32) -> np.ndarray:
    """Scan-based ``r_hat`` for a stack of observations."""
    grid = rhat_grid(cfg, grid_resolution)
    arr = np.atleast_2d(arr)
    out = np.full(arr.shape[0], float(cfg.s))
    open_ = np.ones(arr.shape[0], dtype=bool)
    for r in grid:
        hit = open_ & test_decisions(arr, cfg, float(r)).astype(bool)
        out[hit] = r
        open_ &= ~hit
        if not open_.any():
            break
    return out


# ---------------------------------------------------------------------------
# monotone family


def family_e2_floor(cfg: TestConfig) -> float:
    """Smallest ``E2`` making ``r -> Psi_n(r)`` nondecreasing for every observation.

    When ``j_r`` drops from ``J1`` to ``J2`` the levels ``J2 < l <= J1`` move
    from the infimum statistic into the level statistics. For ``p`` with
    ``even_floor(p) == 2`` one has ``sum_k w_l |a_hat|**p = T_n(l) + m_p**p (2**l/n)**(p/2)``,
    so if every level test accepts at the larger ``r`` the distance at the
    smaller ``r`` is bounded, and it stays below its threshold once

    ``E2**h ((2**J1/n)**(h/2) - (2**J2/n)**(h/2)) >= sum_l (t_n(l)**p + m_p**p (2**l/n)**(p/2))**(h/p)``.

    The thresholds are taken at the infimum of the ``r`` sharing ``j_r = J2``,
    where they are largest. Returns 0 if ``j_r`` is constant on ``[t, s]``.
    """
    if even_floor(cfg.p) != 2:
        raise ValueError(f"the monotonicity floor needs 2 <= p < 4, got p={cfg.p}")
    n, p, h = cfg.n, cfg.p, cfg.h
    mp = gaussian_abs_moment(p)
    Js = range(cfg.resolution(cfg.s), cfg.resolution(cfg.t) + 1)
    floor = 0.0
    for J2 in Js:
        r_lo = max(cfg.t, (math.log2(n) / (J2 + 1) - 1) / 2)
        r_lo = min(r_lo, cfg.s)
        for J1 in Js:
            if J1 <= J2:
                continue
            levels = np.arange(J2 + 1, J1 + 1)
            t_n = cfg.E1 * _level_threshold_units(cfg, levels, r_lo)
            rhs = np.sum((t_n**p + mp * (2.0**levels / n) ** (p / 2)) ** (h / p))
            gap = (2.0**J1 / n) ** (h / 2) - (2.0**J2 / n) ** (h / 2)
            floor = max(floor, (rhs / gap) ** (1 / h))
    return float(floor)


# ---------------------------------------------------------------------------
# alternatives and calibration


def separated_alternative(cfg: TestConfig, level: int, separation: float, base: CoeffField | None = None,
                          seed: SeedLike = None) -> CoeffField:
    """Field at distance exactly ``separation`` from ``Sigma(s, B)``, only ``level`` inflated.

    Level ``level`` of ``base`` (zero by default) is replaced by equal-magnitude
    entries whose l_p norm exceeds the level radius by
    ``separation * 2**(-l (1/2 - 1/p))``. The result lives on levels ``<= j``.
    """
    if not 0 <= level <= cfg.j:
        raise ValueError(f"level must lie in 0..{cfg.j}, got {level}")
    if separation < 0:
        raise ValueError("separation must be non-negative")
    L = max(cfg.j, base.L if base is not None else 0)
    data = np.zeros(field_size(L)) if base is None else base.padded(L).data.copy()
    ball = cfg.ball()
    p = cfg.p
    norm = ball.level_radii(level)[level] + separation * 2.0 ** (-level * (0.5 - 1 / p))
    mag = norm / 2.0 ** (level / p)
    signs = np.ones(2**level) if seed is None else np.random.default_rng(seed).choice([-1.0, 1.0], 2**level)
    data[level_slice(level)] = mag * signs
    return CoeffField(data)


def boundary_nulls(cfg: TestConfig, levels: Iterable[int] | None = None) -> list[CoeffField]:
    """Boundary functions of ``Sigma(s, B)``; level ``j_s`` alone by default."""
    levels = [cfg.j_s] if levels is None else list(levels)
    return [make_truth("boundary", cfg.j, r=cfg.s, B=cfg.B, level=l) for l in levels]


@dataclass(frozen=True)
class CalibrationResult:
    E1: float
    E2: float
    Cprime: float
    diagnostics: dict = field(default_factory=dict, repr=False)

    def apply(self, cfg: TestConfig) -> TestConfig:
        return cfg.replace(E1=self.E1, E2=self.E2, Cprime=self.Cprime)


def _smallest_passing(grid: Sequence[float], rate: Callable[[float], float], target: float, name: str,
                      diagnostics: dict) -> float:
    rates = {}
    for value in grid:
        rates[value] = rate(value)
        if rates[value] <= target:
            diagnostics[name] = rates
            return value
    diagnostics[name] = rates
    raise CalibrationError(
        f"no {name} in grid reaches rate <= {target:.4g} (best {min(rates.values()):.4g})", diagnostics
    )


def _null_statistics(cfg: TestConfig, nulls: Sequence[CoeffField], replications: int, seed: int,
                     r_values: Sequence[float]) -> list[dict]:
    """Scale-free test statistics for every null and every ``r``.

    ``level`` holds ``max_l T_n(l) / (t_n(l)/E1)**p`` and ``inf`` holds
    ``T~_n / (t~_n/E2)``, so rejection at constants ``E1, E2`` means
    ``level > E1**p`` or ``inf > E2``.
    """
    unit = cfg.replace(E1=1.0, E2=1.0)
    out = []
    for k, null in enumerate(nulls):
        seeds = [(seed, k, i) for i in range(replications)]
        arr = simulate_batch(null.padded(max(null.L, cfg.j)), cfg.n, seeds)[:, : field_size(cfg.j)]
        for r in r_values:
            th = thresholds(unit, r)
            T, T_tilde = _statistics(arr, unit, th)
            ratio = T / th.t_n**cfg.p
            out.append({"null": k, "r": r, "level": ratio.max(axis=-1), "inf": T_tilde / th.t_tilde})
    return out


def calibrate_constants(
    cfg_template: TestConfig,
    null_generator: Callable[[TestConfig], Sequence[CoeffField] | CoeffField] | None = None,
    replications: int = 1000,
    seed: int = 0,
    grid: Sequence[float] = CALIBRATION_GRID,
    family: bool = False,
    family_points: int = 8,
    power_levels: Iterable[int] | None = None,
) -> CalibrationResult:
    """Smallest grid constants ``(E1, E2, C')`` giving the test its nominal errors.

    ``E1`` is the smallest grid value whose level-part rejection rate is at
    most ``alpha/4`` under every null; ``E2`` likewise for the infimum part,
    so the combined type-I error is at most ``alpha/2`` by the union bound.
    ``C'`` is the smallest grid value with acceptance rate at most ``alpha/2``
    against alternatives separated by ``rho_n`` (one per level, see
    :func:`separated_alternative`).

    Parameters
    ----------
    cfg_template : TestConfig
        Supplies ``n, s, t, p, B, alpha, norm_mode``; its constants are ignored.
    null_generator : callable, optional
        Maps the config to the null fields; defaults to the boundary
        function of ``Sigma(s, B)`` at level ``j_s``.
    replications : int
        Monte Carlo draws per null, at least 500.
    seed : int
        Base seed; draw ``i`` of null ``k`` uses seed ``(seed, k, i)``.
    grid : sequence of float
        Ascending search grid.
    family : bool
        Also calibrate ``Psi_n(r)`` on ``family_points`` values of ``r`` in
        ``[t, s]`` and raise ``E2`` to :func:`family_e2_floor`.
    power_levels : iterable of int, optional
        Levels carrying the power alternatives (default ``0..j``).

    Returns
    -------
    CalibrationResult
        Constants and per-grid-value rates in ``diagnostics``.
    """
    if replications < 500:
        raise ValueError(f"calibration needs at least 500 replications, got {replications}")
    grid = sorted(grid)
    cfg = cfg_template
    diagnostics: dict = {"replications": replications, "seed": seed}
    if cfg.alpha >= 1:
        diagnostics["vacuous"] = True
        return CalibrationResult(grid[0], grid[0], grid[0], diagnostics)

    nulls = boundary_nulls(cfg) if null_generator is None else null_generator(cfg)
    if isinstance(nulls, CoeffField):
        nulls = [nulls]
    r_values = [cfg.s]
    if family:
        r_values = list(np.linspace(cfg.t, cfg.s, family_points))
    stats = _null_statistics(cfg, nulls, replications, seed, r_values)
    target = cfg.alpha / 4
    p = cfg.p

    def level_rate(E1):
        return max(float(np.mean(st["level"] > E1**p)) for st in stats)

    def inf_rate(E2):
        return max(float(np.mean(st["inf"] > E2)) for st in stats)

    E1 = _smallest_passing(grid, level_rate, target, "E1", diagnostics)
    E2 = _smallest_passing(grid, inf_rate, target, "E2", diagnostics)
    if family:
        floor = family_e2_floor(cfg.replace(E1=E1))
        diagnostics["E2_floor"] = floor
        if floor > E2:
            above = [g for g in grid if g >= floor]
            if not above:
                raise CalibrationError(f"monotonicity needs E2 >= {floor:.4g}, beyond the grid", diagnostics)
            E2 = above[0]

    levels = list(range(cfg.j + 1)) if power_levels is None else list(power_levels)

    def accept_rate(Cp):
        c = cfg.replace(E1=E1, E2=E2, Cprime=Cp)
        rho = thresholds(c).rho
        worst = 0.0
        for l in levels:
            alt = separated_alternative(c, l, rho)
            seeds = [(seed, 1000 + l, i) for i in range(replications)]
            arr = simulate_batch(alt, c.n, seeds)
            worst = max(worst, 1.0 - float(np.mean(test_decisions(arr, c))))
        return worst

    Cp = _smallest_passing(grid, accept_rate, cfg.alpha / 2, "Cprime", diagnostics)
    return CalibrationResult(E1, E2, Cp, diagnostics)


calibrate_constants.__test__ = False


def monotonicity_violations(decisions: np.ndarray) -> int:
    """Number of rows of a 0/1 matrix (rows: observations, columns: ascending r) that ever drop."""
    d = np.asarray(decisions)
    return int(np.sum(np.any(np.diff(d, axis=-1) < 0, axis=-1)))
