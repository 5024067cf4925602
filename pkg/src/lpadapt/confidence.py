"""Confidence sets built from the adaptive estimator and the composite test.

Each set is a ball around the Lepski estimate in the configured sequence
norm, optionally intersected with a Besov ball. The radius switches between
the rates of the two smoothness hypotheses (or follows ``r_hat`` on a
segment of smoothness values) according to the test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .estimation import LepskiConfig, adaptive_estimate, estimation_loss_array
from .sequence_model import BesovBall, CoeffField, ball_contains, seq_norm
from .testing import TestConfig, estimate_rhat, estimate_rhat_array, run_test, test_decisions

REGIMES = ("two_point_high_s", "low_s_full_model", "segment")


@dataclass(frozen=True)
class ConfidenceSet:
    """``{g : ||center - g|| <= radius}``, intersected with ``constraint`` when set."""

    center: CoeffField
    radius: float
    p: float
    norm_mode: str
    regime: str
    constraint: BesovBall | None = None
    center_ref: str = "adaptive_estimate"
    warnings: tuple = field(default=())

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError(f"radius must be non-negative, got {self.radius}")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    @property
    def norm(self) -> str:
        return f"{self.norm_mode}:p={self.p:g}"

    def to_json(self) -> str:
        return json.dumps(
            {"regime": self.regime, "radius": self.radius, "norm": self.norm, "center_ref": self.center_ref}
        )


def radius_rate(n: float, r: float) -> float:
    return float(n) ** (-r / (2 * r + 1))


def default_lepski(cfg: TestConfig) -> LepskiConfig:
    return LepskiConfig(p=cfg.p, n=cfg.n, norm_mode=cfg.norm_mode)


def _center(obs: CoeffField, lcfg: LepskiConfig) -> CoeffField:
    return adaptive_estimate(obs.padded(max(obs.L, lcfg.level_max)), lcfg)


def two_point_radius(psi, cfg: TestConfig, U_p: float):
    """``U_p / Delta`` times ``n**(-s/(2s+1))`` (accept) or ``n**(-t/(2t+1))`` (reject)."""
    psi = np.asarray(psi)
    small = U_p / cfg.delta * radius_rate(cfg.n, cfg.s)
    large = U_p / cfg.delta * radius_rate(cfg.n, cfg.t)
    return np.where(psi == 1, large, small)


def low_smoothness_radius(psi, cfg: TestConfig, D: float):
    psi = np.asarray(psi)
    return D / cfg.alpha * (radius_rate(cfg.n, cfg.s) * (1 - psi) + radius_rate(cfg.n, cfg.t) * psi)


def segment_radius(rhat, cfg: TestConfig, U_prime: float):
    rhat = np.asarray(rhat, dtype=np.float64)
    return U_prime / cfg.alpha * cfg.n ** (-rhat / (2 * rhat + 1))


def confset_two_point(obs: CoeffField, cfg: TestConfig, U_p: float, lepski: LepskiConfig | None = None,
                      psi: int | None = None) -> ConfidenceSet:
    """Ball whose radius follows the decision of ``Psi_n`` (``psi`` forces it)."""
    lcfg = lepski or default_lepski(cfg)
    if psi is None:
        psi = run_test(obs, cfg).decision
    notes = () if cfg.s * (1 - 1 / cfg.p) > cfg.t else ("regime: s(1-1/p) <= t",)
    return ConfidenceSet(_center(obs, lcfg), float(two_point_radius(psi, cfg, U_p)), cfg.p, cfg.norm_mode,
                         "two_point_high_s", warnings=notes)


def confset_low_smoothness(obs: CoeffField, cfg: TestConfig, D: float, lepski: LepskiConfig | None = None,
                           psi: int | None = None) -> ConfidenceSet:
    """Ball with radius ``(D/alpha) n**(-s/(2s+1))`` or ``(D/alpha) n**(-t/(2t+1))``, inside ``Sigma(t, B)``."""
    lcfg = lepski or default_lepski(cfg)
    if psi is None:
        psi = run_test(obs, cfg).decision
    notes = () if cfg.s * (1 - 1 / cfg.p) <= cfg.t else ("regime: s(1-1/p) > t",)
    return ConfidenceSet(_center(obs, lcfg), float(low_smoothness_radius(psi, cfg, D)), cfg.p, cfg.norm_mode,
                         "low_s_full_model", constraint=BesovBall(cfg.t, cfg.p, cfg.B), warnings=notes)


def confset_segment(obs: CoeffField, cfg: TestConfig, U_prime: float, grid_resolution: int = 32,
                    lepski: LepskiConfig | None = None, rhat: float | None = None) -> ConfidenceSet:
    """Ball with radius ``(U'/alpha) n**(-r_hat/(2 r_hat + 1))``."""
    lcfg = lepski or default_lepski(cfg)
    if rhat is None:
        rhat = estimate_rhat(obs, cfg, grid_resolution)
    notes = () if cfg.s * (1 - 1 / cfg.p) <= cfg.t else ("regime: s(1-1/p) > t",)
    return ConfidenceSet(_center(obs, lcfg), float(segment_radius(rhat, cfg, U_prime)), cfg.p, cfg.norm_mode,
                         "segment", center_ref=f"adaptive_estimate;rhat={rhat:.6g}", warnings=notes)


def confset_contains(cs: ConfidenceSet, f: CoeffField, p: float | None = None, norm_mode: str | None = None) -> bool:
    """Membership test; ``p``/``norm_mode`` may be passed to assert compatibility."""
    if (p is not None and p != cs.p) or (norm_mode is not None and norm_mode != cs.norm_mode):
        raise ValueError(f"set is measured in {cs.norm}, query asked for {norm_mode}:p={p}")
    L = max(cs.center.L, f.L)
    dist = seq_norm(cs.center.padded(L) - f.padded(L), cs.p, cs.norm_mode)
    if dist > cs.radius:
        return False
    return cs.constraint is None or ball_contains(f, cs.constraint)


def confset_diameter(cs: ConfidenceSet) -> float:
    return 2.0 * cs.radius


# ---------------------------------------------------------------------------
# batch evaluation for Monte Carlo


@dataclass(frozen=True)
class CoverageBatch:
    covered: np.ndarray
    radius: np.ndarray
    branch: np.ndarray  # psi, or r_hat for the segment construction


def coverage_batch(arr: np.ndarray, truth: CoeffField, cfg: TestConfig, regime: str, constant: float,
                   lepski: LepskiConfig | None = None, grid_resolution: int = 32) -> CoverageBatch:
    """Coverage indicators of one construction over a stack of observations of ``truth``."""
    lcfg = lepski or default_lepski(cfg)
    _, loss = estimation_loss_array(arr, truth, lcfg)
    if regime == "two_point_high_s":
        branch = test_decisions(arr, cfg)
        radius = two_point_radius(branch, cfg, constant)
        inside = True
    elif regime == "low_s_full_model":
        branch = test_decisions(arr, cfg)
        radius = low_smoothness_radius(branch, cfg, constant)
        inside = ball_contains(truth, BesovBall(cfg.t, cfg.p, cfg.B))
    elif regime == "segment":
        branch = estimate_rhat_array(arr, cfg, grid_resolution)
        radius = segment_radius(branch, cfg, constant)
        inside = True
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return CoverageBatch(covered=(loss <= radius) & inside, radius=np.asarray(radius, dtype=np.float64),
                         branch=np.asarray(branch))
