import json
import math

import numpy as np
import pytest

from lpadapt.confidence import (
    ConfidenceSet,
    confset_contains,
    confset_diameter,
    confset_low_smoothness,
    confset_segment,
    confset_two_point,
    coverage_batch,
    low_smoothness_radius,
    segment_radius,
    two_point_radius,
)
from lpadapt.estimation import LepskiConfig, adaptive_estimate, fit_risk_constant
from lpadapt.harness import power_law_slope
from lpadapt.sequence_model import BesovBall, CoeffField, ball_contains, make_truth, seq_norm, simulate_batch
from lpadapt.testing import TestConfig, calibrate_constants

HIGH = TestConfig(n=2**14, s=2.0, t=1.0, p=3.0, B=1.0, alpha=0.05)  # s(1-1/p) > t
LOW = TestConfig(n=2**14, s=1.2, t=1.0, p=3.0, B=1.0, alpha=0.05)  # s(1-1/p) <= t


def observation(cfg, seed=0):
    truth = make_truth("random", 14, r=cfg.s, B=cfg.B, seed=seed)
    return CoeffField(simulate_batch(truth, cfg.n, [(seed,)])[0])


# --- radius branches -------------------------------------------------------------

def test_two_point_branches():
    obs = observation(HIGH)
    U = 0.7
    acc = confset_two_point(obs, HIGH, U, psi=0)
    rej = confset_two_point(obs, HIGH, U, psi=1)
    assert acc.radius == pytest.approx(U / HIGH.delta * HIGH.n ** (-2 / 5), rel=1e-14)
    assert rej.radius == pytest.approx(U / HIGH.delta * HIGH.n ** (-1 / 3), rel=1e-14)
    assert acc.radius < rej.radius
    assert acc.center == adaptive_estimate(obs, LepskiConfig(p=3.0, n=HIGH.n))
    assert acc.warnings == ()


def test_low_smoothness_branches_and_constraint():
    obs = observation(LOW)
    D = 0.4
    acc = confset_low_smoothness(obs, LOW, D, psi=0)
    rej = confset_low_smoothness(obs, LOW, D, psi=1)
    assert acc.radius == pytest.approx(D / LOW.alpha * LOW.n ** (-1.2 / 3.4), rel=1e-14)
    assert rej.radius == pytest.approx(D / LOW.alpha * LOW.n ** (-1 / 3), rel=1e-14)
    assert acc.constraint == BesovBall(1.0, 3.0, 1.0)


def test_low_smoothness_degenerate_radius():
    cfg = LOW.replace(alpha=1.0)
    obs = observation(cfg)
    cs = confset_low_smoothness(obs, cfg, 0.0)
    assert cs.radius == 0.0
    assert confset_contains(cs, cs.center) == ball_contains_t(cs.center, cfg)
    nudged = cs.center + CoeffField.from_levels([[1e-6]]).padded(cs.center.L)
    assert not confset_contains(cs, nudged)


def ball_contains_t(f, cfg):
    return ball_contains(f, BesovBall(cfg.t, cfg.p, cfg.B))


def test_segment_branches():
    obs = observation(LOW)
    small = confset_segment(obs, LOW, 1.0, rhat=LOW.s)
    large = confset_segment(obs, LOW, 1.0, rhat=LOW.t)
    assert small.radius == pytest.approx(LOW.n ** (-1.2 / 3.4) / LOW.alpha, rel=1e-14)
    assert large.radius == pytest.approx(LOW.n ** (-1 / 3) / LOW.alpha, rel=1e-14)
    mids = segment_radius(np.linspace(LOW.t, LOW.s, 9), LOW, 1.0)
    assert np.all(np.diff(mids) < 0)
    assert "rhat=1.2" in small.center_ref


def test_segment_runs_rhat_by_default():
    obs = observation(LOW, seed=3)
    cs = confset_segment(obs, LOW, 1.0, grid_resolution=8)
    rhat = float(cs.center_ref.split("rhat=")[1])
    assert LOW.t <= rhat <= LOW.s
    assert cs.radius == pytest.approx(float(segment_radius(rhat, LOW, 1.0)), rel=1e-5)


def test_regime_warnings():
    assert confset_two_point(observation(LOW), LOW, 1.0, psi=0).warnings
    assert confset_low_smoothness(observation(HIGH), HIGH, 1.0, psi=0).warnings
    assert confset_segment(observation(HIGH), HIGH, 1.0, rhat=2.0).warnings
    assert not confset_segment(observation(LOW), LOW, 1.0, rhat=1.0).warnings


def test_vectorised_radii_match_scalars():
    psi = np.array([0, 1, 1, 0])
    tp = two_point_radius(psi, HIGH, 2.0)
    lo = low_smoothness_radius(psi, HIGH, 2.0)
    for i, b in enumerate(psi):
        assert tp[i] == confset_two_point(observation(HIGH), HIGH, 2.0, psi=int(b)).radius
        assert lo[i] == pytest.approx(confset_low_smoothness(observation(HIGH), HIGH, 2.0, psi=int(b)).radius)


def test_boundary_regime_radii_share_rate():
    # at s(1-1/p) = t both constructions shrink at the same rate
    ratios = []
    ns = [2.0**k for k in range(10, 19, 2)]
    for n in ns:
        cfg = TestConfig(n=n, s=2.0, t=1.0, p=2.0, B=1.0, alpha=0.05)
        ratios.append(float(two_point_radius(0, cfg, 1.0) / low_smoothness_radius(0, cfg, 1.0)))
    slope, _ = power_law_slope(ns, ratios)
    assert abs(slope) < 1e-12


# --- membership and diameter ---------------------------------------------------------

def test_contains_center_and_boundary():
    obs = observation(HIGH)
    cs = confset_two_point(obs, HIGH, 1.0, psi=0)
    assert confset_contains(cs, cs.center)
    direction = CoeffField.from_levels([[1.0]]).padded(cs.center.L)
    assert confset_contains(cs, cs.center + direction * (cs.radius * (1 - 1e-9)))
    assert not confset_contains(cs, cs.center + direction * (cs.radius * (1 + 1e-9)))


def test_contains_pads_shallower_fields():
    cs = ConfidenceSet(CoeffField.zeros(5), 1.0, 2.0, "0pp", "segment")
    assert confset_contains(cs, CoeffField.from_levels([[0.5]]))
    assert not confset_contains(cs, CoeffField.from_levels([[1.5]]))


def test_contains_norm_mismatch():
    cs = ConfidenceSet(CoeffField.zeros(2), 1.0, 3.0, "0pp", "segment")
    assert confset_contains(cs, CoeffField.zeros(2), p=3.0, norm_mode="0pp")
    with pytest.raises(ValueError):
        confset_contains(cs, CoeffField.zeros(2), p=2.0)
    with pytest.raises(ValueError):
        confset_contains(cs, CoeffField.zeros(2), norm_mode="0p2")


def test_contains_uses_configured_norm():
    f = CoeffField.from_levels([[0.0], [0.6, 0.6]])
    pp = ConfidenceSet(CoeffField.zeros(1), 1.0, 3.0, "0pp", "segment")
    p2 = ConfidenceSet(CoeffField.zeros(1), 1.0, 3.0, "0p2", "segment")
    assert confset_contains(pp, f) == (seq_norm(f, 3.0, "0pp") <= 1.0)
    assert confset_contains(p2, f) == (seq_norm(f, 3.0, "0p2") <= 1.0)


def test_diameter():
    cs = ConfidenceSet(CoeffField.zeros(2), 0.5, 2.0, "0pp", "segment")
    assert confset_diameter(cs) == 1.0


def test_validation():
    with pytest.raises(ValueError):
        ConfidenceSet(CoeffField.zeros(1), -0.1, 2.0, "0pp", "segment")
    with pytest.raises(ValueError):
        ConfidenceSet(CoeffField.zeros(1), 0.1, 2.0, "0pp", "bogus")


def test_json_fields():
    cs = confset_two_point(observation(HIGH), HIGH, 1.0, psi=1)
    doc = json.loads(cs.to_json())
    assert set(doc) == {"regime", "radius", "norm", "center_ref"}
    assert doc["regime"] == "two_point_high_s"
    assert doc["radius"] == cs.radius
    assert doc["norm"] == "0pp:p=3"


# --- Monte Carlo honesty and adaptivity -------------------------------------------------

@pytest.fixture(scope="module")
def calibrated_high():
    return calibrate_constants(HIGH, replications=500, seed=2).apply(HIGH)


def test_coverage_batch_matches_single(calibrated_high):
    cfg = calibrated_high
    truth = make_truth("random", 14, r=cfg.s, B=cfg.B, seed=8)
    arr = simulate_batch(truth, cfg.n, [(8, i) for i in range(6)])
    batch = coverage_batch(arr, truth, cfg, "two_point_high_s", 1.0)
    for row, cov, rad in zip(arr, batch.covered, batch.radius):
        cs = confset_two_point(CoeffField(row), cfg, 1.0)
        assert rad == cs.radius
        assert cov == confset_contains(cs, truth)


def test_two_point_honest_and_adaptive(calibrated_high):
    cfg = calibrated_high
    lf = lambda n: LepskiConfig(p=cfg.p, n=n)
    truths = [make_truth("random", 14, r=cfg.s, B=cfg.B, seed=k) for k in range(3)]
    U = fit_risk_constant(truths, [cfg.n], cfg.s, lf, replications=100, seed=9)
    reps = 300
    for k, truth in enumerate(truths):
        arr = simulate_batch(truth, cfg.n, [(10, k, i) for i in range(reps)])
        batch = coverage_batch(arr, truth, cfg, "two_point_high_s", U)
        band = 2 * math.sqrt(cfg.alpha * (1 - cfg.alpha) / reps)
        assert batch.covered.mean() >= 1 - 2 * cfg.delta - band
        # adaptivity: Sigma(s, B) truths mostly get the small radius
        assert (batch.branch == 0).mean() >= 1 - cfg.alpha - band
