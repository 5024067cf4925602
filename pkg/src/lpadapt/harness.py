"""Seeded Monte Carlo experiments with aggregation and rate regression.

Every replication draws its randomness from ``numpy.random.default_rng`` fed
with the tuple ``(base_seed, grid_index, replication)``; the underlying
``SeedSequence`` hashes the whole tuple, so distinct triples give distinct
streams and results do not depend on execution order.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .adversarial import AdversarialSpec, sample_deterministic_I
from .confidence import REGIMES, coverage_batch
from .estimation import LepskiConfig, estimation_loss_array, fit_risk_constant
from .sequence_model import CoeffField, field_size, make_truth, simulate_batch
from .testing import (
    TestConfig,
    boundary_nulls,
    calibrate_constants,
    separated_alternative,
    test_decisions,
    thresholds,
)

SCENARIOS = ("null_level", "power_curve", "coverage", "diameter_rate", "risk_rate", "lower_bound")
SUMMARY_COLUMNS = ("scenario", "n", "r", "p", "metric", "value", "stderr")
# replications are simulated in blocks of at most this many coefficients to bound memory
CHUNK_ELEMENTS = 2**22


class ExperimentIOError(OSError):
    """Writing experiment output failed; the message names the grid point."""


@dataclass(frozen=True)
class ExperimentSpec:
    """One scenario over a grid of sample sizes and smoothness values.

    ``r_values`` is the smoothness of the generated truths for ``risk_rate``
    and ``coverage``, and the separation multiple of ``rho_n`` for
    ``power_curve``; other scenarios ignore it. Calibration constants left as
    ``None`` are calibrated per sample size; a ``None`` risk ``constant`` is
    fitted from a pilot run.
    """

    scenario: str
    n_values: tuple = (2.0**14,)
    r_values: tuple = (1.0,)
    p: float = 3.0
    s: float = 2.0
    t: float = 1.0
    B: float = 1.0
    alpha: float = 0.05
    upsilon: float = 0.1
    replications: int = 100
    seed: int = 0
    out: str | None = None
    regime: str = "two_point_high_s"
    constant: float | None = None
    E1: float | None = None
    E2: float | None = None
    Cprime: float | None = None
    norm_mode: str = "0pp"
    grid_resolution: int = 32
    calibration_reps: int = 1000
    record_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(float(n) for n in self.n_values))
        object.__setattr__(self, "r_values", tuple(float(r) for r in self.r_values))
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.n_values or not self.r_values:
            raise ValueError("parameter grids must be nonempty")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown experiment fields {sorted(unknown)}")
        return cls(**doc)

    def test_config(self, n: float) -> TestConfig:
        return TestConfig(n=n, s=self.s, t=self.t, p=self.p, B=self.B, alpha=self.alpha,
                          norm_mode=self.norm_mode)


@dataclass(frozen=True)
class ExperimentRecord:
    scenario: str
    params: dict
    rep: int
    seed: tuple
    decision: int | None = None
    covered: bool | None = None
    diameter: float | None = None
    risk: float | None = None
    alt_decision: int | None = None
    wall_time: float | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seed"] = list(self.seed)
        if d["wall_time"] is None:
            del d["wall_time"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _chunks(seeds: list, width: int):
    """Consecutive ``(offset, seeds)`` blocks holding at most ``CHUNK_ELEMENTS`` coefficients."""
    step = max(1, CHUNK_ELEMENTS // width)
    for lo in range(0, len(seeds), step):
        yield lo, seeds[lo:lo + step]


def replication_seeds(base: int, grid_index: int, replications: int) -> list[tuple]:
    return [(int(base), int(grid_index), i) for i in range(replications)]


def _calibrated(spec: ExperimentSpec, n: float, cache: dict) -> TestConfig:
    cfg = spec.test_config(n)
    given = {"E1": spec.E1, "E2": spec.E2, "Cprime": spec.Cprime}
    if all(v is not None for v in given.values()):
        return cfg.replace(**given)
    if n not in cache:
        family = spec.regime == "segment"
        res = calibrate_constants(
            cfg,
            null_generator=lambda c: boundary_nulls(c, range(c.j + 1)),
            replications=max(500, spec.calibration_reps),
            seed=spec.seed,
            family=family,
        )
        cache[n] = res.apply(cfg)
    cfg = cache[n]
    return cfg.replace(**{k: v for k, v in given.items() if v is not None})


def regime_truths(spec: ExperimentSpec, r: float, L: int) -> list[CoeffField]:
    """Truth set used for coverage in each regime."""
    if spec.regime == "two_point_high_s":
        return [make_truth("random", L, r=spec.s, B=spec.B, seed=spec.seed)]
    return [make_truth("random", L, r=r, B=spec.B, seed=spec.seed)]


def _fit_constant(spec: ExperimentSpec, r: float) -> float:
    if spec.constant is not None:
        return spec.constant
    rate_r = spec.s if spec.regime != "segment" else r
    L = max(LepskiConfig(p=spec.p, n=n).level_max for n in spec.n_values)
    truths = regime_truths(spec, r, L)
    return fit_risk_constant(
        truths, spec.n_values, rate_r,
        lambda n: LepskiConfig(p=spec.p, n=n, norm_mode=spec.norm_mode),
        replications=50, seed=spec.seed + 1,
    )


def _grid_records(spec: ExperimentSpec, gi: int, n: float, r: float, cache: dict) -> list[ExperimentRecord]:
    seeds = replication_seeds(spec.seed, gi, spec.replications)
    params = {"n": n, "r": r, "p": spec.p, "s": spec.s, "t": spec.t, "B": spec.B,
              "alpha": spec.alpha, "upsilon": spec.upsilon}
    sc = spec.scenario
    start = time.perf_counter()
    per_rep: list[dict] = [{} for _ in seeds]

    if sc in ("null_level", "power_curve", "lower_bound", "diameter_rate", "coverage"):
        cfg = _calibrated(spec, n, cache)
    if sc == "null_level":
        truth = boundary_nulls(cfg)[0]
        for lo, block in _chunks(seeds, field_size(truth.L)):
            for d, v in zip(per_rep[lo:], test_decisions(simulate_batch(truth, n, block), cfg)):
                d["decision"] = int(v)
    elif sc == "power_curve":
        rho = thresholds(cfg).rho
        truth = separated_alternative(cfg, cfg.j, r * rho)
        for lo, block in _chunks(seeds, field_size(truth.L)):
            for d, v in zip(per_rep[lo:], test_decisions(simulate_batch(truth, n, block), cfg)):
                d["decision"] = int(v)
    elif sc == "risk_rate":
        lcfg = LepskiConfig(p=spec.p, n=n, norm_mode=spec.norm_mode)
        truth = make_truth("random", lcfg.level_max, r=r, B=spec.B, seed=spec.seed)
        for lo, block in _chunks(seeds, field_size(truth.L)):
            _, loss = estimation_loss_array(simulate_batch(truth, n, block), truth, lcfg)
            for d, v in zip(per_rep[lo:], loss):
                d["risk"] = float(v)
    elif sc in ("coverage", "diameter_rate"):
        lcfg = LepskiConfig(p=spec.p, n=n, norm_mode=spec.norm_mode)
        regime = spec.regime if sc == "coverage" else "two_point_high_s"
        rr = r if sc == "coverage" else spec.s
        truth = regime_truths(dataclasses.replace(spec, regime=regime), rr, lcfg.level_max)[0]
        key = (regime, rr)
        if key not in cache:
            cache[key] = _fit_constant(dataclasses.replace(spec, regime=regime), rr)
        L = max(lcfg.level_max, cfg.j)
        for lo, block in _chunks(seeds, field_size(L)):
            arr = simulate_batch(truth, n, block, L=L)
            cov = coverage_batch(arr, truth, cfg, regime, cache[key], lcfg, spec.grid_resolution)
            _, loss = estimation_loss_array(arr, truth, lcfg)
            for i, d in enumerate(per_rep[lo:lo + len(block)]):
                d["covered"] = bool(cov.covered[i])
                d["diameter"] = float(2 * cov.radius[i])
                d["risk"] = float(loss[i])
                if regime != "segment":
                    d["decision"] = int(cov.branch[i])
    elif sc == "lower_bound":
        adv = AdversarialSpec(spec.upsilon, spec.t, spec.p, n)
        L = max(cfg.j, adv.j)
        size = field_size(L)
        for lo, block in _chunks(seeds, size):
            null = simulate_batch(CoeffField.zeros(L), n, block)
            alt = np.empty((len(block), size))
            for i, sd in enumerate(block):
                f = sample_deterministic_I(adv, sd + (1,), L=L)
                alt[i] = f.data + np.random.default_rng(sd + (2,)).standard_normal(size) / math.sqrt(n)
            d0 = test_decisions(null, cfg)
            d1 = test_decisions(alt, cfg)
            for i, d in enumerate(per_rep[lo:lo + len(block)]):
                d["decision"] = int(d0[i])
                d["alt_decision"] = int(d1[i])

    elapsed = (time.perf_counter() - start) / len(seeds) if spec.record_time else None
    return [ExperimentRecord(sc, params, i, seeds[i], wall_time=elapsed, **per_rep[i]) for i in range(len(seeds))]


def run_experiment(spec: ExperimentSpec) -> list[ExperimentRecord]:
    """Run every (n, r) grid point; records are sorted and, if ``spec.out`` is set, written as JSONL."""
    cache: dict = {}
    records: list[ExperimentRecord] = []
    grid = [(n, r) for n in spec.n_values for r in spec.r_values]
    out = None
    try:
        if spec.out is not None:
            out = open(spec.out, "w")
    except OSError as exc:
        raise ExperimentIOError(f"cannot open {spec.out}: {exc}") from exc
    try:
        for gi, (n, r) in enumerate(grid):
            block = _grid_records(spec, gi, n, r, cache)
            records.extend(block)
            if out is not None:
                try:
                    out.write("".join(rec.to_json() + "\n" for rec in block))
                except OSError as exc:
                    raise ExperimentIOError(f"write failed at grid point n={n:g}, r={r:g}: {exc}") from exc
    finally:
        if out is not None:
            out.close()
    return records


def load_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _as_dict(rec) -> dict:
    return rec.to_dict() if isinstance(rec, ExperimentRecord) else rec


def _binomial(flags: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(flags, dtype=np.float64)
    m = float(x.mean())
    return m, math.sqrt(m * (1 - m) / x.size)


def _median(values: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(values, dtype=np.float64)
    med = float(np.median(x))
    # asymptotic standard error of the median via the normal-reference density
    se = 1.2533 * float(x.std(ddof=1)) / math.sqrt(x.size) if x.size > 1 else math.nan
    return med, se


def summarize(records: Iterable) -> list[dict]:
    """Aggregate records into rows with columns ``SUMMARY_COLUMNS``."""
    groups: dict = {}
    for rec in map(_as_dict, records):
        prm = rec["params"]
        groups.setdefault((rec["scenario"], prm["n"], prm["r"], prm["p"]), []).append(rec)
    rows = []
    for (sc, n, r, p), recs in sorted(groups.items()):
        def col(name):
            return [x[name] for x in recs if x.get(name) is not None]

        metrics = {}
        if col("decision"):
            name = "type_one" if sc == "lower_bound" else "rejection_rate"
            metrics[name] = _binomial(col("decision"))
        if col("alt_decision"):
            t2 = _binomial([1 - v for v in col("alt_decision")])
            metrics["type_two"] = t2
            t1 = metrics["type_one"]
            metrics["error_sum"] = (t1[0] + t2[0], math.hypot(t1[1], t2[1]))
        if col("covered"):
            metrics["coverage"] = _binomial(col("covered"))
        if col("diameter"):
            metrics["median_diameter"] = _median(col("diameter"))
        if col("risk"):
            metrics["median_risk"] = _median(col("risk"))
        for name, (value, se) in metrics.items():
            rows.append({"scenario": sc, "n": n, "r": r, "p": p, "metric": name, "value": value, "stderr": se})
    return rows


def summary_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_summary(rows: Sequence[dict], path) -> None:
    try:
        Path(path).write_text(summary_csv(rows))
    except OSError as exc:
        raise ExperimentIOError(f"cannot write summary {path}: {exc}") from exc


def power_law_slope(n_values: Sequence[float], values: Sequence[float]) -> tuple[float, float]:
    """OLS slope and its standard error of ``log2 value`` against ``log2 n``."""
    x = np.log2(np.asarray(n_values, dtype=np.float64))
    y = np.log2(np.asarray(values, dtype=np.float64))
    if np.unique(x).size < 3:
        raise ValueError("rate regression needs at least 3 distinct sample sizes")
    fit = stats.linregress(x, y)
    return float(fit.slope), float(fit.stderr)


def rate_slope(records: Iterable, metric: str = "risk") -> tuple[float, float]:
    """Slope of ``log2 median(metric)`` against ``log2 n`` (medians taken per ``n``)."""
    by_n: dict = {}
    for rec in map(_as_dict, records):
        if rec.get(metric) is not None:
            by_n.setdefault(rec["params"]["n"], []).append(rec[metric])
    ns = sorted(by_n)
    return power_law_slope(ns, [float(np.median(by_n[n])) for n in ns])


def records_jsonl(records: Iterable) -> str:
    return "".join(json.dumps(_as_dict(r), sort_keys=True) + "\n" for r in records)


__all__ = [
    "SCENARIOS", "ExperimentSpec", "ExperimentRecord", "ExperimentIOError", "run_experiment", "summarize",
    "summary_csv", "write_summary", "rate_slope", "power_law_slope", "load_records", "replication_seeds",
    "records_jsonl",
]
