"""Command-line entry point ``lpadapt``.

Exit status is 0 on success, 2 when inputs fail validation and 3 on I/O
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .adversarial import AdversarialSpec, lower_bound_errors, verify_Z_moment
from .confidence import confset_low_smoothness, confset_segment, confset_two_point
from .estimation import LepskiConfig, adaptive_estimate, lepski_select
from .harness import ExperimentSpec, run_experiment, summarize, write_summary
from .sequence_model import CoeffField, ObservationModel, make_truth, simulate_observation
from .testing import CONFIG_FIELDS, TestConfig, boundary_nulls, calibrate_constants, estimate_rhat, run_test

log = logging.getLogger("lpadapt")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3


class ValidationError(ValueError):
    pass


def _common(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("common")
    g.add_argument("--n", type=float, help="sample size")
    g.add_argument("--s", type=float, help="null smoothness")
    g.add_argument("--t", type=float, help="alternative smoothness")
    g.add_argument("--p", type=float, help="loss exponent")
    g.add_argument("--B", type=float, help="Besov radius")
    g.add_argument("--alpha", type=float, help="error budget")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--reps", type=int, help="Monte Carlo replications")
    g.add_argument("--out", help="output path (stdout when omitted)")
    g.add_argument("--config", help="JSON file with defaults for the flags")


def _test_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--E1", type=float)
    parser.add_argument("--E2", type=float)
    parser.add_argument("--Cprime", type=float)
    parser.add_argument("--norm-mode", dest="norm_mode", choices=("0pp", "0p2"))


def _load_config(args) -> dict:
    if not args.config:
        return {}
    doc = json.loads(Path(args.config).read_text())
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    return doc


def _test_config(args) -> TestConfig:
    doc = {"E1": 1.0, "E2": 1.0, "Cprime": 1.0, "norm_mode": "0pp"}
    doc.update(_load_config(args))
    for k in CONFIG_FIELDS:
        v = getattr(args, k, None)
        if v is not None:
            doc[k] = v
    missing = [k for k in CONFIG_FIELDS if k not in doc]
    if missing:
        raise ValidationError(f"missing parameters: {', '.join(missing)}")
    return TestConfig.from_dict({k: doc[k] for k in CONFIG_FIELDS})


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


def _read_field(path: str) -> CoeffField:
    return CoeffField.load(path)


def cmd_simulate(args) -> None:
    doc = _load_config(args)
    n = args.n if args.n is not None else doc.get("n")
    if n is None:
        raise ValidationError("--n is required")
    L = args.L
    if args.truth == "zero":
        truth = make_truth("zero", L)
    else:
        r = args.s if args.s is not None else doc.get("s")
        B = args.B if args.B is not None else doc.get("B")
        truth = make_truth(args.truth, L, r=r, B=B, level=args.level, seed=args.seed)
    obs = simulate_observation(truth, ObservationModel(n=n, seed=args.seed, L=L))
    if args.out:
        obs.save(args.out)
    else:
        print(obs.to_json())


def cmd_test(args) -> None:
    cfg = _test_config(args)
    obs = _read_field(args.input)
    res = run_test(obs, cfg, args.r)
    th = res.thresholds
    _emit(json.dumps({
        "decision": res.decision,
        "r": th.r,
        "levels": th.levels.tolist(),
        "T": res.T_values.tolist(),
        "t_n": th.t_n.tolist(),
        "level_flags": list(res.level_flags),
        "T_tilde": res.T_tilde,
        "t_tilde": th.t_tilde,
        "infimum_flag": res.infimum_flag,
        "rho": th.rho,
    }), args.out)


def cmd_confset(args) -> None:
    cfg = _test_config(args)
    obs = _read_field(args.input)
    if args.regime == "two_point_high_s":
        cs = confset_two_point(obs, cfg, args.constant)
    elif args.regime == "low_s_full_model":
        cs = confset_low_smoothness(obs, cfg, args.constant)
    else:
        cs = confset_segment(obs, cfg, args.constant, args.grid)
    for w in cs.warnings:
        log.warning(w)
    _emit(cs.to_json(), args.out)


def cmd_lepski(args) -> None:
    doc = _load_config(args)
    n = args.n if args.n is not None else doc.get("n")
    p = args.p if args.p is not None else doc.get("p")
    if n is None or p is None:
        raise ValidationError("--n and --p are required")
    cfg = LepskiConfig(p=p, n=n, j_max=args.j_max, D_prime=args.D_prime, norm_mode=args.norm_mode or "0pp")
    obs = _read_field(args.input)
    jhat = lepski_select(obs, cfg)
    est = adaptive_estimate(obs, cfg)
    if args.out:
        est.save(args.out)
        print(json.dumps({"jhat": jhat}))
    else:
        print(json.dumps({"jhat": jhat, "estimate": json.loads(est.to_json())}))


def cmd_rhat(args) -> None:
    cfg = _test_config(args)
    obs = _read_field(args.input)
    _emit(json.dumps({"rhat": estimate_rhat(obs, cfg, args.grid)}), args.out)


def cmd_lowerbound(args) -> None:
    doc = _load_config(args)
    vals = {k: getattr(args, k) if getattr(args, k) is not None else doc.get(k) for k in ("n", "t", "p")}
    if any(v is None for v in vals.values()):
        raise ValidationError("--n, --t and --p are required")
    spec = AdversarialSpec(args.upsilon, vals["t"], vals["p"], vals["n"])
    res = verify_Z_moment(spec, args.reps or 10_000, args.seed)
    out = {"upsilon": spec.upsilon, "j": spec.j, "estimate": res.estimate, "stderr": res.stderr,
           "bound": res.bound, "within": res.within}
    if args.with_test:
        cfg = _test_config(args)
        err = lower_bound_errors(cfg, spec, args.reps or 10_000, args.seed)
        out.update(type_one=err.type_one, type_two=err.type_two, error_sum=err.total, error_stderr=err.stderr)
    _emit(json.dumps(out), args.out)


def cmd_experiment(args) -> None:
    doc = _load_config(args)
    overrides = {
        "scenario": args.scenario, "n_values": args.n_values, "r_values": args.r_values,
        "p": args.p, "s": args.s, "t": args.t, "B": args.B, "alpha": args.alpha,
        "upsilon": args.upsilon, "replications": args.reps, "out": args.out, "regime": args.regime,
        "constant": args.constant, "E1": args.E1, "E2": args.E2, "Cprime": args.Cprime,
        "norm_mode": args.norm_mode,
    }
    if args.n is not None and args.n_values is None:
        overrides["n_values"] = [args.n]
    doc.update({k: v for k, v in overrides.items() if v is not None})
    doc["seed"] = args.seed if args.seed is not None else doc.get("seed", 0)
    if "scenario" not in doc:
        raise ValidationError("--scenario is required")
    spec = ExperimentSpec.from_dict(doc)
    records = run_experiment(spec)
    rows = summarize(records)
    if args.summary:
        write_summary(rows, args.summary)
    if spec.out is None:
        for rec in records:
            print(rec.to_json())
    for row in rows:
        log.info("%s n=%g r=%g %s=%.4g (se %.2g)", row["scenario"], row["n"], row["r"], row["metric"],
                 row["value"], row["stderr"])


def cmd_calibrate(args) -> None:
    cfg = _test_config(args)
    levels = range(cfg.j + 1) if args.all_levels else None
    res = calibrate_constants(
        cfg,
        null_generator=lambda c: boundary_nulls(c, levels),
        replications=args.reps or 1000,
        seed=args.seed,
        family=args.family,
    )
    _emit(json.dumps({"E1": res.E1, "E2": res.E2, "Cprime": res.Cprime,
                      "config": json.loads(res.apply(cfg).to_json())}), args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpadapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit a noisy observation of a generated truth")
    _common(p)
    p.add_argument("--truth", choices=("zero", "boundary", "random"), default="zero")
    p.add_argument("--level", type=int, help="active level of a boundary truth")
    p.add_argument("--L", type=int, default=8, help="simulation cutoff level")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("test", help="run the composite test on a coefficient file")
    _common(p)
    _test_flags(p)
    p.add_argument("input")
    p.add_argument("--r", type=float, help="evaluate the family member Psi_n(r) instead")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("confset", help="emit a confidence set for a coefficient file")
    _common(p)
    _test_flags(p)
    p.add_argument("input")
    p.add_argument("--regime", choices=("two_point_high_s", "low_s_full_model", "segment"),
                   default="two_point_high_s")
    p.add_argument("--constant", type=float, default=1.0, help="risk constant U_p, D or U'_p")
    p.add_argument("--grid", type=int, default=32, help="r grid resolution (segment)")
    p.set_defaults(func=cmd_confset)

    p = sub.add_parser("lepski", help="print the Lepski level and estimate")
    _common(p)
    p.add_argument("input")
    p.add_argument("--j-max", dest="j_max", type=int)
    p.add_argument("--D-prime", dest="D_prime", type=float, default=1.0)
    p.add_argument("--norm-mode", dest="norm_mode", choices=("0pp", "0p2"))
    p.set_defaults(func=cmd_lepski)

    p = sub.add_parser("rhat", help="estimate the smoothness on [t, s]")
    _common(p)
    _test_flags(p)
    p.add_argument("input")
    p.add_argument("--grid", type=int, default=32)
    p.set_defaults(func=cmd_rhat)

    p = sub.add_parser("lowerbound", help="check the likelihood-ratio moment of the sparse prior")
    _common(p)
    _test_flags(p)
    p.add_argument("--upsilon", type=float, default=0.1)
    p.add_argument("--with-test", action="store_true", help="also report the test's error sum")
    p.set_defaults(func=cmd_lowerbound)

    p = sub.add_parser("experiment", help="run a Monte Carlo scenario")
    _common(p)
    _test_flags(p)
    p.add_argument("--scenario", choices=("null_level", "power_curve", "coverage", "diameter_rate",
                                          "risk_rate", "lower_bound"))
    p.add_argument("--n-values", dest="n_values", type=float, nargs="+")
    p.add_argument("--r-values", dest="r_values", type=float, nargs="+")
    p.add_argument("--upsilon", type=float)
    p.add_argument("--regime", choices=("two_point_high_s", "low_s_full_model", "segment"))
    p.add_argument("--constant", type=float)
    p.add_argument("--summary", help="write the summary CSV here")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("calibrate", help="calibrate the test constants by simulation")
    _common(p)
    _test_flags(p)
    p.add_argument("--family", action="store_true", help="also make Psi_n(r) monotone in r")
    p.add_argument("--all-levels", action="store_true", help="use boundary nulls at every level 0..j")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except OSError as exc:
        print(f"lpadapt: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, KeyError, json.JSONDecodeError) as exc:
        print(f"lpadapt: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
