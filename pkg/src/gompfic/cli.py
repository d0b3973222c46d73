"""Command-line interface: ``gompfic {fit,select,rates,simulate,oracle}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .inference import FitError, InformationError, StartConfig, fit_full, fit_null
from .model import ModelDomainError
from .selection import FocusSpec
from .simulation import (
    CRITERIA,
    SCENARIO_PARAMS,
    ScenarioError,
    make_scenario,
    mae_oracle_study,
    random_geometries,
    run_scenario,
    window_scenarios,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DESK_REPS = 200
FULL_REPS = 1000
DESK_TARGETS = (10_000,)
FULL_TARGETS = (10_000, 20_000, 105_000)

log = logging.getLogger("gompfic")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _criteria(text):
    out = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in out if c not in CRITERIA]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown criteria {bad}; choose from {','.join(CRITERIA)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gompfic", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        if data:
            sp.add_argument("--data", required=True, type=Path, help="CSV with columns id,age_at_death")
            sp.add_argument("--truncation", type=float, default=90.0, help="entry age (default 90)")
        sp.add_argument("--origin-age", type=float, default=60.0)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path, default=Path("gompfic-out"), help="output directory")

    def selection(sp, default):
        sp.add_argument("--focus", action="append", default=None,
                        help="sigma2, curvature@AGE, loghaz@AGE or survival@AGE (repeatable)")
        sp.add_argument("--criteria", type=_criteria, default=default,
                        help="comma-separated subset of " + ",".join(CRITERIA))

    sp = sub.add_parser("fit", help="fit both models and write report.json")
    common(sp)
    selection(sp, ["lrt"])
    sp = sub.add_parser("select", help="fit and apply the selection criteria")
    common(sp)
    selection(sp, list(CRITERIA))
    sp = sub.add_parser("rates", help="write single-year death rates with fitted hazards")
    common(sp)

    sp = sub.add_parser("simulate", help="run a Monte Carlo scenario and write metrics.json")
    common(sp, data=False)
    selection(sp, list(CRITERIA))
    sp.add_argument("--scenario", choices=sorted(SCENARIO_PARAMS), default=None)
    sp.add_argument("--config", type=Path, default=None, help="JSON scenario file")
    sp.add_argument("--target-n", type=int, action="append", default=None,
                    help="expected sample size (repeatable)")
    sp.add_argument("--reps", type=int, default=None)
    sp.add_argument("--window", type=int, choices=(80, 85, 90), default=None,
                    help="entry age; the cohort stays calibrated at age 90")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--paper-scale", action="store_true",
                    help="1,000 replications at n = 10k, 20k and 105k")

    sp = sub.add_parser("oracle", help="check closed-form risks against simulation")
    common(sp, data=False)
    sp.add_argument("--draws", type=int, default=1_000_000)
    sp.add_argument("--geometries", type=int, default=50)
    return p


def _config(args) -> io.AnalysisConfig:
    foci = None
    if getattr(args, "focus", None):
        foci = [FocusSpec.parse(f, args.origin_age) for f in args.focus]
    kwargs = dict(origin_age=args.origin_age, seed=args.seed, foci=foci)
    if hasattr(args, "truncation"):
        kwargs["truncation_age"] = args.truncation
    if getattr(args, "criteria", None) is not None:
        kwargs["criteria"] = args.criteria
    return io.AnalysisConfig(**kwargs)


def _fits(sample, config):
    starts = StartConfig(sigma2_starts=tuple(config.sigma2_starts))
    fn = fit_null(sample, starts)
    return fn, fit_full(sample, starts, null_fit=fn)


def cmd_analyze(args, config):
    data = io.read_dataset(args.data, config)
    for line in data.rejected:
        log.warning("rejected %s", line)
    report = io.analyze(data.sample, config, source=data)
    path = args.out / "report.json"
    io.write_json(path, report)
    ff = report["fits"]["gamma_gompertz"]
    print(f"n={data.sample.n}  sigma2_hat={ff['sigma2']:.6g}  boundary={ff['boundary_hit']}")
    if "lrt" in report:
        print(f"LRT T={report['lrt']['statistic']:.4f}  p={report['lrt']['p_value']:.4g}")
    for row in report.get("criteria_table", []):
        print(f"{row['criterion']:<40} gamma-Gompertz {row['gamma_gompertz']:>14.6g}"
              f"  Gompertz {row['gompertz']:>14.6g}  -> {row['chosen']}")
    print(f"wrote {path}")


def cmd_rates(args, config):
    data = io.read_dataset(args.data, config)
    rows = io.rate_table(data.sample, _fits(data.sample, config), config)
    path = args.out / "rates.csv"
    io.write_csv(path, io.RATE_COLUMNS, rows)
    print(f"{len(rows)} age rows; wrote {path}")


def cmd_simulate(args, config):
    if args.paper_scale:
        io.warn_paper_scale()
    reps = args.reps or (FULL_REPS if args.paper_scale else DESK_REPS)
    if args.config is not None:
        if args.scenario is not None:
            raise io.DataError("give either --scenario or --config, not both")
        base = io.load_scenario_config(args.config)
        targets = args.target_n or [base.target_n]
        bases = [replace(base, target_n=t) for t in targets]
        if args.reps is not None or args.paper_scale:
            bases = [replace(b, replications=reps) for b in bases]
    else:
        name = args.scenario or "S1"
        targets = args.target_n or list(FULL_TARGETS if args.paper_scale else DESK_TARGETS)
        bases = [make_scenario(name, t, replications=reps, master_seed=args.seed,
                               origin_age=args.origin_age) for t in targets]
    if args.window is not None:
        bases = [window_scenarios(b, [float(args.window)])[0] for b in bases]
    foci = config.foci
    runs = []
    for sc in bases:
        t0 = time.perf_counter()
        m = run_scenario(sc, criteria=config.criteria, foci=foci, workers=args.workers)
        runs.append(io.metrics_document(m))
        cols, rows = io.replication_rows(m)
        io.write_csv(args.out / f"replications_{sc.name}_n{sc.target_n}_w{sc.window_age:g}.csv", cols, rows)
        summary = "  ".join(f"{k}={v:.3f}" for k, v in m.proportion_full.items())
        print(f"{sc.name} n~{sc.target_n} window {sc.window_age:g} "
              f"({time.perf_counter() - t0:.1f}s): {summary}")
    doc = {"schema_version": io.SCHEMA_VERSION, "software": {"name": "gompfic", "version": __version__},
           "runs": runs}
    path = args.out / "metrics.json"
    io.write_json(path, doc)
    print(f"wrote {path}")


def cmd_oracle(args, config):
    geos = random_geometries(args.geometries, np.random.default_rng(args.seed))
    rows = mae_oracle_study(geos, draws=args.draws, seed=args.seed)
    cols = list(rows[0])
    path = args.out / "oracle.csv"
    io.write_csv(path, cols, rows)
    worst = max(r["max_rel_gap"] for r in rows)
    print(f"{len(rows)} geometries, max relative gap {worst:.3g}; wrote {path}")


COMMANDS = {"fit": cmd_analyze, "select": cmd_analyze, "rates": cmd_rates,
            "simulate": cmd_simulate, "oracle": cmd_oracle}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    logging.captureWarnings(True)
    try:
        config = _config(args)
    except ValueError as exc:
        parser.error(str(exc))
    try:
        COMMANDS[args.command](args, config)
    except (FitError, InformationError, ScenarioError, ModelDomainError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"gompfic: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.DataError, OSError, ValueError) as exc:
        print(f"gompfic: data error: {exc}", file=sys.stderr)
        for line in getattr(exc, "problems", [])[:20]:
            print(f"  {line}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
