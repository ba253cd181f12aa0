"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 integration (simulation) failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .io import (ValidationError, atomic_write_text, format_table, load_experiment, read_json,
                 trajectory_table, write_csv, write_json)
from .params import ParameterFileError, ParameterSet, format_parameters, load_parameters
from .simulate import IntegrationError

log = logging.getLogger("ndha")

EXIT_OK, EXIT_INVALID, EXIT_INTEGRATION = 0, 2, 3


def _params(args) -> ParameterSet:
    return load_parameters(args.params) if args.params else ParameterSet.default()


def _experiments(args):
    if not args.experiment:
        raise ValidationError("at least one --experiment is required")
    return tuple(load_experiment(p) for p in args.experiment)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _problem(args, candidates):
    from .estimation import CalibrationProblem
    if not candidates:
        raise ValidationError("at least one --candidates name is required")
    return CalibrationProblem(_experiments(args), tuple(candidates), _params(args),
                              rtol=args.rtol, atol=args.atol)


# -- commands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    from .simulate import simulate
    if len(args.experiment or ()) != 1:
        raise ValidationError("simulate takes exactly one --experiment")
    exp = load_experiment(args.experiment[0])
    traj = simulate(exp, _params(args), args.rtol, args.atol)
    header, rows = trajectory_table(traj)
    text = format_table(header, rows)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    from .sensitivity import SamplePlan, run_gsa
    params = _params(args)
    out = _out_dir(args, "sensitivity")
    plan = SamplePlan.from_classes(params, n=args.samples or 500, seed=args.seed)
    for exp in _experiments(args):
        outputs = tuple(dict.fromkeys(s.name for s in exp.series)) or ("DO",)
        g = run_gsa(exp, params, plan, outputs)
        for o in outputs:
            src = g.src[o]
            stem = f"{exp.label}_{o}".lower()
            write_csv(out / f"{stem}_src.csv", ("time_min", "r2", *src.names),
                      ([t, r, *b] for t, r, b in zip(src.times, src.r2, src.beta)))
            try:
                write_csv(out / f"{stem}_ranking.csv", ("parameter", "sum_beta2"), g.ranking(o))
            except ValueError as exc:
                log.warning("%s/%s: %s", exp.label, o, exc)
    return EXIT_OK


def cmd_fit(args) -> int:
    from .estimation import fit
    from .pipeline import fit_summary
    problem = _problem(args, args.candidates)
    res = fit(problem, n_global=args.starts, seed=args.seed)
    out = _out_dir(args, "fit")
    write_json(out / "fit.json", fit_summary(res))
    atomic_write_text(out / "parameters.txt", format_parameters(res.params(problem)))
    for n in res.names:
        print(f"{n} = {res.values[n]:.6g}  (CV {res.cv[n]:.2f}%)")
    print(f"J = {res.j_opt:.6g}, gamma = {res.gamma:.3g}")
    return EXIT_OK


def cmd_subsets(args) -> int:
    from .estimation import subset_search
    from .pipeline import SUBSET_COLUMNS, subset_rows
    problem = _problem(args, args.candidates)
    table = subset_search(problem, args.max_size, n_global=args.starts, seed=args.seed)
    out = _out_dir(args, "subsets")
    write_csv(out / "subsets.csv", SUBSET_COLUMNS, subset_rows(table))
    print("winner:", " ".join(table.winner.names) if table.winner else "none admissible")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from .diagnostics import diagnostics_report
    report = diagnostics_report(_experiments(args), _params(args), seed=args.seed,
                                rtol=args.rtol, atol=args.atol)
    out = _out_dir(args, "diagnostics")
    write_json(out / "diagnostics.json", report)
    cols = ("n", "r2", "rmse", "ME", "SE", "NC", "f_test", "normal_rejected")
    print(format_table(("series", *cols), ([k, *[v.get(c, "") for c in cols]] for k, v in report.items())), end="")
    return EXIT_OK


def cmd_propagate(args) -> int:
    from .uncertainty import ParameterDistribution, aril, pci_puci, propagate
    params = _params(args)
    if len(args.experiment or ()) != 1:
        raise ValidationError("propagate takes exactly one --experiment")
    exp = load_experiment(args.experiment[0])
    if args.fit:
        f = read_json(args.fit)
        names = tuple(args.candidates or f["names"])
        dist = ParameterDistribution.from_calibration({n: f["values"][n] for n in names},
                                                      {n: f["cv_percent"][n] for n in names})
        params = params.replace({n: f["values"][n] for n in names})
    else:
        if not args.candidates:
            raise ValidationError("give --candidates (class ranges) or --fit (calibrated ranges)")
        dist = ParameterDistribution.from_classes(params, args.candidates)
    outputs = tuple(dict.fromkeys(s.name for s in exp.series)) or ("DO",)
    res = propagate(dist, exp, params, args.samples or 500, args.seed, outputs)
    out = _out_dir(args, "propagation")
    metrics = {}
    for o, band in res.bands.items():
        write_csv(out / f"band_{o}.csv", ("time_min", "lower", "median", "upper"),
                  zip(band.times, band.lower, band.median, band.upper))
        data = next((s for s in exp.series if s.name == o), None)
        if data is not None:
            a, excluded = aril(band, data.times, data.values)
            pci, puci = pci_puci(band, data.times, data.values)
            metrics[o] = {"aril": a, "pci": pci, "puci": puci, "excluded": excluded}
    write_json(out / "propagation.json", {"failures": res.failures, "metrics": metrics,
                                          "parameters": list(dist.names), "seed": args.seed})
    return EXIT_OK


def cmd_scenario(args) -> int:
    from .scenario import GRID_DO, GRID_TNO2, GRID_COLUMNS, ScenarioSpec, grid_rows, grid_scan
    base = ScenarioSpec(do=0.0, tno2=0.0, pH=args.ph, temperature=args.temperature)
    cells = grid_scan(args.do or GRID_DO, args.tno2 or GRID_TNO2, args.tan or [70.0], _params(args),
                      base, rtol=args.rtol, atol=args.atol)
    rows = ([r[c] for c in GRID_COLUMNS] for r in grid_rows(cells))
    if args.out:
        write_csv(args.out, GRID_COLUMNS, rows)
    else:
        sys.stdout.write(format_table(GRID_COLUMNS, rows))
    failed = [c for c in cells if c.error]
    for c in failed:
        log.warning("cell DO=%s TNO2=%s failed: %s", c.do, c.tno2, c.error)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    from .pipeline import load_config, run_pipeline
    if not args.config:
        raise ValidationError("pipeline needs --config")
    config = load_config(args.config)
    overrides = {"rtol": args.rtol, "atol": args.atol}
    if args.seed_given:
        overrides["seed"] = args.seed
    config = replace(config, **overrides)
    manifest = run_pipeline(config, args.out)
    print(f"{len(manifest['stages'])} stage(s) complete; manifest in {Path(args.out or config.output)}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import render_report
    root = Path(args.results)
    if not root.is_dir():
        raise ValidationError(f"{root}: not a results directory")
    text, missing = render_report(root)
    atomic_write_text(root / "report.txt", text)
    sys.stdout.write(text)
    for m in missing:
        log.warning("missing artifact: %s", m)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "sensitivity": cmd_sensitivity, "fit": cmd_fit, "subsets": cmd_subsets,
    "diagnose": cmd_diagnose, "propagate": cmd_propagate, "scenario": cmd_scenario,
    "pipeline": cmd_pipeline, "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="parameter file (defaults when omitted)")
    common.add_argument("--experiment", action="append", help="experiment YAML (repeatable)")
    common.add_argument("--config", help="pipeline YAML")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--rtol", type=float, default=1e-6)
    common.add_argument("--atol", type=float, default=1e-9)
    common.add_argument("--samples", type=int, default=None, help="Monte-Carlo sample count")
    common.add_argument("--candidates", nargs="+", help="parameter names to estimate or vary")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="ndha", description="N2O model simulation and calibration toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("simulate", "sensitivity", "diagnose", "pipeline"):
        sub.add_parser(name, parents=[common])
    for name in ("fit", "subsets"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--starts", type=int, default=200, help="global Latin-hypercube starts")
        if name == "subsets":
            p.add_argument("--max-size", type=int, default=None)
    p = sub.add_parser("propagate", parents=[common])
    p.add_argument("--fit", help="fit.json providing calibrated means and CVs")
    p = sub.add_parser("scenario", parents=[common])
    p.add_argument("--do", type=float, nargs="+")
    p.add_argument("--tno2", type=float, nargs="+")
    p.add_argument("--tan", type=float, nargs="+")
    p.add_argument("--ph", type=float, default=7.5)
    p.add_argument("--temperature", type=float, default=20.0)
    p = sub.add_parser("report", parents=[common])
    p.add_argument("results", help="pipeline output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ParameterFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except IntegrationError as exc:
        print(f"integration failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION
    except Exception as exc:
        from .pipeline import PipelineError
        if isinstance(exc, PipelineError) and isinstance(exc.__cause__, IntegrationError):
            print(f"integration failure: {exc}", file=sys.stderr)
            return EXIT_INTEGRATION
        if isinstance(exc, (PipelineError, ValueError, KeyError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
        raise


if __name__ == "__main__":
    raise SystemExit(main())
