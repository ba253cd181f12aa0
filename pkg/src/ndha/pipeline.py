"""Staged calibration: per stage sensitivity ranking, subset selection, fit and
diagnostics, with estimates frozen for later stages.

A stage may only estimate parameters that no earlier stage estimated, unless it
is marked ``reopen``; re-opened stages refit their candidates starting from the
current values so coupled stages can be iterated.

Every completed stage is recorded in ``checkpoint.json``; rerunning the same
configuration into the same directory resumes after the last completed stage.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .diagnostics import diagnostics_report, janus, residual_series
from .estimation import CalibrationProblem, FitResult, fit, subset_search
from .io import ValidationError, atomic_write_text, load_experiment, read_json, write_csv, write_json
from .params import PARAM_INDEX, ParameterSet, format_parameters, load_parameters

log = logging.getLogger(__name__)

SELECT_MODES = ("search", "all")


class PipelineError(RuntimeError):
    """A stage failed; completed stages are kept in the checkpoint."""


@dataclass(frozen=True)
class StageConfig:
    id: str
    datasets: tuple[str, ...]
    candidates: tuple[str, ...]
    select: str = "search"
    max_size: int | None = None
    reopen: bool = False
    sensitivity_samples: int = 0
    validation: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[StageConfig, ...]
    data_dir: Path
    params_path: Path | None = None
    output: Path = Path("results")
    seed: int = 0
    rtol: float = 1e-6
    atol: float = 1e-9
    fit_options: dict = field(default_factory=dict)
    propagate: dict | None = None
    scenario: dict | None = None
    source_text: str = ""

    def digest(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()[:16]

    def base_parameters(self) -> ParameterSet:
        return load_parameters(self.params_path) if self.params_path else ParameterSet.default()


def _require(cond, msg):
    if not cond:
        raise ValidationError(msg)


def parse_config(text: str, base_dir: str | Path = ".", source: str = "<config>") -> PipelineConfig:
    """Validate a pipeline YAML document; relative paths resolve against ``base_dir``."""
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    _require(isinstance(doc, dict), f"{source}: pipeline config must be a mapping")
    base_dir = Path(base_dir)
    data_dir = base_dir / doc.get("data_dir", ".")
    stages, seen_ids = [], set()
    estimated_all: set[str] = set()
    for i, st in enumerate(doc.get("stages") or []):
        where = f"{source}: stage {i + 1}"
        _require(isinstance(st, dict), f"{where}: must be a mapping")
        sid = str(st.get("id", f"stage_{i + 1}"))
        _require(sid not in seen_ids, f"{where}: duplicate stage id {sid!r}")
        seen_ids.add(sid)
        cands = tuple(st.get("candidates") or ())
        _require(cands, f"{where} ({sid}): no candidate parameters")
        unknown = [c for c in cands if c not in PARAM_INDEX]
        _require(not unknown, f"{where} ({sid}): unknown parameter(s) {unknown}")
        datasets = tuple(st.get("datasets") or ())
        _require(datasets, f"{where} ({sid}): no datasets")
        validation = tuple(st.get("validation") or ())
        for d in datasets + validation:
            _require((data_dir / d).is_file(), f"{where} ({sid}): dataset {d!r} not found in {data_dir}")
        select = st.get("select", "search")
        _require(select in SELECT_MODES, f"{where} ({sid}): select must be one of {SELECT_MODES}")
        reopen = bool(st.get("reopen", False))
        if select == "all" and not reopen:
            clash = sorted(estimated_all & set(cands))
            _require(not clash, f"{where} ({sid}): {clash} already estimated; mark the stage 'reopen'")
        if select == "all":
            estimated_all |= set(cands)
        stages.append(StageConfig(sid, datasets, cands, select, st.get("max_size"), reopen,
                                  int(st.get("sensitivity_samples", 0)), validation))
    params_path = doc.get("params")
    return PipelineConfig(
        stages=tuple(stages), data_dir=data_dir,
        params_path=base_dir / params_path if params_path else None,
        output=Path(doc.get("output", "results")),
        seed=int(doc.get("seed", 0)), rtol=float(doc.get("rtol", 1e-6)), atol=float(doc.get("atol", 1e-9)),
        fit_options=dict(doc.get("fit") or {}), propagate=doc.get("propagate"),
        scenario=doc.get("scenario"), source_text=text)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return parse_config(text, path.parent, str(path))


# -- artifacts ---------------------------------------------------------------

def fit_summary(result: FitResult) -> dict:
    """JSON-ready record: best fit, CV, correlation and identifiability block."""
    return {
        "names": list(result.names),
        "values": result.values,
        "cv_percent": result.cv,
        "correlation": None if result.correlation is None else result.correlation.tolist(),
        "gamma": result.gamma,
        "j_opt": result.j_opt,
        "aic": result.aic,
        "log_rde": result.log_rde,
        "inv_mode": result.inv_mode,
        "beale_j_crit": result.beale_j_crit,
        "n_points": result.n_points,
        "condition_number": result.condition_number,
        "evaluations": result.evaluations,
    }


SUBSET_COLUMNS = ("size", "parameters", "aic", "log_rde", "inv_mode", "values", "correlation",
                  "gamma", "j_opt", "admissible", "error")


def subset_rows(table) -> list[list]:
    rows = []
    for r in table.rows:
        res = r.result
        if res is None:
            rows.append([r.size, " ".join(r.names), "", "", "", "", "", "", "", False, r.error or ""])
            continue
        corr = "" if res.correlation is None or len(r.names) < 2 else " ".join(
            f"{res.correlation[i, j]:.3f}" for i in range(len(r.names)) for j in range(i + 1, len(r.names)))
        rows.append([r.size, " ".join(r.names), res.aic, res.log_rde, res.inv_mode,
                     " ".join(f"{res.values[n]:.6g}" for n in r.names), corr, res.gamma, res.j_opt,
                     res.admissible(), ""])
    return rows


def _rmse_by_series(problem, params) -> dict:
    return {f"{label}:{name}": float(np.sqrt(np.mean(res.residuals ** 2)))
            for label, name, _, _, res in residual_series(problem.experiments, params, problem.rtol, problem.atol)}


def _sensitivity(stage, experiments, params, seed, rtol, atol) -> dict:
    from .sensitivity import SamplePlan, run_gsa
    plan = SamplePlan.from_classes(params, n=stage.sensitivity_samples, seed=seed)
    total: dict[str, float] = {}
    for exp in experiments:
        outputs = tuple(dict.fromkeys(s.name for s in exp.series))
        g = run_gsa(exp, params, plan, outputs)
        for o in outputs:
            try:
                for name, score in g.ranking(o):
                    total[name] = total.get(name, 0.0) + score
            except ValueError as exc:
                log.info("stage %s: %s / %s not ranked: %s", stage.id, exp.label, o, exc)
    return dict(sorted(total.items(), key=lambda kv: (-kv[1], kv[0])))


# -- execution ---------------------------------------------------------------

def run_stage(stage: StageConfig, config: PipelineConfig, params: ParameterSet, seed: int,
              out_dir: Path) -> tuple[ParameterSet, dict]:
    experiments = tuple(load_experiment(config.data_dir / d) for d in stage.datasets)
    problem = CalibrationProblem(experiments, stage.candidates, params, rtol=config.rtol, atol=config.atol)
    fit_kw = {"seed": seed, **config.fit_options}
    artifacts = []
    record: dict[str, Any] = {"id": stage.id, "seed": seed, "datasets": list(stage.datasets),
                              "candidates": list(stage.candidates), "select": stage.select,
                              "reopen": stage.reopen}
    record["start_values"] = {c: params[c] for c in stage.candidates}

    if stage.sensitivity_samples:
        ranking = _sensitivity(stage, experiments, params, seed, config.rtol, config.atol)
        write_csv(out_dir / "sensitivity.csv", ("parameter", "sum_beta2"), ranking.items())
        artifacts.append("sensitivity.csv")
        record["sensitivity_top"] = list(ranking)[:10]

    if stage.select == "search":
        table = subset_search(problem, stage.max_size, **fit_kw)
        write_csv(out_dir / "subsets.csv", SUBSET_COLUMNS, subset_rows(table))
        artifacts.append("subsets.csv")
        if table.winner is None:
            raise PipelineError(f"stage {stage.id}: no admissible parameter subset")
        result = table.winner.result
        problem = problem.with_candidates(result.names)
    else:
        start = {c: params[c] for c in stage.candidates} if stage.reopen else None
        result = fit(problem, start=start, **fit_kw)

    new_params = params.replace(result.values)
    summary = fit_summary(result)
    summary["rmse"] = _rmse_by_series(problem, new_params)
    write_json(out_dir / "fit.json", summary)
    artifacts.append("fit.json")

    tol = {"rtol": config.rtol, "atol": config.atol}
    diag = diagnostics_report(experiments, new_params, seed=seed, **tol)
    if stage.validation:
        vexp = tuple(load_experiment(config.data_dir / d) for d in stage.validation)
        cal = np.concatenate([r[4].residuals for r in residual_series(experiments, new_params, **tol)])
        val = np.concatenate([r[4].residuals for r in residual_series(vexp, new_params, **tol)])
        diag["validation"] = diagnostics_report(vexp, new_params, seed=seed, **tol)
        diag["janus"] = janus(cal, val)
    write_json(out_dir / "diagnostics.json", diag)
    artifacts.append("diagnostics.json")

    record["estimated"] = result.values
    record["cv_percent"] = result.cv
    record["artifacts"] = artifacts
    return new_params, record


def _post_processing(config: PipelineConfig, params: ParameterSet, estimates: dict, out_dir: Path) -> list:
    from .uncertainty import ParameterDistribution, aril, pci_puci, propagate
    artifacts = []
    if config.propagate:
        spec = config.propagate
        exp = load_experiment(config.data_dir / spec["dataset"])
        names = tuple(spec.get("parameters") or estimates)
        if spec.get("distribution", "calibrated") == "class":
            dist = ParameterDistribution.from_classes(params, names)
        else:
            dist = ParameterDistribution.from_calibration({n: params[n] for n in names},
                                                          {n: estimates[n] for n in names})
        outputs = tuple(spec.get("outputs") or [s.name for s in exp.series])
        res = propagate(dist, exp, params, int(spec.get("samples", 500)), config.seed, outputs)
        metrics = {}
        for o, band in res.bands.items():
            write_csv(out_dir / f"band_{o}.csv", ("time_min", "lower", "median", "upper"),
                      zip(band.times, band.lower, band.median, band.upper))
            artifacts.append(f"post/band_{o}.csv")
            data = next((s for s in exp.series if s.name == o), None)
            if data is not None:
                a, excluded = aril(band, data.times, data.values)
                pci, puci = pci_puci(band, data.times, data.values)
                metrics[o] = {"aril": a, "pci": pci, "puci": puci, "excluded": excluded}
        write_json(out_dir / "propagation.json", {"failures": res.failures, "metrics": metrics,
                                                  "parameters": list(names)})
        artifacts.append("post/propagation.json")
    if config.scenario:
        from .scenario import GRID_DO, GRID_TNO2, GRID_COLUMNS, grid_rows, grid_scan
        spec = config.scenario
        cells = grid_scan(spec.get("do", GRID_DO), spec.get("tno2", GRID_TNO2), spec.get("tan", [70.0]),
                          params)
        write_csv(out_dir / "scenario_grid.csv", GRID_COLUMNS,
                  ([r[c] for c in GRID_COLUMNS] for r in grid_rows(cells)))
        artifacts.append("post/scenario_grid.csv")
    return artifacts


def run_pipeline(config: PipelineConfig, out_dir: str | Path | None = None, resume: bool = True) -> dict:
    """Execute every stage, then optional propagation and scenario grid; returns the manifest."""
    out = Path(out_dir or config.output)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.json"
    params = config.base_parameters()
    records: list[dict] = []
    estimates_cv: dict[str, float] = {}
    if resume and ckpt_path.exists():
        ck = read_json(ckpt_path)
        if ck.get("config_digest") == config.digest():
            records = ck["stages"]
            params = params.replace(ck["params"])
            for r in records:
                estimates_cv.update(r["cv_percent"])
            log.info("resuming after %d completed stage(s)", len(records))
        else:
            log.warning("checkpoint belongs to a different configuration; starting over")

    manifest = {
        "package_version": __version__, "config_digest": config.digest(), "seed": config.seed,
        "rtol": config.rtol, "atol": config.atol, "fit_options": config.fit_options,
        "parameter_file": str(config.params_path) if config.params_path else None,
    }
    done = {r["id"] for r in records}
    for k, stage in enumerate(config.stages):
        if stage.id in done:
            continue
        estimated_before = {n for r in records for n in r["estimated"]}
        if stage.select == "search" and not stage.reopen and estimated_before & set(stage.candidates):
            clash = sorted(estimated_before & set(stage.candidates))
            raise PipelineError(f"stage {stage.id}: {clash} already estimated; mark the stage 'reopen'")
        stage_dir = out / "stages" / f"{k + 1:02d}_{stage.id}"
        t0 = time.perf_counter()
        try:
            params, rec = run_stage(stage, config, params, config.seed + k, stage_dir)
        except Exception as exc:
            write_json(out / "failure.json", {"stage": stage.id, "error": f"{type(exc).__name__}: {exc}"})
            raise PipelineError(f"stage {stage.id} failed: {exc}") from exc
        rec["frozen_inputs"] = {n: params[n] for r in records for n in r["estimated"]
                                if n not in rec["estimated"]}
        rec["artifacts"] = [f"stages/{stage_dir.name}/{a}" for a in rec["artifacts"]]
        rec["seconds"] = round(time.perf_counter() - t0, 1)
        records.append(rec)
        estimates_cv.update(rec["cv_percent"])
        write_json(ckpt_path, {"config_digest": config.digest(), "stages": records,
                               "params": {n: params[n] for r in records for n in r["estimated"]}})
        log.info("stage %s done in %.1f s: %s", stage.id, rec["seconds"], rec["estimated"])

    if (out / "failure.json").exists():
        (out / "failure.json").unlink()
    artifacts = [a for r in records for a in r["artifacts"]]
    if records:
        artifacts += _post_processing(config, params, estimates_cv, out / "post")
        atomic_write_text(out / "parameters.txt", format_parameters(params))
        artifacts += ["parameters.txt", "checkpoint.json"]
    final = {n: params[n] for r in records for n in r["estimated"]}
    manifest.update(stages=records, estimates=final, cv_percent=estimates_cv, artifacts=sorted(artifacts))
    write_json(out / "manifest.json", manifest)
    return manifest

