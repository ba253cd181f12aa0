"""Experiment files, measured-series CSVs, JSON bundles and atomic writes.

An experiment file is one YAML document::

    label: NOB_1
    environment: {pH: 7.5, temperature: 25.0, aeration: false, stripping: false}
    horizon_min: 172
    initial: {S_O2: 24.0, X_AOB: 250.1}
    pulses:
      - {time: 20, species: S_TNO2, delta: 10.0}
    series:
      - {name: DO, file: nob_1_do.csv, sigma: 0.36}

Series files are two-column CSV (``time_min,value``) resolved relative to the
experiment file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import yaml

from .model import COMPONENT_INDEX, COMPONENTS, Environment
from .simulate import Experiment, MeasuredSeries, Pulse, REPORT_INTERVAL_MIN


class ValidationError(ValueError):
    """Input file content that cannot be turned into a valid object."""


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: str | Path, data: Any) -> None:
    atomic_write_text(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text())


def format_table(header: Iterable[str], rows: Iterable[Iterable[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(header))
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: str | Path, header: Iterable[str], rows: Iterable[Iterable[Any]]) -> None:
    atomic_write_text(path, format_table(header, rows))


def read_series_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["time_min", "value"]:
            raise ValidationError(f"{path}: expected header 'time_min,value'")
        t, v = [], []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                t.append(float(row[0]))
                v.append(float(row[1]))
            except (ValueError, IndexError):
                raise ValidationError(f"{path}:{lineno}: bad row {row!r}") from None
    t = np.array(t)
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise ValidationError(f"{path}: times must be strictly increasing")
    return t, np.array(v)


def write_series_csv(path: str | Path, times, values) -> None:
    write_csv(path, ("time_min", "value"), zip(np.asarray(times, float), np.asarray(values, float)))


def _line_of(node, *keys) -> int | None:
    """1-based source line of a nested YAML node addressed by mapping keys / sequence indices."""
    for key in keys:
        if isinstance(node, yaml.MappingNode):
            node = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            return None
        if node is None:
            return None
    return node.start_mark.line + 1


def parse_experiment(text: str, base_dir: str | Path = ".", source: str = "<experiment>") -> Experiment:
    try:
        doc = yaml.safe_load(text)
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    if not isinstance(doc, Mapping):
        raise ValidationError(f"{source}: experiment must be a mapping")
    lines = text.splitlines()

    def fail(msg, *keys):
        ln = _line_of(root, *keys)
        where = f"{source}:{ln}: " if ln else f"{source}: "
        quoted = f" -> {lines[ln - 1].strip()!r}" if ln and ln <= len(lines) else ""
        raise ValidationError(where + msg + quoted)

    env_doc = doc.get("environment") or {}
    try:
        env = Environment(
            pH=float(env_doc.get("pH", 7.5)),
            temperature=float(env_doc.get("temperature", 25.0)),
            aeration_enabled=bool(env_doc.get("aeration", False)),
            stripping_enabled=bool(env_doc.get("stripping", False)),
            pka_nh4=env_doc.get("pka_nh4"),
            pka_hno2=env_doc.get("pka_hno2"),
        )
    except (ValueError, TypeError) as exc:
        fail(str(exc), "environment")

    y0 = np.zeros(len(COMPONENTS))
    for name, value in (doc.get("initial") or {}).items():
        if name not in COMPONENT_INDEX:
            fail(f"unknown component {name!r} in initial state", "initial", name)
        y0[COMPONENT_INDEX[name]] = float(value)

    pulses = []
    for i, p in enumerate(doc.get("pulses") or []):
        if not isinstance(p, Mapping) or "species" not in p:
            fail("pulse is missing its species name", "pulses", i)
        try:
            pulses.append(Pulse(float(p["time"]), str(p["species"]), float(p["delta"])))
        except (ValueError, KeyError, TypeError) as exc:
            fail(f"invalid pulse: {exc}", "pulses", i)

    series = []
    base_dir = Path(base_dir)
    for i, s in enumerate(doc.get("series") or []):
        try:
            t, v = read_series_csv(base_dir / s["file"])
            series.append(MeasuredSeries(s["name"], t, v, float(s["sigma"])))
        except (ValueError, KeyError, TypeError, OSError) as exc:
            fail(f"invalid series: {exc}", "series", i)

    try:
        return Experiment(
            label=str(doc.get("label", Path(source).stem)),
            environment=env,
            initial=y0,
            pulses=tuple(pulses),
            horizon=float(doc.get("horizon_min", 60.0)),
            series=tuple(series),
            report_interval=float(doc.get("report_interval_min", REPORT_INTERVAL_MIN)),
        )
    except ValueError as exc:
        fail(str(exc))


def load_experiment(path: str | Path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return parse_experiment(text, path.parent, str(path))


def experiment_document(exp: Experiment, series_files: Mapping[str, str] | None = None) -> dict:
    env = exp.environment
    env_doc = {"pH": env.pH, "temperature": env.temperature,
               "aeration": env.aeration_enabled, "stripping": env.stripping_enabled}
    if env.pka_nh4 is not None:
        env_doc["pka_nh4"] = env.pka_nh4
    if env.pka_hno2 is not None:
        env_doc["pka_hno2"] = env.pka_hno2
    series_files = series_files or {}
    return {
        "label": exp.label,
        "environment": env_doc,
        "horizon_min": float(exp.horizon),
        "report_interval_min": float(exp.report_interval),
        "initial": {c: float(v) for c, v in zip(COMPONENTS, exp.initial) if v != 0},
        "pulses": [{"time": p.time, "species": p.species, "delta": p.delta} for p in exp.pulses],
        "series": [{"name": s.name, "file": series_files.get(s.name, f"{exp.label.lower()}_{s.name.lower()}.csv"),
                    "sigma": float(s.sigma)} for s in exp.series],
    }


def save_experiment(exp: Experiment, path: str | Path, series_files: Mapping[str, str] | None = None) -> None:
    """Write the YAML document and one CSV per measured series next to it."""
    path = Path(path)
    doc = experiment_document(exp, series_files)
    for s, entry in zip(exp.series, doc["series"]):
        write_series_csv(path.parent / entry["file"], s.times, s.values)
    atomic_write_text(path, yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))


def trajectory_table(traj, observables=("DO", "N2O")):
    """Header and rows: time, the 15 components, then observable aliases."""
    from .simulate import OBSERVABLE_COMPONENT
    header = ["time_min", *COMPONENTS, *observables]
    idx = [COMPONENT_INDEX[OBSERVABLE_COMPONENT[o]] for o in observables]
    rows = ([t, *y, *y[idx]] for t, y in zip(traj.times, traj.states))
    return header, rows
