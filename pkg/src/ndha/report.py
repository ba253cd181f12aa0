"""Plain-text rendering of a pipeline results directory."""

from __future__ import annotations

import csv
import json
from pathlib import Path


def _fmt(v, spec=".4g"):
    if v is None or v == "":
        return "-"
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, float)):
        return format(v, spec)
    return str(v)


def _table(header, rows) -> str:
    rows = [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(header)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([line(header), line(["-" * w for w in widths]), *map(line, rows)]) + "\n"


def estimates_rows(stage_id: str, fit: dict) -> list[list]:
    """One row per parameter: stage, name, best fit, CV %, correlations with later names, RMSE."""
    names = fit["names"]
    corr = fit.get("correlation")
    rmse = fit.get("rmse") or {}
    pooled = max(rmse.values()) if rmse else None
    rows = []
    for i, n in enumerate(names):
        pairs = "" if corr is None else " ".join(f"{names[j]}:{corr[i][j]:.2f}" for j in range(i + 1, len(names)))
        rows.append([stage_id, n, fit["values"][n], fit["cv_percent"][n], pairs or "-",
                     pooled if i == 0 else ""])
    return rows


def render_report(root: str | Path) -> tuple[str, list[str]]:
    """Return (report text, missing artifact paths)."""
    root = Path(root)
    missing: list[str] = []
    parts = []
    mpath = root / "manifest.json"
    if not mpath.exists():
        missing.append("manifest.json")
        stage_dirs = sorted((root / "stages").glob("*")) if (root / "stages").is_dir() else []
        stages = [{"id": d.name.split("_", 1)[-1], "artifacts": [f"stages/{d.name}/fit.json"]} for d in stage_dirs]
    else:
        manifest = json.loads(mpath.read_text())
        stages = manifest.get("stages", [])
        parts.append(f"run: seed {manifest.get('seed')}, rtol {manifest.get('rtol')}, atol {manifest.get('atol')}, "
                     f"version {manifest.get('package_version')}\n")
        for a in manifest.get("artifacts", []):
            if not (root / a).exists():
                missing.append(a)

    est_rows, subset_blocks, diag_rows = [], [], []
    for st in stages:
        sdir = next((root / a).parent for a in st.get("artifacts", [])) if st.get("artifacts") else None
        if sdir is None:
            continue
        fpath = sdir / "fit.json"
        if fpath.exists():
            est_rows += estimates_rows(st["id"], json.loads(fpath.read_text()))
        elif "fit.json" not in " ".join(missing):
            missing.append(str(fpath.relative_to(root)))
        spath = sdir / "subsets.csv"
        if spath.exists():
            with spath.open(newline="") as fh:
                rows = list(csv.reader(fh))
            subset_blocks.append(f"[{st['id']}]\n" + _table(
                ["size", "parameters", "AIC", "log RDE", "1/modE", "values", "correlation", "gamma", "admissible"],
                [[r[0], r[1], _num(r[2]), _num(r[3]), _num(r[4]), r[5], r[6], _num(r[7]), r[9]] for r in rows[1:]]))
        dpath = sdir / "diagnostics.json"
        if dpath.exists():
            diag = json.loads(dpath.read_text())
            for key, row in diag.items():
                if key in ("validation", "janus"):
                    continue
                diag_rows.append([st["id"], key, row.get("n"), row.get("r2"), row.get("rmse"), row.get("ME"),
                                  row.get("SE"), row.get("NC"), row.get("f_test"), row.get("normal_rejected")])
            if "janus" in diag:
                diag_rows.append([st["id"], "validation (Janus)", "", "", diag["janus"], "", "", "", "", ""])

    parts.append("Estimated parameters\n" + (_table(
        ["stage", "parameter", "best fit", "CV %", "correlation", "RMSE"], est_rows) if est_rows else "(none)\n"))
    if subset_blocks:
        parts.append("Parameter subset selection\n" + "\n".join(subset_blocks))
    if diag_rows:
        parts.append("Residual diagnostics\n" + _table(
            ["stage", "series", "n", "R2", "RMSE", "ME", "SE", "NC", "F-test", "non-normal"], diag_rows))
    ppath = root / "post" / "propagation.json"
    if ppath.exists():
        prop = json.loads(ppath.read_text())
        parts.append("Prediction bands\n" + _table(
            ["output", "ARIL", "PCI", "PUCI"],
            [[o, m["aril"], m["pci"], m["puci"]] for o, m in prop.get("metrics", {}).items()]))
    if missing:
        parts.append("Missing artifacts\n" + "".join(f"  {m}\n" for m in missing))
    return "\n".join(parts), missing


def _num(s: str):
    try:
        return float(s)
    except ValueError:
        return s
