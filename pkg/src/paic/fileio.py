"""File formats: observation CSV, draw CSV, report JSON/CSV, experiment outputs.

All numeric CSV fields are written with 17 significant digits and no locale
formatting, so outputs are byte-stable across runs and round-trip exactly.
Every output file embeds provenance: tool version, a hash of the canonical
config JSON, and the seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import numpy as np

from ._version import __version__
from .criteria import CriterionReport
from .exceptions import ValidationError
from .experiments import ExperimentResult, LOGIT_ESTIMATORS, NORMAL_ESTIMATORS
from .mcmc import PosteriorDraws
from .models import ObservationSet


def fmt(x: float) -> str:
    return "{:.17g}".format(float(x))


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def provenance(config: dict, seed: int) -> dict:
    return {
        "tool_version": __version__,
        "config_hash": config_hash(config),
        "seed": int(seed),
    }


def _parse_float(text: str, path: str, lineno: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"{path}:{lineno}: column {column!r} is not numeric: {text!r}")
    if math.isnan(value) or math.isinf(value):
        raise ValidationError(f"{path}:{lineno}: column {column!r} is not finite: {text!r}")
    return value


def read_observations_csv(path: str) -> ObservationSet:
    """Strict reader for the data schema: header 'y' or 'y,n_trials'."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file")
        if header == ["y"]:
            with_trials = False
        elif header == ["y", "n_trials"]:
            with_trials = True
        else:
            raise ValidationError(
                f"{path}:1: expected header 'y' or 'y,n_trials', got {','.join(header)!r}"
            )
        ys = []
        trials = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
            ys.append(_parse_float(row[0], path, lineno, "y"))
            if with_trials:
                t = _parse_float(row[1], path, lineno, "n_trials")
                if t != int(t) or t < 1:
                    raise ValidationError(
                        f"{path}:{lineno}: n_trials must be a positive integer"
                    )
                trials.append(int(t))
    y = np.asarray(ys, dtype=float)
    return ObservationSet(y, np.asarray(trials, dtype=int) if with_trials else None)


def write_draws_csv(path: str, draws: PosteriorDraws) -> None:
    """Header theta_1..theta_p,chain; one row per retained draw."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"theta_{k + 1}" for k in range(draws.p)] + ["chain"])
        for row, cid in zip(draws.draws, draws.chain_ids):
            writer.writerow([fmt(v) for v in row] + [str(int(cid))])


def read_draws_csv(path: str) -> PosteriorDraws:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file")
        p = len(header) - 1
        if p < 1 or header != [f"theta_{k + 1}" for k in range(p)] + ["chain"]:
            raise ValidationError(f"{path}:1: expected header theta_1..theta_p,chain")
        rows = []
        ids = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != p + 1:
                raise ValidationError(f"{path}:{lineno}: expected {p + 1} fields")
            rows.append([_parse_float(c, path, lineno, header[j])
                         for j, c in enumerate(row[:p])])
            try:
                ids.append(int(row[p]))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: chain id must be an integer")
    if not rows:
        raise ValidationError(f"{path}: no draws")
    return PosteriorDraws(
        draws=np.asarray(rows, dtype=float),
        chain_ids=np.asarray(ids, dtype=int),
        warmup_discarded=0,
        seed=0,
    )


def write_matrix_csv(path: str, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        for row in matrix:
            writer.writerow([fmt(v) for v in row])


# -- criterion reports -----------------------------------------------------

REPORT_CSV_HEADER = ["criterion", "value", "fit", "penalty", "n", "S",
                     "seed", "warnings", "notes"]


def report_to_dict(report: CriterionReport) -> dict:
    return {
        "criterion": report.name,
        "value": report.value,
        "fit": report.fit_term,
        "penalty": report.penalty,
        "n": report.n,
        "S": report.S,
        "seed": report.seed,
        "warnings": list(report.warnings),
        "notes": report.notes,
    }


def report_from_dict(d: dict) -> CriterionReport:
    return CriterionReport(
        name=d["criterion"],
        value=float(d["value"]),
        fit_term=float(d["fit"]),
        penalty=float(d["penalty"]),
        n=int(d["n"]),
        S=int(d["S"]),
        notes=d.get("notes", ""),
        warnings=tuple(d.get("warnings", ())),
        seed=d.get("seed"),
    )


def write_reports(path: str, reports, prov: dict, fmt_name: str = "json",
                  errors=()) -> None:
    if fmt_name == "json":
        write_reports_json(path, reports, prov, errors=errors)
    elif fmt_name == "csv":
        write_reports_csv(path, reports, prov, errors=errors)
    else:
        raise ValidationError(f"unknown report format: {fmt_name!r}")


def write_reports_json(path: str, reports, prov: dict, errors=()) -> None:
    """Successful reports plus per-criterion error entries (partial success)."""
    entries = [report_to_dict(r) for r in reports]
    entries += [{"criterion": name, "error": message} for name, message in errors]
    payload = {"provenance": prov, "reports": entries}
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_reports_json(path: str):
    """Returns (provenance, reports, errors); errors as (criterion, message)."""
    with open(path) as f:
        payload = json.load(f)
    reports = [report_from_dict(d) for d in payload["reports"] if "error" not in d]
    errors = [(d["criterion"], d["error"]) for d in payload["reports"] if "error" in d]
    return payload["provenance"], reports, errors


def write_reports_csv(path: str, reports, prov: dict, errors=()) -> None:
    with open(path, "w", newline="") as f:
        f.write(
            f"# tool_version={prov['tool_version']} "
            f"config_hash={prov['config_hash']} seed={prov['seed']}\n"
        )
        writer = csv.writer(f)
        writer.writerow(REPORT_CSV_HEADER)
        for r in reports:
            writer.writerow([
                r.name, fmt(r.value), fmt(r.fit_term), fmt(r.penalty),
                str(r.n), str(r.S),
                "" if r.seed is None else str(r.seed),
                ";".join(r.warnings), r.notes,
            ])
        for name, message in errors:
            writer.writerow([name, "", "", "", "", "",
                             "" if prov.get("seed") is None else str(prov["seed"]),
                             "", f"error: {message}"])


# -- experiment outputs ------------------------------------------------------


def _write_normal_replications(path: str, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["experiment", "n", "tau02_rule", "sigma_A2",
                         "replication", "estimator", "estimate", "true_bias"])
        for cell in result.cells:
            k = cell.keys
            reps = cell.records["replication"].astype(int)
            for est in NORMAL_ESTIMATORS:
                col = cell.records[f"b_{est}"]
                for r, v in zip(reps, col):
                    writer.writerow([
                        "normal", str(k["n"]), k["tau02_rule"], fmt(k["sigma_A2"]),
                        str(r), est, fmt(v), fmt(k["true_bias"]),
                    ])


def _write_logit_replications(path: str, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["experiment", "N", "n_i", "replication", "estimator",
                         "estimate", "eta_hat", "eta_true", "actual_error"])
        for cell in result.cells:
            k = cell.keys
            recs = cell.records
            reps = recs["replication"].astype(int)
            for est in LOGIT_ESTIMATORS:
                for idx, r in enumerate(reps):
                    writer.writerow([
                        "logit", str(k["N"]), str(k["n_i"]), str(r), est,
                        fmt(recs[f"b_{est}"][idx]),
                        fmt(recs["eta_hat"][idx]),
                        fmt(recs["eta_true"][idx]),
                        fmt(recs[f"err_{est}"][idx]),
                    ])


def _write_normal_plot_data(outdir: str, result: ExperimentResult) -> None:
    """Two-column (n, mean bias) files per estimator and panel, plus the
    true-bias curve, matching the bias-versus-sample-size plot layout."""
    panels = {}
    for cell in result.cells:
        key = (cell.keys["tau02_rule"], cell.keys["sigma_A2"])
        panels.setdefault(key, []).append(cell)
    for (rule, sigma_A2), cells in panels.items():
        cells = sorted(cells, key=lambda c: c.keys["n"])
        tag = f"tau02_{rule}__sigmaA2_{sigma_A2:g}"
        for est in NORMAL_ESTIMATORS + ("true",):
            path = os.path.join(outdir, f"plot_normal__{tag}__{est}.csv")
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow(["n", "mean_bias"])
                for cell in cells:
                    if est == "true":
                        v = cell.keys["true_bias"]
                    else:
                        v = cell.aggregates[est]["mean"]
                    writer.writerow([str(cell.keys["n"]), fmt(v)])


def write_experiment_outputs(outdir: str, result: ExperimentResult, prov: dict) -> None:
    """replications.csv + aggregates.json (+ plot data for the normal study)."""
    os.makedirs(outdir, exist_ok=True)
    rep_path = os.path.join(outdir, "replications.csv")
    if result.experiment == "normal":
        _write_normal_replications(rep_path, result)
        _write_normal_plot_data(outdir, result)
    elif result.experiment == "logit":
        _write_logit_replications(rep_path, result)
    else:
        raise ValidationError(f"unknown experiment kind {result.experiment!r}")
    payload = {
        "provenance": prov,
        "experiment": result.experiment,
        "config": result.config,
        "cells": [
            {
                "keys": cell.keys,
                "excluded": cell.excluded,
                "aggregates": cell.aggregates,
            }
            for cell in result.cells
        ],
    }
    with open(os.path.join(outdir, "aggregates.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
