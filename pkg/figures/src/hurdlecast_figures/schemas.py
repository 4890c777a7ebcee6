"""Readers for the pipeline's file formats.

Each reader validates shape and domain and raises SchemaError with the
offending path and row, since a figure silently drawn from a misread
file is worse than no figure. The formats are the pipeline CLI's:

    forecast.csv    cell_id,month_id,sample_0..sample_{w-1}; short rows
                    pad with trailing blanks
    panel.csv       cell_id,month_id,lat,lon,fatalities[,features...]
    report.csv      model_name,window_start,scope,country,crps,ign,mis,
                    mse,mae,n_obs,total_fatalities,nonzero_count
    simulation.csv  alpha,noise,replication,mean_crps
    assignment.csv  cell_id,cluster_id
    hulls.json      [{"cluster_id": int, "polygon": [[lat, lon], ...]}]
"""

import csv
import json

import numpy as np


class SchemaError(Exception):
    """An input file does not match the pipeline's documented format."""


def _open_rows(path):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        return list(csv.reader(fh))


def _header(path, rows, expected):
    if not rows or rows[0][:len(expected)] != list(expected):
        found = rows[0] if rows else "empty file"
        raise SchemaError(f"{path}: expected header starting "
                          f"{','.join(expected)}, found {found}")


def read_forecast(path):
    """{(cell_id, month_id): samples array}, sample width per row."""
    rows = _open_rows(path)
    _header(path, rows, ("cell_id", "month_id"))
    width = len(rows[0]) - 2
    if width < 1:
        raise SchemaError(f"{path}: no sample columns")
    entries = {}
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != width + 2:
            raise SchemaError(f"{path}: row {row[:2]} has {len(row) - 2} "
                              f"sample fields, header promises {width}")
        try:
            key = (int(row[0]), int(row[1]))
            fields = row[2:]
            n = next((j for j, v in enumerate(fields) if v == ""), width)
            samples = np.asarray([int(v) for v in fields[:n]])
        except ValueError as exc:
            raise SchemaError(f"{path}: bad value in row {row[:2]}: {exc}")
        if n == 0 or any(v != "" for v in fields[n:]):
            raise SchemaError(f"{path}: row {key} has non-trailing blanks")
        if samples.min() < 0:
            raise SchemaError(f"{path}: negative sample at {key}")
        entries[key] = samples
    if not entries:
        raise SchemaError(f"{path}: no forecast rows")
    return entries


def read_panel_fatalities(path):
    """{(cell_id, month_id): fatalities} plus {cell_id: (lat, lon)}."""
    rows = _open_rows(path)
    _header(path, rows, ("cell_id", "month_id", "lat", "lon", "fatalities"))
    counts, coords = {}, {}
    for row in rows[1:]:
        if not row:
            continue
        try:
            cell, month = int(row[0]), int(row[1])
            lat, lon = float(row[2]), float(row[3])
            fat = int(row[4])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: bad panel row {row[:5]}: {exc}")
        if fat < 0:
            raise SchemaError(f"{path}: negative fatalities at cell {cell} "
                              f"month {month}")
        counts[(cell, month)] = fat
        coords[cell] = (lat, lon)
    if not counts:
        raise SchemaError(f"{path}: no panel rows")
    return counts, coords


REPORT_HEADER = ("model_name", "window_start", "scope", "country", "crps",
                 "ign", "mis", "mse", "mae", "n_obs", "total_fatalities",
                 "nonzero_count")


def read_report(path):
    """List of {model_name, window_start, aggregate: {metric: value},
    countries: {name: {metric: value}}} dicts, one per aggregate row."""
    rows = _open_rows(path)
    _header(path, rows, REPORT_HEADER)
    reports = []
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != len(REPORT_HEADER):
            raise SchemaError(f"{path}: report row has {len(row)} fields, "
                              f"expected {len(REPORT_HEADER)}")
        name, window, scope, country = row[0], row[1], row[2], row[3]
        try:
            metrics = {"crps": float(row[4]), "ign": float(row[5]),
                       "mis": float(row[6]), "mse": float(row[7]),
                       "mae": float(row[8])}
            window = int(window)
        except ValueError as exc:
            raise SchemaError(f"{path}: bad score row for {name!r}: {exc}")
        if scope == "aggregate":
            reports.append({"model_name": name, "window_start": window,
                            "aggregate": metrics, "countries": {}})
        elif scope == "country":
            if not reports or reports[-1]["model_name"] != name:
                raise SchemaError(f"{path}: country row for {name!r} "
                                  "precedes its aggregate row")
            reports[-1]["countries"][country] = metrics
        else:
            raise SchemaError(f"{path}: unknown scope {scope!r}")
    if not reports:
        raise SchemaError(f"{path}: no score reports")
    return reports


def read_simulation(path):
    """{(alpha, noise): mean CRPS across replications}, plus the grids."""
    rows = _open_rows(path)
    _header(path, rows, ("alpha", "noise", "replication", "mean_crps"))
    acc = {}
    for row in rows[1:]:
        if not row:
            continue
        try:
            alpha, noise, value = float(row[0]), float(row[1]), float(row[3])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: bad simulation row {row}: {exc}")
        acc.setdefault((alpha, noise), []).append(value)
    if not acc:
        raise SchemaError(f"{path}: no simulation rows")
    return {key: float(np.mean(vals)) for key, vals in acc.items()}


def read_assignment(path):
    rows = _open_rows(path)
    _header(path, rows, ("cell_id", "cluster_id"))
    out = {}
    for row in rows[1:]:
        if not row:
            continue
        try:
            out[int(row[0])] = int(row[1])
        except (ValueError, IndexError) as exc:
            raise SchemaError(f"{path}: bad assignment row {row}: {exc}")
    if not out:
        raise SchemaError(f"{path}: no assignment rows")
    return out


def read_hulls(path):
    """{cluster_id: polygon array of (lat, lon) vertices}."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON: {exc}")
    if not isinstance(doc, list):
        raise SchemaError(f"{path}: expected a list of cluster hulls")
    hulls = {}
    for item in doc:
        try:
            cid = int(item["cluster_id"])
            poly = np.asarray(item["polygon"], dtype=np.float64)
        except (TypeError, KeyError, ValueError) as exc:
            raise SchemaError(f"{path}: bad hull entry {item!r}: {exc}")
        if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
            raise SchemaError(f"{path}: hull {cid} needs >= 3 [lat, lon] "
                              f"vertices, got shape {poly.shape}")
        hulls[cid] = poly
    if not hulls:
        raise SchemaError(f"{path}: no hulls")
    return hulls
