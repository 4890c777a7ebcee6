"""Command line pipeline driver.

Each subcommand resolves its options from flags first, then the matching
section of an INI config file, then built-in defaults; writes its outputs
under --out-dir; and drops a manifest recording the resolved options plus
content hashes of every file read and written. Exit codes: 0 success, 2
configuration problem, 3 input validation failure, 4 anything else.
"""

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from ._util import parallel_map
from .benchmarks import BENCHMARK_KINDS, BenchmarkSpec, benchmark_forecast
from .errors import ConfigError, HurdlecastError
from .forest import HyperParams
from .hurdle import (TIMESTEPS, ForecastSet, load_hurdle_model,
                     predict_window, read_forecast_csv, save_hurdle_model,
                     train_hurdle, write_forecast_csv)
from .panel import (SyntheticConfig, generate_synthetic, load_country_map,
                    load_panel, write_panel)
from .scoring import (METRIC_NAMES, rank_models, read_report_csv,
                      score_forecast, write_report_csv)
from .simulation import (DEFAULT_ACCURACY_GRID, DEFAULT_NOISE_GRID,
                         LognormalSource, PanelKdeSource, SimConfig,
                         run_simulation, write_sim_csv)
from .spatial import (COMBOS, ClusterAssignment, ClusterConfig,
                      assign_remaining_cells, cluster_violent_cells,
                      merge_small_clusters, read_assignment_csv,
                      select_global_local, write_assignment_csv,
                      write_hulls_json)
from .tuning import STAGE_CLASSIFIER, STAGE_REGRESSOR, random_search, \
    write_tuning_trace


def _int_list(text):
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError(f"empty integer list: {text!r}")
    return tuple(int(p) for p in parts)


def _float_list(text):
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    if not parts:
        raise ValueError(f"empty number list: {text!r}")
    return tuple(float(p) for p in parts)


def _str_list(text):
    parts = tuple(p.strip() for p in str(text).split(",") if p.strip())
    if not parts:
        raise ValueError(f"empty list: {text!r}")
    return parts


@dataclass(frozen=True)
class _Opt:
    name: str
    parse: object
    default: object = None
    required: bool = False
    help: str = ""


_OUT = _Opt("out_dir", str, ".", help="directory for outputs")

OPTION_SPECS = {
    "gen": (
        _OUT,
        _Opt("n_cells", int, required=True, help="cells in the lattice"),
        _Opt("n_months", int, required=True, help="panel length"),
        _Opt("target_nonzero_share", float, 0.004,
             help="share of cell-months with fatalities"),
        _Opt("hotspot_count", int, 3, help="number of violence centers"),
        _Opt("persistence", float, 0.7,
             help="month-to-month carryover of local violence"),
        _Opt("seed", int, 0),
    ),
    "tune": (
        _OUT,
        _Opt("panel", str, required=True, help="panel CSV"),
        _Opt("stage", str, "both",
             help="classifier, regressor, or both"),
        _Opt("timestep_k", int, 3, help="horizon used for the search"),
        _Opt("cutoff", int, required=True,
             help="last observable month during tuning"),
        _Opt("budget", int, 10, help="candidate configurations"),
        _Opt("folds", int, 3),
        _Opt("test_len", int, 12, help="test window months per fold"),
        _Opt("seed", int, 0),
    ),
    "train": (
        _OUT,
        _Opt("panel", str, required=True),
        _Opt("cutoff", int, required=True,
             help="last month whose labels enter training"),
        _Opt("hp_classifier", str, required=True,
             help="hyperparameter JSON for the occurrence stage"),
        _Opt("hp_regressor", str, required=True,
             help="hyperparameter JSON for the magnitude stage"),
        _Opt("assignment", str, help="cluster assignment CSV"),
        _Opt("cluster_id", int,
             help="train only on this cluster's cells"),
        _Opt("threads", int, help="parallel fits; default all cores"),
    ),
    "predict": (
        _OUT,
        _Opt("panel", str, required=True),
        _Opt("models_dir", str, required=True,
             help="directory holding model_k03..model_k14"),
        _Opt("feature_month", int, required=True,
             help="month whose features feed every horizon"),
        _Opt("seed", int, 0, help="composition base seed"),
    ),
    "benchmark": (
        _OUT,
        _Opt("panel", str, required=True),
        _Opt("window_start", int, required=True),
        _Opt("kinds", _str_list, tuple(BENCHMARK_KINDS)),
        _Opt("seed", int, 0),
    ),
    "cluster": (
        _OUT,
        _Opt("panel", str, required=True),
        _Opt("eps", float, 1.5, help="neighborhood radius in degrees"),
        _Opt("min_pts", int, 5, help="density threshold"),
        _Opt("min_nonzero", int,
             help="training floor per cluster; default adapts to scale"),
    ),
    "select": (
        _OUT,
        _Opt("history", str, required=True, help="observed panel CSV"),
        _Opt("assignment", str, required=True),
        _Opt("forecast_dir", str, required=True,
             help="directory of {combo}_w{window}.csv files"),
        _Opt("windows", _int_list, required=True,
             help="prior evaluation window starts"),
        _Opt("n_years", int, 3),
        _Opt("apply_window", int,
             help="also stitch this window from the chosen combos"),
    ),
    "score": (
        _OUT,
        _Opt("forecast", str, required=True),
        _Opt("panel", str, required=True, help="actuals panel CSV"),
        _Opt("model_name", str, "model"),
        _Opt("country_map", str, help="cell_id,country_code CSV"),
        _Opt("report_name", str, "report.csv"),
    ),
    "rank": (
        _OUT,
        _Opt("reports", _str_list, required=True,
             help="score report CSVs, comma separated"),
        _Opt("metric", str, "crps"),
    ),
    "simulate": (
        _OUT,
        _Opt("n_total", int, 157_320),
        _Opt("n_nonzero", int, 787),
        _Opt("accuracy_grid", _float_list, DEFAULT_ACCURACY_GRID),
        _Opt("noise_grid", _float_list, DEFAULT_NOISE_GRID),
        _Opt("noise_scale", float, 50.0),
        _Opt("replications", int, 5),
        _Opt("seed", int, 0),
        _Opt("source", str, "lognormal",
             help="lognormal or panel (kernel density from observed data)"),
        _Opt("mu", float, 1.6),
        _Opt("sigma", float, 1.7),
        _Opt("panel", str, help="panel CSV for the panel source"),
    ),
}


def _load_config(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    parser = configparser.ConfigParser()
    try:
        parser.read(p)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {p}: {exc}")
    return parser


def _merge_options(subcommand, ns, config):
    spec = OPTION_SPECS[subcommand]
    section = None
    if config is not None and config.has_section(subcommand):
        section = config[subcommand]
        known = {opt.name for opt in spec}
        for key in section:
            if key not in known:
                raise ConfigError(
                    f"unknown key {key!r} in config section "
                    f"[{subcommand}]")
    merged = {}
    for opt in spec:
        value = getattr(ns, opt.name, None)
        if value is None and section is not None and opt.name in section:
            try:
                value = opt.parse(section[opt.name])
            except ValueError as exc:
                raise ConfigError(
                    f"bad config value for [{subcommand}] {opt.name}: "
                    f"{exc}")
        if value is None:
            value = opt.default
        if value is None and opt.required:
            raise ConfigError(
                f"{subcommand}: option {opt.name!r} is required (flag "
                f"--{opt.name.replace('_', '-')} or config key)")
        merged[opt.name] = value
    return merged


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(subcommand, opts, config_path, inputs, outputs):
    def entry(path):
        return {"path": str(path), "sha256": _sha256(path)}

    doc = {
        "subcommand": subcommand,
        "config_file": str(config_path) if config_path else None,
        "options": {k: (list(v) if isinstance(v, tuple) else v)
                    for k, v in opts.items()},
        "inputs": {label: entry(p) for label, p in sorted(inputs.items())},
        "outputs": {label: entry(p) for label, p in sorted(outputs.items())},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = Path(opts["out_dir"]) / f"manifest_{subcommand}.json"
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _require_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _cmd_gen(opts):
    cfg = SyntheticConfig(
        n_cells=opts["n_cells"], n_months=opts["n_months"],
        target_nonzero_share=opts["target_nonzero_share"],
        hotspot_count=opts["hotspot_count"],
        persistence=opts["persistence"], seed=opts["seed"])
    data = generate_synthetic(cfg)
    out = Path(opts["out_dir"]) / "panel.csv"
    write_panel(data, out)
    return {}, {"panel": out}


def _cmd_tune(opts):
    stage_map = {"classifier": (STAGE_CLASSIFIER,),
                 "regressor": (STAGE_REGRESSOR,),
                 "both": (STAGE_CLASSIFIER, STAGE_REGRESSOR)}
    if opts["stage"] not in stage_map:
        raise ConfigError(f"unknown stage {opts['stage']!r}, expected "
                          "classifier, regressor, or both")
    panel_path = _require_file(opts["panel"], "panel")
    data = load_panel(panel_path)
    outputs = {}
    for stage in stage_map[opts["stage"]]:
        trace = []
        best = random_search(
            data, stage, opts["timestep_k"], opts["cutoff"],
            opts["budget"], opts["seed"], n_folds=opts["folds"],
            test_len_months=opts["test_len"], trace=trace)
        trace_path = Path(opts["out_dir"]) / f"tuning_trace_{stage}.csv"
        write_tuning_trace(trace_path, trace)
        hp_path = Path(opts["out_dir"]) / f"hyperparams_{stage}.json"
        with open(hp_path, "w") as fh:
            json.dump({"stage": stage, "tune_score": best.tune_score,
                       "mean_train": best.mean_train,
                       "mean_test": best.mean_test,
                       "hyperparams": best.hyperparams.as_dict()},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs[f"trace_{stage}"] = trace_path
        outputs[f"hyperparams_{stage}"] = hp_path
    return {"panel": panel_path}, outputs


def _load_hyperparams(path):
    p = _require_file(path, "hyperparameter file")
    try:
        doc = json.loads(p.read_text())
    except ValueError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})")
    fields = doc.get("hyperparams", doc)
    try:
        return HyperParams(**fields)
    except TypeError as exc:
        raise ConfigError(f"{p}: bad hyperparameter fields ({exc})")


def _cmd_train(opts):
    panel_path = _require_file(opts["panel"], "panel")
    data = load_panel(panel_path)
    hp_cls = _load_hyperparams(opts["hp_classifier"])
    hp_reg = _load_hyperparams(opts["hp_regressor"])
    inputs = {"panel": panel_path,
              "hp_classifier": Path(opts["hp_classifier"]),
              "hp_regressor": Path(opts["hp_regressor"])}

    scope_cells = None
    scope = "global"
    if (opts["assignment"] is None) != (opts["cluster_id"] is None):
        raise ConfigError("assignment and cluster_id must be given together")
    if opts["assignment"] is not None:
        apath = _require_file(opts["assignment"], "assignment")
        cluster_of = read_assignment_csv(apath)
        cid = opts["cluster_id"]
        scope_cells = sorted(c for c, v in cluster_of.items() if v == cid)
        if not scope_cells:
            raise ConfigError(f"cluster {cid} has no cells in {apath}")
        scope = f"cluster:{cid}"
        inputs["assignment"] = apath

    threads = opts["threads"] or os.cpu_count() or 1

    def fit(k):
        return train_hurdle(data, k, opts["cutoff"], hp_cls, hp_reg,
                            scope_cells=scope_cells, scope=scope)

    models = parallel_map(fit, TIMESTEPS, threads)
    outputs = {}
    for model in models:
        path = Path(opts["out_dir"]) / f"model_k{model.timestep_k:02d}.npz"
        save_hurdle_model(model, path)
        outputs[f"model_k{model.timestep_k:02d}"] = path
    return inputs, outputs


def _model_paths(models_dir):
    root = Path(models_dir)
    paths = {k: root / f"model_k{k:02d}.npz" for k in TIMESTEPS}
    missing = [p.name for p in paths.values() if not p.is_file()]
    if missing:
        raise ConfigError(
            f"missing model files in {root}: {', '.join(missing)}")
    return paths


def _cmd_predict(opts):
    panel_path = _require_file(opts["panel"], "panel")
    data = load_panel(panel_path)
    paths = _model_paths(opts["models_dir"])
    models = [load_hurdle_model(paths[k]) for k in TIMESTEPS]
    forecast = predict_window(models, data, opts["feature_month"],
                              base_seed=opts["seed"])
    forecast.validate()
    out = Path(opts["out_dir"]) / "forecast.csv"
    write_forecast_csv(forecast, out)
    inputs = {"panel": panel_path}
    inputs.update({f"model_k{k:02d}": p for k, p in paths.items()})
    return inputs, {"forecast": out}


def _cmd_benchmark(opts):
    panel_path = _require_file(opts["panel"], "panel")
    data = load_panel(panel_path)
    outputs = {}
    for kind in opts["kinds"]:
        spec = BenchmarkSpec(kind=kind, seed=opts["seed"])
        forecast = benchmark_forecast(spec, data, opts["window_start"])
        path = Path(opts["out_dir"]) / f"benchmark_{kind}.csv"
        write_forecast_csv(forecast, path)
        outputs[kind] = path
    return {"panel": panel_path}, outputs


def _cmd_cluster(opts):
    panel_path = _require_file(opts["panel"], "panel")
    data = load_panel(panel_path)
    cfg = ClusterConfig(eps=opts["eps"], min_pts=opts["min_pts"],
                        min_nonzero=opts["min_nonzero"])
    clusters, _ = cluster_violent_cells(data, cfg)
    merged, merge_log = merge_small_clusters(clusters, data, cfg)
    assignment = assign_remaining_cells(merged, data, merge_log=merge_log)
    out_dir = Path(opts["out_dir"])
    apath = out_dir / "assignment.csv"
    hpath = out_dir / "hulls.json"
    lpath = out_dir / "merge_log.csv"
    write_assignment_csv(assignment, apath)
    write_hulls_json(assignment, hpath)
    with open(lpath, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["absorbed_cluster", "absorbing_cluster",
                         "centroid_distance"])
        for absorbed, absorbing, distance in merge_log:
            writer.writerow([absorbed, absorbing, repr(distance)])
    return {"panel": panel_path}, {"assignment": apath, "hulls": hpath,
                                   "merge_log": lpath}


def _combo_path(forecast_dir, combo, window):
    return Path(forecast_dir) / f"{combo}_w{window}.csv"


def _cmd_select(opts):
    history_path = _require_file(opts["history"], "history panel")
    history = load_panel(history_path)
    apath = _require_file(opts["assignment"], "assignment")
    assignment = ClusterAssignment(cluster_of=read_assignment_csv(apath))
    inputs = {"history": history_path, "assignment": apath}
    combo_fc = {}
    for combo in COMBOS:
        combo_fc[combo] = {}
        for window in opts["windows"]:
            path = _combo_path(opts["forecast_dir"], combo, window)
            if not path.is_file():
                raise ConfigError(f"missing combo forecast: {path}")
            combo_fc[combo][window] = read_forecast_csv(path)
            inputs[f"{combo}_w{window}"] = path
    choice = select_global_local(combo_fc, history, assignment,
                                 n_years=opts["n_years"])
    out_dir = Path(opts["out_dir"])
    cpath = out_dir / "choice.json"
    with open(cpath, "w") as fh:
        json.dump({str(cid): combo for cid, combo in sorted(choice.items())},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs = {"choice": cpath}

    if opts["apply_window"] is not None:
        window = opts["apply_window"]
        applied = {}
        for combo in sorted(set(choice.values())):
            path = _combo_path(opts["forecast_dir"], combo, window)
            if not path.is_file():
                raise ConfigError(f"missing combo forecast: {path}")
            applied[combo] = read_forecast_csv(path)
            inputs[f"{combo}_w{window}"] = path
        entries = {}
        for cell, cid in assignment.cluster_of.items():
            source = applied[choice[cid]]
            for month in source.months:
                entries[(cell, month)] = source.entries[(cell, month)]
        stitched = ForecastSet(window_start=window, entries=entries)
        stitched.validate(expected_samples=None)
        spath = out_dir / f"selected_w{window}.csv"
        write_forecast_csv(stitched, spath)
        outputs["selected"] = spath
    return inputs, outputs


def _cmd_score(opts):
    fpath = _require_file(opts["forecast"], "forecast")
    panel_path = _require_file(opts["panel"], "panel")
    forecast = read_forecast_csv(fpath)
    actuals = load_panel(panel_path)
    inputs = {"forecast": fpath, "panel": panel_path}
    country_map = None
    if opts["country_map"] is not None:
        cpath = _require_file(opts["country_map"], "country map")
        country_map = load_country_map(cpath)
        inputs["country_map"] = cpath
    report = score_forecast(forecast, actuals, country_map=country_map,
                            model_name=opts["model_name"])
    out = Path(opts["out_dir"]) / opts["report_name"]
    write_report_csv([report], out)
    return inputs, {"report": out}


def _cmd_rank(opts):
    if opts["metric"] not in METRIC_NAMES:
        raise ConfigError(f"unknown metric {opts['metric']!r}, expected "
                          f"one of {', '.join(METRIC_NAMES)}")
    reports = []
    inputs = {}
    for i, path in enumerate(opts["reports"]):
        p = _require_file(path, "score report")
        reports.extend(read_report_csv(p))
        inputs[f"report_{i}"] = p
    table = rank_models(reports, metric=opts["metric"])
    out_dir = Path(opts["out_dir"])
    spath = out_dir / "rank_summary.csv"
    with open(spath, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model_name", "mean_rank", "mean_rank_nonzero"])
        for name in sorted(table.mean_rank,
                           key=lambda n: (table.mean_rank[n], n)):
            nonzero = table.mean_rank_nonzero.get(name)
            writer.writerow([name, repr(table.mean_rank[name]),
                             "" if nonzero is None else repr(nonzero)])
    tpath = out_dir / "rank_table.csv"
    with open(tpath, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["window_start", "country", "model_name", "rank"])
        for (window, country) in sorted(table.rankings):
            ranks = table.rankings[(window, country)]
            for name in sorted(ranks):
                writer.writerow([window, country, name, repr(ranks[name])])
    return inputs, {"summary": spath, "table": tpath}


def _cmd_simulate(opts):
    inputs = {}
    if opts["source"] == "lognormal":
        source = LognormalSource(mu=opts["mu"], sigma=opts["sigma"])
    elif opts["source"] == "panel":
        if opts["panel"] is None:
            raise ConfigError("the panel source needs --panel")
        panel_path = _require_file(opts["panel"], "panel")
        source = PanelKdeSource(load_panel(panel_path))
        inputs["panel"] = panel_path
    else:
        raise ConfigError(f"unknown source {opts['source']!r}, expected "
                          "lognormal or panel")
    cfg = SimConfig(
        n_total=opts["n_total"], n_nonzero=opts["n_nonzero"],
        accuracy_grid=opts["accuracy_grid"],
        noise_grid=opts["noise_grid"], noise_scale=opts["noise_scale"],
        replications=opts["replications"], seed=opts["seed"],
        nonzero_source=source)
    result = run_simulation(cfg)
    out = Path(opts["out_dir"]) / "simulation.csv"
    write_sim_csv(result, out)
    return inputs, {"simulation": out}


_HANDLERS = {
    "gen": _cmd_gen,
    "tune": _cmd_tune,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "benchmark": _cmd_benchmark,
    "cluster": _cmd_cluster,
    "select": _cmd_select,
    "score": _cmd_score,
    "rank": _cmd_rank,
    "simulate": _cmd_simulate,
}

_DESCRIPTIONS = {
    "gen": "generate a synthetic fatality panel",
    "tune": "random search over forest hyperparameters",
    "train": "fit the twelve horizon models",
    "predict": "compose a 12-month sample forecast",
    "benchmark": "history-based reference forecasts",
    "cluster": "group violent cells and assign every cell a cluster",
    "select": "pick global or local stages per cluster",
    "score": "distributional metrics for one forecast window",
    "rank": "per-country model rankings across reports",
    "simulate": "CRPS informativeness surface on synthetic actuals",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="hurdlecast",
        description="pipeline driver for zero-inflated fatality forecasts")
    subparsers = parser.add_subparsers(dest="subcommand")
    for name, spec in OPTION_SPECS.items():
        sub = subparsers.add_parser(name, help=_DESCRIPTIONS[name])
        sub.add_argument("--config", default=None,
                         help="INI file; section [%s] supplies defaults"
                         % name)
        for opt in spec:
            sub.add_argument("--" + opt.name.replace("_", "-"),
                             dest=opt.name, type=opt.parse, default=None,
                             help=opt.help or None)
    return parser


def main(argv=None) -> int:
    try:
        parser = _build_parser()
        try:
            ns = parser.parse_args(argv)
        except SystemExit as exc:  # argparse already printed the message
            return int(exc.code or 0)
        if ns.subcommand is None:
            parser.print_help(sys.stderr)
            return 2
        config = _load_config(ns.config) if ns.config else None
        opts = _merge_options(ns.subcommand, ns, config)
        Path(opts["out_dir"]).mkdir(parents=True, exist_ok=True)
        inputs, outputs = _HANDLERS[ns.subcommand](opts)
        manifest = _write_manifest(ns.subcommand, opts, ns.config,
                                   inputs, outputs)
        for label in sorted(outputs):
            print(f"wrote {outputs[label]}")
        print(f"manifest {manifest}")
        return 0
    except HurdlecastError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"ValueError: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything unforeseen: runtime failure
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
