"""Two-stage composition of occurrence and magnitude into sample forecasts.

A trained pair (classifier, quantile regressor) for one horizon turns into
a 1000-sample predictive distribution per cell by filling a probability-
sized share of the ensemble with magnitude draws and the rest with zeros.
Twelve such pairs, one per horizon month, stitch into a prediction year.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ._util import derive_seed, round_half_up
from .errors import ConfigError, ValidationError
from .forest import (CLASSIFIER, REGRESSOR, ForestModel, HyperParams,
                     _pack_model, _unpack_model, fit_classifier, fit_qrf,
                     predict_proba, predict_samples)
from .panel import PanelDataset, build_supervised_frame

SAMPLE_COUNT = 1000
TIMESTEPS = tuple(range(3, 15))
WINDOW_MONTHS = 12

STRATEGY_DRAW = "draw"
STRATEGY_MULTIPLY = "multiply"
STRATEGY_GATE = "gate"


@dataclass
class HurdleModel:
    timestep_k: int
    classifier: ForestModel
    regressor: ForestModel
    cutoff_month: int
    scope: str = "global"

    def __post_init__(self):
        if self.timestep_k not in TIMESTEPS:
            raise ConfigError(
                f"timestep {self.timestep_k} outside the supported range "
                f"{TIMESTEPS[0]}..{TIMESTEPS[-1]}")
        if self.classifier.kind != CLASSIFIER:
            raise ValidationError("first stage must be a classifier model")
        if self.regressor.kind != REGRESSOR:
            raise ValidationError(
                "second stage must be a quantile regressor model")


@dataclass
class ForecastSet:
    """Sample forecasts for a 12-month window keyed by (cell_id, month_id)."""

    window_start: int
    entries: dict = field(default_factory=dict)

    @property
    def months(self) -> tuple:
        return tuple(range(self.window_start,
                           self.window_start + WINDOW_MONTHS))

    @property
    def cells(self) -> tuple:
        return tuple(sorted({cell for cell, _ in self.entries}))

    def validate(self, expected_samples: int = SAMPLE_COUNT) -> None:
        """Coverage and vector-shape invariants; raises on the first hole.

        Model forecasts always carry 1000 samples; benchmark sets store
        their natural draw counts, so those validate with
        expected_samples=None (any non-empty vector passes).
        """
        expected = {(cell, month) for cell in self.cells
                    for month in self.months}
        got = set(self.entries)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValidationError(
                f"forecast coverage broken: missing {missing[:5]}, "
                f"unexpected {extra[:5]}")
        for key, vec in self.entries.items():
            arr = np.asarray(vec)
            if expected_samples is not None and \
                    arr.shape != (expected_samples,):
                raise ValidationError(
                    f"forecast vector at {key} has {arr.size} samples, "
                    f"expected {expected_samples}")
            if arr.ndim != 1 or arr.size == 0:
                raise ValidationError(f"empty forecast vector at {key}")
            if arr.min() < 0:
                raise ValidationError(f"negative sample at {key}")


def merge_forecasts(parts) -> ForecastSet:
    """Combine disjoint forecast sets for the same window (cluster shards
    back into one map)."""
    parts = list(parts)
    if not parts:
        raise ValidationError("nothing to merge")
    starts = {p.window_start for p in parts}
    if len(starts) > 1:
        raise ValidationError(f"window mismatch in merge: {sorted(starts)}")
    entries = {}
    for part in parts:
        overlap = entries.keys() & part.entries.keys()
        if overlap:
            raise ValidationError(
                f"duplicate forecast entries in merge: {sorted(overlap)[:5]}")
        entries.update(part.entries)
    return ForecastSet(window_start=parts[0].window_start, entries=entries)


def compose_quasi_hurdle(p: float, nonzero_samples, rng_seed: int,
                         strategy: str = STRATEGY_DRAW) -> np.ndarray:
    """Blend an event probability with magnitude samples into one vector.

    The default strategy fills round(1000*p) slots (half-up) with draws
    taken with replacement from nonzero_samples and zeros the rest, so the
    non-zero share of the output is exactly the classifier probability up
    to rounding. The multiplicative and gating variants exist for
    comparison runs only; both scored worse and stay off by default.

    Parameters
    ----------
    p : float
        Event probability in [0, 1].
    nonzero_samples : array-like
        Exactly 1000 integers >= 1 from the magnitude stage.
    rng_seed : int
        Seed for the draw; fixed seed means fixed output.
    strategy : str
        One of "draw", "multiply", "gate".

    Returns
    -------
    numpy.ndarray
        1000 sorted non-negative int64 samples.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {p!r} outside [0, 1]")
    samples = np.asarray(nonzero_samples)
    if samples.shape != (SAMPLE_COUNT,):
        raise ValueError(
            f"nonzero_samples must hold exactly {SAMPLE_COUNT} values")
    if not np.issubdtype(samples.dtype, np.integer):
        rounded = np.rint(samples)
        if not np.array_equal(rounded, samples):
            raise ValueError("nonzero_samples must be integers")
        samples = rounded
    samples = samples.astype(np.int64)
    if samples.min() < 1:
        raise ValueError("nonzero_samples must all be >= 1")

    if strategy == STRATEGY_DRAW:
        n_slots = round_half_up(SAMPLE_COUNT * p)
        out = np.zeros(SAMPLE_COUNT, dtype=np.int64)
        if n_slots:
            rng = np.random.default_rng(rng_seed)
            draws = samples[rng.integers(0, SAMPLE_COUNT, n_slots)]
            out[SAMPLE_COUNT - n_slots:] = draws
    elif strategy == STRATEGY_MULTIPLY:
        out = round_half_up(p * samples)
    elif strategy == STRATEGY_GATE:
        out = samples.copy() if p >= 0.5 else np.zeros(SAMPLE_COUNT,
                                                       dtype=np.int64)
    else:
        raise ValueError(f"unknown composition strategy {strategy!r}")
    out.sort()
    return out


def train_hurdle(data: PanelDataset, timestep_k: int, cutoff_month: int,
                 hp_cls: HyperParams, hp_reg: HyperParams,
                 scope_cells=None, scope: str = "global") -> HurdleModel:
    """Fit both stages for one horizon on everything observable by the
    cutoff. The classifier sees the full frame with binary labels; the
    regressor sees only rows whose count label is non-zero."""
    frame = build_supervised_frame(data, timestep_k, cutoff_month)
    X, y_bin, y_cnt = frame.X, frame.y_binary, frame.y_count
    if scope_cells is not None:
        scope_cells = np.asarray(sorted(scope_cells))
        keep = np.isin(frame.index[:, 0], scope_cells)
        if not keep.any():
            raise ValidationError(
                "empty training frame: no rows left after the scope filter")
        X, y_bin, y_cnt = X[keep], y_bin[keep], y_cnt[keep]
    nonzero = y_cnt > 0
    if not nonzero.any():
        raise ValidationError(
            "insufficient positive examples: the magnitude stage has no "
            "non-zero rows to train on")
    if np.unique(y_cnt[nonzero]).size < 2:
        raise ValidationError(
            "insufficient positive examples: the magnitude stage needs at "
            "least two distinct non-zero targets")
    classifier = fit_classifier(X, y_bin, hp_cls)
    regressor = fit_qrf(X[nonzero], y_cnt[nonzero], hp_reg)
    return HurdleModel(timestep_k=timestep_k, classifier=classifier,
                       regressor=regressor, cutoff_month=cutoff_month,
                       scope=scope)


def models_by_timestep(models) -> dict:
    """Index hurdle models by k, insisting on exactly one model per
    horizon in 3..14."""
    by_k = {}
    for model in models:
        if model.timestep_k in by_k:
            raise ConfigError(
                f"duplicate model for timestep {model.timestep_k}")
        by_k[model.timestep_k] = model
    missing = [k for k in TIMESTEPS if k not in by_k]
    if missing:
        raise ConfigError(f"missing timestep models: {missing}")
    return by_k


def _stitch_window(cls_by_k, reg_by_k, data, feature_month, base_seed,
                   cells) -> ForecastSet:
    """Shared stitching loop; classifier and regressor stages may come
    from different model families (the global/local ensemble does this)."""
    month_pos = data.month_index(feature_month)
    if cells is None:
        cell_list = data.cell_ids
    else:
        cell_list = np.asarray(sorted(cells))
        unknown = np.setdiff1d(cell_list, data.cell_ids)
        if unknown.size:
            raise ValidationError(f"unknown cells requested: {unknown[:5]}")
    rows = np.searchsorted(data.cell_ids, cell_list)
    X = data.features[month_pos][rows]

    entries = {}
    for k in TIMESTEPS:
        probs = np.atleast_1d(predict_proba(cls_by_k[k].classifier, X))
        magnitudes = predict_samples(reg_by_k[k].regressor, X, SAMPLE_COUNT)
        if magnitudes.ndim == 1:
            magnitudes = magnitudes.reshape(1, -1)
        target_month = feature_month + k
        for i, cell in enumerate(cell_list):
            seed = derive_seed(int(cell), k, base_seed)
            entries[(int(cell), target_month)] = compose_quasi_hurdle(
                float(probs[i]), magnitudes[i], seed)
    return ForecastSet(window_start=feature_month + 3, entries=entries)


def predict_window(models, data: PanelDataset, feature_month: int,
                   base_seed: int = 0, cells=None) -> ForecastSet:
    """Stitch twelve horizon models into a full prediction year.

    Features at feature_month feed the k-step model to forecast month
    feature_month + k, so one feature snapshot yields months
    feature_month + 3 through feature_month + 14. Composition seeds derive
    from (cell_id, k, base_seed): serial and parallel runs, and runs
    restricted to a cell subset, agree cell for cell.
    """
    by_k = models_by_timestep(models)
    return _stitch_window(by_k, by_k, data, feature_month, base_seed, cells)


HURDLE_FORMAT = "hurdlecast-hurdle"
HURDLE_VERSION = 1


def save_hurdle_model(model: HurdleModel, path) -> None:
    """Both stages in one .npz, stage arrays prefixed cls_/reg_."""
    meta = {"format": HURDLE_FORMAT, "version": HURDLE_VERSION,
            "timestep_k": model.timestep_k,
            "cutoff_month": model.cutoff_month, "scope": model.scope}
    arrays = {"hurdle_meta_json": np.frombuffer(
        json.dumps(meta).encode(), dtype=np.uint8)}
    for prefix, stage in (("cls_", model.classifier),
                          ("reg_", model.regressor)):
        for name, arr in _pack_model(stage).items():
            arrays[prefix + name] = arr
    np.savez_compressed(path, **arrays)


def load_hurdle_model(path) -> HurdleModel:
    with np.load(path) as data:
        loaded = {name: data[name] for name in data.files}
    try:
        meta = json.loads(bytes(loaded["hurdle_meta_json"]).decode())
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: not a hurdle model file ({exc})")
    if meta.get("format") != HURDLE_FORMAT:
        raise ValidationError(f"{path}: not a hurdle model file")
    if meta.get("version") != HURDLE_VERSION:
        raise ValidationError(
            f"{path}: unsupported model version {meta.get('version')}")
    stages = {}
    for prefix in ("cls_", "reg_"):
        sub = {name[len(prefix):]: arr for name, arr in loaded.items()
               if name.startswith(prefix)}
        stages[prefix] = _unpack_model(sub, f"{path}[{prefix.rstrip('_')}]")
    return HurdleModel(timestep_k=int(meta["timestep_k"]),
                       classifier=stages["cls_"], regressor=stages["reg_"],
                       cutoff_month=int(meta["cutoff_month"]),
                       scope=meta["scope"])


def write_forecast_csv(forecast: ForecastSet, path) -> None:
    """Rows sorted by (cell_id, month_id); one sample per column.

    Columns span the widest vector in the set; shorter vectors (edge
    cells in neighborhood benchmarks) leave their trailing columns blank.
    """
    if not forecast.entries:
        raise ValidationError("nothing to write: empty forecast")
    width = max(np.asarray(v).size for v in forecast.entries.values())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "month_id"]
                        + [f"sample_{j}" for j in range(width)])
        for cell, month in sorted(forecast.entries):
            vec = np.asarray(forecast.entries[(cell, month)])
            writer.writerow([cell, month] + [int(v) for v in vec]
                            + [""] * (width - vec.size))


def read_forecast_csv(path) -> ForecastSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["cell_id", "month_id"]:
            raise ValidationError(
                f"{path}: expected a forecast CSV starting with "
                "cell_id,month_id")
        width = len(header) - 2
        if width < 1:
            raise ValidationError(f"{path}: no sample columns")
        entries = {}
        for row in reader:
            if not row:
                continue
            if len(row) != width + 2:
                raise ValidationError(
                    f"{path}: row for cell {row[0]} has {len(row) - 2} "
                    f"sample columns, header promises {width}")
            key = (int(row[0]), int(row[1]))
            fields = row[2:]
            n = next((j for j, v in enumerate(fields) if v == ""), width)
            if n == 0 or any(v != "" for v in fields[n:]):
                raise ValidationError(
                    f"{path}: ragged sample row at {key} (holes are only "
                    "allowed as trailing blanks)")
            vec = np.asarray([int(v) for v in fields[:n]], dtype=np.int64)
            if vec.min() < 0:
                raise ValidationError(f"{path}: negative sample at {key}")
            entries[key] = vec
    if not entries:
        raise ValidationError(f"{path}: no forecast rows")
    window_start = min(month for _, month in entries)
    return ForecastSet(window_start=window_start, entries=entries)


def write_forecast_npz(forecast: ForecastSet, path) -> None:
    # vectors concatenate into one flat array with offsets so variable
    # draw counts survive the round trip
    keys = sorted(forecast.entries)
    cells = np.asarray([c for c, _ in keys], dtype=np.int64)
    months = np.asarray([m for _, m in keys], dtype=np.int64)
    vecs = [np.asarray(forecast.entries[k], dtype=np.int64) for k in keys]
    offsets = np.zeros(len(vecs) + 1, dtype=np.int64)
    np.cumsum([v.size for v in vecs], out=offsets[1:])
    np.savez_compressed(path, window_start=forecast.window_start,
                        cells=cells, months=months, offsets=offsets,
                        values=np.concatenate(vecs) if vecs
                        else np.empty(0, dtype=np.int64))


def read_forecast_npz(path) -> ForecastSet:
    with np.load(path) as data:
        try:
            window_start = int(data["window_start"])
            cells = data["cells"]
            months = data["months"]
            offsets = data["offsets"]
            values = data["values"]
        except KeyError as exc:
            raise ValidationError(f"{path}: not a forecast file ({exc})")
        entries = {(int(c), int(m)): values[offsets[i]:offsets[i + 1]].copy()
                   for i, (c, m) in enumerate(zip(cells, months))}
    return ForecastSet(window_start=window_start, entries=entries)
