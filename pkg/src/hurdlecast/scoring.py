"""Sample-based distributional scores and reporting.

Every metric here consumes a plain vector of predictive samples, so the
1000-draw hurdle ensembles and the smaller conflict-history benchmark
samples are judged by exactly the same code. Aggregation is an unweighted
mean over cell-months, iterated in sorted key order so results are
bit-stable regardless of how the forecast was assembled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.stats import rankdata

from ._util import silverman_bandwidth, weighted_quantile_lower
from .errors import ValidationError

if TYPE_CHECKING:  # pragma: no cover
    from .hurdle import ForecastSet
    from .panel import PanelDataset

# fatality magnitude bins: {0}, [1,1], [2,5], [6,10], [11,25], [26,50],
# [51,100], [101,250], [251,500], [501,1000], [1001, inf)
DEFAULT_IGN_BIN_UPPERS = (0, 1, 5, 10, 25, 50, 100, 250, 500, 1000, np.inf)

METRIC_NAMES = ("crps", "ign", "mis", "mse", "mae")


def crps_sample(samples, y) -> float:
    """Exact CRPS of an empirical sample distribution against a scalar.

    Computed with the sorted-sample identity

        CRPS = mean|x_i - y| - (1/m^2) * sum_k (2k - m + 1) * x_(k)

    whose second term equals the mean absolute pairwise difference halved.
    For an all-zero sample the spread term is exactly 0.0, so the score
    collapses to |y| with no rounding, which is what makes the aggregate
    CRPS of an all-zero forecast bit-identical to its MAE.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("crps_sample needs a non-empty 1-d sample vector")
    m = x.size
    if m > 1 and np.any(x[1:] < x[:-1]):
        x = np.sort(x)
    term_abs = np.abs(x - y).mean()
    k = np.arange(m, dtype=np.float64)
    spread = ((2.0 * k - m + 1.0) * x).sum() / (m * m)
    return float(term_abs - spread)


def _sample_quantiles(sorted_samples, levels):
    m = sorted_samples.size
    cum = np.arange(1, m + 1, dtype=np.float64) / m
    return weighted_quantile_lower(sorted_samples, cum, levels)


def mis_sample(samples, y, alpha=0.1) -> float:
    """Interval score of the central (1 - alpha) sample interval.

    Bounds are lower-value empirical quantiles at alpha/2 and 1 - alpha/2.
    Misses are penalized at 2/alpha per unit outside the interval.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("mis_sample needs a non-empty 1-d sample vector")
    if x.size > 1 and np.any(x[1:] < x[:-1]):
        x = np.sort(x)
    lo, hi = _sample_quantiles(x, (alpha / 2.0, 1.0 - alpha / 2.0))
    score = hi - lo
    if y < lo:
        score += (2.0 / alpha) * (lo - y)
    elif y > hi:
        score += (2.0 / alpha) * (y - hi)
    return float(score)


def ign_sample(samples, y, bin_uppers=DEFAULT_IGN_BIN_UPPERS,
               floor=1e-3) -> float:
    """Negative log2 probability of the observation's magnitude bin.

    Bins are upper-inclusive intervals ending at each entry of bin_uppers,
    which must be strictly increasing with an infinite last edge. Sample
    frequencies are mixed with a uniform floor, p' = (1 - floor*B)p + floor,
    so an empty bin scores -log2(floor) rather than infinity.
    """
    uppers = np.asarray(bin_uppers, dtype=np.float64)
    n_bins = uppers.size
    if n_bins < 2 or np.any(np.diff(uppers) <= 0) or not np.isinf(uppers[-1]):
        raise ValueError("bin_uppers must be strictly increasing and end at inf")
    if not 0.0 < floor < 1.0 or floor * n_bins >= 1.0:
        raise ValueError("floor must lie in (0, 1) with floor * n_bins < 1")
    if y < 0:
        raise ValueError(f"observation {y} outside bin coverage [0, inf)")
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("ign_sample needs a non-empty 1-d sample vector")
    bin_of = np.searchsorted(uppers, x, side="left")
    counts = np.bincount(bin_of, minlength=n_bins)
    p = counts / x.size
    y_bin = int(np.searchsorted(uppers, y, side="left"))
    mixed = (1.0 - floor * n_bins) * p[y_bin] + floor
    return float(-np.log2(mixed))


def map_point(samples) -> float:
    """Mode of a Gaussian KDE over the sample, the point estimate behind
    MSE and MAE.

    Silverman bandwidth, density evaluated on a 512-point grid spanning
    [min, max] padded by one bandwidth on each side; ties resolve to the
    smallest grid point and the result is clamped at 0. A sample with one
    distinct value short-circuits to that value.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("map_point needs at least 2 samples")
    values, counts = np.unique(x, return_counts=True)
    if values.size == 1:
        return max(float(values[0]), 0.0)
    h = silverman_bandwidth(x)
    grid = np.linspace(values[0] - h, values[-1] + h, 512)
    z = (grid[:, None] - values[None, :]) / h
    density = (counts * np.exp(-0.5 * z * z)).sum(axis=1)
    return max(float(grid[int(np.argmax(density))]), 0.0)


@dataclass
class ScoreReport:
    model_name: str
    window_start: int
    crps: float
    ign: float
    mis: float
    mse: float
    mae: float
    n_obs: int
    per_country: dict[str, dict[str, float]] | None
    country_fatalities: dict[str, int] | None
    total_fatalities: int
    nonzero_count: int
    country_n_obs: dict[str, int] | None = None
    country_nonzero: dict[str, int] | None = None


def score_forecast(fc: "ForecastSet", actuals: "PanelDataset",
                   country_map=None, model_name="model",
                   ign_bin_uppers=DEFAULT_IGN_BIN_UPPERS, ign_floor=1e-3,
                   mis_alpha=0.1) -> ScoreReport:
    """Score one forecast window against observed fatalities.

    The forecast must cover exactly the actuals' cells crossed with the 12
    window months. MSE and MAE are computed on KDE mode point estimates.
    When country_map is given, the same unweighted means are also taken
    within each country's cell-months.
    """
    window_months = range(fc.window_start, fc.window_start + 12)
    expected = {(int(c), int(m)) for c in actuals.cell_ids
                for m in window_months}
    got = set(fc.entries)
    if expected != got:
        missing = sorted(expected - got)[:5]
        extra = sorted(got - expected)[:5]
        raise ValidationError(
            f"forecast coverage mismatch: missing {missing}, extra {extra}")

    keys = sorted(fc.entries)
    n = len(keys)
    per = {name: np.empty(n) for name in METRIC_NAMES}
    y_all = np.empty(n)
    for i, (cell, month) in enumerate(keys):
        y = float(actuals.fatality(cell, month))
        samples = np.asarray(fc.entries[(cell, month)], dtype=np.float64)
        point = map_point(samples)
        per["crps"][i] = crps_sample(samples, y)
        per["ign"][i] = ign_sample(samples, y, ign_bin_uppers, ign_floor)
        per["mis"][i] = mis_sample(samples, y, mis_alpha)
        per["mse"][i] = (point - y) ** 2
        per["mae"][i] = abs(point - y)
        y_all[i] = y

    per_country = None
    country_fat = None
    country_n = None
    country_nz = None
    if country_map is not None:
        missing_cells = [int(c) for c in actuals.cell_ids
                         if int(c) not in country_map]
        if missing_cells:
            raise ValidationError(
                f"country map lacks cells {missing_cells[:5]}")
        groups = {}
        for i, (cell, _) in enumerate(keys):
            groups.setdefault(country_map[cell], []).append(i)
        per_country = {}
        country_fat = {}
        country_n = {}
        country_nz = {}
        for country in sorted(groups):
            idx = np.array(groups[country])
            per_country[country] = {name: float(per[name][idx].mean())
                                    for name in METRIC_NAMES}
            country_fat[country] = int(y_all[idx].sum())
            country_n[country] = int(idx.size)
            country_nz[country] = int((y_all[idx] > 0).sum())

    return ScoreReport(
        model_name=model_name, window_start=int(fc.window_start),
        crps=float(per["crps"].mean()), ign=float(per["ign"].mean()),
        mis=float(per["mis"].mean()), mse=float(per["mse"].mean()),
        mae=float(per["mae"].mean()), n_obs=n,
        per_country=per_country, country_fatalities=country_fat,
        total_fatalities=int(y_all.sum()),
        nonzero_count=int((y_all > 0).sum()),
        country_n_obs=country_n, country_nonzero=country_nz)


@dataclass
class RankTable:
    rankings: dict[tuple[int, str], dict[str, float]]  # (window, country)
    mean_rank: dict[str, float]
    mean_rank_nonzero: dict[str, float]


def rank_models(reports, metric="crps") -> RankTable:
    """Rank models within every (country, window), 1 = best, ties averaged.

    mean_rank averages over all countries and windows; mean_rank_nonzero
    only over countries with any fatalities in that window.
    """
    if metric not in METRIC_NAMES:
        raise ValidationError(f"unknown metric {metric!r}")
    by_window = {}
    for report in reports:
        if report.per_country is None:
            raise ValidationError(
                f"report {report.model_name!r} has no per-country scores")
        by_window.setdefault(report.window_start, []).append(report)

    rankings = {}
    collected = {}
    collected_nz = {}
    for window in sorted(by_window):
        group = by_window[window]
        names = [r.model_name for r in group]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate model names in window {window}")
        countries = sorted(group[0].per_country)
        for report in group[1:]:
            if sorted(report.per_country) != countries:
                raise ValidationError(
                    f"inconsistent country sets in window {window}")
        fats = group[0].country_fatalities
        for country in countries:
            values = np.array([r.per_country[country][metric] for r in group])
            ranks = rankdata(values, method="average")
            rankings[(window, country)] = dict(zip(names, ranks))
            for name, rank in zip(names, ranks):
                collected.setdefault(name, []).append(rank)
                if fats.get(country, 0) > 0:
                    collected_nz.setdefault(name, []).append(rank)

    mean_rank = {name: float(np.mean(v)) for name, v in collected.items()}
    mean_rank_nonzero = {name: float(np.mean(v))
                         for name, v in collected_nz.items()}
    return RankTable(rankings, mean_rank, mean_rank_nonzero)


REPORT_COLUMNS = ("model_name", "window_start", "scope", "country", "crps",
                  "ign", "mis", "mse", "mae", "n_obs", "total_fatalities",
                  "nonzero_count")


def write_report_csv(reports, path) -> None:
    """One aggregate row per report plus one row per country when the
    report carries per-country scores. Accepts a single report or a list;
    floats are written exactly (repr) so reading back loses nothing."""
    if isinstance(reports, ScoreReport):
        reports = [reports]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rep in reports:
            writer.writerow([rep.model_name, rep.window_start, "aggregate",
                             "", repr(rep.crps), repr(rep.ign),
                             repr(rep.mis), repr(rep.mse), repr(rep.mae),
                             rep.n_obs, rep.total_fatalities,
                             rep.nonzero_count])
            for country in sorted(rep.per_country or ()):
                m = rep.per_country[country]
                writer.writerow([
                    rep.model_name, rep.window_start, "country", country,
                    repr(m["crps"]), repr(m["ign"]), repr(m["mis"]),
                    repr(m["mse"]), repr(m["mae"]),
                    (rep.country_n_obs or {}).get(country, 0),
                    rep.country_fatalities[country],
                    (rep.country_nonzero or {}).get(country, 0)])


def read_report_csv(path) -> list[ScoreReport]:
    """Reports in file order, regrouped by their aggregate rows."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(REPORT_COLUMNS):
            raise ValidationError(f"{path}: unexpected report header "
                                  f"{header}")
        rows = [row for row in reader if row]
    reports = []
    current = None
    for row in rows:
        if len(row) != len(REPORT_COLUMNS):
            raise ValidationError(f"{path}: malformed report row {row!r}")
        (name, window, scope, country, crps, ign, mis, mse, mae, n_obs,
         total_fat, nonzero) = row
        metrics = dict(zip(METRIC_NAMES, map(float, (crps, ign, mis, mse,
                                                     mae))))
        if scope == "aggregate":
            current = ScoreReport(
                model_name=name, window_start=int(window),
                n_obs=int(n_obs), per_country=None, country_fatalities=None,
                total_fatalities=int(total_fat), nonzero_count=int(nonzero),
                **metrics)
            reports.append(current)
        elif scope == "country":
            if current is None or current.model_name != name \
                    or current.window_start != int(window):
                raise ValidationError(
                    f"{path}: country row for {name!r} window {window} "
                    "precedes its aggregate row")
            if current.per_country is None:
                current.per_country = {}
                current.country_fatalities = {}
                current.country_n_obs = {}
                current.country_nonzero = {}
            current.per_country[country] = metrics
            current.country_fatalities[country] = int(total_fat)
            current.country_n_obs[country] = int(n_obs)
            current.country_nonzero[country] = int(nonzero)
        else:
            raise ValidationError(f"{path}: unknown scope {scope!r}")
    if not reports:
        raise ValidationError(f"{path}: no score reports")
    return reports


def score_fatality_correlation(per_window_scores, per_window_fatalities,
                               per_window_nonzero_counts):
    """Pearson r of scores against fatality totals and non-zero counts."""
    s = np.asarray(per_window_scores, dtype=np.float64)
    f = np.asarray(per_window_fatalities, dtype=np.float64)
    z = np.asarray(per_window_nonzero_counts, dtype=np.float64)
    if not s.size == f.size == z.size:
        raise ValidationError("correlation inputs must be the same length")
    if s.size < 3:
        raise ValidationError("correlation needs at least 3 windows")
    for name, vec in (("scores", s), ("fatalities", f), ("nonzero", z)):
        if np.ptp(vec) == 0:
            raise ValidationError(
                f"correlation undefined: zero variance in {name}")
    r_fat = float(np.corrcoef(s, f)[0, 1])
    r_nonzero = float(np.corrcoef(s, z)[0, 1])
    return r_fat, r_nonzero
