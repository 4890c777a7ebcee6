"""Grid-month panel data model, CSV ingestion, and a synthetic generator.

The panel is dense by construction: one row per cell and month, explicit
zeros included, because every cell-month is scored downstream. Cells live
on a regular 0.5 degree lattice with centers at x.25 or x.75.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ValidationError

PANEL_BASE_COLUMNS = ("cell_id", "month_id", "lat", "lon", "fatalities")


@dataclass(frozen=True)
class GridCell:
    cell_id: int
    lat: float
    lon: float


@dataclass(frozen=True)
class SyntheticConfig:
    n_cells: int
    n_months: int
    target_nonzero_share: float = 0.004
    hotspot_count: int = 3
    persistence: float = 0.7
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.target_nonzero_share < 1:
            raise ConfigError("target_nonzero_share must lie in (0, 1)")
        if not 0 <= self.persistence <= 1:
            raise ConfigError("persistence must lie in [0, 1]")
        if self.n_cells < 9:
            raise ConfigError("synthetic panels need at least 9 cells")
        if self.n_months < 24:
            raise ConfigError("synthetic panels need at least 24 months")
        if self.hotspot_count > self.n_cells:
            raise ConfigError("hotspot_count exceeds n_cells")
        if self.hotspot_count < 1:
            raise ConfigError("hotspot_count must be at least 1")


class PanelDataset:
    """Dense cell x month panel.

    Internally a (n_months, n_cells) fatality matrix plus a
    (n_months, n_cells, n_features) feature cube, with cells sorted by
    cell_id and months contiguous. All arrays are read-only after
    construction, so any amount of concurrent reading is safe.
    """

    def __init__(self, cell_ids, lat, lon, month_ids, fatalities, features,
                 feature_names):
        self.cell_ids = np.asarray(cell_ids, dtype=np.int64)
        self.lat = np.asarray(lat, dtype=np.float64)
        self.lon = np.asarray(lon, dtype=np.float64)
        self.month_ids = np.asarray(month_ids, dtype=np.int64)
        self.fatalities = np.asarray(fatalities, dtype=np.int64)
        self.features = np.asarray(features, dtype=np.float64)
        self.feature_names = tuple(feature_names)
        self._validate()
        for arr in (self.cell_ids, self.lat, self.lon, self.month_ids,
                    self.fatalities, self.features):
            arr.setflags(write=False)

    def _validate(self):
        n_cells, n_months = self.cell_ids.size, self.month_ids.size
        if n_cells == 0 or n_months == 0:
            raise ValidationError("empty panel")
        if np.unique(self.cell_ids).size != n_cells:
            raise ValidationError("duplicate cell_id in panel")
        if np.any(np.diff(self.cell_ids) <= 0):
            raise ValidationError("cell_ids must be sorted ascending")
        if np.any(np.diff(self.month_ids) != 1):
            raise ValidationError("month_ids must be contiguous")
        for name, coord in (("lat", self.lat), ("lon", self.lon)):
            off = np.abs(np.mod(2.0 * coord, 1.0) - 0.5)
            if np.any(off > 1e-9):
                bad = int(self.cell_ids[np.argmax(off > 1e-9)])
                raise ValidationError(
                    f"cell {bad}: {name} is not a 0.5 degree lattice center "
                    "(expected fractional part .25 or .75)")
        if self.fatalities.shape != (n_months, n_cells):
            raise ValidationError("fatality matrix shape mismatch")
        if np.any(self.fatalities < 0):
            raise ValidationError("negative fatalities in panel")
        if self.features.shape[:2] != (n_months, n_cells):
            raise ValidationError("feature cube shape mismatch")
        if self.features.shape[2] != len(self.feature_names):
            raise ValidationError("feature_names length mismatch")

    @property
    def n_cells(self) -> int:
        return self.cell_ids.size

    @property
    def n_months(self) -> int:
        return self.month_ids.size

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def cells(self) -> list[GridCell]:
        return [GridCell(int(c), float(la), float(lo))
                for c, la, lo in zip(self.cell_ids, self.lat, self.lon)]

    def cell_index(self, cell_id) -> int:
        idx = int(np.searchsorted(self.cell_ids, cell_id))
        if idx >= self.n_cells or self.cell_ids[idx] != cell_id:
            raise ValidationError(f"unknown cell_id {cell_id}")
        return idx

    def month_index(self, month_id) -> int:
        idx = int(month_id) - int(self.month_ids[0])
        if not 0 <= idx < self.n_months:
            raise ValidationError(f"month {month_id} outside panel range")
        return idx

    def fatality(self, cell_id, month_id) -> int:
        return int(self.fatalities[self.month_index(month_id),
                                   self.cell_index(cell_id)])

    def equals(self, other) -> bool:
        return (np.array_equal(self.cell_ids, other.cell_ids)
                and np.array_equal(self.lat, other.lat)
                and np.array_equal(self.lon, other.lon)
                and np.array_equal(self.month_ids, other.month_ids)
                and np.array_equal(self.fatalities, other.fatalities)
                and np.array_equal(self.features, other.features)
                and self.feature_names == other.feature_names)


def load_panel(path, format="csv") -> PanelDataset:
    """Read a dense panel CSV and validate it.

    The header must start with cell_id,month_id,lat,lon,fatalities; any
    further columns are features. Rows may arrive in any order; the panel
    is stored sorted by (month_id, cell_id). A missing (cell, month) pair
    raises a sparse panel error naming the first gap.
    """
    if format != "csv":
        raise ConfigError(f"unsupported panel format: {format}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise ValidationError(f"{path}: empty file")
    header = tuple(h.strip() for h in header)
    if header[:5] != PANEL_BASE_COLUMNS:
        raise ValidationError(
            f"{path}: header must start with {','.join(PANEL_BASE_COLUMNS)}")
    feature_names = header[5:]
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2,
                         dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric value ({exc})") from None
    if raw.size == 0:
        raise ValidationError(f"{path}: no data rows")
    if raw.shape[1] != len(header):
        raise ValidationError(
            f"{path}: rows have {raw.shape[1]} columns, header names "
            f"{len(header)}")
    return _assemble_panel(raw, feature_names, origin=str(path))


def _assemble_panel(raw, feature_names, origin="panel"):
    cell_col = raw[:, 0]
    month_col = raw[:, 1]
    if np.any(cell_col != np.round(cell_col)) or np.any(month_col != np.round(month_col)):
        raise ValidationError(f"{origin}: cell_id and month_id must be integers")
    fat_col = raw[:, 4]
    if np.any(fat_col < 0):
        row = int(np.argmax(fat_col < 0))
        raise ValidationError(
            f"{origin}: negative fatalities for cell {int(cell_col[row])} "
            f"month {int(month_col[row])}")
    if np.any(fat_col != np.round(fat_col)):
        raise ValidationError(f"{origin}: fatalities must be integers")

    cell_ids = np.unique(cell_col.astype(np.int64))
    month_ids = np.unique(month_col.astype(np.int64))
    if np.any(np.diff(month_ids) != 1):
        missing = int(np.min(np.setdiff1d(
            np.arange(month_ids[0], month_ids[-1] + 1), month_ids)))
        raise ValidationError(f"{origin}: sparse panel, missing month {missing}")
    n_cells, n_months = cell_ids.size, month_ids.size
    ci = np.searchsorted(cell_ids, cell_col.astype(np.int64))
    mi = (month_col.astype(np.int64) - month_ids[0])

    seen = np.zeros((n_months, n_cells), dtype=bool)
    if raw.shape[0] > n_months * n_cells:
        raise ValidationError(f"{origin}: duplicate (cell, month) rows")
    seen[mi, ci] = True
    if not seen.all():
        gap = np.argwhere(~seen)[0]
        raise ValidationError(
            f"{origin}: sparse panel, missing cell "
            f"{int(cell_ids[gap[1]])} month {int(month_ids[gap[0]])}")
    if raw.shape[0] != n_months * n_cells:
        raise ValidationError(f"{origin}: duplicate (cell, month) rows")

    lat = np.empty(n_cells)
    lon = np.empty(n_cells)
    lat[ci] = raw[:, 2]
    lon[ci] = raw[:, 3]
    # a cell_id must keep one coordinate across all its rows
    if (np.any(np.abs(lat[ci] - raw[:, 2]) > 1e-9)
            or np.any(np.abs(lon[ci] - raw[:, 3]) > 1e-9)):
        raise ValidationError(f"{origin}: inconsistent coordinates for a cell_id")

    fatalities = np.zeros((n_months, n_cells), dtype=np.int64)
    fatalities[mi, ci] = fat_col.astype(np.int64)
    features = np.zeros((n_months, n_cells, len(feature_names)))
    features[mi, ci, :] = raw[:, 5:]
    return PanelDataset(cell_ids, lat, lon, month_ids, fatalities, features,
                        feature_names)


def write_panel(data: PanelDataset, path) -> None:
    """Write the CSV form: UTF-8, LF endings, rows sorted by (month, cell).

    Floats are written with repr so load_panel(write_panel(d)) reproduces d
    exactly.
    """
    buf = io.StringIO()
    buf.write(",".join(PANEL_BASE_COLUMNS + data.feature_names) + "\n")
    for mi, month in enumerate(data.month_ids):
        for ci, cell in enumerate(data.cell_ids):
            fields = [str(int(cell)), str(int(month)),
                      repr(float(data.lat[ci])), repr(float(data.lon[ci])),
                      str(int(data.fatalities[mi, ci]))]
            fields.extend(repr(float(v)) for v in data.features[mi, ci])
            buf.write(",".join(fields) + "\n")
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def generate_synthetic(config: SyntheticConfig) -> PanelDataset:
    """Generate a panel with the statistical shape of the real problem.

    Violence is laid down as episodes: a start cell-month opens an episode
    whose duration is geometric. Most episodes are short flare-ups whose
    continuation probability is ``config.persistence``; a fraction
    0.5*persistence of them are protracted runs continuing ten times as
    reliably, mirroring how a minority of real conflicts account for most
    conflict-months. Episodes open small and escalate: monthly counts
    follow a slowly rising log-space random walk, so an active cell's
    recent history carries real signal about its next months. Month-to-
    month recurrence of an active cell sits at or above the configured
    persistence. Episode starts are confined to the cells nearest one of
    the ``hotspot_count`` hotspots, so the bulk of the map is
    structurally quiet. Episode counts are calibrated so the realized
    non-zero share lands within 10% (relative) of the target.

    Features per cell-month:

    - lag1_fatalities: fatalities in the previous month (0 at the start).
    - rolling12_sum: fatalities summed over the trailing 12 months,
      current month included.
    - months_since_violence: months since the last non-zero month, 0 when
      the current month is non-zero, month index + 1 when never.
    - risk_a, risk_b: static noisy cell features, graded hotspot
      proximity and hotspot membership respectively.
    - noise_a, noise_b: pure noise, no relation to the target.

    Deterministic for a fixed config, including the calibration loop.
    """
    rng = np.random.default_rng(config.seed)
    side = int(np.ceil(np.sqrt(config.n_cells)))
    rows, cols = np.divmod(np.arange(config.n_cells), side)
    lat = 0.25 + 0.5 * rows
    lon = 0.25 + 0.5 * cols
    cell_ids = np.arange(config.n_cells, dtype=np.int64)

    hotspots = rng.choice(config.n_cells, size=config.hotspot_count,
                          replace=False)
    d2 = ((lat[:, None] - lat[hotspots][None, :]) ** 2
          + (lon[:, None] - lon[hotspots][None, :]) ** 2)
    radius = max(1.0, 0.25 * side * 0.5 / np.sqrt(config.hotspot_count))
    risk = np.exp(-d2.min(axis=1) / (2.0 * radius ** 2))
    # starts are confined to the cells nearest a hotspot; the rest of the
    # map never seeds an episode. The floor keeps high-share configs
    # reachable for the calibration loop below.
    n_eligible = min(config.n_cells, max(
        config.hotspot_count,
        int(np.ceil(config.n_cells * max(0.05, 2.0 * config.target_nonzero_share)))))
    order = np.argsort(-risk, kind="stable")
    eligible = np.zeros(config.n_cells, dtype=bool)
    eligible[order[:n_eligible]] = True
    start_weight = np.where(eligible, risk ** 2, 0.0)
    start_weight = start_weight / start_weight.sum()

    n_total = config.n_cells * config.n_months
    target_count = config.target_nonzero_share * n_total
    # duration mixture mean: (1 - pi) / (1 - p) + pi * 10 / (1 - p) with
    # pi = 0.5 * p, the protracted-run share
    p_stop = 1.0 - min(config.persistence, 0.999)
    mean_duration = (1.0 + 4.5 * config.persistence) / p_stop
    n_episodes = max(1, int(round(target_count / mean_duration)))

    fatalities = np.zeros((config.n_months, config.n_cells), dtype=np.int64)

    def lay_episode(cell, start):
        # short flare-up or protracted run; both geometric, the run
        # continuing ten times as reliably
        if rng.random() < 0.5 * config.persistence:
            cont = 1.0 - p_stop / 10.0
        else:
            cont = config.persistence
        length = int(rng.geometric(max(1.0 - cont, 1e-3)))
        log_intensity = rng.normal(0.2, 0.4)
        for t in range(start, min(start + length, config.n_months)):
            fatalities[t, cell] += 1 + rng.poisson(np.exp(log_intensity))
            # episodes open small and escalate gradually; the cap keeps
            # long runs from running away
            log_intensity = min(log_intensity + rng.normal(0.1, 0.12), 3.2)

    starts_cells = rng.choice(config.n_cells, size=n_episodes, p=start_weight)
    starts_months = rng.integers(0, config.n_months, size=n_episodes)
    for cell, start in zip(starts_cells, starts_months):
        lay_episode(cell, start)

    # calibration: top up or thin out episodes until the non-zero share is
    # within 10% of target; bounded so a bad config cannot loop forever
    for _ in range(40):
        share = np.count_nonzero(fatalities) / n_total
        if abs(share - config.target_nonzero_share) <= 0.1 * config.target_nonzero_share:
            break
        if share < config.target_nonzero_share:
            extra = max(1, int(round(n_episodes * 0.1)))
            for cell, start in zip(
                    rng.choice(config.n_cells, size=extra, p=start_weight),
                    rng.integers(0, config.n_months, size=extra)):
                lay_episode(cell, start)
        else:
            nz_months, nz_cells = np.nonzero(fatalities)
            n_drop = max(1, int(round(0.05 * nz_months.size)))
            drop = rng.choice(nz_months.size, size=n_drop, replace=False)
            fatalities[nz_months[drop], nz_cells[drop]] = 0

    features = np.zeros((config.n_months, config.n_cells, 7))
    features[1:, :, 0] = fatalities[:-1]
    cum = np.cumsum(fatalities, axis=0)
    features[:, :, 1] = cum
    features[12:, :, 1] = cum[12:] - cum[:-12]
    nonzero = fatalities > 0
    since = np.empty((config.n_months, config.n_cells))
    running = np.full(config.n_cells, -1.0)
    for t in range(config.n_months):
        running = np.where(nonzero[t], 0.0, np.where(running >= 0, running + 1, -1))
        since[t] = np.where(running >= 0, running, t + 1.0)
    features[:, :, 2] = since
    features[:, :, 3] = risk + 0.25 * rng.normal(size=config.n_cells)
    features[:, :, 4] = eligible + 0.25 * rng.normal(size=config.n_cells)
    features[:, :, 5] = rng.normal(size=(config.n_months, config.n_cells))
    features[:, :, 6] = rng.normal(size=(config.n_months, config.n_cells))

    names = ("lag1_fatalities", "rolling12_sum", "months_since_violence",
             "risk_a", "risk_b", "noise_a", "noise_b")
    return PanelDataset(cell_ids, lat, lon, np.arange(config.n_months),
                        fatalities, features, names)


class SupervisedFrame(NamedTuple):
    X: np.ndarray
    y_binary: np.ndarray
    y_count: np.ndarray
    index: np.ndarray  # (n, 2) of (cell_id, feature month)


def build_supervised_frame(data: PanelDataset, timestep_k: int,
                           cutoff_month: int, start_month=None) -> SupervisedFrame:
    """One row per (cell, s) with s <= cutoff_month - timestep_k.

    Features are taken at month s, the count label at month s + timestep_k,
    so nothing after cutoff_month is ever read. start_month narrows the
    feature months from below (used by the CV splitter).
    """
    if not 3 <= timestep_k <= 14:
        raise ConfigError(f"timestep_k must lie in [3, 14], got {timestep_k}")
    month0 = int(data.month_ids[0])
    data.month_index(cutoff_month)  # range check
    s_lo = month0 if start_month is None else max(month0, int(start_month))
    s_hi = int(cutoff_month) - timestep_k
    if s_hi < s_lo:
        raise ValidationError(
            f"empty training frame: cutoff {cutoff_month} minus timestep "
            f"{timestep_k} precedes month {s_lo}")
    lo, hi = data.month_index(s_lo), data.month_index(s_hi)
    n_months = hi - lo + 1
    X = data.features[lo:hi + 1].reshape(n_months * data.n_cells,
                                         data.n_features)
    y_count = data.fatalities[lo + timestep_k:hi + timestep_k + 1].reshape(-1)
    months = np.repeat(data.month_ids[lo:hi + 1], data.n_cells)
    cells = np.tile(data.cell_ids, n_months)
    index = np.column_stack([cells, months])
    return SupervisedFrame(X, y_count > 0, y_count, index)


def load_country_map(path) -> dict[int, str]:
    """Read a cell_id,country_code CSV into a dict."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["cell_id", "country_code"]:
            raise ValidationError(f"{path}: header must be cell_id,country_code")
        for row in reader:
            if not row:
                continue
            out[int(row[0])] = row[1].strip()
    if not out:
        raise ValidationError(f"{path}: no mappings")
    return out
