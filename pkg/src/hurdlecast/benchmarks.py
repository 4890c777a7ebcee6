"""Reference forecasts built from recent history alone.

Five comparator families, all honoring the same two-month reporting gap
as the models: the last usable observation sits three months before the
forecast window opens. Each family produces one sample vector per cell
and reuses it for all 12 window months.
"""

from dataclasses import dataclass

import numpy as np

from ._util import derive_seed
from .errors import ConfigError, ValidationError
from .hurdle import SAMPLE_COUNT, WINDOW_MONTHS, ForecastSet
from .panel import PanelDataset

BENCHMARK_KINDS = ("all_zero", "poisson_last", "conflictology",
                   "conflictology_neighbors", "bootstrap_240")

# last observation usable for a window starting at month w is w - 3
CUTOFF_GAP = 3
LOOKBACK_MONTHS = 12
BOOTSTRAP_WINDOW_MONTHS = 240


@dataclass(frozen=True)
class BenchmarkSpec:
    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BENCHMARK_KINDS:
            raise ConfigError(f"unknown benchmark kind {self.kind!r}, "
                              f"expected one of {', '.join(BENCHMARK_KINDS)}")


def _cell_rng(spec, cell_id):
    return np.random.default_rng(
        derive_seed(spec.seed, spec.kind, int(cell_id)))


def _all_zero(spec, data, hist):
    shared = np.zeros(SAMPLE_COUNT, dtype=np.int64)
    return [shared] * data.n_cells


def _poisson_last(spec, data, hist):
    vecs = []
    zeros = np.zeros(SAMPLE_COUNT, dtype=np.int64)
    for j, cell in enumerate(data.cell_ids):
        lam = int(hist[-1, j])
        if lam == 0:
            vecs.append(zeros)  # Poisson(0) is a point mass at zero
            continue
        draws = _cell_rng(spec, cell).poisson(lam, SAMPLE_COUNT)
        vecs.append(np.sort(draws.astype(np.int64)))
    return vecs


def _conflictology(spec, data, hist):
    lo = max(0, hist.shape[0] - LOOKBACK_MONTHS)
    return [np.sort(hist[lo:, j]) for j in range(data.n_cells)]


def _neighbor_indices(data):
    """Queen adjacency on the half-degree lattice, self included.

    Cells key by their doubled coordinates floored to integers (cell
    centers sit on half-integer doubles, so rounding would collide
    adjacent rows); positions without a cell at the grid edge simply
    contribute nothing.
    """
    def key(la, lo):
        return int(np.floor(2 * la + 1e-9)), int(np.floor(2 * lo + 1e-9))

    key_of = {key(la, lo): j
              for j, (la, lo) in enumerate(zip(data.lat, data.lon))}
    groups = []
    for la, lo in zip(data.lat, data.lon):
        r, c = key(la, lo)
        idx = [key_of[(r + dr, c + dc)]
               for dr in (-1, 0, 1) for dc in (-1, 0, 1)
               if (r + dr, c + dc) in key_of]
        groups.append(idx)
    return groups


def _conflictology_neighbors(spec, data, hist):
    lo = max(0, hist.shape[0] - LOOKBACK_MONTHS)
    recent = hist[lo:]
    return [np.sort(recent[:, idx].ravel())
            for idx in _neighbor_indices(data)]


def _bootstrap_240(spec, data, hist):
    lo = max(0, hist.shape[0] - BOOTSTRAP_WINDOW_MONTHS)
    vecs = []
    for j, cell in enumerate(data.cell_ids):
        window = hist[lo:, j]
        rng = _cell_rng(spec, cell)
        vecs.append(np.sort(window[rng.integers(0, window.size,
                                                SAMPLE_COUNT)]))
    return vecs


_BUILDERS = {
    "all_zero": _all_zero,
    "poisson_last": _poisson_last,
    "conflictology": _conflictology,
    "conflictology_neighbors": _conflictology_neighbors,
    "bootstrap_240": _bootstrap_240,
}


def benchmark_forecast(spec: BenchmarkSpec, data: PanelDataset,
                       window_start: int) -> ForecastSet:
    """Benchmark samples for the 12 months starting at window_start.

    The history available to every kind ends at window_start - 3; kinds
    with a shorter natural lookback than the data offers (12 months for
    the conflictologies, 240 for the bootstrap) use what exists. Draws
    are seeded per cell, so outputs do not depend on cell order.
    """
    start = int(data.month_ids[0])
    if window_start < start + CUTOFF_GAP:
        raise ValidationError(
            f"insufficient history: window starting at {window_start} "
            f"needs an observation at {window_start - CUTOFF_GAP}, data "
            f"begins at {start}")
    ci = data.month_index(window_start - CUTOFF_GAP)
    hist = data.fatalities[:ci + 1]
    vecs = _BUILDERS[spec.kind](spec, data, hist)
    entries = {}
    for j, cell in enumerate(data.cell_ids):
        for m in range(window_start, window_start + WINDOW_MONTHS):
            entries[(int(cell), int(m))] = vecs[j]
    return ForecastSet(window_start=window_start, entries=entries)
