"""Zero-inflated CRPS informativeness experiment: actual generation,
prediction degradation, and the score surface."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hurdlecast._util import round_half_up
from hurdlecast.errors import ConfigError, ValidationError
from hurdlecast.panel import PanelDataset
from hurdlecast.simulation import (LognormalSource, PanelKdeSource,
                                   PredictionTable, SimConfig, SimResult,
                                   SimRow, build_predictions, mean_crps,
                                   run_simulation, simulate_actuals,
                                   write_sim_csv)

SMALL = dict(n_total=1000, n_nonzero=40, replications=2, seed=3)


@pytest.fixture(scope="module")
def small_cfg():
    return SimConfig(**SMALL)


@pytest.fixture(scope="module")
def actuals(small_cfg):
    return simulate_actuals(small_cfg)


@pytest.fixture(scope="module")
def small_surface():
    return run_simulation(SimConfig(n_total=5000, n_nonzero=60,
                                    replications=2, seed=11))


def tiny_panel(nonzero_values):
    """Single-cell panel whose fatality column is the given sequence."""
    values = np.asarray(nonzero_values, dtype=np.int64)
    return PanelDataset(np.array([7]), np.array([30.25]), np.array([10.25]),
                        np.arange(values.size), values[:, None],
                        np.zeros((values.size, 1, 1)), ("f_a",))


class TestSimConfig:

    def test_defaults(self):
        cfg = SimConfig()
        assert cfg.n_total == 157_320 and cfg.n_nonzero == 787
        assert cfg.accuracy_grid[0] == 1.0 and cfg.accuracy_grid[-1] == 0.1
        assert 0.0 in cfg.noise_grid and 1.0 in cfg.noise_grid
        assert cfg.noise_scale == 50.0 and cfg.replications == 5
        assert isinstance(cfg.nonzero_source, LognormalSource)

    @pytest.mark.parametrize("kw", [
        dict(n_total=0),
        dict(n_nonzero=-1),
        dict(n_total=10, n_nonzero=11),
        dict(accuracy_grid=()),
        dict(noise_grid=()),
        dict(accuracy_grid=(0.5, 0.0)),
        dict(accuracy_grid=(1.2,)),
        dict(noise_grid=(-0.5,)),
        dict(noise_scale=-1.0),
        dict(replications=0),
    ])
    def test_rejects_bad_values(self, kw):
        with pytest.raises(ConfigError):
            SimConfig(**kw)


class TestSimulateActuals:

    def test_exact_zero_count(self):
        acts = simulate_actuals(SimConfig(n_total=1000, n_nonzero=5))
        assert acts.size == 1000
        assert int((acts == 0).sum()) == 995
        assert (acts[acts > 0] >= 1).all()

    def test_integer_and_nonnegative(self):
        acts = simulate_actuals(SimConfig(**SMALL))
        assert acts.dtype == np.int64
        assert acts.min() >= 0

    def test_deterministic_per_seed(self):
        a = simulate_actuals(SimConfig(**SMALL))
        b = simulate_actuals(SimConfig(**SMALL))
        c = simulate_actuals(SimConfig(**{**SMALL, "seed": 4}))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_negative_draws_are_reflected(self):
        class NegativeSource:
            def draw(self, rng, size):
                return rng.normal(-6.0, 1.0, size)

        cfg = SimConfig(n_total=200, n_nonzero=100,
                        nonzero_source=NegativeSource())
        acts = simulate_actuals(cfg)
        nz = acts[acts > 0]
        assert nz.size == 100
        assert nz.min() >= 1
        assert 4 <= nz.mean() <= 8

    def test_panel_kde_source(self):
        values = [0] * 10 + [3] * 30 + [5000]
        cfg = SimConfig(n_total=500, n_nonzero=200,
                        nonzero_source=PanelKdeSource(tiny_panel(values)))
        acts = simulate_actuals(cfg)
        nz = acts[acts > 0]
        assert nz.size == 200 and nz.min() >= 1
        # the 5000 lies outside the modeled range, draws hug the 3s
        assert nz.max() < 100

    def test_panel_kde_needs_enough_observations(self):
        cfg = SimConfig(n_total=100, n_nonzero=10,
                        nonzero_source=PanelKdeSource(tiny_panel([4] * 20)))
        with pytest.raises(ValidationError, match="lognormal"):
            simulate_actuals(cfg)


class TestBuildPredictions:

    def test_perfect_predictions_keep_every_row(self, small_cfg, actuals):
        table = build_predictions(actuals, 1.0, 0.0, small_cfg)
        nz = set(np.flatnonzero(actuals > 0).tolist())
        assert set(table.rows) == nz
        assert table.replaced.size == 0
        for i, vec in table.rows.items():
            assert vec.shape == (1000,)
            assert np.all(np.diff(vec) >= 0)
            assert abs(vec.mean() - actuals[i]) < 5 * np.sqrt(
                actuals[i] / 1000) + 0.2

    def test_replacement_count_at_point_eight(self):
        cfg = SimConfig(n_total=2000, n_nonzero=787, seed=5)
        actuals = simulate_actuals(cfg)
        table = build_predictions(actuals, 0.8, 0.0, cfg)
        assert table.replaced.size == 157
        assert len(table.rows) == 787 - 157

    @pytest.mark.parametrize("alpha,expected", [
        (1.0, 0), (0.9, 79), (0.8, 157), (0.7, 236), (0.6, 315),
        (0.5, 394), (0.4, 472), (0.3, 551), (0.2, 630), (0.1, 708)])
    def test_replacement_counts_over_the_grid(self, alpha, expected):
        cfg = SimConfig(n_total=800, n_nonzero=787, seed=5)
        actuals = simulate_actuals(cfg)
        table = build_predictions(actuals, alpha, 0.0, cfg)
        assert table.replaced.size == expected

    @settings(max_examples=30, deadline=None)
    @given(alpha=st.floats(min_value=0.01, max_value=1.0))
    def test_replacement_count_formula(self, alpha):
        cfg = SimConfig(n_total=20, n_nonzero=13, seed=2)
        actuals = simulate_actuals(cfg)
        table = build_predictions(actuals, alpha, 0.0, cfg)
        assert table.replaced.size == round_half_up((1 - alpha) * 13)

    def test_replaced_rows_and_zero_actuals_read_as_zeros(self, small_cfg,
                                                          actuals):
        table = build_predictions(actuals, 0.5, 0.0, small_cfg)
        assert table.replaced.size == 20
        for i in table.replaced:
            assert not table.vector(int(i)).any()
        zero_row = int(np.flatnonzero(actuals == 0)[0])
        assert not table.vector(zero_row).any()
        with pytest.raises(ValidationError):
            table.vector(small_cfg.n_total)

    def test_noise_clamps_centers_at_zero(self):
        cfg = SimConfig(n_total=300, n_nonzero=250, seed=9,
                        nonzero_source=LognormalSource(mu=0.0, sigma=0.1))
        actuals = simulate_actuals(cfg)  # non-zero actuals all tiny
        table = build_predictions(actuals, 1.0, 1.0, cfg)
        mins = [vec.min() for vec in table.rows.values()]
        assert min(mins) >= 0
        # with scale 50 about half the shifts are negative and clamp
        assert sum(1 for vec in table.rows.values() if not vec.any()) > 50

    def test_deterministic(self, small_cfg, actuals):
        a = build_predictions(actuals, 0.7, 0.5, small_cfg)
        b = build_predictions(actuals, 0.7, 0.5, small_cfg)
        assert np.array_equal(a.replaced, b.replaced)
        assert a.rows.keys() == b.rows.keys()
        for i in a.rows:
            assert np.array_equal(a.rows[i], b.rows[i])

    @pytest.mark.parametrize("alpha,noise", [(0.0, 0.0), (-0.2, 0.0),
                                             (1.1, 0.0), (0.5, -1.0)])
    def test_rejects_bad_degradation(self, small_cfg, actuals, alpha, noise):
        with pytest.raises(ConfigError):
            build_predictions(actuals, alpha, noise, small_cfg)


class TestMeanCrps:

    def test_all_replaced_scores_the_actual_itself(self):
        actuals = np.array([0, 0, 3])
        table = PredictionTable(n_total=3, rows={},
                                replaced=np.array([2]))
        assert mean_crps(actuals, table) == pytest.approx(1.0)

    def test_point_mass_on_the_actual_scores_zero(self):
        actuals = np.array([0, 0, 3])
        table = PredictionTable(n_total=3,
                                rows={2: np.full(1000, 3)},
                                replaced=np.array([], dtype=np.int64))
        assert mean_crps(actuals, table) == 0.0

    def test_zero_actuals_contribute_nothing(self):
        cfg = SimConfig(**SMALL)
        actuals = simulate_actuals(cfg)
        table = build_predictions(actuals, 1.0, 0.0, cfg)
        from hurdlecast.scoring import crps_sample
        manual = sum(crps_sample(vec, float(actuals[i]))
                     for i, vec in table.rows.items()) / cfg.n_total
        assert mean_crps(actuals, table) == pytest.approx(manual, abs=1e-12)

    def test_length_mismatch_rejected(self):
        table = PredictionTable(n_total=3, rows={},
                                replaced=np.array([], dtype=np.int64))
        with pytest.raises(ValidationError):
            mean_crps(np.zeros(4), table)


class TestRunSimulation:

    def test_grid_coverage(self, small_surface):
        result = small_surface
        assert len(result.rows) == 10 * 5 * 2
        seen = {(r.alpha, r.noise, r.replication) for r in result.rows}
        assert len(seen) == len(result.rows)
        assert all(r.mean_crps >= 0 for r in result.rows)

    def test_deterministic(self, small_surface):
        again = run_simulation(SimConfig(n_total=5000, n_nonzero=60,
                                         replications=2, seed=11))
        assert again.rows == small_surface.rows

    def test_monotone_in_accuracy_at_zero_noise(self, small_surface):
        result = small_surface
        for rep in (0, 1):
            means = [r.mean_crps for r in result.rows
                     if r.noise == 0.0 and r.replication == rep]
            alphas = [r.alpha for r in result.rows
                      if r.noise == 0.0 and r.replication == rep]
            assert alphas == sorted(alphas, reverse=True)
            assert all(a <= b for a, b in zip(means, means[1:]))

    def test_averaged_matches_manual_means(self, small_surface):
        result = small_surface
        avg = result.averaged()
        key = (0.5, 0.0)
        manual = np.mean([r.mean_crps for r in result.rows
                          if (r.alpha, r.noise) == key])
        assert avg[key] == pytest.approx(manual, abs=1e-15)

    def test_matches_standalone_prediction_path(self):
        cfg = SimConfig(n_total=2000, n_nonzero=60, replications=1, seed=21)
        surface = run_simulation(cfg).averaged()
        actuals = simulate_actuals(cfg)
        table = build_predictions(actuals, 1.0, 0.0, cfg)
        standalone = mean_crps(actuals, table)
        assert surface[(1.0, 0.0)] == pytest.approx(standalone, rel=0.05)

    def test_negative_mean_rejected(self):
        with pytest.raises(ValidationError):
            SimResult(rows=(SimRow(1.0, 0.0, 0, -0.1),))


class TestSimCsv:

    def test_round_trip(self, tmp_path):
        result = run_simulation(SimConfig(n_total=400, n_nonzero=12,
                                          replications=1, seed=2))
        path = tmp_path / "sim.csv"
        write_sim_csv(result, path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(result.rows)
        for raw, row in zip(rows, result.rows):
            assert float(raw["alpha"]) == row.alpha
            assert float(raw["noise"]) == row.noise
            assert int(raw["replication"]) == row.replication
            assert float(raw["mean_crps"]) == row.mean_crps
