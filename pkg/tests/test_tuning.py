"""Cross-validation splits, the penalized tuning metric, average
precision, and the seeded random hyperparameter search."""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hurdlecast.errors import ConfigError, TuningError, ValidationError
from hurdlecast.forest import HyperParams
from hurdlecast.panel import (PanelDataset, SyntheticConfig,
                              build_supervised_frame, generate_synthetic)
from hurdlecast.tuning import (STAGE_CLASSIFIER, STAGE_REGRESSOR, CvSplit,
                               TuneResult, _pick_best, average_precision,
                               make_cv_splits, random_search, tune_score,
                               write_tuning_trace)


# ---------------------------------------------------------------- tune_score

class TestTuneScore:

    def test_identical_folds(self):
        # mean_test 0.5, penalty 0.5 * |0.7 - 0.5| = 0.1
        assert tune_score([(0.7, 0.5)] * 5) == pytest.approx(0.4, abs=1e-12)

    def test_zero_penalty_identity(self):
        folds = [(0.6, 0.6), (0.2, 0.2)]
        expected = float(np.mean([0.6, 0.2]))
        assert tune_score(folds) == expected

    def test_penalty_can_push_below_zero(self):
        # mean_train 0.9, mean_test 0.2 -> 0.2 - 0.35
        folds = [(0.9, 0.1), (0.9, 0.3)]
        assert tune_score(folds) == pytest.approx(-0.15, abs=1e-12)

    def test_empty_folds_rejected(self):
        with pytest.raises(ValueError, match="fold"):
            tune_score([])

    @given(st.lists(st.tuples(st.floats(-1, 1, allow_nan=False),
                              st.floats(-1, 1, allow_nan=False)),
                    min_size=1, max_size=8))
    def test_never_exceeds_mean_test(self, folds):
        mean_train = float(np.mean([f[0] for f in folds]))
        mean_test = float(np.mean([f[1] for f in folds]))
        score = tune_score(folds)
        assert score <= mean_test
        if mean_train == mean_test:
            assert score == mean_test
        else:
            assert score < mean_test


# -------------------------------------------------------- average precision

class TestAveragePrecision:

    def test_perfect_ranking(self):
        assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_alternating_example(self):
        # PR walk: hit at rank 1 (P=1, dR=1/2), miss, hit at rank 3
        # (P=2/3, dR=1/2), miss
        ap = average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
        assert ap == pytest.approx(0.5 * (1.0 + 2.0 / 3.0), abs=1e-12)

    def test_grouped_ties_enter_together(self):
        # the tied pair forms one threshold: P=1/2 at R=1/2, then the
        # last positive brings P=2/3 at R=1
        ap = average_precision([0.5, 0.5, 0.2], [1, 0, 1])
        assert ap == pytest.approx(0.5 * 0.5 + 0.5 * (2.0 / 3.0), abs=1e-12)

    def test_all_positives_ranked_last(self):
        assert average_precision([3.0, 2.0, 1.0], [0, 0, 1]) == \
            pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_no_positive_labels(self):
        with pytest.raises(ValidationError, match="positive"):
            average_precision([0.3, 0.2], [0, 0])

    def test_non_binary_labels(self):
        with pytest.raises(ValidationError, match="binary"):
            average_precision([0.3, 0.2], [2, 0])

    def test_length_mismatch(self):
        with pytest.raises(ValidationError, match="length"):
            average_precision([0.3, 0.2, 0.1], [1, 0])

    def test_input_order_irrelevant(self):
        scores = np.array([0.1, 0.9, 0.5, 0.5, 0.3, 0.7])
        labels = np.array([0, 1, 1, 0, 0, 1])
        base = average_precision(scores, labels)
        rng = np.random.default_rng(4)
        for _ in range(5):
            perm = rng.permutation(scores.size)
            assert average_precision(scores[perm], labels[perm]) == base

    def test_monotone_transform_invariance(self):
        from scipy.stats import rankdata
        rng = np.random.default_rng(7)
        scores = rng.choice([0.1, 0.4, 0.4, 0.8], size=30)
        labels = (rng.random(30) < 0.3).astype(int)
        labels[0] = 1
        # ranks preserve both order and tie structure exactly
        assert average_precision(rankdata(scores), labels) == \
            average_precision(scores, labels)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_bounded_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 40))
        scores = rng.random(n)
        labels = (rng.random(n) < 0.4).astype(int)
        labels[int(rng.integers(0, n))] = 1
        ap = average_precision(scores, labels)
        assert 0.0 <= ap <= 1.0


# ----------------------------------------------------------------- CV splits

def quick_panel(n_cells=9, n_months=120, seed=3, share=0.15):
    cfg = SyntheticConfig(n_cells=n_cells, n_months=n_months,
                          target_nonzero_share=share, hotspot_count=2,
                          persistence=0.7, seed=seed)
    return generate_synthetic(cfg)


class TestMakeCvSplits:

    def test_three_folds_on_ten_year_panel(self):
        data = quick_panel()
        splits = make_cv_splits(data, 3, 119, n_folds=3)
        assert len(splits) == 3
        assert [s.train_start for s in splits] == [0, 22, 43]
        for s in splits:
            assert s.train_end - s.train_start + 1 == 60
            assert s.test_label_start == s.train_end + 3
            assert s.test_label_end == s.test_label_start + 11
            assert s.test_label_end <= 119 - 3
        assert splits[-1].test_label_end == 116  # last fold abuts the cutoff

    def test_default_five_folds_evenly_spaced(self):
        data = quick_panel()
        splits = make_cv_splits(data, 3, 119)
        assert [s.train_start for s in splits] == [0, 11, 22, 32, 43]

    def test_single_fold_abuts_cutoff(self):
        data = quick_panel()
        (split,) = make_cv_splits(data, 3, 119, n_folds=1)
        assert split.test_label_end == 116

    def test_not_enough_months(self):
        data = quick_panel(n_months=60)
        with pytest.raises(ValidationError,
                           match="not enough months.*need at least 82"):
            make_cv_splits(data, 3, 59)

    def test_labels_respect_gap_for_every_timestep(self):
        data = quick_panel()
        for k in (3, 8, 14):
            for n_folds in (1, 2, 5):
                splits = make_cv_splits(data, k, 119, n_folds=n_folds,
                                        test_len_months=6)
                assert len(splits) == n_folds
                for s in splits:
                    assert s.test_label_end <= 119 - k
                    assert s.test_label_start == s.train_end + k

    def test_fold_frames_ignore_months_past_gap_boundary(self):
        # corrupting fatalities after cutoff - k must leave every fold's
        # train and test frames untouched
        data = quick_panel()
        k, cutoff = 3, 119
        boundary = data.month_index(cutoff - k)
        tampered = data.fatalities.copy()
        tampered.setflags(write=True)
        tampered[boundary + 1:, :] += 777
        data2 = PanelDataset(data.cell_ids, data.lat, data.lon,
                             data.month_ids, tampered, data.features,
                             data.feature_names)
        for s in make_cv_splits(data, k, cutoff):
            for d1, d2, lo, hi in (
                    (data, data2, s.train_start, s.train_end),
                    (data, data2, s.train_end, s.test_label_end)):
                f1 = build_supervised_frame(d1, k, hi, start_month=lo)
                f2 = build_supervised_frame(d2, k, hi, start_month=lo)
                assert np.array_equal(f1.X, f2.X)
                assert np.array_equal(f1.y_count, f2.y_count)

    def test_cutoff_outside_panel(self):
        data = quick_panel()
        with pytest.raises(ValidationError, match="outside"):
            make_cv_splits(data, 3, 500)

    def test_bad_knobs(self):
        data = quick_panel()
        with pytest.raises(ConfigError):
            make_cv_splits(data, 3, 119, n_folds=0)
        with pytest.raises(ConfigError):
            make_cv_splits(data, 3, 119, test_len_months=0)


# ------------------------------------------------------------- random search

@pytest.fixture(scope="module")
def search_panel():
    return quick_panel(n_cells=9, n_months=90, seed=12, share=0.15)


SEARCH_KW = dict(timestep_k=3, cutoff_month=89, n_folds=2,
                 test_len_months=6)


class TestRandomSearch:

    def test_deterministic(self, search_panel):
        a = random_search(search_panel, STAGE_CLASSIFIER, budget=2, seed=5,
                          **SEARCH_KW)
        b = random_search(search_panel, STAGE_CLASSIFIER, budget=2, seed=5,
                          **SEARCH_KW)
        assert a.hyperparams == b.hyperparams
        assert a.tune_score == b.tune_score
        assert a.per_fold == b.per_fold

    def test_budget_one_returns_that_point(self, search_panel):
        trace = []
        res = random_search(search_panel, STAGE_CLASSIFIER, budget=1, seed=9,
                            trace=trace, **SEARCH_KW)
        assert len(trace) == 1
        cand, traced = trace[0]
        assert cand == 0
        assert traced.hyperparams == res.hyperparams
        assert traced.tune_score == res.tune_score

    def test_trace_covers_budget_and_best_wins(self, search_panel):
        trace = []
        res = random_search(search_panel, STAGE_CLASSIFIER, budget=3, seed=2,
                            trace=trace, **SEARCH_KW)
        assert [c for c, _ in trace] == [0, 1, 2]
        assert res.tune_score == max(r.tune_score for _, r in trace)

    def test_candidates_stay_inside_search_space(self, search_panel):
        trace = []
        random_search(search_panel, STAGE_CLASSIFIER, budget=6, seed=31,
                      trace=trace, **SEARCH_KW)
        seeds = set()
        for _, res in trace:
            hp = res.hyperparams
            assert 100 <= hp.n_trees <= 500
            assert hp.max_depth is None or 4 <= hp.max_depth <= 24
            assert 1 <= hp.min_samples_leaf <= 50
            assert 0.2 <= hp.max_features <= 1.0
            assert 1.0 <= hp.class_weight_positive <= 100.0
            seeds.add(hp.seed)
        assert len(seeds) == 6  # every candidate fits with its own seed

    def test_regressor_stage_scores_are_negated_crps(self, search_panel):
        trace = []
        res = random_search(search_panel, STAGE_REGRESSOR, budget=2, seed=5,
                            trace=trace, **SEARCH_KW)
        assert res.mean_test <= 0.0
        assert res.tune_score <= res.mean_test
        for _, traced in trace:
            assert traced.hyperparams.class_weight_positive == 1.0
            for train, test in traced.per_fold:
                assert train <= 0.0 and test <= 0.0

    def test_classifier_beats_base_rate(self):
        data = quick_panel(n_cells=25, n_months=90, seed=6, share=0.12)
        res = random_search(data, STAGE_CLASSIFIER, budget=3, seed=7,
                            **SEARCH_KW)
        rates = []
        for s in make_cv_splits(data, 3, 89, n_folds=2, test_len_months=6):
            frame = build_supervised_frame(data, 3, s.test_label_end,
                                           start_month=s.train_end)
            rates.append(frame.y_binary.mean())
        assert res.mean_test > max(rates)

    def test_all_zero_panel_is_degenerate(self):
        n_cells, n_months = 9, 84
        lat = np.repeat([30.25, 30.75, 31.25], 3)
        lon = np.tile([10.25, 10.75, 11.25], 3)
        data = PanelDataset(
            np.arange(n_cells), lat, lon, np.arange(n_months),
            np.zeros((n_months, n_cells), dtype=np.int64),
            np.zeros((n_months, n_cells, 2)), ("f_a", "f_b"))
        for stage in (STAGE_CLASSIFIER, STAGE_REGRESSOR):
            with pytest.raises(TuningError, match="degenerate"):
                random_search(data, stage, budget=1, seed=1, timestep_k=3,
                              cutoff_month=83, n_folds=2, test_len_months=6)

    def test_bad_knobs(self, search_panel):
        with pytest.raises(ConfigError, match="budget"):
            random_search(search_panel, STAGE_CLASSIFIER, budget=0, seed=1,
                          **SEARCH_KW)
        with pytest.raises(ConfigError, match="stage"):
            random_search(search_panel, "ensemble", budget=1, seed=1,
                          **SEARCH_KW)


class TestPickBest:

    @staticmethod
    def result(score_folds, **hp_kw):
        hp = HyperParams(**{"n_trees": 200, "seed": 0, **hp_kw})
        return TuneResult.from_folds(hp, score_folds)

    def test_higher_score_wins(self):
        lo = self.result([(0.5, 0.5)])
        hi = self.result([(0.8, 0.8)])
        assert _pick_best([(0, lo), (1, hi)]) is hi

    def test_tie_prefers_fewer_trees(self):
        big = self.result([(0.5, 0.5)], n_trees=400)
        small = self.result([(0.5, 0.5)], n_trees=150)
        assert _pick_best([(0, big), (1, small)]) is small

    def test_tie_then_prefers_shallower(self):
        deep = self.result([(0.5, 0.5)], max_depth=None)
        shallow = self.result([(0.5, 0.5)], max_depth=6)
        assert _pick_best([(0, deep), (1, shallow)]) is shallow

    def test_full_tie_keeps_first(self):
        first = self.result([(0.5, 0.5)])
        second = self.result([(0.5, 0.5)])
        assert _pick_best([(0, first), (1, second)]) is first


class TestTuneResult:

    def test_from_folds_arithmetic(self):
        hp = HyperParams(n_trees=100, seed=0)
        res = TuneResult.from_folds(hp, [(0.7, 0.5), (0.9, 0.7)])
        assert res.mean_train == pytest.approx(0.8)
        assert res.mean_test == pytest.approx(0.6)
        assert res.tune_score == tune_score(res.per_fold)

    def test_score_field_must_match_folds(self):
        hp = HyperParams(n_trees=100, seed=0)
        with pytest.raises(ValidationError, match="tune_score"):
            TuneResult(hp, 0.7, 0.5, 0.99, ((0.7, 0.5),))


class TestTrace:

    def test_csv_round_trip(self, search_panel, tmp_path):
        trace = []
        random_search(search_panel, STAGE_CLASSIFIER, budget=3, seed=2,
                      trace=trace, **SEARCH_KW)
        path = tmp_path / "trace.csv"
        write_tuning_trace(path, trace)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert [r["candidate"] for r in rows] == ["0", "1", "2"]
        for (cand, res), row in zip(trace, rows):
            assert int(row["n_trees"]) == res.hyperparams.n_trees
            assert float(row["tune_score"]) == pytest.approx(res.tune_score)
            assert float(row["fold0_test"]) == pytest.approx(
                res.per_fold[0][1])

    def test_empty_trace_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            write_tuning_trace(tmp_path / "t.csv", [])
