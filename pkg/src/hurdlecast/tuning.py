"""Hyperparameter search for the two forest stages.

Candidates are drawn uniformly from the stage's search space and scored
with sliding-window time-series cross-validation: average precision for
the occurrence classifier, negated mean CRPS on non-zero rows for the
magnitude regressor. The selection metric penalizes train/test gaps so
that a configuration that merely memorizes its folds cannot win.
"""

import csv
from dataclasses import dataclass

import numpy as np

from ._util import derive_seed, round_half_up
from .errors import ConfigError, TuningError, ValidationError
from .forest import (HyperParams, fit_classifier, fit_qrf, predict_proba,
                     predict_samples)
from .panel import PanelDataset, build_supervised_frame
from .scoring import crps_sample

STAGE_CLASSIFIER = "classifier"
STAGE_REGRESSOR = "regressor"
TRAIN_WINDOW_MONTHS = 60


@dataclass(frozen=True)
class CvSplit:
    """One sliding-window fold, all boundaries in label-month terms."""

    train_start: int
    train_end: int
    test_label_start: int
    test_label_end: int


@dataclass(frozen=True)
class TuneResult:
    hyperparams: HyperParams
    mean_train: float
    mean_test: float
    tune_score: float
    per_fold: tuple

    def __post_init__(self):
        if self.tune_score != tune_score(self.per_fold):
            raise ValidationError(
                "tune_score inconsistent with per-fold scores")

    @classmethod
    def from_folds(cls, hyperparams, per_fold):
        per_fold = tuple((float(a), float(b)) for a, b in per_fold)
        mean_train = float(np.mean([f[0] for f in per_fold]))
        mean_test = float(np.mean([f[1] for f in per_fold]))
        return cls(hyperparams, mean_train, mean_test,
                   tune_score(per_fold), per_fold)


def tune_score(per_fold) -> float:
    """mean_test minus half the absolute train/test mean gap."""
    if len(per_fold) == 0:
        raise ValueError("tune_score needs at least one fold")
    mean_train = float(np.mean([f[0] for f in per_fold]))
    mean_test = float(np.mean([f[1] for f in per_fold]))
    return mean_test - 0.5 * abs(mean_train - mean_test)


def average_precision(scores, labels) -> float:
    """Area under the precision-recall steps, tied scores grouped.

    Each distinct score value forms one threshold; everything tied at
    that value enters the confusion counts together, so the result does
    not depend on how a sort happens to break ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or labels.ndim != 1 or scores.size != labels.size:
        raise ValidationError("scores and labels must match in length")
    if not np.isin(labels, (0, 1)).all():
        raise ValidationError("labels must be binary")
    labels = labels.astype(np.float64)
    n_pos = labels.sum()
    if n_pos == 0:
        raise ValidationError(
            "average precision needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    # inclusive end index of every tied group in descending order
    ends = np.append(np.flatnonzero(np.diff(s) != 0), s.size - 1)
    tp = np.cumsum(labels[order])[ends]
    precision = tp / (ends + 1.0)
    recall = tp / n_pos
    recall_prev = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - recall_prev) * precision))


def make_cv_splits(data: PanelDataset, timestep_k: int, cutoff_month: int,
                   n_folds: int = 5, test_len_months: int = 12):
    """Evenly spaced 60-month training windows, the last abutting the
    cutoff; test labels sit a timestep gap after each window and never
    pass cutoff_month - timestep_k."""
    if n_folds < 1:
        raise ConfigError(f"n_folds must be at least 1, got {n_folds}")
    if test_len_months < 1:
        raise ConfigError("test_len_months must be at least 1, got "
                          f"{test_len_months}")
    data.month_index(cutoff_month)  # range check
    month0 = int(data.month_ids[0])
    have = cutoff_month - month0 + 1
    need = (TRAIN_WINDOW_MONTHS + test_len_months + 2 * timestep_k
            + n_folds - 1)
    if have < need:
        raise ValidationError(
            f"not enough months for CV: need at least {need} up to the "
            f"cutoff, have {have}")
    last_start = (cutoff_month - 2 * timestep_k - test_len_months
                  - TRAIN_WINDOW_MONTHS + 2)
    if n_folds == 1:
        starts = [last_start]
    else:
        starts = [int(v) for v in
                  round_half_up(np.linspace(month0, last_start, n_folds))]
    splits = []
    for s in starts:
        train_end = s + TRAIN_WINDOW_MONTHS - 1
        splits.append(CvSplit(s, train_end, train_end + timestep_k,
                              train_end + timestep_k + test_len_months - 1))
    return splits


def _fold_frames(data, timestep_k, splits):
    frames = []
    for s in splits:
        train = build_supervised_frame(data, timestep_k, s.train_end,
                                       start_month=s.train_start)
        test = build_supervised_frame(data, timestep_k, s.test_label_end,
                                      start_month=s.train_end)
        frames.append((train, test))
    return frames


def _draw_candidate(rng, stage, hp_seed) -> HyperParams:
    n_trees = int(rng.integers(100, 501))
    depth_draw = int(rng.integers(4, 26))
    msl = int(rng.integers(1, 51))
    mf = float(rng.uniform(0.2, 1.0))
    cw = 1.0
    if stage == STAGE_CLASSIFIER:
        cw = float(rng.uniform(1.0, 100.0))
    return HyperParams(n_trees=n_trees,
                       max_depth=None if depth_draw == 25 else depth_draw,
                       min_samples_leaf=msl, max_features=mf,
                       class_weight_positive=cw, seed=hp_seed)


def _classifier_fold_score(train, test, hp):
    model = fit_classifier(train.X, train.y_binary, hp)
    return (average_precision(predict_proba(model, train.X), train.y_binary),
            average_precision(predict_proba(model, test.X), test.y_binary))


def _mean_neg_crps(model, frame):
    rows = np.flatnonzero(frame.y_count > 0)
    samples = predict_samples(model, frame.X[rows])
    scores = [crps_sample(samples[i], float(frame.y_count[r]))
              for i, r in enumerate(rows)]
    return -float(np.mean(scores))


def _regressor_fold_score(train, test, hp):
    rows = train.y_count > 0
    model = fit_qrf(train.X[rows], train.y_count[rows], hp)
    return _mean_neg_crps(model, train), _mean_neg_crps(model, test)


def _usable(stage, train, test) -> bool:
    if stage == STAGE_CLASSIFIER:
        return (bool(train.y_binary.any()) and not train.y_binary.all()
                and bool(test.y_binary.any()))
    return bool((train.y_count > 0).any() and (test.y_count > 0).any())


def _pick_best(indexed_results):
    """Highest tune_score; ties fall to the cheaper model, then to the
    earlier candidate."""
    def key(item):
        idx, res = item
        depth = res.hyperparams.max_depth
        return (-res.tune_score, res.hyperparams.n_trees,
                np.inf if depth is None else depth, idx)
    return min(indexed_results, key=key)[1]


def random_search(data: PanelDataset, stage: str, timestep_k: int,
                  cutoff_month: int, budget: int, seed: int, *,
                  n_folds: int = 5, test_len_months: int = 12,
                  trace=None) -> TuneResult:
    """Evaluate `budget` uniformly drawn configurations over the CV folds
    and return the tune_score argmax.

    Folds without a positive (classifier) or non-zero (regressor) example
    on both sides are dropped before any candidate runs; if none survive
    the data cannot support tuning at all. Pass a list as `trace` to
    collect every candidate's (index, TuneResult) pair.
    """
    if stage not in (STAGE_CLASSIFIER, STAGE_REGRESSOR):
        raise ConfigError(f"unknown tuning stage {stage!r}")
    if budget < 1:
        raise ConfigError(f"search budget must be at least 1, got {budget}")
    splits = make_cv_splits(data, timestep_k, cutoff_month, n_folds,
                            test_len_months)
    frames = [(tr, te) for tr, te in _fold_frames(data, timestep_k, splits)
              if _usable(stage, tr, te)]
    if not frames:
        raise TuningError(
            f"every CV fold is degenerate for the {stage} stage: no "
            "positive examples to learn from")
    score_fold = (_classifier_fold_score if stage == STAGE_CLASSIFIER
                  else _regressor_fold_score)
    rng = np.random.default_rng(derive_seed(seed, "search", stage))
    results = []
    for i in range(budget):
        hp = _draw_candidate(rng, stage, derive_seed(seed, "candidate", i))
        per_fold = [score_fold(tr, te, hp) for tr, te in frames]
        res = TuneResult.from_folds(hp, per_fold)
        results.append((i, res))
        if trace is not None:
            trace.append((i, res))
    return _pick_best(results)


def write_tuning_trace(path, trace) -> None:
    """One CSV row per evaluated candidate."""
    if not trace:
        raise ValueError("empty tuning trace")
    n_folds = len(trace[0][1].per_fold)
    fold_cols = [f"fold{j}_{part}" for j in range(n_folds)
                 for part in ("train", "test")]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["candidate", "n_trees", "max_depth",
                         "min_samples_leaf", "max_features",
                         "class_weight_positive", "seed", *fold_cols,
                         "mean_train", "mean_test", "tune_score"])
        for idx, res in trace:
            hp = res.hyperparams
            depth = "none" if hp.max_depth is None else hp.max_depth
            folds = [v for pair in res.per_fold for v in pair]
            writer.writerow([idx, hp.n_trees, depth, hp.min_samples_leaf,
                             repr(hp.max_features),
                             repr(hp.class_weight_positive), hp.seed,
                             *[repr(v) for v in folds],
                             repr(res.mean_train), repr(res.mean_test),
                             repr(res.tune_score)])
