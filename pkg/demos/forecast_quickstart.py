"""Train a quasi-hurdle forecaster on a synthetic panel and score it.

Generates a small grid-month panel, fits the twelve horizon models with
one fixed hyperparameter point (no search, to keep the run short),
predicts the final year, and compares CRPS against the all-zero and
last-year-resample references.

Run time is about a minute on one core.
"""

import time

from hurdlecast.benchmarks import BenchmarkSpec, benchmark_forecast
from hurdlecast.forest import HyperParams
from hurdlecast.hurdle import TIMESTEPS, predict_window, train_hurdle
from hurdlecast.panel import SyntheticConfig, generate_synthetic
from hurdlecast.scoring import score_forecast

CUTOFF = 93          # features end here; forecast window is 96..107
WINDOW = CUTOFF + 3

t0 = time.time()
data = generate_synthetic(SyntheticConfig(
    n_cells=256, n_months=108, target_nonzero_share=0.02,
    hotspot_count=2, persistence=0.7, seed=11))
share = float((data.fatalities > 0).mean())
print(f"panel: {data.n_cells} cells x {data.n_months} months, "
      f"non-zero share {share:.3f}")

hp_cls = HyperParams(n_trees=200, min_samples_leaf=20, max_features=0.6,
                     class_weight_positive=1.0, seed=7)
hp_reg = HyperParams(n_trees=200, min_samples_leaf=20, max_features=0.6, seed=7)
models = [train_hurdle(data, k, CUTOFF, hp_cls, hp_reg) for k in TIMESTEPS]
print(f"trained {len(models)} horizon models in {time.time() - t0:.0f}s")

forecast = predict_window(models, data, CUTOFF, base_seed=11)
report = score_forecast(forecast, data, model_name="hurdle")

print(f"\n{'model':16s} {'crps':>8s} {'mae':>8s}")
print(f"{'hurdle':16s} {report.crps:8.4f} {report.mae:8.4f}")
for kind in ("all_zero", "conflictology"):
    ref = benchmark_forecast(BenchmarkSpec(kind), data, WINDOW)
    ref_report = score_forecast(ref, data, model_name=kind)
    print(f"{kind:16s} {ref_report.crps:8.4f} {ref_report.mae:8.4f}")
