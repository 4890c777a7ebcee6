"""Score every reference forecast on one panel and rank them by country.

The five reference kinds span the difficulty scale: all_zero never
predicts violence, poisson_last and conflictology resample recent
history, bootstrap_240 resamples two decades, neighbors pools the
surrounding ring. Countries here are synthetic halves of the grid.
"""

from hurdlecast.benchmarks import BENCHMARK_KINDS, BenchmarkSpec, benchmark_forecast
from hurdlecast.panel import SyntheticConfig, generate_synthetic
from hurdlecast.scoring import rank_models, score_forecast

WINDOW = 84

data = generate_synthetic(SyntheticConfig(
    n_cells=100, n_months=96, target_nonzero_share=0.03,
    hotspot_count=2, persistence=0.7, seed=3))
country_map = {c: "EAST" if c % 10 >= 5 else "WEST"
               for c in range(data.n_cells)}

reports = []
for kind in BENCHMARK_KINDS:
    fc = benchmark_forecast(BenchmarkSpec(kind), data, WINDOW)
    reports.append(score_forecast(fc, data, country_map=country_map,
                                  model_name=kind))

print(f"{'kind':16s} {'crps':>8s} {'ign':>8s} {'mis':>8s}")
for rep in sorted(reports, key=lambda r: r.crps):
    print(f"{rep.model_name:16s} {rep.crps:8.4f} {rep.ign:8.4f} {rep.mis:8.4f}")

table = rank_models(reports, metric="crps")
print("\nmean rank per country (1 = best):")
for name in sorted(table.mean_rank, key=table.mean_rank.get):
    print(f"  {name:16s} {table.mean_rank[name]:.2f}")
