"""Cluster violent cells into regions and pick global vs local stages.

Violence is laid down in two spatial blocks. Density clustering finds
them, a global model and one per-cluster local model are trained, and
the four classifier/regressor combinations (GG, GL, LG, LL) compete on
three trailing evaluation windows. The winner per cluster is whatever
scored best there, ties going to all-global.
"""

from hurdlecast.forest import HyperParams
from hurdlecast.hurdle import TIMESTEPS, merge_forecasts, train_hurdle
from hurdlecast.panel import SyntheticConfig, generate_synthetic
from hurdlecast.spatial import (COMBOS, ClusterConfig, assign_remaining_cells,
                                cluster_violent_cells, merge_small_clusters,
                                predict_combo_window, select_global_local)

data = generate_synthetic(SyntheticConfig(
    n_cells=100, n_months=96, target_nonzero_share=0.05,
    hotspot_count=2, persistence=0.7, seed=21))

cfg = ClusterConfig(eps=1.2, min_pts=3, min_nonzero=1)
clusters, noise = cluster_violent_cells(data, cfg)
clusters, merge_log = merge_small_clusters(clusters, data, cfg)
assignment = assign_remaining_cells(clusters, data, merge_log)
sizes = {}
for cell, cid in assignment.cluster_of.items():
    sizes[cid] = sizes.get(cid, 0) + 1
print(f"clusters: {sizes} ({len(noise)} noise cells before assignment)")

hp = HyperParams(n_trees=100, min_samples_leaf=10, max_features=0.6, seed=5)
windows = (57, 69, 81)   # evaluation years trailing the final one

# one global model set per window cutoff, plus a local set per cluster
combo_fc = {combo: {} for combo in COMBOS}
for ws in windows:
    cutoff = ws - 3
    global_models = [train_hurdle(data, k, cutoff, hp, hp) for k in TIMESTEPS]
    for cid in sorted(sizes):
        cells = {c for c, x in assignment.cluster_of.items() if x == cid}
        local_models = [train_hurdle(data, k, cutoff, hp, hp,
                                     scope_cells=cells) for k in TIMESTEPS]
        for combo in COMBOS:
            fc = predict_combo_window(global_models, local_models, data,
                                      cutoff, combo, base_seed=1, cells=cells)
            if ws in combo_fc[combo]:
                combo_fc[combo][ws] = merge_forecasts(
                    [combo_fc[combo][ws], fc])
            else:
                combo_fc[combo][ws] = fc

choice = select_global_local(combo_fc, data, assignment, n_years=3)
for cid in sorted(choice):
    print(f"cluster {cid}: {choice[cid]} "
          f"(classifier {choice[cid][0]}, regressor {choice[cid][1]})")
