"""Geographic clustering and the global/local component ensemble.

Cells that ever saw violence are grouped into contiguous clusters with
DBSCAN over their half-degree centers; clusters too small to train on
merge into their nearest neighbor by hull-centroid distance, and every
remaining cell joins a cluster by hull geometry. On top of that sits the
per-cluster choice between globally and locally trained classifier and
regressor stages.
"""

import csv
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from ._util import derive_seed
from .errors import ConfigError, SelectionError, ValidationError
from .hurdle import ForecastSet, _stitch_window, models_by_timestep
from .panel import PanelDataset
from .scoring import crps_sample

# clusters pick their stage sources independently; first letter names the
# classifier side, second the regressor side
COMBOS = ("GG", "GL", "LG", "LL")

# below a tenth of the full half-degree production extent (13110 cells
# for 120 months) a fixed 1000-observation floor would swallow every
# cluster, so the floor adapts to the data instead
FULL_SCALE_CELL_MONTHS = 157_320


@dataclass(frozen=True)
class ClusterConfig:
    eps: float = 1.5
    min_pts: int = 5
    min_nonzero: int | None = None

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 1:
            raise ConfigError(f"min_pts must be at least 1, got "
                              f"{self.min_pts}")
        if self.min_nonzero is not None and self.min_nonzero < 1:
            raise ConfigError("min_nonzero must be at least 1, got "
                              f"{self.min_nonzero}")


@dataclass
class ClusterAssignment:
    cluster_of: dict = field(default_factory=dict)
    hulls: dict = field(default_factory=dict)
    merge_log: list = field(default_factory=list)


def effective_min_nonzero(data: PanelDataset, cfg: ClusterConfig) -> int:
    """The training floor a cluster must clear after merging."""
    if cfg.min_nonzero is not None:
        return cfg.min_nonzero
    if data.n_cells * data.n_months >= FULL_SCALE_CELL_MONTHS:
        return 1000
    total = int((data.fatalities > 0).sum())
    return int(np.ceil(0.05 * total)) if total else 1


def cluster_violent_cells(data: PanelDataset, cfg: ClusterConfig):
    """DBSCAN over the centers of cells with any recorded fatalities.

    Returns (clusters, noise): cluster id -> member cell_ids, plus the
    violent cells no dense region reached. Ids count up in order of each
    cluster's first core cell, so reruns agree.
    """
    violent = np.flatnonzero((data.fatalities > 0).any(axis=0))
    if violent.size == 0:
        raise ValidationError(
            "nothing to cluster: no cells with recorded fatalities")
    points = np.column_stack([data.lat[violent], data.lon[violent]])
    tree = cKDTree(points)
    neighbors = tree.query_ball_point(points, r=cfg.eps)
    core = np.array([len(nb) >= cfg.min_pts for nb in neighbors])
    labels = np.full(violent.size, -1, dtype=np.int64)
    next_id = 0
    for start in range(violent.size):
        if labels[start] != -1 or not core[start]:
            continue
        labels[start] = next_id
        queue = deque([start])
        while queue:
            i = queue.popleft()
            if not core[i]:
                continue  # border points join but do not expand
            for j in neighbors[i]:
                if labels[j] == -1:
                    labels[j] = next_id
                    queue.append(j)
        next_id += 1
    cell_ids = data.cell_ids[violent]
    clusters = {cid: cell_ids[labels == cid] for cid in range(next_id)}
    return clusters, cell_ids[labels == -1]


def _member_points(data, members):
    idx = np.searchsorted(data.cell_ids, np.sort(np.asarray(members)))
    return np.column_stack([data.lat[idx], data.lon[idx]])


def _hull_vertices(points) -> np.ndarray:
    """Convex hull vertices in counterclockwise order; degenerate point
    sets (single point, collinear cells) fall back to their extremes."""
    points = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if points.shape[0] >= 3:
        try:
            hull = ConvexHull(points)
            return points[hull.vertices]
        except QhullError:
            pass  # collinear: handled below
    if points.shape[0] == 1:
        return points
    # the farthest pair spans every collinear configuration
    diffs = points[:, None, :] - points[None, :, :]
    d2 = (diffs ** 2).sum(axis=2)
    i, j = np.unravel_index(int(d2.argmax()), d2.shape)
    return points[[min(i, j), max(i, j)]]


def _hull_centroid(verts) -> np.ndarray:
    if len(verts) == 1:
        return verts[0]
    if len(verts) == 2:
        return verts.mean(axis=0)
    x, y = verts[:, 0], verts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    if abs(area) < 1e-12:
        return verts.mean(axis=0)
    cx = ((x + xn) * cross).sum() / (6.0 * area)
    cy = ((y + yn) * cross).sum() / (6.0 * area)
    return np.array([cx, cy])


def _segment_distance(p, a, b) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.hypot(*(p - a)))
    t = min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.hypot(*(p - a - t * ab)))


def _boundary_distance(p, verts) -> float:
    if len(verts) == 1:
        return float(np.hypot(*(p - verts[0])))
    edges = zip(verts, np.roll(verts, -1, axis=0)) if len(verts) > 2 \
        else [(verts[0], verts[1])]
    return min(_segment_distance(p, a, b) for a, b in edges)


def _inside_hull(p, verts) -> bool:
    if len(verts) < 3:
        return _boundary_distance(p, verts) <= 1e-9
    a = verts
    b = np.roll(verts, -1, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1]) \
        - (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
    return bool((cross >= -1e-9).all())


def _nonzero_count(data, members) -> int:
    idx = np.searchsorted(data.cell_ids, np.sort(np.asarray(members)))
    return int((data.fatalities[:, idx] > 0).sum())


def merge_small_clusters(clusters, data: PanelDataset, cfg: ClusterConfig):
    """Fold clusters below the training floor into their nearest neighbor
    by hull-centroid distance, smallest first, until everyone clears it.

    Returns (merged clusters, merge log of (absorbed id, absorbing id,
    centroid distance)). Surviving ids are a subset of the input ids.
    """
    members = {int(cid): np.sort(np.asarray(v)) for cid, v in
               clusters.items()}
    counts = {cid: _nonzero_count(data, v) for cid, v in members.items()}
    floor = effective_min_nonzero(data, cfg)
    if sum(counts.values()) < floor:
        raise ValidationError(
            "global data insufficient for any cluster: "
            f"{sum(counts.values())} non-zero cell-months, floor {floor}")
    log = []
    while len(members) > 1:
        small = [cid for cid, n in counts.items() if n < floor]
        if not small:
            break
        victim = min(small, key=lambda c: (counts[c], c))
        centroids = {cid: _hull_centroid(_hull_vertices(
            _member_points(data, v))) for cid, v in members.items()}
        others = [c for c in members if c != victim]
        target = min(others, key=lambda c: (
            float(np.hypot(*(centroids[victim] - centroids[c]))), c))
        dist = float(np.hypot(*(centroids[victim] - centroids[target])))
        members[target] = np.sort(np.concatenate([members[target],
                                                  members[victim]]))
        counts[target] += counts[victim]
        del members[victim], counts[victim]
        log.append((victim, target, dist))
    return members, log


def assign_remaining_cells(clusters, data: PanelDataset,
                           merge_log=()) -> ClusterAssignment:
    """Every cell gets a cluster: members keep theirs, cells inside one
    hull take it, cells inside several take the nearest centroid, cells
    outside all hulls take the nearest boundary. Ties fall to the lower
    cluster id."""
    if not clusters:
        raise ValidationError("no clusters to assign cells to")
    members = {int(cid): np.asarray(v) for cid, v in clusters.items()}
    hulls = {cid: _hull_vertices(_member_points(data, v))
             for cid, v in members.items()}
    centroids = {cid: _hull_centroid(hulls[cid]) for cid in hulls}
    cluster_of = {}
    for cid, v in members.items():
        for cell in v:
            cluster_of[int(cell)] = cid
    ordered = sorted(hulls)
    for i, cell in enumerate(data.cell_ids):
        cell = int(cell)
        if cell in cluster_of:
            continue
        p = np.array([data.lat[i], data.lon[i]])
        inside = [cid for cid in ordered if _inside_hull(p, hulls[cid])]
        if len(inside) == 1:
            cluster_of[cell] = inside[0]
        elif inside:
            cluster_of[cell] = min(inside, key=lambda c: (
                float(np.hypot(*(p - centroids[c]))), c))
        else:
            cluster_of[cell] = min(ordered, key=lambda c: (
                _boundary_distance(p, hulls[c]), c))
    return ClusterAssignment(
        cluster_of=cluster_of,
        hulls={cid: [(float(a), float(b)) for a, b in hulls[cid]]
               for cid in ordered},
        merge_log=list(merge_log))


def predict_combo_window(global_models, local_models, data: PanelDataset,
                         feature_month: int, combo: str, base_seed: int = 0,
                         cells=None) -> ForecastSet:
    """One prediction year with the classifier stage taken from the side
    named by combo[0] and the regressor stage from combo[1] (G or L).

    Seeds derive from (cell, k, base_seed) exactly as in predict_window,
    so the GG combination reproduces the global forecast bit for bit.
    """
    if combo not in COMBOS:
        raise ConfigError(f"unknown combo {combo!r}, expected one of "
                          f"{'/'.join(COMBOS)}")
    global_by_k = models_by_timestep(global_models)
    local_by_k = models_by_timestep(local_models)
    cls_side = global_by_k if combo[0] == "G" else local_by_k
    reg_side = global_by_k if combo[1] == "G" else local_by_k
    return _stitch_window(cls_side, reg_side, data, feature_month,
                          base_seed, cells)


def select_global_local(combo_fc, history: PanelDataset,
                        assignment: ClusterAssignment,
                        n_years: int = 3) -> dict:
    """Per cluster, the combo with the lowest mean CRPS over the prior
    evaluation windows; exact ties keep the all-global combination.

    combo_fc maps combo name -> {window_start -> ForecastSet}; every
    combo must cover the same n_years windows.
    """
    missing_combos = [c for c in COMBOS if c not in combo_fc]
    if missing_combos:
        raise SelectionError(f"missing combos: {missing_combos}")
    windows = sorted({ws for c in COMBOS for ws in combo_fc[c]})
    holes = [(c, ws) for c in COMBOS for ws in windows
             if ws not in combo_fc[c]]
    if holes:
        raise SelectionError(f"missing prior-window forecasts: {holes}")
    if len(windows) != n_years:
        raise SelectionError(
            f"selection needs {n_years} prior windows, have "
            f"{len(windows)} ({windows})")
    by_cluster = {}
    for cell, cid in assignment.cluster_of.items():
        by_cluster.setdefault(cid, []).append(cell)
    choice = {}
    for cid in sorted(by_cluster):
        cells = sorted(by_cluster[cid])
        best = None
        for combo in COMBOS:
            total, n = 0.0, 0
            for ws in windows:
                fc = combo_fc[combo][ws]
                for cell in cells:
                    for month in fc.months:
                        try:
                            vec = fc.entries[(cell, month)]
                        except KeyError:
                            raise SelectionError(
                                f"combo {combo} window {ws} misses cell "
                                f"{cell} month {month}")
                        actual = history.fatality(cell, month)
                        total += crps_sample(vec, float(actual))
                        n += 1
            mean = total / n
            if best is None or mean < best[0]:
                best = (mean, combo)
        choice[cid] = best[1]
    return choice


def write_assignment_csv(assignment: ClusterAssignment, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "cluster_id"])
        for cell in sorted(assignment.cluster_of):
            writer.writerow([cell, assignment.cluster_of[cell]])


def read_assignment_csv(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_id", "cluster_id"]:
            raise ValidationError(
                f"{path}: expected header cell_id,cluster_id")
        cluster_of = {}
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValidationError(f"{path}: malformed row {row!r}")
            cluster_of[int(row[0])] = int(row[1])
    if not cluster_of:
        raise ValidationError(f"{path}: no assignments")
    return cluster_of


def write_hulls_json(assignment: ClusterAssignment, path) -> None:
    doc = [{"cluster_id": cid,
            "polygon": [[lat, lon] for lat, lon in verts]}
           for cid, verts in sorted(assignment.hulls.items())]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
