"""Decision-tree ensembles built from scratch.

Two kinds share one induction engine: a bagged Gini classifier that turns
weighted leaf frequencies into event probabilities, and a quantile
regression forest whose leaves keep the training rows that reached them so
any conditional quantile can be read off after the fit.

Split thresholds are midpoints between adjacent observed values inside a
node. Candidate features are redrawn per split. Per-feature sort orders
are computed once per fit and filtered down the tree, so growing a node
costs one linear pass per feature instead of a sort.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._util import round_half_up, weighted_quantile_lower
from .errors import ValidationError

CLASSIFIER = "classifier"
REGRESSOR = "quantile_regressor"


@dataclass(frozen=True)
class HyperParams:
    n_trees: int = 300
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: float = 1.0
    class_weight_positive: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError("n_trees must be at least 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValidationError("max_depth must be at least 1 or None")
        if self.min_samples_leaf < 1:
            raise ValidationError("min_samples_leaf must be at least 1")
        if not 0.0 < self.max_features <= 1.0:
            raise ValidationError("max_features must lie in (0, 1]")
        if self.class_weight_positive < 1.0:
            raise ValidationError("class_weight_positive must be >= 1")

    def as_dict(self) -> dict:
        return {"n_trees": self.n_trees, "max_depth": self.max_depth,
                "min_samples_leaf": self.min_samples_leaf,
                "max_features": self.max_features,
                "class_weight_positive": self.class_weight_positive,
                "seed": self.seed}


@dataclass
class _Tree:
    feature: np.ndarray    # int32, -1 at leaves
    threshold: np.ndarray  # float64, nan at leaves
    left: np.ndarray       # int32
    right: np.ndarray      # int32
    # classifier leaves: bootstrap multiset counts (negatives, positives)
    counts: np.ndarray | None = None
    # regressor leaves: distinct training rows, CSR over all nodes
    member_start: np.ndarray | None = None
    member_end: np.ndarray | None = None
    members: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.size


@dataclass
class ForestModel:
    kind: str
    hyperparams: HyperParams
    feature_count: int
    n_train: int
    trees: list[_Tree] = field(repr=False)
    y_train: np.ndarray | None = None  # stored targets, regressor only

    @property
    def bootstrap_indices(self) -> list[np.ndarray]:
        # regenerated from the per-tree seeds rather than stored; each tree's
        # stream draws its bootstrap sample first, so this replays exactly
        return [_bootstrap_rows(self.hyperparams.seed ^ t, self.n_train)
                for t in range(self.hyperparams.n_trees)]


def _bootstrap_rows(tree_seed: int, n: int) -> np.ndarray:
    return np.random.default_rng(tree_seed).integers(0, n, n)


def _grow_tree(Xc, order_full, hp, tree_seed, *, y=None, is_classifier=False):
    """Grow one tree on a bootstrap sample. Classifier mode scores splits
    with Gini on class-weighted counts, regressor mode with variance
    reduction. min_samples_leaf counts bootstrap multiplicity.

    Per-node row sets live in one (n_features, n_node) matrix holding the
    node's rows in each feature's sort order; partitioning it is a single
    masked reshape because every row keeps the same count of entries.
    """
    n = Xc.shape[1]
    n_features = Xc.shape[0]
    rng = np.random.default_rng(tree_seed)
    boot = rng.integers(0, n, n)
    w = np.bincount(boot, minlength=n).astype(np.float64)
    present = w > 0
    orders0 = np.vstack([o[present[o]] for o in order_full]).astype(np.int32)
    cw = hp.class_weight_positive
    # one cumsum pair per scan: weighted count and weighted (positive |
    # target) mass; the negative-class mass is their difference
    wy = w * y
    mtry = math.ceil(hp.max_features * n_features)
    msl = float(hp.min_samples_leaf)
    max_depth = np.inf if hp.max_depth is None else hp.max_depth
    neg_inf = -np.inf

    feature = [np.int32(-1)]
    threshold = [np.nan]
    left = [np.int32(-1)]
    right = [np.int32(-1)]
    leaf_of = {}
    go_left_buf = np.empty(n, dtype=bool)

    def new_node():
        feature.append(np.int32(-1))
        threshold.append(np.nan)
        left.append(np.int32(-1))
        right.append(np.int32(-1))
        return len(feature) - 1

    def make_leaf(node, rows):
        if is_classifier:
            mass = wy[rows].sum()
            leaf_of[node] = (w[rows].sum() - mass, mass)
        else:
            leaf_of[node] = np.sort(rows)

    stack = [(0, 0, orders0)]
    while stack:
        node, depth, orders = stack.pop()
        rows = orders[0]
        cnt_total = w[rows].sum()
        sum_total = wy[rows].sum()
        if is_classifier:
            pure = sum_total == 0.0 or sum_total == cnt_total
        else:
            y_rows = y[rows]
            pure = y_rows.max() == y_rows.min()
        if (pure or rows.size < 2 or cnt_total < 2 * msl
                or depth >= max_depth):
            make_leaf(node, rows)
            continue

        # one batched scan over the drawn features: (mtry, n_node) gathers,
        # cumulative sums along the rows, elementwise split scores
        n_node = rows.size
        feats = rng.permutation(n_features)[:mtry]
        r = orders[feats]
        v = Xc[feats[:, None], r]
        cum_cnt = w[r].cumsum(axis=1)[:, :-1]
        cum_sum = wy[r].cumsum(axis=1)[:, :-1]
        valid = (v[:, 1:] > v[:, :-1]) & (cum_cnt >= msl) \
            & (cnt_total - cum_cnt >= msl)
        # both objectives reduce (up to an affine shift that cannot move
        # the argmax) to mass_l^2 / size_l + mass_r^2 / size_r
        if is_classifier:
            mass_l = cw * cum_sum
            size_l = mass_l + (cum_cnt - cum_sum)
            mass_total = cw * sum_total
            size_total = mass_total + (cnt_total - sum_total)
        else:
            mass_l = cum_sum
            size_l = cum_cnt
            mass_total = sum_total
            size_total = cnt_total
        mass_r = mass_total - mass_l
        score = mass_l * mass_l / size_l + mass_r * mass_r \
            / (size_total - size_l)
        score[~valid] = neg_inf
        # flat argmax walks feats in drawn order then positions left to
        # right: first best wins, matching a sequential scan
        flat = int(score.argmax())
        fi, pos = divmod(flat, n_node - 1)
        if score[fi, pos] == neg_inf:
            make_leaf(node, rows)
            continue
        f = int(feats[fi])
        thr = 0.5 * (v[fi, pos] + v[fi, pos + 1])
        if thr >= v[fi, pos + 1]:
            # midpoint rounded up to the right value; pin to the left one
            # so the <= comparison splits at the scanned position
            thr = float(v[fi, pos])
        else:
            thr = float(thr)
        # membership scatter: in the split feature's order the left block
        # is exactly the prefix up to the split position
        r_f = r[fi]
        go_left_buf[r_f[:pos + 1]] = True
        go_left_buf[r_f[pos + 1:]] = False
        mask = go_left_buf[orders]
        n_left = pos + 1
        # each matrix row keeps the same n_left entries, so the masked
        # flatten reshapes back into per-feature order
        left_orders = orders[mask].reshape(n_features, n_left)
        right_orders = orders[~mask].reshape(n_features, n_node - n_left)
        feature[node] = np.int32(f)
        threshold[node] = thr
        lid = new_node()
        rid = new_node()
        left[node] = np.int32(lid)
        right[node] = np.int32(rid)
        stack.append((rid, depth + 1, right_orders))
        stack.append((lid, depth + 1, left_orders))

    n_nodes = len(feature)
    tree = _Tree(feature=np.asarray(feature, dtype=np.int32),
                 threshold=np.asarray(threshold, dtype=np.float64),
                 left=np.asarray(left, dtype=np.int32),
                 right=np.asarray(right, dtype=np.int32))
    if is_classifier:
        cnt = np.zeros((n_nodes, 2), dtype=np.int64)
        for node, (neg, pos) in leaf_of.items():
            cnt[node, 0] = int(round(neg))
            cnt[node, 1] = int(round(pos))
        tree.counts = cnt
    else:
        start = np.zeros(n_nodes, dtype=np.int64)
        end = np.zeros(n_nodes, dtype=np.int64)
        chunks = []
        at = 0
        for node in sorted(leaf_of):
            mem = leaf_of[node]
            start[node] = at
            at += mem.size
            end[node] = at
            chunks.append(mem)
        tree.member_start = start
        tree.member_end = end
        tree.members = (np.concatenate(chunks) if chunks
                        else np.empty(0, dtype=np.int32))
    return tree


def _prepare(X, y, hp, kind):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValidationError(f"{kind} needs a non-empty 2-d feature matrix")
    y = np.asarray(y)
    if y.shape != (X.shape[0],):
        raise ValidationError("labels must match the feature matrix rows")
    Xc = np.ascontiguousarray(X.T)
    order_full = [np.argsort(Xc[f], kind="stable").astype(np.int64)
                  for f in range(X.shape[1])]
    return Xc, order_full, y


def fit_classifier(X, y, hp: HyperParams) -> ForestModel:
    """Bagged Gini forest for event probabilities.

    Positive rows enter the split criterion and the leaf frequencies with
    weight class_weight_positive; bootstrap counts stay unweighted.
    """
    Xc, order_full, y = _prepare(X, y, hp, CLASSIFIER)
    y = y.astype(bool)
    if y.all() or not y.any():
        raise ValidationError(
            "degenerate labels: classifier training needs both classes")
    y01 = y.astype(np.float64)
    trees = [_grow_tree(Xc, order_full, hp, hp.seed ^ t, y=y01,
                        is_classifier=True)
             for t in range(hp.n_trees)]
    return ForestModel(kind=CLASSIFIER, hyperparams=hp,
                       feature_count=Xc.shape[0], n_train=Xc.shape[1],
                       trees=trees)


def fit_qrf(X, y, hp: HyperParams) -> ForestModel:
    """Quantile regression forest on strictly positive count targets.

    Variance-reduction splits; every leaf records the distinct training
    rows that reached it under its tree's bootstrap sample, and those rows
    carry the empirical conditional distribution at prediction time.
    """
    Xc, order_full, y = _prepare(X, y, hp, REGRESSOR)
    y = y.astype(np.float64)
    if np.any(y <= 0):
        raise ValidationError(
            "zero target in regressor training: the magnitude stage only "
            "accepts rows with non-zero counts")
    trees = [_grow_tree(Xc, order_full, hp, hp.seed ^ t, y=y)
             for t in range(hp.n_trees)]
    return ForestModel(kind=REGRESSOR, hyperparams=hp,
                       feature_count=Xc.shape[0], n_train=Xc.shape[1],
                       trees=trees, y_train=y)


def _check_probe(model, X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    if X.ndim != 2 or (X.size and X.shape[1] != model.feature_count):
        raise ValidationError(
            f"probe shape mismatch: model expects {model.feature_count} "
            "features")
    return X, single


def _route(tree: _Tree, X) -> np.ndarray:
    idx = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        f = tree.feature[idx]
        active = np.flatnonzero(f >= 0)
        if active.size == 0:
            return idx
        node = idx[active]
        vals = X[active, tree.feature[node]]
        go_left = vals <= tree.threshold[node]
        idx[active] = np.where(go_left, tree.left[node], tree.right[node])


def predict_proba(model: ForestModel, X) -> np.ndarray:
    """Mean over trees of the weighted positive-class leaf frequency."""
    if model.kind != CLASSIFIER:
        raise ValidationError("predict_proba needs a classifier model")
    X, single = _check_probe(model, X)
    if X.shape[0] == 0:
        return np.empty(0)
    cw = model.hyperparams.class_weight_positive
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        leaf = _route(tree, X)
        neg = tree.counts[leaf, 0].astype(np.float64)
        pos = tree.counts[leaf, 1].astype(np.float64) * cw
        acc += pos / (pos + neg)
    probs = acc / len(model.trees)
    return probs[0] if single else probs


def _leaf_weights(model: ForestModel, X) -> np.ndarray:
    """Per-probe weights over stored training rows; each row of the result
    sums to 1. Dense (n_probes, n_train), so intended for the modest
    training sets the magnitude stage sees."""
    n_probes = X.shape[0]
    weights = np.zeros((n_probes, model.n_train))
    for tree in model.trees:
        leaf = _route(tree, X)
        sizes = (tree.member_end - tree.member_start).astype(np.float64)
        for lf in np.unique(leaf):
            mem = tree.members[tree.member_start[lf]:tree.member_end[lf]]
            probes = np.flatnonzero(leaf == lf)
            weights[np.ix_(probes, mem)] += 1.0 / sizes[lf]
    weights /= len(model.trees)
    return weights


def predict_quantiles(model: ForestModel, x, quantile_levels) -> np.ndarray:
    """Weighted empirical quantiles of the stored training targets.

    Row weights are the mean over trees of 1/|leaf| for rows sharing the
    probe's leaf. Quantiles use the lower-value convention: the smallest
    stored target whose cumulative weight reaches the level.
    """
    if model.kind != REGRESSOR:
        raise ValidationError("predict_quantiles needs a regressor model")
    levels = np.asarray(quantile_levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0:
        raise ValueError("quantile_levels must be a non-empty 1-d vector")
    if np.any(levels <= 0) or np.any(levels >= 1) or \
            np.any(np.diff(levels) <= 0):
        raise ValueError("quantile_levels must be strictly increasing in (0, 1)")
    X, single = _check_probe(model, x)
    if X.shape[0] == 0:
        return np.empty((0, levels.size))
    order = np.argsort(model.y_train, kind="stable")
    y_sorted = model.y_train[order]
    weights = _leaf_weights(model, X)
    cum = np.cumsum(weights[:, order], axis=1)
    out = np.empty((X.shape[0], levels.size))
    for i in range(X.shape[0]):
        out[i] = weighted_quantile_lower(y_sorted, cum[i], levels)
    return out[0] if single else out


def predict_samples(model: ForestModel, x, m: int = 1000) -> np.ndarray:
    """m integer draws read off evenly spaced quantile levels (j - 0.5)/m.

    Values round half-up and clamp at 1: the magnitude stage never emits
    zeros, zero mass comes from the composition step.
    """
    if m < 1:
        raise ValueError("sample count must be at least 1")
    levels = (np.arange(1, m + 1) - 0.5) / m
    q = predict_quantiles(model, x, levels)
    return np.maximum(round_half_up(q), 1)


MODEL_FORMAT = "hurdlecast-forest"
MODEL_VERSION = 1


def _pack_model(model: ForestModel) -> dict:
    """Flat array dict for one model: a JSON header plus tree arrays
    concatenated over nodes, sliceable again through offset tables."""
    meta = {"format": MODEL_FORMAT, "version": MODEL_VERSION,
            "kind": model.kind, "feature_count": model.feature_count,
            "n_train": model.n_train,
            "hyperparams": model.hyperparams.as_dict()}
    node_offsets = np.cumsum([0] + [t.n_nodes for t in model.trees])
    arrays = {
        "meta_json": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
        "node_offsets": node_offsets,
        "feature": np.concatenate([t.feature for t in model.trees]),
        "threshold": np.concatenate([t.threshold for t in model.trees]),
        "left": np.concatenate([t.left for t in model.trees]),
        "right": np.concatenate([t.right for t in model.trees]),
    }
    if model.kind == CLASSIFIER:
        arrays["counts"] = np.concatenate([t.counts for t in model.trees])
    else:
        arrays["member_start"] = np.concatenate(
            [t.member_start for t in model.trees])
        arrays["member_end"] = np.concatenate(
            [t.member_end for t in model.trees])
        arrays["member_offsets"] = np.cumsum(
            [0] + [t.members.size for t in model.trees])
        arrays["members"] = np.concatenate([t.members for t in model.trees])
        arrays["y_train"] = model.y_train
    return arrays


def _unpack_model(loaded: dict, origin) -> ForestModel:
    """Inverse of _pack_model over already materialized arrays."""
    try:
        meta = json.loads(bytes(loaded["meta_json"]).decode())
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{origin}: not a forest model file ({exc})")
    if meta.get("format") != MODEL_FORMAT:
        raise ValidationError(f"{origin}: not a forest model file")
    if meta.get("version") != MODEL_VERSION:
        raise ValidationError(
            f"{origin}: unsupported model version {meta.get('version')}")
    hp = HyperParams(**meta["hyperparams"])
    offsets = loaded["node_offsets"]
    trees = []
    for t in range(hp.n_trees):
        lo, hi = offsets[t], offsets[t + 1]
        tree = _Tree(feature=loaded["feature"][lo:hi],
                     threshold=loaded["threshold"][lo:hi],
                     left=loaded["left"][lo:hi],
                     right=loaded["right"][lo:hi])
        if meta["kind"] == CLASSIFIER:
            tree.counts = loaded["counts"][lo:hi]
        else:
            tree.member_start = loaded["member_start"][lo:hi]
            tree.member_end = loaded["member_end"][lo:hi]
            mlo = loaded["member_offsets"][t]
            mhi = loaded["member_offsets"][t + 1]
            tree.members = loaded["members"][mlo:mhi]
        trees.append(tree)
    y_train = loaded["y_train"] if meta["kind"] == REGRESSOR else None
    return ForestModel(kind=meta["kind"], hyperparams=hp,
                       feature_count=meta["feature_count"],
                       n_train=meta["n_train"], trees=trees, y_train=y_train)


def save_model(model: ForestModel, path) -> None:
    np.savez_compressed(path, **_pack_model(model))


def load_model(path) -> ForestModel:
    with np.load(path) as data:
        # materialize each stored array once; indexing the archive
        # decompresses from scratch on every access
        loaded = {name: data[name] for name in data.files}
    return _unpack_model(loaded, path)
