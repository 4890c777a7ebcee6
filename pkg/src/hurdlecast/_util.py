"""Small shared helpers: seeding, rounding, weighted quantiles, parallel map."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def derive_seed(*parts) -> int:
    """Stable 64-bit seed derived from arbitrary labels via SHA-256.

    Used wherever per-item random streams must not depend on iteration
    order: per-cell composition seeds, per-cell benchmark draws, per
    replication simulation streams. Any mix of ints and strings works.
    """
    blob = "\x1f".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


def round_half_up(x):
    """Nearest integer with halves rounded up (np.round rounds half to even)."""
    rounded = np.floor(np.asarray(x, dtype=np.float64) + 0.5)
    if np.ndim(x) == 0:
        return int(rounded)
    return rounded.astype(np.int64)


def weighted_quantile_lower(sorted_values, cum_weights, levels):
    """Smallest value whose cumulative weight reaches each level.

    The 1e-9 slack keeps levels that land exactly on a cumulative boundary
    (0.25 against weights of 1/4, say) from skipping to the next value.
    """
    q = np.asarray(levels, dtype=np.float64) - 1e-9
    idx = np.searchsorted(cum_weights, q, side="left")
    idx = np.minimum(idx, len(sorted_values) - 1)
    return np.asarray(sorted_values)[idx]


def silverman_bandwidth(x) -> float:
    """0.9 * min(sd, iqr/1.34) * n^(-1/5), falling back to sd when iqr is 0."""
    x = np.asarray(x, dtype=np.float64)
    sd = float(x.std())
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) or sd
    return 0.9 * spread * x.size ** (-0.2)


def parallel_map(fn, items, threads=1):
    """Order-preserving map. threads=1 stays serial; results never depend on
    scheduling because each item carries its own derived seed where needed."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
