"""Deterministic synthetic rating data shaped like the MovieLens-100K benchmark.

Offline environments often lack the real benchmark file, so this module
produces a stand-in with the same published marginals: 943 users, 1682 items,
exactly 100,000 ratings, every user rating at least 20 items, the canonical
ten blockbuster items each rated by well over 300 users, and the exact global
rating histogram (mean 3.52986, sparsity 0.93695).  Item popularity follows a
long-tail decay that bottoms out at single-rater items.

The generator is a pure function of its seed; it is meant for desk-scale
experiments and the test suite, not as a substitute for real behavioral data.
"""

from __future__ import annotations

import numpy as np

from .dataset import RatingMatrix

N_USERS = 943
N_ITEMS = 1682
N_RATINGS = 100_000
MIN_PROFILE = 20

# Rating-value histogram of the real benchmark; sums to 100,000 and pins the
# global mean at 3.52986.
VALUE_COUNTS = {1: 6110, 2: 11370, 3: 27145, 4: 34174, 5: 21201}

# Heavily rated items (each > 300 raters) and their rater counts.
BLOCKBUSTER_COUNTS = {
    50: 583, 258: 509, 100: 508, 181: 507, 294: 485,
    286: 481, 288: 452, 1: 429, 300: 420, 127: 413,
}
# The workbench's canonical popular/segment item lists must stay blockbusters.
for _i in (56, 174, 183, 185, 200, 234, 258, 443):
    BLOCKBUSTER_COUNTS.setdefault(_i, 380)


def synthetic_ml100k(seed: int = 0) -> RatingMatrix:
    """Build the synthetic benchmark-shaped matrix for ``seed``."""
    rng = np.random.default_rng(seed)
    lengths = _profile_lengths(rng)
    counts, item_order = _item_counts(rng)
    raters = _assign_raters(lengths, counts)

    users = np.concatenate([raters[k] for k in range(N_ITEMS)])
    items = np.concatenate([np.full(len(raters[k]), item_order[k])
                            for k in range(N_ITEMS)])
    values = np.repeat(
        np.array(sorted(VALUE_COUNTS), dtype=np.int64),
        np.array([VALUE_COUNTS[v] for v in sorted(VALUE_COUNTS)]))
    rng.shuffle(values)
    return RatingMatrix.from_arrays(users, items, values)


def _profile_lengths(rng) -> np.ndarray:
    """Per-user rating counts: floor 20, lognormal tail, exact total."""
    weights = rng.lognormal(mean=0.0, sigma=0.95, size=N_USERS)
    extra_total = N_RATINGS - N_USERS * MIN_PROFILE
    raw = extra_total * weights / weights.sum()
    extra = np.floor(raw).astype(np.int64)
    shortfall = extra_total - int(extra.sum())
    # hand out the remainder by largest fractional part, then enforce the cap
    order = np.lexsort((np.arange(N_USERS), -(raw - extra)))
    extra[order[:shortfall]] += 1
    cap = N_ITEMS - MIN_PROFILE
    over = extra - np.minimum(extra, cap)
    extra = np.minimum(extra, cap)
    spill = int(over.sum())
    while spill > 0:
        room = cap - extra
        k = int(np.argmax(room))
        take = min(spill, int(room[k]))
        extra[k] += take
        spill -= take
    return MIN_PROFILE + extra


def _item_counts(rng):
    """Rater count per popularity rank plus a rank -> item-id assignment."""
    counts = np.ones(N_ITEMS, dtype=np.int64)
    fixed_ids = sorted(BLOCKBUSTER_COUNTS)
    for k, item in enumerate(fixed_ids):
        counts[k] = BLOCKBUSTER_COUNTS[item]
    n_fixed = len(fixed_ids)
    tail_ranks = np.arange(1, N_ITEMS - n_fixed + 1, dtype=np.float64)
    tail = np.maximum(1, np.round(360.0 * np.exp(-tail_ranks / 260.0))).astype(np.int64)
    counts[n_fixed:] = tail

    # correct the total to exactly N_RATINGS, spreading single increments
    delta = N_RATINGS - int(counts.sum())
    step = 1 if delta > 0 else -1
    k = n_fixed
    while delta != 0:
        c = counts[k]
        if (step > 0 and c < 900) or (step < 0 and c > 1):
            counts[k] += step
            delta -= step
        k = n_fixed + (k + 1 - n_fixed) % (N_ITEMS - n_fixed)

    item_order = np.empty(N_ITEMS, dtype=np.int64)
    item_order[:n_fixed] = fixed_ids
    remaining = np.setdiff1d(np.arange(1, N_ITEMS + 1), fixed_ids)
    item_order[n_fixed:] = rng.permutation(remaining)
    return counts, item_order


def _assign_raters(lengths, counts):
    """Realize the bipartite degree sequence (users x items) greedily.

    Items are processed in descending rater count; each takes the users with
    the most remaining capacity (ties by user id).  The sequences built above
    are graphical, which the final assertion guards.
    """
    capacity = lengths.copy()
    user_ids = np.arange(1, N_USERS + 1, dtype=np.int64)
    order = np.argsort(-counts, kind="stable")
    raters: dict[int, np.ndarray] = {}
    for k in order:
        need = int(counts[k])
        pick = np.lexsort((user_ids, -capacity))[:need]
        capacity[pick] -= 1
        raters[int(k)] = user_ids[pick]
    if capacity.any():
        raise AssertionError("degree sequence was not realizable")
    return raters
