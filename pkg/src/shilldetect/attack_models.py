"""Synthesis and injection of shilling-attack profiles.

Fourteen attack models are supported.  Eight are "standard" profile shapes
(random, average, two bandwagon variants, segment, reverse bandwagon,
love/hate, AOP) differing in how selected and filler items are chosen and
rated; six are "power" attacks that either rate maximally influential items
(PIA) or clone maximally influential users (PUA), with influence measured by
aggregate similarity (AS), in-degree centrality (ID) or number of ratings (NR).

Every profile consists of a single target item rated at the attack extreme,
an optional selected-item set, and filler items.  Generation is a pure
function of (config, matrix): the same seed reproduces profiles bit for bit.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .dataset import (RatingMatrix, ValidationError, global_stats, item_stats,
                      popularity_rank)

STANDARD_MODELS = ("random", "average", "bandwagon_average", "bandwagon_random",
                   "segment", "reverse_bandwagon", "love_hate", "aop")
POWER_MODELS = ("pia_as", "pia_id", "pia_nr", "pua_as", "pua_id", "pua_nr")
ALL_MODELS = STANDARD_MODELS + POWER_MODELS

# reverse bandwagon selects this many rarely rated items as its selected set
REVERSE_BANDWAGON_SELECTED = 10

# minimum co-occurrence for an aggregate-similarity pair to count
AS_MIN_COOCCURRENCE = 5

# denominator of the in-degree significance weight min(n_c / 50, 1)
SIGNIFICANCE_DENOM = 50.0


class AttackIntent(Enum):
    """Push promotes the target with r_max; nuke demotes it with r_min."""

    PUSH = "push"
    NUKE = "nuke"

    def target_rating(self, matrix: RatingMatrix) -> int:
        return matrix.r_max if self is AttackIntent.PUSH else matrix.r_min

    def opposite_rating(self, matrix: RatingMatrix) -> int:
        return matrix.r_min if self is AttackIntent.PUSH else matrix.r_max


@dataclass(frozen=True)
class AttackParams:
    """Model-specific knobs; only the relevant fields are consulted."""

    aop_top_fraction: float = 0.1
    popular_item_ids: tuple[int, ...] | None = None
    segment_item_ids: tuple[int, ...] | None = None
    power_n: int | None = None          # PIA item count; defaults to filler count
    power_user_count: int = 50


@dataclass(frozen=True)
class AttackConfig:
    """Parameterization of one injection campaign."""

    model: str
    intent: AttackIntent
    attack_size: float                  # attackers / genuine users
    filler_size: float                  # filler items / total items
    seed: int
    params: AttackParams = field(default_factory=AttackParams)

    def __post_init__(self):
        if self.model not in ALL_MODELS:
            raise ValidationError(f"unknown attack model {self.model!r}")
        if not 0.0 < self.attack_size < 1.0:
            raise ValidationError(f"attack_size {self.attack_size} not in (0, 1)")
        if not 0.0 < self.filler_size < 1.0:
            raise ValidationError(f"filler_size {self.filler_size} not in (0, 1)")

    def attacker_count(self, matrix: RatingMatrix) -> int:
        return int(self.attack_size * matrix.n_users)       # floor

    def filler_count(self, matrix: RatingMatrix) -> int:
        return round(self.filler_size * matrix.n_items)


@dataclass(frozen=True)
class AttackProfile:
    """One synthetic rater: target + selected + filler ratings."""

    target: int
    target_rating: int
    selected: dict[int, int]
    fillers: dict[int, int]

    def ratings(self) -> dict[int, int]:
        merged = {self.target: self.target_rating}
        merged.update(self.selected)
        merged.update(self.fillers)
        return merged

    def size(self) -> int:
        return 1 + len(self.selected) + len(self.fillers)


@dataclass
class LabeledDataset:
    """A rating matrix with per-user genuine(0)/attack(1) labels."""

    matrix: RatingMatrix
    labels: dict[int, int]

    @property
    def attacker_ids(self) -> list[int]:
        return [u for u, l in self.labels.items() if l == 1]

    @property
    def genuine_ids(self) -> list[int]:
        return [u for u, l in self.labels.items() if l == 0]

    def label_array(self) -> np.ndarray:
        """0/1 labels aligned to ``matrix.user_ids``."""
        return np.array([self.labels[int(u)] for u in self.matrix.user_ids],
                        dtype=np.int64)


# ---------------------------------------------------------------------------
# generation


def generate(config: AttackConfig, matrix: RatingMatrix) -> list[AttackProfile]:
    """Generate profiles for any of the 14 models."""
    if config.model in STANDARD_MODELS:
        return generate_standard(config.model, config, matrix)
    return generate_power_attack(config.model, config, matrix)


def generate_standard(model: str, config: AttackConfig,
                      matrix: RatingMatrix) -> list[AttackProfile]:
    """Generate profiles under one of the eight standard models."""
    if model not in STANDARD_MODELS:
        raise ValidationError(f"{model!r} is not a standard attack model")
    if model != config.model:
        raise ValidationError(
            f"config.model {config.model!r} does not match requested {model!r}")
    n = config.attacker_count(matrix)
    counts = [config.filler_count(matrix)] * n
    return _standard_batch(model, config.intent, counts, config.seed,
                           config.params, matrix)


def generate_power_attack(model: str, config: AttackConfig,
                          matrix: RatingMatrix) -> list[AttackProfile]:
    """Generate profiles under one of the six power-item/power-user models."""
    if model not in POWER_MODELS:
        raise ValidationError(f"{model!r} is not a power attack model")
    if model != config.model:
        raise ValidationError(
            f"config.model {config.model!r} does not match requested {model!r}")
    n = config.attacker_count(matrix)
    counts = [config.filler_count(matrix)] * n
    return _power_batch(model, config.intent, counts, config.seed,
                        config.params, matrix)


def generate_profiles(matrix: RatingMatrix, model: str, intent: AttackIntent,
                      filler_counts, seed: int,
                      params: AttackParams = AttackParams()) -> list[AttackProfile]:
    """Low-level generator taking an explicit per-profile filler count list.

    Used for campaigns that mix filler sizes within one batch; the fraction
    based entry points delegate here with a constant count.
    """
    if model not in ALL_MODELS:
        raise ValidationError(f"unknown attack model {model!r}")
    counts = [int(c) for c in filler_counts]
    if any(c < 0 for c in counts):
        raise ValidationError("filler counts must be non-negative")
    if model in STANDARD_MODELS:
        return _standard_batch(model, intent, counts, seed, params, matrix)
    return _power_batch(model, intent, counts, seed, params, matrix)


def _standard_batch(model, intent, filler_counts, seed, params, matrix):
    """Shared standard-model generator with a per-profile filler count."""
    rng = np.random.default_rng(seed)
    st = item_stats(matrix)
    gstats = global_stats(matrix)
    item_ids = matrix.item_ids
    target_r = intent.target_rating(matrix)
    opposite_r = intent.opposite_rating(matrix)

    selected_ids, selected_r = _selected_set(model, intent, params, matrix, rng)
    if model == "aop":
        frac = params.aop_top_fraction
        if not 0.0 < frac <= 1.0:
            raise ValidationError(f"aop_top_fraction {frac} not in (0, 1]")
        pool_n = max(1, round(frac * matrix.n_items))
        filler_pool = np.sort(popularity_rank(matrix).ordering[:pool_n])
    else:
        filler_pool = item_ids

    selected_set = set(selected_ids)
    eligible_targets = (item_ids if not selected_set else
                        item_ids[~np.isin(item_ids, selected_ids)])
    pool_ms = (filler_pool if not selected_set else
               filler_pool[~np.isin(filler_pool, selected_ids)])

    profiles = []
    for fc in filler_counts:
        if fc + len(selected_set) + 1 > matrix.n_items:
            raise ValidationError(
                f"profile needs {fc} fillers + {len(selected_set)} selected "
                f"+ 1 target but only {matrix.n_items} items exist")
        target = int(eligible_targets[rng.integers(len(eligible_targets))])
        pool = pool_ms[pool_ms != target]
        if fc > len(pool):
            raise ValidationError(
                f"filler count {fc} exceeds the {len(pool)} available items")
        filler_ids = rng.choice(pool, size=fc, replace=False)
        filler_vals = _filler_ratings(model, filler_ids, intent, st, gstats,
                                      matrix, rng)
        profiles.append(AttackProfile(
            target=target, target_rating=target_r,
            selected={int(i): selected_r for i in selected_ids},
            fillers={int(i): int(v) for i, v in zip(filler_ids, filler_vals)}))
    return profiles


def _selected_set(model, intent, params, matrix, rng):
    """Selected items and their constant rating for one standard model."""
    if model in ("bandwagon_average", "bandwagon_random"):
        if not params.popular_item_ids:
            raise ValidationError(f"{model} requires params.popular_item_ids")
        ids = _check_items(params.popular_item_ids, matrix)
        return ids, intent.target_rating(matrix)
    if model == "segment":
        if not params.segment_item_ids:
            raise ValidationError("segment requires params.segment_item_ids")
        ids = _check_items(params.segment_item_ids, matrix)
        return ids, intent.target_rating(matrix)
    if model == "reverse_bandwagon":
        ids = _rarely_rated_items(matrix, rng, REVERSE_BANDWAGON_SELECTED)
        return ids, intent.opposite_rating(matrix)
    return np.array([], dtype=np.int64), 0


def _check_items(ids, matrix):
    arr = np.asarray(sorted(set(int(i) for i in ids)), dtype=np.int64)
    for i in arr:
        if not matrix.has_item(int(i)):
            raise ValidationError(f"selected item {i} not in matrix")
    return arr


def _rarely_rated_items(matrix, rng, count):
    """Items rated by exactly one user, topped up from the least-rated tail."""
    counts = item_stats(matrix).counts
    singletons = matrix.item_ids[counts == 1]
    if len(singletons) >= count:
        return np.sort(rng.choice(singletons, size=count, replace=False))
    order = np.lexsort((matrix.item_ids, counts))
    ranked = matrix.item_ids[order]
    extra = ranked[~np.isin(ranked, singletons)][:count - len(singletons)]
    chosen = np.concatenate([singletons, extra])
    if len(chosen) < count:
        raise ValidationError(
            f"cannot select {count} rarely rated items from {matrix.n_items}")
    return np.sort(chosen)


def _filler_ratings(model, filler_ids, intent, st, gstats, matrix, rng):
    """Sample filler ratings per model; round to integers and clip to scale."""
    n = len(filler_ids)
    if n == 0:
        return np.array([], dtype=np.int64)
    if model in ("segment", "love_hate"):
        return np.full(n, intent.opposite_rating(matrix), dtype=np.int64)
    if model in ("random", "bandwagon_random", "reverse_bandwagon"):
        samples = rng.normal(gstats.mean, gstats.sigma, size=n)
    else:   # average, bandwagon_average, aop: around each item's own mean
        idx = matrix.item_indices(filler_ids)
        samples = rng.normal(st.means[idx], st.sigmas[idx])
    return np.clip(np.rint(samples), matrix.r_min, matrix.r_max).astype(np.int64)


def _power_batch(model, intent, filler_counts, seed, params, matrix):
    rng = np.random.default_rng(seed)
    st = item_stats(matrix)
    item_ids = matrix.item_ids
    target_r = intent.target_rating(matrix)
    kind, strategy = model.split("_")     # ("pia"|"pua", "as"|"id"|"nr")
    strategy = strategy.upper()

    profiles = []
    if kind == "pia":
        cache: dict[int, np.ndarray] = {}
        for fc in filler_counts:
            n = params.power_n if params.power_n is not None else fc
            if n < 1:
                raise ValidationError("power-item attack needs n >= 1 items")
            if n not in cache:
                cache[n] = np.asarray(select_power_items(matrix, strategy, n),
                                      dtype=np.int64)
            power = cache[n]
            idx = matrix.item_indices(power)
            vals = np.clip(np.rint(rng.normal(st.means[idx], st.sigmas[idx])),
                           matrix.r_min, matrix.r_max).astype(np.int64)
            eligible = item_ids[~np.isin(item_ids, power)]
            if len(eligible) == 0:
                raise ValidationError("no item left to target")
            target = int(eligible[rng.integers(len(eligible))])
            profiles.append(AttackProfile(
                target=target, target_rating=target_r,
                selected={int(i): int(v) for i, v in zip(power, vals)},
                fillers={}))
        return profiles

    power_users = select_power_users(matrix, strategy, params.power_user_count)
    for k, fc in enumerate(filler_counts):
        src = power_users[k % len(power_users)]
        src_items, src_ratings = matrix.profile_arrays(src)
        keep = min(fc, len(src_items))
        pick = np.sort(rng.choice(len(src_items), size=keep, replace=False))
        clone_items = src_items[pick]
        clone_vals = src_ratings[pick]
        eligible = item_ids[~np.isin(item_ids, clone_items)]
        if len(eligible) == 0:
            raise ValidationError("no item left to target")
        target = int(eligible[rng.integers(len(eligible))])
        profiles.append(AttackProfile(
            target=target, target_rating=target_r,
            selected={int(i): int(v) for i, v in zip(clone_items, clone_vals)},
            fillers={}))
    return profiles


# ---------------------------------------------------------------------------
# power item / user selection


def _dense_ratings(matrix: RatingMatrix) -> np.ndarray:
    """(U, I) dense float matrix, 0 where unrated."""
    if "dense" not in matrix._cache:
        indptr, item_idx, ratings = matrix.csr
        rows = np.repeat(np.arange(matrix.n_users), np.diff(indptr))
        dense = np.zeros((matrix.n_users, matrix.n_items))
        dense[rows, item_idx] = ratings
        dense.setflags(write=False)
        matrix._cache["dense"] = dense
    return matrix._cache["dense"]


def _cooccurrence_similarity(entity_rows: np.ndarray):
    """Pairwise Pearson correlation over co-rated entries.

    ``entity_rows`` holds one entity per row, 0 marking a missing rating.
    Returns (rho, n_c) where rho[a, b] is the correlation of a and b over the
    columns both rated (NaN when fewer than 2 co-ratings or zero variance)
    and n_c[a, b] the co-rating count.  The diagonal is NaN.
    """
    m = np.asarray(entity_rows, dtype=np.float64)
    observed = (m > 0).astype(np.float64)
    n_c = observed @ observed.T
    sum_xy = m @ m.T
    sum_x = m @ observed.T          # sum of a's ratings over b's co-columns
    sum_sq = (m * m) @ observed.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sum_xy - sum_x * sum_x.T / n_c
        var = np.maximum(sum_sq - sum_x ** 2 / n_c, 0.0)
        denom = np.sqrt(var * var.T)
        rho = np.where((n_c >= 2) & (denom > 1e-6),
                       np.clip(cov / denom, -1.0, 1.0), np.nan)
    np.fill_diagonal(rho, np.nan)
    return rho, n_c.astype(np.int64)


def _item_similarity(matrix):
    if "item_sim" not in matrix._cache:
        matrix._cache["item_sim"] = _cooccurrence_similarity(_dense_ratings(matrix).T)
    return matrix._cache["item_sim"]


def _user_similarity(matrix):
    if "user_sim" not in matrix._cache:
        matrix._cache["user_sim"] = _cooccurrence_similarity(_dense_ratings(matrix))
    return matrix._cache["user_sim"]


def _top_by_score(ids: np.ndarray, scores: np.ndarray, n: int) -> list[int]:
    """Top-n ids by descending score, ties by ascending id."""
    order = np.lexsort((ids, -scores))
    return [int(i) for i in ids[order[:n]]]


def _indegree_counts(rho: np.ndarray, n_c: np.ndarray, list_size: int) -> np.ndarray:
    """Appearance counts across per-entity top neighbor lists.

    Similarities carry the significance weight min(n_c / 50, 1); each entity
    keeps its ``list_size`` strongest neighbors (ties by ascending index).
    """
    weighted = rho * np.minimum(n_c / SIGNIFICANCE_DENOM, 1.0)
    n = weighted.shape[0]
    counts = np.zeros(n, dtype=np.int64)
    cols = np.arange(n)
    # undefined pairs sort last and are never taken (k counts defined pairs)
    neg_key = np.where(np.isnan(weighted), np.inf, -weighted)
    for a in range(n):
        k = min(list_size, int(np.isfinite(neg_key[a]).sum()))
        if k == 0:
            continue
        order = np.lexsort((cols, neg_key[a]))
        counts[order[:k]] += 1
    return counts


def select_power_items(matrix: RatingMatrix, strategy: str, n: int) -> list[int]:
    """Most influential items under AS, ID or NR; ties by ascending item id."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    if n > matrix.n_items:
        raise ValidationError(f"n {n} exceeds item count {matrix.n_items}")
    strategy = strategy.upper()
    if strategy == "NR":
        counts = item_stats(matrix).counts.astype(np.float64)
        return _top_by_score(matrix.item_ids, counts, n)
    rho, n_c = _item_similarity(matrix)
    if strategy == "AS":
        valid = (n_c >= AS_MIN_COOCCURRENCE) & ~np.isnan(rho)
        scores = np.where(valid, np.nan_to_num(rho), 0.0).sum(axis=1)
        return _top_by_score(matrix.item_ids, scores, n)
    if strategy == "ID":
        counts = _indegree_counts(rho, n_c, n)
        return _top_by_score(matrix.item_ids, counts.astype(np.float64), n)
    raise ValidationError(f"unknown power strategy {strategy!r}")


def select_power_users(matrix: RatingMatrix, strategy: str,
                       count: int = 50) -> list[int]:
    """Most influential users under AS, ID or NR; ties by ascending user id."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    if count > matrix.n_users:
        raise ValidationError(f"count {count} exceeds user count {matrix.n_users}")
    strategy = strategy.upper()
    if strategy == "NR":
        lengths = matrix.profile_lengths().astype(np.float64)
        return _top_by_score(matrix.user_ids, lengths, count)
    rho, n_c = _user_similarity(matrix)
    if strategy == "AS":
        valid = (n_c >= AS_MIN_COOCCURRENCE) & ~np.isnan(rho)
        scores = np.where(valid, np.nan_to_num(rho), 0.0).sum(axis=1)
        return _top_by_score(matrix.user_ids, scores, count)
    if strategy == "ID":
        counts = _indegree_counts(rho, n_c, count)
        return _top_by_score(matrix.user_ids, counts.astype(np.float64), count)
    raise ValidationError(f"unknown power strategy {strategy!r}")


# ---------------------------------------------------------------------------
# injection and label files


def inject_profiles(matrix: RatingMatrix, profiles: list[AttackProfile],
                    base_labels: dict[int, int] | None = None) -> LabeledDataset:
    """Append attack profiles as new users after the highest existing id.

    ``base_labels`` carries labels forward when injecting into an already
    labeled matrix; existing users default to genuine.
    """
    labels = {int(u): 0 for u in matrix.user_ids}
    if base_labels:
        labels.update({int(u): int(l) for u, l in base_labels.items()})
    if not profiles:
        return LabeledDataset(matrix, labels)

    next_id = int(matrix.user_ids.max()) + 1
    indptr, item_idx, ratings = matrix.csr
    users = [np.repeat(matrix.user_ids, np.diff(indptr))]
    items = [matrix.item_ids[item_idx]]
    vals = [ratings]
    for k, p in enumerate(profiles):
        uid = next_id + k
        prof = p.ratings()
        users.append(np.full(len(prof), uid, dtype=np.int64))
        items.append(np.fromiter(prof.keys(), dtype=np.int64, count=len(prof)))
        vals.append(np.fromiter(prof.values(), dtype=np.int64, count=len(prof)))
        labels[uid] = 1
    merged = RatingMatrix.from_arrays(np.concatenate(users),
                                      np.concatenate(items),
                                      np.concatenate(vals))
    return LabeledDataset(merged, labels)


def dump_labels(labels: dict[int, int], sink=None):
    """Write ``user_id<TAB>label`` lines (0 genuine, 1 attack), by user id."""
    buf = io.StringIO()
    for u in sorted(labels):
        buf.write(f"{u}\t{int(labels[u])}\n")
    data = buf.getvalue().encode("utf-8")
    if sink is None:
        return data
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    return None


def load_labels(source) -> dict[int, int]:
    if isinstance(source, (str, Path)):
        text = Path(source).read_bytes().decode("utf-8")
    elif isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    labels = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("0", "1"):
            raise ValidationError(f"label line {lineno}: expected 'user 0|1'")
        labels[int(parts[0])] = int(parts[1])
    return labels
