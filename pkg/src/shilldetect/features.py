"""Per-user detection features computed from a (possibly attacked) matrix.

Eighteen features in four families:

* generic deviation statistics: rdma, wdma, wda, length_var;
* model-shape statistics built on the extreme-rating partition: mean_var,
  fmtd, tmf, fmv, fmd, fac;
* filler-size ratios against the popular/unpopular item split: fsti, fspi,
  fspii, fsui, fsuii;
* rating-value concentration ratios: fsmaxri, fsminri, fsari.

All statistics are computed on the combined matrix, so item means and counts
reflect any injected profiles.  Every empty-denominator case yields 0.0, so
all features are finite on any valid dataset.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .attack_models import AttackIntent, LabeledDataset
from .dataset import (RatingMatrix, ValidationError, global_stats, item_stats,
                      popularity_rank)

FEATURE_NAMES = (
    "rdma", "wdma", "wda", "length_var",
    "mean_var", "fmtd", "tmf", "fmv", "fmd", "fac",
    "fsti", "fspi", "fspii", "fsui", "fsuii",
    "fsmaxri", "fsminri", "fsari",
)


class FeatureSubset(Enum):
    """Nested prefixes of the 18-column feature order."""

    GENERIC_10 = 10
    FILLER_15 = 15
    ALL_18 = 18

    @property
    def size(self) -> int:
        return self.value

    @property
    def names(self) -> tuple[str, ...]:
        return FEATURE_NAMES[:self.value]

    @classmethod
    def from_size(cls, size: int) -> "FeatureSubset":
        for sub in cls:
            if sub.value == int(size):
                return sub
        raise ValidationError(f"no feature subset of size {size}")


class GenericFeatures(NamedTuple):
    rdma: float
    wdma: float
    wda: float
    length_var: float


class ModelFeatures(NamedTuple):
    mean_var: float
    fmtd: float
    tmf: float
    fmv: float
    fmd: float
    fac: float


class FillerSizeFeatures(NamedTuple):
    fsti: float
    fspi: float
    fspii: float
    fsui: float
    fsuii: float


class RatingDistributionFeatures(NamedTuple):
    fsmaxri: float
    fsminri: float
    fsari: float


def _as_dataset(dataset) -> LabeledDataset:
    if isinstance(dataset, RatingMatrix):
        return LabeledDataset(dataset, {int(u): 0 for u in dataset.user_ids})
    return dataset


class ExtremePartition:
    """Split of each profile into extreme-rated items and the rest.

    The detection extreme is r_min when hunting nuke attacks and r_max for
    push attacks.  ``potential_targets`` is the union of every user's
    extreme-rated set, and ``target_focus`` the sharpest item-focus score
    over it (shared by all users).
    """

    def __init__(self, dataset, detection_mode: AttackIntent = AttackIntent.NUKE):
        self.dataset = _as_dataset(dataset)
        self.matrix = self.dataset.matrix
        self.extreme = int(detection_mode.target_rating(self.matrix))
        self._focus = None

    def target_items(self, user_id: int) -> np.ndarray:
        items, ratings = self.matrix.profile_arrays(user_id)
        return items[ratings == self.extreme]

    def filler_items(self, user_id: int) -> np.ndarray:
        items, ratings = self.matrix.profile_arrays(user_id)
        return items[ratings != self.extreme]

    def _focus_scores(self):
        if self._focus is None:
            indptr, item_idx, ratings = self.matrix.csr
            mask = (ratings == self.extreme).astype(np.float64)
            total = mask.sum()
            per_item = np.bincount(item_idx, weights=mask,
                                   minlength=self.matrix.n_items)
            self._focus = (per_item / total if total > 0
                           else np.zeros(self.matrix.n_items))
        return self._focus

    @property
    def potential_targets(self) -> np.ndarray:
        return self.matrix.item_ids[self._focus_scores() > 0]

    @property
    def target_focus(self) -> float:
        scores = self._focus_scores()
        return float(scores.max()) if scores.size else 0.0


def build_extreme_partition(dataset, detection_mode: AttackIntent = AttackIntent.NUKE):
    return ExtremePartition(dataset, detection_mode)


def nearest_valid_rating(mean: float, r_min: int = 1, r_max: int = 5) -> int:
    """The rating value closest to ``mean``; ties resolve to the lower value."""
    return int(min(max(math.ceil(mean - 0.5), r_min), r_max))


# ---------------------------------------------------------------------------
# per-user operations


def generic_features(user_id: int, dataset) -> GenericFeatures:
    """Deviation-from-item-mean statistics and profile-length variance."""
    dataset = _as_dataset(dataset)
    m = dataset.matrix
    st = item_stats(m)
    items, ratings = m.profile_arrays(user_id)
    idx = m.item_indices(items)
    dev = np.abs(ratings - st.means[idx])
    n_u = len(items)
    rdma = float((dev / st.counts[idx]).sum()) / n_u
    wdma = float((dev / st.counts[idx] ** 2).sum()) / n_u
    wda = rdma * n_u    # keeps wda == rdma * n_u an exact identity

    lengths = m.profile_lengths().astype(np.float64)
    n_bar = lengths.mean()
    denom = float(((lengths - n_bar) ** 2).sum())
    length_var = abs(n_u - n_bar) / denom if denom > 0 else 0.0
    return GenericFeatures(rdma, wdma, wda, float(length_var))


def model_features(user_id: int, dataset,
                   partition: ExtremePartition) -> ModelFeatures:
    """Statistics over the extreme/non-extreme split of one profile."""
    dataset = _as_dataset(dataset)
    m = dataset.matrix
    st = item_stats(m)
    items, ratings = m.profile_arrays(user_id)
    idx = m.item_indices(items)
    extreme = partition.extreme
    mask_t = ratings == extreme
    filler = ~mask_t
    n_u = len(items)
    n_f = int(filler.sum())

    mean_u = float(ratings.mean())
    mean_var = (float(((ratings[filler] - mean_u) ** 2).sum()) / n_f
                if n_f else 0.0)
    fmtd = (abs(extreme - float(ratings[filler].mean()))
            if n_f and mask_t.any() else 0.0)
    tmf = partition.target_focus
    fmv = (float(((ratings[filler] - st.means[idx][filler]) ** 2).sum()) / n_f
           if n_f else 0.0)
    fmd = float(np.abs(ratings - st.means[idx]).sum()) / n_u
    centered = ratings - st.means[idx]
    norm = math.sqrt(float((centered ** 2).sum()))
    fac = float(centered.sum()) / norm if norm > 0 else 0.0
    return ModelFeatures(mean_var, fmtd, tmf, fmv, fmd, fac)


def filler_size_features(user_id: int, dataset, rank) -> FillerSizeFeatures:
    """Coverage ratios of the profile against the popular/unpopular split."""
    dataset = _as_dataset(dataset)
    m = dataset.matrix
    items, _ = m.profile_arrays(user_id)
    idx = m.item_indices(items)
    n_u = len(items)
    n_items = m.n_items
    k = rank.boundary
    popular = int(rank.popular_mask[idx].sum())
    fsti = n_u / n_items
    fspi = popular / k
    fspii = popular / n_u
    fsuii = 1.0 - fspii     # exact complement of the popular share
    fsui = (n_u - popular) / (n_items - k)
    return FillerSizeFeatures(fsti, fspi, fspii, fsui, fsuii)


def rating_distribution_features(user_id: int, dataset) -> RatingDistributionFeatures:
    """Shares of the profile rated at r_max, r_min, and the typical value."""
    dataset = _as_dataset(dataset)
    m = dataset.matrix
    _, ratings = m.profile_arrays(user_id)
    n_u = len(ratings)
    r_avg = nearest_valid_rating(global_stats(m).mean, m.r_min, m.r_max)
    return RatingDistributionFeatures(
        float((ratings == m.r_max).sum()) / n_u,
        float((ratings == m.r_min).sum()) / n_u,
        float((ratings == r_avg).sum()) / n_u,
    )


# ---------------------------------------------------------------------------
# whole-table extraction


@dataclass
class FeatureTable:
    """One row of detection features per user, plus 0/1 labels."""

    user_ids: np.ndarray
    labels: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def row(self, user_id: int) -> np.ndarray:
        pos = np.flatnonzero(self.user_ids == int(user_id))
        if len(pos) == 0:
            raise ValidationError(f"no feature row for user {user_id}")
        return self.values[int(pos[0])]

    def restrict(self, subset: FeatureSubset) -> "FeatureTable":
        names = subset.names
        if self.columns[:len(names)] != names:
            raise ValidationError("table columns are not a feature prefix")
        return FeatureTable(self.user_ids, self.labels, names,
                            self.values[:, :len(names)].copy())

    def signed_labels(self) -> np.ndarray:
        """attack -> +1, genuine -> -1."""
        return np.where(self.labels == 1, 1, -1).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (np.array_equal(self.user_ids, other.user_ids)
                and np.array_equal(self.labels, other.labels)
                and self.columns == other.columns
                and np.array_equal(self.values, other.values))

    # CSV round trip: header `user_id,label,<features>`, 12 significant digits

    def to_csv_bytes(self, manifest: dict | None = None) -> bytes:
        buf = io.StringIO()
        if manifest:
            for key in sorted(manifest):
                buf.write(f"# {key}={manifest[key]}\n")
        buf.write("user_id,label," + ",".join(self.columns) + "\n")
        for u, l, row in zip(self.user_ids, self.labels, self.values):
            vals = ",".join(format(v, ".12g") for v in row)
            buf.write(f"{int(u)},{int(l)},{vals}\n")
        return buf.getvalue().encode("utf-8")

    def save(self, path, manifest: dict | None = None) -> None:
        Path(path).write_bytes(self.to_csv_bytes(manifest))

    @classmethod
    def from_csv(cls, source) -> "FeatureTable":
        if isinstance(source, (str, Path)):
            text = Path(source).read_bytes().decode("utf-8")
        elif isinstance(source, (bytes, bytearray)):
            text = bytes(source).decode("utf-8")
        else:
            data = source.read()
            text = data.decode("utf-8") if isinstance(data, bytes) else data
        lines = [l for l in text.splitlines() if l and not l.startswith("#")]
        if not lines:
            raise ValidationError("empty feature table")
        header = lines[0].split(",")
        if header[:2] != ["user_id", "label"]:
            raise ValidationError("feature CSV must start with user_id,label")
        columns = tuple(header[2:])
        users, labels, rows = [], [], []
        for line in lines[1:]:
            parts = line.split(",")
            users.append(int(parts[0]))
            labels.append(int(parts[1]))
            rows.append([float(x) for x in parts[2:]])
        return cls(np.array(users, dtype=np.int64),
                   np.array(labels, dtype=np.int64), columns,
                   np.array(rows, dtype=np.float64))


def extract_all(dataset, subset: FeatureSubset = FeatureSubset.ALL_18,
                detection_mode: AttackIntent = AttackIntent.NUKE,
                popular_boundary: int | None = None) -> FeatureTable:
    """Compute the feature table for every user of a dataset.

    Statistics are taken on the combined matrix (attackers included), the
    detection mode fixes the extreme-rating partition, and the table rows
    follow ``matrix.user_ids`` order.
    """
    dataset = _as_dataset(dataset)
    m = dataset.matrix
    if m.n_ratings == 0:
        raise ValidationError("empty dataset")
    st = item_stats(m)
    gs = global_stats(m)
    rank = popularity_rank(m, popular_boundary)
    indptr, item_idx, ratings = m.csr
    n_users, n_items = m.n_users, m.n_items
    r = ratings.astype(np.float64)
    uidx = np.repeat(np.arange(n_users), np.diff(indptr))
    n_u = np.diff(indptr).astype(np.float64)

    def by_user(x):
        return np.bincount(uidx, weights=x, minlength=n_users)

    mean_i = st.means[item_idx]
    nr_i = st.counts[item_idx].astype(np.float64)
    dev = np.abs(r - mean_i)

    rdma = by_user(dev / nr_i) / n_u
    wdma = by_user(dev / nr_i ** 2) / n_u
    wda = rdma * n_u
    n_bar = n_u.mean()
    lv_denom = ((n_u - n_bar) ** 2).sum()
    length_var = (np.abs(n_u - n_bar) / lv_denom if lv_denom > 0
                  else np.zeros(n_users))

    extreme = float(detection_mode.target_rating(m))
    mask_t = r == extreme
    t_u = by_user(mask_t)
    f_u = n_u - t_u
    f_safe = np.maximum(f_u, 1.0)
    mean_u = by_user(r) / n_u
    mean_var = np.where(f_u > 0,
                        by_user((r - mean_u[uidx]) ** 2 * ~mask_t) / f_safe, 0.0)
    filler_mean = by_user(r * ~mask_t) / f_safe
    fmtd = np.where((t_u > 0) & (f_u > 0), np.abs(extreme - filler_mean), 0.0)
    total_t = mask_t.sum()
    focus = (np.bincount(item_idx, weights=mask_t, minlength=n_items) / total_t
             if total_t > 0 else np.zeros(n_items))
    tmf = np.full(n_users, focus.max() if total_t > 0 else 0.0)
    fmv = np.where(f_u > 0, by_user((r - mean_i) ** 2 * ~mask_t) / f_safe, 0.0)
    fmd = by_user(dev) / n_u
    fac_num = by_user(r - mean_i)
    fac_den = np.sqrt(by_user((r - mean_i) ** 2))
    fac = np.where(fac_den > 0, fac_num / np.maximum(fac_den, 1e-300), 0.0)

    pop_u = by_user(rank.popular_mask[item_idx].astype(np.float64))
    fsti = n_u / n_items
    fspi = pop_u / rank.boundary
    fspii = pop_u / n_u
    fsuii = 1.0 - fspii
    fsui = (n_u - pop_u) / (n_items - rank.boundary)

    r_avg = nearest_valid_rating(gs.mean, m.r_min, m.r_max)
    fsmaxri = by_user(r == m.r_max) / n_u
    fsminri = by_user(r == m.r_min) / n_u
    fsari = by_user(r == float(r_avg)) / n_u

    table = np.column_stack([
        rdma, wdma, wda, length_var,
        mean_var, fmtd, tmf, fmv, fmd, fac,
        fsti, fspi, fspii, fsui, fsuii,
        fsmaxri, fsminri, fsari,
    ])
    labels = dataset.label_array()
    full = FeatureTable(m.user_ids.copy(), labels, FEATURE_NAMES, table)
    return full if subset is FeatureSubset.ALL_18 else full.restrict(subset)
