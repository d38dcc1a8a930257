"""Rating-matrix ingestion and the statistics every other stage consumes.

The input format is the classic MovieLens ``u.data`` layout: one rating per
line, ``user_id <TAB> item_id <TAB> rating <TAB> timestamp``, ratings on the
integer scale 1..5.  Timestamps are parsed and discarded.  A loaded matrix is
immutable and safe to share across threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

R_MIN = 1
R_MAX = 5


class ParseError(ValueError):
    """A line of input could not be parsed at all."""


class ValidationError(ValueError):
    """Input parsed but violated a data constraint (scale, duplicates, ...)."""


class RatingMatrix:
    """Sparse user x item integer ratings with dense internal indices.

    External user/item ids are kept in ascending order; internally each user's
    ratings are stored CSR-style so per-user and per-item passes are cheap.
    Instances are immutable after construction.
    """

    __slots__ = ("user_ids", "item_ids", "_indptr", "_item_idx", "_ratings",
                 "_uid_to_idx", "_iid_to_idx", "_cache")

    r_min = R_MIN
    r_max = R_MAX

    def __init__(self, user_ids, item_ids, indptr, item_idx, ratings):
        self.user_ids = user_ids        # (U,) external ids, ascending
        self.item_ids = item_ids        # (I,) external ids, ascending
        self._indptr = indptr           # (U+1,) CSR row pointers
        self._item_idx = item_idx       # (N,) internal item indices
        self._ratings = ratings         # (N,) int ratings
        self._uid_to_idx = {int(u): k for k, u in enumerate(user_ids)}
        self._iid_to_idx = {int(i): k for k, i in enumerate(item_ids)}
        self._cache: dict = {}
        for arr in (user_ids, item_ids, indptr, item_idx, ratings):
            arr.setflags(write=False)

    @classmethod
    def from_entries(cls, entries) -> "RatingMatrix":
        """Build a matrix from an iterable of ``(user_id, item_id, rating)``.

        Rejects ratings outside [1, 5] and duplicate (user, item) pairs.
        """
        rows = list(entries)
        if not rows:
            raise ValidationError("no ratings")
        users = np.asarray([r[0] for r in rows], dtype=np.int64)
        items = np.asarray([r[1] for r in rows], dtype=np.int64)
        vals = np.asarray([r[2] for r in rows], dtype=np.int64)
        return cls.from_arrays(users, items, vals)

    @classmethod
    def from_arrays(cls, users, items, vals) -> "RatingMatrix":
        """Array-based constructor; same validation as :meth:`from_entries`."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.int64)
        if users.size == 0:
            raise ValidationError("no ratings")
        bad = (vals < R_MIN) | (vals > R_MAX)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise ValidationError(
                f"rating {vals[k]} for user {users[k]}, item {items[k]} "
                f"outside [{R_MIN}, {R_MAX}]")

        order = np.lexsort((items, users))
        users, items, vals = users[order], items[order], vals[order]
        dup = (users[1:] == users[:-1]) & (items[1:] == items[:-1])
        if dup.any():
            k = int(np.flatnonzero(dup)[0])
            raise ValidationError(
                f"duplicate rating for user {users[k]}, item {items[k]}")

        user_ids, uidx = np.unique(users, return_inverse=True)
        item_ids, iidx = np.unique(items, return_inverse=True)
        indptr = np.zeros(len(user_ids) + 1, dtype=np.int64)
        np.add.at(indptr, uidx + 1, 1)
        indptr = np.cumsum(indptr)
        return cls(user_ids, item_ids, indptr, iidx.astype(np.int64), vals)

    # -- basic shape --------------------------------------------------------

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_ratings(self) -> int:
        return len(self._ratings)

    def profile_lengths(self) -> np.ndarray:
        """Number of ratings per user, aligned to ``user_ids``."""
        return np.diff(self._indptr)

    def has_user(self, user_id: int) -> bool:
        return int(user_id) in self._uid_to_idx

    def has_item(self, item_id: int) -> bool:
        return int(item_id) in self._iid_to_idx

    def user_index(self, user_id: int) -> int:
        try:
            return self._uid_to_idx[int(user_id)]
        except KeyError:
            raise ValidationError(f"unknown user id {user_id}") from None

    def item_index(self, item_id: int) -> int:
        try:
            return self._iid_to_idx[int(item_id)]
        except KeyError:
            raise ValidationError(f"unknown item id {item_id}") from None

    def item_indices(self, ids) -> np.ndarray:
        """Vectorized external -> internal item index lookup."""
        ids = np.asarray(ids, dtype=np.int64)
        idx = np.searchsorted(self.item_ids, ids)
        ok = (idx < self.n_items) & (self.item_ids[np.minimum(idx, self.n_items - 1)] == ids)
        if not ok.all():
            raise ValidationError(f"unknown item id {ids[~ok][0]}")
        return idx

    # -- per-user access ----------------------------------------------------

    def profile_arrays(self, user_id: int):
        """(item_ids, ratings) arrays of one user's profile, items ascending."""
        k = self.user_index(user_id)
        lo, hi = self._indptr[k], self._indptr[k + 1]
        return self.item_ids[self._item_idx[lo:hi]], self._ratings[lo:hi]

    def iter_entries(self):
        """Yield (user_id, item_id, rating) in canonical (user, item) order."""
        for k, u in enumerate(self.user_ids):
            lo, hi = self._indptr[k], self._indptr[k + 1]
            for j, r in zip(self._item_idx[lo:hi], self._ratings[lo:hi]):
                yield int(u), int(self.item_ids[j]), int(r)

    # raw CSR views for vectorized passes (read-only arrays)
    @property
    def csr(self):
        return self._indptr, self._item_idx, self._ratings

    def __eq__(self, other):
        if not isinstance(other, RatingMatrix):
            return NotImplemented
        return (np.array_equal(self.user_ids, other.user_ids)
                and np.array_equal(self.item_ids, other.item_ids)
                and np.array_equal(self._indptr, other._indptr)
                and np.array_equal(self._item_idx, other._item_idx)
                and np.array_equal(self._ratings, other._ratings))

    def __repr__(self):
        return (f"RatingMatrix(users={self.n_users}, items={self.n_items}, "
                f"ratings={self.n_ratings})")


@dataclass(frozen=True)
class GlobalStats:
    """System-wide rating statistics."""
    mean: float                 # mean of all ratings
    sigma: float                # population standard deviation of all ratings
    mean_profile_len: float     # average number of ratings per user
    sparsity: float             # fraction of empty (user, item) cells


class ItemStats:
    """Per-item rater counts, mean ratings and standard deviations.

    Items never rated fall back to the global mean; items with fewer than two
    ratings fall back to the global standard deviation, so downstream samplers
    always see a finite, usable sigma.
    """

    def __init__(self, matrix: RatingMatrix, counts, means, sigmas):
        self._matrix = matrix
        self.counts = counts
        self.means = means
        self.sigmas = sigmas
        for arr in (counts, means, sigmas):
            arr.setflags(write=False)

    def count(self, item_id: int) -> int:
        return int(self.counts[self._matrix.item_index(item_id)])

    def mean(self, item_id: int) -> float:
        return float(self.means[self._matrix.item_index(item_id)])

    def sigma(self, item_id: int) -> float:
        return float(self.sigmas[self._matrix.item_index(item_id)])


@dataclass(frozen=True)
class PopularityRank:
    """Items ordered by rater count (descending, ties by ascending id).

    The first ``boundary`` items are the popular set; the rest are unpopular.
    """
    ordering: np.ndarray        # item ids, most popular first
    boundary: int               # K, count of popular items
    popular_mask: np.ndarray    # bool per internal item index

    @property
    def popular_items(self) -> np.ndarray:
        return self.ordering[:self.boundary]

    @property
    def unpopular_items(self) -> np.ndarray:
        return self.ordering[self.boundary:]


def load_ratings(source) -> RatingMatrix:
    """Parse MovieLens-format ratings from a path, bytes, or file object.

    Each non-blank line must read ``user item rating timestamp`` (whitespace
    separated, all integers).  Raises :class:`ParseError` with the offending
    line number on malformed input and :class:`ValidationError` on ratings
    outside [1, 5], duplicates, or empty input.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_bytes().decode("utf-8")
    elif isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    users, items, vals = [], [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError(
                f"line {lineno}: expected 'user item rating timestamp', "
                f"got {raw!r}")
        try:
            u, i, r = int(parts[0]), int(parts[1]), int(parts[2])
            int(parts[3])   # timestamp: validated, then discarded
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer field in {raw!r}") from None
        if not R_MIN <= r <= R_MAX:
            raise ValidationError(
                f"line {lineno}: rating {r} outside [{R_MIN}, {R_MAX}]")
        users.append(u)
        items.append(i)
        vals.append(r)
    if not users:
        raise ValidationError("no ratings")
    return RatingMatrix.from_entries(zip(users, items, vals))


def dump_ratings(matrix: RatingMatrix, sink=None):
    """Serialize a matrix to the canonical tab-separated form (timestamp 0).

    Rows are ordered by (user, item) so equal matrices serialize identically.
    Returns bytes when ``sink`` is None, otherwise writes to the path or
    binary file object.
    """
    buf = io.StringIO()
    for u, i, r in matrix.iter_entries():
        buf.write(f"{u}\t{i}\t{r}\t0\n")
    data = buf.getvalue().encode("utf-8")
    if sink is None:
        return data
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(data)
    else:
        sink.write(data)
    return None


def global_stats(matrix: RatingMatrix) -> GlobalStats:
    """System mean/sigma, mean profile length, and sparsity."""
    if "global_stats" not in matrix._cache:
        r = matrix.csr[2].astype(np.float64)
        mean = float(r.mean())
        sigma = float(r.std())
        n = matrix.n_ratings
        sparsity = 1.0 - n / (matrix.n_users * matrix.n_items)
        matrix._cache["global_stats"] = GlobalStats(
            mean=mean, sigma=sigma,
            mean_profile_len=n / matrix.n_users, sparsity=sparsity)
    return matrix._cache["global_stats"]


def item_stats(matrix: RatingMatrix) -> ItemStats:
    """Per-item rater count, mean and population sigma (with fallbacks)."""
    if "item_stats" not in matrix._cache:
        gs = global_stats(matrix)
        _, item_idx, ratings = matrix.csr
        n_items = matrix.n_items
        counts = np.bincount(item_idx, minlength=n_items).astype(np.int64)
        sums = np.bincount(item_idx, weights=ratings, minlength=n_items)
        sumsq = np.bincount(item_idx, weights=ratings.astype(np.float64) ** 2,
                            minlength=n_items)
        safe = np.maximum(counts, 1)
        means = np.where(counts > 0, sums / safe, gs.mean)
        var = np.maximum(sumsq / safe - (sums / safe) ** 2, 0.0)
        sigmas = np.where(counts > 1, np.sqrt(var), gs.sigma)
        matrix._cache["item_stats"] = ItemStats(matrix, counts, means, sigmas)
    return matrix._cache["item_stats"]


def default_popular_boundary(matrix: RatingMatrix) -> int:
    """Default popular/unpopular split: 10% of the catalogue, at least 1."""
    return max(1, round(0.1 * matrix.n_items))


def popularity_rank(matrix: RatingMatrix, boundary: int | None = None) -> PopularityRank:
    """Rank items by rater count; the first ``boundary`` items are popular."""
    k = default_popular_boundary(matrix) if boundary is None else int(boundary)
    if not 0 < k < matrix.n_items:
        raise ValidationError(
            f"popular boundary {k} out of range (0, {matrix.n_items})")
    key = ("popularity_rank", k)
    if key not in matrix._cache:
        counts = item_stats(matrix).counts
        # sort by (-count, item_id); item_ids are ascending already
        order = np.lexsort((matrix.item_ids, -counts))
        ordering = matrix.item_ids[order]
        popular_mask = np.zeros(matrix.n_items, dtype=bool)
        popular_mask[order[:k]] = True
        matrix._cache[key] = PopularityRank(ordering, k, popular_mask)
    return matrix._cache[key]


def user_profile(matrix: RatingMatrix, user_id: int) -> dict[int, int]:
    """One user's ratings as an ``{item_id: rating}`` dict."""
    items, ratings = matrix.profile_arrays(user_id)
    return {int(i): int(r) for i, r in zip(items, ratings)}
