import os
from pathlib import Path

import numpy as np
import pytest

from shilldetect.dataset import RatingMatrix, load_ratings
from shilldetect.synth import synthetic_ml100k

# Point this at a real MovieLens-100K u.data file to run the suite against
# the original benchmark instead of the bundled synthetic stand-in.
ML100K_ENV = "SHILLDETECT_ML100K"


@pytest.fixture(scope="session")
def ml100k() -> RatingMatrix:
    path = os.environ.get(ML100K_ENV)
    if path and Path(path).exists():
        return load_ratings(path)
    return synthetic_ml100k(seed=0)


def random_entries(rng, max_users=10, max_items=15):
    """Small random rating set; every matrix has >= 2 users and >= 2 items."""
    n_users = int(rng.integers(2, max_users + 1))
    n_items = int(rng.integers(2, max_items + 1))
    entries = []
    seen_items = set()
    for u in range(1, n_users + 1):
        count = int(rng.integers(1, n_items + 1))
        items = rng.choice(np.arange(1, n_items + 1), size=count, replace=False)
        for i in items:
            entries.append((u, int(i), int(rng.integers(1, 6))))
            seen_items.add(int(i))
    if len(seen_items) < 2:    # popularity split needs at least two items
        extra = 1 if 1 not in seen_items else 2
        entries.append((1, extra, int(rng.integers(1, 6))))
    return entries


@pytest.fixture
def toy_matrix() -> RatingMatrix:
    """3 users x 3 items, fully rated, hand-checkable."""
    return RatingMatrix.from_entries([
        (1, 10, 5), (1, 20, 3), (1, 30, 1),
        (2, 10, 4), (2, 20, 2), (2, 30, 2),
        (3, 10, 3), (3, 20, 4), (3, 30, 3),
    ])
