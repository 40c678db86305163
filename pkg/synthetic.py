import logging
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .errors import UsageError
from .ratingMatrix import MOVIELENS_COLUMNS, RawRatings

_log = logging.getLogger(__name__)

TIMESTAMP_BASE = 1_000_000_000


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    """Normalized 1 / rank**exponent weights for ranks 1..n"""
    weights = 1.0 / np.arange(1, n + 1, dtype=np.float64) ** exponent
    return weights / weights.sum()


def synthesize_ratings(
    n_users: int = 1000,
    n_items: int = 1700,
    density: float = 0.06,
    seed: int = 0,
    exponent: float = 1.0,
) -> RawRatings:
    """MovieLens-like half-star ratings with power-law user and item marginals.

    Every user and every item gets at least one rating; the remaining
    interactions are drawn with Zipf propensities (ranks shuffled so ids do
    not encode popularity). Ratings are a global level plus user and item
    offsets plus noise, rounded to half stars in [0.5, 5].
    """
    if n_users < 1 or n_items < 1:
        raise UsageError(f"Need at least one user and one item, got {n_users}x{n_items}")
    if not 0 < density <= 1:
        raise UsageError(f"Density must be in (0, 1], got {density}")

    rng = np.random.default_rng(seed)
    target = min(max(int(round(density * n_users * n_items)), n_users + n_items), n_users * n_items)
    user_p = zipf_weights(n_users, exponent)[rng.permutation(n_users)]
    item_p = zipf_weights(n_items, exponent)[rng.permutation(n_items)]

    users = np.concatenate([
        np.arange(n_users),
        rng.integers(0, n_users, n_items),
        rng.choice(n_users, size=2 * target, p=user_p),
    ])
    items = np.concatenate([
        rng.integers(0, n_items, n_users),
        np.arange(n_items),
        rng.choice(n_items, size=2 * target, p=item_p),
    ])
    pairs = pd.DataFrame({"user": users, "item": items}).drop_duplicates().iloc[:target]
    users = pairs["user"].to_numpy()
    items = pairs["item"].to_numpy()

    user_bias = rng.normal(0.0, 0.45, n_users)
    item_bias = rng.normal(0.0, 0.55, n_items)
    scores = 3.55 + user_bias[users] + item_bias[items] + rng.normal(0.0, 0.8, len(users))
    ratings = np.clip(np.round(scores * 2) / 2, 0.5, 5.0)

    _log.info("Synthesized %d ratings for %d users x %d items", len(ratings), n_users, n_items)
    return RawRatings(
        users.astype(np.int64) + 1,
        items.astype(np.int64) + 1,
        ratings,
        TIMESTAMP_BASE + np.arange(len(ratings), dtype=np.int64),
    )


def write_movielens_csv(raw: RawRatings, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(dict(zip(MOVIELENS_COLUMNS, (raw.user_ids, raw.item_ids, raw.ratings, raw.timestamps))))
    frame.to_csv(path, index=False, float_format="%.1f", lineterminator="\n")
    return path
