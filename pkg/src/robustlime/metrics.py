"""Explanation quality metrics: top-k accuracy and predicate precision.

Top-k accuracy asks whether an explanation surfaces a known-relevant
feature among its k largest attributions.  Precision asks how well the
explanation's top features actually pin down the model's behaviour: rows
that match the explained instance on those features should receive the
same prediction.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import wasserstein_distance

from .data import Dataset
from .explain import Explanation, top_k
from .transform import Transformer

__all__ = ["topk_accuracy", "precision", "mean_continuous_wasserstein"]


def topk_accuracy(explanations: Sequence[Explanation], feature_name: str, k: int) -> float:
    """Percentage of explanations ranking `feature_name` within the top k.

    Returns a value in [0, 100].
    """
    if len(explanations) == 0:
        raise ValueError("topk_accuracy needs at least one explanation")
    hits = sum(1 for e in explanations if feature_name in top_k(e, k))
    return 100.0 * hits / len(explanations)


def precision(
    e: Explanation,
    x: np.ndarray,
    model,
    pool: Dataset,
    transformer: Transformer,
    k: int,
    min_matches: int = 25,
    seed: int = 0,
) -> float:
    """Agreement between the model's prediction on x and on rows matching
    the explanation's top-k predicates.  Returns a fraction in [0, 1].

    A predicate is "same category" for a discrete feature and "same
    quartile bin" for a continuous one.  If fewer than `min_matches` pool
    rows satisfy every predicate, synthetic matches are added by copying x
    and resampling only the non-predicate features from the pool's
    per-column marginals, so the predicate set stays exactly satisfied.
    """
    if len(pool.rows) == 0:
        raise ValueError("precision needs a non-empty pool")
    x = np.asarray(x, dtype=np.float64)
    schema = transformer.schema
    pred_idx = np.array(
        [schema.feature_index(name) for name in top_k(e, k)], dtype=np.intp
    )

    bins_x = transformer.bin_index(x)[0]
    bins_pool = transformer.bin_index(pool.rows)
    mask = np.all(bins_pool[:, pred_idx] == bins_x[pred_idx], axis=1)
    matched = pool.rows[mask]

    if len(matched) < min_matches:
        rng = np.random.default_rng(seed)
        n_aug = min_matches - len(matched)
        aug = np.tile(x, (n_aug, 1))
        free = [j for j in range(len(x)) if j not in set(pred_idx.tolist())]
        for j in free:
            aug[:, j] = rng.choice(pool.rows[:, j], size=n_aug, replace=True)
        matched = np.vstack([matched, aug]) if len(matched) else aug

    fx = model.predict(x[None, :])[0]
    agree = model.predict(matched) == fx
    return float(np.mean(agree))


def mean_continuous_wasserstein(
    samples: np.ndarray, reference: np.ndarray, transformer: Transformer
) -> float:
    """Mean per-feature 1-D Wasserstein distance between two row sets,
    over continuous features standardized by the transformer's training
    statistics.  Lower means `samples` sits closer to `reference`."""
    a = transformer.continuous_matrix(samples)
    b = transformer.continuous_matrix(reference)
    if a.shape[1] == 0:
        raise ValueError("no continuous features to compare")
    dists = [wasserstein_distance(a[:, j], b[:, j]) for j in range(a.shape[1])]
    return float(np.mean(dists))
