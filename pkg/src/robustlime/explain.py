"""Locally-weighted linear surrogate explanations.

One explanation is produced by sampling a synthetic neighborhood around the
instance (unit-Gaussian perturbations, GAN samples, or GAN samples pruned by
the critic), querying the model, and fitting a kernel-weighted ridge on the
binary interpretable representation (quartile-bin match for continuous
features, category match for discrete ones).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ctgan import (
    CtganModel,
    EmptyFilterResult,
    build_cond_vector_instance,
    critic_score,
    ctgan_sample,
    filter_samples,
)
from .transform import Transformer

SAMPLERS = ("vanilla", "ctgan", "ctgan_filtered")


class NeighborhoodTooSmall(RuntimeError):
    """Filtering left fewer than n_min rows after the retry budget."""

    def __init__(self, n_kept: int, n_min: int, batches: int):
        super().__init__(
            f"only {n_kept} of the required {n_min} samples survived filtering after {batches} batches"
        )
        self.n_kept = n_kept


@dataclass(frozen=True)
class KernelConfig:
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("kernel width must be positive")


def default_sigma(n_features: int) -> float:
    return 0.75 * np.sqrt(n_features)


@dataclass(frozen=True)
class ExplainConfig:
    transformer: Transformer
    ctgan: CtganModel | None = None
    sigma: float | None = None
    n_samples: int = 1000
    n_min: int = 200
    max_batches: int = 5
    alpha: float = 1.0


@dataclass(frozen=True)
class Explanation:
    feature_names: tuple[str, ...]
    weights: np.ndarray = field(repr=False)
    intercept: float
    sigma: float
    sampler: str
    n_used: int
    instance_id: int | None = None

    def to_json(self) -> dict:
        order = ranked_indices(self.weights)
        return {
            "instance_id": self.instance_id,
            "sampler": self.sampler,
            "sigma": self.sigma,
            "n_used": self.n_used,
            "intercept": self.intercept,
            "attributions": [
                {"feature": self.feature_names[i], "weight": float(self.weights[i])} for i in order
            ],
        }

    @classmethod
    def from_json(cls, doc: dict, feature_names) -> "Explanation":
        by_name = {a["feature"]: a["weight"] for a in doc["attributions"]}
        weights = np.array([by_name[n] for n in feature_names])
        return cls(
            feature_names=tuple(feature_names),
            weights=weights,
            intercept=float(doc["intercept"]),
            sigma=float(doc["sigma"]),
            sampler=doc["sampler"],
            n_used=int(doc["n_used"]),
            instance_id=doc.get("instance_id"),
        )


def gaussian_sample(x, t: Transformer, n: int, seed: int) -> np.ndarray:
    """Unit-Gaussian neighborhood: continuous j drawn as x_j + std_j * eps,
    discrete j from training marginal frequencies. Row 0 is x itself."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    out = np.empty((n, len(x)))
    out[0] = x
    for j, enc in enumerate(t.encoders):
        if n == 1:
            break
        if enc.style == "onehot":
            counts = np.asarray(enc.counts, dtype=np.float64)
            out[1:, j] = rng.choice(len(counts), size=n - 1, p=counts / counts.sum())
        else:
            out[1:, j] = x[j] + enc.std * rng.standard_normal(n - 1)
    return out


def to_interpretable(x, rows, t: Transformer) -> np.ndarray:
    """Binary matrix, one column per original feature: 1 where the sample
    matches x's quartile bin (continuous) or category (discrete)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    bins = t.bin_index(rows)
    x_bins = t.bin_index(x)[0]
    return (bins == x_bins[None, :]).astype(np.float64)


def kernel_weights(x, rows, kc: KernelConfig, t: Transformer) -> np.ndarray:
    """exp(-D^2 / sigma^2), D = L2 over z-scored continuous features plus
    one-hot discrete blocks (a category mismatch contributes 2 to D^2)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    d2 = np.zeros(len(rows))
    for j, enc in enumerate(t.encoders):
        if enc.style == "onehot":
            d2 += 2.0 * (rows[:, j] != x[j])
        else:
            d2 += ((rows[:, j] - x[j]) / enc.std) ** 2
    return np.exp(-d2 / kc.sigma**2)


def weighted_ridge(z_binary, y, w, alpha: float) -> tuple[np.ndarray, float]:
    """Minimize sum_i w_i (y_i - beta.z_i - b0)^2 + alpha ||beta||^2 by
    normal equations on weighted centered data; the intercept is not
    penalized."""
    Z = np.atleast_2d(np.asarray(z_binary, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    w = np.asarray(w, dtype=np.float64).ravel()
    if len(Z) < 2:
        raise ValueError("need at least 2 rows")
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    sw = w.sum()
    zbar = (w[:, None] * Z).sum(axis=0) / sw
    ybar = float(w @ y) / sw
    Zc = Z - zbar
    yc = y - ybar
    A = (Zc * w[:, None]).T @ Zc + alpha * np.eye(Z.shape[1])
    b = (Zc * w[:, None]).T @ yc
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "singular normal equations; use alpha > 0 to regularize"
        ) from None
    if alpha == 0.0 and not np.allclose(A @ coef, b, atol=1e-8):
        raise np.linalg.LinAlgError("singular normal equations; use alpha > 0 to regularize")
    return coef, ybar - float(coef @ zbar)


def _ctgan_neighborhood(x, cfg: ExplainConfig, seed: int, filtered: bool) -> np.ndarray:
    model = cfg.ctgan
    if model is None:
        raise ValueError("ctgan samplers need a trained generator in the config")
    m_x = build_cond_vector_instance(cfg.transformer, x)
    if not filtered:
        rows = ctgan_sample(model, m_x, cfg.n_samples - 1, seed)
        return np.vstack([x[None, :], rows])
    if model.tau is None:
        raise ValueError("filtered sampling needs a calibrated tau on the model")
    kept = []
    n_kept = 0
    for batch in range(cfg.max_batches):
        rows = ctgan_sample(model, m_x, cfg.n_samples - 1, seed + batch)
        if batch == 0:
            rows = np.vstack([x[None, :], rows])
        scores = critic_score(model, rows)
        try:
            good = filter_samples(rows, scores, model.tau)
        except EmptyFilterResult:
            continue
        kept.append(good)
        n_kept += len(good)
        if n_kept >= cfg.n_min:
            break
    if n_kept < cfg.n_min:
        raise NeighborhoodTooSmall(n_kept, cfg.n_min, cfg.max_batches)
    return np.vstack(kept)


def explain_instance(f, x, sampler: str, cfg: ExplainConfig, seed: int, instance_id: int | None = None) -> Explanation:
    """Full pipeline: sample neighborhood, query the model, fit the weighted
    ridge surrogate on the interpretable representation."""
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    x = np.asarray(x, dtype=np.float64).ravel()
    t = cfg.transformer
    if sampler == "vanilla":
        rows = gaussian_sample(x, t, cfg.n_samples, seed)
    else:
        rows = _ctgan_neighborhood(x, cfg, seed, filtered=sampler == "ctgan_filtered")

    cls = int(f.predict(x[None, :])[0])
    y = f.predict_proba(rows)[:, cls]
    z_binary = to_interpretable(x, rows, t)
    sigma = cfg.sigma if cfg.sigma is not None else default_sigma(len(x))
    w = kernel_weights(x, rows, KernelConfig(sigma), t)
    coef, intercept = weighted_ridge(z_binary, y, w, cfg.alpha)
    return Explanation(
        feature_names=t.schema.feature_names,
        weights=coef,
        intercept=intercept,
        sigma=sigma,
        sampler=sampler,
        n_used=len(rows),
        instance_id=instance_id,
    )


def ranked_indices(weights) -> list[int]:
    """Feature indices by |weight| descending, ties by index ascending."""
    w = np.asarray(weights, dtype=np.float64)
    return sorted(range(len(w)), key=lambda i: (-abs(w[i]), i))


def top_k(e: Explanation, k: int) -> list[str]:
    if not 1 <= k <= len(e.feature_names):
        raise ValueError(f"k={k} out of range for {len(e.feature_names)} features")
    return [e.feature_names[i] for i in ranked_indices(e.weights)[:k]]


def save_explanation(e: Explanation, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(e.to_json(), fh, indent=2)
        fh.write("\n")
