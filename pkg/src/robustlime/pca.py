"""Small PCA used for the 2-D real-vs-synthetic scatter diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (n_components, width), orthonormal rows
    explained_variance: np.ndarray


def pca_fit(matrix, n_components: int) -> PcaModel:
    """Top right-singular vectors of the centered data.

    Component signs are fixed so the largest-magnitude loading of each row
    is positive, keeping results reproducible across runs.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if n_components > X.shape[1]:
        raise ValueError(f"n_components {n_components} exceeds width {X.shape[1]}")
    mean = X.mean(axis=0)
    centered = X - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:n_components].copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    denom = max(len(X) - 1, 1)
    return PcaModel(mean, components, (s[:n_components] ** 2) / denom)


def pca_project(model: PcaModel, matrix) -> np.ndarray:
    X = np.asarray(matrix, dtype=np.float64)
    return (X - model.mean) @ model.components.T
