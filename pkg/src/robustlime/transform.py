"""Row <-> matrix encoding: one-hot, z-score, and GMM mode-specific normalization.

Continuous columns under gmm mode encode as (alpha, mode one-hot) where
alpha = (c - mu_k) / (4 sigma_k) clipped to [-1, 1], the standard recipe for
making multi-modal columns learnable by a tabular GAN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import CONTINUOUS, DISCRETE, Dataset, Schema

SIGMA_FLOOR = 1e-6
PRUNE_WEIGHT = 0.005


@dataclass(frozen=True)
class Gmm:
    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    ll_trace: tuple[float, ...] = field(repr=False, default=())

    @property
    def k(self) -> int:
        return len(self.weights)

    def _log_joint(self, values: np.ndarray) -> np.ndarray:
        # log w_k + log N(v | mu_k, sigma_k), shape (n, k)
        v = np.asarray(values, dtype=np.float64)[:, None]
        z = (v - self.means[None, :]) / self.stds[None, :]
        return (
            np.log(self.weights[None, :])
            - 0.5 * z * z
            - np.log(self.stds[None, :])
            - 0.5 * np.log(2.0 * np.pi)
        )

    def log_likelihood(self, values) -> float:
        return float(np.sum(logsumexp(self._log_joint(values), axis=1)))

    def responsibilities(self, values) -> np.ndarray:
        lj = self._log_joint(values)
        return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def fit_gmm(values, k: int, max_iter: int = 100, tol: float = 1e-6) -> Gmm:
    """EM fit of a 1-D Gaussian mixture.

    K is reduced to the distinct-value count when needed; component stds are
    floored at 1e-6 every step; components below weight 0.005 are pruned at
    the end and weights renormalized. The per-iteration log-likelihood trace
    is kept on the result.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if len(values) == 0:
        raise ValueError("cannot fit GMM on empty data")
    n_distinct = len(np.unique(values))
    k = min(k, n_distinct)

    # Quantile init keeps the fit deterministic.
    qs = (2.0 * np.arange(k) + 1.0) / (2.0 * k)
    means = np.quantile(values, qs)
    sigma0 = max(float(np.std(values)), SIGMA_FLOOR)
    gmm = Gmm(np.full(k, 1.0 / k), means, np.full(k, sigma0))

    trace = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        lj = gmm._log_joint(values)
        per_point = logsumexp(lj, axis=1)
        ll = float(np.sum(per_point))
        trace.append(ll)
        if ll - prev_ll < tol:
            break
        prev_ll = ll
        resp = np.exp(lj - per_point[:, None])
        mass = resp.sum(axis=0)
        mass = np.maximum(mass, 1e-300)
        weights = mass / len(values)
        means = (resp * values[:, None]).sum(axis=0) / mass
        var = (resp * (values[:, None] - means[None, :]) ** 2).sum(axis=0) / mass
        stds = np.maximum(np.sqrt(var), SIGMA_FLOOR)
        gmm = Gmm(weights, means, stds)

    keep = gmm.weights >= PRUNE_WEIGHT
    if not np.all(keep):
        weights = gmm.weights[keep]
        gmm = Gmm(weights / weights.sum(), gmm.means[keep], gmm.stds[keep])
    return Gmm(gmm.weights, gmm.means, gmm.stds, tuple(trace))


def _infer_decimals(values: np.ndarray) -> int | None:
    """Smallest d in 0..4 such that the column lies on a 10^-d grid."""
    for d in range(5):
        if np.all(np.abs(np.round(values, d) - values) <= 1e-9):
            return d
    return None


@dataclass(frozen=True)
class ColumnEncoder:
    name: str
    style: str  # onehot | zscore | gmm
    offset: int
    width: int
    # Continuous statistics (None for discrete columns).
    mean: float | None = None
    std: float | None = None
    vmin: float | None = None
    vmax: float | None = None
    bin_edges: tuple[float, float, float] | None = None
    decimals: int | None = None
    warn_constant: bool = False
    gmm: Gmm | None = None
    # Discrete: training counts per category.
    counts: tuple[int, ...] | None = None


@dataclass(frozen=True)
class Transformer:
    """Fitted per-column encoders plus the layout of the encoded matrix."""

    schema: Schema
    encoders: tuple[ColumnEncoder, ...]
    mode: str
    width: int

    def encoder(self, name: str) -> ColumnEncoder:
        for e in self.encoders:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def discrete_encoders(self) -> tuple[ColumnEncoder, ...]:
        return tuple(e for e in self.encoders if e.style == "onehot")

    @property
    def continuous_encoders(self) -> tuple[ColumnEncoder, ...]:
        return tuple(e for e in self.encoders if e.style != "onehot")

    def encode(self, rows, rng: np.random.Generator | None = None) -> np.ndarray:
        """Rows to encoded matrix.

        Under gmm encoding the mode for each cell is sampled proportionally
        to responsibility when an rng is given; with rng=None the
        highest-responsibility mode is taken, which keeps scoring paths
        deterministic. Either way candidate modes are restricted to those
        with |alpha| <= 1 when any exist, so round-trips stay exact.
        """
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        n = len(rows)
        out = np.zeros((n, self.width))
        for j, enc in enumerate(self.encoders):
            vals = rows[:, j]
            if enc.style == "onehot":
                idx = vals.astype(int)
                if np.any((idx < 0) | (idx >= enc.width)):
                    raise ValueError(f"category index out of range in column {enc.name!r}")
                out[np.arange(n), enc.offset + idx] = 1.0
            elif enc.style == "zscore":
                out[:, enc.offset] = (vals - enc.mean) / enc.std
            else:
                alpha, mode = _gmm_encode_column(enc.gmm, vals, rng)
                out[:, enc.offset] = alpha
                out[np.arange(n), enc.offset + 1 + mode] = 1.0
        return out

    def decode(self, matrix) -> np.ndarray:
        """Encoded matrix back to rows.

        Discrete blocks resolve by argmax (ties to the lowest index).
        Continuous values are un-normalized, snapped to the decimal grid the
        column was observed on (when one exists), and clipped to the training
        min/max.
        """
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[None, :]
        if matrix.shape[1] != self.width:
            raise ValueError(f"expected width {self.width}, got {matrix.shape[1]}")
        out = np.empty((len(matrix), len(self.encoders)))
        for j, enc in enumerate(self.encoders):
            block = matrix[:, enc.offset : enc.offset + enc.width]
            if enc.style == "onehot":
                out[:, j] = np.argmax(block, axis=1)
            else:
                if enc.style == "zscore":
                    vals = enc.mean + enc.std * block[:, 0]
                else:
                    mode = np.argmax(block[:, 1:], axis=1)
                    alpha = np.clip(block[:, 0], -1.0, 1.0)
                    vals = alpha * 4.0 * enc.gmm.stds[mode] + enc.gmm.means[mode]
                if enc.decimals is not None:
                    vals = np.round(vals, enc.decimals)
                out[:, j] = np.clip(vals, enc.vmin, enc.vmax)
        return out

    def continuous_matrix(self, rows, standardized: bool = True) -> np.ndarray:
        """Continuous columns only, z-scored by training mean/std by default."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        cols = []
        for j, enc in enumerate(self.encoders):
            if enc.style == "onehot":
                continue
            v = rows[:, j]
            cols.append((v - enc.mean) / enc.std if standardized else v)
        return np.column_stack(cols) if cols else np.empty((len(rows), 0))

    def bin_index(self, rows) -> np.ndarray:
        """Quartile-bin index (0..3) for continuous cells; category index
        passed through for discrete cells. Basis of the interpretable rep."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        out = np.empty_like(rows)
        for j, enc in enumerate(self.encoders):
            if enc.style == "onehot":
                out[:, j] = rows[:, j]
            else:
                out[:, j] = np.searchsorted(np.asarray(enc.bin_edges), rows[:, j], side="right")
        return out

    def to_json(self) -> dict:
        encs = []
        for e in self.encoders:
            entry = {
                "name": e.name,
                "style": e.style,
                "offset": e.offset,
                "width": e.width,
                "mean": e.mean,
                "std": e.std,
                "vmin": e.vmin,
                "vmax": e.vmax,
                "bin_edges": list(e.bin_edges) if e.bin_edges else None,
                "decimals": e.decimals,
                "warn_constant": e.warn_constant,
                "counts": list(e.counts) if e.counts else None,
            }
            if e.gmm is not None:
                entry["gmm"] = {
                    "weights": e.gmm.weights.tolist(),
                    "means": e.gmm.means.tolist(),
                    "stds": e.gmm.stds.tolist(),
                }
            encs.append(entry)
        return {
            "version": 1,
            "schema": self.schema.to_json(),
            "mode": self.mode,
            "width": self.width,
            "encoders": encs,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Transformer":
        encoders = []
        for e in doc["encoders"]:
            gmm = None
            if "gmm" in e:
                g = e["gmm"]
                gmm = Gmm(np.array(g["weights"]), np.array(g["means"]), np.array(g["stds"]))
            encoders.append(
                ColumnEncoder(
                    name=e["name"],
                    style=e["style"],
                    offset=e["offset"],
                    width=e["width"],
                    mean=e["mean"],
                    std=e["std"],
                    vmin=e["vmin"],
                    vmax=e["vmax"],
                    bin_edges=tuple(e["bin_edges"]) if e["bin_edges"] else None,
                    decimals=e["decimals"],
                    warn_constant=e["warn_constant"],
                    gmm=gmm,
                    counts=tuple(e["counts"]) if e["counts"] else None,
                )
            )
        return cls(
            schema=Schema.from_json(doc["schema"]),
            encoders=tuple(encoders),
            mode=doc["mode"],
            width=doc["width"],
        )


def _gmm_encode_column(gmm: Gmm, vals: np.ndarray, rng: np.random.Generator | None):
    resp = gmm.responsibilities(vals)
    # Only modes within 4 sigma can represent the value without clipping loss.
    reachable = np.abs(vals[:, None] - gmm.means[None, :]) <= 4.0 * gmm.stds[None, :]
    masked = np.where(reachable, resp, 0.0)
    row_mass = masked.sum(axis=1)
    usable = np.where(row_mass[:, None] > 0.0, masked, resp)
    usable = usable / usable.sum(axis=1, keepdims=True)
    if rng is None:
        mode = np.argmax(usable, axis=1)
    else:
        cum = np.cumsum(usable, axis=1)
        draws = rng.random(len(vals))
        mode = (draws[:, None] < cum).argmax(axis=1)
    alpha = (vals - gmm.means[mode]) / (4.0 * gmm.stds[mode])
    return np.clip(alpha, -1.0, 1.0), mode


def fit_transformer(ds: Dataset, mode: str = "gmm", k: int = 5) -> Transformer:
    """Fit per-column encoders on a dataset's feature columns.

    mode selects the continuous encoding; discrete columns are always
    one-hot. A continuous column whose EM fit fails falls back to zscore
    for that column alone.
    """
    if mode not in ("zscore", "gmm"):
        raise ValueError(f"mode must be 'zscore' or 'gmm', got {mode!r}")
    if mode == "gmm" and k < 1:
        raise ValueError("K must be >= 1 for gmm mode")
    if len(ds) == 0:
        raise ValueError("cannot fit transformer on empty dataset")

    encoders = []
    offset = 0
    for j, col in enumerate(ds.schema.feature_columns):
        vals = ds.rows[:, j]
        if col.kind == DISCRETE:
            width = len(col.categories)
            counts = tuple(
                int(c) for c in np.bincount(vals.astype(int), minlength=width)
            )
            encoders.append(
                ColumnEncoder(col.name, "onehot", offset, width, counts=counts)
            )
        else:
            std = float(np.std(vals))
            warn = std == 0.0
            stats = dict(
                mean=float(np.mean(vals)),
                std=1.0 if warn else std,
                vmin=float(np.min(vals)),
                vmax=float(np.max(vals)),
                bin_edges=tuple(float(q) for q in np.quantile(vals, [0.25, 0.5, 0.75])),
                decimals=_infer_decimals(vals),
                warn_constant=warn,
            )
            style, gmm, width = "zscore", None, 1
            if mode == "gmm":
                try:
                    gmm = fit_gmm(vals, k)
                    if not np.all(np.isfinite(gmm.means)) or not np.all(np.isfinite(gmm.stds)):
                        raise ValueError("non-finite GMM fit")
                    style, width = "gmm", 1 + gmm.k
                except ValueError:
                    gmm = None  # fall back to zscore for this column
            encoders.append(ColumnEncoder(col.name, style, offset, width, gmm=gmm, **stats))
        offset += encoders[-1].width

    return Transformer(schema=ds.schema, encoders=tuple(encoders), mode=mode, width=offset)
