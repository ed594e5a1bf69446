"""Predictive models for the threat scenario: a from-scratch random forest
(black-box classifier and OOD critic), fixed biased rules per dataset, the
innocuous stand-in, and the routing scaffold."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import Schema

RULE_KINDS = ("compas_race", "german_gender", "communities_whitepop", "unrelated_threshold")


@dataclass(frozen=True)
class RuleModel:
    """Two-class rule: predicts class 1 when its predicate fires.

    Kinds: compas_race (race equals category), german_gender (gender equals
    category), communities_whitepop (column < threshold),
    unrelated_threshold (column > threshold).
    """

    kind: str
    column: str
    schema: Schema
    threshold: float | None = None
    category: str | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        if self.column not in self.schema.feature_names:
            raise ValueError(f"rule column {self.column!r} not in schema")
        if self.kind in ("compas_race", "german_gender"):
            cats = self.schema.column(self.column).categories or ()
            if self.category not in cats:
                raise ValueError(f"rule needs a category from {cats}")
        elif self.threshold is None:
            raise ValueError("rule needs a threshold")

    def _fires(self, rows: np.ndarray) -> np.ndarray:
        j = self.schema.feature_index(self.column)
        v = rows[:, j]
        if self.kind in ("compas_race", "german_gender"):
            cat_idx = self.schema.column(self.column).categories.index(self.category)
            return v == cat_idx
        if self.kind == "communities_whitepop":
            return v < self.threshold
        return v > self.threshold  # unrelated_threshold

    def predict(self, rows) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return self._fires(rows).astype(int)

    def predict_proba(self, rows) -> np.ndarray:
        labels = self.predict(rows)
        out = np.zeros((len(labels), 2))
        out[np.arange(len(labels)), labels] = 1.0
        return out

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "column": self.column,
            "threshold": self.category if self.threshold is None else self.threshold,
        }


def rule_from_json(doc: dict, schema: Schema) -> RuleModel:
    thr = doc["threshold"]
    if isinstance(thr, str):
        return RuleModel(doc["kind"], doc["column"], schema, category=thr)
    return RuleModel(doc["kind"], doc["column"], schema, threshold=float(thr))


def biased_classifier(dataset_kind: str, schema: Schema) -> RuleModel:
    """The discriminatory rule each benchmark's audit targets."""
    if dataset_kind == "compas":
        return RuleModel("compas_race", "race", schema, category="African-American")
    if dataset_kind == "german":
        return RuleModel("german_gender", "gender", schema, category="Male")
    if dataset_kind == "communities":
        return RuleModel("communities_whitepop", "racePctWhite", schema, threshold=0.5)
    raise ValueError(f"unknown dataset kind {dataset_kind!r}")


def innocuous_model(column: str, schema: Schema) -> RuleModel:
    """Predicts from the appended coin-flip column only."""
    return RuleModel("unrelated_threshold", column, schema, threshold=0.5)


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    proba: np.ndarray  # (n_nodes, n_classes)


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    n_classes: int
    n_features: int


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    min_leaf: int = 2
    max_depth: int | None = None


def _grow_tree(X, y, n_classes, min_leaf, max_depth, rng):
    n_feat_split = max(1, int(np.ceil(np.sqrt(X.shape[1]))))
    feature, threshold, left, right, proba = [], [], [], [], []

    def leaf(idx):
        counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        proba.append(counts / counts.sum())
        return len(feature) - 1

    def build(idx, depth):
        n = len(idx)
        labels = y[idx]
        if n < 2 * min_leaf or (max_depth is not None and depth >= max_depth) or np.all(labels == labels[0]):
            return leaf(idx)

        counts_parent = np.bincount(labels, minlength=n_classes).astype(np.float64)
        gini_parent = 1.0 - np.sum((counts_parent / n) ** 2)
        feats = np.sort(rng.choice(X.shape[1], size=min(n_feat_split, X.shape[1]), replace=False))
        best = None  # (gain, feat, threshold, order, split_pos)
        for f in feats:
            v = X[idx, f]
            order = np.argsort(v, kind="stable")
            vs = v[order]
            ys = labels[order]
            # class counts left of each cut position i (first i rows go left)
            onehot = np.zeros((n, n_classes))
            onehot[np.arange(n), ys] = 1.0
            cum = np.cumsum(onehot, axis=0)
            pos = np.arange(min_leaf, n - min_leaf + 1)
            pos = pos[vs[pos - 1] < vs[pos]]
            if len(pos) == 0:
                continue
            lc = cum[pos - 1]
            rc = counts_parent[None, :] - lc
            nl = pos.astype(np.float64)
            nr = n - nl
            gl = 1.0 - np.sum((lc / nl[:, None]) ** 2, axis=1)
            gr = 1.0 - np.sum((rc / nr[:, None]) ** 2, axis=1)
            gain = gini_parent - (nl * gl + nr * gr) / n
            b = int(np.argmax(gain))
            if gain[b] > 1e-12 and (best is None or gain[b] > best[0] + 1e-15):
                thr = 0.5 * (vs[pos[b] - 1] + vs[pos[b]])
                best = (gain[b], f, thr, order, pos[b])
        if best is None:
            return leaf(idx)

        _, f, thr, order, split = best
        node = len(feature)
        feature.append(f)
        threshold.append(thr)
        left.append(-1)
        right.append(-1)
        proba.append(np.zeros(n_classes))
        li = build(idx[order[:split]], depth + 1)
        ri = build(idx[order[split:]], depth + 1)
        left[node] = li
        right[node] = ri
        return node

    build(np.arange(len(y)), 0)
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(proba, dtype=np.float64),
    )


def rf_train(X, y, cfg: ForestConfig = ForestConfig(), seed: int = 0) -> Forest:
    """Bootstrap-bagged CART forest, Gini splits, sqrt(d) features per node."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to train")
    n_classes = int(y.max()) + 1
    trees = []
    for ss in np.random.SeedSequence(seed).spawn(cfg.n_trees):
        rng = np.random.default_rng(ss)
        boot = rng.integers(len(y), size=len(y))
        trees.append(_grow_tree(X[boot], y[boot], n_classes, cfg.min_leaf, cfg.max_depth, rng))
    return Forest(tuple(trees), n_classes, X.shape[1])


def rf_predict(forest: Forest, rows) -> tuple[np.ndarray, np.ndarray]:
    """(labels, probabilities); probability = mean of leaf distributions."""
    X = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    n = len(X)
    acc = np.zeros((n, forest.n_classes))
    rows_idx = np.arange(n)
    for tree in forest.trees:
        node = np.zeros(n, dtype=np.int64)
        while True:
            f = tree.feature[node]
            active = f >= 0
            if not np.any(active):
                break
            na = node[active]
            go_left = X[rows_idx[active], f[active]] <= tree.threshold[na]
            node[active] = np.where(go_left, tree.left[na], tree.right[na])
        acc += tree.proba[node]
    proba = acc / len(forest.trees)
    return np.argmax(proba, axis=1), proba


def forest_to_json(forest: Forest) -> dict:
    return {
        "version": 1,
        "n_classes": forest.n_classes,
        "n_features": forest.n_features,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "proba": t.proba.tolist(),
            }
            for t in forest.trees
        ],
    }


def forest_from_json(doc: dict) -> Forest:
    if doc.get("version") != 1:
        raise ValueError(f"unsupported forest version {doc.get('version')!r}")
    trees = tuple(
        Tree(
            np.array(t["feature"], dtype=np.int64),
            np.array(t["threshold"], dtype=np.float64),
            np.array(t["left"], dtype=np.int64),
            np.array(t["right"], dtype=np.int64),
            np.array(t["proba"], dtype=np.float64),
        )
        for t in doc["trees"]
    )
    return Forest(trees, int(doc["n_classes"]), int(doc["n_features"]))


class ForestModel:
    """Thin predict/predict_proba wrapper so forests share the model protocol."""

    def __init__(self, forest: Forest):
        self.forest = forest

    def predict(self, rows) -> np.ndarray:
        return rf_predict(self.forest, rows)[0]

    def predict_proba(self, rows) -> np.ndarray:
        return rf_predict(self.forest, rows)[1]


@dataclass(frozen=True)
class Scaffold:
    """Adversarial wrapper: routes critic-approved rows to the biased model,
    everything else to the innocuous one. Routing is c(x) >= 0.5 with c the
    critic's probability of the 'real' class (index 1), inclusive."""

    biased: RuleModel
    innocuous: RuleModel
    critic: Forest
    threshold: float = 0.5

    def routing(self, rows) -> np.ndarray:
        _, proba = rf_predict(self.critic, np.atleast_2d(np.asarray(rows, dtype=np.float64)))
        return proba[:, 1] >= self.threshold

    def predict(self, rows) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        use_biased = self.routing(rows)
        out = self.innocuous.predict(rows)
        if np.any(use_biased):
            out[use_biased] = self.biased.predict(rows[use_biased])
        return out

    def predict_proba(self, rows) -> np.ndarray:
        labels = self.predict(rows)
        out = np.zeros((len(labels), 2))
        out[np.arange(len(labels)), labels] = 1.0
        return out


def scaffold_predict(s: Scaffold, rows) -> np.ndarray:
    return s.predict(rows)
