"""Scaffolding adversary construction.

The attacker trains an OOD critic to separate real rows from explainer
perturbations, then wraps the biased model so detected perturbations are
answered by the innocuous model. Black-box attackers can only assume the
standard Gaussian perturbation strategy; white-box attackers draw critic
training data from the defender's own generator.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .ctgan import CtganModel, build_cond_vector_instance, ctgan_sample
from .data import Dataset, Schema
from .explain import gaussian_sample
from .models import (
    Forest,
    ForestConfig,
    RuleModel,
    Scaffold,
    forest_from_json,
    forest_to_json,
    rf_predict,
    rf_train,
    rule_from_json,
)
from .transform import Transformer, fit_transformer

WEAK_CRITIC_ACCURACY = 0.55


@dataclass(frozen=True)
class AttackConfig:
    perturbations_per_row: int = 1
    holdout_fraction: float = 0.2
    forest: ForestConfig = ForestConfig()


@dataclass(frozen=True)
class AttackMeta:
    setting: str
    seed: int
    critic_holdout_accuracy: float
    weak_critic: bool


def build_ood_training_set(real_rows, perturb, perturbations_per_row: int, seed: int):
    """Real rows labeled 1, `perturbations_per_row` sampler outputs per real
    row labeled 0, shuffled deterministically.

    `perturb(row, count, seed)` must return `count` synthetic rows.
    """
    real_rows = np.atleast_2d(np.asarray(real_rows, dtype=np.float64))
    if len(real_rows) == 0:
        raise ValueError("need at least one real row")
    rng = np.random.default_rng(seed)
    fakes = np.vstack(
        [perturb(row, perturbations_per_row, int(rng.integers(2**31))) for row in real_rows]
    )
    rows = np.vstack([real_rows, fakes])
    labels = np.concatenate([np.ones(len(real_rows), dtype=int), np.zeros(len(fakes), dtype=int)])
    order = rng.permutation(len(rows))
    return rows[order], labels[order]


def _train_critic(rows, labels, cfg: AttackConfig, seed: int):
    rng = np.random.default_rng(seed)
    n = len(rows)
    order = rng.permutation(n)
    n_holdout = max(1, int(round(cfg.holdout_fraction * n)))
    hold, fit = order[:n_holdout], order[n_holdout:]
    forest = rf_train(rows[fit], labels[fit], cfg.forest, seed=int(rng.integers(2**31)))
    pred, _ = rf_predict(forest, rows[hold])
    return forest, float(np.mean(pred == labels[hold]))


def _assemble(ds, biased, innocuous, perturb, cfg, seed, setting):
    rows, labels = build_ood_training_set(ds.rows, perturb, cfg.perturbations_per_row, seed)
    critic, acc = _train_critic(rows, labels, cfg, seed)
    scaffold = Scaffold(biased=biased, innocuous=innocuous, critic=critic)
    meta = AttackMeta(
        setting=setting,
        seed=seed,
        critic_holdout_accuracy=acc,
        weak_critic=acc < WEAK_CRITIC_ACCURACY,
    )
    return scaffold, meta


def train_attack_blackbox(ds: Dataset, biased: RuleModel, innocuous: RuleModel,
                          cfg: AttackConfig = AttackConfig(), seed: int = 0):
    """Critic trained against unit-Gaussian perturbations (the standard
    neighborhood strategy); never sees the defender's generator."""
    t = fit_transformer(ds, mode="zscore")

    def perturb(row, count, s):
        return gaussian_sample(row, t, count + 1, s)[1:]

    return _assemble(ds, biased, innocuous, perturb, cfg, seed, "blackbox")


def train_attack_whitebox(ds: Dataset, biased: RuleModel, innocuous: RuleModel,
                          defender_ctgan: CtganModel, cfg: AttackConfig = AttackConfig(),
                          seed: int = 0):
    """Critic trained on the defender's own conditioned samples: for each
    real row the generator is conditioned on that row's categories, exactly
    mirroring explanation-time sampling."""
    t = defender_ctgan.transformer

    def perturb(row, count, s):
        return ctgan_sample(defender_ctgan, build_cond_vector_instance(t, row), count, s)

    return _assemble(ds, biased, innocuous, perturb, cfg, seed, "whitebox")


def save_scaffold(s: Scaffold, meta: AttackMeta, bundle_dir) -> None:
    os.makedirs(bundle_dir, exist_ok=True)
    with open(os.path.join(bundle_dir, "critic.json"), "w", encoding="utf-8") as fh:
        json.dump(forest_to_json(s.critic), fh)
        fh.write("\n")
    for name, rule in (("biased.json", s.biased), ("innocuous.json", s.innocuous)):
        with open(os.path.join(bundle_dir, name), "w", encoding="utf-8") as fh:
            json.dump(rule.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    doc = {
        "setting": meta.setting,
        "seed": meta.seed,
        "critic_holdout_accuracy": meta.critic_holdout_accuracy,
        "weak_critic": meta.weak_critic,
    }
    with open(os.path.join(bundle_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_scaffold(bundle_dir, schema: Schema):
    with open(os.path.join(bundle_dir, "critic.json"), "r", encoding="utf-8") as fh:
        critic = forest_from_json(json.load(fh))
    rules = {}
    for name in ("biased.json", "innocuous.json"):
        with open(os.path.join(bundle_dir, name), "r", encoding="utf-8") as fh:
            rules[name] = rule_from_json(json.load(fh), schema)
    with open(os.path.join(bundle_dir, "meta.json"), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    meta = AttackMeta(
        setting=doc["setting"],
        seed=int(doc["seed"]),
        critic_holdout_accuracy=float(doc["critic_holdout_accuracy"]),
        weak_critic=bool(doc["weak_critic"]),
    )
    return Scaffold(biased=rules["biased.json"], innocuous=rules["innocuous.json"], critic=critic), meta
