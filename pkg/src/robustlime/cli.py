"""Command-line entry point.

Subcommands cover the whole pipeline: generate benchmark tables
(make-data), train the defender's conditional GAN (train-ctgan), mount the
scaffolding attack (attack), explain single instances (explain), and run
the full evaluation grid (reproduce).  Every command takes --seed and is
deterministic end to end.  Exit codes: 0 success, 2 usage or configuration
error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attack import (AttackConfig, load_scaffold, save_scaffold,
                     train_attack_blackbox, train_attack_whitebox)
from .benchmarks import BUILTIN_NAMES, builtin_dataset, write_builtin
from .ctgan import (CtganConfig, CtganModel, calibrate_tau, ctgan_train,
                    load_ctgan, save_ctgan)
from .data import (Dataset, SchemaError, ValidationError,
                   append_uncorrelated_feature, load_dataset, save_dataset,
                   save_schema, split)
from .experiment import (ExperimentConfig, ExperimentError, run_experiment,
                         write_report_files)
from .explain import SAMPLERS, ExplainConfig, explain_instance
from .models import biased_classifier, innocuous_model
from .transform import fit_transformer

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    """Configuration problem: bad flag value, missing file, bad combination."""


class _ConstantModel:
    """Always predicts class 0; handy for smoke-testing the explainer."""

    def predict(self, rows):
        return np.zeros(len(np.atleast_2d(rows)), dtype=np.int64)

    def predict_proba(self, rows):
        n = len(np.atleast_2d(rows))
        out = np.zeros((n, 2))
        out[:, 0] = 1.0
        return out


def _load_data(args) -> Dataset:
    return load_dataset(args.data, args.schema)


def _resolve_blackbox(spec: str, ds: Dataset):
    """--blackbox accepts 'constant', 'rule:<kind>', or a scaffold bundle dir."""
    if spec == "constant":
        return _ConstantModel()
    if spec.startswith("rule:"):
        kind = spec.split(":", 1)[1]
        return biased_classifier(kind, ds.schema)
    path = Path(spec)
    if path.is_dir():
        scaffold, _ = load_scaffold(path, ds.schema)
        return scaffold
    raise UsageError(
        f"--blackbox {spec!r} is neither 'constant', 'rule:<kind>', "
        f"nor a scaffold bundle directory"
    )


def cmd_make_data(args) -> int:
    if args.append_unrelated:
        ds = builtin_dataset(args.name, seed=args.seed)
        ds = append_uncorrelated_feature(ds, seed=args.seed + 1)
        save_dataset(ds, args.out_data)
        save_schema(ds.schema, args.out_schema)
    else:
        write_builtin(args.name, args.out_data, args.out_schema, seed=args.seed)
    print(f"wrote {args.out_data} and {args.out_schema}")
    return EXIT_OK


def cmd_train_ctgan(args) -> int:
    ds = _load_data(args)
    if not 0.0 <= args.tau_percentile <= 100.0:
        raise UsageError("--tau-percentile must be within [0, 100]")
    # Hold a slice of the data out of GAN training so the filter threshold
    # is calibrated on rows the critic never saw.
    fit_part, tau_part = split(ds, 0.1, seed=args.seed)
    transformer = fit_transformer(fit_part, mode="gmm")
    cfg = CtganConfig(epochs=args.epochs)
    model = ctgan_train(fit_part, transformer, cfg, seed=args.seed)
    tau = calibrate_tau(model, tau_part.rows, args.tau_percentile)
    model = model.with_tau(tau)
    save_ctgan(model, args.out)
    c_loss, g_loss = model.training_log[-1]
    print(f"trained {args.epochs} epochs on {len(fit_part)} rows")
    print(f"final critic loss {c_loss:.4f}, final generator loss {g_loss:.4f}")
    print(f"tau (p{args.tau_percentile:g} of held-out real scores) = {tau:.6f}")
    print(f"bundle written to {args.out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    ds = _load_data(args)
    if not 0 <= args.instance < len(ds):
        raise UsageError(f"--instance {args.instance} out of range [0, {len(ds)})")
    if not 1 <= args.k <= ds.n_features:
        raise UsageError(f"--k {args.k} out of range [1, {ds.n_features}]")
    model = _resolve_blackbox(args.blackbox, ds)

    ctgan = None
    if args.sampler != "vanilla":
        if args.model_bundle is None:
            raise UsageError(f"--sampler {args.sampler} requires --model-bundle")
        ctgan = load_ctgan(args.model_bundle)
        if args.sampler == "ctgan_filtered" and ctgan.tau is None:
            raise UsageError("bundle has no calibrated tau; retrain with train-ctgan")
        transformer = ctgan.transformer
    else:
        transformer = fit_transformer(ds, mode="gmm")

    ecfg = ExplainConfig(transformer=transformer, ctgan=ctgan)
    x = ds.rows[args.instance]
    e = explain_instance(model, x, args.sampler, ecfg, seed=args.seed,
                         instance_id=args.instance)
    doc = e.to_json()
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_attack(args) -> int:
    ds = _load_data(args)
    if args.unrelated_column not in ds.schema.feature_names:
        raise UsageError(
            f"column {args.unrelated_column!r} not in data; generate it with "
            f"make-data --append-unrelated"
        )
    a = biased_classifier(args.rule_kind, ds.schema)
    psi = innocuous_model(args.unrelated_column, ds.schema)
    cfg = AttackConfig()
    if args.setting == "whitebox":
        if args.defender_bundle is None:
            raise UsageError("--setting whitebox requires --defender-bundle")
        defender = load_ctgan(args.defender_bundle)
        scaffold, meta = train_attack_whitebox(ds, a, psi, defender, cfg,
                                               seed=args.seed)
    else:
        scaffold, meta = train_attack_blackbox(ds, a, psi, cfg, seed=args.seed)
    save_scaffold(scaffold, meta, args.out)
    print(f"{args.setting} scaffold written to {args.out}")
    print(f"critic held-out accuracy {meta.critic_holdout_accuracy:.4f}")
    if meta.weak_critic:
        print("warning: critic accuracy below 0.55; the scaffold will route poorly")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = ExperimentConfig.from_json(doc)
    if args.jobs is not None:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg = ExperimentConfig.from_json({**cfg.to_json(), "jobs": args.jobs})
    result = run_experiment(cfg, progress=lambda msg: print(msg, flush=True))
    write_report_files(result, args.out)
    print(f"report written to {Path(args.out) / 'report.json'}")
    failures = result["report"]["failures"]
    if failures:
        for f in failures:
            print(f"FAILED {f['dataset']}: {f['error']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="robustlime",
        description="Explainer robustness toolkit: samplers, attacks, evaluation.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    mk = sub.add_parser("make-data", help="write a built-in benchmark table")
    mk.add_argument("--name", required=True, choices=BUILTIN_NAMES)
    mk.add_argument("--out-data", required=True)
    mk.add_argument("--out-schema", required=True)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--append-unrelated", action="store_true",
                    help="also append the uncorrelated coin-flip column")
    mk.set_defaults(func=cmd_make_data)

    tc = sub.add_parser("train-ctgan", help="train and serialize the sampler GAN")
    tc.add_argument("--data", required=True)
    tc.add_argument("--schema", required=True)
    tc.add_argument("--out", required=True)
    tc.add_argument("--epochs", type=int, default=300)
    tc.add_argument("--seed", type=int, default=0)
    tc.add_argument("--tau-percentile", type=float, default=50.0)
    tc.set_defaults(func=cmd_train_ctgan)

    ex = sub.add_parser("explain", help="explain one instance of a model")
    ex.add_argument("--data", required=True)
    ex.add_argument("--schema", required=True)
    ex.add_argument("--blackbox", required=True,
                    help="'constant', 'rule:<kind>' with kind in "
                         "(compas, german, communities), or a scaffold "
                         "bundle directory")
    ex.add_argument("--instance", type=int, required=True)
    ex.add_argument("--sampler", choices=SAMPLERS, default="vanilla")
    ex.add_argument("--k", type=int, default=3)
    ex.add_argument("--model-bundle", default=None,
                    help="ctgan bundle directory (required for ctgan samplers)")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--out", default=None)
    ex.set_defaults(func=cmd_explain)

    at = sub.add_parser("attack", help="build a scaffold against an explainer")
    at.add_argument("--data", required=True)
    at.add_argument("--schema", required=True)
    at.add_argument("--setting", choices=("blackbox", "whitebox"), required=True)
    at.add_argument("--rule-kind", required=True,
                    choices=("compas", "german", "communities"),
                    help="which biased rule the scaffold hides")
    at.add_argument("--unrelated-column", default="unrelated_0")
    at.add_argument("--defender-bundle", default=None,
                    help="defender's ctgan bundle (whitebox only)")
    at.add_argument("--out", required=True)
    at.add_argument("--seed", type=int, default=0)
    at.set_defaults(func=cmd_attack)

    rp = sub.add_parser("reproduce", help="run the full evaluation grid")
    rp.add_argument("--config", required=True)
    rp.add_argument("--out", required=True)
    rp.add_argument("--jobs", type=int, default=None,
                    help="parallel workers for per-instance explanations")
    rp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, SchemaError, ValidationError, ExperimentError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, KeyError) as exc:
        print(f"error: bad configuration: {exc!r}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - runtime failure contract
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
