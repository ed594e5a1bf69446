"""Miniature end-to-end evaluation run.

Executes the full pipeline (data generation, GAN training, both attack
constructions, every setting x explainer cell) on one dataset with budgets
cut far below the defaults, then writes the report bundle to
demo_report/.  The numbers are directionally right but noisy; the default
ExperimentConfig() is the faithful configuration.
"""
from pathlib import Path

from robustlime.experiment import ExperimentConfig, run_experiment, write_report_files

cfg = ExperimentConfig(
    datasets=(ExperimentConfig().datasets[0],),  # compas table only
    master_seed=5,
    n_instances=40,
    ctgan_epochs=60,
    n_samples=600,
    pca_points=150,
)

result = run_experiment(cfg, progress=print)

out = Path(__file__).resolve().parent / "demo_report"
write_report_files(result, out)
print(f"\nreport bundle written to {out}/")

print("\nblack-box cells (sensitive feature in top-1, percent):")
for r in result["report"]["reports"]:
    if r["setting"] == "blackbox":
        print(f"  {r['explainer']:>15}: {r['topk']['1']:5.1f}")
