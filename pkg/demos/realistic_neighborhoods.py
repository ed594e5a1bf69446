"""Why gaussian neighborhoods are easy to spot, and what to do about it.

Trains the conditional tabular GAN on the COMPAS-style table, then compares
three neighborhoods around the same instance: gaussian perturbations, raw
GAN samples, and GAN samples kept by the critic filter.  The gaussian cloud
lands far outside the data manifold (fractional counts, impossible
combinations); the GAN cloud tracks the real marginals, and the filter
keeps its more plausible half.

Training takes a couple of minutes at this reduced budget.
"""
from robustlime.benchmarks import builtin_dataset
from robustlime.ctgan import (CtganConfig, build_cond_vector_instance,
                              calibrate_tau, critic_score, ctgan_sample,
                              ctgan_train, filter_samples)
from robustlime.data import append_uncorrelated_feature, split
from robustlime.explain import gaussian_sample
from robustlime.transform import fit_transformer

ds = builtin_dataset("compas", seed=7)
ds = append_uncorrelated_feature(ds, seed=8)
train, test = split(ds, 0.2, seed=9)

transformer = fit_transformer(train, mode="gmm")
gan_part, tau_part = split(train, 0.1, seed=10)

print(f"training the sampler on {len(gan_part)} rows...")
model = ctgan_train(gan_part, transformer, CtganConfig(epochs=120), seed=21)
model = model.with_tau(calibrate_tau(model, tau_part.rows, 50.0))
print(f"calibrated tau = {model.tau:.4f} (median held-out real score)")

x = test.rows[0]
mask = build_cond_vector_instance(transformer, x)
gaussian = gaussian_sample(x, transformer, 1000, seed=1)[1:]
generated = ctgan_sample(model, mask, 1000, seed=2)
scores = critic_score(model, generated)
kept = filter_samples(generated, scores, model.tau)

print(f"\ncritic keeps {len(kept)}/{len(generated)} generated samples")


def describe(tag, rows):
    cols = ("age", "priors_count", "length_of_stay")
    parts = []
    for name in cols:
        j = transformer.schema.feature_index(name)
        parts.append(f"{name} {rows[:, j].mean():6.1f}+-{rows[:, j].std():5.1f}")
    print(f"  {tag:>10}: " + "  ".join(parts))


print("\ncontinuous marginals around the instance:")
describe("real", train.rows)
describe("gaussian", gaussian)
describe("generated", generated)
describe("kept", kept)

print(f"\ncritic scores: generated {scores.mean():.3f} "
      f"vs held-out real median {model.tau:.3f}")
