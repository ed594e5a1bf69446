"""A first explanation: what drives a biased risk score?

Builds the COMPAS-style table, explains one defendant's risk prediction
with the vanilla gaussian sampler, and prints the ranked attributions.
The planted rule keys on race alone, and the explanation should say so.

Runs in a few seconds.
"""
import numpy as np

from robustlime.benchmarks import builtin_dataset
from robustlime.data import append_uncorrelated_feature, split
from robustlime.explain import ExplainConfig, explain_instance, top_k
from robustlime.models import biased_classifier
from robustlime.transform import fit_transformer

ds = builtin_dataset("compas", seed=7)
ds = append_uncorrelated_feature(ds, seed=8)
train, test = split(ds, 0.2, seed=9)

model = biased_classifier("compas", ds.schema)
transformer = fit_transformer(train, mode="gmm")

x = test.rows[0]
print("instance:")
for name, value in zip(ds.schema.feature_names, x):
    print(f"  {name:>16} = {value:g}")
print(f"model prediction: class {model.predict(x[None, :])[0]}")

cfg = ExplainConfig(transformer=transformer)
explanation = explain_instance(model, x, "vanilla", cfg, seed=0)

print("\nattributions (largest magnitude first):")
for item in explanation.to_json()["attributions"]:
    print(f"  {item['feature']:>16}  {item['weight']:+.4f}")

print(f"\ntop-1 feature: {top_k(explanation, 1)[0]}")
