import numpy as np
import pytest

from robustlime.attack import AttackConfig, train_attack_blackbox
from robustlime.benchmarks import builtin_dataset
from robustlime.ctgan import CtganConfig, calibrate_tau, critic_score, ctgan_train
from robustlime.data import (CONTINUOUS, DISCRETE, Column, Dataset, Schema,
                             append_uncorrelated_feature, split)
from robustlime.explain import (ExplainConfig, Explanation, KernelConfig,
                                NeighborhoodTooSmall, _ctgan_neighborhood,
                                default_sigma, explain_instance, gaussian_sample,
                                kernel_weights, to_interpretable, top_k,
                                weighted_ridge)
from robustlime.models import ForestConfig, biased_classifier, innocuous_model
from robustlime.transform import fit_transformer


@pytest.fixture(scope="module")
def compas():
    ds = builtin_dataset("compas", seed=101)
    ds = append_uncorrelated_feature(ds, seed=7)
    train, test = split(ds, 0.2, seed=11)
    t = fit_transformer(train, "gmm", 5)
    return ds, train, test, t


@pytest.fixture(scope="module")
def toy_gan():
    rng = np.random.default_rng(8)
    n = 1200
    comp = rng.integers(2, size=n)
    c1 = np.where(comp == 0, rng.normal(0, 1, n), rng.normal(10, 1, n))
    d1 = rng.integers(2, size=n)
    schema = Schema((
        Column("c1", CONTINUOUS),
        Column("d1", DISCRETE, ("a", "b")),
        Column("y", DISCRETE, ("n", "p")),
    ), sensitive_feature="d1", label="y")
    ds = Dataset(schema, np.column_stack([c1, d1.astype(float)]), np.zeros(n, dtype=np.int64))
    t = fit_transformer(ds, "gmm", 5)
    model = ctgan_train(ds, t, CtganConfig(epochs=40, hidden=64, noise_dim=32), seed=5)
    model = model.with_tau(calibrate_tau(model, ds.rows[:200], 50.0))
    return ds, t, model


class _Const:
    def predict(self, X):
        return np.ones(len(X), dtype=int)

    def predict_proba(self, X):
        return np.tile([0.3, 0.7], (len(X), 1))


class TestGaussianSample:
    def test_n1_returns_exactly_x(self, compas):
        _, _, test, t = compas
        x = test.rows[0]
        out = gaussian_sample(x, t, 1, seed=0)
        assert np.array_equal(out, x[None, :])

    def test_row0_is_x(self, compas):
        _, _, test, t = compas
        x = test.rows[1]
        out = gaussian_sample(x, t, 500, seed=1)
        assert np.array_equal(out[0], x)

    def test_continuous_means_within_clt_bound(self, compas):
        _, _, test, t = compas
        x = test.rows[2]
        out = gaussian_sample(x, t, 10_001, seed=2)[1:]
        for j, enc in enumerate(t.encoders):
            if enc.style == "onehot":
                continue
            bound = 3.0 * enc.std / np.sqrt(10_000)
            assert abs(out[:, j].mean() - x[j]) <= bound

    def test_discrete_marginals_track_training(self, compas):
        _, train, test, t = compas
        x = test.rows[3]
        out = gaussian_sample(x, t, 10_001, seed=3)[1:]
        for j, enc in enumerate(t.encoders):
            if enc.style != "onehot":
                continue
            train_freq = np.bincount(train.rows[:, j].astype(int), minlength=enc.width)
            train_freq = train_freq / train_freq.sum()
            samp_freq = np.bincount(out[:, j].astype(int), minlength=enc.width) / 10_000
            assert np.max(np.abs(samp_freq - train_freq)) <= 0.03

    def test_bad_n(self, compas):
        _, _, test, t = compas
        with pytest.raises(ValueError):
            gaussian_sample(test.rows[0], t, 0, seed=0)


class TestInterpretable:
    def test_identity_all_ones(self, compas):
        _, _, test, t = compas
        x = test.rows[0]
        assert np.all(to_interpretable(x, x[None, :], t) == 1.0)

    def test_single_category_flip(self, compas):
        _, _, test, t = compas
        x = test.rows[4].copy()
        j = t.schema.feature_index("race")
        z = x.copy()
        z[j] = 1.0 - z[j]
        row = to_interpretable(x, z[None, :], t)[0]
        assert row[j] == 0.0
        assert np.sum(row) == len(x) - 1

    def test_matches_brute_force_bins(self, compas):
        # Independent oracle: recompute quartile edges from the encoder and
        # digitize by hand; discrete features compare category ids.
        _, _, test, t = compas
        rng = np.random.default_rng(9)
        hits = 0
        for _ in range(20):
            x = test.rows[rng.integers(len(test.rows))]
            zs = gaussian_sample(x, t, 51, seed=int(rng.integers(2**31)))[1:]
            got = to_interpretable(x, zs, t)
            for zi, z in enumerate(zs):
                for j, enc in enumerate(t.encoders):
                    if enc.style == "onehot":
                        expect = float(int(z[j]) == int(x[j]))
                    else:
                        edges = np.asarray(enc.bin_edges)
                        bin_z = int(np.sum(edges <= z[j]))
                        bin_x = int(np.sum(edges <= x[j]))
                        expect = float(bin_z == bin_x)
                    assert got[zi, j] == expect
                    hits += 1
        assert hits >= 1000


class TestKernelWeights:
    def test_zero_distance_weight_one(self, compas):
        _, _, test, t = compas
        x = test.rows[0]
        w = kernel_weights(x, x[None, :], KernelConfig(2.0), t)
        assert w[0] == 1.0

    def test_distance_sigma_gives_inverse_e(self, compas):
        _, _, test, t = compas
        x = test.rows[0].copy()
        j = t.schema.feature_index("age")
        enc = t.encoder("age")
        sigma = 1.7
        z = x.copy()
        z[j] = x[j] + sigma * enc.std
        w = kernel_weights(x, z[None, :], KernelConfig(sigma), t)
        assert abs(w[0] - np.exp(-1.0)) <= 1e-12

    def test_matches_encoded_l2_and_monotone(self, compas):
        # Distance oracle built from the standardized continuous matrix and
        # hand-made one-hot blocks rather than the per-column shortcut.
        _, _, test, t = compas
        x = test.rows[5]
        rows = gaussian_sample(x, t, 400, seed=4)
        sigma = default_sigma(rows.shape[1])
        w = kernel_weights(x, rows, KernelConfig(sigma), t)

        def embed(batch):
            parts = [t.continuous_matrix(batch)]
            for enc in t.discrete_encoders:
                j = t.schema.feature_index(enc.name)
                parts.append(np.eye(enc.width)[batch[:, j].astype(int)])
            return np.concatenate(parts, axis=1)

        diff = embed(rows) - embed(x[None, :])
        d2 = np.sum(diff * diff, axis=1)
        assert np.allclose(w, np.exp(-d2 / sigma**2), atol=1e-10)
        order = np.argsort(d2)
        assert np.all(np.diff(w[order]) <= 1e-12)

    def test_x_weight_strict_maximum(self, compas):
        _, _, test, t = compas
        x = test.rows[6]
        rows = gaussian_sample(x, t, 200, seed=5)
        w = kernel_weights(x, rows, KernelConfig(1.0), t)
        assert w[0] == 1.0
        others = w[1:][np.any(rows[1:] != x, axis=1)]
        assert np.all(others < 1.0)
        assert np.all(w > 0.0) and np.all(w <= 1.0)


class TestWeightedRidge:
    def test_exact_recovery(self):
        rng = np.random.default_rng(0)
        Z = rng.integers(2, size=(200, 5)).astype(float)
        beta = np.array([0.5, -1.2, 2.0, 0.0, 0.3])
        y = Z @ beta + 0.25
        coef, b0 = weighted_ridge(Z, y, np.ones(200), alpha=0.0)
        assert np.allclose(coef, beta, atol=1e-8)
        assert abs(b0 - 0.25) <= 1e-8

    def test_huge_alpha_shrinks_to_zero(self):
        rng = np.random.default_rng(1)
        Z = rng.integers(2, size=(100, 4)).astype(float)
        y = rng.normal(size=100)
        coef, _ = weighted_ridge(Z, y, np.ones(100), alpha=1e12)
        assert np.linalg.norm(coef) <= 1e-6

    def test_local_optimality_probe(self):
        rng = np.random.default_rng(2)
        Z = rng.integers(2, size=(150, 6)).astype(float)
        y = rng.normal(size=150)
        w = rng.uniform(0.1, 1.0, size=150)
        coef, b0 = weighted_ridge(Z, y, w, alpha=1.0)

        def obj(beta):
            r = y - Z @ beta - b0
            return float(w @ (r * r) + np.sum(beta * beta))

        base = obj(coef)
        for _ in range(100):
            d = rng.normal(size=6)
            d *= 1e-3 / np.linalg.norm(d)
            assert obj(coef + d) >= base - 1e-12

    def test_singular_alpha0_advises_regularization(self):
        Z = np.ones((50, 3))
        Z[:, 1] = Z[:, 0]
        y = np.arange(50.0)
        with pytest.raises(np.linalg.LinAlgError, match="alpha"):
            weighted_ridge(Z, y, np.ones(50), alpha=0.0)

    def test_agrees_with_augmented_least_squares(self):
        # Second route: sqrt-weighted design with an intercept column and
        # sqrt(alpha) ridge rows, solved by lstsq.
        rng = np.random.default_rng(3)
        for trial in range(10):
            n, p = 80, 5
            Z = rng.integers(2, size=(n, p)).astype(float)
            y = rng.normal(size=n)
            w = rng.uniform(0.05, 1.0, size=n)
            alpha = rng.uniform(0.1, 3.0)
            coef, b0 = weighted_ridge(Z, y, w, alpha)

            sw = np.sqrt(w)
            design = np.concatenate([sw[:, None] * Z, sw[:, None]], axis=1)
            ridge_rows = np.concatenate(
                [np.sqrt(alpha) * np.eye(p), np.zeros((p, 1))], axis=1)
            A = np.vstack([design, ridge_rows])
            b = np.concatenate([sw * y, np.zeros(p)])
            sol = np.linalg.lstsq(A, b, rcond=None)[0]
            assert np.allclose(coef, sol[:p], atol=1e-8)
            assert abs(b0 - sol[p]) <= 1e-8

    def test_too_few_rows(self):
        with pytest.raises(ValueError):
            weighted_ridge(np.ones((1, 2)), [1.0], [1.0], 1.0)


class TestExplainInstance:
    def test_constant_model_zero_weights(self, compas):
        _, _, test, t = compas
        e = explain_instance(_Const(), test.rows[0], "vanilla", ExplainConfig(transformer=t), seed=0)
        assert np.max(np.abs(e.weights)) <= 1e-9
        assert abs(e.intercept - 0.7) <= 1e-9

    def test_clean_biased_model_puts_race_first(self, compas):
        ds, _, test, t = compas
        a = biased_classifier("compas", ds.schema)
        cfg = ExplainConfig(transformer=t)
        hits = sum(
            top_k(explain_instance(a, test.rows[i], "vanilla", cfg, seed=500 + i), 1) == ["race"]
            for i in range(25)
        )
        assert hits >= 24

    def test_blackbox_scaffold_hides_race(self, compas):
        ds, train, test, t = compas
        a = biased_classifier("compas", ds.schema)
        psi = innocuous_model("unrelated_0", ds.schema)
        sub = Dataset(train.schema, train.rows[:2000], train.labels[:2000])
        scaffold, _ = train_attack_blackbox(
            sub, a, psi, AttackConfig(forest=ForestConfig(n_trees=40)), seed=3)
        cfg = ExplainConfig(transformer=t)
        hits = sum(
            top_k(explain_instance(scaffold, test.rows[i], "vanilla", cfg, seed=500 + i), 1) == ["race"]
            for i in range(25)
        )
        assert hits <= 1

    def test_filtered_rows_all_clear_tau(self, toy_gan):
        ds, t, model = toy_gan
        cfg = ExplainConfig(transformer=t, ctgan=model, n_samples=400, n_min=50)
        rows = _ctgan_neighborhood(ds.rows[0], cfg, seed=6, filtered=True)
        assert len(rows) >= 50
        assert np.all(critic_score(model, rows) >= model.tau)

    def test_filtered_neighborhood_too_small(self, toy_gan):
        ds, t, model = toy_gan
        starved = model.with_tau(1e9)
        cfg = ExplainConfig(transformer=t, ctgan=starved, n_samples=300, n_min=50)
        with pytest.raises(NeighborhoodTooSmall) as err:
            explain_instance(_Const(), ds.rows[0], "ctgan_filtered", cfg, seed=7)
        assert err.value.n_kept == 0

    def test_ctgan_sampler_requires_model(self, compas):
        _, _, test, t = compas
        with pytest.raises(ValueError):
            explain_instance(_Const(), test.rows[0], "ctgan", ExplainConfig(transformer=t), seed=0)

    def test_unknown_sampler(self, compas):
        _, _, test, t = compas
        with pytest.raises(ValueError):
            explain_instance(_Const(), test.rows[0], "quantum", ExplainConfig(transformer=t), seed=0)

    def test_deterministic_per_seed(self, toy_gan):
        ds, t, model = toy_gan
        cfg = ExplainConfig(transformer=t, ctgan=model, n_samples=300, n_min=50)
        for sampler in ("vanilla", "ctgan"):
            e1 = explain_instance(_Const(), ds.rows[1], sampler, cfg, seed=11)
            e2 = explain_instance(_Const(), ds.rows[1], sampler, cfg, seed=11)
            assert np.array_equal(e1.weights, e2.weights)
            assert e1.intercept == e2.intercept

    def test_n_used_reflects_sampler(self, toy_gan):
        ds, t, model = toy_gan
        cfg = ExplainConfig(transformer=t, ctgan=model, n_samples=300, n_min=50)
        assert explain_instance(_Const(), ds.rows[0], "vanilla", cfg, seed=0).n_used == 300
        e = explain_instance(_Const(), ds.rows[0], "ctgan_filtered", cfg, seed=0)
        assert 50 <= e.n_used <= 300


class TestTopK:
    def _expl(self, names, weights):
        return Explanation(feature_names=tuple(names), weights=np.asarray(weights, float),
                           intercept=0.0, sigma=1.0, sampler="vanilla", n_used=10)

    def test_absolute_value_governs(self):
        e = self._expl(("race", "age"), [0.9, -0.95])
        assert top_k(e, 1) == ["age"]

    def test_full_k_is_permutation(self):
        e = self._expl(("a", "b", "c"), [0.1, -0.5, 0.3])
        assert sorted(top_k(e, 3)) == ["a", "b", "c"]

    def test_matches_brute_force_sort(self):
        rng = np.random.default_rng(12)
        names = tuple(f"f{i}" for i in range(7))
        for _ in range(1000):
            w = np.round(rng.normal(size=7), 3)
            e = self._expl(names, w)
            expect = [names[i] for i in sorted(range(7), key=lambda i: (-abs(w[i]), i))]
            assert top_k(e, 7) == expect

    def test_k_out_of_range(self):
        e = self._expl(("a", "b"), [1.0, 2.0])
        with pytest.raises(ValueError):
            top_k(e, 0)
        with pytest.raises(ValueError):
            top_k(e, 3)


class TestSerialization:
    def test_json_round_trip(self, compas):
        _, _, test, t = compas
        e = explain_instance(_Const(), test.rows[0], "vanilla",
                             ExplainConfig(transformer=t), seed=0, instance_id=17)
        doc = e.to_json()
        back = Explanation.from_json(doc, e.feature_names)
        assert np.allclose(back.weights, e.weights)
        assert back.instance_id == 17
        mags = [abs(a["weight"]) for a in doc["attributions"]]
        assert mags == sorted(mags, reverse=True)
