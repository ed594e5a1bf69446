"""Conditional tabular GAN: cond-vector machinery, WGAN-GP training with
training-by-sampling, instance-conditioned generation, and critic-based
sample filtering.

The critic is restricted to piecewise-linear activations so the gradient
penalty's parameter gradient can be computed in closed form (second
derivatives of the activations vanish almost everywhere, so one extra
adjoint sweep over the linearized network is exact).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .data import Dataset
from .transform import Transformer

DEFAULT_NOISE_DIM = 128
DEFAULT_LAMBDA = 10.0


class EmptyFilterResult(RuntimeError):
    """Every sample fell below the filter threshold; caller should resample."""


@dataclass(frozen=True)
class CtganConfig:
    epochs: int = 300
    batch_size: int = 500
    noise_dim: int = DEFAULT_NOISE_DIM
    lam: float = DEFAULT_LAMBDA
    critic_steps: int = 1
    hidden: int = 256
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    # Softmax temperature of the generator's category and mode blocks. Cooling
    # below 1.0 saturates the blocks toward one corner per instance condition,
    # which collapses mode diversity and kills the small off-condition rate
    # that argmax crossings otherwise provide; leave at 1.0 unless you want a
    # deliberately sharpened generator.
    head_temperature: float = 1.0


@dataclass(frozen=True)
class CtganModel:
    generator: nn.MlpParams
    critic: nn.MlpParams
    transformer: Transformer
    noise_dim: int
    lam: float
    tau: float | None = None
    seed: int | None = None
    epochs: int | None = None
    training_log: tuple[tuple[float, float], ...] = field(repr=False, default=())

    def with_tau(self, tau: float) -> "CtganModel":
        return replace(self, tau=tau)


def cond_layout(t: Transformer) -> tuple[tuple[str, int, int], ...]:
    """(column name, offset within cond vector, width) per discrete column."""
    layout = []
    off = 0
    for enc in t.discrete_encoders:
        layout.append((enc.name, off, enc.width))
        off += enc.width
    return tuple(layout)


def cond_width(t: Transformer) -> int:
    return sum(w for _, _, w in cond_layout(t))


def build_cond_vector_instance(t: Transformer, x) -> np.ndarray:
    """Mask with one bit set per discrete block, at the instance's category."""
    x = np.asarray(x, dtype=np.float64).ravel()
    bits = np.zeros(cond_width(t))
    feature_pos = {name: j for j, name in enumerate(t.schema.feature_names)}
    for name, off, width in cond_layout(t):
        cat = int(x[feature_pos[name]])
        if not 0 <= cat < width:
            raise ValueError(f"category index {cat} out of range for column {name!r}")
        bits[off + cat] = 1.0
    return bits


def _log_freq_probs(counts: np.ndarray) -> np.ndarray:
    p = np.log1p(counts.astype(np.float64))
    total = p.sum()
    if total == 0.0:
        # All categories unseen; fall back to uniform (cannot happen for a
        # column fitted on non-empty data, kept as a guard).
        return np.full(len(p), 1.0 / len(p))
    return p / total


def sample_training_condition(t: Transformer, rng: np.random.Generator):
    """Pick a discrete column uniformly, then a category with probability
    proportional to log(1 + training frequency). Returns (bits, column
    index among discrete columns, category index)."""
    layout = cond_layout(t)
    if not layout:
        raise ValueError("dataset has no discrete columns to condition on")
    encs = t.discrete_encoders
    col = int(rng.integers(len(layout)))
    probs = _log_freq_probs(np.asarray(encs[col].counts))
    cat = int(rng.choice(len(probs), p=probs))
    bits = np.zeros(sum(w for _, _, w in layout))
    bits[layout[col][1] + cat] = 1.0
    return bits, col, cat


def _critic_derivs(critic: nn.MlpParams, cache: nn.Cache) -> list[np.ndarray]:
    derivs = []
    for layer, pre in zip(critic.layers, cache.pre):
        if not isinstance(layer.activation, str) or layer.activation == "tanh":
            raise ValueError("gradient penalty requires a piecewise-linear critic")
        derivs.append(nn.activation_deriv(layer.activation, pre))
    return derivs


def gradient_penalty(critic: nn.MlpParams, x_real, x_fake, cond, lam: float, rng: np.random.Generator):
    """Penalty lam * mean((||grad_xhat d(xhat, m)||_2 - 1)^2) and its exact
    gradient w.r.t. the critic parameters.

    xhat interpolates real and fake encodings with one uniform u per row;
    the norm is taken over the xhat coordinates only, not the condition
    bits. Bias gradients of the penalty are identically zero for
    piecewise-linear critics.
    """
    x_real = np.asarray(x_real, dtype=np.float64)
    x_fake = np.asarray(x_fake, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if x_real.shape != x_fake.shape or len(cond) != len(x_real):
        raise ValueError("real/fake/cond batch shapes disagree")
    batch, data_width = x_real.shape

    u = rng.random((batch, 1))
    xhat = u * x_real + (1.0 - u) * x_fake
    xin = np.concatenate([xhat, cond], axis=1)
    _, cache = nn.forward(critic, xin)
    derivs = _critic_derivs(critic, cache)

    # Input-gradient pass: delta_l = dL/d(pre_l) for L = sum of outputs.
    n_layers = len(critic.layers)
    deltas = [None] * n_layers
    g = np.ones_like(cache.pre[-1])
    for i in range(n_layers - 1, -1, -1):
        deltas[i] = g * derivs[i]
        g = deltas[i] @ critic.layers[i].weight
    grad_full = g  # (batch, data_width + cond_width)
    grad_x = grad_full[:, :data_width]

    norms = np.sqrt(np.sum(grad_x * grad_x, axis=1))
    penalty = lam * float(np.mean((norms - 1.0) ** 2))

    # Adjoint of the penalty w.r.t. grad_x; rows with zero norm contribute 0.
    coef = np.zeros(batch)
    nz = norms > 0.0
    coef[nz] = (2.0 * lam / batch) * (norms[nz] - 1.0) / norms[nz]
    gbar = np.zeros_like(grad_full)
    gbar[:, :data_width] = coef[:, None] * grad_x

    # Second sweep through the linearized network: activation derivatives are
    # locally constant, so this yields the exact parameter gradient a.e.
    grads = []
    c = gbar
    for i in range(n_layers):
        layer = critic.layers[i]
        grads.append((deltas[i].T @ c, np.zeros_like(layer.bias)))
        c = (c @ layer.weight.T) * derivs[i]
    return penalty, grads


def _add_grads(a, b):
    return [(ga[0] + gb[0], ga[1] + gb[1]) for ga, gb in zip(a, b)]


def _draw_conditioned_batch(ds: Dataset, t: Transformer, strata, batch: int, rng: np.random.Generator):
    """Training-by-sampling: per batch row, draw a condition and then a real
    row matching the conditioned category. Returns (real rows, cond bits,
    discrete column index, category index)."""
    layout = cond_layout(t)
    encs = t.discrete_encoders
    cw = sum(w for _, _, w in layout)
    cond = np.zeros((batch, cw))
    cols = rng.integers(len(layout), size=batch)
    cats = np.empty(batch, dtype=int)
    rows_idx = np.empty(batch, dtype=int)
    for b in range(batch):
        col = int(cols[b])
        probs = _log_freq_probs(np.asarray(encs[col].counts))
        cat = int(rng.choice(len(probs), p=probs))
        pool = strata[col][cat]
        while len(pool) == 0:  # zero-frequency category; cannot be drawn, guard anyway
            cat = int(rng.choice(len(probs), p=probs))
            pool = strata[col][cat]
        cats[b] = cat
        cond[b, layout[col][1] + cat] = 1.0
        rows_idx[b] = pool[rng.integers(len(pool))]
    return ds.rows[rows_idx], cond, cols, cats


def ctgan_train(ds: Dataset, t: Transformer, cfg: CtganConfig = CtganConfig(), seed: int = 0) -> CtganModel:
    """WGAN-GP training of the conditional generator.

    The critic minimizes E[d(fake)] - E[d(real)] + lam*GP; the generator
    minimizes -E[d(fake)] plus a cross-entropy tying its one-hot block for
    the conditioned column to the condition bits. All randomness flows from
    one generator seeded here, so training is bit-reproducible.
    """
    if len(ds) == 0:
        raise ValueError("cannot train on empty dataset")
    rng = np.random.default_rng(seed)
    batch = min(cfg.batch_size, len(ds))
    layout = cond_layout(t)
    cw = sum(w for _, _, w in layout)

    # Generator output head: tanh on each alpha scalar, softmax per one-hot block.
    blocks = []
    for enc in t.encoders:
        if enc.style == "onehot":
            blocks.append(("softmax", enc.width))
        elif enc.style == "gmm":
            blocks.append(("tanh", 1))
            blocks.append(("softmax", enc.width - 1))
        else:
            blocks.append(("tanh", 1))
    head = nn.MixSpec(tuple(blocks), temperature=cfg.head_temperature)

    gen = nn.mlp_init(
        [cfg.noise_dim + cw, cfg.hidden, cfg.hidden, t.width],
        ["relu", "relu", head],
        seed=int(rng.integers(2**31)),
    )
    critic = nn.mlp_init(
        [t.width + cw, cfg.hidden, cfg.hidden, 1],
        ["leaky_relu", "leaky_relu", "linear"],
        seed=int(rng.integers(2**31)),
    )
    g_state = nn.adam_init(gen, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    c_state = nn.adam_init(critic, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)

    # Row indices per (discrete column, category) for conditioned draws.
    strata = []
    for enc in t.discrete_encoders:
        j = t.schema.feature_index(enc.name)
        strata.append([np.flatnonzero(ds.rows[:, j] == c) for c in range(enc.width)])

    steps = max(1, len(ds) // batch)
    log = []
    for epoch in range(cfg.epochs):
        c_losses, g_losses = [], []
        for _ in range(steps):
            for _ in range(cfg.critic_steps):
                if layout:
                    real_rows, cond, _, _ = _draw_conditioned_batch(ds, t, strata, batch, rng)
                else:
                    real_rows = ds.rows[rng.integers(len(ds), size=batch)]
                    cond = np.zeros((batch, 0))
                real_enc = t.encode(real_rows, rng)
                z = rng.standard_normal((batch, cfg.noise_dim))
                fake_enc, _ = nn.forward(gen, np.concatenate([z, cond], axis=1))

                d_real, cache_r = nn.forward(critic, np.concatenate([real_enc, cond], axis=1))
                d_fake, cache_f = nn.forward(critic, np.concatenate([fake_enc, cond], axis=1))
                ones = np.ones_like(d_real) / batch
                grads_f, _ = nn.backward(critic, cache_f, ones)
                grads_r, _ = nn.backward(critic, cache_r, -ones)
                gp, gp_grads = gradient_penalty(critic, real_enc, fake_enc, cond, cfg.lam, rng)
                critic = nn.adam_step(c_state, critic, _add_grads(_add_grads(grads_f, grads_r), gp_grads))
                c_losses.append(float(np.mean(d_fake) - np.mean(d_real)) + gp)

            if layout:
                _, cond, cols, cats = _draw_conditioned_batch(ds, t, strata, batch, rng)
            else:
                cond = np.zeros((batch, 0))
            z = rng.standard_normal((batch, cfg.noise_dim))
            fake_enc, g_cache = nn.forward(gen, np.concatenate([z, cond], axis=1))
            d_fake, f_cache = nn.forward(critic, np.concatenate([fake_enc, cond], axis=1))
            _, d_in = nn.backward(critic, f_cache, -np.ones_like(d_fake) / batch)
            g_out = d_in[:, : t.width].copy()

            ce = 0.0
            if layout:
                # Cross-entropy between the conditioned column's softmax block
                # and the condition bit, added to the adversarial gradient.
                encs = t.discrete_encoders
                sel = np.array([t.encoder(encs[c].name).offset for c in cols]) + cats
                probs = np.maximum(fake_enc[np.arange(batch), sel], 1e-12)
                ce = float(-np.mean(np.log(probs)))
                g_out[np.arange(batch), sel] -= 1.0 / (batch * probs)
            gen_grads, _ = nn.backward(gen, g_cache, g_out)
            gen = nn.adam_step(g_state, gen, gen_grads)
            g_losses.append(float(-np.mean(d_fake)) + ce)

        c_epoch, g_epoch = float(np.mean(c_losses)), float(np.mean(g_losses))
        if not (np.isfinite(c_epoch) and np.isfinite(g_epoch)):
            raise FloatingPointError(f"non-finite loss at epoch {epoch}")
        log.append((c_epoch, g_epoch))

    return CtganModel(
        generator=gen,
        critic=critic,
        transformer=t,
        noise_dim=cfg.noise_dim,
        lam=cfg.lam,
        seed=seed,
        epochs=cfg.epochs,
        training_log=tuple(log),
    )


def ctgan_sample(model: CtganModel, m_x, n: int, seed: int) -> np.ndarray:
    """Draw n rows from g(z, m_x) and decode them to schema-valid rows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    m_x = np.asarray(m_x, dtype=np.float64).ravel()
    z = rng.standard_normal((n, model.noise_dim))
    cond = np.tile(m_x, (n, 1))
    enc, _ = nn.forward(model.generator, np.concatenate([z, cond], axis=1))
    return model.transformer.decode(enc)


def locality_filter(t: Transformer, x, rows, max_distance: float) -> np.ndarray:
    """Optional hard locality cut: keep rows within an encoded-L2 ball of x.
    Off by default everywhere; conditioning usually suffices."""
    ex = t.encode(np.asarray(x)[None, :])
    er = t.encode(rows)
    d = np.sqrt(np.sum((er - ex) ** 2, axis=1))
    return np.asarray(rows)[d <= max_distance]


def critic_score(model: CtganModel, rows) -> np.ndarray:
    """Raw critic outputs d(x), conditioning each row on its own categories.
    Deterministic: encoding uses highest-responsibility modes."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    t = model.transformer
    enc = t.encode(rows)  # rng=None: deterministic mode choice
    conds = np.array([build_cond_vector_instance(t, r) for r in rows])
    out, _ = nn.forward(model.critic, np.concatenate([enc, conds], axis=1))
    return out[:, 0]


def filter_samples(rows, scores, tau: float) -> np.ndarray:
    """Keep exactly the rows with d(x) >= tau, preserving order."""
    rows = np.asarray(rows)
    scores = np.asarray(scores, dtype=np.float64)
    if len(rows) != len(scores):
        raise ValueError("rows and scores lengths disagree")
    kept = rows[scores >= tau]
    if len(kept) == 0:
        raise EmptyFilterResult(f"no sample scored at or above tau={tau}")
    return kept


def calibrate_tau(model: CtganModel, validation_rows, percentile: float = 50.0) -> float:
    """tau = the given percentile of critic scores on held-out real rows,
    lower-value convention (percentile 50 of scores {1..100} gives 50)."""
    rows = np.asarray(validation_rows, dtype=np.float64)
    if len(rows) < 20:
        raise ValueError(f"need >= 20 validation rows, got {len(rows)}")
    if not 0.0 <= percentile <= 100.0:
        raise ValueError("percentile must be within [0, 100]")
    scores = np.sort(critic_score(model, rows))
    idx = max(int(np.ceil(percentile / 100.0 * len(scores))) - 1, 0)
    return float(scores[idx])


def save_ctgan(model: CtganModel, bundle_dir) -> None:
    os.makedirs(bundle_dir, exist_ok=True)
    nn.save_params(model.generator, os.path.join(bundle_dir, "generator.json"))
    nn.save_params(model.critic, os.path.join(bundle_dir, "critic.json"))
    with open(os.path.join(bundle_dir, "transformer.json"), "w", encoding="utf-8") as fh:
        json.dump(model.transformer.to_json(), fh)
        fh.write("\n")
    meta = {
        "noise_dim": model.noise_dim,
        "lambda": model.lam,
        "tau": model.tau,
        "seed": model.seed,
        "epochs": model.epochs,
    }
    with open(os.path.join(bundle_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ctgan(bundle_dir) -> CtganModel:
    gen = nn.load_params(os.path.join(bundle_dir, "generator.json"))
    critic = nn.load_params(os.path.join(bundle_dir, "critic.json"))
    with open(os.path.join(bundle_dir, "transformer.json"), "r", encoding="utf-8") as fh:
        t = Transformer.from_json(json.load(fh))
    with open(os.path.join(bundle_dir, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    return CtganModel(
        generator=gen,
        critic=critic,
        transformer=t,
        noise_dim=int(meta["noise_dim"]),
        lam=float(meta["lambda"]),
        tau=None if meta.get("tau") is None else float(meta["tau"]),
        seed=meta.get("seed"),
        epochs=meta.get("epochs"),
    )
