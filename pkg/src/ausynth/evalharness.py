"""Regression-based AU intensity estimation over expression parameters.

Two linear estimators are provided: epsilon-insensitive SVR trained by
per-sample subgradient descent with tail averaging, and an ordinal
variant (OSVR) that shares the linear score and learns nondecreasing
cut points, predicting the count of thresholds below the score. Both
fit all AUs jointly (per-AU problems are independent).

The harness also implements the augmentation experiment: append
generator-synthesized samples for under-represented label combinations
and measure the effect on held-out MAE/MSE.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .condgen import CaaeModel, CganModel, synthesize_caae_batch, synthesize_cgan_batch
from .dataio import LabeledDataset
from .errors import ConfigError, ContractError
from .labels import LEVEL_MAX, scale_label

N_THRESHOLDS = LEVEL_MAX  # cut points between the 6 intensity levels


@dataclass(frozen=True)
class RegressorParams:
    """Hyperparameters shared by both estimator kinds."""

    epsilon: float = 0.1       # insensitive margin
    c: float = 1.0             # inverse regularization strength
    epochs: int = 200
    learning_rate: float = 1e-3  # decays as 1/sqrt(epoch)
    seed: int = 0


@dataclass
class Regressor:
    """Per-AU linear weights and bias; OSVR adds sorted cut points."""

    kind: str                   # "svr" | "osvr"
    weights: np.ndarray         # (L, D)
    bias: np.ndarray            # (L,)
    thresholds: np.ndarray = None  # (L, N_THRESHOLDS), nondecreasing rows


@dataclass
class EvalReport:
    """Per-AU and mean MAE/MSE over a test set."""

    per_au_mae: np.ndarray
    per_au_mse: np.ndarray
    mean_mae: float
    mean_mse: float
    count: int


def fit_regressor(train, kind, params=None):
    """Fit an estimator of AU intensities from expression parameters.

    Subgradient descent visits samples in dataset order with a per-epoch
    1/sqrt(e) learning-rate decay; the returned weights are the average
    of the epoch-end iterates over the last half of training, which
    makes the fit deterministic for a fixed dataset and seed.
    """
    if train.n == 0:
        raise ConfigError("cannot fit a regressor on an empty dataset")
    if kind not in ("svr", "osvr"):
        raise ConfigError(f"unknown regressor kind {kind!r}")
    hp = params or RegressorParams()
    x_all = train.params
    y_all = train.labels.astype(np.float64)
    n, dim = x_all.shape
    n_au = y_all.shape[1]
    alpha = 1.0 / (hp.c * n)  # L2 strength per update

    w = np.zeros((n_au, dim))
    b = np.zeros(n_au)
    theta = np.tile(np.arange(N_THRESHOLDS) + 0.5, (n_au, 1)) if kind == "osvr" else None
    levels = np.arange(1, N_THRESHOLDS + 1)

    tail_start = hp.epochs // 2
    w_sum = np.zeros_like(w)
    b_sum = np.zeros_like(b)
    t_sum = np.zeros_like(theta) if kind == "osvr" else None
    n_tail = 0

    for epoch in range(hp.epochs):
        lr = hp.learning_rate / np.sqrt(epoch + 1.0)
        for i in range(n):
            x = x_all[i]
            s = w @ x + b
            if kind == "svr":
                r = s - y_all[i]
                g = np.sign(r) * (np.abs(r) > hp.epsilon)
                w -= lr * (g[:, None] * x + alpha * w)
                b -= lr * g
            else:
                z = np.where(y_all[i][:, None] >= levels, 1.0, -1.0)
                viol = z * (s[:, None] - theta) < 1.0
                zv = z * viol
                ds = -zv.sum(axis=1)
                w -= lr * (ds[:, None] * x + alpha * w)
                b -= lr * ds
                theta += lr * zv
                np.maximum.accumulate(theta, axis=1, out=theta)
        if epoch >= tail_start:
            w_sum += w
            b_sum += b
            if kind == "osvr":
                t_sum += theta
            n_tail += 1

    w_avg = w_sum / n_tail
    b_avg = b_sum / n_tail
    t_avg = t_sum / n_tail if kind == "osvr" else None
    return Regressor(kind=kind, weights=w_avg, bias=b_avg, thresholds=t_avg)


def predict(model, params):
    """Predicted intensities for a parameter batch; clipped to the 0..5 scale."""
    x = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if x.shape[1] != model.weights.shape[1]:
        raise ContractError(f"feature dim {x.shape[1]} != model dim "
                            f"{model.weights.shape[1]}")
    scores = x @ model.weights.T + model.bias
    if model.kind == "svr":
        return np.clip(scores, 0.0, LEVEL_MAX)
    return (scores[:, :, None] > model.thresholds[None]).sum(axis=2).astype(np.float64)


def evaluate(model, test):
    """MAE and MSE per AU plus their means across AUs."""
    if test.n == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    preds = predict(model, test.params)
    if preds.shape[1] != test.label_dim:
        raise ContractError("regressor and dataset disagree on the AU count")
    err = preds - test.labels
    mae = np.abs(err).mean(axis=0)
    mse = np.square(err).mean(axis=0)
    return EvalReport(per_au_mae=mae, per_au_mse=mse,
                      mean_mae=float(mae.mean()), mean_mse=float(mse.mean()),
                      count=test.n)


# ---- augmentation ------------------------------------------------------

def _label_combos(dataset):
    combos, counts = np.unique(dataset.labels, axis=0, return_counts=True)
    return combos, counts


def augment(train, generator, count, sampler="uniform", seed=0):
    """Append `count` generator-synthesized samples to a copy of `train`.

    Labels are drawn over the observed label combinations, uniformly or
    inverse-frequency weighted ("invfreq"); synthetic rows carry a
    provenance flag and, for the autoencoder, the subject of the real
    sample used as the decoding source. Originals are never mutated.
    """
    if count < 0:
        raise ConfigError("augmentation count must be nonnegative")
    base = train.subset(np.arange(train.n))
    if count == 0:
        return base
    if not train.normalized:
        raise ConfigError("augmentation operates on normalized datasets")
    combos, combo_counts = _label_combos(train)
    rng = np.random.default_rng(seed)
    if callable(sampler):
        pick = sampler(rng, combos, combo_counts, count)
    elif sampler == "uniform":
        pick = rng.integers(0, len(combos), size=count)
    elif sampler == "invfreq":
        p = 1.0 / combo_counts
        pick = rng.choice(len(combos), size=count, p=p / p.sum())
    else:
        raise ConfigError(f"unknown label sampler {sampler!r}")
    new_labels = combos[pick]
    y_scaled = scale_label(new_labels)
    if isinstance(generator, CaaeModel):
        src = rng.integers(0, train.n, size=count)
        new_params = synthesize_caae_batch(generator, train.params[src], y_scaled)
        new_subjects = [train.subjects[i] for i in src]
    elif isinstance(generator, CganModel):
        new_params = synthesize_cgan_batch(generator, y_scaled, rng)
        new_subjects = ["synth"] * count
    else:
        raise ContractError(f"cannot augment with {type(generator).__name__}")
    return LabeledDataset(
        subjects=list(base.subjects) + new_subjects,
        labels=np.concatenate([base.labels, new_labels]),
        params=np.concatenate([base.params, new_params]),
        synthetic=np.concatenate([base.synthetic, np.ones(count, dtype=bool)]),
        normalized=base.normalized,
        bounds=base.bounds)


def _neutral_mask(dataset):
    return np.all(dataset.labels == 0, axis=1)


def _synthesize_eval_set(generator, sources, labels, seed):
    y_scaled = scale_label(labels)
    if isinstance(generator, CaaeModel):
        return synthesize_caae_batch(generator, sources, y_scaled)
    if isinstance(generator, CganModel):
        return synthesize_cgan_batch(generator, y_scaled, np.random.default_rng(seed))
    if callable(generator):
        return np.atleast_2d(np.asarray(generator(sources, y_scaled), dtype=np.float64))
    raise ContractError(f"cannot synthesize with {type(generator).__name__}")


def table1_protocol(real_train, real_test, generator, kind="svr", params=None,
                    seed=0, train_fraction=0.3):
    """Compare estimation on real test parameters vs generated ones.

    The estimator trains on a seeded `train_fraction` sample of the
    non-neutral training data. The synthetic evaluation set pairs each
    non-neutral test label with parameters generated from a neutral test
    sample (cycled in order). Returns (real report, synthetic report).
    """
    train_pool = real_train.subset(~_neutral_mask(real_train))
    if train_pool.n == 0:
        raise ConfigError("training set has no non-neutral samples")
    neutral_idx = np.flatnonzero(_neutral_mask(real_test))
    if neutral_idx.size == 0:
        raise ConfigError("test set has no neutral (all-zero label) samples")
    nonneutral = real_test.subset(~_neutral_mask(real_test))
    if nonneutral.n == 0:
        raise ConfigError("test set has no non-neutral samples")

    rng = np.random.default_rng(seed)
    n_fit = max(1, int(round(train_fraction * train_pool.n)))
    fit_idx = rng.permutation(train_pool.n)[:n_fit]
    reg = fit_regressor(train_pool.subset(fit_idx), kind, params)

    report_real = evaluate(reg, nonneutral)
    sources = real_test.params[neutral_idx[np.arange(nonneutral.n) % neutral_idx.size]]
    synth_params = _synthesize_eval_set(generator, sources, nonneutral.labels, seed + 1)
    synth_set = LabeledDataset(subjects=["synth"] * nonneutral.n,
                               labels=nonneutral.labels.copy(),
                               params=synth_params,
                               normalized=real_test.normalized,
                               bounds=real_test.bounds)
    report_synth = evaluate(reg, synth_set)
    return report_real, report_synth


def augmentation_sweep(train, test, generator, multiples=(0, 1, 2, 4),
                       kind="svr", params=None, seed=0):
    """Refit with increasing synthetic top-ups of the rarest label combination.

    Sizes are multiples of the minority-combination count; labels are
    drawn inverse-frequency so rare combinations fill in first. Returns
    one row per size: (multiple, added count, mean MAE, mean MSE).
    """
    _, combo_counts = _label_combos(train)
    minority = int(combo_counts.min())
    rows = []
    for mult in multiples:
        count = int(mult * minority)
        augmented = augment(train, generator, count, sampler="invfreq",
                            seed=seed + count)
        reg = fit_regressor(augmented, kind, params)
        report = evaluate(reg, test)
        rows.append({"multiple": float(mult), "count": count,
                     "mean_mae": report.mean_mae, "mean_mse": report.mean_mse})
    return rows


# ---- report output -----------------------------------------------------

def format_report(report, au_ids=None):
    """Plain-text per-AU table."""
    n_au = len(report.per_au_mae)
    names = [f"AU{int(a)}" for a in au_ids] if au_ids else \
        [f"au{i + 1:02d}" for i in range(n_au)]
    lines = [f"{'AU':>6}  {'MAE':>8}  {'MSE':>8}"]
    for name, mae, mse in zip(names, report.per_au_mae, report.per_au_mse):
        lines.append(f"{name:>6}  {mae:8.4f}  {mse:8.4f}")
    lines.append(f"{'mean':>6}  {report.mean_mae:8.4f}  {report.mean_mse:8.4f}")
    lines.append(f"samples: {report.count}")
    return "\n".join(lines)


def write_report_csv(path, report, au_ids=None):
    n_au = len(report.per_au_mae)
    names = [f"AU{int(a)}" for a in au_ids] if au_ids else \
        [f"au{i + 1:02d}" for i in range(n_au)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["au", "mae", "mse"])
        for name, mae, mse in zip(names, report.per_au_mae, report.per_au_mse):
            writer.writerow([name, repr(float(mae)), repr(float(mse))])
        writer.writerow(["mean", repr(report.mean_mae), repr(report.mean_mse)])


def write_sweep_csv(path, rows):
    """Plot-ready CSV: augmentation size vs MAE/MSE."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["multiple", "count", "mean_mae", "mean_mse"])
        for row in rows:
            writer.writerow([repr(row["multiple"]), row["count"],
                             repr(row["mean_mae"]), repr(row["mean_mse"])])
