"""Dataset ingestion, normalization and the synthetic oracle benchmark.

The on-disk text format is CSV: one sample per row with a subject id,
the AU intensity columns (``au01``..) and the raw expression coefficient
columns (``p000``..). Files always hold raw-space coefficients; callers
normalize in memory and keep the recorded bounds for the inverse map.
A packed binary variant shares the blob container used by checkpoints.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import blobfile
from .errors import ConfigError, ContractError, NormalizationError, ParseError
from .labels import LEVEL_MAX

SYNTHETIC_COLUMN = "synthetic"


@dataclass(frozen=True)
class ParamBounds:
    """Per-dimension lower/upper limits of expression coefficients."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ContractError("bounds must be 1-D vectors of equal length")
        if np.any(lo > hi):
            raise ContractError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return self.lower.size


def unit_bounds(dim):
    """The [-1, 1] box used for generated parameters in normalized space."""
    return ParamBounds(-np.ones(dim), np.ones(dim))


@dataclass
class LabeledDataset:
    """Paired (subject, AU intensities, expression params) samples."""

    subjects: list
    labels: np.ndarray    # (n, label_dim) int64
    params: np.ndarray    # (n, param_dim) float64
    synthetic: np.ndarray = None  # (n,) bool provenance flags
    normalized: bool = False
    bounds: ParamBounds = None    # raw-space bounds once normalized

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.labels.ndim != 2 or self.params.ndim != 2:
            raise ContractError("labels and params must be 2-D arrays")
        n = self.labels.shape[0]
        if self.params.shape[0] != n or len(self.subjects) != n:
            raise ContractError("subjects, labels and params disagree on sample count")
        if self.synthetic is None:
            self.synthetic = np.zeros(n, dtype=bool)
        else:
            self.synthetic = np.asarray(self.synthetic, dtype=bool)

    @property
    def n(self):
        return self.labels.shape[0]

    @property
    def label_dim(self):
        return self.labels.shape[1]

    @property
    def param_dim(self):
        return self.params.shape[1]

    def subset(self, index):
        """New dataset holding the selected rows (copies)."""
        idx = np.asarray(index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return LabeledDataset(subjects=[self.subjects[i] for i in idx],
                              labels=self.labels[idx].copy(),
                              params=self.params[idx].copy(),
                              synthetic=self.synthetic[idx].copy(),
                              normalized=self.normalized,
                              bounds=self.bounds)


def _param_columns(dim):
    return [f"p{i:03d}" for i in range(dim)]


def _label_columns(dim):
    return [f"au{i + 1:02d}" for i in range(dim)]


def save_dataset(path, dataset):
    """Write the CSV text form; normalized datasets are denormalized first."""
    ds = dataset
    if ds.normalized:
        if ds.bounds is None:
            raise ConfigError("cannot save a normalized dataset without bounds")
        ds = replace_params(ds, denormalize_params(ds.params, ds.bounds),
                            normalized=False, bounds=None)
    header = (["subject"] + _label_columns(ds.label_dim)
              + _param_columns(ds.param_dim) + [SYNTHETIC_COLUMN])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = ([ds.subjects[i]] + [str(int(v)) for v in ds.labels[i]]
                   + [repr(float(v)) for v in ds.params[i]]
                   + [str(int(ds.synthetic[i]))])
            writer.writerow(row)


def load_dataset(path):
    """Parse the CSV text form; malformed rows raise with their line number."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ParseError(f"cannot open dataset file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty dataset file", line=1) from None
        cols = [c.strip() for c in header]
        if not cols or cols[0] != "subject":
            raise ParseError("first column must be 'subject'", line=1)
        label_cols = [c for c in cols if c.startswith("au")]
        param_cols = [c for c in cols if c.startswith("p") and c != SYNTHETIC_COLUMN
                      and c[1:].isdigit()]
        has_flag = cols[-1] == SYNTHETIC_COLUMN
        expected = 1 + len(label_cols) + len(param_cols) + (1 if has_flag else 0)
        if len(cols) != expected or not label_cols or not param_cols:
            raise ParseError("header must list subject, au*, p* columns", line=1)
        subjects, labels, params, flags = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != expected:
                raise ParseError(f"expected {expected} columns, got {len(row)}",
                                 line=lineno)
            subjects.append(row[0])
            try:
                lab = [int(v) for v in row[1:1 + len(label_cols)]]
            except ValueError as exc:
                raise ParseError(f"bad intensity value: {exc}", line=lineno) from exc
            if any(v < 0 or v > LEVEL_MAX for v in lab):
                raise ParseError(f"AU intensity outside 0..{LEVEL_MAX}: {lab}",
                                 line=lineno)
            labels.append(lab)
            try:
                vec = [float(v) for v in
                       row[1 + len(label_cols):1 + len(label_cols) + len(param_cols)]]
            except ValueError as exc:
                raise ParseError(f"bad parameter value: {exc}", line=lineno) from exc
            if not all(np.isfinite(vec)):
                raise ParseError("non-finite parameter value", line=lineno)
            params.append(vec)
            flags.append(bool(int(row[-1])) if has_flag else False)
    if not subjects:
        raise ParseError("dataset has a header but no samples", line=2)
    return LabeledDataset(subjects=subjects,
                          labels=np.array(labels, dtype=np.int64),
                          params=np.array(params, dtype=np.float64),
                          synthetic=np.array(flags, dtype=bool))


def save_dataset_blob(path, dataset):
    """Packed binary variant (float32 params) for large sets."""
    meta = {"kind": "dataset",
            "subjects": list(dataset.subjects),
            "normalized": bool(dataset.normalized)}
    blobs = [("labels", dataset.labels.astype(np.int32)),
             ("params", dataset.params),
             ("synthetic", dataset.synthetic.astype(np.int32))]
    if dataset.bounds is not None:
        blobs.append(("bounds.lower", dataset.bounds.lower))
        blobs.append(("bounds.upper", dataset.bounds.upper))
    blobfile.write_blobfile(path, meta, blobs)


def load_dataset_blob(path):
    meta, arrays = blobfile.read_blobfile(path)
    if meta.get("kind") != "dataset":
        raise ParseError(f"{path}: not a dataset blob file")
    bounds = None
    if "bounds.lower" in arrays:
        bounds = ParamBounds(arrays["bounds.lower"].astype(np.float64),
                             arrays["bounds.upper"].astype(np.float64))
    return LabeledDataset(subjects=list(meta["subjects"]),
                          labels=arrays["labels"].astype(np.int64),
                          params=arrays["params"].astype(np.float64),
                          synthetic=arrays["synthetic"].astype(bool),
                          normalized=meta["normalized"],
                          bounds=bounds)


def replace_params(dataset, params, normalized, bounds):
    """Copy of the dataset with new parameter values and normalization state."""
    return LabeledDataset(subjects=list(dataset.subjects),
                          labels=dataset.labels.copy(),
                          params=np.asarray(params, dtype=np.float64),
                          synthetic=dataset.synthetic.copy(),
                          normalized=normalized,
                          bounds=bounds)


def normalize_params(dataset):
    """Map each dimension's observed [min, max] onto [-1, 1].

    Returns (normalized dataset, bounds). The bounds invert the map and
    provide the limits for the bound regularizer in raw space.
    """
    if dataset.normalized:
        raise ConfigError("dataset is already normalized")
    if dataset.n == 0:
        raise ConfigError("cannot normalize an empty dataset")
    lo = dataset.params.min(axis=0)
    hi = dataset.params.max(axis=0)
    flat = np.flatnonzero(hi - lo == 0)
    if flat.size:
        raise NormalizationError(f"dimension {int(flat[0])} is constant; "
                                 "cannot map it onto [-1, 1]")
    bounds = ParamBounds(lo, hi)
    normed = normalize_with_bounds(dataset.params, bounds)
    return replace_params(dataset, normed, normalized=True, bounds=bounds), bounds


def normalize_with_bounds(params, bounds):
    """Apply a recorded raw-space [min, max] -> [-1, 1] map (no clipping)."""
    return 2.0 * (np.asarray(params, dtype=np.float64) - bounds.lower) \
        / (bounds.upper - bounds.lower) - 1.0


def apply_training_bounds(dataset, bounds, clip=True):
    """Normalize held-out data with training bounds; returns (dataset, n_clipped).

    Values outside the training range land outside [-1, 1] and are
    clipped (with a count) so downstream models see their native range.
    """
    if dataset.normalized:
        raise ConfigError("dataset is already normalized")
    normed = normalize_with_bounds(dataset.params, bounds)
    n_clipped = int(np.count_nonzero((normed < -1.0) | (normed > 1.0)))
    if clip:
        normed = np.clip(normed, -1.0, 1.0)
    return replace_params(dataset, normed, normalized=True, bounds=bounds), n_clipped


def denormalize_params(params, bounds):
    """Inverse of `normalize_with_bounds`."""
    return (np.asarray(params, dtype=np.float64) + 1.0) / 2.0 \
        * (bounds.upper - bounds.lower) + bounds.lower


def split_by_subject(dataset, test_subject_ids):
    """Partition into (train, test) with no subject on both sides."""
    test_ids = set(test_subject_ids)
    known = set(dataset.subjects)
    unknown = test_ids - known
    if unknown:
        raise ConfigError(f"unknown subject ids: {sorted(unknown)}")
    mask = np.array([s in test_ids for s in dataset.subjects], dtype=bool)
    return dataset.subset(~mask), dataset.subset(mask)


# ---- synthetic oracle benchmark ---------------------------------------

@dataclass(frozen=True)
class OracleComponent:
    """One label combination with its Gaussian parameter distribution."""

    label: tuple
    mean: np.ndarray
    cov: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.ndim == 1:
            cov = np.diag(cov)
        if cov.shape != (mean.size, mean.size):
            raise ContractError("covariance shape does not match the mean")
        object.__setattr__(self, "label", tuple(int(v) for v in self.label))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.weight <= 0:
            raise ConfigError("component weight must be positive")


@dataclass(frozen=True)
class SynthOracleConfig:
    """Mixture definition for the synthetic benchmark generator."""

    components: tuple
    n_samples: int
    seed: int = 0
    n_subjects: int = 6

    def __post_init__(self):
        if self.n_samples <= 0 or self.n_subjects <= 0:
            raise ConfigError("sample and subject counts must be positive")
        if not self.components:
            raise ConfigError("at least one oracle component is required")


class SynthOracle:
    """Closed-form conditional moments of the synthetic generator."""

    def __init__(self, components):
        self.components = list(components)
        self._by_label = {c.label: c for c in self.components}

    def labels(self):
        return [c.label for c in self.components]

    def conditional_mean(self, label):
        return self._by_label[tuple(int(v) for v in label)].mean.copy()

    def conditional_cov(self, label):
        return self._by_label[tuple(int(v) for v in label)].cov.copy()

    def weights(self):
        w = np.array([c.weight for c in self.components], dtype=np.float64)
        return w / w.sum()


def synth_oracle_dataset(config):
    """Draw a labeled dataset from the mixture; returns (dataset, oracle).

    Samples are label-conditioned Gaussians; the oracle carries the exact
    conditional moments for use as ground truth in training/eval tests.
    Deterministic per seed.
    """
    rng = np.random.default_rng(config.seed)
    comps = list(config.components)
    weights = np.array([c.weight for c in comps], dtype=np.float64)
    weights = weights / weights.sum()
    choices = rng.choice(len(comps), size=config.n_samples, p=weights)
    label_dim = len(comps[0].label)
    param_dim = comps[0].mean.size
    labels = np.empty((config.n_samples, label_dim), dtype=np.int64)
    params = np.empty((config.n_samples, param_dim), dtype=np.float64)
    chols = [np.linalg.cholesky(c.cov) for c in comps]
    normals = rng.standard_normal(size=(config.n_samples, param_dim))
    for i, k in enumerate(choices):
        comp = comps[k]
        labels[i] = comp.label
        params[i] = comp.mean + chols[k] @ normals[i]
    subjects = [f"s{int(i) % config.n_subjects:02d}"
                for i in rng.permutation(config.n_samples)]
    dataset = LabeledDataset(subjects=subjects, labels=labels, params=params)
    return dataset, SynthOracle(comps)


def toy_benchmark_config(n_samples=10_000, seed=0, sigma=0.35):
    """Balanced 2-dim / 3-level benchmark used throughout the test suite.

    The level means sit on a bend so a linear regressor cannot be exact,
    which keeps the evaluation harness honest.
    """
    cov = np.full(2, sigma ** 2)
    comps = (OracleComponent(label=(0,), mean=np.array([-2.0, -1.0]), cov=cov),
             OracleComponent(label=(1,), mean=np.array([0.0, 1.0]), cov=cov),
             OracleComponent(label=(2,), mean=np.array([2.0, -1.0]), cov=cov))
    return SynthOracleConfig(components=comps, n_samples=n_samples, seed=seed)


def imbalanced_benchmark_config(n_samples=6_000, seed=0, sigma=0.35,
                                minority_weight=0.02):
    """Toy benchmark with one rare level, for augmentation experiments."""
    cov = np.full(2, sigma ** 2)
    w = (1.0 - minority_weight) / 2.0
    comps = (OracleComponent(label=(0,), mean=np.array([-2.0, -1.0]), cov=cov, weight=w),
             OracleComponent(label=(1,), mean=np.array([0.0, 1.0]), cov=cov, weight=w),
             OracleComponent(label=(2,), mean=np.array([2.0, -1.0]), cov=cov,
                             weight=minority_weight))
    return SynthOracleConfig(components=comps, n_samples=n_samples, seed=seed)


def save_params(path, params):
    """Write parameter vectors (one per row) as CSV."""
    arr = np.atleast_2d(np.asarray(params, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_param_columns(arr.shape[1]))
        for row in arr:
            writer.writerow([repr(float(v)) for v in row])


def load_params(path):
    """Read parameter vectors written by `save_params`; returns (n, D)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty parameter file", line=1) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns", line=lineno)
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"bad value: {exc}", line=lineno) from exc
    if not rows:
        raise ParseError("parameter file has no rows", line=2)
    return np.array(rows, dtype=np.float64)
