"""AU intensity labels: validation, scaling to [-1, 1] and soft labels.

Intensities are ordinal 0..5 per FACS. Networks condition on labels
linearly scaled to [-1, 1]; soft labels add Gaussian noise with mean
-0.5 and standard deviation 0.5 to each discrete intensity before
scaling, which turns the six levels into a continuous conditioning
signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

AU_COUNT = 12
LEVEL_MAX = 5
# FACS ids of the 12 AUs this package reports by default.
DEFAULT_AU_IDS = (1, 2, 4, 5, 6, 9, 12, 15, 17, 20, 25, 26)

SOFT_NOISE_MEAN = -0.5
SOFT_NOISE_STD = 0.5


def check_intensities(y, dim=None):
    """Validate an intensity vector: integers in 0..5; returns an int64 array."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ContractError(f"intensity vector must be 1-D, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise ContractError(f"expected {dim} intensities, got {arr.size}")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.rint(np.asarray(arr, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(arr, dtype=np.float64)):
            raise ContractError("intensities must be whole numbers")
        arr = rounded
    arr = arr.astype(np.int64)
    if arr.min(initial=0) < 0 or arr.max(initial=0) > LEVEL_MAX:
        raise ContractError(f"intensities must lie in 0..{LEVEL_MAX}, got {arr.tolist()}")
    return arr


def scale_label(y):
    """Affine map of intensities 0..5 onto [-1, 1] (0 -> -1, 5 -> +1)."""
    return np.asarray(y, dtype=np.float64) / 2.5 - 1.0


def unscale_label(s):
    """Inverse of `scale_label` on [-1, 1]."""
    return (np.asarray(s, dtype=np.float64) + 1.0) * 2.5


@dataclass(frozen=True)
class SoftLabel:
    """Softened intensities and their scaled form clipped to [-1, 1]."""

    values: np.ndarray
    scaled: np.ndarray


def soften_label(y, rng):
    """Add N(-0.5, 0.5) noise to each discrete intensity; deterministic per rng state."""
    y = check_intensities(y)
    noisy = y + rng.normal(SOFT_NOISE_MEAN, SOFT_NOISE_STD, size=y.shape)
    return SoftLabel(values=noisy, scaled=np.clip(scale_label(noisy), -1.0, 1.0))


def soften_scaled_batch(labels, rng):
    """Soften and scale a whole (B, L) batch of discrete labels at once."""
    labels = np.asarray(labels, dtype=np.float64)
    noisy = labels + rng.normal(SOFT_NOISE_MEAN, SOFT_NOISE_STD, size=labels.shape)
    return np.clip(scale_label(noisy), -1.0, 1.0)
