"""Localization error, success rate, energy accounting and empirical CDFs."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CdfCurve:
    """Empirical CDF over error samples; duplicates collapsed."""

    errors_m: np.ndarray      # distinct values, ascending
    fractions: np.ndarray     # strictly increasing, last value 1.0

    def fraction_at(self, threshold_m: float) -> float:
        """Fraction of samples with error <= threshold."""
        idx = np.searchsorted(self.errors_m, threshold_m, side="right")
        return 0.0 if idx == 0 else float(self.fractions[idx - 1])


def localization_errors(predictions: np.ndarray, truths: np.ndarray,
                        per_axis_mean_abs: bool = False) -> np.ndarray:
    """Per-sample position error in meters.

    Euclidean distance by default; the per-axis mean-absolute variant exists
    for sensitivity checks only.
    """
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    truths = np.atleast_2d(np.asarray(truths, dtype=float))
    if predictions.shape != truths.shape:
        raise ValueError(f"shape mismatch {predictions.shape} vs {truths.shape}")
    diff = predictions - truths
    if per_axis_mean_abs:
        return np.mean(np.abs(diff), axis=1)
    return np.sqrt(np.sum(diff * diff, axis=1))


def mean_error(samples: np.ndarray) -> float:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty error sample list")
    return float(np.mean(samples))


def success_rate(samples: np.ndarray, threshold_m: float) -> float:
    """Fraction of samples with error <= threshold (boundary included)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty error sample list")
    if threshold_m <= 0:
        raise ValueError("threshold must be > 0")
    return float(np.count_nonzero(samples <= threshold_m)) / samples.size


def epoch_energy(p_cpu_w: float, p_gpu_w: float, t_epoch_s: float) -> float:
    """Joules consumed in one epoch at constant configured power."""
    if p_cpu_w < 0 or p_gpu_w < 0 or t_epoch_s < 0:
        raise ValueError("power and time must be >= 0")
    return (p_cpu_w + p_gpu_w) * t_epoch_s


def build_cdf(samples: np.ndarray) -> CdfCurve:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty error sample list")
    values, counts = np.unique(samples, return_counts=True)
    fractions = np.cumsum(counts) / samples.size
    return CdfCurve(values, fractions)


def save_cdf_csv(curve: CdfCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["error_m", "cum_fraction"])
        for e, f in zip(curve.errors_m, curve.fractions):
            writer.writerow([f"{e:.17g}", f"{f:.17g}"])
