"""Fingerprint dataset handling: CSV I/O, splitting, normalization,
environmental noise injection and limited-data subsampling.

Features are raw RSSI in dBm; labels are planar receiver positions in
meters.  Every randomized operation is a deterministic function of its
inputs and a seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .channel import FingerprintRecord

EPS_STD = 1e-8


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid dataset operations."""


@dataclass(frozen=True)
class Dataset:
    """Immutable column-major view of a fingerprint collection."""

    scenario_ids: np.ndarray  # (n,) int
    positions: np.ndarray     # (n, 2) float, meters
    rssi: np.ndarray          # (n, d) float, dBm

    def __post_init__(self):
        if self.rssi.ndim != 2 or self.positions.shape != (len(self.rssi), 2):
            raise DatasetError("inconsistent dataset array shapes")
        if not (np.all(np.isfinite(self.rssi)) and np.all(np.isfinite(self.positions))):
            raise DatasetError("dataset contains non-finite values")

    def __len__(self) -> int:
        return len(self.rssi)

    @property
    def feature_dim(self) -> int:
        return self.rssi.shape[1]

    @property
    def records(self) -> list[FingerprintRecord]:
        return [FingerprintRecord(int(s), float(p[0]), float(p[1]), r.copy())
                for s, p, r in zip(self.scenario_ids, self.positions, self.rssi)]

    @classmethod
    def from_records(cls, records: list[FingerprintRecord]) -> "Dataset":
        if not records:
            raise DatasetError("no records")
        return cls(
            scenario_ids=np.array([r.scenario_id for r in records], dtype=int),
            positions=np.array([[r.x, r.y] for r in records], dtype=float),
            rssi=np.array([r.rssi for r in records], dtype=float),
        )

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.scenario_ids[idx], self.positions[idx], self.rssi[idx])

    def with_rssi(self, rssi: np.ndarray) -> "Dataset":
        return Dataset(self.scenario_ids, self.positions, rssi)


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # (d,)
    std: np.ndarray   # (d,), clamped at EPS_STD


@dataclass(frozen=True)
class NoiseSpec:
    """Environmental-variation noise: sigma = nf * sigma_base (dB)."""

    nf: float
    sigma_base_db: float = 0.25
    resample_per_epoch: bool = False
    apply_to_validation: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.nf < 0:
            raise ValueError("noise factor must be >= 0")
        if self.sigma_base_db <= 0:
            raise ValueError("sigma_base_db must be > 0")

    @property
    def sigma_db(self) -> float:
        return self.nf * self.sigma_base_db


def _csv_header(d: int) -> list[str]:
    return ["scenario_id", "rx_x_m", "rx_y_m"] + [f"rssi_tx{k + 1}_dbm" for k in range(d)]


def save_csv(dataset: Dataset, path) -> None:
    """Write the CSV schema: scenario_id,rx_x_m,rx_y_m,rssi_tx*_dbm."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(dataset.feature_dim))
        for s, p, r in zip(dataset.scenario_ids, dataset.positions, dataset.rssi):
            writer.writerow([int(s)] + [f"{v:.17g}" for v in (*p, *r)])


def load_csv(path) -> Dataset:
    """Parse a dataset CSV, reporting the offending row/column on failure."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: no records (empty file)") from None
        if header[:3] != ["scenario_id", "rx_x_m", "rx_y_m"]:
            raise DatasetError(f"{path}: bad header, expected scenario_id,rx_x_m,rx_y_m,...")
        d = len(header) - 3
        expected = _csv_header(d)
        if header != expected:
            raise DatasetError(f"{path}: bad header, RSSI columns must be "
                               f"rssi_tx1_dbm..rssi_tx{d}_dbm in order")
        if d == 0:
            raise DatasetError(f"{path}: header has no RSSI columns")
        scenario_ids, positions, rssi = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {lineno}: expected {len(header)} "
                                   f"columns, got {len(row)}")
            try:
                scenario_ids.append(int(row[0]))
            except ValueError:
                raise DatasetError(f"{path}: row {lineno}, column scenario_id: "
                                   f"non-integer value {row[0]!r}") from None
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                bad = next(i for i, v in enumerate(row[1:], 1) if not _is_float(v))
                raise DatasetError(f"{path}: row {lineno}, column {header[bad]}: "
                                   f"non-numeric value {row[bad]!r}") from None
            positions.append(values[:2])
            rssi.append(values[2:])
        if not rssi:
            raise DatasetError(f"{path}: no records")
    return Dataset(np.array(scenario_ids), np.array(positions), np.array(rssi))


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Uniform random partition; train side gets round(fraction * n) rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    n = len(dataset)
    n_train = round(train_fraction * n)
    if n_train == 0 or n_train == n:
        raise ValueError(f"train_fraction {train_fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.take(np.sort(perm[:n_train])), dataset.take(np.sort(perm[n_train:]))


def fit_norm(train: Dataset) -> NormStats:
    """Per-feature mean/std over the training features only."""
    if len(train) == 0:
        raise DatasetError("cannot fit normalization on an empty dataset")
    mean = train.rssi.mean(axis=0)
    std = np.maximum(train.rssi.std(axis=0), EPS_STD)
    return NormStats(mean, std)


def apply_norm(dataset: Dataset, stats: NormStats) -> Dataset:
    return dataset.with_rssi((dataset.rssi - stats.mean) / stats.std)


def invert_norm(dataset: Dataset, stats: NormStats) -> Dataset:
    return dataset.with_rssi(dataset.rssi * stats.std + stats.mean)


def inject_noise(dataset: Dataset, spec: NoiseSpec,
                 rng: np.random.Generator | None = None) -> Dataset:
    """Add N(0, (nf * sigma_base)^2) to every raw RSSI cell.

    Standard normals are drawn once and scaled, so two calls with the same
    seed and different noise factors produce exactly proportional
    perturbations.  nf = 0 returns the input values unchanged.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.nf == 0:
        return dataset
    noise = rng.standard_normal(dataset.rssi.shape) * spec.sigma_db
    return dataset.with_rssi(dataset.rssi + noise)


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Order-preserving uniform subset of size round(fraction * n)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n = len(dataset)
    k = round(fraction * n)
    if k == 0:
        raise ValueError(f"fraction {fraction} selects zero of {n} records")
    if k == n:
        return dataset
    idx = np.random.default_rng(seed).choice(n, size=k, replace=False)
    return dataset.take(np.sort(idx))
