"""Datasets, min-max normalization, fold plans and a synthetic generator."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    response: np.ndarray
    feature_names: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.response, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"features must be a non-empty 2-d matrix, got shape {X.shape}")
        if y.shape[0] != X.shape[0]:
            raise DataError(f"response has {y.shape[0]} rows, features have {X.shape[0]}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DataError("dataset contains non-finite values")
        if self.feature_names is not None and len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match feature count")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "response", y)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def joint(self) -> np.ndarray:
        """Features with the response appended as the last column."""
        return np.column_stack([self.features, self.response])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.response[idx], self.feature_names)

    def concat(self, other: "Dataset") -> "Dataset":
        if other.d != self.d:
            raise DataError("cannot concatenate datasets of different width")
        return Dataset(
            np.vstack([self.features, other.features]),
            np.concatenate([self.response, other.response]),
            self.feature_names,
        )

    def to_csv(self, path, response_column: str = "target") -> None:
        names = list(self.feature_names or [f"x{j}" for j in range(self.d)])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names + [response_column])
            for row, target in zip(self.features, self.response):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])


def load_csv(path, response_column: str) -> Dataset:
    """Read a numeric CSV with one header row; ``response_column`` becomes the response."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path} is empty")
        header = [h.strip() for h in header]
        if response_column not in header:
            raise DataError(f"column {response_column!r} not found in {path}; have {header}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw or all(not c.strip() for c in raw):
                continue
            if len(raw) != len(header):
                raise DataError(f"row {lineno}: expected {len(header)} cells, got {len(raw)}")
            values = []
            for name, cell in zip(header, raw):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"row {lineno}, column {name!r}: non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"row {lineno}, column {name!r}: non-finite value {cell!r}")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path} has a header but no data rows")
    table = np.asarray(rows, dtype=float)
    j = header.index(response_column)
    keep = [i for i in range(len(header)) if i != j]
    if not keep:
        raise DataError(f"{path} has no feature columns")
    return Dataset(table[:, keep], table[:, j], tuple(header[i] for i in keep))


@dataclass(frozen=True)
class Normalizer:
    """Per-column min/max; the last entry belongs to the response."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=float)
        maxs = np.asarray(self.maxs, dtype=float)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise DataError("mins and maxs must be vectors of equal length")
        if np.any(mins > maxs):
            raise DataError("normalizer has min > max")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    def _scale(self, values, lo, hi):
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (values - lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)

    def _unscale(self, values, lo, hi):
        return lo + values * (hi - lo)

    def apply(self, data: Dataset) -> Dataset:
        if data.d + 1 != self.mins.shape[0]:
            raise DataError("normalizer width does not match dataset")
        X = self._scale(data.features, self.mins[:-1], self.maxs[:-1])
        y = self._scale(data.response, self.mins[-1], self.maxs[-1])
        return Dataset(X, y, data.feature_names)

    def invert(self, data: Dataset) -> Dataset:
        X = self._unscale(data.features, self.mins[:-1], self.maxs[:-1])
        y = self._unscale(data.response, self.mins[-1], self.maxs[-1])
        return Dataset(X, y, data.feature_names)

    def to_json(self) -> str:
        return json.dumps({"mins": self.mins.tolist(), "maxs": self.maxs.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Normalizer":
        record = json.loads(text)
        return cls(np.asarray(record["mins"]), np.asarray(record["maxs"]))


def fit_normalizer(data: Dataset) -> Normalizer:
    table = data.joint()
    return Normalizer(table.min(axis=0), table.max(axis=0))


@dataclass(frozen=True)
class FoldPlan:
    seed: int
    fold_count: int
    assignments: np.ndarray

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.fold_count)


def make_folds(n: int, fold_count: int, seed: int) -> FoldPlan:
    if fold_count < 1:
        raise DataError("fold_count must be positive")
    if fold_count > n:
        raise DataError(f"fold_count={fold_count} exceeds sample count n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    assignments[perm] = np.arange(n) % fold_count
    assignments.setflags(write=False)
    return FoldPlan(seed, fold_count, assignments)


def split(data: Dataset, fraction: float, seed) -> tuple[Dataset, Dataset]:
    """Random split; the second part gets ``round(fraction * n)`` rows."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(data.n)
    m = int(round(fraction * data.n))
    return data.subset(np.sort(perm[m:])), data.subset(np.sort(perm[:m]))


def synth_linear(n: int, d: int, noise_sd: float, seed) -> Dataset:
    """Uniform features in the unit box with a clamped linear response.

    The ground-truth coefficients are shrunk until every noiseless response
    sits inside [0.05, 0.95], so ``noise_sd=0`` output is exactly linear.
    """
    if d < 1 or n < d + 1:
        raise DataError(f"synth_linear needs d >= 1 and n >= d+1, got n={n}, d={d}")
    if noise_sd < 0:
        raise DataError("noise_sd must be nonnegative")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(n, d))
    omega = rng.normal(size=d)
    # signal standard deviation of 0.15 on the uniform box
    omega *= 0.15 / math.sqrt(omega @ omega / 12.0)
    centered = (X - 0.5) @ omega
    peak = np.max(np.abs(centered))
    if peak > 0.45:
        omega *= 0.45 / peak
    bias = 0.5 - 0.5 * omega.sum()
    y = X @ omega + bias
    if noise_sd > 0:
        y = y + rng.normal(scale=noise_sd, size=n)
    y = np.clip(y, 0.0, 1.0)
    meta = {"omega": omega, "bias": float(bias), "noise_sd": float(noise_sd), "seed": seed}
    return Dataset(X, y, tuple(f"x{j}" for j in range(d)), meta)
