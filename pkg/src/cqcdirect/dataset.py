"""Observational treatment-outcome data: containers, splitting, CSV I/O.

A dataset holds triples (y, x, a): a real outcome, a covariate vector of
fixed length d, and a binary treatment indicator. Datasets are immutable
after construction and safe to share read-only across parallel work.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = ["Sample", "Dataset", "SplitPair", "ColumnSpec", "split_half", "read_csv", "write_csv"]


@dataclass(frozen=True)
class Sample:
    """One observational triple: outcome ``y``, covariates ``x``, treatment ``a``."""

    y: float
    x: np.ndarray
    a: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(-1)
        object.__setattr__(self, "x", x)
        if self.a not in (0, 1):
            raise DataError(f"treatment indicator must be 0 or 1, got {self.a!r}")
        if not math.isfinite(self.y) or not np.all(np.isfinite(x)):
            raise DataError("sample contains non-finite values")


@dataclass(frozen=True)
class Dataset:
    """Column-major store of samples: ``y`` (n,), ``x`` (n, d), ``a`` (n,)."""

    y: np.ndarray
    x: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        a = np.asarray(self.a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a.astype(np.int64))
        if not (len(y) == len(x) == len(a)):
            raise DataError("y, x, a must have equal length")
        if not np.all((a == 0) | (a == 1)):
            bad = int(np.flatnonzero((a != 0) & (a != 1))[0])
            raise DataError(f"treatment indicator must be 0 or 1 (row {bad})")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DataError("dataset contains non-finite values")
        for arr in (self.y, self.x, self.a):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(float(self.y[i]), self.x[i], int(self.a[i])) for i in range(len(self))]

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise DataError("cannot build a dataset from zero samples")
        d = len(samples[0].x)
        for i, s in enumerate(samples):
            if len(s.x) != d:
                raise DataError(f"covariate length mismatch at sample {i}: {len(s.x)} != {d}")
        return cls(
            y=np.array([s.y for s in samples]),
            x=np.stack([s.x for s in samples]),
            a=np.array([s.a for s in samples]),
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.y[idx], self.x[idx], self.a[idx])


@dataclass(frozen=True)
class SplitPair:
    """Disjoint index sets: nuisance-fitting half and model-fitting half."""

    nuisance_idx: np.ndarray
    fit_idx: np.ndarray


def split_half(data: Dataset, seed: int | None = None, shuffle: bool = False) -> SplitPair:
    """Split a dataset into two disjoint halves covering all indices.

    Without shuffling, the nuisance half is the first ceil(N/2) indices
    (odd N gives the nuisance half the extra sample). With shuffling, a
    permutation seeded by ``seed`` is applied first; fixed seeds give
    identical splits.
    """
    n = len(data)
    if n < 2:
        raise DataError("insufficient data to split")
    order = np.arange(n)
    if shuffle:
        order = np.random.default_rng(seed).permutation(n)
    k = (n + 1) // 2
    return SplitPair(nuisance_idx=np.sort(order[:k]), fit_idx=np.sort(order[k:]))


@dataclass(frozen=True)
class ColumnSpec:
    """Names of the outcome / treatment columns and, optionally, the covariates.

    When ``covariates`` is None every remaining header column is treated as a
    covariate, in header order.
    """

    outcome: str = "y"
    treatment: str = "a"
    covariates: tuple[str, ...] | None = None

    @staticmethod
    def default_covariate_names(d: int) -> tuple[str, ...]:
        return tuple(f"x{j + 1}" for j in range(d))


def read_csv(path, schema: ColumnSpec = ColumnSpec()) -> Dataset:
    """Parse a CSV with one outcome, one treatment, and >=1 covariate columns.

    Rejects missing columns, unparseable cells (with the offending row
    number), non-{0,1} treatments, and non-finite values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for name in (schema.outcome, schema.treatment):
            if name not in header:
                raise DataError(f"{path}: missing column {name!r}")
        if schema.covariates is None:
            cov_names = [h for h in header if h not in (schema.outcome, schema.treatment)]
        else:
            cov_names = list(schema.covariates)
            for name in cov_names:
                if name not in header:
                    raise DataError(f"{path}: missing column {name!r}")
        if not cov_names:
            raise DataError(f"{path}: no covariate columns")
        y_col = header.index(schema.outcome)
        a_col = header.index(schema.treatment)
        x_cols = [header.index(name) for name in cov_names]

        ys, xs, as_ = [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {rownum}: expected {len(header)} cells, got {len(row)}")
            try:
                y = float(row[y_col])
                x = [float(row[j]) for j in x_cols]
            except ValueError as exc:
                raise DataError(f"{path}: row {rownum}: unparseable cell ({exc})") from None
            a_raw = row[a_col].strip()
            if a_raw not in ("0", "1"):
                try:
                    a_val = float(a_raw)
                except ValueError:
                    raise DataError(f"{path}: row {rownum}: unparseable treatment {a_raw!r}") from None
                if a_val not in (0.0, 1.0):
                    raise DataError(f"{path}: row {rownum}: treatment must be 0 or 1, got {a_raw}")
                a_raw = str(int(a_val))
            if not math.isfinite(y) or not all(math.isfinite(v) for v in x):
                raise DataError(f"{path}: row {rownum}: non-finite value")
            ys.append(y)
            xs.append(x)
            as_.append(int(a_raw))
    if not ys:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(ys), np.array(xs), np.array(as_))


def write_csv(data: Dataset, path) -> None:
    """Write ``y,a,x1,...,xd`` rows at 17 significant digits (round-trip exact)."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["y", "a"] + list(ColumnSpec.default_covariate_names(data.d)))
            for i in range(len(data)):
                row = [f"{data.y[i]:.17g}", str(int(data.a[i]))]
                row += [f"{v:.17g}" for v in data.x[i]]
                writer.writerow(row)
    except OSError as exc:
        raise DataError(f"failed to write {path}: {exc}") from exc
