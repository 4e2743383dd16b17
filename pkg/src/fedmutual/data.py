"""Datasets, normalisation and the stratified fold schedule."""
from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

STD_FLOOR = 1e-12


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DataError(
                f"features {self.features.shape} and labels {self.labels.shape} do not align"
            )
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise DataError("labels must be 0 or 1")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def class_counts(self) -> tuple[int, int]:
        n1 = int(self.labels.sum())
        return len(self) - n1, n1

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.labels[idx])


def fold_count(clients: int, rounds: int) -> int:
    """One initial global fold plus (clients + 1) folds per round."""
    if clients < 1 or rounds < 1:
        raise ValueError(f"clients and rounds must be >= 1, got {clients}, {rounds}")
    return (1 + clients) * rounds + 1


@dataclass
class FoldSchedule:
    folds: deque
    remainder: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    consumed_count: int = 0

    def __len__(self) -> int:
        return len(self.folds)

    def pop(self) -> np.ndarray:
        if not self.folds:
            raise IndexError(
                f"fold schedule exhausted after {self.consumed_count} folds; "
                "fold budget and round loop disagree"
            )
        self.consumed_count += 1
        return self.folds.popleft()


def pop_fold(schedule: FoldSchedule) -> np.ndarray:
    return schedule.pop()


def stratified_kfold(dataset: Dataset, clients: int, rounds: int, seed: int = 0) -> FoldSchedule:
    """Split ``dataset`` into ``(1 + clients) * rounds + 1`` equal stratified folds.

    Each class is shuffled and dealt round-robin across folds; members left
    over once every fold holds ``n_class // k`` of them are discarded so all
    folds have the same size.
    """
    k = fold_count(clients, rounds)
    rng = np.random.default_rng(seed)
    counts = dataset.class_counts
    if min(counts) < k:
        raise DataError(
            f"{k} folds need at least {k} examples of each class "
            f"(minimum dataset size {2 * k}); got class counts {counts}"
        )
    per_fold: list[list[np.ndarray]] = [[] for _ in range(k)]
    leftover = []
    for cls in (0, 1):
        members = np.flatnonzero(dataset.labels == cls)
        members = members[rng.permutation(members.size)]
        usable = (members.size // k) * k
        for f in range(k):
            per_fold[f].append(members[f:usable:k])
        leftover.append(members[usable:])
    folds = deque(np.sort(np.concatenate(parts)) for parts in per_fold)
    return FoldSchedule(folds, np.sort(np.concatenate(leftover)))


def generate_synthetic(n: int, dim: int, separation: float, seed: int = 0) -> Dataset:
    """Two unit-variance Gaussian classes, means ``separation`` apart on axis 0."""
    if n <= 0 or n % 2:
        raise DataError(f"n must be a positive even number, got {n}")
    if dim < 2:
        raise DataError(f"dim must be >= 2, got {dim}")
    if separation < 0:
        raise DataError(f"separation must be >= 0, got {separation}")
    rng = np.random.default_rng(seed)
    half = n // 2
    x = rng.standard_normal((n, dim))
    x[:half, 0] -= separation / 2
    x[half:, 0] += separation / 2
    y = np.repeat([0, 1], half)
    order = rng.permutation(n)
    return Dataset(x[order], y[order])


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, dataset: Dataset) -> Dataset:
        return Dataset((dataset.features - self.mean) / self.std, dataset.labels.copy())


def normalize(dataset: Dataset) -> tuple[Dataset, NormStats]:
    """Standardise each column to zero mean / unit population variance."""
    if len(dataset) == 0:
        raise DataError("cannot normalise an empty dataset")
    mean = dataset.features.mean(axis=0)
    std = np.maximum(dataset.features.std(axis=0), STD_FLOOR)
    stats = NormStats(mean, std)
    return stats.apply(dataset), stats


def load_csv(path: Union[str, Path]) -> Dataset:
    """Read ``f0,...,f{d-1},label``; rows are numbered from 1 after the header."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if not header or header[-1] != "label":
            raise DataError(f"{path}: last header column must be 'label', got {header[-1:]}")
        width = len(header)
        feats, labels = [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise DataError(f"{path}: row {row_no} has {len(row)} cells, expected {width}")
            values = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {row_no}, column {col!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {row_no}, column {col!r}: non-finite value")
                values.append(v)
            if values[-1] not in (0.0, 1.0):
                raise DataError(f"{path}: row {row_no}: label must be 0 or 1, got {row[-1]!r}")
            feats.append(values[:-1])
            labels.append(int(values[-1]))
    if not labels:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(feats, dtype=float).reshape(len(labels), width - 1), np.array(labels))


def write_csv(dataset: Dataset, path: Union[str, Path]) -> None:
    header = [f"f{i}" for i in range(dataset.dim)] + ["label"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def stratified_holdout(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Split off ``fraction`` of each class as a held-out set."""
    if not 0 < fraction < 1:
        raise DataError(f"holdout fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    keep, hold = [], []
    for cls in (0, 1):
        members = np.flatnonzero(dataset.labels == cls)
        members = members[rng.permutation(members.size)]
        cut = int(round(members.size * fraction))
        hold.append(members[:cut])
        keep.append(members[cut:])
    return dataset.subset(np.sort(np.concatenate(keep))), dataset.subset(np.sort(np.concatenate(hold)))
