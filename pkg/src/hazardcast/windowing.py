"""Sliding-window samples, chronological splits, and batching."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .ingest import CountyDayTable


class SplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WindowSample:
    """One model input: L standardized daily rows plus the 6 forward counts.

    ``anchor_date`` is the date of the last input row; the target counts the
    hazard-indicated days in the ``window_days`` days after it.
    """

    inputs: np.ndarray          # (L, F)
    target: np.ndarray          # (6,) nonnegative ints
    anchor_date: dt.date
    dates: list[dt.date]        # per input row, oldest first


@dataclass
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.15
    test_frac: float = 0.15

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if any(f <= 0 for f in fracs):
            raise SplitError(f"split fractions must be positive, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must sum to 1, got {sum(fracs)}")


def make_windows(table: CountyDayTable, length: int, stride: int = 1) -> list[WindowSample]:
    """All sliding windows over the labeled part of the table.

    Window k covers rows [k*stride, k*stride + length); its target is the
    forward count vector of the last covered row. The final ``window_days``
    rows of the table carry no targets and never anchor a sample.
    """
    if length < 1 or stride < 1:
        raise ValueError(f"length and stride must be >= 1, got {length}, {stride}")
    if table.targets is None:
        raise ValueError("table has no targets; run build_targets first")
    n_labeled = table.n_labeled
    if n_labeled < length:
        raise ValueError(
            f"table has {n_labeled} labeled days but windows of length {length} need at "
            f"least {length + (table.window_days or 0)} days in total")
    count = (n_labeled - length) // stride + 1
    samples = []
    for k in range(count):
        lo = k * stride
        hi = lo + length
        samples.append(WindowSample(
            inputs=table.features[lo:hi].copy(),
            target=table.targets[hi - 1].copy(),
            anchor_date=table.dates[hi - 1],
            dates=list(table.dates[lo:hi]),
        ))
    return samples


def chrono_split(samples: list[WindowSample], spec: SplitSpec | None = None
                 ) -> tuple[list[WindowSample], list[WindowSample], list[WindowSample]]:
    """Contiguous train/val/test split by anchor-date order.

    Sizes are floor(frac * N) with the remainder assigned to train. Input
    windows of val/test samples may reach back into the train date range
    (unavoidable with sliding windows); assignment is by anchor date only,
    so targets never overlap across partitions.
    """
    spec = spec or SplitSpec()
    for a, b in zip(samples, samples[1:]):
        if a.anchor_date > b.anchor_date:
            raise SplitError("samples must be sorted by anchor_date")
    n = len(samples)
    n_train = int(spec.train_frac * n)
    n_val = int(spec.val_frac * n)
    n_test = int(spec.test_frac * n)
    n_train += n - (n_train + n_val + n_test)
    if min(n_train, n_val, n_test) == 0:
        raise SplitError(f"split of {n} samples leaves an empty partition "
                         f"(sizes {n_train}/{n_val}/{n_test})")
    return (samples[:n_train],
            samples[n_train:n_train + n_val],
            samples[n_train + n_val:])


def batch(samples: list[WindowSample], batch_size: int, shuffle: bool = False,
          seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Chunk samples into (B, L, F) inputs and (B, 6) targets.

    Order is preserved unless ``shuffle``; shuffling is a seeded permutation
    so identical seeds give identical batch streams. The last batch may be
    smaller.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(samples))
    if shuffle:
        order = np.random.default_rng(seed).permutation(order)
    batches = []
    for lo in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[lo:lo + batch_size]]
        inputs = np.stack([s.inputs for s in chunk])
        targets = np.stack([s.target for s in chunk])
        batches.append((inputs, targets))
    return batches
