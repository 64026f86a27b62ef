"""Ordered store of observed (parameters, gradient) records."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_vector

__all__ = ["GradientRecord", "GradientHistory"]


@dataclass(frozen=True)
class GradientRecord:
    """One observed gradient: where it was measured and what was measured.

    ``seq_iter`` is the sequential iteration that produced it and ``worker``
    the parallel slot within that iteration, so insertion order is
    reconstructible from the record itself.
    """

    theta: np.ndarray
    grad: np.ndarray
    seq_iter: int = 0
    worker: int = 0

    def __post_init__(self):
        theta = as_vector(self.theta, "theta")
        grad = as_vector(self.grad, "grad")
        if theta.shape != grad.shape:
            raise ValueError(
                f"theta and grad dimensions differ: {theta.shape[0]} vs {grad.shape[0]}"
            )
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "grad", grad)


@dataclass
class GradientHistory:
    """Insertion-ordered gradient records with an optional ring-buffer bound.

    When ``capacity`` is set, pushing beyond it evicts the oldest record.
    """

    capacity: int | None = None
    records: list[GradientRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity is not None and self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def dim(self) -> int | None:
        return self.records[0].theta.shape[0] if self.records else None

    def push(self, record: GradientRecord) -> None:
        """Append a record, evicting the oldest one if at capacity."""
        if self.records and record.theta.shape[0] != self.dim:
            raise ValueError(
                f"record dimension {record.theta.shape[0]} does not match history dimension {self.dim}"
            )
        self.records.append(record)
        if self.capacity is not None and len(self.records) > self.capacity:
            del self.records[0]

    def select_window(self, theta, size: int, mode: str = "recent") -> list[GradientRecord]:
        """The local window of at most ``size`` records used to fit the estimator.

        mode='recent' returns the most recent records; mode='nearest' the ones
        with the smallest Euclidean distance to ``theta`` (ties by recency).
        """
        if not self.records:
            raise ValueError("cannot select a window from an empty history")
        if size < 1:
            raise ValueError(f"window size must be >= 1, got {size}")
        if mode == "recent":
            return self.records[-size:]
        if mode == "nearest":
            q = as_vector(theta, "theta")
            dists = np.array([np.linalg.norm(r.theta - q) for r in self.records])
            # stable sort on (distance, -recency): later records win ties
            order = np.lexsort((-np.arange(len(self.records)), dists))
            chosen = sorted(order[:size])
            return [self.records[i] for i in chosen]
        raise ValueError(f"unknown window mode {mode!r}; expected 'recent' or 'nearest'")

    def thetas(self) -> np.ndarray:
        return np.stack([r.theta for r in self.records])

    def grads(self) -> np.ndarray:
        return np.stack([r.grad for r in self.records])
