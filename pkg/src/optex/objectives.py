"""Benchmark objectives with exact gradients and seeded gradient noise.

Values are deterministic in theta; stochasticity enters through gradients
only — additive Gaussian noise keyed by the batch for the synthetic
functions, minibatch subsampling for the logistic-regression objective.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .validation import check_dim

__all__ = [
    "Batch",
    "make_batch",
    "Objective",
    "Ackley",
    "RosenbrockPaper",
    "RosenbrockStandard",
    "Quadratic",
    "LogisticBlobs",
    "make_objective",
]


@dataclass(frozen=True)
class Batch:
    """Identifies one iteration's randomness: a noise seed and, for data-driven
    objectives, the minibatch rows. A given Batch always reproduces the same
    noise realization and the same data rows."""

    noise_key: int
    indices: np.ndarray | None = None


def make_batch(objective: "Objective", run_seed: int, seq_iter: int) -> Batch:
    """Deterministic batch for (run_seed, seq_iter); shared by all workers of an iteration."""
    key = int(np.random.SeedSequence([int(run_seed), int(seq_iter)]).generate_state(1, np.uint64)[0])
    indices = objective._draw_indices(key)
    return Batch(noise_key=key, indices=indices)


def _theta_fingerprint(theta: np.ndarray) -> int:
    digest = hashlib.blake2b(theta.tobytes(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Objective:
    """Base objective: subclasses provide the value and the exact gradient."""

    name: str = ""
    f_star: float | None = None

    def __init__(self, dim: int, noise_sigma: float = 0.0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
        self.dim = dim
        self.noise_sigma = noise_sigma

    # subclass surface ----------------------------------------------------

    def _value(self, theta: np.ndarray, batch: Batch | None) -> float:
        raise NotImplementedError

    def _clean_gradient(self, theta: np.ndarray, batch: Batch | None) -> np.ndarray:
        raise NotImplementedError

    def _draw_indices(self, noise_key: int) -> np.ndarray | None:
        return None

    # public surface ------------------------------------------------------

    def value(self, theta, batch: Batch | None = None) -> float:
        theta = check_dim(theta, self.dim, "theta")
        return float(self._value(theta, batch))

    def gradient(self, theta, batch: Batch | None = None) -> np.ndarray:
        """Exact gradient plus seeded Gaussian noise; bitwise-reproducible per (theta, batch)."""
        theta = check_dim(theta, self.dim, "theta")
        grad = self._clean_gradient(theta, batch)
        if self.noise_sigma > 0 and batch is not None:
            seq = np.random.SeedSequence([batch.noise_key, _theta_fingerprint(theta)])
            noise = np.random.default_rng(seq).normal(0.0, self.noise_sigma, self.dim)
            grad = grad + noise
        return grad

    def clean_gradient(self, theta, batch: Batch | None = None) -> np.ndarray:
        theta = check_dim(theta, self.dim, "theta")
        return self._clean_gradient(theta, batch)


class Ackley(Objective):
    """Ackley function, normalized so the minimum is 0 at the origin.

    F = -20 exp(-0.2 sqrt(mean(theta^2))) - exp(mean(cos(2 pi theta))) + 20 + e
    """

    name = "ackley"
    f_star = 0.0

    def _value(self, theta, batch):
        rms = np.sqrt(np.mean(theta * theta))
        return (
            -20.0 * np.exp(-0.2 * rms)
            - np.exp(np.mean(np.cos(2.0 * np.pi * theta)))
            + 20.0
            + np.e
        )

    def _clean_gradient(self, theta, batch):
        norm = np.linalg.norm(theta)
        if norm < 1e-12:
            # the rms term is non-differentiable at 0; 0 is the minimizer
            return np.zeros(self.dim)
        d = self.dim
        rms = norm / np.sqrt(d)
        term1 = 4.0 * np.exp(-0.2 * rms) * theta / (d * rms)
        term2 = (2.0 * np.pi / d) * np.sin(2.0 * np.pi * theta) * np.exp(
            np.mean(np.cos(2.0 * np.pi * theta))
        )
        return term1 + term2


class RosenbrockPaper(Objective):
    """Dimension-normalized chained quadratic:

    F = (1/d) sum_i [100 (theta_{i+1} - theta_i)^2 + (1 - theta_i)^2]
    """

    name = "rosenbrock_paper"
    f_star = 0.0

    def __init__(self, dim, noise_sigma=0.0):
        if dim < 2:
            raise ValueError(f"rosenbrock requires dim >= 2, got {dim}")
        super().__init__(dim, noise_sigma)

    def _value(self, theta, batch):
        diff = theta[1:] - theta[:-1]
        return (100.0 * diff @ diff + np.sum((1.0 - theta[:-1]) ** 2)) / self.dim

    def _clean_gradient(self, theta, batch):
        diff = theta[1:] - theta[:-1]
        g = np.zeros(self.dim)
        g[:-1] = -200.0 * diff - 2.0 * (1.0 - theta[:-1])
        g[1:] += 200.0 * diff
        return g / self.dim


class RosenbrockStandard(Objective):
    """Classical banana valley with the same 1/d normalization:

    F = (1/d) sum_i [100 (theta_{i+1} - theta_i^2)^2 + (1 - theta_i)^2]
    """

    name = "rosenbrock_standard"
    f_star = 0.0

    def __init__(self, dim, noise_sigma=0.0):
        if dim < 2:
            raise ValueError(f"rosenbrock requires dim >= 2, got {dim}")
        super().__init__(dim, noise_sigma)

    def _value(self, theta, batch):
        diff = theta[1:] - theta[:-1] ** 2
        return (100.0 * diff @ diff + np.sum((1.0 - theta[:-1]) ** 2)) / self.dim

    def _clean_gradient(self, theta, batch):
        diff = theta[1:] - theta[:-1] ** 2
        g = np.zeros(self.dim)
        g[:-1] = -400.0 * theta[:-1] * diff - 2.0 * (1.0 - theta[:-1])
        g[1:] += 200.0 * diff
        return g / self.dim


class Quadratic(Objective):
    """F = (L/2) ||theta||^2, the curvature-L worst-case quadratic."""

    name = "quadratic"
    f_star = 0.0

    def __init__(self, dim, noise_sigma=0.0, L: float = 1.0):
        if not L > 0:
            raise ValueError(f"L must be positive, got {L}")
        super().__init__(dim, noise_sigma)
        self.L = L

    def _value(self, theta, batch):
        return 0.5 * self.L * theta @ theta

    def _clean_gradient(self, theta, batch):
        return self.L * theta


class LogisticBlobs(Objective):
    """Logistic regression on a self-generated two-blob dataset.

    2000 points in ``dim`` features, labels +-1, cluster centers at
    +-1.5/sqrt(dim). The batch's ``indices`` select the minibatch; value and
    gradient are the minibatch mean cross-entropy and its exact gradient.
    No analytic minimum, so ``f_star`` stays None.
    """

    name = "logistic_blobs"
    f_star = None
    n_points = 2000

    def __init__(self, dim, noise_sigma=0.0, data_seed: int = 0, batch_size: int = 128,
                 data_csv: str | None = None):
        super().__init__(dim, noise_sigma)
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.data_seed = data_seed
        self.batch_size = min(batch_size, self.n_points)
        if data_csv is not None:
            self.features, self.labels = self._read_csv(data_csv)
        else:
            rng = np.random.default_rng(np.random.SeedSequence([int(data_seed), 0xB10B]))
            center = 1.5 / np.sqrt(dim) * np.ones(dim)
            half = self.n_points // 2
            pos = center + rng.normal(size=(half, dim))
            neg = -center + rng.normal(size=(self.n_points - half, dim))
            self.features = np.vstack([pos, neg])
            self.labels = np.concatenate([np.ones(half), -np.ones(self.n_points - half)])

    def _rows(self, batch: Batch | None):
        if batch is None or batch.indices is None:
            return self.features, self.labels
        return self.features[batch.indices], self.labels[batch.indices]

    def _draw_indices(self, noise_key: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([noise_key, 0xDA7A]))
        return rng.choice(self.n_points, size=self.batch_size, replace=False)

    def _value(self, theta, batch):
        x, y = self._rows(batch)
        margins = y * (x @ theta)
        return float(np.mean(np.logaddexp(0.0, -margins)))

    def _clean_gradient(self, theta, batch):
        x, y = self._rows(batch)
        margins = y * (x @ theta)
        weights = y * expit(-margins)
        return -(x.T @ weights) / x.shape[0]

    def dump_dataset(self, path) -> None:
        """Write the dataset as CSV with columns feat_0..feat_{d-1}, label."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"feat_{j}" for j in range(self.dim)] + ["label"])
            for row, label in zip(self.features, self.labels):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(label))])

    def _read_csv(self, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[-1] != "label" or len(header) != self.dim + 1:
                raise ValueError(f"dataset CSV {path} does not match dim={self.dim}")
            rows = [[float(v) for v in row] for row in reader]
        data = np.asarray(rows)
        if data.shape[0] != self.n_points:
            self.n_points = data.shape[0]
        return data[:, :-1], data[:, -1]


_REGISTRY = {
    "ackley": Ackley,
    "rosenbrock_paper": RosenbrockPaper,
    "rosenbrock_standard": RosenbrockStandard,
    "quadratic": Quadratic,
    "logistic_blobs": LogisticBlobs,
}


def make_objective(name: str, dim: int, noise_sigma: float = 0.0, L: float = 1.0,
                   data_seed: int = 0, batch_size: int = 128,
                   data_csv: str | None = None) -> Objective:
    """Build an objective from plain config values."""
    key = name.lower()
    if key not in _REGISTRY:
        raise ValueError(f"unknown objective {name!r}; expected one of {sorted(_REGISTRY)}")
    if key == "quadratic":
        return Quadratic(dim, noise_sigma, L=L)
    if key == "logistic_blobs":
        return LogisticBlobs(dim, noise_sigma, data_seed=data_seed,
                             batch_size=batch_size, data_csv=data_csv)
    return _REGISTRY[key](dim, noise_sigma)
