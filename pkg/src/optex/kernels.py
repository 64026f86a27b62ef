"""Stationary scalar kernels and their Gram / cross-covariance constructions.

All kernels are functions of the Euclidean distance between full parameter
vectors and satisfy ``k(x, x) == output_scale`` and ``|k(x, y)| <= output_scale``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator

from .validation import as_matrix, as_vector

__all__ = ["Kernel", "RBFKernel", "MaternKernel", "make_kernel", "median_lengthscale"]


class Kernel(BaseEstimator):
    """Base class for stationary kernels k(a, b) = profile(||a - b||).

    Subclasses implement :meth:`_profile`, mapping an array of nonnegative
    distances to kernel values. ``get_params``/``set_params`` come from
    :class:`sklearn.base.BaseEstimator`, so kernels compose with sklearn
    meta-estimators and ``sklearn.base.clone``.
    """

    lengthscale: float
    output_scale: float

    def _profile(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self) -> None:
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.output_scale > 0:
            raise ValueError(f"output_scale must be positive, got {self.output_scale}")

    def __call__(self, a, b) -> float:
        """Evaluate k(a, b) for two single points."""
        self._check()
        a = as_vector(a, "a")
        b = as_vector(b, "b")
        if a.shape != b.shape:
            raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
        r = np.linalg.norm(a - b)
        return float(self._profile(np.asarray([r]))[0])

    def gram(self, points) -> np.ndarray:
        """Symmetric PSD matrix of pairwise kernel values.

        ``points`` is an (n, d) array or a sequence of n d-vectors; n >= 1.
        """
        self._check()
        x = as_matrix(points, "points")
        r = cdist(x, x)
        k = self._profile(r)
        # exact symmetry regardless of cdist round-off
        return (k + k.T) / 2.0

    def cross(self, query, points) -> np.ndarray:
        """Vector [k(query, p) for p in points]."""
        self._check()
        q = as_vector(query, "query")
        x = as_matrix(points, "points")
        if x.shape[1] != q.shape[0]:
            raise ValueError(f"dimension mismatch: query has d={q.shape[0]}, points have d={x.shape[1]}")
        r = cdist(q[None, :], x)[0]
        return self._profile(r)

    def with_lengthscale(self, lengthscale: float) -> "Kernel":
        """A copy of this kernel with a different lengthscale."""
        params = self.get_params()
        params["lengthscale"] = float(lengthscale)
        return type(self)(**params)


class RBFKernel(Kernel):
    """Squared-exponential kernel k(r) = output_scale * exp(-r^2 / (2 l^2))."""

    def __init__(self, lengthscale: float = 1.0, output_scale: float = 1.0):
        self.lengthscale = lengthscale
        self.output_scale = output_scale

    def _profile(self, r: np.ndarray) -> np.ndarray:
        z = r / self.lengthscale
        return self.output_scale * np.exp(-0.5 * z * z)


class MaternKernel(Kernel):
    """Matern kernel with smoothness nu in {0.5, 1.5, 2.5}.

    nu=0.5 is the exponential kernel; 1.5 and 2.5 are the once- and
    twice-differentiable closed forms.
    """

    _SUPPORTED_NU = (0.5, 1.5, 2.5)

    def __init__(self, lengthscale: float = 1.0, output_scale: float = 1.0, nu: float = 2.5):
        self.lengthscale = lengthscale
        self.output_scale = output_scale
        self.nu = nu

    def _check(self) -> None:
        super()._check()
        if self.nu not in self._SUPPORTED_NU:
            raise ValueError(f"nu must be one of {self._SUPPORTED_NU}, got {self.nu}")

    def _profile(self, r: np.ndarray) -> np.ndarray:
        z = r / self.lengthscale
        if self.nu == 0.5:
            k = np.exp(-z)
        elif self.nu == 1.5:
            s = math.sqrt(3.0) * z
            k = (1.0 + s) * np.exp(-s)
        else:  # nu == 2.5
            s = math.sqrt(5.0) * z
            k = (1.0 + s + s * s / 3.0) * np.exp(-s)
        return self.output_scale * k


def make_kernel(family: str = "matern", lengthscale: float = 1.0,
                output_scale: float = 1.0, nu: float = 2.5) -> Kernel:
    """Build a kernel from plain config values."""
    family = family.lower()
    if family == "rbf":
        return RBFKernel(lengthscale=lengthscale, output_scale=output_scale)
    if family == "matern":
        return MaternKernel(lengthscale=lengthscale, output_scale=output_scale, nu=nu)
    raise ValueError(f"unknown kernel family {family!r}; expected 'rbf' or 'matern'")


def median_lengthscale(points, fallback: float = 1.0) -> float:
    """Median pairwise Euclidean distance of a point set.

    Returns ``fallback`` when fewer than two points are given or all points
    coincide, so the result is always a valid lengthscale.
    """
    x = as_matrix(points, "points")
    n = x.shape[0]
    if n < 2:
        return float(fallback)
    d = cdist(x, x)
    vals = d[np.triu_indices(n, k=1)]
    med = float(np.median(vals))
    return med if med > 0 else float(fallback)
