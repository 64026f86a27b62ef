"""Gaussian-process posterior over a gradient field, decoupled per coordinate.

With a separable matrix kernel k(a, b) * I the d-output posterior collapses to
d identical scalar GPs sharing one n x n factorization, so a fit costs one
Cholesky of the window's Gram matrix and every query costs O(n^2 + n d).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from sklearn.base import BaseEstimator, RegressorMixin

from .history import GradientHistory
from .kernels import Kernel, MaternKernel, median_lengthscale
from .validation import as_matrix, as_vector

__all__ = ["GradientFieldEstimator", "SingularSystemError"]


class SingularSystemError(np.linalg.LinAlgError):
    """Factorization failed even after jitter escalation."""


def _stabilized_cholesky(gram: np.ndarray, noise: float, jitter: float,
                         jitter_max: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky of gram + (noise + jitter) I, escalating jitter x10 on failure.

    Returns the factor and the total diagonal shift actually used.
    """
    n = gram.shape[0]
    eye = np.eye(n)
    j = jitter
    while True:
        try:
            factor = cholesky(gram + (noise + j) * eye, lower=True)
            return factor, noise + j
        except np.linalg.LinAlgError:
            if j >= jitter_max:
                raise SingularSystemError(
                    f"kernel system of size {n} is singular even with jitter {j:g}"
                ) from None
            j = min(j * 10.0, jitter_max)


class GradientFieldEstimator(RegressorMixin, BaseEstimator):
    """GP regressor mapping parameter vectors to gradient vectors.

    Follows the sklearn estimator contract: hyperparameters in ``__init__``,
    state from :meth:`fit` in trailing-underscore attributes, so instances
    work with ``clone``, ``get_params`` and pipeline-style composition.

    Parameters
    ----------
    kernel : Kernel, optional
        Scalar covariance; defaults to Matern(nu=2.5, lengthscale=1).
    noise_sigma2 : float
        Variance of the per-coordinate Gaussian noise on observed gradients.
    jitter : float, optional
        Diagonal stabilizer added on top of ``noise_sigma2``. Defaults to
        1e-6 times the kernel output scale, escalating x10 up to 1e-2 times
        the output scale before raising :class:`SingularSystemError`.
    t0 : int
        Local window size used by :meth:`fit_from_history`.
    window_mode : {'recent', 'nearest'}
        How :meth:`fit_from_history` picks the window.
    lengthscale_mode : {'fixed', 'median'}
        'median' rescales the kernel lengthscale to the median pairwise
        distance of the window at fit time.
    """

    def __init__(self, kernel: Kernel | None = None, noise_sigma2: float = 0.0,
                 jitter: float | None = None, t0: int = 150,
                 window_mode: str = "recent", lengthscale_mode: str = "fixed"):
        self.kernel = kernel
        self.noise_sigma2 = noise_sigma2
        self.jitter = jitter
        self.t0 = t0
        self.window_mode = window_mode
        self.lengthscale_mode = lengthscale_mode

    # ------------------------------------------------------------------ fit

    def fit(self, X, y) -> "GradientFieldEstimator":
        """Fit the posterior on a window of observed gradients.

        X is the (n, d) array of parameter vectors, y the matching (n, d)
        array of observed gradients.
        """
        if self.noise_sigma2 < 0:
            raise ValueError(f"noise_sigma2 must be >= 0, got {self.noise_sigma2}")
        if self.t0 < 1:
            raise ValueError(f"t0 must be >= 1, got {self.t0}")
        X = as_matrix(X, "X")
        y = as_matrix(y, "y")
        if X.shape != y.shape:
            raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")

        kernel = self.kernel if self.kernel is not None else MaternKernel()
        if self.lengthscale_mode == "median":
            kernel = kernel.with_lengthscale(median_lengthscale(X, fallback=kernel.lengthscale))
        elif self.lengthscale_mode != "fixed":
            raise ValueError(f"unknown lengthscale_mode {self.lengthscale_mode!r}")

        scale = kernel.output_scale
        jitter = self.jitter if self.jitter is not None else 1e-6 * scale
        if not jitter > 0:
            raise ValueError(f"jitter must be positive, got {jitter}")

        gram = kernel.gram(X)
        self.factor_, self.noise_used_ = _stabilized_cholesky(
            gram, self.noise_sigma2, jitter, 1e-2 * scale
        )
        self.kernel_ = kernel
        self.X_ = X
        self.y_ = y
        self.n_features_in_ = X.shape[1]
        return self

    def fit_from_history(self, history: GradientHistory, theta) -> "GradientFieldEstimator":
        """Select the local window nearest/most recent to ``theta`` and fit on it."""
        window = history.select_window(theta, self.t0, self.window_mode)
        X = np.stack([r.theta for r in window])
        y = np.stack([r.grad for r in window])
        return self.fit(X, y)

    # -------------------------------------------------------------- queries

    def _check_query(self, X):
        if not hasattr(self, "factor_"):
            raise RuntimeError("estimator is not fitted")
        single = np.asarray(X).ndim == 1
        Q = as_vector(X, "X")[None, :] if single else as_matrix(X, "X")
        if Q.shape[1] != self.n_features_in_:
            raise ValueError(
                f"query dimension {Q.shape[1]} does not match fitted dimension {self.n_features_in_}"
            )
        return Q, single

    def predict(self, X) -> np.ndarray:
        """Posterior mean gradient at one query vector or an (m, d) batch.

        Reuses the cached factorization: two triangular solves per query,
        never a new factorization.
        """
        Q, single = self._check_query(X)
        kq = np.stack([self.kernel_.cross(q, self.X_) for q in Q])  # (m, n)
        w = cho_solve((self.factor_, True), kq.T)                   # (n, m)
        mean = w.T @ self.y_                                        # (m, d)
        return mean[0] if single else mean

    def predict_variance(self, X):
        """Scalar posterior variance multiplier at the query, clamped at zero.

        This is the per-coordinate variance of the decoupled posterior; its
        value also equals the norm of the d x d posterior covariance there.
        """
        Q, single = self._check_query(X)
        kq = np.stack([self.kernel_.cross(q, self.X_) for q in Q])  # (m, n)
        v = solve_triangular(self.factor_, kq.T, lower=True)        # (n, m)
        prior = self.kernel_(Q[0], Q[0])
        var = prior - np.sum(v * v, axis=0)
        var = np.maximum(var, 0.0)
        return float(var[0]) if single else var

    def predict_variance_raw(self, X):
        """Posterior variance without the clamp at zero (diagnostics use)."""
        Q, single = self._check_query(X)
        kq = np.stack([self.kernel_.cross(q, self.X_) for q in Q])
        v = solve_triangular(self.factor_, kq.T, lower=True)
        prior = self.kernel_(Q[0], Q[0])
        var = prior - np.sum(v * v, axis=0)
        return float(var[0]) if single else var
