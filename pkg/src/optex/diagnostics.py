"""Numeric cross-checks of the estimator's math at desk scale.

The dense multi-output posterior here is deliberately brute force (explicit
nd x nd Kronecker matrices, direct solves): it is the ground truth that the
decoupled production path in :mod:`optex.estimator` is verified against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import GradientFieldEstimator
from .kernels import Kernel, MaternKernel, RBFKernel
from .validation import as_matrix, as_vector

__all__ = [
    "kron_posterior_oracle",
    "information_gain",
    "information_gain_entropy_oracle",
    "error_vs_t0",
    "ErrorVsT0Result",
    "speedup_table",
    "SpeedupRow",
    "TheoryParams",
    "variance_growth_sequence",
    "variance_envelope",
]

ORACLE_MAX_ND = 64
ENTROPY_ORACLE_MAX_ND = 16


def kron_posterior_oracle(thetas, grads, kernel: Kernel, sigma2: float, query):
    """Full multi-output GP posterior via explicit Kronecker construction.

    Builds the nd x nd joint covariance of the observations under the
    separable matrix kernel and solves it densely. Returns (mean d-vector,
    d x d covariance). Small scale only: n*d <= 64.
    """
    X = as_matrix(thetas, "thetas")
    G = as_matrix(grads, "grads")
    q = as_vector(query, "query")
    n, d = X.shape
    if G.shape != (n, d):
        raise ValueError(f"grads shape {G.shape} does not match thetas shape {X.shape}")
    if q.shape[0] != d:
        raise ValueError(f"query dimension {q.shape[0]} does not match d={d}")
    if n * d > ORACLE_MAX_ND:
        raise ValueError(f"oracle limited to n*d <= {ORACLE_MAX_ND}, got {n * d}")

    eye_d = np.eye(d)
    big = np.kron(kernel.gram(X), eye_d) + sigma2 * np.eye(n * d)
    vq = np.kron(kernel.cross(q, X)[None, :], eye_d)  # (d, nd)
    # observations stacked record-major to match the Kronecker block order
    y = G.reshape(-1)
    mean = vq @ np.linalg.solve(big, y)
    cov = kernel(q, q) * eye_d - vq @ np.linalg.solve(big, vq.T)
    return mean, cov


def information_gain(kernel: Kernel, points, sigma2: float, d: int) -> float:
    """(d/2) log det(I + K/sigma^2) for the given point set."""
    if sigma2 <= 0:
        raise ValueError(f"information gain requires sigma2 > 0, got {sigma2}")
    K = kernel.gram(points)
    n = K.shape[0]
    sign, logdet = np.linalg.slogdet(np.eye(n) + K / sigma2)
    if sign <= 0:
        raise np.linalg.LinAlgError("I + K/sigma^2 is not positive definite")
    return 0.5 * d * logdet


def information_gain_entropy_oracle(kernel: Kernel, points, sigma2: float, d: int) -> float:
    """Same quantity as an entropy difference of dense nd x nd Gaussians.

    H(observations) - H(observations | field values), each entropy computed
    from the explicit joint covariance. Small scale only: n*d <= 16.
    """
    if sigma2 <= 0:
        raise ValueError(f"information gain requires sigma2 > 0, got {sigma2}")
    X = as_matrix(points, "points")
    n, dim = X.shape
    if n * d > ENTROPY_ORACLE_MAX_ND:
        raise ValueError(f"entropy oracle limited to n*d <= {ENTROPY_ORACLE_MAX_ND}, got {n * d}")
    cov_obs = np.kron(kernel.gram(X) + sigma2 * np.eye(n), np.eye(d))
    _, logdet_obs = np.linalg.slogdet(2.0 * math.pi * math.e * cov_obs)
    _, logdet_cond = np.linalg.slogdet(2.0 * math.pi * math.e * sigma2 * np.eye(n * d))
    return 0.5 * logdet_obs - 0.5 * logdet_cond


# ---------------------------------------------------------------- error vs T0

@dataclass
class ErrorVsT0Result:
    t0_grid: list[int]
    medians: np.ndarray            # median over trials of per-trial median error
    per_trial: np.ndarray          # (trials, len(t0_grid))


def error_vs_t0(kernel: Kernel, sigma2: float, d: int, t0_grid, trials: int,
                seed: int, n_queries: int = 20, query_mode: str = "heldout") -> ErrorVsT0Result:
    """Posterior-mean error against window size on gradient fields drawn from the prior.

    Each trial samples one exact gradient field jointly at all training and
    query locations (per-coordinate Cholesky of the full Gram), observes the
    training gradients under the configured noise, then measures the error of
    the fitted posterior mean at the queries for every window size in
    ``t0_grid``. Windows are nested subsets of the same trial's points.
    """
    t0_grid = [int(t) for t in t0_grid]
    if any(t < 1 for t in t0_grid):
        raise ValueError(f"window sizes must be >= 1, got {t0_grid}")
    if t0_grid != sorted(t0_grid):
        raise ValueError(f"t0_grid must be ascending, got {t0_grid}")
    if d > 8:
        raise ValueError(f"exact field sampling limited to d <= 8, got {d}")
    if query_mode not in ("heldout", "observed"):
        raise ValueError(f"unknown query_mode {query_mode!r}")

    n_train = max(t0_grid)
    scale = kernel.output_scale
    sigma = math.sqrt(sigma2)
    per_trial = np.empty((trials, len(t0_grid)))

    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), trial]))
        extra = n_queries if query_mode == "heldout" else 0
        pts = rng.uniform(-1.0, 1.0, (n_train + extra, d))
        # exact joint sample of the field: coordinates are independent GPs
        gram = kernel.gram(pts) + 1e-10 * scale * np.eye(len(pts))
        factor = np.linalg.cholesky(gram)
        field = factor @ rng.normal(size=(len(pts), d))
        obs = field[:n_train]
        if sigma > 0:
            obs = obs + sigma * rng.normal(size=obs.shape)

        est = GradientFieldEstimator(kernel=kernel, noise_sigma2=sigma2, jitter=1e-10 * scale)
        for j, t0 in enumerate(t0_grid):
            if query_mode == "heldout":
                queries, truth = pts[n_train:], field[n_train:]
            else:
                m = min(n_queries, t0)
                queries, truth = pts[:m], field[:m]
            est.fit(pts[:t0], obs[:t0])
            pred = est.predict(queries)
            errs = np.linalg.norm(pred - truth, axis=1)
            per_trial[trial, j] = float(np.median(errs))

    return ErrorVsT0Result(t0_grid=t0_grid,
                           medians=np.median(per_trial, axis=0),
                           per_trial=per_trial)


# ---------------------------------------------------------------- speedup

@dataclass
class SpeedupRow:
    method: str
    iterations: float       # math.inf when the threshold was never reached
    speedup: float          # vanilla iterations / this method's iterations
    reached: bool


def speedup_table(traces, gap_threshold: float) -> list[SpeedupRow]:
    """Iterations-to-threshold and speedup versus the vanilla trace."""
    by_method = {tr.method: tr for tr in traces}
    if "vanilla" not in by_method:
        raise ValueError("speedup table requires a vanilla trace as the reference")

    def iters(tr):
        hit = tr.iterations_to_gap(gap_threshold)
        return (math.inf, False) if hit is None else (float(hit), True)

    vanilla_iters, _ = iters(by_method["vanilla"])
    rows = []
    for tr in traces:
        it, reached = iters(tr)
        speedup = vanilla_iters / it if it > 0 else math.inf
        rows.append(SpeedupRow(method=tr.method, iterations=it, speedup=speedup, reached=reached))
    return rows


# ---------------------------------------------------------------- theory values

@dataclass(frozen=True)
class TheoryParams:
    """Calculator for the analysis-side constants; informational only."""

    d: int
    delta: float = 0.1
    kappa: float = 1.0
    sigma2: float = 1.0
    L: float | None = None
    Delta: float | None = None
    N: int | None = None
    t0: int | None = None
    gamma: float | None = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")

    @property
    def alpha(self) -> float:
        return self.d + (math.sqrt(self.d) + 1.0) * math.log(1.0 / self.delta)

    @property
    def beta(self) -> float:
        return max(self.kappa, self.sigma2)

    @property
    def rho(self) -> float:
        if self.N is None or self.t0 is None or self.gamma is None or self.sigma2 <= 0:
            raise ValueError("rho requires N, t0, gamma and sigma2 > 0")
        return (1.0 - 1.0 / self.N) * 4.0 * self.beta * self.gamma / (self.sigma2 * self.t0) \
            + 1.0 / self.N

    def error_bound(self, variance_norm: float) -> float:
        """High-probability estimation-error radius for a given variance norm."""
        return math.sqrt(self.alpha * variance_norm)

    def variance_floor(self, t0: int) -> float:
        """Theoretical lower bound on the variance norm after t0 - 1 observations."""
        if self.sigma2 <= 0:
            raise ValueError("variance floor requires sigma2 > 0")
        return self.kappa / (self.kappa + 1.0 / self.sigma2) ** (t0 - 1)

    def step_size(self, T: int) -> float:
        """Analysis-suggested SGD learning rate for horizon T."""
        if self.Delta is None or self.L is None:
            raise ValueError("step_size requires Delta and L")
        return math.sqrt(self.Delta / (self.N * self.L * T * self.sigma2 * self.rho))


# ----------------------------------------------------- variance property checks

def variance_growth_sequence(kernel: Kernel, sigma2: float, points, query,
                             jitter: float = 1e-12) -> np.ndarray:
    """Posterior variance at a fixed query as the window grows one point at a time.

    Entry 0 is the prior variance; entry i the variance after conditioning on
    the first i points. Gradient values do not affect variances, so zeros are
    used as targets.
    """
    pts = as_matrix(points, "points")
    n, d = pts.shape
    est = GradientFieldEstimator(kernel=kernel, noise_sigma2=sigma2, jitter=jitter)
    zeros = np.zeros((n, d))
    out = np.empty(n + 1)
    out[0] = kernel(query, query)
    for i in range(1, n + 1):
        est.fit(pts[:i], zeros[:i])
        out[i] = est.predict_variance(query)
    return out


def variance_envelope(kernel: Kernel, sigma2: float, points,
                      jitter: float = 1e-12) -> tuple[float, float]:
    """Running mean of next-point posterior variances and its information bound.

    Returns (mean of var_i at point i+1 for i = 0..n-1, bound) where the
    bound is 4 max{kappa, sigma2} gamma_n / (d n) with gamma_n computed for
    the same point set at the same effective noise.
    """
    pts = as_matrix(points, "points")
    n, d = pts.shape
    eff = sigma2 + jitter
    est = GradientFieldEstimator(kernel=kernel, noise_sigma2=sigma2, jitter=jitter)
    zeros = np.zeros((n, d))
    vals = np.empty(n)
    vals[0] = kernel(pts[0], pts[0])
    for i in range(1, n):
        est.fit(pts[:i], zeros[:i])
        vals[i] = est.predict_variance(pts[i])
    gamma = information_gain(kernel, pts, eff, d)
    bound = 4.0 * max(kernel.output_scale, eff) * gamma / (d * n)
    return float(np.mean(vals)), bound


def default_kernels(lengthscale: float = 1.0, output_scale: float = 1.0) -> list[Kernel]:
    """The kernel pair exercised by the diagnostics targets."""
    return [RBFKernel(lengthscale, output_scale),
            MaternKernel(lengthscale, output_scale, nu=2.5)]


# ------------------------------------------------------------- check runners
#
# Each runner performs one verification end to end and reports rows suitable
# for a CSV table plus a single pass/fail verdict. The CLI and the acceptance
# suite share these.

@dataclass
class DiagReport:
    target: str
    passed: bool
    rows: list[dict]
    summary: str


def _rel(err: float, ref: float) -> float:
    return err / max(ref, 1e-12)


def check_posterior_equivalence(n_instances: int = 100, seed: int = 0,
                                tol: float = 1e-8) -> DiagReport:
    """Decoupled posterior vs the dense Kronecker construction on random windows."""
    rng = np.random.default_rng(seed)
    kernels = [RBFKernel(1.0, 1.0), MaternKernel(1.0, 1.0, nu=2.5)]
    sigma2s = [0.0, 0.5]
    rows = []
    worst_mean = worst_var = 0.0
    for i in range(n_instances):
        d = 1 + i % 3
        n = 1 + (i // 3) % 5
        kernel = kernels[(i // 15) % 2]
        sigma2 = sigma2s[(i // 30) % 2]
        X = rng.normal(size=(n, d))
        Y = rng.normal(size=(n, d))
        q = rng.normal(size=d)
        est = GradientFieldEstimator(kernel=kernel, noise_sigma2=sigma2).fit(X, Y)
        mean_oracle, cov_oracle = kron_posterior_oracle(X, Y, kernel, est.noise_used_, q)
        var_oracle = float(cov_oracle[0, 0])
        mean_rel = _rel(float(np.linalg.norm(est.predict(q) - mean_oracle)),
                        float(np.linalg.norm(mean_oracle)))
        var_rel = _rel(abs(est.predict_variance_raw(q) - var_oracle), abs(var_oracle))
        iso = float(np.max(np.abs(cov_oracle - var_oracle * np.eye(d))))
        worst_mean = max(worst_mean, mean_rel)
        worst_var = max(worst_var, var_rel)
        rows.append(dict(instance=i, d=d, n=n, kernel=type(kernel).__name__,
                         sigma2=sigma2, mean_rel_err=mean_rel, var_rel_err=var_rel,
                         offdiagonal_max=iso))
    passed = worst_mean <= tol and worst_var <= tol
    return DiagReport("prop1", passed, rows,
                      f"max mean rel err {worst_mean:.3g}, max var rel err {worst_var:.3g} "
                      f"over {n_instances} instances (tol {tol:g})")


def check_variance_properties(n_sequences: int = 50, seed: int = 0,
                              tol: float = 1e-10) -> DiagReport:
    """Monotone decrease and lower-bounded shrinkage of the posterior variance."""
    rng = np.random.default_rng(seed)
    rows = []
    worst_increase = -math.inf
    worst_floor = math.inf
    envelope_ok = True
    for i in range(n_sequences):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(5, 31))
        sigma2 = (0.01, 1.0)[i % 2]
        kernel = default_kernels()[(i // 2) % 2]
        pts = rng.uniform(-1.0, 1.0, (n, d))
        query = rng.uniform(-1.0, 1.0, d)
        seq = variance_growth_sequence(kernel, sigma2, pts, query)
        increase = float(np.max(np.diff(seq)))
        floor_margin = float(np.min(
            seq[1:] - seq[:-1] / (kernel.output_scale + 1.0 / sigma2)))
        mean_var, bound = variance_envelope(kernel, sigma2, pts)
        env_ok = mean_var <= bound + 1e-8 and float(np.max(seq)) <= kernel.output_scale + 1e-12
        envelope_ok = envelope_ok and env_ok
        worst_increase = max(worst_increase, increase)
        worst_floor = min(worst_floor, floor_margin)
        rows.append(dict(sequence=i, d=d, n=n, sigma2=sigma2,
                         kernel=type(kernel).__name__, max_increase=increase,
                         floor_margin=floor_margin, mean_var=mean_var,
                         info_bound=bound))
    passed = worst_increase <= tol and worst_floor >= -tol and envelope_ok
    return DiagReport("variance", passed, rows,
                      f"max variance increase {worst_increase:.3g} (tol {tol:g}), "
                      f"worst floor margin {worst_floor:.3g}, envelope ok {envelope_ok}")


def check_information_gain(n_instances: int = 50, seed: int = 0,
                           tol: float = 1e-8) -> DiagReport:
    """Closed-form information gain vs the entropy-difference computation."""
    rng = np.random.default_rng(seed)
    rows = []
    worst = 0.0
    for i in range(n_instances):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, ENTROPY_ORACLE_MAX_ND // d + 1))
        sigma2 = float(rng.uniform(0.3, 2.0))
        kernel = default_kernels(output_scale=float(rng.uniform(0.5, 3.0)))[i % 2]
        pts = rng.uniform(-1.0, 1.0, (n, d))
        formula = information_gain(kernel, pts, sigma2, d)
        oracle = information_gain_entropy_oracle(kernel, pts, sigma2, d)
        rel = _rel(abs(formula - oracle), abs(oracle))
        worst = max(worst, rel)
        rows.append(dict(instance=i, d=d, n=n, sigma2=sigma2,
                         kernel=type(kernel).__name__, formula=formula,
                         oracle=oracle, rel_err=rel))
    passed = worst <= tol
    return DiagReport("infogain", passed, rows,
                      f"max rel err {worst:.3g} over {n_instances} instances (tol {tol:g})")


def check_error_trend(t0_grid=(10, 30, 100), sigma2: float = 0.01, d: int = 2,
                      trials: int = 50, seed: int = 0) -> DiagReport:
    """Median estimation error must shrink from the smallest to the largest window."""
    rows = []
    passed = True
    for kernel in default_kernels():
        result = error_vs_t0(kernel, sigma2, d, t0_grid, trials, seed)
        improved = bool(result.medians[-1] < result.medians[0])
        passed = passed and improved
        frac_monotone = float(np.mean(np.all(np.diff(result.per_trial, axis=1) <= 0, axis=1)))
        for t0, med in zip(result.t0_grid, result.medians):
            rows.append(dict(kernel=type(kernel).__name__, t0=t0, median_error=float(med),
                             fraction_monotone_trials=frac_monotone))
    return DiagReport("error-vs-t0", passed, rows,
                      "median error shrinks with window size" if passed
                      else "median error did NOT shrink with window size")


def check_speedup(seed: int = 0, dim: int = 20, T: int = 80, n: int = 4,
                  threshold: float = 0.1) -> DiagReport:
    """Small built-in experiment: parallel methods must not be slower than vanilla."""
    from .engine import MethodSpec, run as run_engine
    from .objectives import Quadratic
    from .optimizers import OptimizerSpec

    objective = Quadratic(dim, L=1.0)
    opt = OptimizerSpec(family="adam", lr=0.1)
    traces = []
    for method in ("vanilla", "optex", "target"):
        est = GradientFieldEstimator(kernel=MaternKernel(nu=2.5), noise_sigma2=0.0,
                                     lengthscale_mode="median", t0=150)
        spec = MethodSpec(method=method, n=1 if method == "vanilla" else n)
        traces.append(run_engine(objective, opt, spec, estimator=est, T=T, seed=seed))
    table = speedup_table(traces, threshold)
    rows = [dict(method=r.method, iterations=r.iterations, speedup=r.speedup,
                 reached=r.reached) for r in table]
    by_method = {r.method: r for r in table}
    passed = (by_method["optex"].reached
              and by_method["optex"].iterations <= by_method["vanilla"].iterations)
    return DiagReport("speedup", passed, rows,
                      f"optex reached gap {threshold:g} in {by_method['optex'].iterations:g} "
                      f"iterations vs vanilla {by_method['vanilla'].iterations:g}")
