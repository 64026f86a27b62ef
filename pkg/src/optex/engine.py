"""The parallelized-iteration optimization loop and its baselines.

Each sequential iteration: fit the gradient estimator on the local history,
chain N-1 speculative (proxy) updates to predict the next starting points,
evaluate one true-gradient step from each point concurrently, then keep the
best candidate. The baselines reuse the same loop with a different gradient
source for the proxy chain:

* vanilla     — parallelism 1, no proxy chain.
* linesearch  — the chain reuses the frozen start gradient and each worker
                scales its learning rate by its 1-based slot index.
* target      — the chain uses true gradients (idealized, not parallelizable)
                and the last candidate is always kept.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .estimator import GradientFieldEstimator
from .history import GradientHistory, GradientRecord
from .objectives import Batch, Objective, make_batch
from .optimizers import OptimizerSpec, OptimizerState, init_state, step

__all__ = [
    "MethodSpec",
    "EstimatedGradients",
    "FrozenGradient",
    "TrueGradients",
    "Candidate",
    "IterationResult",
    "TraceRow",
    "RunTrace",
    "proxy_chain",
    "parallel_step",
    "select",
    "run",
]

_METHODS = ("optex", "vanilla", "linesearch", "target")
_SELECTIONS = ("min_value", "min_grad_norm", "last_candidate")


@dataclass(frozen=True)
class MethodSpec:
    method: str = "optex"
    n: int = 5
    selection: str = "min_value"
    warmup: int = 2

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {_METHODS}")
        if self.n < 1:
            raise ValueError(f"method.n must be >= 1, got {self.n}")
        if self.selection not in _SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}; expected one of {_SELECTIONS}")
        if self.warmup < 1:
            raise ValueError(f"method.warmup must be >= 1, got {self.warmup}")
        if self.method == "vanilla" and self.n != 1:
            raise ValueError(f"method.n must be 1 for vanilla, got {self.n}")
        if self.method == "target" and self.selection != "last_candidate":
            # target is defined as keeping the final chain point
            object.__setattr__(self, "selection", "last_candidate")


# gradient sources for the proxy chain -------------------------------------

@dataclass(frozen=True)
class EstimatedGradients:
    estimator: GradientFieldEstimator


@dataclass(frozen=True)
class FrozenGradient:
    g0: np.ndarray


@dataclass(frozen=True)
class TrueGradients:
    objective: Objective
    batch: Batch


def proxy_chain(opt: OptimizerSpec, state0: OptimizerState, theta0: np.ndarray,
                source, n: int):
    """Chain of n speculative starting points branched from (theta0, state0).

    Entry 0 is the unchanged start; entry s applies one optimizer step to
    entry s-1 using the source's gradient. Returns (chain, chain_grads,
    grad_evals) where chain_grads[i] is the true gradient already evaluated
    at chain[i] (reusable by the parallel phase) or None, and grad_evals
    counts true-gradient evaluations performed here.
    """
    if n < 1:
        raise ValueError(f"chain length must be >= 1, got {n}")
    chain = [(np.asarray(theta0, dtype=np.float64), state0.clone())]
    chain_grads: list[np.ndarray | None] = [None] * n
    grad_evals = 0
    if isinstance(source, FrozenGradient):
        chain_grads[0] = np.asarray(source.g0, dtype=np.float64)
    for s in range(1, n):
        theta_prev, state_prev = chain[s - 1]
        if isinstance(source, EstimatedGradients):
            g = source.estimator.predict(theta_prev)
        elif isinstance(source, FrozenGradient):
            g = source.g0
        elif isinstance(source, TrueGradients):
            g = source.objective.gradient(theta_prev, source.batch)
            grad_evals += 1
            chain_grads[s - 1] = g
        else:
            raise TypeError(f"unknown gradient source {type(source).__name__}")
        try:
            theta_new, state_new = step(opt, state_prev, theta_prev, g)
        except ValueError as exc:
            raise ValueError(f"proxy step {s} failed: {exc}") from exc
        if not np.all(np.isfinite(theta_new)):
            raise ValueError(f"proxy step {s} produced a non-finite iterate")
        chain.append((theta_new, state_new))
    return chain, chain_grads, grad_evals


@dataclass(frozen=True)
class Candidate:
    theta_pre: np.ndarray
    grad_pre: np.ndarray
    theta_post: np.ndarray
    state_post: OptimizerState
    f_post: float
    gradnorm_post: float  # NaN unless the selection rule needs it


@dataclass
class IterationResult:
    candidates: list[Candidate]
    selected: int = -1
    grad_evals: int = 0
    value_evals: int = 0


def _run_worker(objective, batch, opt, start, scale, known_grad, need_post_gradnorm):
    theta, state = start
    evals = [0, 0]  # grad, value
    if known_grad is None:
        g = objective.gradient(theta, batch)
        evals[0] += 1
    else:
        g = known_grad
    theta_post, state_post = step(opt.scaled(scale), state, theta, g)
    f_post = objective.value(theta_post, batch)
    evals[1] += 1
    if need_post_gradnorm:
        gradnorm_post = float(np.linalg.norm(objective.gradient(theta_post, batch)))
        evals[0] += 1
    else:
        gradnorm_post = float("nan")
    return Candidate(theta, g, theta_post, state_post, f_post, gradnorm_post), evals


def parallel_step(objective: Objective, batch: Batch, opt: OptimizerSpec,
                  starts, lr_scales=None, known_grads=None,
                  need_post_gradnorm: bool = False,
                  executor: ThreadPoolExecutor | None = None) -> IterationResult:
    """Evaluate one true-gradient step from every start, concurrently.

    Results are gathered in worker-index order, so the output is identical
    to a sequential execution regardless of scheduling. ``known_grads`` lets
    the caller pass gradients that were already evaluated at a start.
    """
    n = len(starts)
    if lr_scales is None:
        lr_scales = [1.0] * n
    if known_grads is None:
        known_grads = [None] * n
    if not (len(lr_scales) == len(known_grads) == n):
        raise ValueError("starts, lr_scales and known_grads lengths differ")

    def job(i):
        try:
            return _run_worker(objective, batch, opt, starts[i], lr_scales[i],
                               known_grads[i], need_post_gradnorm)
        except Exception as exc:
            raise RuntimeError(f"worker {i} failed: {exc}") from exc

    if executor is None or n == 1:
        outcomes = [job(i) for i in range(n)]
    else:
        outcomes = list(executor.map(job, range(n)))

    result = IterationResult(candidates=[c for c, _ in outcomes])
    for _, (ge, ve) in outcomes:
        result.grad_evals += ge
        result.value_evals += ve
    return result


def select(candidates: list[Candidate], rule: str) -> int:
    """Index of the candidate to continue from; ties go to the lowest index."""
    if not candidates:
        raise ValueError("no candidates to select from")
    if rule == "last_candidate":
        return len(candidates) - 1
    if rule == "min_value":
        scores = np.array([c.f_post for c in candidates])
    elif rule == "min_grad_norm":
        scores = np.array([c.gradnorm_post for c in candidates])
        if not np.all(np.isfinite(scores)):
            raise ValueError("min_grad_norm selection requires post-step gradient norms")
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    return int(np.argmin(scores))


# run loop ------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    seq_iter: int
    current_value: float
    best_value: float
    grad_norm: float
    selected_index: int
    cum_grad_evals: int
    cum_value_evals: int
    wallclock_ms: float


@dataclass
class RunTrace:
    method: str
    seed: int
    f_star: float | None
    rows: list[TraceRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def best_values(self) -> np.ndarray:
        return np.array([r.best_value for r in self.rows])

    def iterations_to_gap(self, threshold: float) -> int | None:
        """Smallest seq_iter whose best value is within threshold of the optimum."""
        ref = self.f_star if self.f_star is not None else 0.0
        for row in self.rows:
            if row.best_value - ref <= threshold:
                return row.seq_iter
        return None


def initial_point(objective: Objective, seed: int, init_scale: float = 2.0) -> np.ndarray:
    """Seeded uniform start in [-init_scale, init_scale]^d."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1A17]))
    return rng.uniform(-init_scale, init_scale, objective.dim)


def run(objective: Objective, opt: OptimizerSpec, method: MethodSpec,
        estimator: GradientFieldEstimator | None = None, T: int = 100,
        seed: int = 0, threads: int = 1, history_capacity: int | None = None,
        init_scale: float = 2.0, theta0=None,
        history: GradientHistory | None = None) -> RunTrace:
    """Full optimization run; returns one trace row per sequential iteration.

    The first ``warmup`` iterations run with parallelism 1 so the gradient
    history is populated before the first estimator fit. A method with n=1
    reduces exactly to the vanilla loop. Passing ``history`` hands in the
    record store (useful for inspecting what the run observed).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    if method.method == "optex" and method.n > 1 and estimator is None:
        raise ValueError("optex with n > 1 requires a gradient estimator")

    d = objective.dim
    theta = initial_point(objective, seed, init_scale) if theta0 is None \
        else np.asarray(theta0, dtype=np.float64)
    state = init_state(opt, d)
    if history is None:
        history = GradientHistory(capacity=history_capacity)
    trace = RunTrace(method=method.method, seed=seed, f_star=objective.f_star)
    need_post_gradnorm = method.selection == "min_grad_norm"

    best = np.inf
    cum_grad = 0
    cum_value = 0
    start_clock = time.perf_counter()
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    try:
        for t in range(1, T + 1):
            batch = make_batch(objective, seed, t)
            chain_evals = 0
            scales = None
            known: list[np.ndarray | None] | None = None

            if t <= method.warmup or method.n == 1:
                starts = [(theta, state)]
            elif method.method == "optex":
                estimator.fit_from_history(history, theta)
                chain, known, chain_evals = proxy_chain(
                    opt, state, theta, EstimatedGradients(estimator), method.n)
                starts = chain
            elif method.method == "linesearch":
                g0 = objective.gradient(theta, batch)
                chain_evals = 1
                chain, known, _ = proxy_chain(
                    opt, state, theta, FrozenGradient(g0), method.n)
                starts = chain
                scales = [float(i + 1) for i in range(method.n)]
            elif method.method == "target":
                chain, known, chain_evals = proxy_chain(
                    opt, state, theta, TrueGradients(objective, batch), method.n)
                starts = chain
            else:  # pragma: no cover - vanilla with n>1 is rejected by MethodSpec
                raise AssertionError(method.method)

            try:
                result = parallel_step(objective, batch, opt, starts, scales,
                                       known, need_post_gradnorm, executor)
            except RuntimeError as exc:
                raise RuntimeError(f"iteration {t}: {exc}") from exc

            for i, cand in enumerate(result.candidates):
                history.push(GradientRecord(cand.theta_pre, cand.grad_pre, seq_iter=t, worker=i))

            sel = select(result.candidates, method.selection)
            result.selected = sel
            chosen = result.candidates[sel]
            theta = chosen.theta_post
            state = chosen.state_post

            cum_grad += chain_evals + result.grad_evals
            cum_value += result.value_evals
            best = min(best, chosen.f_post)
            trace.rows.append(TraceRow(
                seq_iter=t,
                current_value=chosen.f_post,
                best_value=best,
                grad_norm=float(np.linalg.norm(chosen.grad_pre)),
                selected_index=sel,
                cum_grad_evals=cum_grad,
                cum_value_evals=cum_value,
                wallclock_ms=(time.perf_counter() - start_clock) * 1e3,
            ))
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    return trace
