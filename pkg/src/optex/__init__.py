"""Parallelized-iteration first-order optimization with kernelized gradient estimation."""

from .engine import MethodSpec, RunTrace, run
from .estimator import GradientFieldEstimator, SingularSystemError
from .history import GradientHistory, GradientRecord
from .kernels import Kernel, MaternKernel, RBFKernel, make_kernel
from .objectives import Batch, Objective, make_batch, make_objective
from .optimizers import OptimizerSpec, OptimizerState, init_state, step

__all__ = [
    "MethodSpec",
    "RunTrace",
    "run",
    "GradientFieldEstimator",
    "SingularSystemError",
    "GradientHistory",
    "GradientRecord",
    "Kernel",
    "MaternKernel",
    "RBFKernel",
    "make_kernel",
    "Batch",
    "Objective",
    "make_batch",
    "make_objective",
    "OptimizerSpec",
    "OptimizerState",
    "init_state",
    "step",
]

__version__ = "0.1.0"
