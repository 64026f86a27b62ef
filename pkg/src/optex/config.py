"""Run configuration: flat dotted keys, file + CLI overrides, strict validation.

The config format is one ``key = value`` assignment per line with ``#``
comments; the same ``key=value`` syntax is used for command-line overrides,
which win over file values. Every key has a typed schema entry, unknown keys
are rejected, and the fully resolved config can be echoed back out and
re-parsed to the identical state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .engine import MethodSpec
from .estimator import GradientFieldEstimator
from .kernels import Kernel, make_kernel
from .objectives import Objective, make_objective
from .optimizers import OptimizerSpec

__all__ = ["ConfigError", "RunConfig", "parse_config"]


class ConfigError(ValueError):
    """Invalid configuration: unknown key, bad value, or constraint violation."""


def _parse_str(raw: str):
    return raw


def _parse_int(raw: str):
    return int(raw)


def _parse_float(raw: str):
    return float(raw)


def _parse_optional_float(raw: str):
    return None if raw.lower() == "none" else float(raw)


def _parse_optional_int(raw: str):
    return None if raw.lower() == "none" else int(raw)


def _parse_optional_str(raw: str):
    return None if raw.lower() == "none" else raw


def _parse_str_list(raw: str):
    return tuple(part.strip() for part in raw.split(",") if part.strip())


@dataclass(frozen=True)
class _Key:
    default: object
    parse: object


_OBJECTIVES = ("ackley", "rosenbrock_paper", "rosenbrock_standard", "quadratic",
               "logistic_blobs")
_METHOD_NAMES = ("optex", "vanilla", "linesearch", "target")

SCHEMA: dict[str, _Key] = {
    "objective.name": _Key("quadratic", _parse_str),
    "objective.dim": _Key(10, _parse_int),
    "objective.noise_sigma": _Key(0.0, _parse_float),
    "objective.L": _Key(1.0, _parse_float),
    "objective.data_seed": _Key(0, _parse_int),
    "objective.batch_size": _Key(128, _parse_int),
    "objective.data_csv": _Key(None, _parse_optional_str),
    "optimizer.family": _Key("adam", _parse_str),
    "optimizer.lr": _Key(0.1, _parse_float),
    "optimizer.momentum": _Key(0.9, _parse_float),
    "optimizer.beta1": _Key(0.9, _parse_float),
    "optimizer.beta2": _Key(0.999, _parse_float),
    "optimizer.eps": _Key(1e-8, _parse_float),
    "kernel.family": _Key("matern", _parse_str),
    "kernel.lengthscale": _Key(1.0, _parse_float),
    "kernel.nu": _Key(2.5, _parse_float),
    "kernel.output_scale": _Key(1.0, _parse_float),
    "kernel.lengthscale_mode": _Key("fixed", _parse_str),
    "estimator.t0": _Key(150, _parse_int),
    "estimator.noise_sigma2": _Key(None, _parse_optional_float),
    "estimator.jitter": _Key(None, _parse_optional_float),
    "estimator.window_mode": _Key("recent", _parse_str),
    "history.capacity": _Key(None, _parse_optional_int),
    "method.name": _Key(("optex",), _parse_str_list),
    "method.n": _Key(5, _parse_int),
    "method.selection": _Key("min_value", _parse_str),
    "method.warmup": _Key(2, _parse_int),
    "run.T": _Key(100, _parse_int),
    "run.seed": _Key(0, _parse_int),
    "run.threads": _Key(1, _parse_int),
    "run.repeats": _Key(1, _parse_int),
    "run.init_scale": _Key(2.0, _parse_float),
    "run.gap_threshold": _Key(None, _parse_optional_float),
}


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved, validated configuration."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    # factories ----------------------------------------------------------

    def objective(self) -> Objective:
        return make_objective(
            self["objective.name"],
            dim=self["objective.dim"],
            noise_sigma=self["objective.noise_sigma"],
            L=self["objective.L"],
            data_seed=self["objective.data_seed"],
            batch_size=self["objective.batch_size"],
            data_csv=self["objective.data_csv"],
        )

    def optimizer(self) -> OptimizerSpec:
        return OptimizerSpec(
            family=self["optimizer.family"],
            lr=self["optimizer.lr"],
            momentum=self["optimizer.momentum"],
            beta1=self["optimizer.beta1"],
            beta2=self["optimizer.beta2"],
            eps=self["optimizer.eps"],
        )

    def kernel(self) -> Kernel:
        return make_kernel(
            family=self["kernel.family"],
            lengthscale=self["kernel.lengthscale"],
            output_scale=self["kernel.output_scale"],
            nu=self["kernel.nu"],
        )

    def estimator(self) -> GradientFieldEstimator:
        noise = self["estimator.noise_sigma2"]
        if noise is None:
            noise = self["objective.noise_sigma"] ** 2
        return GradientFieldEstimator(
            kernel=self.kernel(),
            noise_sigma2=noise,
            jitter=self["estimator.jitter"],
            t0=self["estimator.t0"],
            window_mode=self["estimator.window_mode"],
            lengthscale_mode=self["kernel.lengthscale_mode"],
        )

    def methods(self) -> tuple[str, ...]:
        return self["method.name"]

    def method_spec(self, name: str) -> MethodSpec:
        n = 1 if name == "vanilla" else self["method.n"]
        return MethodSpec(method=name, n=n, selection=self["method.selection"],
                          warmup=self["method.warmup"])

    # provenance ---------------------------------------------------------

    def echo(self) -> str:
        """Canonical text form; parsing it back reproduces this config."""
        lines = [f"{key} = {_format_value(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """Experiment identity hash.

        run.threads is excluded: it only sets the physical execution width
        and never changes results, so outputs stay comparable across it.
        """
        lines = [f"{key} = {_format_value(self.values[key])}"
                 for key in sorted(self.values) if key != "run.threads"]
        text = "\n".join(lines) + "\n"
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _parse_assignment(line: str, source: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"{source}: expected 'key = value', got {line!r}")
    key, _, raw = line.partition("=")
    return key.strip(), raw.strip()


def parse_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Load, override, default-fill and validate a configuration.

    ``overrides`` are ``key=value`` strings applied after the file, so a CLI
    override always beats the file value.
    """
    assignments: dict[str, str] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, raw = _parse_assignment(stripped, f"{path}:{lineno}")
            assignments[key] = raw
    for item in overrides or []:
        key, raw = _parse_assignment(item, "override")
        assignments[key] = raw

    values: dict = {}
    for key, raw in assignments.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = SCHEMA[key].parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    for key, entry in SCHEMA.items():
        values.setdefault(key, entry.default)

    _validate(values)
    return RunConfig(values=values)


def _positive(values, key):
    if not values[key] > 0:
        raise ConfigError(f"{key} must be positive, got {values[key]}")


def _at_least(values, key, bound):
    if values[key] < bound:
        raise ConfigError(f"{key} must be >= {bound}, got {values[key]}")


def _validate(values: dict) -> None:
    name = values["objective.name"]
    if name not in _OBJECTIVES:
        raise ConfigError(f"objective.name must be one of {_OBJECTIVES}, got {name!r}")
    _at_least(values, "objective.dim", 1)
    if name.startswith("rosenbrock") and values["objective.dim"] < 2:
        raise ConfigError(f"objective.name={name} requires objective.dim >= 2, "
                          f"got {values['objective.dim']}")
    if values["objective.noise_sigma"] < 0:
        raise ConfigError(f"objective.noise_sigma must be >= 0, got {values['objective.noise_sigma']}")
    _positive(values, "objective.L")
    _at_least(values, "objective.batch_size", 1)

    if values["optimizer.family"] not in ("sgd", "sgd_momentum", "adam"):
        raise ConfigError(f"optimizer.family must be sgd, sgd_momentum or adam, "
                          f"got {values['optimizer.family']!r}")
    _positive(values, "optimizer.lr")
    for key in ("optimizer.momentum", "optimizer.beta1", "optimizer.beta2"):
        if not 0.0 <= values[key] < 1.0:
            raise ConfigError(f"{key} must be in [0, 1), got {values[key]}")
    _positive(values, "optimizer.eps")

    if values["kernel.family"] not in ("rbf", "matern"):
        raise ConfigError(f"kernel.family must be rbf or matern, got {values['kernel.family']!r}")
    _positive(values, "kernel.lengthscale")
    _positive(values, "kernel.output_scale")
    if values["kernel.nu"] not in (0.5, 1.5, 2.5):
        raise ConfigError(f"kernel.nu must be 0.5, 1.5 or 2.5, got {values['kernel.nu']}")
    if values["kernel.lengthscale_mode"] not in ("fixed", "median"):
        raise ConfigError(f"kernel.lengthscale_mode must be fixed or median, "
                          f"got {values['kernel.lengthscale_mode']!r}")

    _at_least(values, "estimator.t0", 1)
    if values["estimator.noise_sigma2"] is not None and values["estimator.noise_sigma2"] < 0:
        raise ConfigError(f"estimator.noise_sigma2 must be >= 0, got {values['estimator.noise_sigma2']}")
    if values["estimator.jitter"] is not None and not values["estimator.jitter"] > 0:
        raise ConfigError(f"estimator.jitter must be positive, got {values['estimator.jitter']}")
    if values["estimator.window_mode"] not in ("recent", "nearest"):
        raise ConfigError(f"estimator.window_mode must be recent or nearest, "
                          f"got {values['estimator.window_mode']!r}")
    if values["history.capacity"] is not None:
        if values["history.capacity"] < values["estimator.t0"]:
            raise ConfigError(
                f"history.capacity must be >= estimator.t0 ({values['estimator.t0']}), "
                f"got {values['history.capacity']}")

    methods = values["method.name"]
    if not methods:
        raise ConfigError("method.name must name at least one method")
    for m in methods:
        if m not in _METHOD_NAMES:
            raise ConfigError(f"method.name entries must be in {_METHOD_NAMES}, got {m!r}")
    _at_least(values, "method.n", 1)
    if methods == ("vanilla",) and values["method.n"] != 1:
        raise ConfigError(f"method.n must be 1 for vanilla, got {values['method.n']}")
    if values["method.selection"] not in ("min_value", "min_grad_norm", "last_candidate"):
        raise ConfigError(f"method.selection must be min_value, min_grad_norm or "
                          f"last_candidate, got {values['method.selection']!r}")
    _at_least(values, "method.warmup", 1)

    _at_least(values, "run.T", 1)
    if values["run.seed"] < 0:
        raise ConfigError(f"run.seed must be >= 0, got {values['run.seed']}")
    _at_least(values, "run.threads", 1)
    _at_least(values, "run.repeats", 1)
    _positive(values, "run.init_scale")
