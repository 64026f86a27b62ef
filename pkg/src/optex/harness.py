"""Experiment orchestration: seeded fan-out, trace persistence, summaries.

All files are UTF-8 with '.' decimals; floats are written with ``repr`` so
re-reading reproduces them bit for bit. Every output file carries the hash of
its producing config in a header comment. The wallclock column is the single
nondeterministic field in a trace CSV; :func:`canonical_trace_bytes` masks it
for byte-level determinism comparisons.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass
from pathlib import Path

from .config import RunConfig
from .engine import RunTrace, TraceRow, run

__all__ = [
    "TRACE_HEADER",
    "write_trace",
    "read_trace",
    "canonical_trace_bytes",
    "Summary",
    "run_experiment",
    "compare",
]

TRACE_HEADER = ("seq_iter,current_value,best_value,grad_norm,selected_index,"
                "cum_grad_evals,cum_value_evals,wallclock_ms")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(trace: RunTrace, path, config_hash: str, objective_name: str,
                dim: int) -> None:
    path = Path(path)
    lines = [
        f"# config_hash={config_hash}",
        f"# method={trace.method}",
        f"# seed={trace.seed}",
        f"# objective={objective_name}",
        f"# dim={dim}",
        f"# f_star={'none' if trace.f_star is None else _fmt(trace.f_star)}",
        TRACE_HEADER,
    ]
    for r in trace.rows:
        lines.append(",".join([
            str(r.seq_iter), _fmt(r.current_value), _fmt(r.best_value),
            _fmt(r.grad_norm), str(r.selected_index), str(r.cum_grad_evals),
            str(r.cum_value_evals), _fmt(r.wallclock_ms),
        ]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path) -> tuple[RunTrace, dict]:
    """Load a trace CSV; returns the trace and its header metadata."""
    path = Path(path)
    meta: dict = {}
    rows = []
    header_seen = False
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, raw = line[1:].strip().partition("=")
            meta[key.strip()] = raw.strip()
            continue
        if not line.strip():
            continue
        if not header_seen:
            if line != TRACE_HEADER:
                raise ValueError(f"{path}: unexpected trace header {line!r}")
            header_seen = True
            continue
        f = line.split(",")
        rows.append(TraceRow(
            seq_iter=int(f[0]), current_value=float(f[1]), best_value=float(f[2]),
            grad_norm=float(f[3]), selected_index=int(f[4]), cum_grad_evals=int(f[5]),
            cum_value_evals=int(f[6]), wallclock_ms=float(f[7]),
        ))
    f_star = None if meta.get("f_star", "none") == "none" else float(meta["f_star"])
    trace = RunTrace(method=meta.get("method", "unknown"),
                     seed=int(meta.get("seed", 0)), f_star=f_star, rows=rows,
                     meta=meta)
    return trace, meta


def canonical_trace_bytes(path) -> bytes:
    """Trace file content with the wallclock column (the only timing field) masked."""
    out_lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#") or line == TRACE_HEADER or not line.strip():
            out_lines.append(line)
            continue
        fields = line.split(",")
        fields[-1] = "-"
        out_lines.append(",".join(fields))
    return ("\n".join(out_lines) + "\n").encode("utf-8")


# ------------------------------------------------------------------- summary

def _finite_or_marker(x):
    if x is None:
        return None
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


def _aggregate(values):
    """Mean, median and IQR of a per-seed metric; inf becomes an 'inf' marker."""
    if not values:
        return None

    def mark(x):
        return "inf" if (math.isinf(x) or math.isnan(x)) else x

    med = statistics.median(values)
    mean = statistics.fmean(values)
    if all(math.isfinite(v) for v in values) and len(values) > 1:
        qs = statistics.quantiles(sorted(values), n=4, method="inclusive")
        iqr = qs[2] - qs[0]
    elif all(math.isfinite(v) for v in values):
        iqr = 0.0
    else:
        iqr = math.inf
    return {"mean": mark(mean), "median": mark(med), "iqr": mark(iqr)}


@dataclass
class Summary:
    config_hash: str
    gap_threshold: float | None
    rows: list[dict]          # one per method x seed
    aggregates: dict          # method -> metric -> {mean, median, iqr}

    def to_json(self) -> str:
        payload = {
            "config_hash": self.config_hash,
            "gap_threshold": self.gap_threshold,
            "rows": [{k: _finite_or_marker(v) for k, v in row.items()} for row in self.rows],
            "aggregates": self.aggregates,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _summarize(traces: list[RunTrace], config_hash: str,
               threshold: float | None) -> Summary:
    rows = []
    vanilla_iters: dict[int, float] = {}
    if threshold is not None:
        for tr in traces:
            if tr.method == "vanilla":
                hit = tr.iterations_to_gap(threshold)
                vanilla_iters[tr.seed] = math.inf if hit is None else float(hit)

    for tr in traces:
        row = {
            "method": tr.method,
            "seed": tr.seed,
            "final_best_value": tr.rows[-1].best_value if tr.rows else math.nan,
            "total_grad_evals": tr.rows[-1].cum_grad_evals if tr.rows else 0,
            "total_value_evals": tr.rows[-1].cum_value_evals if tr.rows else 0,
            "wallclock_ms": tr.rows[-1].wallclock_ms if tr.rows else 0.0,
            "iterations_to_threshold": None,
            "speedup_vs_vanilla": None,
        }
        if threshold is not None:
            hit = tr.iterations_to_gap(threshold)
            iters = math.inf if hit is None else float(hit)
            row["iterations_to_threshold"] = iters
            ref = vanilla_iters.get(tr.seed)
            if ref is not None and iters > 0:
                row["speedup_vs_vanilla"] = ref / iters
        rows.append(row)

    aggregates: dict = {}
    for method in sorted({r["method"] for r in rows}):
        mrows = [r for r in rows if r["method"] == method]
        agg = {"final_best_value": _aggregate([r["final_best_value"] for r in mrows])}
        if threshold is not None:
            agg["iterations_to_threshold"] = _aggregate(
                [r["iterations_to_threshold"] for r in mrows])
            speedups = [r["speedup_vs_vanilla"] for r in mrows
                        if r["speedup_vs_vanilla"] is not None]
            if speedups:
                agg["speedup_vs_vanilla"] = _aggregate(speedups)
        aggregates[method] = agg
    return Summary(config_hash=config_hash, gap_threshold=threshold,
                   rows=rows, aggregates=aggregates)


# ------------------------------------------------------------ run experiment

def run_experiment(config: RunConfig, out_dir) -> tuple[list[RunTrace], Summary]:
    """Execute the configured methods x repeats fan-out and persist all outputs.

    Writes one trace CSV per run, ``plot_data.csv`` (method, seed, seq_iter,
    optimality_gap), ``summary.json`` and the resolved config echo.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config.config_hash()
    (out / "config_resolved.txt").write_text(
        f"# config_hash={chash}\n" + config.echo(), encoding="utf-8")

    objective_name = config["objective.name"]
    dim = config["objective.dim"]
    base_seed = config["run.seed"]
    repeats = config["run.repeats"]
    traces: list[RunTrace] = []
    failures: list[str] = []
    try:
        for method_name in config.methods():
            spec = config.method_spec(method_name)
            for r in range(repeats):
                seed = base_seed + r
                objective = config.objective()
                trace = run(
                    objective, config.optimizer(), spec,
                    estimator=config.estimator(),
                    T=config["run.T"], seed=seed,
                    threads=config["run.threads"],
                    history_capacity=config["history.capacity"],
                    init_scale=config["run.init_scale"],
                )
                traces.append(trace)
                write_trace(trace, out / f"trace_{method_name}_seed{seed}.csv",
                            chash, objective_name, dim)
    finally:
        # partial outputs stay on disk even if a run fails mid-way
        _write_plot_data(traces, out / "plot_data.csv", chash)

    summary = _summarize(traces, chash, config["run.gap_threshold"])
    (out / "summary.json").write_text(summary.to_json() + "\n", encoding="utf-8")
    return traces, summary


def _write_plot_data(traces: list[RunTrace], path, config_hash: str) -> None:
    lines = [f"# config_hash={config_hash}", "method,seed,seq_iter,optimality_gap"]
    for tr in traces:
        ref = tr.f_star if tr.f_star is not None else 0.0
        for row in tr.rows:
            lines.append(f"{tr.method},{tr.seed},{row.seq_iter},{_fmt(row.best_value - ref)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ------------------------------------------------------------------ compare

def compare(trace_dirs, threshold: float):
    """Cross-run speedup table from persisted traces.

    All directories must hold traces of the same objective; the vanilla
    traces are the reference. Returns (table rows, rendered text lines).
    """
    traces = []
    objectives = set()
    for d in trace_dirs:
        found = sorted(Path(d).glob("trace_*.csv"))
        if not found:
            raise ValueError(f"{d}: no trace CSVs found")
        for f in found:
            trace, meta = read_trace(f)
            objectives.add((meta.get("objective"), meta.get("dim")))
            traces.append(trace)
    if len(objectives) > 1:
        raise ValueError(f"incompatible trace sets: objectives differ: {sorted(objectives)}")

    by_method: dict[str, list[RunTrace]] = {}
    for tr in traces:
        by_method.setdefault(tr.method, []).append(tr)
    if "vanilla" not in by_method:
        raise ValueError("comparison requires vanilla traces as the reference")

    # median iterations-to-threshold per method, then speedups vs vanilla
    med_iters = {}
    for method, group in by_method.items():
        iters = []
        for tr in group:
            hit = tr.iterations_to_gap(threshold)
            iters.append(math.inf if hit is None else float(hit))
        med_iters[method] = statistics.median(iters)

    rows = []
    ref = med_iters["vanilla"]
    for method in sorted(med_iters):
        it = med_iters[method]
        speedup = ref / it if it > 0 else math.inf
        rows.append({"method": method, "median_iterations": it,
                     "speedup_vs_vanilla": speedup, "runs": len(by_method[method]),
                     "reached": not math.isinf(it)})

    lines = [f"{'method':<12} {'median_iters':>12} {'speedup':>9} {'runs':>5}"]
    for r in rows:
        it = "inf" if math.isinf(r["median_iterations"]) else f"{r['median_iterations']:.0f}"
        sp = r["speedup_vs_vanilla"]
        sp = "n/a" if math.isnan(sp) else ("inf" if math.isinf(sp) else f"{sp:.2f}")
        lines.append(f"{r['method']:<12} {it:>12} {sp:>9} {r['runs']:>5}")
    if all(not r["reached"] for r in rows):
        lines.append(f"warning: no method reached gap threshold {threshold:g}")
    return rows, lines
