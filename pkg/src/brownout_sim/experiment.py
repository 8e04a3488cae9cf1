"""Experiment harness: config schema, run dispatch and artifact writing."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .domain import Policy, SimConfig
from .engine import CSV_FIELDS, MetricsLedger, build_datacenter, run
from .stats import mean_ci95
from .workload import ComponentGenParams, TraceSet, component_sets, load_trace_dir, synth_traces

AXES = ("lambda", "threshold", "optional_fraction")
SUMMARY_METRICS = ("energy_kwh", "discount", "discount_pct", "g", "migrations", "shutdowns")

_SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)} - {"policy", "seed"}
_TOP_KEYS = {"policies", "seeds", "repeats", "sim", "datacenter", "components", "traces", "sweep", "output", "workers", "paper_faithful"}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configuration."""


@dataclass(frozen=True)
class SyntheticTraceParams:
    base_level: float = 0.7
    spike_prob: float = 0.3
    spike_level: float = 0.95


@dataclass(frozen=True)
class ExperimentSpec:
    policies: tuple[Policy, ...] = (Policy.PCO,)
    seeds: tuple[int, ...] = (0,)
    base: SimConfig = field(default_factory=SimConfig)
    n_hosts: int = 50
    n_vms: int = 100
    components: ComponentGenParams = field(default_factory=ComponentGenParams)
    trace_dir: Optional[str] = None
    synthetic: SyntheticTraceParams = field(default_factory=SyntheticTraceParams)
    axis: Optional[str] = None
    axis_values: tuple[float, ...] = ()
    output: str = "out"
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.policies:
            raise ConfigError("policies: at least one policy is required")
        if not self.seeds:
            raise ConfigError("seeds: at least one repeat is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: duplicate seeds")
        if self.n_hosts < 1 or self.n_vms < 0:
            raise ConfigError("datacenter: n_hosts must be >= 1 and n_vms >= 0")
        if self.axis is not None:
            if self.axis not in AXES:
                raise ConfigError(f"sweep.axis: expected one of {AXES}, got {self.axis!r}")
            if not self.axis_values:
                raise ConfigError("sweep.values: must be non-empty when an axis is set")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")

    def runs(self) -> list["RunKey"]:
        values = self.axis_values if self.axis is not None else (None,)
        return [RunKey(p, v, s) for v in values for p in self.policies for s in self.seeds]

    def to_dict(self) -> dict[str, Any]:
        """Fully resolved configuration, in the same schema ``parse_spec`` reads."""
        sim = {k: _jsonable(getattr(self.base, k)) for k in sorted(_SIM_KEYS)}
        out: dict[str, Any] = {
            "policies": [p.value for p in self.policies],
            "seeds": list(self.seeds),
            "sim": sim,
            "datacenter": {"n_hosts": self.n_hosts, "n_vms": self.n_vms},
            "components": {k: v for k, v in dataclasses.asdict(self.components).items() if k != "seed"},
            "traces": {"dir": self.trace_dir} if self.trace_dir else {"synthetic": dataclasses.asdict(self.synthetic)},
            "output": self.output,
            "workers": self.workers,
        }
        if self.axis is not None:
            out["sweep"] = {"axis": self.axis, "values": list(self.axis_values)}
        return out


@dataclass(frozen=True)
class RunKey:
    policy: Policy
    axis_value: Optional[float]
    seed: int

    def label(self, axis: Optional[str]) -> str:
        s = self.policy.value
        if axis is not None:
            s += f"_{axis}={self.axis_value!r}"
        return f"{s}_seed{self.seed}"


@dataclass
class RunResult:
    key: RunKey
    ledger: MetricsLedger


def _jsonable(v):
    return v.value if isinstance(v, Policy) else v


def _section(raw: dict, name: str, allowed: set[str]) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    return sec


def parse_spec(raw: dict, overrides: Optional[dict] = None) -> ExperimentSpec:
    """Build an ExperimentSpec from a config mapping.

    ``overrides`` holds flat CLI overrides: policies, seeds, lambda,
    threshold, horizon, output, workers, paper_faithful.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        policies = tuple(Policy(p) for p in ov.get("policies", raw.get("policies", ["PCO"])))
    except (ValueError, TypeError) as e:
        raise ConfigError(f"policies: {e}") from None
    seeds = ov.get("seeds", raw.get("seeds"))
    if seeds is None:
        repeats = raw.get("repeats", 1)
        if not isinstance(repeats, int) or repeats < 1:
            raise ConfigError("repeats: must be an integer >= 1")
        seeds = list(range(repeats))
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("seeds: must be a list of integers")

    sim = dict(_section(raw, "sim", _SIM_KEYS | {"lambda"}))
    if "lambda" in sim:
        sim["lam"] = sim.pop("lambda")
    for flag, key in (("lambda", "lam"), ("threshold", "overload_threshold"), ("horizon", "horizon_intervals")):
        if flag in ov:
            sim[key] = ov[flag]
    try:
        base = SimConfig(**sim)
        if raw.get("paper_faithful") or ov.get("paper_faithful"):
            base = base.paper_faithful()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"sim: {e}") from None

    dc = _section(raw, "datacenter", {"n_hosts", "n_vms"})
    try:
        comps = ComponentGenParams(**_section(raw, "components", {"optional_fraction", "n_optional", "sigma_u", "sigma_d"}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"components: {e}") from None

    traces = _section(raw, "traces", {"dir", "synthetic"})
    if "dir" in traces and "synthetic" in traces:
        raise ConfigError("traces: give either dir or synthetic, not both")
    try:
        synthetic = SyntheticTraceParams(**traces.get("synthetic", {}))
    except TypeError as e:
        raise ConfigError(f"traces.synthetic: {e}") from None

    sweep = _section(raw, "sweep", {"axis", "values"})
    values = sweep.get("values", [])
    if not isinstance(values, list) or not all(isinstance(v, (int, float)) for v in values):
        raise ConfigError("sweep.values: must be a list of numbers")
    return ExperimentSpec(
        policies=policies,
        seeds=tuple(seeds),
        base=base,
        n_hosts=dc.get("n_hosts", 50),
        n_vms=dc.get("n_vms", 100),
        components=comps,
        trace_dir=traces.get("dir"),
        synthetic=synthetic,
        axis=sweep.get("axis"),
        axis_values=tuple(values),
        output=ov.get("output", raw.get("output", "out")),
        workers=ov.get("workers", raw.get("workers", 1)),
    )


def load_spec(path: os.PathLike | str, overrides: Optional[dict] = None) -> ExperimentSpec:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return parse_spec(raw, overrides)


def _repeat_traces(spec: ExperimentSpec, seed: int, horizon: int) -> TraceSet:
    if spec.trace_dir is None:
        s = spec.synthetic
        return synth_traces(spec.n_vms, horizon, s.base_level, s.spike_prob, s.spike_level, seed)
    traces = load_trace_dir(spec.trace_dir, horizon)
    if len(traces) == 0:
        raise FileNotFoundError(f"no trace files in {spec.trace_dir}")
    # repeats replay consecutive days of the corpus when it is long enough
    days = max(1, traces.min_length // horizon) if horizon else 1
    start = (seed % days) * horizon
    return TraceSet(traces.names, tuple(s[start : start + horizon] for s in traces.series), traces.samples_per_day)


def resolve_run(spec: ExperimentSpec, key: RunKey) -> tuple[SimConfig, ComponentGenParams]:
    cfg = spec.base.with_(policy=key.policy, seed=key.seed)
    comps = dataclasses.replace(spec.components, seed=key.seed)
    if spec.axis == "lambda":
        cfg = cfg.with_(lam=float(key.axis_value))
    elif spec.axis == "threshold":
        cfg = cfg.with_(overload_threshold=float(key.axis_value))
    elif spec.axis == "optional_fraction":
        comps = dataclasses.replace(comps, optional_fraction=float(key.axis_value))
    return cfg, comps


def execute(spec: ExperimentSpec, key: RunKey) -> RunResult:
    """One simulation, a pure function of ``spec`` and ``key``."""
    cfg, comps = resolve_run(spec, key)
    traces = _repeat_traces(spec, key.seed, cfg.horizon_intervals)
    state = build_datacenter(spec.n_hosts, component_sets(comps, spec.n_vms))
    return RunResult(key, run(cfg, traces, state))


def _execute_packed(args):
    return execute(*args)


def dispatch(spec: ExperimentSpec, keys: Optional[Sequence[RunKey]] = None, workers: Optional[int] = None) -> list[RunResult]:
    """Run every key, in parallel processes when ``workers`` > 1; results keep key order."""
    keys = list(spec.runs() if keys is None else keys)
    workers = spec.workers if workers is None else workers
    if workers <= 1 or len(keys) <= 1:
        return [execute(spec, k) for k in keys]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_execute_packed, [(spec, k) for k in keys]))


def ledger_csv(ledger: MetricsLedger) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in ledger.records:
        w.writerow([repr(getattr(r, f)) for f in CSV_FIELDS])
    return buf.getvalue()


def read_ledger_csv(path: os.PathLike | str) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("t", "overloaded", "migrations", "hosts_on") else float(v)) for k, v in row.items()} for row in rows]


def _metric_stats(values: list[float]) -> dict[str, Optional[float]]:
    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return {"mean": mean, "ci_lo": None, "ci_hi": None}
    _, lo, hi = mean_ci95(values)
    return {"mean": mean, "ci_lo": lo, "ci_hi": hi}


def summarize(spec: ExperimentSpec, results: Sequence[RunResult]) -> dict[str, Any]:
    """Summary document: resolved config, seeds, per-run totals and per-group mean/CI."""
    groups: dict[tuple, list[RunResult]] = {}
    for res in results:
        groups.setdefault((res.key.axis_value, res.key.policy), []).append(res)
    entries = []
    for (value, policy), rs in groups.items():
        rs = sorted(rs, key=lambda r: r.key.seed)
        entry: dict[str, Any] = {"policy": policy.value}
        if spec.axis is not None:
            entry["axis_value"] = value
        entry["runs"] = [{"seed": r.key.seed, "file": r.key.label(spec.axis) + ".csv", **r.ledger.totals()} for r in rs]
        entry["stats"] = {m: _metric_stats([float(getattr(r.ledger, m)) for r in rs]) for m in SUMMARY_METRICS}
        entries.append(entry)
    note = None if spec.trace_dir else "synthetic traces: each repeat is a seed, not a recorded day"
    return {"config": spec.to_dict(), "seeds": list(spec.seeds), "axis": spec.axis, "repeats_note": note, "results": entries}


def write_artifacts(spec: ExperimentSpec, results: Sequence[RunResult], out_dir: Optional[os.PathLike | str] = None) -> dict[str, Path]:
    """Per-run CSVs, ``summary.json`` and, for sweeps, ``sweep.csv``."""
    out = Path(out_dir if out_dir is not None else spec.output)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for res in results:
        p = out / (res.key.label(spec.axis) + ".csv")
        p.write_text(ledger_csv(res.ledger))
        paths[res.key.label(spec.axis)] = p
    summary = summarize(spec, results)
    sp = out / "summary.json"
    sp.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    paths["summary"] = sp
    if spec.axis is not None:
        wp = out / "sweep.csv"
        wp.write_text(sweep_csv(summary))
        paths["sweep"] = wp
    return paths


def sweep_csv(summary: dict[str, Any]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ("energy_kwh", "discount", "discount_pct")
    w.writerow([summary["axis"], "policy"] + [f"{m}_{s}" for m in cols for s in ("mean", "ci_lo", "ci_hi")])
    for e in summary["results"]:
        row = [repr(e["axis_value"]), e["policy"]]
        for m in cols:
            st = e["stats"][m]
            row += ["" if st[s] is None else repr(st[s]) for s in ("mean", "ci_lo", "ci_hi")]
        w.writerow(row)
    return buf.getvalue()
