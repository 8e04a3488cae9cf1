"""Workload traces (PlanetLab format or synthetic) and component generation."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .domain import ComponentProfile, VmState

SAMPLES_PER_DAY = 288


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceSet:
    """Per-VM CPU utilization series, one sample per scheduling interval."""

    names: tuple[str, ...]
    series: tuple[np.ndarray, ...]
    samples_per_day: int = SAMPLES_PER_DAY

    def __len__(self) -> int:
        return len(self.series)

    @property
    def min_length(self) -> int:
        return min((len(s) for s in self.series), default=0)

    def sample(self, trace_id: int, t: int) -> float:
        s = self.series[trace_id % len(self.series)]
        if t >= len(s):
            raise TraceError(f"trace {self.names[trace_id % len(self.series)]!r} exhausted at interval {t}")
        return float(s[t])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TraceSet):
            return NotImplemented
        return (
            self.names == other.names
            and self.samples_per_day == other.samples_per_day
            and len(self.series) == len(other.series)
            and all(np.array_equal(a, b) for a, b in zip(self.series, other.series))
        )


@dataclass(frozen=True)
class ComponentGenParams:
    optional_fraction: float = 0.5
    n_optional: int = 5
    sigma_u: float = 0.05
    sigma_d: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.optional_fraction <= 1:
            raise ValueError(f"optional_fraction must be in (0, 1], got {self.optional_fraction}")
        if self.n_optional < 1:
            raise ValueError("n_optional must be >= 1")
        if not (0 <= self.sigma_u < 0.1 and 0 <= self.sigma_d < 0.1):
            raise ValueError("component standard deviations must be in [0, 0.1)")


def load_trace_dir(path: Union[str, os.PathLike], horizon: Optional[int] = None) -> TraceSet:
    """Read one file per VM, one integer percentage (0-100) per line."""
    root = Path(path)
    if not root.is_dir():
        raise TraceError(f"trace directory not found: {root}")
    names, series = [], []
    for f in sorted(p for p in root.iterdir() if p.is_file()):
        values = []
        for lineno, line in enumerate(f.read_text().splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                v = int(line)
            except ValueError:
                raise TraceError(f"{f}:{lineno}: not an integer: {line!r}") from None
            if not 0 <= v <= 100:
                raise TraceError(f"{f}:{lineno}: value {v} outside 0-100")
            values.append(v)
        if horizon is not None and len(values) < horizon:
            raise TraceError(f"{f}: {len(values)} samples, horizon needs {horizon}")
        names.append(f.name)
        series.append(np.asarray(values, dtype=float) / 100.0)
    return TraceSet(tuple(names), tuple(series))


def write_trace_dir(traces: TraceSet, path: Union[str, os.PathLike]) -> list[Path]:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    for name, s in zip(traces.names, traces.series):
        p = root / name
        p.write_text("".join(f"{int(round(v * 100))}\n" for v in s))
        written.append(p)
    return written


def synth_traces(
    n_vms: int,
    horizon: int,
    base_level: float = 0.7,
    spike_prob: float = 0.3,
    spike_level: float = 0.95,
    seed: int = 0,
) -> TraceSet:
    """Flat traces at ``base_level`` with i.i.d. spikes to ``spike_level``.

    Levels are quantized to whole percent so the set survives a round trip
    through the PlanetLab file format unchanged.
    """
    for name, v in (("base_level", base_level), ("spike_level", spike_level), ("spike_prob", spike_prob)):
        if not 0 <= v <= 1:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    rng = np.random.default_rng(seed)
    spikes = rng.random((n_vms, horizon)) < spike_prob
    base = round(base_level * 100) / 100
    peak = round(spike_level * 100) / 100
    data = np.where(spikes, peak, base)
    width = max(4, len(str(n_vms)))
    names = tuple(f"vm_{i:0{width}d}" for i in range(n_vms))
    return TraceSet(names, tuple(row.copy() for row in data))


def gen_components(params: ComponentGenParams, rng: Optional[np.random.Generator] = None) -> list[ComponentProfile]:
    """One mandatory component plus ``n_optional`` normally distributed optional ones.

    Optional utilizations and discounts are rescaled so that each set sums
    to ``optional_fraction``; only the split between components is random.
    """
    f, n = params.optional_fraction, params.n_optional
    mean = f / n
    if mean <= 0:
        raise ValueError("optional_fraction / n_optional must be positive")
    if rng is None:
        rng = np.random.default_rng(params.seed)
    u = _normalized_draw(rng, mean, params.sigma_u, n, f)
    d = _normalized_draw(rng, mean, params.sigma_d, n, f)
    comps = [ComponentProfile(0, True, max(0.0, 1.0 - f), 0.0)]
    comps += [ComponentProfile(i + 1, False, u[i], d[i]) for i in range(n)]
    return comps


def _normalized_draw(rng: np.random.Generator, mean: float, sigma: float, n: int, total: float) -> list[float]:
    x = np.clip(rng.normal(mean, sigma, n), 0.001, 1.0)
    vals = [float(v) for v in x]
    s = math.fsum(vals)
    if s != total:
        vals = [v * total / s for v in vals]
        vals[-1] = total - math.fsum(vals[:-1])
        # the subtraction can round; step the last value until the sum is exact
        for _ in range(64):
            s = math.fsum(vals)
            if s == total:
                break
            vals[-1] = math.nextafter(vals[-1], math.inf if s < total else -math.inf)
    return vals


def partition_trace(vm: VmState, traced_u: float) -> list[float]:
    """Per-component utilization for one interval (0 for deactivated components)."""
    if not 0 <= traced_u <= 1:
        raise ValueError(f"traced utilization must be in [0, 1], got {traced_u}")
    total = sum(c.utilization for c in vm.components)
    if total <= 0:
        return [0.0 for _ in vm.components]
    return [traced_u * c.utilization / total if c.active else 0.0 for c in vm.components]


def component_sets(params: ComponentGenParams, n_vms: int) -> list[list[ComponentProfile]]:
    """Independent component lists for ``n_vms`` applications from one seed."""
    rng = np.random.default_rng(params.seed)
    return [gen_components(params, rng) for _ in range(n_vms)]

