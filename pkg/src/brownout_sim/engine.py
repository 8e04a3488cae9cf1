"""Discrete-time simulation loop: traces -> brownout -> consolidation -> accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .brownout import OverloadWindow, apply_plan, bmdp_select, huprfcs_select, reset_components
from .domain import (
    HOST_TYPES,
    VM_TYPES,
    ComponentProfile,
    DatacenterState,
    HostSpec,
    HostState,
    Lifecycle,
    Policy,
    SimConfig,
    VmSpec,
    VmState,
)
from .placement import consolidate, detect_overloaded, initial_placement, select_vms_pco, select_vms_ubp
from .power import (
    JOULES_PER_KWH,
    host_power,
    instant_cost,
    interval_discount,
    max_discount,
    resolve_discount_scale,
    vm_utilization,
    vm_weight,
)
from .workload import TraceError, TraceSet

CSV_FIELDS = ("t", "energy_kwh", "discount", "g", "overloaded", "migrations", "hosts_on")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntervalRecord:
    t: int
    energy_kwh: float
    discount: float
    g: float
    overloaded: int
    migrations: int
    hosts_on: int
    discount_fraction: float = 0.0  # unscaled sum of deactivated component discounts
    deactivated: int = 0


@dataclass(frozen=True)
class HostLifecycleEvent:
    host_id: int
    transition: str  # "TurnOn" or "TurnOff"
    issued_at: int
    completes_at: float  # simulated seconds


@dataclass
class MetricsLedger:
    records: list[IntervalRecord] = field(default_factory=list)
    events: list[HostLifecycleEvent] = field(default_factory=list)
    max_discount_fraction: float = 0.0  # accruable per interval with every optional component off

    @property
    def energy_kwh(self) -> float:
        return math.fsum(r.energy_kwh for r in self.records)

    @property
    def discount(self) -> float:
        return math.fsum(r.discount for r in self.records)

    @property
    def discount_fraction(self) -> float:
        return math.fsum(r.discount_fraction for r in self.records)

    @property
    def discount_pct(self) -> float:
        """Accrued discount as a percentage of the maximum accruable."""
        cap = self.max_discount_fraction * len(self.records)
        return 100.0 * self.discount_fraction / cap if cap > 0 else 0.0

    @property
    def g(self) -> float:
        return math.fsum(r.g for r in self.records)

    @property
    def migrations(self) -> int:
        return sum(r.migrations for r in self.records)

    @property
    def shutdowns(self) -> int:
        return sum(1 for e in self.events if e.transition == "TurnOff")

    def totals(self) -> dict[str, float]:
        return {
            "energy_kwh": self.energy_kwh,
            "discount": self.discount,
            "discount_fraction": self.discount_fraction,
            "discount_pct": self.discount_pct,
            "g": self.g,
            "migrations": self.migrations,
            "shutdowns": self.shutdowns,
            "intervals": len(self.records),
        }


def build_datacenter(
    n_hosts: int,
    components: Sequence[Sequence[ComponentProfile]],
    host_types: Sequence[HostSpec] = HOST_TYPES,
    vm_types: Sequence[VmSpec] = VM_TYPES,
) -> DatacenterState:
    """Hosts and VMs cycle through the given types; VM ``i`` replays trace ``i``."""
    hosts = [HostState(i, host_types[i % len(host_types)]) for i in range(n_hosts)]
    vms = [
        VmState(i, vm_types[i % len(vm_types)], None, [ComponentProfile(**vars(c)) for c in comps], trace_id=i)
        for i, comps in enumerate(components)
    ]
    return DatacenterState(hosts, vms)


def load_demands(state: DatacenterState, traces: TraceSet, t: int) -> None:
    for vm in state.vms:
        try:
            vm.demand = traces.sample(vm.trace_id, t)
        except TraceError as e:
            raise SimulationError(f"interval {t}: {e}") from e


def place(state: DatacenterState, cfg: SimConfig) -> None:
    """Initial power-aware placement; chosen hosts start powered on."""
    assignment = initial_placement(state.vms, state.hosts, cfg.overload_threshold)
    for vm_id, host_id in sorted(assignment.items()):
        host = state.host(host_id)
        host.lifecycle = Lifecycle.ON
        host.vm_ids.append(vm_id)
        state.vm(vm_id).host_id = host_id


def _host_watt_seconds(host: HostState, state: DatacenterState, cfg: SimConfig) -> float:
    p = host.spec.power
    pairs = [(vm_utilization(vm, vm.demand), vm_weight(vm, host, cfg.weighted_utilization)) for vm in state.host_vms(host)]
    if host.lifecycle is Lifecycle.ON:
        return host_power(host, pairs) * cfg.interval_s
    if host.lifecycle is Lifecycle.TURNING_OFF:
        return p.idle_watts * host.remaining_s
    if host.lifecycle is Lifecycle.TURNING_ON:
        on = HostState(host.id, host.spec, Lifecycle.ON, 0.0, host.vm_ids)
        return p.idle_watts * host.remaining_s + host_power(on, pairs) * (cfg.interval_s - host.remaining_s)
    return 0.0


def step(
    state: DatacenterState,
    cfg: SimConfig,
    traces: TraceSet,
    window: OverloadWindow,
    rng: Optional[np.random.Generator] = None,
    events: Optional[list[HostLifecycleEvent]] = None,
) -> IntervalRecord:
    """Advance ``state`` by one interval and return that interval's record."""
    t = state.clock
    if t >= cfg.horizon_intervals:
        raise SimulationError(f"interval {t} is beyond the horizon {cfg.horizon_intervals}")
    tp = cfg.overload_threshold

    load_demands(state, traces, t)
    reset_components(state)

    # capacity checks always weight by VM size; the switch only touches the power model
    n_overloaded = len(detect_overloaded(state, tp))
    window.push(n_overloaded)

    if cfg.policy is Policy.BMDP:
        apply_plan(state, bmdp_select(state, cfg, window))
    elif cfg.policy is Policy.HUPRFCS:
        apply_plan(state, huprfcs_select(state, cfg, window))

    if cfg.policy is Policy.UBP:
        if rng is None:
            rng = np.random.default_rng(cfg.seed)
        selector = lambda pairs: select_vms_ubp(pairs, tp, cfg.ubp_alpha, rng, cfg.ubp_corrected)  # noqa: E731
    else:
        selector = lambda pairs: select_vms_pco(pairs, tp)  # noqa: E731
    result = consolidate(state, tp, selector, transition_s=cfg.host_transition_s)

    energy = math.fsum(_host_watt_seconds(h, state, cfg) for h in state.hosts) / JOULES_PER_KWH
    raw_discount = interval_discount(state.vms)
    discount = resolve_discount_scale(cfg, len(state.vms)) * raw_discount
    cost = instant_cost(energy, discount, cfg.lam)

    for host in state.hosts:
        if host.lifecycle is Lifecycle.TURNING_ON:
            kind, host.lifecycle = "TurnOn", Lifecycle.ON
        elif host.lifecycle is Lifecycle.TURNING_OFF:
            kind, host.lifecycle = "TurnOff", Lifecycle.OFF
        else:
            continue
        if events is not None:
            events.append(HostLifecycleEvent(host.id, kind, t, t * cfg.interval_s + host.remaining_s))
        host.remaining_s = 0.0

    state.clock = t + 1
    return IntervalRecord(
        t=t,
        energy_kwh=energy,
        discount=discount,
        g=cost.g,
        overloaded=n_overloaded,
        migrations=len(result.migrations),
        hosts_on=sum(1 for h in state.hosts if h.lifecycle is Lifecycle.ON),
        discount_fraction=raw_discount,
        deactivated=sum(1 for vm in state.vms for c in vm.components if not c.active),
    )


def run(
    cfg: SimConfig,
    traces: TraceSet,
    state: DatacenterState,
    on_step: Optional[Callable[[DatacenterState, IntervalRecord], None]] = None,
) -> MetricsLedger:
    """Place VMs, then simulate ``cfg.horizon_intervals`` intervals."""
    ledger = MetricsLedger(max_discount_fraction=max_discount(state.vms))
    if cfg.horizon_intervals == 0:
        return ledger
    load_demands(state, traces, state.clock)
    place(state, cfg)
    window = OverloadWindow(cfg.window_size)
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.horizon_intervals):
        record = step(state, cfg, traces, window, rng, ledger.events)
        ledger.records.append(record)
        if on_step is not None:
            on_step(state, record)
    return ledger
