"""Power, energy, discount and cost accounting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .domain import DatacenterState, HostState, Lifecycle, VmState

JOULES_PER_KWH = 3.6e6


@dataclass(frozen=True)
class IntervalCost:
    energy_kwh: float
    discount: float
    g: float


def vm_utilization(vm: VmState, traced_u: Optional[float] = None) -> float:
    """Effective CPU utilization of ``vm`` as a fraction of its capacity.

    With ``traced_u`` the traced VM level is split across components in
    proportion to their shares and only active shares are kept. Without it
    the raw active component utilizations are summed.
    """
    if not vm.components:
        return 0.0
    if traced_u is None:
        return math.fsum(c.utilization for c in vm.components if c.active)
    if not 0 <= traced_u <= 1:
        raise ValueError(f"traced utilization must be in [0, 1], got {traced_u}")
    total = 0.0
    active = 0.0
    for c in vm.components:
        total += c.utilization
        if c.active:
            active += c.utilization
    if total <= 0:
        return traced_u
    # identical summation order keeps the all-active ratio at exactly 1.0
    return traced_u * (active / total)


def vm_weight(vm: VmState, host: HostState, weighted: bool = True) -> float:
    return vm.spec.cpu_mhz / host.spec.cpu_mhz if weighted else 1.0


def host_utilization(host: HostState, vms: Iterable[VmState], weighted: bool = True) -> float:
    """Unclamped CPU demand of ``host`` as a fraction of its capacity."""
    return sum(vm_utilization(vm, vm.demand) * vm_weight(vm, host, weighted) for vm in vms)


def host_power(host: HostState, vm_utils: Sequence[tuple[float, float]]) -> float:
    """Instantaneous power draw in watts.

    ``vm_utils`` holds one ``(utilization, weight)`` pair per hosted VM.
    Transitioning hosts draw idle power; powered-off or empty hosts draw none.
    """
    for u, w in vm_utils:
        if u < 0 or w < 0:
            raise ValueError(f"negative utilization or weight: {(u, w)}")
    profile = host.spec.power
    if host.lifecycle is Lifecycle.OFF:
        return 0.0
    if host.lifecycle in (Lifecycle.TURNING_ON, Lifecycle.TURNING_OFF):
        return profile.idle_watts
    if not vm_utils:
        return 0.0
    load = min(sum(u * w for u, w in vm_utils), 1.0)
    return profile.idle_watts + load * profile.dynamic_watts


def interval_energy(powers: Iterable[float], interval_s: float) -> float:
    """Energy in kWh of constant ``powers`` held for ``interval_s`` seconds."""
    if interval_s <= 0:
        raise ValueError(f"interval_s must be > 0, got {interval_s}")
    return math.fsum(p * interval_s for p in powers) / JOULES_PER_KWH


def interval_discount(vms: Iterable[VmState]) -> float:
    """Summed discount fractions of all deactivated components."""
    return math.fsum(c.discount for vm in vms for c in vm.components if not c.active)


def max_discount(vms: Iterable[VmState]) -> float:
    return math.fsum(c.discount for vm in vms for c in vm.components if not c.mandatory)


def instant_cost(energy_kwh: float, discount: float, lam: float) -> IntervalCost:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return IntervalCost(energy_kwh, discount, energy_kwh + lam * discount)


def cumulative_objective(ledger, lam: float) -> float:
    """Sum of E(t) + lam * D(t) over every record of ``ledger``."""
    return math.fsum(r.energy_kwh + lam * r.discount for r in ledger.records)


def datacenter_power(state: DatacenterState, weighted: bool = True) -> list[float]:
    """Per-host power at the current activation and demand levels."""
    out = []
    for host in state.hosts:
        vms = state.host_vms(host)
        pairs = [(vm_utilization(vm, vm.demand), vm_weight(vm, host, weighted)) for vm in vms]
        out.append(host_power(host, pairs))
    return out


def resolve_discount_scale(cfg, n_vms: int) -> float:
    """Multiplier from summed component discounts to the discount amount D(t)."""
    if cfg.discount_scale is not None:
        return cfg.discount_scale
    return 1.0 / (cfg.intervals_per_day * max(n_vms, 1))
